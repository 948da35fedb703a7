//! Classification losses over logit rows.
//!
//! Every loss takes a `[B×K]` (or `[K]`) logit node plus one target per row
//! and reduces with the arithmetic mean over rows. All softmax paths go
//! through log-sum-exp, so margins far above the `exp` overflow point stay
//! finite.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Saturation bound used unless configured otherwise.
pub const DEFAULT_BOUND: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Plain softmax cross-entropy.
    Cel,
    /// Cross-entropy with the margin subtracted from raw target logits.
    /// Shift invariant, so a network can satisfy it by moving all logits.
    Celm,
    /// Cross-entropy on tanh-clamped logits with the target margin applied.
    Mcel,
    /// Multiclass hinge, summed over competitors. Baseline only.
    Hinge,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Cel => "cel",
            LossKind::Celm => "celm",
            LossKind::Mcel => "mcel",
            LossKind::Hinge => "hinge",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cel" => Ok(LossKind::Cel),
            "celm" => Ok(LossKind::Celm),
            "mcel" => Ok(LossKind::Mcel),
            "hinge" => Ok(LossKind::Hinge),
            other => Err(Error::Config(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Target-logit margin `m` (celm, mcel) or hinge margin.
    pub margin: f64,
    /// Saturation bound `L` of the tanh clamp.
    pub bound: f64,
}

impl LossSpec {
    pub fn cel() -> Self {
        Self {
            kind: LossKind::Cel,
            margin: 0.0,
            bound: DEFAULT_BOUND,
        }
    }

    pub fn mcel(margin: f64, bound: f64) -> Self {
        Self {
            kind: LossKind::Mcel,
            margin,
            bound,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin {} must be >= 0", self.margin)));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(Error::Config(format!("bound L {} must be > 0", self.bound)));
        }
        if self.kind == LossKind::Mcel && rls(self.margin, self.bound) > 1.0 {
            log::warn!(
                "margin {} exceeds the clamped logit range 2L = {} (RLS {:.3})",
                self.margin,
                2.0 * self.bound,
                rls(self.margin, self.bound)
            );
        }
        Ok(())
    }

    /// Builds the batch-mean loss node for `logits`.
    pub fn apply(&self, g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
        match self.kind {
            LossKind::Cel => cel(g, logits, targets),
            LossKind::Celm => celm(g, logits, targets, self.margin),
            LossKind::Mcel => mcel(g, logits, targets, self.margin, self.bound),
            LossKind::Hinge => hinge_multiclass(g, logits, targets, self.margin),
        }
    }

    /// Loss value for a single logit vector.
    pub fn value(&self, logits: &[f64], target: usize) -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(logits.to_vec())?);
        let l = self.apply(&mut g, x, &[target])?;
        Ok(g.value(l).data()[0])
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LossKind::Cel => write!(f, "cel"),
            LossKind::Celm => write!(f, "celm(m={})", self.margin),
            LossKind::Mcel => write!(f, "mcel(m={}, L={})", self.margin, self.bound),
            LossKind::Hinge => write!(f, "hinge (artifact variant, margin={})", self.margin),
        }
    }
}

pub fn cel(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
    g.cross_entropy(logits, targets)
}

pub fn celm(g: &mut Graph, logits: Var, targets: &[usize], m: f64) -> Result<Var> {
    if m.is_nan() || m < 0.0 {
        return Err(Error::Contract(format!("margin {m} must be >= 0")));
    }
    let shifted = g.shift_target(logits, targets, m)?;
    g.cross_entropy(shifted, targets)
}

/// `L · tanh(z / L)` elementwise.
pub fn tanh_clamp(g: &mut Graph, logits: Var, bound: f64) -> Result<Var> {
    g.tanh_clamp(logits, bound)
}

pub fn apply_margin(g: &mut Graph, clamped: Var, targets: &[usize], m: f64) -> Result<Var> {
    g.shift_target(clamped, targets, m)
}

pub fn mcel(g: &mut Graph, logits: Var, targets: &[usize], m: f64, bound: f64) -> Result<Var> {
    if m.is_nan() || m < 0.0 {
        return Err(Error::Contract(format!("margin {m} must be >= 0")));
    }
    let clamped = g.tanh_clamp(logits, bound)?;
    let shifted = g.shift_target(clamped, targets, m)?;
    g.cross_entropy(shifted, targets)
}

pub fn hinge_multiclass(g: &mut Graph, logits: Var, targets: &[usize], margin: f64) -> Result<Var> {
    g.hinge(logits, targets, margin)
}

/// Relative logit separation `m / 2L`.
pub fn rls(m: f64, bound: f64) -> f64 {
    m / (2.0 * bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};

    fn spec(kind: LossKind, margin: f64) -> LossSpec {
        LossSpec {
            kind,
            margin,
            bound: DEFAULT_BOUND,
        }
    }

    fn clamp_value(z: &[f64], bound: f64) -> Vec<f64> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(z.to_vec()).unwrap());
        let y = tanh_clamp(&mut g, x, bound).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn cel_closed_forms() {
        let c = LossSpec::cel();
        assert!((c.value(&[0.0, 0.0], 0).unwrap() - 2f64.ln()).abs() < 1e-12);
        let expected = (1.0 + 2.0 * (-1f64).exp()).ln();
        assert!((c.value(&[1.0, 0.0, 0.0], 0).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.551445).abs() < 1e-6);
    }

    #[test]
    fn invalid_targets() {
        for kind in [LossKind::Cel, LossKind::Celm, LossKind::Mcel, LossKind::Hinge] {
            assert!(matches!(
                spec(kind, 1.0).value(&[0.0, 1.0], 2),
                Err(Error::InvalidTarget { .. })
            ));
        }
    }

    #[test]
    fn celm_reductions_and_closed_form() {
        let logits = [0.3, -1.2, 2.2, 0.0];
        for t in 0..4 {
            assert_eq!(
                spec(LossKind::Celm, 0.0).value(&logits, t).unwrap(),
                LossSpec::cel().value(&logits, t).unwrap()
            );
        }
        let v = spec(LossKind::Celm, 1.0).value(&[0.0, 0.0], 0).unwrap();
        assert!((v - (1.0 + 1f64.exp()).ln()).abs() < 1e-12);
        assert!((v - 1.313262).abs() < 1e-6);
    }

    #[test]
    fn celm_shift_invariant() {
        let logits = [0.3, -1.2, 2.2, 0.0];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 37.5).collect();
        let s = spec(LossKind::Celm, 4.0);
        let a = s.value(&logits, 1).unwrap();
        let b = s.value(&shifted, 1).unwrap();
        assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn tanh_clamp_values() {
        assert_eq!(clamp_value(&[0.0], 100.0), vec![0.0]);
        let v = clamp_value(&[50.0], 100.0)[0];
        assert!((v - 46.211716).abs() < 1e-6);
        // |z| <= 0.01 L stays within 1e-4 L of identity
        let zs: Vec<f64> = (-100..=100).map(|i| i as f64 * 0.01).collect();
        for (z, c) in zs.iter().zip(clamp_value(&zs, 100.0)) {
            assert!((c - z).abs() <= 1e-4 * 100.0);
        }
        for c in clamp_value(&[1e6, -1e6, 250.0], 100.0) {
            assert!(c.abs() <= 100.0);
        }
    }

    #[test]
    fn rls_values() {
        assert!((rls(32.0, 100.0) - 0.16).abs() < 1e-15);
        assert_eq!(rls(0.0, 100.0), 0.0);
        assert!((rls(192.0, 100.0) - 0.96).abs() < 1e-15);
    }

    #[test]
    fn apply_margin_is_local() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![5.0, 3.0, 1.0]).unwrap());
        let y = apply_margin(&mut g, x, &[0], 2.0).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 3.0, 1.0]);
        let z = apply_margin(&mut g, x, &[1], 0.0).unwrap();
        assert_eq!(g.value(z).data(), g.value(x).data());
    }

    #[test]
    fn mcel_reductions() {
        let logits = [0.4, -0.9, 0.2];
        let m0 = spec(LossKind::Mcel, 0.0);
        // L·tanh(z/L) departs from z by at most |z|³/(3L²), and cross-entropy
        // moves by at most twice the largest logit change.
        let bound = 2.0 * 0.9f64.powi(3) / (3.0 * 100.0f64.powi(2));
        for t in 0..3 {
            let a = m0.value(&logits, t).unwrap();
            let b = LossSpec::cel().value(&logits, t).unwrap();
            assert!((a - b).abs() <= bound);
            let clamped = clamp_value(&logits, 100.0);
            assert_eq!(a, LossSpec::cel().value(&clamped, t).unwrap());
        }
    }

    #[test]
    fn mcel_large_margin_stays_finite() {
        let v = LossSpec::mcel(192.0, 100.0).value(&[0.0, 0.0], 0).unwrap();
        assert!((v - (192.0 + (-192f64).exp().ln_1p())).abs() < 1e-9);
        assert!((v - 192.0).abs() < 1e-9);
        let v = LossSpec::mcel(1000.0, 100.0).value(&[0.0, 0.0], 0).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn mcel_breaks_shift_invariance() {
        let logits = [0.4, -0.9, 0.2];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 1000.0).collect();
        let s = LossSpec::mcel(32.0, 100.0);
        let a = s.value(&logits, 0).unwrap();
        let b = s.value(&shifted, 0).unwrap();
        assert!((a - b).abs() > 0.1);
    }

    #[test]
    fn mcel_decreases_in_target_logit() {
        let s = LossSpec::mcel(32.0, 100.0);
        let mut prev = f64::INFINITY;
        for i in -250..250 {
            let v = s.value(&[i as f64, 10.0, -20.0], 0).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn hinge_cases() {
        let h = spec(LossKind::Hinge, 1.0);
        assert_eq!(h.value(&[3.0, 1.0, 2.0], 0).unwrap(), 0.0);
        assert_eq!(h.value(&[0.0, 0.0], 0).unwrap(), 1.0);
        assert_eq!(h.value(&[0.0, 0.5, -2.0], 0).unwrap(), 1.5);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for kind in [LossKind::Cel, LossKind::Celm, LossKind::Mcel, LossKind::Hinge] {
            for _ in 0..10 {
                let k = rng.gen_range(2..7);
                let b = rng.gen_range(1..4);
                let data: Vec<f64> = (0..b * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let targets: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
                let s = LossSpec {
                    kind,
                    margin: rng.gen_range(0.0..3.0),
                    bound: rng.gen_range(1.0..10.0),
                };
                if kind == LossKind::Hinge {
                    // stay away from kinks
                    let near_kink = targets.iter().enumerate().any(|(r, &t)| {
                        (0..k).any(|j| {
                            j != t && (s.margin - (data[r * k + t] - data[r * k + j])).abs() < 1e-3
                        })
                    });
                    if near_kink {
                        continue;
                    }
                }
                let t = Tensor::matrix(b, k, data).unwrap();
                let err = grad_check(|g, v| s.apply(g, v[0], &targets), &[t], 1e-5).unwrap();
                assert!(err <= 1e-4, "{kind}: {err}");
            }
        }
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("MCEL".parse::<LossKind>().unwrap(), LossKind::Mcel);
        assert!("arcface".parse::<LossKind>().is_err());
    }
}
