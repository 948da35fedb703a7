use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates for every parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update over `params`, in place.
pub fn adam_step(
    params: &mut [(String, &mut Tensor)],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Dimension(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(Error::Dimension(format!(
                "{name}: {} values but {} gradient entries",
                p.len(),
                g.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient for {name}")));
        }
    }
    if state.first.is_empty() {
        state.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.second = grads.iter().map(|g| vec![0.0; g.len()]).collect();
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// `base_lr · gamma^floor(epoch / step_size)`.
pub fn step_lr(base_lr: f64, epoch: usize, step_size: usize, gamma: f64) -> f64 {
    base_lr * gamma.powi((epoch / step_size.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut w = Tensor::vector(vec![0.5, -1.0]).unwrap();
        let orig = w.clone();
        let mut st = AdamState::new();
        adam_step(&mut [("w".into(), &mut w)], &[vec![0.0, 0.0]], &mut st, 1e-3).unwrap();
        assert_eq!(w, orig);
        assert_eq!(st.first, vec![vec![0.0, 0.0]]);
        assert_eq!(st.second, vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = Tensor::vector(vec![0.0, 0.0, 0.0]).unwrap();
        let mut st = AdamState::new();
        let g = vec![0.3, -2.0, 50.0];
        adam_step(&mut [("w".into(), &mut w)], std::slice::from_ref(&g), &mut st, 1e-3).unwrap();
        for (wi, gi) in w.data().iter().zip(&g) {
            // closed form: -lr · g / (|g| + eps)
            let expected = -1e-3 * gi / (gi.abs() + ADAM_EPS);
            assert!((wi - expected).abs() < 1e-15);
            assert!((wi.abs() - 1e-3).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut w = Tensor::vector(vec![1.0, 2.0]).unwrap();
            let mut st = AdamState::new();
            for k in 0..20 {
                let g: Vec<f64> = w.data().iter().map(|v| v * (k as f64 + 1.0).sin()).collect();
                adam_step(&mut [("w".into(), &mut w)], &[g], &mut st, 0.01).unwrap();
            }
            w
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut w = Tensor::vector(vec![1.0]).unwrap();
        let err = adam_step(
            &mut [("layer0.weight".into(), &mut w)],
            &[vec![f64::NAN]],
            &mut AdamState::new(),
            1e-3,
        )
        .unwrap_err();
        assert!(err.to_string().contains("layer0.weight"));
    }

    #[test]
    fn schedule_values() {
        assert_eq!(step_lr(1e-3, 0, 10, 0.5), 1e-3);
        assert_eq!(step_lr(1e-3, 9, 10, 0.5), 1e-3);
        assert_eq!(step_lr(1e-3, 10, 10, 0.5), 5e-4);
        assert_eq!(step_lr(1e-3, 25, 10, 0.5), 2.5e-4);
        assert_eq!(step_lr(1e-3, 5, 5, 0.25), 2.5e-4);
        assert_eq!(step_lr(1e-3, 77, 10, 1.0), 1e-3);
    }
}
