use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` builds a scalar from the parameter leaves it is handed. Returns the
/// largest `|analytic − numeric| / max(1, |analytic|)` over every coordinate.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Contract(format!("eps {eps} not in (0, 1e-2]")));
    }

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let root = f(&mut g, &vars)?;
        let v = g.value(root).data()[0];
        if !v.is_finite() {
            return Err(Error::Numeric(format!("objective evaluated to {v}")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = f(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.len()])
        })
        .collect();

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for pi in 0..work.len() {
        for j in 0..work[pi].len() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][j];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let c = Tensor::vector(vec![0.5, -2.0, 3.0]).unwrap();
        let w = Tensor::vector(vec![1.0, 2.0, -1.0]).unwrap();
        let err = grad_check(
            |g, v| {
                let c = g.constant(c.clone());
                let p = g.mul(v[0], c)?;
                g.sum(p)
            },
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn quadratic() {
        let w = Tensor::vector(vec![1.3, -0.7, 0.2, 1.9]).unwrap();
        let err = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                g.sum(sq)
            },
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn eps_out_of_range() {
        let w = Tensor::vector(vec![1.0]).unwrap();
        assert!(grad_check(|g, v| g.sum(v[0]), std::slice::from_ref(&w), 0.1).is_err());
        assert!(grad_check(|g, v| g.sum(v[0]), &[w], 0.0).is_err());
    }
}
