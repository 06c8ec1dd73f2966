use super::{Element, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of `|analytic − numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
    /// Coordinate where the maximum was attained.
    pub worst_index: usize,
    /// First coordinate where either side was NaN/Inf, if any.
    pub non_finite_at: Option<usize>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.non_finite_at.is_none() && self.max_rel_error <= tol
    }
}

/// Check every coordinate of `point`.
///
/// `f` builds a scalar from the leaf it is handed; it is called once with a
/// differentiable leaf and twice per coordinate with perturbed copies.
pub fn grad_check<T, F>(f: F, point: &Tensor<T>, h: f64) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    grad_check_coords(f, point, h, &coords)
}

/// Like [`grad_check`] but restricted to the listed flat coordinates.
pub fn grad_check_coords<T, F>(f: F, point: &Tensor<T>, h: f64, coords: &[usize]) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    if let Some(&bad) = coords.iter().find(|&&c| c >= point.len()) {
        return Err(Error::Index {
            what: "grad_check coordinate",
            index: bad,
            bound: point.len(),
        });
    }

    let mut g = Graph::new();
    let x = g.param(point);
    let out = f(&mut g, x)?;
    g.backward(out)?;
    let analytic = g
        .grad(x)
        .map(<[T]>::to_vec)
        .unwrap_or_else(|| vec![T::ZERO; point.len()]);

    let eval = |p: &Tensor<T>| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(p.clone());
        let out = f(&mut g, x)?;
        Ok(g.value(out).item()?.to_f64())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: coords.first().copied().unwrap_or(0),
        non_finite_at: None,
        checked: coords.len(),
    };
    let mut probe = point.clone();
    for &i in coords {
        let x0 = point.data()[i];
        probe.data_mut()[i] = T::from_f64(x0.to_f64() + h);
        let up = eval(&probe)?;
        probe.data_mut()[i] = T::from_f64(x0.to_f64() - h);
        let down = eval(&probe)?;
        probe.data_mut()[i] = x0;

        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i].to_f64();
        if !numeric.is_finite() || !a.is_finite() {
            report.non_finite_at.get_or_insert(i);
            continue;
        }
        let rel = (a - numeric).abs() / a.abs().max(1.0);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::{GateKind, GateSpec};

    fn square_sum(g: &mut Graph<f64>, x: Var) -> Result<Var> {
        let y = g.mul(x, x)?;
        Ok(g.sum(y))
    }

    #[test]
    fn quadratic_is_exact() {
        let r = grad_check(square_sum, &Tensor::from_vec(vec![3.0f64]), 1e-3).unwrap();
        assert!(r.max_rel_error <= 1e-5, "{r:?}");
    }

    #[test]
    fn sqs_gate_at_one() {
        let spec = GateSpec::sqs_default();
        let f = |g: &mut Graph<f64>, x: Var| {
            let y = g.gate(x, &spec);
            Ok(g.sum(y))
        };
        let r = grad_check(f, &Tensor::from_vec(vec![1.0f64]), 1e-3).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn gelu_gate_at_half() {
        let spec = GateSpec::of(GateKind::Gelu);
        let f = |g: &mut Graph<f64>, x: Var| {
            let y = g.gate(x, &spec);
            Ok(g.sum(y))
        };
        let r = grad_check(f, &Tensor::from_vec(vec![0.5f64]), 1e-3).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn mul_gradient_matches_differences() {
        let b = Tensor::from_vec(vec![0.3f64, -1.7, 2.2]);
        let f = |g: &mut Graph<f64>, x: Var| {
            let b = g.constant(b.clone());
            let y = g.mul(x, b)?;
            Ok(g.sum(y))
        };
        let r = grad_check(f, &Tensor::from_vec(vec![1.0f64, 2.0, -0.5]), 1e-3).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn non_finite_is_reported_with_index() {
        let f = |g: &mut Graph<f64>, x: Var| {
            let y = g.map_unary(x, |v| (v, if v < 0.0 { f64::NAN } else { 1.0 }));
            Ok(g.sum(y))
        };
        let r = grad_check(f, &Tensor::from_vec(vec![1.0f64, -1.0]), 1e-3).unwrap();
        assert_eq!(r.non_finite_at, Some(1));
        assert!(!r.passed(1.0));
    }
}
