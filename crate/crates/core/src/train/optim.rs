use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// AdamW hyperparameters (learning rate comes from the schedule per step).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

/// First/second moment estimates, one buffer per parameter, plus the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

/// One parameter as seen by the optimizer.
pub struct ParamSlot<'a> {
    pub name: &'a str,
    pub value: &'a mut [f32],
    pub grad: &'a [f32],
    /// Apply decoupled weight decay to this parameter.
    pub decay: bool,
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("eps must be > 0 and weight decay ≥ 0".into()));
        }
        Ok(())
    }

    /// `θ ← θ − lr·m̂/(√v̂ + eps) − lr·wd·θ`, with the decay term using the
    /// pre-step θ and never entering the moment estimates.
    ///
    /// All gradients are checked before anything is modified, so a non-finite
    /// gradient leaves parameters and state untouched.
    pub fn step(&self, params: &mut [ParamSlot<'_>], state: &mut OptimizerState, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        for p in params.iter() {
            if p.value.len() != p.grad.len() {
                return Err(Error::dims("adamw", &[p.value.len()], &[p.grad.len()]));
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(p.name.to_string()));
            }
        }
        if state.m.is_empty() {
            state.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            state.v = state.m.clone();
        }
        if state.m.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer state tracks {} parameters, got {}",
                state.m.len(),
                params.len()
            )));
        }

        state.t += 1;
        let t = state.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut state.m[i], &mut state.v[i]);
            let decay = if p.decay { lr * self.weight_decay } else { 0.0 };
            for j in 0..p.value.len() {
                let g = p.grad[j] as f64;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let theta = p.value[j] as f64;
                p.value[j] = (theta - lr * m_hat / (v_hat.sqrt() + self.eps) - decay * theta) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one(opt: &AdamW, theta: &mut f32, g: f32, st: &mut OptimizerState, lr: f64) -> Result<()> {
        let mut v = [*theta];
        let grads = [g];
        let mut slots = [ParamSlot {
            name: "x",
            value: &mut v,
            grad: &grads,
            decay: true,
        }];
        opt.step(&mut slots, st, lr)?;
        *theta = v[0];
        Ok(())
    }

    #[test]
    fn first_step_example() {
        let opt = AdamW::default();
        let mut st = OptimizerState::default();
        let mut theta = 1.0f32;
        one(&opt, &mut theta, 0.1, &mut st, 1e-3).unwrap();
        assert!((theta - 0.9989).abs() < 1e-7, "{theta}");
    }

    #[test]
    fn zero_gradient_no_decay_is_fixed_point() {
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        let mut st = OptimizerState::default();
        let mut theta = 0.37f32;
        for _ in 0..50 {
            one(&opt, &mut theta, 0.0, &mut st, 1e-2).unwrap();
        }
        assert_eq!(theta, 0.37);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks_geometrically() {
        let opt = AdamW::default();
        let mut st = OptimizerState::default();
        let mut theta = 2.0f32;
        let mut want = 2.0f64;
        for _ in 0..20 {
            one(&opt, &mut theta, 0.0, &mut st, 1e-2).unwrap();
            want *= 1.0 - 1e-2 * 0.1;
        }
        assert!((theta as f64 - want).abs() < 1e-6);
    }

    #[test]
    fn nan_gradient_names_parameter_and_leaves_state() {
        let opt = AdamW::default();
        let mut st = OptimizerState::default();
        let mut theta = 1.0f32;
        let err = one(&opt, &mut theta, f32::NAN, &mut st, 1e-3).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "x"));
        assert_eq!(theta, 1.0);
        assert_eq!(st.t, 0);
    }

    /// Scalar transcription of the update equations, θ held at f32 like the model.
    fn reference(theta0: f32, grads: &[f64], lr: f64, wd: f64) -> f32 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, theta0);
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            let th = theta as f64;
            theta = (th - lr * mh / (vh.sqrt() + eps) - lr * wd * th) as f32;
        }
        theta
    }

    #[test]
    fn matches_scalar_reference_over_100_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let theta0: f32 = rng.random_range(-2.0..2.0);
            let grads: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0f32..1.0) as f64).collect();
            let opt = AdamW::default();
            let mut st = OptimizerState::default();
            let mut theta = theta0;
            for &g in &grads {
                one(&opt, &mut theta, g as f32, &mut st, 1e-3).unwrap();
            }
            let want = reference(theta0, &grads, 1e-3, 0.1);
            assert!((theta - want).abs() <= 1e-7, "{theta} vs {want}");
            assert!(st.v.iter().flatten().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn bad_hyperparameters() {
        assert!(AdamW { beta1: 1.0, ..AdamW::default() }.validate().is_err());
        let mut st = OptimizerState::default();
        let mut theta = 1.0;
        assert!(one(&AdamW::default(), &mut theta, 0.1, &mut st, 0.0).is_err());
    }
}
