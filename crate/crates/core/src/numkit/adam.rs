use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction. Moments are kept per parameter; the block table
/// only serves error reporting.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    beta1: S,
    beta2: S,
    eps: S,
    m: Vec<S>,
    v: Vec<S>,
    t: u64,
    block_sizes: Vec<usize>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(block_sizes: Vec<usize>) -> Self {
        let n = block_sizes.iter().sum();
        Adam {
            beta1: S::lit(BETA1),
            beta2: S::lit(BETA2),
            eps: S::lit(EPSILON),
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            t: 0,
            block_sizes,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[S] {
        &self.m
    }

    pub fn second_moment(&self) -> &[S] {
        &self.v
    }

    fn check_gradient(&self, grad: &[S]) -> Result<()> {
        let mut offset = 0;
        for (block, &len) in self.block_sizes.iter().enumerate() {
            if grad[offset..offset + len].iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient { block });
            }
            offset += len;
        }
        Ok(())
    }

    /// One update. A non-finite gradient is refused before anything changes.
    pub fn step(&mut self, params: &mut [S], grad: &[S], lr: S) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                self.m.len(),
                format!("{} params / {} grads", params.len(), grad.len()),
            ));
        }
        if lr < S::zero() || !lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {lr}"
            )));
        }
        self.check_gradient(grad)?;

        self.t += 1;
        let t = self.t as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        let one = S::one();
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let delta = lr * m_hat / (v_hat.sqrt() + self.eps);
            if delta != S::zero() {
                params[i] -= delta;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params_but_updates_moments() {
        let mut adam = Adam::<f64>::new(vec![3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        adam.step(&mut p, &[0.1, 0.2, -0.3], 0.0).unwrap();
        assert_eq!(p, before);
        assert!(adam.first_moment().iter().all(|&m| m != 0.0));
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so Δ = -lr·g/(|g|+ε) ≈ -lr for g = 1.
        let lr = 1e-3;
        let mut adam = Adam::<f64>::new(vec![1]);
        let mut p = vec![0.0];
        adam.step(&mut p, &[1.0], lr).unwrap();
        assert!((p[0] + lr).abs() < 1e-6);
        let closed_form = -lr * 1.0 / (1.0 + EPSILON);
        assert!((p[0] - closed_form).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_refused_with_block_index() {
        let mut adam = Adam::<f64>::new(vec![2, 2]);
        let mut p = vec![0.0; 4];
        let err = adam.step(&mut p, &[0.0, 0.0, f64::NAN, 0.0], 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { block: 1 }));
        assert_eq!(adam.steps_taken(), 0);
        assert_eq!(p, vec![0.0; 4]);
    }

    #[test]
    fn zero_gradient_block_stays_bitwise_fixed() {
        let mut adam = Adam::<f64>::new(vec![2, 1]);
        let mut p = vec![0.3, -0.7, 1.0];
        for _ in 0..10 {
            adam.step(&mut p, &[0.0, 0.0, 0.5], 0.01).unwrap();
        }
        assert_eq!(p[0].to_bits(), 0.3f64.to_bits());
        assert_eq!(p[1].to_bits(), (-0.7f64).to_bits());
        assert!(p[2] < 1.0);
    }
}
