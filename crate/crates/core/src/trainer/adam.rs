//! Adam with bias correction.

use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub params: AdamParams,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new<'a>(params: AdamParams, shapes: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let m: Vec<Vec<f64>> = shapes.into_iter().map(|p| vec![0.0; p.len()]).collect();
        let v = m.clone();
        Self { params, m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update. `targets` and `grads` must follow the order the
    /// state was created with.
    pub fn step<'a>(
        &mut self,
        targets: impl IntoIterator<Item = &'a mut Matrix>,
        grads: &[Matrix],
    ) {
        self.t += 1;
        let AdamParams {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.params;
        let t = self.t as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let mut n = 0;
        for (((param, grad), m), v) in targets
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            debug_assert_eq!(param.len(), grad.len());
            for (((p, &g), m), v) in param
                .as_mut_slice()
                .iter_mut()
                .zip(grad.as_slice())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
            n += 1;
        }
        debug_assert_eq!(n, self.m.len(), "parameter list changed length");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_first_step() {
        let mut p = vec![Matrix::scalar(0.0)];
        let mut adam = AdamState::new(AdamParams::default(), &p);
        adam.step(p.iter_mut(), &[Matrix::scalar(1.0)]);
        // m̂ = 1, v̂ = 1  =>  Δθ = -lr / (1 + eps)
        let expect = -1e-4 / (1.0 + 1e-8);
        assert!((p[0].item() - expect).abs() < 1e-18);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut p = vec![Matrix::from_rows(&[[0.5, -0.25]])];
        let before = p.clone();
        let mut adam = AdamState::new(
            AdamParams {
                learning_rate: 0.0,
                ..AdamParams::default()
            },
            &p,
        );
        adam.step(p.iter_mut(), &[Matrix::from_rows(&[[3.0, -7.0]])]);
        assert_eq!(p, before);
    }

    #[test]
    fn step_size_is_scale_invariant() {
        let mut a = vec![Matrix::scalar(0.0)];
        let mut b = vec![Matrix::scalar(0.0)];
        let mut sa = AdamState::new(AdamParams::default(), &a);
        let mut sb = AdamState::new(AdamParams::default(), &b);
        for _ in 0..5 {
            sa.step(a.iter_mut(), &[Matrix::scalar(2.0)]);
            sb.step(b.iter_mut(), &[Matrix::scalar(200.0)]);
        }
        assert!((a[0].item() - b[0].item()).abs() < 1e-10);
    }
}
