//! Bias-corrected Adam optimiser.

use super::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments for every parameter buffer, in the order the
/// network reports its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(cfg: AdamConfig, shapes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = shapes.into_iter().map(|n| (vec![F::zero(); n], vec![F::zero(); n])).unzip();
        Self { cfg, step: 0, m, v }
    }

    pub fn step(&mut self, params: &mut [&mut Vec<F>], grads: &[Vec<F>]) {
        assert_eq!(params.len(), self.m.len(), "adam: parameter buffer count");
        assert_eq!(grads.len(), self.m.len(), "adam: gradient buffer count");
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let (b1, b2) = (F::from_f64(c.beta1), F::from_f64(c.beta2));
        let (nb1, nb2) = (F::from_f64(1.0 - c.beta1), F::from_f64(1.0 - c.beta2));
        let corr1 = F::from_f64(1.0 - c.beta1.powi(t));
        let corr2 = F::from_f64(1.0 - c.beta2.powi(t));
        let (lr, eps) = (F::from_f64(c.lr), F::from_f64(c.eps));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.len(), g.len(), "adam: gradient shape");
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + nb1 * g;
                *v = b2 * *v + nb2 * g * g;
                let mh = *m / corr1;
                let vh = *v / corr2;
                *p = *p - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(g: f64) -> f64 {
        let mut st = AdamState::<f64>::new(AdamConfig::default(), [1]);
        let mut p = vec![0.0];
        st.step(&mut [&mut p], &[vec![g]]);
        p[0]
    }

    #[test]
    fn first_step_closed_form() {
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((one_step(1.0) - expected).abs() < 1e-15);
        assert!((one_step(1.0) + 9.99999990e-4).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_keeps_parameter() {
        assert_eq!(one_step(0.0), 0.0);
    }

    #[test]
    fn first_step_opposes_gradient() {
        for g in [-3.0, -1e-6, 2e-4, 7.5] {
            assert_eq!(one_step(g).signum(), -g.signum());
        }
    }
}
