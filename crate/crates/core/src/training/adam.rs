use crate::nn::NetworkParams;

/// Adaptive moment estimation over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::TermLibrary;
    use rand::SeedableRng;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let lib = TermLibrary::build(1, 0, 1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut p = NetworkParams::init(&lib, 2, &[], &mut rng);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.iter_mut().for_each(|v| *v = 3.0);
        let mut adam = Adam::new(p.len(), 0.01, 0.9, 0.999, 1e-8);
        adam.step(&mut p, &g);
        for (a, b) in p.iter().zip(before.iter()) {
            assert!((b - a - 0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_rate_is_a_no_op() {
        let lib = TermLibrary::build(1, 0, 1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut p = NetworkParams::init(&lib, 2, &[3], &mut rng);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.iter_mut().for_each(|v| *v = -1.5);
        Adam::new(p.len(), 0.0, 0.9, 0.999, 1e-8).step(&mut p, &g);
        assert_eq!(p, before);
    }
}
