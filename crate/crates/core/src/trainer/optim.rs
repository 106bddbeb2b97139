use serde::{Deserialize, Serialize};

/// Decoupled-weight-decay Adam settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW over a fixed list of flat parameter tensors, addressed by slot index.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, slot_sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: slot_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: slot_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Advances the shared step counter; call once before updating the slots.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, slot: usize, lr: f64, values: &mut [f64], grads: &[f64], decay: bool) {
        assert_eq!(values.len(), grads.len(), "parameter/gradient length");
        assert!(self.step > 0, "begin_step must precede update");
        let AdamWConfig { beta1, beta2, epsilon, weight_decay } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let shrink = if decay { 1.0 - lr * weight_decay } else { 1.0 };
        let m = &mut self.first[slot];
        let v = &mut self.second[slot];
        for (((p, &g), m), v) in values.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p = *p * shrink - lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &[3]);
        let mut p = [1.0, -2.0, 0.5];
        opt.begin_step();
        opt.update(0, 0.1, &mut p, &[0.3, -4.0, 0.0], false);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut opt = AdamW::new(AdamWConfig::default(), &[1, 1]);
        let (mut a, mut b) = ([2.0], [2.0]);
        opt.begin_step();
        opt.update(0, 0.5, &mut a, &[0.0], true);
        opt.update(1, 0.5, &mut b, &[0.0], false);
        assert!((a[0] - 2.0 * (1.0 - 0.005)).abs() < 1e-15);
        assert_eq!(b[0], 2.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &[2]);
        let mut p = [3.0, -1.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            opt.begin_step();
            opt.update(0, 0.01, &mut p, &g, false);
        }
        assert!((p[0] - 1.0).abs() < 1e-2 && (p[1] + 0.5).abs() < 1e-2);
    }
}
