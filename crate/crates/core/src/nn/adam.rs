use super::param::ParamList;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, clip_norm: Some(1.0) }
    }
}

/// Adam with decoupled weight decay. Parameters whose `trainable` flag is off
/// are skipped entirely: no moment updates, no decay, bitwise unchanged.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(params: &ParamList, config: AdamConfig) -> Self {
        Adam { config, m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` is already averaged over the batch.
    pub fn update(&mut self, params: &mut ParamList, grads: &[Vec<f64>], trainable: &[bool], lr: f64) {
        self.step += 1;
        let c = self.config;
        let mut scale = 1.0;
        if let Some(max_norm) = c.clip_norm {
            let norm = grads
                .iter()
                .zip(trainable)
                .filter(|(_, t)| **t)
                .map(|(g, _)| g.iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                scale = max_norm / norm;
            }
        }
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, p) in params.params.iter_mut().enumerate() {
            if !trainable[i] {
                continue;
            }
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for j in 0..p.data.len() {
                let gj = g[j] * scale;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p.data[j] -= lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * p.data[j]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;

    #[test]
    fn frozen_parameters_are_bitwise_untouched() {
        let mut params = ParamList::default();
        params.push(Param::filled("a", &[3], 0.5));
        params.push(Param::filled("b", &[2], -1.0));
        let before = params.clone();
        let mut adam = Adam::new(&params, AdamConfig { weight_decay: 0.1, ..Default::default() });
        let grads = vec![vec![1.0; 3], vec![2.0; 2]];
        adam.update(&mut params, &grads, &[false, true], 1e-2);
        assert_eq!(params.params[0], before.params[0]);
        assert_ne!(params.params[1], before.params[1]);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut params = ParamList::default();
        params.push(Param::filled("x", &[1], 3.0));
        let mut adam = Adam::new(&params, AdamConfig { clip_norm: None, ..Default::default() });
        for _ in 0..2000 {
            let g = vec![vec![2.0 * (params.params[0].data[0] - 1.0)]];
            adam.update(&mut params, &g, &[true], 1e-2);
        }
        assert!((params.params[0].data[0] - 1.0).abs() < 1e-3);
    }
}
