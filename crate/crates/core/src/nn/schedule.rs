use serde::{Deserialize, Serialize};

pub trait LrSchedule {
    fn lr(&self, step: u64) -> f64;
}

/// Linear warmup followed by cosine decay to `min_ratio * peak`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupCosine {
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub min_ratio: f64,
}

impl LrSchedule for WarmupCosine {
    fn lr(&self, step: u64) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps.min(step)) as f64 / span as f64).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.peak * (self.min_ratio + (1.0 - self.min_ratio) * cos)
    }
}

/// Multiplies the rate by `factor` every `every` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub initial: f64,
    pub every: u64,
    pub factor: f64,
}

impl LrSchedule for StepDecay {
    fn lr(&self, step: u64) -> f64 {
        let k = if self.every == 0 { 0 } else { step / self.every };
        self.initial * self.factor.powi(k as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_then_cosine() {
        let s = WarmupCosine { peak: 1.0, warmup_steps: 10, total_steps: 110, min_ratio: 0.0 };
        assert!((s.lr(0) - 0.1).abs() < 1e-12);
        assert!((s.lr(9) - 1.0).abs() < 1e-12);
        assert!((s.lr(10) - 1.0).abs() < 1e-12);
        assert!((s.lr(60) - 0.5).abs() < 1e-12);
        assert!(s.lr(110).abs() < 1e-12);
    }

    #[test]
    fn step_decay_halves() {
        let s = StepDecay { initial: 4e-4, every: 100, factor: 0.5 };
        assert_eq!(s.lr(99), 4e-4);
        assert_eq!(s.lr(100), 2e-4);
    }
}
