use super::{PipelineError, StageConfig};

/// Linear warmup from zero to `peak_lr`, then cosine decay to `min_lr` at
/// `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &StageConfig) -> Result<f64, PipelineError> {
    let warmup = cfg.warmup_steps;
    if warmup >= total_steps {
        return Err(PipelineError::InvalidSchedule(format!("warmup {warmup} must be below total steps {total_steps}")));
    }
    if step > total_steps {
        return Err(PipelineError::InvalidSchedule(format!("step {step} beyond total {total_steps}")));
    }
    if step < warmup {
        return Ok(cfg.peak_lr * (step as f64 / warmup as f64));
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    let c = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    // Written as a convex combination so both ends are exact.
    Ok(cfg.peak_lr * c + cfg.min_lr * (1.0 - c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_boundary() {
        let cfg = StageConfig::stage1();
        let total = 10_000;
        assert_eq!(lr_at(0, total, &cfg).unwrap(), 0.0);
        assert_eq!(lr_at(1000, total, &cfg).unwrap(), 1e-4);
        assert_eq!(lr_at(total, total, &cfg).unwrap(), 5e-6);
        assert!((lr_at(999, total, &cfg).unwrap() - 1e-4 * 0.999).abs() < 1e-18);
        assert!(lr_at(500, total, &cfg).unwrap() < lr_at(999, total, &cfg).unwrap());
        // Midway through the decay the rate is the mean of peak and min.
        let mid = lr_at(1000 + 4500, total, &cfg).unwrap();
        assert!((mid - (1e-4 + 5e-6) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn monotone_decay() {
        let cfg = StageConfig { warmup_steps: 10, ..StageConfig::stage1() };
        let lrs: Vec<f64> = (10..=100).map(|s| lr_at(s, 100, &cfg).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn invalid() {
        let cfg = StageConfig::stage1();
        assert!(matches!(lr_at(0, 1000, &cfg), Err(PipelineError::InvalidSchedule(_))));
        assert!(matches!(lr_at(2001, 2000, &cfg), Err(PipelineError::InvalidSchedule(_))));
    }
}
