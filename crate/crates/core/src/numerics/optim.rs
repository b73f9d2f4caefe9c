//! SGD with momentum (coupled weight decay) and a step-decay schedule.

use crate::error::{Error, Result};

/// Per-tensor optimizer state. Weight decay enters the momentum buffer
/// (coupled form): `v <- momentum * v + (grad + wd * param)`.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub velocity: Vec<f64>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimState {
    pub fn new(len: usize, lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if lr <= 0.0 {
            return Err(Error::Config(format!("lr must be > 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(OptimState {
            velocity: vec![0.0; len],
            lr,
            momentum,
            weight_decay,
        })
    }
}

/// One momentum-SGD step over a flat parameter tensor.
pub fn sgd_momentum_step(params: &mut [f64], grads: &[f64], state: &mut OptimState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::Shape(format!(
            "sgd step: params {} grads {} velocity {}",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for i in 0..params.len() {
        let v = state.momentum * state.velocity[i]
            + (grads[i] + state.weight_decay * params[i]);
        state.velocity[i] = v;
        params[i] -= state.lr * v;
    }
    Ok(())
}

/// Step-decay schedule: the rate is multiplied by `factor` at every
/// milestone epoch it has passed.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn constant() -> Self {
        LrSchedule {
            milestones: Vec::new(),
            factor: 1.0,
        }
    }

    /// Milestones at 60% and 85% of the epoch budget.
    pub fn default_for(epochs: usize) -> Self {
        let mut milestones = Vec::new();
        let a = epochs * 6 / 10;
        let b = epochs * 85 / 100;
        if a >= 1 {
            milestones.push(a);
        }
        if b >= 1 && b != a {
            milestones.push(b);
        }
        LrSchedule {
            milestones,
            factor: 0.1,
        }
    }
}

/// Learning rate at `epoch` (milestone 0 never decays, so epoch 0 always
/// returns `initial_lr`).
pub fn lr_schedule(epoch: usize, initial_lr: f64, schedule: &LrSchedule) -> f64 {
    let hits = schedule
        .milestones
        .iter()
        .filter(|&&m| m >= 1 && epoch >= m)
        .count();
    initial_lr * schedule.factor.powi(hits as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_zero_velocity_no_decay_is_noop() {
        let mut p = vec![1.5, -2.0];
        let mut st = OptimState::new(2, 0.1, 0.9, 0.0).unwrap();
        sgd_momentum_step(&mut p, &[0.0, 0.0], &mut st).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn reduces_to_vanilla_sgd() {
        let mut p = vec![1.0];
        let mut st = OptimState::new(1, 0.5, 0.0, 0.0).unwrap();
        sgd_momentum_step(&mut p, &[2.0], &mut st).unwrap();
        assert!((p[0] - (1.0 - 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_hand_unrolled_recurrence() {
        let (lr, mom, wd) = (0.1, 0.9, 0.01);
        let (g1, g2) = (0.3, -0.7);
        let p0 = 2.0;

        // Hand-unrolled oracle.
        let v1 = g1 + wd * p0;
        let p1 = p0 - lr * v1;
        let v2 = mom * v1 + (g2 + wd * p1);
        let p2 = p1 - lr * v2;

        let mut p = vec![p0];
        let mut st = OptimState::new(1, lr, mom, wd).unwrap();
        sgd_momentum_step(&mut p, &[g1], &mut st).unwrap();
        sgd_momentum_step(&mut p, &[g2], &mut st).unwrap();
        assert!((p[0] - p2).abs() < 1e-15, "{} vs {p2}", p[0]);
        assert!((st.velocity[0] - v2).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut p = vec![0.0; 3];
        let mut st = OptimState::new(3, 0.1, 0.9, 0.0).unwrap();
        assert!(sgd_momentum_step(&mut p, &[0.0; 2], &mut st).is_err());
    }

    #[test]
    fn schedule_starts_at_initial_lr() {
        let s = LrSchedule {
            milestones: vec![10, 20],
            factor: 0.1,
        };
        assert_eq!(lr_schedule(0, 0.01, &s), 0.01);
    }

    #[test]
    fn schedule_steps_down_at_milestone() {
        let s = LrSchedule {
            milestones: vec![5],
            factor: 0.1,
        };
        assert!((lr_schedule(4, 0.01, &s) - 0.01).abs() < 1e-15);
        assert!((lr_schedule(5, 0.01, &s) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn schedule_monotone_over_300_epochs() {
        let s = LrSchedule {
            milestones: vec![30, 120, 250],
            factor: 0.1,
        };
        let mut prev = f64::INFINITY;
        for epoch in 0..300 {
            let lr = lr_schedule(epoch, 0.01, &s);
            assert!(lr <= prev + 1e-18, "epoch {epoch}");
            prev = lr;
        }
    }
}
