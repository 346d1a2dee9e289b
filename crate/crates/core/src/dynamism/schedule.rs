//! Cubic gradual-pruning schedule (Zhu & Gupta style).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparsity schedule S_t = S_f + (S_i - S_f) * (1 - (t - t0)/(n*dt))^3,
/// evaluated on the pruning window [t0, t0 + n_steps * delta_t] and clamped
/// outside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruningSchedule {
    pub s_initial: f64,
    pub s_final: f64,
    pub t0: u64,
    pub delta_t: u64,
    pub n_steps: u64,
}

impl PruningSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.s_initial) {
            return Err(Error::validation("s_initial must be in [0, 1)"));
        }
        if !(self.s_final > 0.0 && self.s_final <= 1.0) {
            return Err(Error::validation("s_final must be in (0, 1]"));
        }
        if self.s_final <= self.s_initial {
            return Err(Error::validation("s_final must exceed s_initial"));
        }
        if self.delta_t == 0 || self.n_steps == 0 {
            return Err(Error::validation("delta_t and n_steps must be >= 1"));
        }
        Ok(())
    }

    pub fn window_end(&self) -> u64 {
        self.t0 + self.n_steps * self.delta_t
    }

    /// True when `t` sits on a pruning step boundary (t0, t0 + dt, ...).
    pub fn is_step(&self, t: u64) -> bool {
        t >= self.t0 && t <= self.window_end() && (t - self.t0).is_multiple_of(self.delta_t)
    }
}

/// Target sparsity at iteration `t`. Below the window returns `s_initial`,
/// above it `s_final`; inside, the cubic decay. Monotone non-decreasing
/// in `t`.
pub fn sparsity_at(schedule: &PruningSchedule, t: u64) -> f64 {
    if t <= schedule.t0 {
        return schedule.s_initial;
    }
    let end = schedule.window_end();
    if t >= end {
        return schedule.s_final;
    }
    let span = (schedule.n_steps * schedule.delta_t) as f64;
    let frac = (t - schedule.t0) as f64 / span;
    schedule.s_final + (schedule.s_initial - schedule.s_final) * (1.0 - frac).powi(3)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> PruningSchedule {
        PruningSchedule {
            s_initial: 0.0,
            s_final: 0.9,
            t0: 3000,
            delta_t: 1000,
            n_steps: 4,
        }
    }

    #[test]
    fn window_start_is_initial() {
        assert_eq!(sparsity_at(&reference(), 3000), 0.0);
    }

    #[test]
    fn quarter_point() {
        let s = sparsity_at(&reference(), 4000);
        assert!((s - 0.9 * (1.0 - 0.75f64.powi(3))).abs() < 1e-12);
        assert!((s - 0.5203125).abs() < 1e-9);
    }

    #[test]
    fn half_point() {
        let s = sparsity_at(&reference(), 5000);
        assert!((s - 0.7875).abs() < 1e-12);
    }

    #[test]
    fn window_end_is_final() {
        assert_eq!(sparsity_at(&reference(), 7000), 0.9);
    }

    #[test]
    fn clamps_outside_window() {
        assert_eq!(sparsity_at(&reference(), 0), 0.0);
        assert_eq!(sparsity_at(&reference(), 100_000), 0.9);
    }

    #[test]
    fn monotone_in_t() {
        let sched = reference();
        let mut prev = -1.0;
        for t in (2500..8000).step_by(50) {
            let s = sparsity_at(&sched, t);
            assert!(s >= prev, "sparsity decreased at t={t}");
            prev = s;
        }
    }

    #[test]
    fn rejects_bad_params() {
        let mut s = reference();
        s.s_final = 0.0;
        assert!(s.validate().is_err());
        let mut s = reference();
        s.s_initial = 0.95;
        assert!(s.validate().is_err());
        let mut s = reference();
        s.delta_t = 0;
        assert!(s.validate().is_err());
    }
}
