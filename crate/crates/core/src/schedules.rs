//! Closed-form learning-rate and momentum schedules: cosine annealing,
//! one-cycle tuning, and cyclic snapshot restarts. Pure functions over
//! immutable descriptors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine annealing from `alpha0` at t = 0 to `alpha1` at t = `t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineAnneal {
    pub alpha0: f64,
    pub alpha1: f64,
    pub t_max: u64,
}

impl CosineAnneal {
    pub fn new(alpha0: f64, alpha1: f64, t_max: u64) -> Result<Self> {
        if t_max < 1 {
            return Err(Error::InvalidArgument("cosine anneal needs t_max >= 1".into()));
        }
        Ok(CosineAnneal { alpha0, alpha1, t_max })
    }

    /// Value at iteration `t` in `[0, t_max]`:
    /// `alpha1 + (alpha0 - alpha1) * (1 + cos(pi t / t_max)) / 2`,
    /// so the value starts at `alpha0`, ends at `alpha1`, and passes through
    /// their midpoint at `t_max / 2`.
    pub fn value(&self, t: u64) -> Result<f64> {
        if t > self.t_max {
            return Err(Error::ScheduleRange { t: t as i64, lo: 0, hi: self.t_max as i64 });
        }
        let frac = t as f64 / self.t_max as f64;
        Ok(self.alpha1 + 0.5 * (self.alpha0 - self.alpha1) * (1.0 + (PI * frac).cos()))
    }
}

/// Two-phase schedule: learning rate rises `eta_min -> eta_max` then falls
/// back, while momentum does the inverse (`mu_max -> mu_min -> mu_max`),
/// each leg annealed by cosine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub eta_min: f64,
    pub eta_max: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub t_total: u64,
    /// Fraction of `t_total` spent in the rising phase, in (0, 1).
    pub split: f64,
}

impl OneCycle {
    pub fn new(
        eta_min: f64,
        eta_max: f64,
        mu_min: f64,
        mu_max: f64,
        t_total: u64,
        split: f64,
    ) -> Result<Self> {
        if eta_min >= eta_max {
            return Err(Error::InvalidArgument(format!(
                "one-cycle needs eta_min < eta_max, got {eta_min} >= {eta_max}"
            )));
        }
        if mu_min >= mu_max {
            return Err(Error::InvalidArgument(format!(
                "one-cycle needs mu_min < mu_max, got {mu_min} >= {mu_max}"
            )));
        }
        if t_total < 2 {
            return Err(Error::InvalidArgument("one-cycle needs t_total >= 2".into()));
        }
        if !(split > 0.0 && split < 1.0) {
            return Err(Error::InvalidArgument(format!("split must lie in (0,1), got {split}")));
        }
        Ok(OneCycle { eta_min, eta_max, mu_min, mu_max, t_total, split })
    }

    /// Step index where the rising phase ends and the decay phase begins.
    pub fn split_point(&self) -> u64 {
        ((self.t_total as f64 * self.split).round() as u64).clamp(1, self.t_total - 1)
    }

    /// `(learning rate, momentum)` at iteration `t` in `[0, t_total]`.
    pub fn value(&self, t: u64) -> Result<(f64, f64)> {
        if t > self.t_total {
            return Err(Error::ScheduleRange { t: t as i64, lo: 0, hi: self.t_total as i64 });
        }
        let sp = self.split_point();
        if t <= sp {
            let lr = CosineAnneal::new(self.eta_min, self.eta_max, sp)?.value(t)?;
            let mu = CosineAnneal::new(self.mu_max, self.mu_min, sp)?.value(t)?;
            Ok((lr, mu))
        } else {
            let span = self.t_total - sp;
            let lr = CosineAnneal::new(self.eta_max, self.eta_min, span)?.value(t - sp)?;
            let mu = CosineAnneal::new(self.mu_min, self.mu_max, span)?.value(t - sp)?;
            Ok((lr, mu))
        }
    }
}

/// Cyclic restart schedule: within each cycle the rate decays from `peak`
/// to `floor` by cosine; it resets to `peak` at each cycle start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSchedule {
    /// Total number of iterations.
    pub total: u64,
    /// Number of cycles. Cycle length is `ceil(total / cycles)`.
    pub cycles: u64,
    pub peak: f64,
    pub floor: f64,
}

impl SnapshotSchedule {
    pub fn new(total: u64, cycles: u64, peak: f64, floor: f64) -> Result<Self> {
        if cycles < 1 || total < cycles {
            return Err(Error::InvalidArgument(format!(
                "snapshot schedule needs total >= cycles >= 1, got total {total}, cycles {cycles}"
            )));
        }
        Ok(SnapshotSchedule { total, cycles, peak, floor })
    }

    pub fn cycle_len(&self) -> u64 {
        self.total.div_ceil(self.cycles)
    }

    /// Learning rate at iteration `t` in `[1, total]`:
    /// the cosine anneal evaluated at `mod(t - 1, ceil(total / cycles))`.
    pub fn lr(&self, t: u64) -> Result<f64> {
        if t < 1 || t > self.total {
            return Err(Error::ScheduleRange { t: t as i64, lo: 1, hi: self.total as i64 });
        }
        let len = self.cycle_len();
        let phase = (t - 1) % len;
        // a cycle of length L spans anneal steps 0..=L-1; L == 1 degenerates
        // to a constant peak
        let anneal = CosineAnneal::new(self.peak, self.floor, (len - 1).max(1))?;
        anneal.value(phase)
    }

    /// True when iteration `t` is the last step of a cycle (checkpoint time).
    pub fn is_cycle_end(&self, t: u64) -> bool {
        t >= 1 && t <= self.total && t % self.cycle_len() == 0
    }
}
