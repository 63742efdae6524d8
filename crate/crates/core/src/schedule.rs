//! Step-size and local-update schedules.
//!
//! Two regimes are supported: a constant pair `(eta, H)` and the polynomial
//! regime `eta_t = eta (1 + t)^(-gamma_eta)`, `H_t = ceil(H (1 + t)^gamma_h)`.
//! Rounds are 1-indexed; the initial iterate is `theta_0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    Polynomial,
}

/// Config form: `{kind, eta, H, gamma_eta, gamma_h}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleConfig", into = "ScheduleConfig")]
pub struct Schedule {
    kind: ScheduleKind,
    eta: f64,
    h_base: usize,
    gamma_eta: f64,
    gamma_h: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleConfig {
    kind: ScheduleKind,
    eta: f64,
    #[serde(rename = "H")]
    h: usize,
    #[serde(default)]
    gamma_eta: f64,
    #[serde(default)]
    gamma_h: f64,
}

impl TryFrom<ScheduleConfig> for Schedule {
    type Error = Error;

    fn try_from(c: ScheduleConfig) -> Result<Self> {
        match c.kind {
            ScheduleKind::Constant => Schedule::constant(c.eta, c.h),
            ScheduleKind::Polynomial => Schedule::polynomial(c.eta, c.h, c.gamma_eta, c.gamma_h),
        }
    }
}

impl From<Schedule> for ScheduleConfig {
    fn from(s: Schedule) -> Self {
        ScheduleConfig {
            kind: s.kind,
            eta: s.eta,
            h: s.h_base,
            gamma_eta: s.gamma_eta,
            gamma_h: s.gamma_h,
        }
    }
}

impl Schedule {
    pub fn constant(eta: f64, h: usize) -> Result<Self> {
        check_base(eta, h)?;
        Ok(Schedule {
            kind: ScheduleKind::Constant,
            eta,
            h_base: h,
            gamma_eta: 0.0,
            gamma_h: 0.0,
        })
    }

    pub fn polynomial(eta: f64, h: usize, gamma_eta: f64, gamma_h: f64) -> Result<Self> {
        check_base(eta, h)?;
        if !(0.5..1.0).contains(&gamma_eta) {
            return Err(Error::InvalidSchedule(format!(
                "gamma_eta = {gamma_eta} must lie in [1/2, 1)"
            )));
        }
        if !(gamma_h >= 0.0 && gamma_h <= gamma_eta) {
            return Err(Error::InvalidSchedule(format!(
                "gamma_h = {gamma_h} must lie in [0, gamma_eta]"
            )));
        }
        Ok(Schedule {
            kind: ScheduleKind::Polynomial,
            eta,
            h_base: h,
            gamma_eta,
            gamma_h,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn h_base(&self) -> usize {
        self.h_base
    }

    pub fn gamma_eta(&self) -> f64 {
        self.gamma_eta
    }

    pub fn gamma_h(&self) -> f64 {
        self.gamma_h
    }

    /// `gamma_eta - gamma_h`; zero for constant schedules.
    pub fn gamma(&self) -> f64 {
        self.gamma_eta - self.gamma_h
    }

    pub fn step_size(&self, t: usize) -> Result<f64> {
        if t < 1 {
            return Err(Error::InvalidRound(t));
        }
        Ok(self.step_size_unchecked(t))
    }

    pub fn local_steps(&self, t: usize) -> Result<usize> {
        if t < 1 {
            return Err(Error::InvalidRound(t));
        }
        Ok(self.local_steps_unchecked(t))
    }

    pub(crate) fn step_size_unchecked(&self, t: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.eta,
            ScheduleKind::Polynomial => self.eta * (1.0 + t as f64).powf(-self.gamma_eta),
        }
    }

    pub(crate) fn local_steps_unchecked(&self, t: usize) -> usize {
        match self.kind {
            ScheduleKind::Constant => self.h_base,
            ScheduleKind::Polynomial if self.gamma_h == 0.0 => self.h_base,
            ScheduleKind::Polynomial => {
                (self.h_base as f64 * (1.0 + t as f64).powf(self.gamma_h)).ceil() as usize
            }
        }
    }

    /// `sum_{i=from}^{to} eta_i H_i`.
    pub fn cumulative_eta_h(&self, from: usize, to: usize) -> Result<f64> {
        if from < 1 || from > to {
            return Err(Error::InvalidRange { from, to });
        }
        Ok((from..=to)
            .map(|i| self.step_size_unchecked(i) * self.local_steps_unchecked(i) as f64)
            .sum())
    }

    /// Non-fatal guard checks. `eta_cap` stands in for the unobservable
    /// stability threshold, `contraction_hint` for the contraction rate `a`.
    pub fn guard_warnings(&self, eta_cap: Option<f64>, contraction_hint: Option<f64>) -> Vec<String> {
        let mut warnings = Vec::new();
        if let Some(cap) = eta_cap {
            if self.eta > cap {
                warnings.push(format!("eta = {} exceeds the stability cap {cap}", self.eta));
            }
        }
        if let Some(a) = contraction_hint {
            let eta_h = self.eta * self.h_base as f64;
            if a > 0.0 && eta_h >= 1.0 / a {
                warnings.push(format!(
                    "eta * H = {eta_h} is not below 1/a = {}",
                    1.0 / a
                ));
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        warnings
    }
}

fn check_base(eta: f64, h: usize) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidSchedule(format!("eta = {eta} must be positive")));
    }
    if h == 0 {
        return Err(Error::InvalidSchedule("H must be at least 1".into()));
    }
    Ok(())
}
