//! Closed-form speculative decoding arithmetic.
//!
//! With acceptance rate `alpha` i.i.d. per drafted position and `gamma`
//! drafted tokens per cycle, one verification yields on average
//! `omega = (1 - alpha^(gamma+1)) / (1 - alpha)` tokens. A cycle costs
//! `gamma` draft steps plus one verification of `gamma + 1` positions, so the
//! average time per token is `(gamma * t_draft + t_verify) / omega` and the
//! speedup over plain decoding is `t_target` divided by that.

use serde::Serialize;

use crate::error::{Error, Result};

/// Absolute tolerance on `alpha` for [`invert_alpha_from_omega`].
pub const ALPHA_TOLERANCE: f64 = 1e-9;
/// Absolute tolerance on `alpha` for [`min_acceptance_for_speedup`].
pub const MIN_ALPHA_TOLERANCE: f64 = 1e-6;

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// Expected tokens produced per verification cycle.
pub fn expected_gen_len(gamma: u32, alpha: f64) -> Result<f64> {
    if gamma == 0 {
        return Err(Error::InvalidArgument("gamma must be >= 1".into()));
    }
    check_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(f64::from(gamma) + 1.0);
    }
    if gamma <= 1024 {
        // 1 + a + ... + a^gamma; avoids cancellation in 1 - a as a -> 1.
        let mut omega = 1.0;
        for _ in 0..gamma {
            omega = 1.0 + alpha * omega;
        }
        Ok(omega)
    } else {
        Ok((1.0 - alpha.powf(f64::from(gamma) + 1.0)) / (1.0 - alpha))
    }
}

/// Average latency per generated token.
pub fn sd_avg_time(t_draft_s: f64, t_select_s: f64, t_verify_s: f64, gamma: u32, omega: f64) -> Result<f64> {
    if omega.is_nan() || omega < 1.0 {
        return Err(Error::InvalidArgument(format!("omega must be >= 1, got {omega}")));
    }
    if [t_draft_s, t_select_s, t_verify_s].iter().any(|t| t.is_nan() || *t < 0.0) {
        return Err(Error::InvalidArgument("step times must be >= 0".into()));
    }
    Ok((f64::from(gamma) * (t_draft_s + t_select_s) + t_verify_s) / omega)
}

pub fn speedup_ratio(t_target_s: f64, t_sd_avg_s: f64) -> Result<f64> {
    if !(t_target_s > 0.0 && t_sd_avg_s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "speedup needs positive times, got target={t_target_s} sd={t_sd_avg_s}"
        )));
    }
    Ok(t_target_s / t_sd_avg_s)
}

/// Smallest `x` in `(lo, hi]` with `pred(x)`, to within `tol`. `pred` must be
/// monotone (false then true) and `pred(hi)` must hold.
fn bisect_threshold(pred: impl Fn(f64) -> bool, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// The acceptance rate whose expected generation length equals `omega`.
pub fn invert_alpha_from_omega(gamma: u32, omega: f64) -> Result<f64> {
    if gamma == 0 {
        return Err(Error::InvalidArgument("gamma must be >= 1".into()));
    }
    let max = f64::from(gamma) + 1.0;
    if !(1.0..=max).contains(&omega) {
        return Err(Error::InvalidArgument(format!(
            "omega {omega} outside [1, {max}] for gamma {gamma}"
        )));
    }
    if omega == 1.0 {
        return Ok(0.0);
    }
    if omega == max {
        return Ok(1.0);
    }
    let omega_at = |a: f64| expected_gen_len(gamma, a).expect("alpha in range");
    Ok(bisect_threshold(|a| omega_at(a) >= omega, 0.0, 1.0, ALPHA_TOLERANCE * 1e-3))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum MinAcceptance {
    Feasible { alpha: f64, gamma: u32, speedup: f64 },
    Infeasible,
}

impl MinAcceptance {
    pub fn alpha(&self) -> Option<f64> {
        match self {
            MinAcceptance::Feasible { alpha, .. } => Some(*alpha),
            MinAcceptance::Infeasible => None,
        }
    }
}

/// Best speedup over `gamma in 1..=gamma_max` at acceptance rate `alpha`,
/// with the smallest maximizing `gamma`.
pub fn best_speedup_over_gamma(
    t_target_s: f64,
    t_draft_s: f64,
    t_select_s: f64,
    t_verify_fn: &impl Fn(u32) -> f64,
    alpha: f64,
    gamma_max: u32,
) -> Result<(u32, f64)> {
    let mut best = (0, f64::NEG_INFINITY);
    for gamma in 1..=gamma_max {
        let omega = expected_gen_len(gamma, alpha)?;
        let avg = sd_avg_time(t_draft_s, t_select_s, t_verify_fn(gamma), gamma, omega)?;
        let x = speedup_ratio(t_target_s, avg)?;
        if x > best.1 {
            best = (gamma, x);
        }
    }
    Ok(best)
}

/// Smallest acceptance rate for which some `gamma <= gamma_max` reaches
/// `target_x`.
pub fn min_acceptance_for_speedup(
    t_target_s: f64,
    t_draft_s: f64,
    t_select_s: f64,
    t_verify_fn: impl Fn(u32) -> f64,
    target_x: f64,
    gamma_max: u32,
) -> Result<MinAcceptance> {
    if target_x.is_nan() || target_x <= 0.0 {
        return Err(Error::InvalidArgument(format!("target speedup must be > 0, got {target_x}")));
    }
    if gamma_max == 0 {
        return Err(Error::InvalidArgument("gamma_max must be >= 1".into()));
    }
    let best = |alpha: f64| best_speedup_over_gamma(t_target_s, t_draft_s, t_select_s, &t_verify_fn, alpha, gamma_max);
    let feasible = |(gamma, speedup): (u32, f64), alpha: f64| MinAcceptance::Feasible { alpha, gamma, speedup };

    let at_zero = best(0.0)?;
    if at_zero.1 >= target_x {
        return Ok(feasible(at_zero, 0.0));
    }
    if best(1.0)?.1 < target_x {
        return Ok(MinAcceptance::Infeasible);
    }
    // Speedup at every gamma is increasing in alpha, so is the max over gamma.
    let reaches = |alpha: f64| best(alpha).map(|b| b.1 >= target_x).unwrap_or(false);
    let alpha = bisect_threshold(reaches, 0.0, 1.0, MIN_ALPHA_TOLERANCE);
    Ok(feasible(best(alpha)?, alpha))
}

/// Every quantity of one speculative decoding configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedupReport {
    /// Target decode step, one token.
    pub t_target_s: f64,
    /// Draft step excluding KV selection.
    pub t_draft_s: f64,
    /// KV selection cost per draft step.
    pub t_select_s: f64,
    /// Verification of `gamma + 1` positions.
    pub t_verify_s: f64,
    pub gamma: u32,
    pub alpha: f64,
    pub omega: f64,
    pub t_sd_avg_s: f64,
    pub speedup: f64,
}

impl SpeedupReport {
    pub fn new(
        t_target_s: f64,
        t_draft_s: f64,
        t_select_s: f64,
        t_verify_s: f64,
        gamma: u32,
        alpha: f64,
    ) -> Result<Self> {
        let omega = expected_gen_len(gamma, alpha)?;
        let t_sd_avg_s = sd_avg_time(t_draft_s, t_select_s, t_verify_s, gamma, omega)?;
        let speedup = speedup_ratio(t_target_s, t_sd_avg_s)?;
        Ok(Self {
            t_target_s,
            t_draft_s,
            t_select_s,
            t_verify_s,
            gamma,
            alpha,
            omega,
            t_sd_avg_s,
            speedup,
        })
    }

    /// Draft cost per step including selection.
    pub fn t_draft_total_s(&self) -> f64 {
        self.t_draft_s + self.t_select_s
    }

    pub fn verify_ratio(&self) -> f64 {
        self.t_verify_s / self.t_target_s
    }

    /// `gamma * (t_draft + t_select) / t_target`.
    pub fn draft_ratio(&self) -> f64 {
        f64::from(self.gamma) * self.t_draft_total_s() / self.t_target_s
    }
}
