use crate::smallmat::Mat;

use super::config::RescaleConfig;

/// Whether iteration `k` (1-based) is a rescale event, given the number of
/// past events `p` and the iteration `k_last` of the latest one.
pub fn rescale_due(cfg: &RescaleConfig, k: usize, p: usize, k_last: usize) -> bool {
    if !cfg.enabled || k == 0 {
        return false;
    }
    if k <= cfg.initial {
        return true;
    }
    let gap = cfg.base * cfg.growth.powi(p as i32);
    k.saturating_sub(k_last) as f64 >= gap
}

/// Event bookkeeping for [`rescale_due`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RescaleSchedule {
    pub events: usize,
    pub last: usize,
}

impl RescaleSchedule {
    pub fn due(&self, cfg: &RescaleConfig, k: usize) -> bool {
        rescale_due(cfg, k, self.events, self.last)
    }

    pub fn record(&mut self, k: usize) {
        self.events += 1;
        self.last = k;
    }
}

/// Penalty update for one element. Returns the new penalty; `lambda` is
/// rescaled so that `μΛ` (the unscaled multiplier) is unchanged.
///
/// `floor` is `½μ_min`; the result never drops below it, even when the
/// errors are balanced.
pub fn rescale_element<const D: usize>(
    mu: f64,
    lambda: &mut Mat<D>,
    e_prim: f64,
    e_dual: f64,
    rho: f64,
    floor: f64,
) -> f64 {
    let half = rho / 2.0;
    let (proposed, factor) = if e_prim > rho * e_dual {
        (mu * half, 1.0 / half)
    } else if e_dual > rho * e_prim {
        (mu / half, half)
    } else {
        (mu, 1.0)
    };
    if proposed >= floor {
        if factor != 1.0 {
            // divide rather than multiply by the reciprocal so the factor is exact
            if factor < 1.0 {
                *lambda /= half;
            } else {
                *lambda *= half;
            }
        }
        return proposed;
    }
    *lambda *= mu / floor;
    floor
}
