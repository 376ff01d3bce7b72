//! Trajectory evaluation: absolute trajectory error as translation RMSE
//! over timestamp-associated pose pairs. Both tracks live in the map frame,
//! so no alignment transform is applied.

use maploc_core::fusion::OdomSample;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no estimate/truth pairs associate within {max_dt} s")]
    NoAssociations { max_dt: f64 },
}

/// Default association tolerance, seconds.
pub const DEFAULT_MAX_DT: f64 = 0.02;

/// RMSE of the translation error over associated pairs. Association is
/// nearest-timestamp within `max_dt`; `xy_only` drops the vertical axis.
pub fn compute_ate_rmse(
    estimate: &[OdomSample],
    truth: &[OdomSample],
    max_dt: f64,
    xy_only: bool,
) -> Result<f64, EvalError> {
    let mut truth_times: Vec<f64> = truth.iter().map(|s| s.timestamp).collect();
    let sorted = truth_times.windows(2).all(|w| w[0] <= w[1]);
    let mut order: Vec<usize> = (0..truth.len()).collect();
    if !sorted {
        order.sort_by(|&a, &b| truth[a].timestamp.total_cmp(&truth[b].timestamp));
        truth_times = order.iter().map(|&i| truth[i].timestamp).collect();
    }

    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for est in estimate {
        let idx = truth_times.partition_point(|&t| t < est.timestamp);
        let mut best: Option<(f64, usize)> = None;
        for candidate in [idx.wrapping_sub(1), idx] {
            if candidate < truth_times.len() {
                let dt = (truth_times[candidate] - est.timestamp).abs();
                if dt <= max_dt && best.map(|(b, _)| dt < b).unwrap_or(true) {
                    best = Some((dt, candidate));
                }
            }
        }
        if let Some((_, i)) = best {
            let matched = &truth[order[i]];
            let mut err = est.pose.translation - matched.pose.translation;
            if xy_only {
                err.z = 0.0;
            }
            sum_sq += err.norm_squared();
            count += 1;
        }
    }
    if count == 0 {
        return Err(EvalError::NoAssociations { max_dt });
    }
    Ok((sum_sq / count as f64).sqrt())
}
