//! Item-level effects, robust test-level aggregation, and the
//! specification test comparing robust and naive estimates.
//!
//! The item-level effect of item i is (b_i1 - b_i0) / a_i0, the implied
//! impact on the control trait scale if that item behaves the same way
//! in both groups. The naive test-level effect is the unweighted mean of
//! item effects. The robust effect solves a redescending M-estimation
//! problem whose weights vanish outside a confidence band around the
//! current solution, so aberrant items are excluded rather than averaged
//! in. The difference between the two estimates, standardized by its
//! delta-method standard error, tests whether the naive effect depends
//! on the specific items used.

use crate::error::{Error, Result};
use crate::estimate::ItemParameterSet;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

const IRLS_MAX_ITER: usize = 500;
const IRLS_TOL: f64 = 1e-10;
const FIXED_POINT_TOL: f64 = 1e-9;
const DEGENERATE_VAR: f64 = 1e-14;

/// One item's treatment effect with its delta-method pieces.
#[derive(Debug, Clone, Copy)]
pub struct ItemEffect {
    /// Effect in SD units of the control-group latent trait.
    pub delta_hat: f64,
    /// Partials with respect to (a_i0, b_i0, b_i1).
    pub grad: [f64; 3],
    /// Delta-method variance at the estimated effect.
    pub var: f64,
    /// Variance with the median effect substituted into the gradient;
    /// equals `var` until `null_variance` updates it.
    pub var_null: f64,
}

/// Converged robust fit with its weights and loss diagnostics.
#[derive(Debug, Clone)]
pub struct RobustFit {
    pub delta_r: f64,
    /// Normalized IRLS weights, in [0,1], summing to 1.
    pub w_r: Vec<f64>,
    /// Influence weights used in the variance of the difference test;
    /// may be negative.
    pub v_r: Vec<f64>,
    /// Per-item tuning thresholds on the effect scale.
    pub k: Vec<f64>,
    /// Converged (candidate, loss) pairs across starts.
    pub solutions: Vec<(f64, f64)>,
    pub alpha: f64,
}

/// Naive and robust test-level effects plus the specification test.
#[derive(Debug, Clone)]
pub struct ScalingResult {
    pub delta_u: f64,
    pub var_u: f64,
    pub robust: RobustFit,
    /// delta_r - delta_u, exactly.
    pub delta: f64,
    pub var_delta: f64,
    pub z: f64,
    pub p_value: f64,
    /// True when var_delta fell below the degeneracy floor; then z = 0
    /// and p = 1.
    pub degenerate: bool,
    /// Per-item DIF flags from the null band around the robust effect.
    /// Zero robust weight implies flagged.
    pub flags: Vec<bool>,
}

pub(crate) fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

pub(crate) fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

fn two_sided_p(z: f64) -> f64 {
    (2.0 * std_normal().sf(z.abs())).clamp(0.0, 1.0)
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// 3x3 covariance of (a_i0, b_i0, b_i1): control block plus the
// treatment intercept variance; cross-group covariance is zero.
fn item_cov3(params: &ItemParameterSet, i: usize) -> [[f64; 3]; 3] {
    let c = &params.control.covariance;
    let t = &params.treatment.covariance;
    let va0 = c[(2 * i, 2 * i)];
    let cab = c[(2 * i, 2 * i + 1)];
    let vb0 = c[(2 * i + 1, 2 * i + 1)];
    let vb1 = t[(2 * i + 1, 2 * i + 1)];
    [[va0, cab, 0.0], [cab, vb0, 0.0], [0.0, 0.0, vb1]]
}

fn quad_form3(g: &[f64; 3], v: &[[f64; 3]; 3]) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            s += g[a] * v[a][b] * g[b];
        }
    }
    s
}

/// Item-level treatment effects with delta-method variances. Cross-item
/// covariances of the parameter estimates are not used.
pub fn item_effects(params: &ItemParameterSet) -> Vec<ItemEffect> {
    let m = params.m();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let a0 = params.control.model.items()[i].slope();
        let b0 = params.control.model.items()[i].intercept();
        let b1 = params.treatment.model.items()[i].intercept();
        let delta_hat = (b1 - b0) / a0;
        let grad = [-delta_hat / a0, -1.0 / a0, 1.0 / a0];
        let var = quad_form3(&grad, &item_cov3(params, i));
        out.push(ItemEffect {
            delta_hat,
            grad,
            var,
            var_null: var,
        });
    }
    out
}

/// Recomputes each variance with the median effect substituted for the
/// item's own effect in the slope component of the gradient, storing the
/// result as `var_null`. The reference point no longer tracks the item's
/// own (possibly aberrant) effect, which keeps the null-hypothesis
/// variance stable under DIF.
pub fn null_variance(effects: &[ItemEffect], params: &ItemParameterSet) -> Vec<ItemEffect> {
    assert!(effects.len() >= 2, "null_variance needs at least 2 items");
    assert_eq!(effects.len(), params.m());
    let med = median(&effects.iter().map(|e| e.delta_hat).collect::<Vec<_>>());
    effects
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let a0 = params.control.model.items()[i].slope();
            let g = [-med / a0, e.grad[1], e.grad[2]];
            let var_null = quad_form3(&g, &item_cov3(params, i));
            ItemEffect { var_null, ..*e }
        })
        .collect()
}

/// Unweighted mean of item effects and its variance.
pub fn naive_effect(effects: &[ItemEffect]) -> (f64, f64) {
    assert!(!effects.is_empty(), "naive_effect needs at least 1 item");
    let m = effects.len() as f64;
    let delta_u = effects.iter().map(|e| e.delta_hat).sum::<f64>() / m;
    let var_u = effects.iter().map(|e| e.var).sum::<f64>() / (m * m);
    (delta_u, var_u)
}

/// Bisquare influence: u (1 - (u/k)^2)^2 inside [-k, k], zero outside.
pub fn bisquare_psi(u: f64, k: f64) -> f64 {
    debug_assert!(k > 0.0);
    let t = (u / k) * (u / k);
    if t >= 1.0 {
        0.0
    } else {
        u * (1.0 - t) * (1.0 - t)
    }
}

/// Derivative of the bisquare: (1 - t)(1 - 5t) with t = (u/k)^2 inside
/// the window, zero outside.
pub fn bisquare_psi_prime(u: f64, k: f64) -> f64 {
    debug_assert!(k > 0.0);
    let t = (u / k) * (u / k);
    if t >= 1.0 {
        0.0
    } else {
        (1.0 - t) * (1.0 - 5.0 * t)
    }
}

/// Normalized bisquare loss: -(1 - (u/k)^2)^3 inside the window, zero
/// outside. Ranges over [-1, 0] with the minimum -1 at u = 0, so a value
/// of delta whose window captures s items has loss approaching -s.
pub fn bisquare_rho(u: f64, k: f64) -> f64 {
    debug_assert!(k > 0.0);
    let t = (u / k) * (u / k);
    if t >= 1.0 {
        0.0
    } else {
        let one_m = 1.0 - t;
        -(one_m * one_m * one_m)
    }
}

/// Sum of normalized losses at a candidate test-level effect.
pub fn robust_loss(deltas: &[f64], k: &[f64], delta: f64) -> f64 {
    deltas
        .iter()
        .zip(k)
        .map(|(&d, &ki)| bisquare_rho(d - delta, ki))
        .sum()
}

/// Per-item tuning thresholds: the (1 - alpha) normal critical value
/// times the null standard error, floored at `epsilon_floor`.
pub fn tuning_parameters(effects: &[ItemEffect], alpha: f64, epsilon_floor: f64) -> Vec<f64> {
    let z = normal_quantile(1.0 - alpha / 2.0);
    effects
        .iter()
        .map(|e| (z * e.var_null.sqrt()).max(epsilon_floor))
        .collect()
}

/// Which starting values the robust fit tries. `each` is honored for up
/// to 32 items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StartSpec {
    pub median: bool,
    pub mean: bool,
    pub each: bool,
}

impl Default for StartSpec {
    fn default() -> Self {
        Self {
            median: true,
            mean: true,
            each: true,
        }
    }
}

impl StartSpec {
    pub fn resolve(&self, deltas: &[f64]) -> Vec<f64> {
        let mut starts = Vec::new();
        if self.median {
            starts.push(median(deltas));
        }
        if self.mean {
            starts.push(deltas.iter().sum::<f64>() / deltas.len() as f64);
        }
        if self.each && deltas.len() <= 32 {
            starts.extend_from_slice(deltas);
        }
        starts
    }

    /// Parses a comma-separated keyword list such as "median,mean,all".
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self {
            median: false,
            mean: false,
            each: false,
        };
        for word in text.split(',') {
            match word.trim() {
                "median" => spec.median = true,
                "mean" => spec.mean = true,
                "all" | "each" => spec.each = true,
                "" => {}
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown start keyword `{other}` (expected median, mean, all)"
                    )))
                }
            }
        }
        if spec
            == (Self {
                median: false,
                mean: false,
                each: false,
            })
        {
            return Err(Error::InvalidConfig("no start values selected".into()));
        }
        Ok(spec)
    }
}

enum IrlsOutcome {
    Converged(f64),
    AllZeroWeights,
    NoConverge,
}

// One IRLS run. Residuals are standardized by the null variance, so the
// update is a weighted mean with coefficients (1 - t)^2 / V_i where
// t = ((d_i - delta)/k_i)^2. Iteration stops once both the step and the
// absolute weighted-residual sum are below tolerance.
fn irls_once(d: &[f64], vnull: &[f64], k: &[f64], start: f64) -> IrlsOutcome {
    let mut delta = start;
    for _ in 0..IRLS_MAX_ITER {
        let mut sc = 0.0;
        let mut scd = 0.0;
        for i in 0..d.len() {
            let r = d[i] - delta;
            let t = (r / k[i]) * (r / k[i]);
            if t < 1.0 {
                let w = (1.0 - t) * (1.0 - t);
                let c = w / vnull[i];
                sc += c;
                scd += c * d[i];
            }
        }
        if sc == 0.0 {
            return IrlsOutcome::AllZeroWeights;
        }
        let next = scd / sc;
        let gap = (next - delta).abs();
        if gap < IRLS_TOL && sc * gap <= FIXED_POINT_TOL {
            return IrlsOutcome::Converged(delta);
        }
        delta = next;
    }
    IrlsOutcome::NoConverge
}

/// Robust test-level effect via multi-start IRLS. An empty `starts`
/// slice selects the defaults: median, mean, and every item effect when
/// there are at most 32 items. Among converged candidates the one with
/// the lowest loss wins; ties go to the candidate keeping more items,
/// then to the smaller magnitude.
pub fn robust_effect(effects: &[ItemEffect], alpha: f64, starts: &[f64]) -> Result<RobustFit> {
    robust_effect_with_floor(effects, alpha, starts, 0.0)
}

/// `robust_effect` with an explicit lower bound on the tuning
/// thresholds.
pub fn robust_effect_with_floor(
    effects: &[ItemEffect],
    alpha: f64,
    starts: &[f64],
    epsilon_floor: f64,
) -> Result<RobustFit> {
    let m = effects.len();
    if m < 2 {
        return Err(Error::InvalidData(format!(
            "robust_effect needs at least 2 items, got {m}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must be in (0,1), got {alpha}"
        )));
    }
    if !(epsilon_floor >= 0.0) {
        return Err(Error::InvalidConfig(
            "epsilon_floor must be nonnegative".into(),
        ));
    }
    let d: Vec<f64> = effects.iter().map(|e| e.delta_hat).collect();
    let vnull: Vec<f64> = effects.iter().map(|e| e.var_null).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidData("non-finite item effect".into()));
    }
    if vnull.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidData("null variances must be positive".into()));
    }
    let k = tuning_parameters(effects, alpha, epsilon_floor);

    let own_starts;
    let starts = if starts.is_empty() {
        own_starts = StartSpec::default().resolve(&d);
        &own_starts[..]
    } else {
        starts
    };

    let mut candidates: Vec<(f64, f64, usize)> = Vec::new();
    let mut any_nonzero_start = false;
    for &s in starts {
        match irls_once(&d, &vnull, &k, s) {
            IrlsOutcome::Converged(delta) => {
                any_nonzero_start = true;
                let loss = robust_loss(&d, &k, delta);
                let kept = d
                    .iter()
                    .zip(&k)
                    .filter(|(&di, &ki)| ((di - delta) / ki).powi(2) < 1.0)
                    .count();
                candidates.push((delta, loss, kept));
            }
            IrlsOutcome::NoConverge => any_nonzero_start = true,
            IrlsOutcome::AllZeroWeights => {}
        }
    }
    if candidates.is_empty() {
        return if any_nonzero_start {
            Err(Error::NoConvergence {
                max_iter: IRLS_MAX_ITER,
            })
        } else {
            Err(Error::AllDownweighted)
        };
    }

    let mut best = candidates[0];
    for &c in &candidates[1..] {
        let better = if (c.1 - best.1).abs() > 1e-12 {
            c.1 < best.1
        } else if c.2 != best.2 {
            c.2 > best.2
        } else {
            c.0.abs() < best.0.abs() - 1e-15
        };
        if better {
            best = c;
        }
    }
    let delta_r = best.0;

    let mut w = vec![0.0; m];
    let mut wt = vec![0.0; m];
    let mut sc = 0.0;
    let mut wt_sum = 0.0;
    for i in 0..m {
        let r = d[i] - delta_r;
        let t = (r / k[i]) * (r / k[i]);
        if t < 1.0 {
            wt[i] = (1.0 - t) * (1.0 - t);
            w[i] = wt[i] / vnull[i];
            sc += w[i];
            wt_sum += wt[i];
        }
    }
    if sc == 0.0 {
        return Err(Error::AllDownweighted);
    }
    for wi in &mut w {
        *wi /= sc;
    }
    let v_r: Vec<f64> = (0..m)
        .map(|i| {
            let r = d[i] - delta_r;
            let t = (r / k[i]) * (r / k[i]);
            if t < 1.0 {
                (1.0 - t) * (1.0 - 5.0 * t) / wt_sum
            } else {
                0.0
            }
        })
        .collect();
    Ok(RobustFit {
        delta_r,
        w_r: w,
        v_r,
        k,
        solutions: candidates.iter().map(|&(c, l, _)| (c, l)).collect(),
        alpha,
    })
}

/// Standard error proxy for the robust effect from its influence
/// weights.
pub fn robust_se(effects: &[ItemEffect], fit: &RobustFit) -> f64 {
    effects
        .iter()
        .zip(&fit.v_r)
        .map(|(e, &v)| v * v * e.var)
        .sum::<f64>()
        .sqrt()
}

/// Null variance of each item's deviation from the robust effect, based
/// on the efficient weighting: V_i - 1 / sum(1/V_r) with V the null
/// variances.
pub fn diff_null_variance(effects: &[ItemEffect], _robust: &RobustFit) -> Vec<f64> {
    let inv_sum: f64 = effects.iter().map(|e| 1.0 / e.var_null).sum();
    let v_r = 1.0 / inv_sum;
    effects
        .iter()
        .map(|e| (e.var_null - v_r).max(0.0))
        .collect()
}

/// Difference between the robust and naive effects with its variance,
/// z statistic, two-sided p, and per-item DIF flags.
pub fn delta_test(effects: &[ItemEffect], naive: (f64, f64), robust: RobustFit) -> ScalingResult {
    let m = effects.len();
    assert_eq!(robust.w_r.len(), m);
    let (delta_u, var_u) = naive;
    let delta = robust.delta_r - delta_u;
    let inv_m = 1.0 / m as f64;
    let var_delta: f64 = effects
        .iter()
        .zip(&robust.v_r)
        .map(|(e, &v)| (v - inv_m) * (v - inv_m) * e.var)
        .sum();
    let degenerate = var_delta <= DEGENERATE_VAR;
    let (z, p_value) = if degenerate {
        (0.0, 1.0)
    } else {
        let z = delta / var_delta.sqrt();
        (z, two_sided_p(z))
    };
    let crit = normal_quantile(1.0 - robust.alpha / 2.0);
    let diff_var = diff_null_variance(effects, &robust);
    let flags: Vec<bool> = effects
        .iter()
        .zip(&diff_var)
        .map(|(e, &dv)| (e.delta_hat - robust.delta_r).abs() > crit * dv.sqrt())
        .collect();
    ScalingResult {
        delta_u,
        var_u,
        robust,
        delta,
        var_delta,
        z,
        p_value,
        degenerate,
        flags,
    }
}
