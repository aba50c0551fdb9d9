//! Monte Carlo studies of the specification test.
//!
//! Two designs are covered. In the washout design the treatment group
//! has a genuine trait shift and a subset of items is generated so their
//! item-level effect is zero; those items wash out the naive estimate.
//! In the pre-exposure design there is no trait shift but a subset of
//! items becomes easier in the treatment group, which inflates the
//! naive estimate. Both vary the proportion of affected items over a
//! grid and track how often the test rejects.

use crate::data::ResponseDataset;
use crate::error::{Error, Result};
use crate::estimate::{fit_both_groups, screen_and_fit, EmSettings, ScreenRules};
use crate::irt::{make_grid, sigmoid, QuadratureGrid, DEFAULT_NODES};
use crate::scaling::{
    delta_test, item_effects, naive_effect, normal_quantile, null_variance,
    robust_effect_with_floor, StartSpec,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which generating design a simulation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Washout,
    Preexposure,
}

impl std::str::FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "washout" => Ok(Study::Washout),
            "preexposure" => Ok(Study::Preexposure),
            other => Err(Error::InvalidConfig(format!(
                "unknown study `{other}` (expected washout or preexposure)"
            ))),
        }
    }
}

impl std::fmt::Display for Study {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Study::Washout => write!(f, "washout"),
            Study::Preexposure => write!(f, "preexposure"),
        }
    }
}

/// Full description of one simulation run. All fields have defaults, so
/// a config file may set only what it changes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub study: Study,
    pub items: usize,
    pub persons_per_group: usize,
    pub replications: usize,
    /// Proportions of affected items; empty means the full integral
    /// grid 0/items ..= items/items.
    pub dif_props: Vec<f64>,
    pub alpha: f64,
    pub seed: u64,
    pub slope_range: (f64, f64),
    pub intercept_base_range: (f64, f64),
    /// Pre-exposure intercept shift range.
    pub shift_range: (f64, f64),
    /// Washout trait shift in the treatment group.
    pub impact: f64,
    pub quad_nodes: usize,
    pub em: EmSettings,
    pub screen: bool,
    pub screen_rules: ScreenRules,
    pub starts: StartSpec,
    pub epsilon_floor: f64,
    pub keep_reps: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            study: Study::Washout,
            items: 16,
            persons_per_group: 500,
            replications: 500,
            dif_props: Vec::new(),
            alpha: 0.05,
            seed: 0,
            slope_range: (0.5, 2.0),
            intercept_base_range: (-1.5, 1.5),
            shift_range: (0.4, 0.5),
            impact: 0.4,
            quad_nodes: DEFAULT_NODES,
            em: EmSettings::default(),
            screen: false,
            screen_rules: ScreenRules::default(),
            starts: StartSpec::default(),
            epsilon_floor: 0.0,
            keep_reps: false,
        }
    }
}

impl SimulationConfig {
    /// The DIF-proportion grid actually run.
    pub fn grid(&self) -> Vec<f64> {
        if self.dif_props.is_empty() {
            (0..=self.items)
                .map(|k| k as f64 / self.items as f64)
                .collect()
        } else {
            self.dif_props.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.items < 2 {
            return Err(Error::InvalidConfig(format!(
                "items must be at least 2, got {}",
                self.items
            )));
        }
        if self.persons_per_group < 2 {
            return Err(Error::InvalidConfig(format!(
                "persons_per_group must be at least 2, got {}",
                self.persons_per_group
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig(
                "replications must be at least 1".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be in (0,1), got {}",
                self.alpha
            )));
        }
        for &p in &self.dif_props {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "dif_props entries must lie in [0,1], got {p}"
                )));
            }
            let count = p * self.items as f64;
            if (count - count.round()).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "dif_props entry {p} times {} items is {count}, not an integer",
                    self.items
                )));
            }
        }
        let (lo, hi) = self.slope_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "slope_range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        let (lo, hi) = self.intercept_base_range;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "intercept_base_range must satisfy lo <= hi, got ({lo}, {hi})"
            )));
        }
        let (lo, hi) = self.shift_range;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "shift_range must satisfy lo <= hi, got ({lo}, {hi})"
            )));
        }
        if !self.impact.is_finite() {
            return Err(Error::InvalidConfig("impact must be finite".into()));
        }
        if !(self.epsilon_floor >= 0.0) {
            return Err(Error::InvalidConfig(
                "epsilon_floor must be nonnegative".into(),
            ));
        }
        let s = &self.starts;
        if !s.median && !s.mean && !(s.each && self.items <= 32) {
            return Err(Error::InvalidConfig(
                "starts resolve to an empty set for this item count".into(),
            ));
        }
        self.em.validate()
    }
}

/// Generating parameters and intended effects for one synthetic
/// dataset. Treatment parameters are expressed on the standardized
/// treatment-group trait scale, the scale a per-group fit estimates.
#[derive(Debug, Clone)]
pub struct GeneratedTruth {
    /// Designed test-level impact in control-group SD units.
    pub delta0: f64,
    /// Intended per-item effect.
    pub item_delta: Vec<f64>,
    pub dif_items: Vec<bool>,
    /// (slope, intercept) per item for the control group.
    pub control: Vec<(f64, f64)>,
    /// (slope, intercept) per item on the standardized treatment scale.
    pub treatment: Vec<(f64, f64)>,
}

// Draw order is frozen: slopes, base intercepts, DIF subset, shifts
// (pre-exposure only), control traits, treatment traits, then responses
// person-major with items in order, control group first. Changing it
// silently changes every seeded result.
struct ItemDraws {
    a: Vec<f64>,
    b: Vec<f64>,
    dif: Vec<bool>,
}

fn draw_items(config: &SimulationConfig, p: f64, rng: &mut ChaCha8Rng) -> ItemDraws {
    let m = config.items;
    let a: Vec<f64> = (0..m)
        .map(|_| rng.gen_range(config.slope_range.0..config.slope_range.1))
        .collect();
    let b: Vec<f64> = a
        .iter()
        .map(|ai| ai * rng.gen_range(config.intercept_base_range.0..config.intercept_base_range.1))
        .collect();
    let n_dif = (p * m as f64).round() as usize;
    let mut idx: Vec<usize> = (0..m).collect();
    for j in 0..n_dif {
        let pick = rng.gen_range(j..m);
        idx.swap(j, pick);
    }
    let mut dif = vec![false; m];
    for &i in &idx[..n_dif] {
        dif[i] = true;
    }
    ItemDraws { a, b, dif }
}

fn responses(
    config: &SimulationConfig,
    control_raw: &[(f64, f64)],
    treatment_raw: &[(f64, f64)],
    theta_shift: f64,
    rng: &mut ChaCha8Rng,
) -> ResponseDataset {
    let m = config.items;
    let n = config.persons_per_group;
    let theta0: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let theta1: Vec<f64> = (0..n)
        .map(|_| theta_shift + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut cells = Vec::with_capacity(2 * n * m);
    let mut group = Vec::with_capacity(2 * n);
    for &th in &theta0 {
        group.push(0u8);
        for &(a, b) in control_raw {
            cells.push(u8::from(rng.gen_bool(sigmoid(a * th + b))));
        }
    }
    for &th in &theta1 {
        group.push(1u8);
        for &(a, b) in treatment_raw {
            cells.push(u8::from(rng.gen_bool(sigmoid(a * th + b))));
        }
    }
    let width = m.to_string().len().max(2);
    let names = (1..=m)
        .map(|i| format!("item{i:0width$}"))
        .collect::<Vec<_>>();
    ResponseDataset::from_parts(names, group, cells)
}

/// Washout design: real impact, DIF items generated with a treatment
/// intercept offset of minus slope times impact so their item-level
/// effect is exactly zero.
pub fn generate_washout(
    config: &SimulationConfig,
    p: f64,
    rng: &mut ChaCha8Rng,
) -> (ResponseDataset, GeneratedTruth) {
    let draws = draw_items(config, p, rng);
    let impact = config.impact;
    let control: Vec<(f64, f64)> = draws
        .a
        .iter()
        .zip(&draws.b)
        .map(|(&a, &b)| (a, b))
        .collect();
    // raw treatment intercepts pair with the unstandardized trait
    // N(impact, 1); on the standardized scale each intercept gains
    // slope * impact
    let treatment_raw: Vec<(f64, f64)> = control
        .iter()
        .zip(&draws.dif)
        .map(|(&(a, b), &d)| if d { (a, b - a * impact) } else { (a, b) })
        .collect();
    let treatment: Vec<(f64, f64)> = treatment_raw
        .iter()
        .map(|&(a, b)| (a, b + a * impact))
        .collect();
    let item_delta: Vec<f64> = draws
        .dif
        .iter()
        .map(|&d| if d { 0.0 } else { impact })
        .collect();
    let data = responses(config, &control, &treatment_raw, impact, rng);
    let truth = GeneratedTruth {
        delta0: impact,
        item_delta,
        dif_items: draws.dif,
        control,
        treatment,
    };
    (data, truth)
}

/// Pre-exposure design: no impact, DIF items get easier in the
/// treatment group by a shift drawn from the configured range.
pub fn generate_preexposure(
    config: &SimulationConfig,
    p: f64,
    rng: &mut ChaCha8Rng,
) -> (ResponseDataset, GeneratedTruth) {
    let draws = draw_items(config, p, rng);
    let shifts: Vec<f64> = draws
        .dif
        .iter()
        .map(|&d| {
            if d {
                rng.gen_range(config.shift_range.0..config.shift_range.1)
            } else {
                0.0
            }
        })
        .collect();
    let control: Vec<(f64, f64)> = draws
        .a
        .iter()
        .zip(&draws.b)
        .map(|(&a, &b)| (a, b))
        .collect();
    let treatment: Vec<(f64, f64)> = control
        .iter()
        .zip(&shifts)
        .map(|(&(a, b), &e)| (a, b + e))
        .collect();
    let item_delta: Vec<f64> = control
        .iter()
        .zip(&shifts)
        .map(|(&(a, _), &e)| e / a)
        .collect();
    let data = responses(config, &control, &treatment, 0.0, rng);
    let truth = GeneratedTruth {
        delta0: 0.0,
        item_delta,
        dif_items: draws.dif,
        control,
        treatment,
    };
    (data, truth)
}

/// One replication's outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub p: f64,
    pub rep: usize,
    pub delta_u: f64,
    pub delta_r: f64,
    pub delta: f64,
    pub se_delta: f64,
    pub z: f64,
    pub p_value: f64,
    pub rejected: bool,
    pub degenerate: bool,
    pub dif_items: Vec<bool>,
    pub flagged: Vec<bool>,
    pub em_iterations: [usize; 2],
}

/// Aggregates for one grid point. Sample vectors hold one entry per
/// successful replication, in replication order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub p: f64,
    pub replications: usize,
    pub failures: usize,
    pub degenerate: usize,
    pub rejection_rate: f64,
    pub mean_delta_u: f64,
    pub sd_delta_u: f64,
    pub bias_delta_u: f64,
    pub mean_delta_r: f64,
    pub sd_delta_r: f64,
    pub bias_delta_r: f64,
    pub mean_delta: f64,
    pub sd_delta: f64,
    pub mean_se_delta: f64,
    pub samples_delta_u: Vec<f64>,
    pub samples_delta_r: Vec<f64>,
    pub samples_delta: Vec<f64>,
}

/// Results of a full study run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub study: Study,
    pub delta0: f64,
    pub conditions: Vec<ConditionSummary>,
    /// Per-replication records when the config keeps them.
    pub records: Option<Vec<ReplicationRecord>>,
    pub config: SimulationConfig,
}

fn run_one(
    config: &SimulationConfig,
    grid: &QuadratureGrid,
    p: f64,
    cond_idx: usize,
    rep_idx: usize,
) -> Result<ReplicationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(cond_idx as u64 * 1_000_000 + rep_idx as u64);
    let (data, truth) = match config.study {
        Study::Washout => generate_washout(config, p, &mut rng),
        Study::Preexposure => generate_preexposure(config, p, &mut rng),
    };
    let (params, dif_items) = if config.screen {
        let (params, kept, _report) =
            screen_and_fit(&data, &config.screen_rules, grid, &config.em)?;
        let dif: Vec<bool> = kept
            .item_names()
            .iter()
            .map(|name| {
                let orig = data.item_names().iter().position(|n| n == name).unwrap();
                truth.dif_items[orig]
            })
            .collect();
        (params, dif)
    } else {
        (
            fit_both_groups(&data, grid, &config.em)?,
            truth.dif_items.clone(),
        )
    };
    let effects = item_effects(&params);
    let effects = null_variance(&effects, &params);
    let naive = naive_effect(&effects);
    let deltas: Vec<f64> = effects.iter().map(|e| e.delta_hat).collect();
    let starts = config.starts.resolve(&deltas);
    let fit = robust_effect_with_floor(&effects, config.alpha, &starts, config.epsilon_floor)?;
    let result = delta_test(&effects, naive, fit);
    let crit = normal_quantile(1.0 - config.alpha / 2.0);
    Ok(ReplicationRecord {
        p,
        rep: rep_idx,
        delta_u: result.delta_u,
        delta_r: result.robust.delta_r,
        delta: result.delta,
        se_delta: result.var_delta.sqrt(),
        z: result.z,
        p_value: result.p_value,
        rejected: !result.degenerate && result.z.abs() > crit,
        degenerate: result.degenerate,
        dif_items,
        flagged: result.flags,
        em_iterations: [
            params.control.convergence.iterations,
            params.treatment.convergence.iterations,
        ],
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Runs every condition of the configured study. Replications are
/// independent with per-replication RNG substreams keyed by condition
/// and replication index, so results do not depend on the thread count.
pub fn run_study(config: &SimulationConfig) -> Result<SimulationSummary> {
    config.validate()?;
    let grid = make_grid(config.quad_nodes)?;
    let props = config.grid();
    let reps = config.replications;
    let mut conditions = Vec::with_capacity(props.len());
    let mut all_records = Vec::new();
    for (cond_idx, &p) in props.iter().enumerate() {
        let outcomes: Vec<Result<ReplicationRecord>> = (0..reps)
            .into_par_iter()
            .map(|rep_idx| run_one(config, &grid, p, cond_idx, rep_idx))
            .collect();
        let failures = outcomes.iter().filter(|o| o.is_err()).count();
        let limit = (0.05 * reps as f64).floor() as usize;
        if failures > limit {
            return Err(Error::TooManyFailures {
                p,
                failures,
                replications: reps,
                limit,
            });
        }
        let records: Vec<ReplicationRecord> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
        let du: Vec<f64> = records.iter().map(|r| r.delta_u).collect();
        let dr: Vec<f64> = records.iter().map(|r| r.delta_r).collect();
        let dd: Vec<f64> = records.iter().map(|r| r.delta).collect();
        let se: Vec<f64> = records.iter().map(|r| r.se_delta).collect();
        let rejected = records.iter().filter(|r| r.rejected).count();
        let degenerate = records.iter().filter(|r| r.degenerate).count();
        conditions.push(ConditionSummary {
            p,
            replications: reps,
            failures,
            degenerate,
            rejection_rate: rejected as f64 / records.len() as f64,
            mean_delta_u: mean(&du),
            sd_delta_u: sd(&du),
            bias_delta_u: mean(&du) - delta0_for(config),
            mean_delta_r: mean(&dr),
            sd_delta_r: sd(&dr),
            bias_delta_r: mean(&dr) - delta0_for(config),
            mean_delta: mean(&dd),
            sd_delta: sd(&dd),
            mean_se_delta: mean(&se),
            samples_delta_u: du,
            samples_delta_r: dr,
            samples_delta: dd,
        });
        if config.keep_reps {
            all_records.extend(records);
        }
    }
    Ok(SimulationSummary {
        study: config.study,
        delta0: delta0_for(config),
        conditions,
        records: if config.keep_reps {
            Some(all_records)
        } else {
            None
        },
        config: config.clone(),
    })
}

fn delta0_for(config: &SimulationConfig) -> f64 {
    match config.study {
        Study::Washout => config.impact,
        Study::Preexposure => 0.0,
    }
}
