//! Analysis reports and file export.
//!
//! `analyze_dataset` runs the full pipeline on one dataset and packs
//! the result into a versioned, self-contained report: re-running with
//! the echoed settings reproduces it byte for byte once the timestamp
//! and tool version are stripped by `canonical_report`.

use crate::data::ResponseDataset;
use crate::error::{Error, Result};
use crate::estimate::{fit_both_groups, screen_and_fit, EmSettings, ScreenReport, ScreenRules};
use crate::irt::{make_grid, DEFAULT_NODES};
use crate::scaling::{
    delta_test, item_effects, naive_effect, null_variance, robust_effect_with_floor, robust_se,
    StartSpec,
};
use crate::sim::{ConditionSummary, SimulationSummary};
use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = "difgate/1";

/// Settings for a single-dataset analysis. Serialized into the report
/// so the run can be repeated exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeOptions {
    pub alpha: f64,
    pub quad_nodes: usize,
    pub em: EmSettings,
    pub starts: StartSpec,
    pub epsilon_floor: f64,
    pub screen: bool,
    pub screen_rules: ScreenRules,
    /// Provenance only; the analysis itself draws no random numbers.
    pub seed: Option<u64>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            quad_nodes: DEFAULT_NODES,
            em: EmSettings::default(),
            starts: StartSpec::default(),
            epsilon_floor: 0.0,
            screen: true,
            screen_rules: ScreenRules::default(),
            seed: None,
        }
    }
}

impl AnalyzeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be in (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.epsilon_floor >= 0.0) {
            return Err(Error::InvalidConfig(
                "epsilon_floor must be nonnegative".into(),
            ));
        }
        self.em.validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroppedItemEcho {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: Option<String>,
    pub n_control: usize,
    pub n_treatment: usize,
    pub items_initial: usize,
    pub items_used: usize,
    pub dropped_empty_persons: usize,
    pub screened_out: Vec<DroppedItemEcho>,
    pub screening_refit: bool,
}

/// One row of the per-item table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemRow {
    pub name: String,
    pub slope_control: f64,
    pub intercept_control: f64,
    pub slope_treatment: f64,
    pub intercept_treatment: f64,
    pub delta_hat: f64,
    pub se: f64,
    pub se_null: f64,
    pub k: f64,
    pub weight: f64,
    pub v_r: f64,
    /// True exactly when the robust weight is zero.
    pub flagged: bool,
    /// True when the effect falls outside the null band around the
    /// robust effect; implied by `flagged`.
    pub outside_null_band: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema: String,
    pub created: String,
    pub tool_version: String,
    pub dataset: DatasetMeta,
    pub items: Vec<ItemRow>,
    pub delta_u: f64,
    pub se_delta_u: f64,
    pub delta_r: f64,
    /// Influence-weight SE proxy for the robust effect.
    pub se_delta_r: f64,
    /// Converged (candidate, loss) pairs from the multi-start search.
    pub solutions: Vec<(f64, f64)>,
    pub delta: f64,
    pub se_delta: f64,
    pub z: f64,
    pub p_value: f64,
    pub degenerate: bool,
    pub em_iterations: [usize; 2],
    pub loglik: [f64; 2],
    pub settings: AnalyzeOptions,
}

fn timestamp() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_else(|_| "unknown".into())
}

/// Full analysis pipeline: optional screening, per-group fits, item
/// effects, naive and robust aggregation, difference test.
pub fn analyze_dataset(
    data: &ResponseDataset,
    options: &AnalyzeOptions,
    source: Option<&str>,
) -> Result<AnalysisReport> {
    options.validate()?;
    let grid = make_grid(options.quad_nodes)?;
    let items_initial = data.n_items();
    let (params, used, screen_report) = if options.screen {
        screen_and_fit(data, &options.screen_rules, &grid, &options.em)?
    } else {
        (
            fit_both_groups(data, &grid, &options.em)?,
            data.clone(),
            ScreenReport::default(),
        )
    };
    let effects = item_effects(&params);
    let effects = null_variance(&effects, &params);
    let naive = naive_effect(&effects);
    let deltas: Vec<f64> = effects.iter().map(|e| e.delta_hat).collect();
    let starts = options.starts.resolve(&deltas);
    if starts.is_empty() {
        return Err(Error::InvalidConfig(
            "starts resolve to an empty set for this item count".into(),
        ));
    }
    let fit = robust_effect_with_floor(&effects, options.alpha, &starts, options.epsilon_floor)?;
    let se_delta_r = robust_se(&effects, &fit);
    let result = delta_test(&effects, naive, fit);

    let items = (0..params.m())
        .map(|i| {
            let c = &params.control.model.items()[i];
            let t = &params.treatment.model.items()[i];
            ItemRow {
                name: used.item_names()[i].clone(),
                slope_control: c.slope(),
                intercept_control: c.intercept(),
                slope_treatment: t.slope(),
                intercept_treatment: t.intercept(),
                delta_hat: effects[i].delta_hat,
                se: effects[i].var.sqrt(),
                se_null: effects[i].var_null.sqrt(),
                k: result.robust.k[i],
                weight: result.robust.w_r[i],
                v_r: result.robust.v_r[i],
                flagged: result.robust.w_r[i] == 0.0,
                outside_null_band: result.flags[i],
            }
        })
        .collect();

    Ok(AnalysisReport {
        schema: SCHEMA.to_string(),
        created: timestamp(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        dataset: DatasetMeta {
            source: source.map(str::to_string),
            n_control: used.n_group(0),
            n_treatment: used.n_group(1),
            items_initial,
            items_used: params.m(),
            dropped_empty_persons: used.dropped_empty_persons(),
            screened_out: screen_report
                .dropped
                .iter()
                .map(|d| DroppedItemEcho {
                    name: d.name.clone(),
                    reason: d.reason.to_string(),
                })
                .collect(),
            screening_refit: screen_report.refit,
        },
        items,
        delta_u: result.delta_u,
        se_delta_u: result.var_u.sqrt(),
        delta_r: result.robust.delta_r,
        se_delta_r,
        solutions: result.robust.solutions.clone(),
        delta: result.delta,
        se_delta: result.var_delta.sqrt(),
        z: result.z,
        p_value: result.p_value,
        degenerate: result.degenerate,
        em_iterations: [
            params.control.convergence.iterations,
            params.treatment.convergence.iterations,
        ],
        loglik: [params.control.loglik, params.treatment.loglik],
        settings: options.clone(),
    })
}

/// Report JSON with volatile provenance fields removed and keys sorted,
/// for determinism comparisons.
pub fn canonical_report(json: &str) -> Result<String> {
    let mut value: serde_json::Value = serde_json::from_str(json)?;
    if let Some(map) = value.as_object_mut() {
        map.remove("created");
        map.remove("tool_version");
    }
    Ok(serde_json::to_string_pretty(&value)?)
}

pub fn report_to_json(report: &AnalysisReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

/// Per-item table as CSV, one row per retained item.
pub fn items_to_csv(report: &AnalysisReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "name",
        "slope_control",
        "intercept_control",
        "slope_treatment",
        "intercept_treatment",
        "delta_hat",
        "se",
        "se_null",
        "k",
        "weight",
        "v_r",
        "flagged",
        "outside_null_band",
    ])?;
    for row in &report.items {
        w.write_record([
            row.name.clone(),
            row.slope_control.to_string(),
            row.intercept_control.to_string(),
            row.slope_treatment.to_string(),
            row.intercept_treatment.to_string(),
            row.delta_hat.to_string(),
            row.se.to_string(),
            row.se_null.to_string(),
            row.k.to_string(),
            row.weight.to_string(),
            row.v_r.to_string(),
            row.flagged.to_string(),
            row.outside_null_band.to_string(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidData(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf8"))
}

fn condition_record(c: &ConditionSummary) -> Vec<String> {
    vec![
        c.p.to_string(),
        c.replications.to_string(),
        c.failures.to_string(),
        c.degenerate.to_string(),
        c.rejection_rate.to_string(),
        c.mean_delta_u.to_string(),
        c.sd_delta_u.to_string(),
        c.bias_delta_u.to_string(),
        c.mean_delta_r.to_string(),
        c.sd_delta_r.to_string(),
        c.bias_delta_r.to_string(),
        c.mean_delta.to_string(),
        c.sd_delta.to_string(),
        c.mean_se_delta.to_string(),
    ]
}

/// Simulation summary as CSV, one row per condition.
pub fn summary_to_csv(summary: &SimulationSummary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "p",
        "replications",
        "failures",
        "degenerate",
        "rejection_rate",
        "mean_delta_u",
        "sd_delta_u",
        "bias_delta_u",
        "mean_delta_r",
        "sd_delta_r",
        "bias_delta_r",
        "mean_delta",
        "sd_delta",
        "mean_se_delta",
    ])?;
    for c in &summary.conditions {
        w.write_record(condition_record(c))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidData(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf8"))
}

pub fn summary_to_json(summary: &SimulationSummary) -> Result<String> {
    Ok(serde_json::to_string_pretty(summary)?)
}
