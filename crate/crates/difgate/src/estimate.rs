//! Marginal maximum likelihood estimation of per-group 2PL models.
//!
//! Fitting is EM over a fixed quadrature grid: the E-step computes
//! posterior node weights per person and reduces them to expected
//! binomial counts per item and node; the M-step runs a per-item Newton
//! solve on those counts. The observed information is built by central
//! finite differences of the analytic marginal score and inverted to
//! give the parameter covariance. Parameter order is (a_1, b_1, a_2,
//! b_2, ...) within each group.

use crate::data::ResponseDataset;
use crate::error::{Error, Result};
use crate::irt::{logsumexp, sigmoid, GroupModel, ItemParams, QuadratureGrid, PROB_FLOOR};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

// Newton safeguards; items pushed to a bound end up screened or flagged
// as singular rather than producing non-finite values.
const SLOPE_MIN: f64 = 1e-3;
const SLOPE_MAX: f64 = 60.0;
const INTERCEPT_MAX: f64 = 60.0;

/// EM stopping rules.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmSettings {
    /// Maximum EM sweeps.
    pub max_iter: usize,
    /// Largest absolute parameter change that counts as converged.
    pub param_tol: f64,
    /// Relative log-likelihood change that counts as converged.
    pub loglik_tol: f64,
    /// Bound on the max-norm of the marginal score at the solution.
    /// `None` scales with the group size as `0.01 * sqrt(n)`.
    pub score_tol: Option<f64>,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self {
            max_iter: 500,
            param_tol: 1e-5,
            loglik_tol: 1e-9,
            score_tol: None,
        }
    }
}

impl EmSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::InvalidConfig("em max_iter must be >= 1".into()));
        }
        if !(self.param_tol > 0.0) {
            return Err(Error::InvalidConfig("em param_tol must be positive".into()));
        }
        if !(self.loglik_tol > 0.0) {
            return Err(Error::InvalidConfig(
                "em loglik_tol must be positive".into(),
            ));
        }
        if let Some(t) = self.score_tol {
            if !(t > 0.0) {
                return Err(Error::InvalidConfig("em score_tol must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn score_tol_for(&self, n_persons: usize) -> f64 {
        self.score_tol
            .unwrap_or_else(|| 0.01 * (n_persons as f64).sqrt())
    }
}

/// Iteration diagnostics for one fitted group.
#[derive(Debug, Clone)]
pub struct Convergence {
    pub iterations: usize,
    /// Max-norm of the marginal score at the returned parameters.
    pub score_norm: f64,
    /// Whether the parameter/log-likelihood stopping rule was met.
    pub converged: bool,
    /// Marginal log-likelihood after each EM sweep (starts at the
    /// initial values). Non-decreasing up to floating point noise.
    pub loglik_trace: Vec<f64>,
}

/// One group's MLEs with their covariance.
#[derive(Debug, Clone)]
pub struct FittedGroup {
    pub model: GroupModel,
    /// Inverse observed information over (a_1, b_1, a_2, b_2, ...).
    pub covariance: DMatrix<f64>,
    pub loglik: f64,
    pub convergence: Convergence,
}

impl FittedGroup {
    pub fn m(&self) -> usize {
        self.model.m()
    }
}

/// Control and treatment fits over the same items, in the same order.
/// Cross-group parameter covariance is zero (independent samples).
#[derive(Debug, Clone)]
pub struct ItemParameterSet {
    pub control: FittedGroup,
    pub treatment: FittedGroup,
}

impl ItemParameterSet {
    pub fn new(control: FittedGroup, treatment: FittedGroup) -> Result<Self> {
        if control.m() != treatment.m() {
            return Err(Error::InvalidData(format!(
                "group item counts differ: {} vs {}",
                control.m(),
                treatment.m()
            )));
        }
        Ok(Self { control, treatment })
    }

    pub fn m(&self) -> usize {
        self.control.m()
    }
}

// Compact per-person response encoding used by the E-step. Per person we
// keep only the indices endorsed (x = 1) and the indices missing; the
// all-zeros log-likelihood is shared across persons.
struct Folded {
    n_persons: usize,
    ones: Vec<Vec<u32>>,
    miss: Vec<Vec<u32>>,
}

fn fold(data: &ResponseDataset) -> Folded {
    let m = data.n_items();
    let mut ones = Vec::with_capacity(data.n_persons());
    let mut miss = Vec::with_capacity(data.n_persons());
    for j in 0..data.n_persons() {
        let mut o = Vec::new();
        let mut mi = Vec::new();
        for i in 0..m {
            match data.get(j, i) {
                Some(1) => o.push(i as u32),
                Some(_) => {}
                None => mi.push(i as u32),
            }
        }
        ones.push(o);
        miss.push(mi);
    }
    Folded {
        n_persons: data.n_persons(),
        ones,
        miss,
    }
}

struct Expected {
    loglik: f64,
    /// Expected endorsement count per item and node, m x q row-major.
    r: Vec<f64>,
    /// Expected response count per item and node, m x q row-major.
    n: Vec<f64>,
}

fn e_step(params: &[(f64, f64)], folded: &Folded, grid: &QuadratureGrid) -> Expected {
    let m = params.len();
    let q = grid.len();
    let nodes = grid.nodes();
    let mut lp0 = vec![0.0; m * q];
    let mut d = vec![0.0; m * q];
    let mut base: Vec<f64> = grid.weights().iter().map(|w| w.ln()).collect();
    for (i, &(a, b)) in params.iter().enumerate() {
        for (qi, &th) in nodes.iter().enumerate() {
            let p = sigmoid(a * th + b).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            let l1 = p.ln();
            let l0 = (1.0 - p).ln();
            lp0[i * q + qi] = l0;
            d[i * q + qi] = l1 - l0;
            base[qi] += l0;
        }
    }
    let mut r = vec![0.0; m * q];
    let mut nmiss = vec![0.0; m * q];
    let mut tq = vec![0.0; q];
    let mut acc = vec![0.0; q];
    let mut post = vec![0.0; q];
    let mut loglik = 0.0;
    for j in 0..folded.n_persons {
        acc.copy_from_slice(&base);
        for &i in &folded.miss[j] {
            let off = i as usize * q;
            for qi in 0..q {
                acc[qi] -= lp0[off + qi];
            }
        }
        for &i in &folded.ones[j] {
            let off = i as usize * q;
            for qi in 0..q {
                acc[qi] += d[off + qi];
            }
        }
        let mx = logsumexp(&acc);
        loglik += mx;
        for qi in 0..q {
            let p = (acc[qi] - mx).exp();
            post[qi] = p;
            tq[qi] += p;
        }
        for &i in &folded.miss[j] {
            let off = i as usize * q;
            for qi in 0..q {
                nmiss[off + qi] += post[qi];
            }
        }
        for &i in &folded.ones[j] {
            let off = i as usize * q;
            for qi in 0..q {
                r[off + qi] += post[qi];
            }
        }
    }
    let mut n = vec![0.0; m * q];
    for i in 0..m {
        for qi in 0..q {
            n[i * q + qi] = tq[qi] - nmiss[i * q + qi];
        }
    }
    Expected { loglik, r, n }
}

// Newton ascent on the expected-count binomial log-likelihood of one
// item. The objective is concave; steps are clipped to the parameter
// box and halved on any decrease.
fn m_step_item(nodes: &[f64], r: &[f64], n: &[f64], start: (f64, f64)) -> (f64, f64) {
    let eval = |a: f64, b: f64| -> f64 {
        let mut s = 0.0;
        for (qi, &th) in nodes.iter().enumerate() {
            if n[qi] <= 0.0 {
                continue;
            }
            let p = sigmoid(a * th + b).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            s += r[qi] * p.ln() + (n[qi] - r[qi]) * (1.0 - p).ln();
        }
        s
    };
    let (mut a, mut b) = start;
    let mut cur = eval(a, b);
    for _ in 0..50 {
        let (mut ga, mut gb) = (0.0, 0.0);
        let (mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0);
        for (qi, &th) in nodes.iter().enumerate() {
            let p = sigmoid(a * th + b);
            let resid = r[qi] - n[qi] * p;
            let w = n[qi] * p * (1.0 - p);
            ga += th * resid;
            gb += resid;
            haa += th * th * w;
            hab += th * w;
            hbb += w;
        }
        if ga.abs().max(gb.abs()) < 1e-12 {
            break;
        }
        let det = haa * hbb - hab * hab;
        if !(det > 1e-300) {
            break;
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        let clip = |x: f64, dx: f64, lo: f64, hi: f64| -> f64 {
            if dx > 0.0 {
                ((hi - x) / dx).min(1.0)
            } else if dx < 0.0 {
                ((lo - x) / dx).min(1.0)
            } else {
                1.0
            }
        };
        let mut step = clip(a, da, SLOPE_MIN, SLOPE_MAX)
            .min(clip(b, db, -INTERCEPT_MAX, INTERCEPT_MAX))
            .max(0.0);
        if step == 0.0 {
            break;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let na = a + step * da;
            let nb = b + step * db;
            let val = eval(na, nb);
            if val >= cur - 1e-10 * (1.0 + cur.abs()) {
                let moved = (step * da).abs().max((step * db).abs());
                a = na;
                b = nb;
                cur = val;
                accepted = moved >= 1e-10;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (a, b)
}

// Exact marginal score via the expected counts at the same parameters:
// d/db = sum_q (r - n p), d/da = sum_q theta (r - n p).
fn score_at(params: &[(f64, f64)], exp: &Expected, grid: &QuadratureGrid) -> DVector<f64> {
    let m = params.len();
    let q = grid.len();
    let nodes = grid.nodes();
    let mut s = DVector::zeros(2 * m);
    for (i, &(a, b)) in params.iter().enumerate() {
        let mut sa = 0.0;
        let mut sb = 0.0;
        for (qi, &th) in nodes.iter().enumerate() {
            let p = sigmoid(a * th + b);
            let resid = exp.r[i * q + qi] - exp.n[i * q + qi] * p;
            sa += th * resid;
            sb += resid;
        }
        s[2 * i] = sa;
        s[2 * i + 1] = sb;
    }
    s
}

fn observed_information(
    params: &[(f64, f64)],
    folded: &Folded,
    grid: &QuadratureGrid,
) -> DMatrix<f64> {
    let m = params.len();
    let dim = 2 * m;
    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    let flat = |p: &[(f64, f64)]| -> Vec<f64> { p.iter().flat_map(|&(a, b)| [a, b]).collect() };
    let unflat = |v: &[f64]| -> Vec<(f64, f64)> { v.chunks(2).map(|c| (c[0], c[1])).collect() };
    let v0 = flat(params);
    for k in 0..dim {
        let h = 1e-4 * (1.0 + v0[k].abs());
        let mut vp = v0.clone();
        vp[k] += h;
        let mut vm = v0.clone();
        vm[k] -= h;
        let pp = unflat(&vp);
        let pm = unflat(&vm);
        let sp = score_at(&pp, &e_step(&pp, folded, grid), grid);
        let sm = score_at(&pm, &e_step(&pm, folded, grid), grid);
        let col = (sp - sm) / (2.0 * h);
        hess.set_column(k, &col);
    }
    -0.5 * (&hess + hess.transpose())
}

fn invert_information(info: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = info.nrows();
    let eig = info.clone().symmetric_eigen();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        min = min.min(l);
        max = max.max(l);
    }
    if !(min > 0.0) || min < 1e-12 * max {
        let rel = if max > 0.0 { min / max } else { min };
        return Err(Error::SingularInformation {
            rel_eigenvalue: rel,
        });
    }
    let inv = DVector::from_iterator(dim, eig.eigenvalues.iter().map(|&l| 1.0 / l));
    let cov = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    Ok(0.5 * (&cov + cov.transpose()))
}

/// Fits one group by marginal ML. `data` must carry a single group label
/// and every item needs at least one observed response.
pub fn fit_group(
    data: &ResponseDataset,
    grid: &QuadratureGrid,
    settings: &EmSettings,
) -> Result<FittedGroup> {
    settings.validate()?;
    let m = data.n_items();
    if m < 2 {
        return Err(Error::TooFewItems {
            kept: m,
            initial: m,
        });
    }
    if data.n_persons() == 0 {
        return Err(Error::EmptyData("no persons in group".into()));
    }
    let label = data.group_label(0);
    if data.group_labels().iter().any(|&g| g != label) {
        return Err(Error::InvalidData(
            "fit_group expects a dataset restricted to one group".into(),
        ));
    }
    if data.observed_total() == 0 {
        return Err(Error::EmptyData("no observed responses".into()));
    }
    for i in 0..m {
        if data.observed_count(i) == 0 {
            return Err(Error::InvalidData(format!(
                "item `{}` has no observed responses in group {label}; screen items first",
                data.item_names()[i]
            )));
        }
    }

    let folded = fold(data);
    let q = grid.len();

    // Start at unit slope and the logit of a lightly smoothed
    // endorsement rate.
    let mut params: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let obs = data.observed_count(i) as f64;
            let ones = (0..data.n_persons())
                .filter(|&j| data.get(j, i) == Some(1))
                .count() as f64;
            let rate = (ones + 0.5) / (obs + 1.0);
            (1.0, (rate / (1.0 - rate)).ln())
        })
        .collect();

    let mut exp = e_step(&params, &folded, grid);
    let mut ll = exp.loglik;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=settings.max_iter {
        iterations = it;
        let mut max_change = 0.0f64;
        for (i, p) in params.iter_mut().enumerate() {
            let (na, nb) = m_step_item(
                grid.nodes(),
                &exp.r[i * q..(i + 1) * q],
                &exp.n[i * q..(i + 1) * q],
                *p,
            );
            max_change = max_change.max((na - p.0).abs()).max((nb - p.1).abs());
            *p = (na, nb);
        }
        exp = e_step(&params, &folded, grid);
        let new_ll = exp.loglik;
        trace.push(new_ll);
        let rel = (new_ll - ll).abs() / (1.0 + ll.abs());
        ll = new_ll;
        if max_change < settings.param_tol && rel < settings.loglik_tol {
            converged = true;
            break;
        }
    }

    let score = score_at(&params, &exp, grid);
    let score_norm = score.iter().fold(0.0f64, |acc, &s| acc.max(s.abs()));
    let tolerance = settings.score_tol_for(folded.n_persons);
    if score_norm > tolerance {
        return Err(Error::NonConvergence {
            iterations,
            score_norm,
            tolerance,
        });
    }

    let info = observed_information(&params, &folded, grid);
    let covariance = invert_information(&info)?;

    let items: Vec<ItemParams> = params
        .iter()
        .map(|&(a, b)| ItemParams::new(a, b))
        .collect::<Result<_>>()?;
    Ok(FittedGroup {
        model: GroupModel::new(items, label)?,
        covariance,
        loglik: ll,
        convergence: Convergence {
            iterations,
            score_norm,
            converged,
            loglik_trace: trace,
        },
    })
}

/// Fits control and treatment separately; the joint covariance is block
/// diagonal across groups.
pub fn fit_both_groups(
    data: &ResponseDataset,
    grid: &QuadratureGrid,
    settings: &EmSettings,
) -> Result<ItemParameterSet> {
    let control = data.restrict_to_group(0);
    let treatment = data.restrict_to_group(1);
    if control.n_persons() == 0 {
        return Err(Error::GroupMissing { group: 0 });
    }
    if treatment.n_persons() == 0 {
        return Err(Error::GroupMissing { group: 1 });
    }
    let fit0 = fit_group(&control, grid, settings).map_err(|e| Error::GroupFit {
        group: "control",
        source: Box::new(e),
    })?;
    let fit1 = fit_group(&treatment, grid, settings).map_err(|e| Error::GroupFit {
        group: "treatment",
        source: Box::new(e),
    })?;
    ItemParameterSet::new(fit0, fit1)
}

/// Pre-fit screening thresholds plus the post-fit discrimination bounds
/// applied by `screen_and_fit`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreenRules {
    pub endorsement_min: f64,
    pub endorsement_max: f64,
    pub coverage_min: f64,
    pub slope_min: f64,
    pub slope_max: f64,
}

impl Default for ScreenRules {
    fn default() -> Self {
        Self {
            endorsement_min: 0.02,
            endorsement_max: 0.98,
            coverage_min: 0.10,
            slope_min: 0.25,
            slope_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DroppedItem {
    pub name: String,
    /// One of "coverage", "endorsement", "discrimination".
    pub reason: &'static str,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ScreenReport {
    pub dropped: Vec<DroppedItem>,
    /// Whether a post-fit discrimination drop triggered the single refit.
    pub refit: bool,
}

impl ScreenReport {
    pub fn is_empty(&self) -> bool {
        self.dropped.is_empty() && !self.refit
    }
}

/// Drops items with pooled endorsement outside the allowed range or
/// response coverage below the floor. Returns the reduced dataset and a
/// report naming each dropped item.
pub fn screen_items(
    data: &ResponseDataset,
    rules: &ScreenRules,
) -> Result<(ResponseDataset, ScreenReport)> {
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..data.n_items() {
        let name = &data.item_names()[i];
        if data.coverage(i) < rules.coverage_min {
            dropped.push(DroppedItem {
                name: name.clone(),
                reason: "coverage",
            });
            continue;
        }
        let Some(rate) = data.endorsement_rate(i) else {
            dropped.push(DroppedItem {
                name: name.clone(),
                reason: "coverage",
            });
            continue;
        };
        if rate < rules.endorsement_min || rate > rules.endorsement_max {
            dropped.push(DroppedItem {
                name: name.clone(),
                reason: "endorsement",
            });
            continue;
        }
        keep.push(i);
    }
    if keep.len() < 2 {
        return Err(Error::TooFewItems {
            kept: keep.len(),
            initial: data.n_items(),
        });
    }
    let out = if dropped.is_empty() {
        data.clone()
    } else {
        data.select_items(&keep)?
    };
    Ok((
        out,
        ScreenReport {
            dropped,
            refit: false,
        },
    ))
}

/// Full screening pipeline: pre-fit screen, fit, then drop items whose
/// fitted slope falls outside the discrimination bounds in either group
/// and refit once.
pub fn screen_and_fit(
    data: &ResponseDataset,
    rules: &ScreenRules,
    grid: &QuadratureGrid,
    settings: &EmSettings,
) -> Result<(ItemParameterSet, ResponseDataset, ScreenReport)> {
    let (mut kept, mut report) = screen_items(data, rules)?;
    let mut params = fit_both_groups(&kept, grid, settings)?;
    let bad: Vec<usize> = (0..params.m())
        .filter(|&i| {
            let a0 = params.control.model.items()[i].slope();
            let a1 = params.treatment.model.items()[i].slope();
            a0 < rules.slope_min
                || a0 > rules.slope_max
                || a1 < rules.slope_min
                || a1 > rules.slope_max
        })
        .collect();
    if !bad.is_empty() {
        for &i in &bad {
            report.dropped.push(DroppedItem {
                name: kept.item_names()[i].clone(),
                reason: "discrimination",
            });
        }
        let keep: Vec<usize> = (0..kept.n_items()).filter(|i| !bad.contains(i)).collect();
        if keep.len() < 2 {
            return Err(Error::TooFewItems {
                kept: keep.len(),
                initial: data.n_items(),
            });
        }
        kept = kept.select_items(&keep)?;
        params = fit_both_groups(&kept, grid, settings)?;
        report.refit = true;
    }
    Ok((params, kept, report))
}
