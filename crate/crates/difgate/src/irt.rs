//! Two-parameter logistic measurement model and quadrature support.
//!
//! The latent trait is standard normal within each group; the marginal
//! likelihood integrates over that prior on a fixed Gauss-Hermite grid
//! rescaled to the normal density.

use crate::data::ResponseDataset;
use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Probabilities are clamped to [PROB_FLOOR, 1 - PROB_FLOOR] inside logs.
pub(crate) const PROB_FLOOR: f64 = 1e-12;

/// Smallest quadrature size accepted by `make_grid`.
pub const MIN_NODES: usize = 21;

/// Default quadrature size used by the CLI and the simulation engine.
pub const DEFAULT_NODES: usize = 61;

/// Slope and intercept of one item on the logit scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemParams {
    slope: f64,
    intercept: f64,
}

impl ItemParams {
    /// Requires a finite positive slope and a finite intercept.
    pub fn new(slope: f64, intercept: f64) -> Result<Self> {
        if !slope.is_finite() || !intercept.is_finite() || slope <= 0.0 {
            return Err(Error::InvalidItemParams { slope, intercept });
        }
        Ok(Self { slope, intercept })
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }
}

/// Item parameters of one group, in item order.
///
/// Test-level operations need at least two items; single-item models are
/// allowed here so that per-item likelihood pieces stay testable on their
/// own.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupModel {
    items: Vec<ItemParams>,
    group: u8,
}

impl GroupModel {
    pub fn new(items: Vec<ItemParams>, group: u8) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyData(
                "group model needs at least one item".into(),
            ));
        }
        if group > 1 {
            return Err(Error::InvalidData(format!(
                "group label {group} not in {{0,1}}"
            )));
        }
        Ok(Self { items, group })
    }

    pub fn items(&self) -> &[ItemParams] {
        &self.items
    }

    pub fn m(&self) -> usize {
        self.items.len()
    }

    pub fn group(&self) -> u8 {
        self.group
    }
}

/// Nodes and normalized weights for integrating against the standard
/// normal density.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    /// Validates strictly increasing nodes and positive weights summing
    /// to 1 within 1e-12.
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.is_empty() {
            return Err(Error::InvalidData(
                "grid nodes/weights length mismatch".into(),
            ));
        }
        if nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidData(
                "grid nodes not strictly increasing".into(),
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidData("grid weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidData(format!(
                "grid weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss-Hermite grid adapted to the standard normal, built by the
/// Golub-Welsch eigenvalue method and symmetrized about zero.
pub fn make_grid(n_nodes: usize) -> Result<QuadratureGrid> {
    if n_nodes < MIN_NODES {
        return Err(Error::TooFewNodes {
            requested: n_nodes,
            minimum: MIN_NODES,
        });
    }
    let n = n_nodes;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let beta = (k as f64 / 2.0).sqrt();
        jac[(k, k - 1)] = beta;
        jac[(k - 1, k)] = beta;
    }
    let eig = jac.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());

    // Physicists' nodes t and weights proportional to the squared first
    // eigenvector component; theta = sqrt(2) t maps exp(-t^2) weighting
    // to the standard normal after renormalization.
    let mut nodes: Vec<f64> = order
        .iter()
        .map(|&j| eig.eigenvalues[j] * std::f64::consts::SQRT_2)
        .collect();
    let mut weights: Vec<f64> = order
        .iter()
        .map(|&j| {
            let v0 = eig.eigenvectors[(0, j)];
            v0 * v0
        })
        .collect();

    // Enforce exact symmetry so grid moments are clean.
    for j in 0..n / 2 {
        let k = n - 1 - j;
        let s = 0.5 * (nodes[j] - nodes[k]);
        nodes[j] = s;
        nodes[k] = -s;
        let w = 0.5 * (weights[j] + weights[k]);
        weights[j] = w;
        weights[k] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    QuadratureGrid::new(nodes, weights)
}

/// Endorsement probability of `item` at trait value `theta`.
pub fn response_prob(item: &ItemParams, theta: f64) -> f64 {
    sigmoid(item.slope * theta + item.intercept)
}

/// Marginal log-likelihood of `data` under `model`, integrating the
/// latent trait over `grid`. Missing entries contribute a factor of 1.
pub fn marginal_loglik(
    model: &GroupModel,
    data: &ResponseDataset,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let m = model.m();
    if data.n_items() != m {
        return Err(Error::InvalidData(format!(
            "dataset has {} items, model has {m}",
            data.n_items()
        )));
    }
    if data.n_persons() == 0 {
        return Err(Error::EmptyData("no persons".into()));
    }
    if data.observed_total() == 0 {
        return Err(Error::EmptyData("no observed responses".into()));
    }
    let q = grid.len();
    let mut lp1 = vec![0.0; m * q];
    let mut lp0 = vec![0.0; m * q];
    for (i, item) in model.items().iter().enumerate() {
        for (qi, &th) in grid.nodes().iter().enumerate() {
            let p = response_prob(item, th).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            lp1[i * q + qi] = p.ln();
            lp0[i * q + qi] = (1.0 - p).ln();
        }
    }
    let logw: Vec<f64> = grid.weights().iter().map(|w| w.ln()).collect();
    let mut acc = vec![0.0; q];
    let mut total = 0.0;
    for j in 0..data.n_persons() {
        acc.copy_from_slice(&logw);
        for i in 0..m {
            match data.get(j, i) {
                Some(1) => {
                    for qi in 0..q {
                        acc[qi] += lp1[i * q + qi];
                    }
                }
                Some(_) => {
                    for qi in 0..q {
                        acc[qi] += lp0[i * q + qi];
                    }
                }
                None => {}
            }
        }
        total += logsumexp(&acc);
    }
    Ok(total)
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sum(exp(xs))) guarded against overflow.
pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    let s: f64 = xs.iter().map(|&x| (x - mx).exp()).sum();
    mx + s.ln()
}
