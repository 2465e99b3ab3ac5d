//! The directed degree-corrected block model.
//!
//! An edge `i → j` is present independently with probability
//! `θ(i) · B(c_i, c_j) · δ(j)`, where `θ` captures how readily a node sends
//! edges, `δ` how readily it receives them, and `B` the community-level
//! connectivity. This module validates parameters, samples adjacency
//! matrices, and builds the closed-form SVD of the expected matrix
//! `Ω = E[A]`, which the tests use as an oracle for the spectral code.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::DirectedGraph;
use crate::seed;
use crate::spectral::{self, fix_signs};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed parameters: {0}")]
    Shape(String),
    #[error("invalid parameters: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("{n}x{n} dense matrix exceeds the limit of {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("{0} is reducible; the leading singular vectors need not be positive")]
    Reducible(&'static str),
    #[error("B is numerically singular")]
    Singular,
    #[error("invalid mixture: {0}")]
    Mixture(String),
    #[error("dimension mismatch: graph has {graph} nodes, parameters {params}")]
    DimensionMismatch { graph: usize, params: usize },
}

/// Default ceiling on `n` for dense `n x n` matrices.
pub const DENSE_LIMIT: usize = 5000;

/// Full generative specification of a Directed-DCBM.
#[derive(Debug, Clone, PartialEq)]
pub struct DcbmParams {
    pub k: usize,
    /// `K x K` connectivity probabilities.
    pub b: DMatrix<f64>,
    pub theta: Vec<f64>,
    pub delta: Vec<f64>,
    /// Community of each node, in `0..K`.
    pub labels: Vec<usize>,
}

impl DcbmParams {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// `θ(i) B(c_i, c_j) δ(j)`.
    pub fn edge_probability(&self, i: usize, j: usize) -> f64 {
        self.theta[i] * self.b[(self.labels[i], self.labels[j])] * self.delta[j]
    }

    fn check_shape(&self) -> Result<(), ModelError> {
        let n = self.n();
        if self.k == 0 {
            return Err(ModelError::Shape("K must be at least 1".into()));
        }
        if self.b.nrows() != self.k || self.b.ncols() != self.k {
            return Err(ModelError::Shape(format!(
                "B is {}x{}, expected {k}x{k}",
                self.b.nrows(),
                self.b.ncols(),
                k = self.k
            )));
        }
        if self.theta.len() != n || self.delta.len() != n {
            return Err(ModelError::Shape(format!(
                "theta has {} entries and delta {}, expected {n}",
                self.theta.len(),
                self.delta.len()
            )));
        }
        if let Some(i) = self.labels.iter().position(|&c| c >= self.k) {
            return Err(ModelError::Shape(format!(
                "label {} of node {i} is not below K = {}",
                self.labels[i], self.k
            )));
        }
        Ok(())
    }

    fn bound_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in 0..self.k {
            for c in 0..self.k {
                let x = self.b[(r, c)];
                if !(0.0..=1.0).contains(&x) {
                    out.push(format!("B({r},{c}) = {x} is outside [0, 1]"));
                }
            }
        }
        for (name, vec) in [("theta", &self.theta), ("delta", &self.delta)] {
            for (i, &x) in vec.iter().enumerate() {
                if !(x > 0.0 && x <= 1.0) {
                    out.push(format!("{name}({i}) = {x} is outside (0, 1]"));
                }
            }
        }
        let sizes = self.community_sizes();
        for (c, &s) in sizes.iter().enumerate() {
            if s == 0 {
                out.push(format!("community {c} is empty"));
            }
        }
        out
    }

    pub fn community_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.labels {
            sizes[c] += 1;
        }
        sizes
    }

    /// `‖x^(k)‖₂` for each community, where `x^(k)` zeroes nodes outside `k`.
    pub fn community_norms(&self, x: &[f64]) -> Vec<f64> {
        let mut sq = vec![0.0; self.k];
        for (&c, &v) in self.labels.iter().zip(x) {
            sq[c] += v * v;
        }
        sq.into_iter().map(f64::sqrt).collect()
    }
}

/// Structural properties of a `K x K` Gram matrix of `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MatrixFlags {
    pub nonsingular: bool,
    pub nonnegative: bool,
    pub irreducible: bool,
}

impl MatrixFlags {
    pub fn all(&self) -> bool {
        self.nonsingular && self.nonnegative && self.irreducible
    }
}

/// Theory quantities and assumption checks for a parameter set.
#[derive(Debug, Clone, Serialize)]
pub struct DcbmDiagnostics {
    /// `max(θ_max, δ_max) · max(‖θ‖₁, ‖δ‖₁)`.
    pub z: f64,
    /// `Z / min(δ_min² ‖θ‖², θ_min² ‖δ‖²)`.
    pub err_n: f64,
    pub theta_community_norms: Vec<f64>,
    pub delta_community_norms: Vec<f64>,
    /// `max_k ‖θ^(k)‖ / min_k ‖θ^(k)‖`.
    pub theta_norm_spread: f64,
    pub delta_norm_spread: f64,
    /// `log(n) Z / (θ_min δ_min ‖θ‖₁ ‖δ‖₁)`; should shrink as `n` grows.
    pub degree_condition: f64,
    pub bbt: MatrixFlags,
    pub btb: MatrixFlags,
}

impl DcbmDiagnostics {
    pub fn assumptions_hold(&self) -> bool {
        self.bbt.all() && self.btb.all()
    }
}

const PATTERN_EPS: f64 = 1e-12;
const SINGULAR_EPS: f64 = 1e-12;

fn gram_flags(m: &DMatrix<f64>) -> MatrixFlags {
    let k = m.nrows();
    let nonnegative = m.iter().all(|&x| x >= 0.0);
    let sv = spectral::singular_values(m);
    let nonsingular = sv[0] > 0.0 && sv[k - 1] / sv[0] > SINGULAR_EPS;
    // Strong connectivity of the nonzero pattern, from node 0 both ways.
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(a) = stack.pop() {
            for b in 0..k {
                let x = if forward { m[(a, b)] } else { m[(b, a)] };
                if !seen[b] && x.abs() > PATTERN_EPS {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        seen.iter().all(|&s| s)
    };
    let irreducible = if k == 1 {
        m[(0, 0)].abs() > PATTERN_EPS
    } else {
        reach(true) && reach(false)
    };
    MatrixFlags {
        nonsingular,
        nonnegative,
        irreducible,
    }
}

fn ratio_of_extremes(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::MIN, f64::max);
    let min = v.iter().copied().fold(f64::MAX, f64::min);
    max / min
}

/// Checks parameter bounds and computes the theory diagnostics.
pub fn validate(params: &DcbmParams) -> Result<DcbmDiagnostics, ModelError> {
    params.check_shape()?;
    let violations = params.bound_violations();
    if !violations.is_empty() {
        return Err(ModelError::Invalid(violations));
    }
    let n = params.n() as f64;
    let (theta, delta) = (&params.theta, &params.delta);
    let max = |v: &[f64]| v.iter().copied().fold(f64::MIN, f64::max);
    let min = |v: &[f64]| v.iter().copied().fold(f64::MAX, f64::min);
    let l1 = |v: &[f64]| v.iter().sum::<f64>();
    let l2sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();

    let z = max(theta).max(max(delta)) * l1(theta).max(l1(delta));
    let err_n = z / (min(delta).powi(2) * l2sq(theta)).min(min(theta).powi(2) * l2sq(delta));
    let degree_condition = n.ln() * z / (min(theta) * min(delta) * l1(theta) * l1(delta));

    let theta_community_norms = params.community_norms(theta);
    let delta_community_norms = params.community_norms(delta);
    let bbt = &params.b * params.b.transpose();
    let btb = params.b.transpose() * &params.b;
    Ok(DcbmDiagnostics {
        z,
        err_n,
        theta_norm_spread: ratio_of_extremes(&theta_community_norms),
        delta_norm_spread: ratio_of_extremes(&delta_community_norms),
        theta_community_norms,
        delta_community_norms,
        degree_condition,
        bbt: gram_flags(&bbt),
        btb: gram_flags(&btb),
    })
}

/// Draws one adjacency matrix. Pairs are visited in row-major order with one
/// uniform draw each, so the output depends only on `(params, seed, flag)`.
pub fn sample_adjacency(
    params: &DcbmParams,
    seed_value: u64,
    include_diagonal: bool,
) -> Result<DirectedGraph, ModelError> {
    params.check_shape()?;
    let violations = params.bound_violations();
    if !violations.is_empty() {
        return Err(ModelError::Invalid(violations));
    }
    let n = params.n();
    let mut rng = seed::rng(seed_value);
    let mut edges = Vec::new();
    for i in 0..n {
        let ci = params.labels[i];
        let ti = params.theta[i];
        for j in 0..n {
            if i == j && !include_diagonal {
                continue;
            }
            let p = ti * params.b[(ci, params.labels[j])] * params.delta[j];
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Ok(DirectedGraph::from_edges(n, edges).expect("sampled endpoints are in range"))
}

pub fn expected_matrix(params: &DcbmParams) -> Result<DMatrix<f64>, ModelError> {
    expected_matrix_with_limit(params, DENSE_LIMIT)
}

/// `Ω(i,j) = θ(i) B(c_i,c_j) δ(j)` as a dense matrix.
pub fn expected_matrix_with_limit(
    params: &DcbmParams,
    limit: usize,
) -> Result<DMatrix<f64>, ModelError> {
    params.check_shape()?;
    let n = params.n();
    if n > limit {
        return Err(ModelError::TooLarge { n, limit });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| params.edge_probability(i, j)))
}

/// `W = A − Ω`.
pub fn noise_matrix(a: &DirectedGraph, params: &DcbmParams) -> Result<DMatrix<f64>, ModelError> {
    if a.node_count() != params.n() {
        return Err(ModelError::DimensionMismatch {
            graph: a.node_count(),
            params: params.n(),
        });
    }
    let mut w = -expected_matrix(params)?;
    for (i, j) in a.edges() {
        w[(i, j)] += 1.0;
    }
    Ok(w)
}

/// The `6 √(log n · Z)` spectral-norm bound on `A − Ω`.
pub fn concentration_bound(params: &DcbmParams, diag: &DcbmDiagnostics) -> f64 {
    6.0 * ((params.n() as f64).ln() * diag.z).sqrt()
}

/// Closed-form compact SVD of `Ω`.
///
/// With `Ψ_θ = diag(‖θ^(k)‖ / ‖θ‖)`, `Ψ_δ = diag(‖δ^(k)‖ / ‖δ‖)` and
/// `S = Ψ_θ B Ψ_δᵀ = Y Λ_S Hᵀ`, the matrix `Ω` factors as
/// `‖θ‖‖δ‖ · N_θ S N_δᵀ` where `N_θ` has orthonormal columns
/// `θ^(k)/‖θ^(k)‖`. Hence `σ_i(Ω) = ‖θ‖‖δ‖ σ_i(S)` and row `i` of `U` is
/// `θ(i)/‖θ^(c_i)‖ · Y_{c_i}` (likewise `V` with `δ` and `H`).
#[derive(Debug, Clone)]
pub struct TheoreticalSvd {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub s: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub lambda_s: Vec<f64>,
    pub psi_theta: DMatrix<f64>,
    pub psi_delta: DMatrix<f64>,
    /// Community of each row.
    pub labels: Vec<usize>,
}

pub fn theoretical_svd(params: &DcbmParams) -> Result<TheoreticalSvd, ModelError> {
    let diag = validate(params)?;
    if !diag.bbt.irreducible {
        return Err(ModelError::Reducible("B Bᵀ"));
    }
    if !diag.btb.irreducible {
        return Err(ModelError::Reducible("Bᵀ B"));
    }
    if !diag.bbt.nonsingular {
        return Err(ModelError::Singular);
    }
    let k = params.k;
    let theta_norm = params.theta.iter().map(|x| x * x).sum::<f64>().sqrt();
    let delta_norm = params.delta.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tn = &diag.theta_community_norms;
    let dn = &diag.delta_community_norms;
    let psi_theta = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        k,
        tn.iter().map(|x| x / theta_norm),
    ));
    let psi_delta = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        k,
        dn.iter().map(|x| x / delta_norm),
    ));
    let s = &psi_theta * &params.b * psi_delta.transpose();

    let (mut y, lambda_s, mut h) =
        spectral::dense_svd_sorted(&s).map_err(|_| ModelError::Singular)?;

    let build = |coef: &[f64], norms: &[f64], factor: &DMatrix<f64>| {
        DMatrix::from_fn(params.n(), k, |i, c| {
            let ci = params.labels[i];
            coef[i] / norms[ci] * factor[(ci, c)]
        })
    };
    let mut u = build(&params.theta, tn, &y);
    let mut v = build(&params.delta, dn, &h);
    // Flip (U, V) and (Y, H) together so both stay consistent.
    let (u0, v0) = (u.clone(), v.clone());
    fix_signs(&mut u, &mut v);
    for c in 0..k {
        if u.column(c) != u0.column(c) || v.column(c) != v0.column(c) {
            y.column_mut(c).neg_mut();
            h.column_mut(c).neg_mut();
        }
    }
    let sigma = lambda_s.iter().map(|l| theta_norm * delta_norm * l).collect();
    Ok(TheoreticalSvd {
        u,
        v,
        sigma,
        s,
        y,
        h,
        lambda_s,
        psi_theta,
        psi_delta,
        labels: params.labels.clone(),
    })
}

/// Draws `n` values i.i.d. from a discrete distribution given as
/// `(value, mass)` atoms. Masses are normalized to sum to one and atoms with
/// equal values are merged.
pub fn sample_theta_mixture(
    spec: &[(f64, f64)],
    n: usize,
    seed_value: u64,
) -> Result<Vec<f64>, ModelError> {
    let atoms = normalize_mixture(spec)?;
    let mut rng = seed::rng(seed_value);
    Ok((0..n).map(|_| draw_atom(&atoms, rng.random::<f64>())).collect())
}

/// Merged atoms with normalized masses, in first-appearance order.
pub fn normalize_mixture(spec: &[(f64, f64)]) -> Result<Vec<(f64, f64)>, ModelError> {
    if spec.is_empty() {
        return Err(ModelError::Mixture("no atoms given".into()));
    }
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for &(value, mass) in spec {
        if !(value > 0.0 && value <= 1.0) {
            return Err(ModelError::Mixture(format!("value {value} is outside (0, 1]")));
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(ModelError::Mixture(format!("mass {mass} must be positive")));
        }
        match atoms.iter_mut().find(|(v, _)| *v == value) {
            Some(atom) => atom.1 += mass,
            None => atoms.push((value, mass)),
        }
    }
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    for atom in &mut atoms {
        atom.1 /= total;
    }
    Ok(atoms)
}

fn draw_atom(atoms: &[(f64, f64)], u: f64) -> f64 {
    let mut acc = 0.0;
    for &(value, mass) in atoms {
        acc += mass;
        if u < acc {
            return value;
        }
    }
    atoms[atoms.len() - 1].0
}

/// Draws community labels i.i.d. with the given proportions.
pub fn sample_labels(proportions: &[f64], n: usize, seed_value: u64) -> Result<Vec<usize>, ModelError> {
    let spec: Vec<(f64, f64)> = proportions
        .iter()
        .enumerate()
        .map(|(c, &p)| ((c + 1) as f64 / proportions.len() as f64, p))
        .collect();
    let atoms = normalize_mixture(&spec)?;
    let mut rng = seed::rng(seed_value);
    Ok((0..n)
        .map(|_| {
            let u = rng.random::<f64>();
            let mut acc = 0.0;
            for (c, &(_, mass)) in atoms.iter().enumerate() {
                acc += mass;
                if u < acc {
                    return c;
                }
            }
            atoms.len() - 1
        })
        .collect())
}

/// How a heterogeneity vector is specified in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeterogeneitySpec {
    /// `(value, mass)` atoms.
    Mixture(Vec<(f64, f64)>),
    Values(Vec<f64>),
    SameAsTheta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpec {
    Proportions(Vec<f64>),
    Values(Vec<usize>),
}

/// Serializable Directed-DCBM description.
///
/// ```toml
/// k = 2
/// n = 1000
/// b = [1.0, 0.4, 0.5, 1.0]
/// theta = { mixture = [[0.5, 0.01], [0.1, 0.01], [0.6, 0.4]] }
/// delta = { mixture = [[0.5, 0.01], [0.1, 0.01], [0.6, 0.4]] }
/// labels = { proportions = [0.5, 0.5] }
/// seed = 7
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcbmConfig {
    pub k: usize,
    /// Node count; may be omitted when explicit vectors fix it.
    #[serde(default)]
    pub n: Option<usize>,
    /// Row-major `K x K`.
    pub b: Vec<f64>,
    pub theta: HeterogeneitySpec,
    #[serde(default = "same_as_theta")]
    pub delta: HeterogeneitySpec,
    #[serde(default)]
    pub labels: Option<LabelSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Whether `i → i` pairs are sampled.
    #[serde(default = "default_true")]
    pub self_loops: bool,
}

fn same_as_theta() -> HeterogeneitySpec {
    HeterogeneitySpec::SameAsTheta
}

fn default_true() -> bool {
    true
}

impl DcbmConfig {
    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        toml::from_str(text).map_err(|e| ModelError::Shape(e.to_string()))
    }

    pub fn block_matrix(&self) -> Result<DMatrix<f64>, ModelError> {
        if self.b.len() != self.k * self.k {
            return Err(ModelError::Shape(format!(
                "b has {} entries, expected {}",
                self.b.len(),
                self.k * self.k
            )));
        }
        Ok(DMatrix::from_row_slice(self.k, self.k, &self.b))
    }

    fn resolve_n(&self, n_override: Option<usize>) -> Result<usize, ModelError> {
        let explicit = match (&self.theta, &self.labels) {
            (HeterogeneitySpec::Values(v), _) => Some(v.len()),
            (_, Some(LabelSpec::Values(v))) => Some(v.len()),
            _ => None,
        };
        n_override
            .or(self.n)
            .or(explicit)
            .ok_or_else(|| ModelError::Shape("node count is not specified".into()))
    }

    /// Draws θ, δ and labels. Each gets its own stream derived from `seed_value`.
    pub fn realize(&self, n_override: Option<usize>, seed_value: u64) -> Result<DcbmParams, ModelError> {
        let n = self.resolve_n(n_override)?;
        let draw = |spec: &HeterogeneitySpec, stream: u64| -> Result<Vec<f64>, ModelError> {
            match spec {
                HeterogeneitySpec::Mixture(atoms) => {
                    sample_theta_mixture(atoms, n, seed::derive_seed(seed_value, stream))
                }
                HeterogeneitySpec::Values(v) if v.len() == n => Ok(v.clone()),
                HeterogeneitySpec::Values(v) => Err(ModelError::Shape(format!(
                    "explicit vector has {} entries, expected {n}",
                    v.len()
                ))),
                HeterogeneitySpec::SameAsTheta => {
                    Err(ModelError::Shape("theta cannot be same_as_theta".into()))
                }
            }
        };
        let theta = draw(&self.theta, 1)?;
        let delta = match &self.delta {
            HeterogeneitySpec::SameAsTheta => theta.clone(),
            spec => draw(spec, 2)?,
        };
        let labels = match &self.labels {
            None => sample_labels(&vec![1.0; self.k], n, seed::derive_seed(seed_value, 3))?,
            Some(LabelSpec::Proportions(p)) if p.len() == self.k => {
                sample_labels(p, n, seed::derive_seed(seed_value, 3))?
            }
            Some(LabelSpec::Proportions(p)) => {
                return Err(ModelError::Shape(format!(
                    "{} label proportions for K = {}",
                    p.len(),
                    self.k
                )))
            }
            Some(LabelSpec::Values(v)) if v.len() == n => v.clone(),
            Some(LabelSpec::Values(v)) => {
                return Err(ModelError::Shape(format!(
                    "{} explicit labels, expected {n}",
                    v.len()
                )))
            }
        };
        let params = DcbmParams {
            k: self.k,
            b: self.block_matrix()?,
            theta,
            delta,
            labels,
        };
        params.check_shape()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{top_k_svd, SvdOptions};

    fn constant_params(n: usize, t: f64, b: f64) -> DcbmParams {
        DcbmParams {
            k: 1,
            b: DMatrix::from_element(1, 1, b),
            theta: vec![t; n],
            delta: vec![t; n],
            labels: vec![0; n],
        }
    }

    pub(crate) fn random_params(n: usize, k: usize, seed_value: u64) -> DcbmParams {
        let mut rng = seed::rng(seed_value);
        let b = DMatrix::from_fn(k, k, |r, c| {
            if r == c {
                rng.random_range(0.6..1.0)
            } else {
                rng.random_range(0.05..0.4)
            }
        });
        let theta = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let delta = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let labels = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
        DcbmParams { k, b, theta, delta, labels }
    }

    #[test]
    fn z_for_constant_params() {
        let d = validate(&constant_params(4, 0.5, 1.0)).unwrap();
        assert!((d.z - 1.0).abs() < 1e-15);
        // Z / (0.5^2 * 4 * 0.25)
        assert!((d.err_n - 4.0).abs() < 1e-12);
    }

    #[test]
    fn err_n_bounded_by_extremes_ratio() {
        // With α ≤ θ, δ ≤ β the ratio stays below β²/α⁴.
        let p = random_params(200, 3, 1);
        let d = validate(&p).unwrap();
        let lo = p.theta.iter().chain(&p.delta).copied().fold(1.0, f64::min);
        let hi = p.theta.iter().chain(&p.delta).copied().fold(0.0, f64::max);
        assert!(d.err_n <= hi * hi / lo.powi(4));
    }

    #[test]
    fn flags_for_symmetric_block_matrix() {
        let mut p = random_params(30, 2, 2);
        p.b = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let d = validate(&p).unwrap();
        assert!(d.bbt.all() && d.btb.all());
    }

    #[test]
    fn block_diagonal_is_reducible() {
        let mut p = random_params(30, 2, 3);
        p.b = DMatrix::identity(2, 2);
        let d = validate(&p).unwrap();
        assert!(!d.bbt.irreducible);
        assert!(d.bbt.nonsingular && d.bbt.nonnegative);
        assert!(matches!(theoretical_svd(&p), Err(ModelError::Reducible(_))));
    }

    #[test]
    fn validation_lists_every_violation() {
        let mut p = random_params(10, 2, 4);
        p.b[(0, 1)] = 1.5;
        p.theta[3] = 0.0;
        p.delta[2] = 1.2;
        p.labels = vec![0; 10];
        match validate(&p) {
            Err(ModelError::Invalid(v)) => assert_eq!(v.len(), 4, "{v:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shape_errors() {
        let mut p = random_params(10, 2, 4);
        p.theta.pop();
        assert!(matches!(validate(&p), Err(ModelError::Shape(_))));
        let mut p = random_params(10, 2, 4);
        p.labels[0] = 2;
        assert!(matches!(validate(&p), Err(ModelError::Shape(_))));
    }

    #[test]
    fn degenerate_probabilities() {
        let full = sample_adjacency(&constant_params(5, 1.0, 1.0), 1, true).unwrap();
        assert_eq!(full.edge_count(), 25);
        let no_loops = sample_adjacency(&constant_params(5, 1.0, 1.0), 1, false).unwrap();
        assert_eq!(no_loops.edge_count(), 20);
        assert_eq!(no_loops.self_loop_count(), 0);
        let empty = sample_adjacency(&constant_params(5, 1.0, 0.0), 1, true).unwrap();
        assert_eq!(empty.edge_count(), 0);
    }

    #[test]
    fn sampling_is_reproducible() {
        let p = random_params(60, 2, 5);
        assert_eq!(sample_adjacency(&p, 9, true).unwrap(), sample_adjacency(&p, 9, true).unwrap());
        assert_ne!(sample_adjacency(&p, 9, true).unwrap(), sample_adjacency(&p, 10, true).unwrap());
    }

    #[test]
    fn expected_matrix_matches_triple_product() {
        let p = random_params(30, 3, 6);
        let omega = expected_matrix(&p).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let direct = p.theta[i] * p.b[(p.labels[i], p.labels[j])] * p.delta[j];
                assert_eq!(omega[(i, j)], direct);
            }
        }
    }

    #[test]
    fn expected_matrix_rank_one_for_single_block() {
        let p = constant_params(6, 0.3, 0.8);
        let sv = spectral::singular_values(&expected_matrix(&p).unwrap());
        assert!(sv[1] < 1e-12 * sv[0]);
    }

    #[test]
    fn expected_matrix_has_rank_k() {
        let p = random_params(40, 3, 7);
        let sv = spectral::singular_values(&expected_matrix(&p).unwrap());
        assert!(sv[2] > 1e-10 * sv[0]);
        assert!(sv[3] < 1e-10 * sv[0]);
    }

    #[test]
    fn expected_matrix_limit() {
        let p = random_params(20, 2, 8);
        assert!(matches!(
            expected_matrix_with_limit(&p, 10),
            Err(ModelError::TooLarge { n: 20, limit: 10 })
        ));
    }

    #[test]
    fn noise_vanishes_for_certain_edges() {
        let p = constant_params(5, 1.0, 1.0);
        let a = sample_adjacency(&p, 3, true).unwrap();
        assert_eq!(noise_matrix(&a, &p).unwrap().norm(), 0.0);
    }

    #[test]
    fn noise_reconstructs_adjacency() {
        let p = random_params(30, 2, 9);
        let a = sample_adjacency(&p, 4, true).unwrap();
        let w = noise_matrix(&a, &p).unwrap();
        let omega = expected_matrix(&p).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let x = w[(i, j)] + omega[(i, j)];
                let expected = if a.has_edge(i, j) { 1.0 } else { 0.0 };
                assert!((x - expected).abs() < 1e-15);
                assert!(w[(i, j)] > -1.0 && w[(i, j)] < 1.0);
            }
        }
    }

    #[test]
    fn noise_is_centered() {
        let p = random_params(50, 2, 10);
        let mut mean = DMatrix::<f64>::zeros(50, 50);
        let reps = 1000;
        for r in 0..reps {
            let a = sample_adjacency(&p, seed::derive_seed(77, r), true).unwrap();
            mean += noise_matrix(&a, &p).unwrap();
        }
        mean /= reps as f64;
        // The global mean is an average of 2500 independent entries.
        assert!(mean.mean().abs() < 2e-3, "{}", mean.mean());
        for i in 0..50 {
            for j in 0..50 {
                let prob = p.edge_probability(i, j);
                let se = (prob * (1.0 - prob) / reps as f64).sqrt();
                assert!(mean[(i, j)].abs() < 6.0 * se, "({i},{j}) {}", mean[(i, j)]);
            }
        }
    }

    #[test]
    fn noise_dimension_mismatch() {
        let p = random_params(10, 2, 11);
        assert!(noise_matrix(&DirectedGraph::empty(9), &p).is_err());
    }

    #[test]
    fn theoretical_svd_single_block() {
        let (m, t, b) = (8, 0.4, 0.7);
        let ts = theoretical_svd(&constant_params(m, t, b)).unwrap();
        assert!((ts.sigma[0] - b * m as f64 * t * t).abs() < 1e-12);
        let c = 1.0 / (m as f64).sqrt();
        for i in 0..m {
            assert!((ts.u[(i, 0)] - c).abs() < 1e-12);
            assert!((ts.v[(i, 0)] - c).abs() < 1e-12);
        }
    }

    #[test]
    fn theoretical_svd_matches_dense_svd() {
        let p = random_params(60, 3, 12);
        let ts = theoretical_svd(&p).unwrap();
        let omega = expected_matrix(&p).unwrap();
        let dense = top_k_svd(&omega, 3, &SvdOptions::default()).unwrap();
        for c in 0..3 {
            assert!((ts.sigma[c] - dense.sigma[c]).abs() < 1e-8 * dense.sigma[c]);
        }
        let sv = spectral::singular_values(&omega);
        assert!(sv[3] < 1e-9 * sv[0]);
        let recon = &ts.u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(ts.sigma.clone()))
            * ts.v.transpose();
        assert!((recon - &omega).norm() / omega.norm() < 1e-8);
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!((ts.u.tr_mul(&ts.u) - &eye).norm() < 1e-10);
        assert!((ts.v.tr_mul(&ts.v) - &eye).norm() < 1e-10);
        assert!(ts.u.column(0).iter().all(|&x| x > 0.0));
        assert!(ts.v.column(0).iter().all(|&x| x > 0.0));
    }

    #[test]
    fn row_norm_law() {
        let p = random_params(80, 4, 13);
        let ts = theoretical_svd(&p).unwrap();
        let dn = p.community_norms(&p.delta);
        let tn = p.community_norms(&p.theta);
        for i in 0..80 {
            let c = p.labels[i];
            assert!((ts.v.row(i).norm() - p.delta[i] / dn[c]).abs() < 1e-10);
            assert!((ts.u.row(i).norm() - p.theta[i] / tn[c]).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_value_scaling_stable_across_n() {
        // λ_i(ΩᵀΩ)/(‖θ‖²‖δ‖²) = σ_i(S)², which depends on n only through
        // the community shares; it should sit in a fixed band.
        let cfg = DcbmConfig {
            k: 2,
            n: None,
            b: vec![1.0, 0.4, 0.5, 1.0],
            theta: HeterogeneitySpec::Mixture(vec![(0.5, 0.01), (0.1, 0.05), (0.6, 0.4)]),
            delta: HeterogeneitySpec::SameAsTheta,
            labels: None,
            seed: None,
            self_loops: true,
        };
        let mut scaled = Vec::new();
        for n in [100, 200, 400] {
            let p = cfg.realize(Some(n), 5).unwrap();
            let omega = expected_matrix(&p).unwrap();
            let sv = spectral::singular_values(&omega);
            let tn: f64 = p.theta.iter().map(|x| x * x).sum();
            let dn: f64 = p.delta.iter().map(|x| x * x).sum();
            scaled.push([sv[0] * sv[0] / (tn * dn), sv[1] * sv[1] / (tn * dn)]);
        }
        for c in 0..2 {
            let vals: Vec<f64> = scaled.iter().map(|s| s[c]).collect();
            let (lo, hi) = (vals.iter().copied().fold(f64::MAX, f64::min), vals.iter().copied().fold(0.0, f64::max));
            assert!(lo > 0.01 && hi < 2.0 && hi / lo < 1.5, "{vals:?}");
        }
    }

    #[test]
    fn mixture_single_atom() {
        let v = sample_theta_mixture(&[(0.6, 1.0)], 100, 1).unwrap();
        assert!(v.iter().all(|&x| x == 0.6));
    }

    #[test]
    fn mixture_merges_equal_values() {
        let atoms = normalize_mixture(&[(0.3, 0.2), (0.3, 0.5)]).unwrap();
        assert_eq!(atoms, vec![(0.3, 1.0)]);
        let v = sample_theta_mixture(&[(0.3, 0.2), (0.3, 0.5)], 50, 2).unwrap();
        assert!(v.iter().all(|&x| x == 0.3));
    }

    #[test]
    fn mixture_frequencies_follow_normalized_masses() {
        let spec = [(0.5, 0.01), (0.1, 0.05), (0.6, 0.4)];
        let n = 100_000;
        let v = sample_theta_mixture(&spec, n, 3).unwrap();
        let expected = [0.01 / 0.46, 0.05 / 0.46, 0.4 / 0.46];
        for (atom, want) in [0.5, 0.1, 0.6].iter().zip(expected) {
            let freq = v.iter().filter(|&&x| x == *atom).count() as f64 / n as f64;
            assert!((freq - want).abs() < 0.01, "{atom}: {freq} vs {want}");
        }
    }

    #[test]
    fn mixture_rejects_bad_values() {
        assert!(sample_theta_mixture(&[(1.5, 1.0)], 3, 1).is_err());
        assert!(sample_theta_mixture(&[(0.0, 1.0)], 3, 1).is_err());
        assert!(sample_theta_mixture(&[(0.5, 0.0)], 3, 1).is_err());
        assert!(sample_theta_mixture(&[], 3, 1).is_err());
    }

    #[test]
    fn edge_frequencies_match_probabilities() {
        let cfg = DcbmConfig {
            k: 2,
            n: Some(200),
            b: vec![1.0, 0.4, 0.4, 1.0],
            theta: HeterogeneitySpec::Mixture(vec![(0.5, 0.01), (0.1, 0.05), (0.6, 0.4)]),
            delta: HeterogeneitySpec::SameAsTheta,
            labels: None,
            seed: None,
            self_loops: true,
        };
        let p = cfg.realize(None, 1).unwrap();
        let reps = 500u64;
        let mut counts = vec![0u32; 200 * 200];
        for r in 0..reps {
            let a = sample_adjacency(&p, seed::derive_seed(2, r), true).unwrap();
            for (i, j) in a.edges() {
                counts[i * 200 + j] += 1;
            }
        }
        // Among 40000 pairs a few 4-sigma excursions are expected; require
        // the excursion rate to be near its nominal level and none extreme.
        let mut beyond_three = 0;
        for i in 0..200 {
            for j in 0..200 {
                let prob = p.edge_probability(i, j);
                let freq = counts[i * 200 + j] as f64 / reps as f64;
                let se = (prob * (1.0 - prob) / reps as f64).sqrt();
                let z = (freq - prob).abs() / se;
                if z > 3.0 {
                    beyond_three += 1;
                }
                assert!(z < 7.0, "({i},{j}) {freq} vs {prob}");
            }
        }
        assert!(beyond_three < 400, "{beyond_three}");
    }

    #[test]
    fn config_round_trip_from_toml() {
        let text = r#"
            k = 2
            n = 50
            b = [1.0, 0.4, 0.5, 1.0]
            theta = { mixture = [[0.5, 0.01], [0.1, 0.01], [0.6, 0.4]] }
            delta = { mixture = [[0.5, 0.01], [0.1, 0.01], [0.6, 0.4]] }
            labels = { proportions = [0.5, 0.5] }
            seed = 7
        "#;
        let cfg = DcbmConfig::from_toml(text).unwrap();
        assert_eq!(cfg.k, 2);
        assert_eq!(cfg.seed, Some(7));
        let p = cfg.realize(None, 7).unwrap();
        assert_eq!(p.n(), 50);
        assert_ne!(p.theta, p.delta);
        let again = DcbmConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(DcbmConfig::from_toml("k = 1\nb = [1.0]\ntheta = { values = [0.5] }\nbogus = 1\n").is_err());
    }
}
