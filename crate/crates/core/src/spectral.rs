//! Leading singular triples of (possibly regularized) adjacency matrices.
//!
//! Small matrices go through a dense one-sided Jacobi SVD. Larger ones use block
//! subspace iteration on `Aᵀ A` with a Rayleigh–Ritz step each sweep; the
//! loop stops once every requested triple satisfies
//! `‖Aᵀ u_k − σ_k v_k‖ ≤ tol · σ_1` (the companion residual
//! `‖A v_k − σ_k u_k‖` is zero by construction of the Ritz vectors).

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::graph::{degrees, DirectedGraph, NodeId};
use crate::seed;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("requested {k} singular triples of a {rows}x{cols} matrix")]
    InvalidRank { k: usize, rows: usize, cols: usize },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("subspace iteration did not converge after {iterations} sweeps (residuals {residuals:?})")]
    NotConverged {
        iterations: usize,
        residuals: Vec<f64>,
    },
    #[error("dense SVD failed to converge")]
    DenseFailure,
    #[error("regularizer must be non-negative and finite, got {0}")]
    InvalidTau(f64),
    #[error("tau = 0 and node {node} has zero {direction}-degree")]
    ZeroDegree { node: NodeId, direction: &'static str },
}

/// Anything that can multiply a block of column vectors from either side.
pub trait LinearOperator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `M x`
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
    /// `Mᵀ x`
    fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
    fn to_dense(&self) -> DMatrix<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }
    fn ncols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self * x
    }
    fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.tr_mul(x)
    }
    fn to_dense(&self) -> DMatrix<f64> {
        self.clone()
    }
}

/// Real matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// 0/1 adjacency matrix of `g`.
    pub fn adjacency(g: &DirectedGraph) -> Self {
        Self::weighted(g, |_, _| 1.0)
    }

    fn weighted(g: &DirectedGraph, weight: impl Fn(NodeId, NodeId) -> f64) -> Self {
        let n = g.node_count();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(g.edge_count());
        let mut vals = Vec::with_capacity(g.edge_count());
        offsets.push(0);
        for i in 0..n {
            for &j in g.out_neighbors(i) {
                cols.push(j);
                vals.push(weight(i, j));
            }
            offsets.push(cols.len());
        }
        SparseMatrix {
            nrows: n,
            ncols: n,
            offsets,
            cols,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.cols[self.offsets[i]..self.offsets[i + 1]];
        match row.binary_search(&j) {
            Ok(p) => self.vals[self.offsets[i] + p],
            Err(_) => 0.0,
        }
    }

    /// Stored entries as `(row, col, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            (self.offsets[i]..self.offsets[i + 1]).map(move |p| (i, self.cols[p], self.vals[p]))
        })
    }
}

fn to_row_major(x: &DMatrix<f64>) -> Vec<f64> {
    x.transpose().as_slice().to_vec()
}

impl LinearOperator for SparseMatrix {
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let p = x.ncols();
        let xr = to_row_major(x);
        let mut yr = vec![0.0; self.nrows * p];
        for i in 0..self.nrows {
            let out = &mut yr[i * p..(i + 1) * p];
            for idx in self.offsets[i]..self.offsets[i + 1] {
                let (j, a) = (self.cols[idx], self.vals[idx]);
                for (o, &xv) in out.iter_mut().zip(&xr[j * p..(j + 1) * p]) {
                    *o += a * xv;
                }
            }
        }
        DMatrix::from_row_slice(self.nrows, p, &yr)
    }

    fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let p = x.ncols();
        let xr = to_row_major(x);
        let mut yr = vec![0.0; self.ncols * p];
        for i in 0..self.nrows {
            let xi = &xr[i * p..(i + 1) * p];
            for idx in self.offsets[i]..self.offsets[i + 1] {
                let (j, a) = (self.cols[idx], self.vals[idx]);
                for (o, &xv) in yr[j * p..(j + 1) * p].iter_mut().zip(xi) {
                    *o += a * xv;
                }
            }
        }
        DMatrix::from_row_slice(self.ncols, p, &yr)
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, a) in self.entries() {
            d[(i, j)] = a;
        }
        d
    }
}

/// Leading left/right singular vectors and singular values.
#[derive(Debug, Clone)]
pub struct SingularTriple {
    /// `n x K` left singular vectors.
    pub u: DMatrix<f64>,
    /// `n x K` right singular vectors.
    pub v: DMatrix<f64>,
    /// Descending.
    pub sigma: Vec<f64>,
    /// `σ_K` and `σ_{K+1}` are numerically equal; the returned basis is one of many.
    pub degenerate_gap: bool,
    /// Fewer than `K` singular values are numerically nonzero.
    pub rank_deficient: bool,
    /// Subspace sweeps used (0 for the dense path).
    pub iterations: usize,
}

impl SingularTriple {
    pub fn k(&self) -> usize {
        self.sigma.len()
    }

    /// Keeps only the given rows of `u` and `v`.
    pub fn select_rows(&self, rows: &[usize]) -> SingularTriple {
        SingularTriple {
            u: self.u.select_rows(rows),
            v: self.v.select_rows(rows),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Extra block columns beyond `K`; `None` means `K + 4`.
    pub oversampling: Option<usize>,
    /// Matrices with both dimensions at most this size use the dense SVD.
    pub dense_limit: usize,
    pub seed: u64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        SvdOptions {
            tol: 1e-10,
            max_iter: 300,
            oversampling: None,
            dense_limit: 300,
            seed: 0,
        }
    }
}

const GAP_EPS: f64 = 1e-8;
const ZERO_EPS: f64 = 1e-12;

/// Flips singular pairs so column 0 of `u` sums to a non-negative value and
/// every other column of `u` has a positive largest-magnitude entry.
pub(crate) fn fix_signs(u: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    for c in 0..u.ncols() {
        let sum: f64 = u.column(c).sum();
        let flip = if c == 0 && sum.abs() > 1e-12 {
            sum < 0.0
        } else {
            let mut best = 0.0f64;
            for &x in u.column(c).iter() {
                if x.abs() > best.abs() {
                    best = x;
                }
            }
            best < 0.0
        };
        if flip {
            u.column_mut(c).neg_mut();
            v.column_mut(c).neg_mut();
        }
    }
}

/// `(U, σ, V)`.
pub(crate) type DenseSvd = (DMatrix<f64>, Vec<f64>, DMatrix<f64>);

/// Thin SVD by one-sided Jacobi rotations, singular values descending.
///
/// Works on the taller orientation so `u` is `rows x r` and `v` is
/// `cols x r` with `r = min(rows, cols)`. Left vectors for zero singular
/// values are completed to an orthonormal set.
pub(crate) fn dense_svd_sorted(m: &DMatrix<f64>) -> Result<DenseSvd, SpectralError> {
    if m.nrows() < m.ncols() {
        let (u, s, v) = dense_svd_sorted(&m.transpose())?;
        return Ok((v, s, u));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(SpectralError::DenseFailure);
    }
    let (rows, cols) = m.shape();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(cols, cols);
    let floor = (f64::EPSILON * m.norm()).powi(2);
    let mut converged = false;
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (ap, aq) = (a.column(p), a.column(q));
                let alpha = ap.norm_squared();
                let beta = aq.norm_squared();
                let gamma = ap.dot(&aq);
                if alpha.min(beta) <= floor || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut a, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SpectralError::DenseFailure);
    }
    let norms: Vec<f64> = (0..cols).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let cutoff = sigma[0] * rows as f64 * f64::EPSILON;
    let mut u = DMatrix::<f64>::zeros(rows, cols);
    let mut filled = 0;
    for (slot, &j) in order.iter().enumerate() {
        if sigma[slot] > cutoff && sigma[slot] > 0.0 {
            u.set_column(slot, &(a.column(j) / sigma[slot]));
            filled += 1;
        }
    }
    complete_basis(&mut u, filled);
    let sigma = sigma
        .into_iter()
        .enumerate()
        .map(|(slot, x)| if slot < filled { x } else { 0.0 })
        .collect();
    Ok((u, sigma, v.select_columns(&order)))
}

const JACOBI_SWEEPS: usize = 60;

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}

/// Fills columns `filled..` of `u` with unit vectors orthogonal to the rest.
fn complete_basis(u: &mut DMatrix<f64>, filled: usize) {
    let rows = u.nrows();
    let mut next = filled;
    for e in 0..rows {
        if next == u.ncols() {
            break;
        }
        let mut x = nalgebra::DVector::<f64>::zeros(rows);
        x[e] = 1.0;
        // Two passes of Gram-Schmidt for stability.
        for _ in 0..2 {
            for j in 0..next {
                let proj = u.column(j).dot(&x);
                x.axpy(-proj, &u.column(j), 1.0);
            }
        }
        let norm = x.norm();
        if norm > 1e-8 {
            u.set_column(next, &(x / norm));
            next += 1;
        }
    }
}

/// All singular values of a dense matrix, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    dense_svd_sorted(m).map(|(_, s, _)| s).expect("finite input")
}

/// Spectral norm of a dense matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

fn orthonormalize(x: DMatrix<f64>) -> DMatrix<f64> {
    x.qr().q()
}

/// Computes the `k` leading singular triples of `m`.
pub fn top_k_svd<M: LinearOperator + ?Sized>(
    m: &M,
    k: usize,
    opts: &SvdOptions,
) -> Result<SingularTriple, SpectralError> {
    let (rows, cols) = (m.nrows(), m.ncols());
    if k == 0 || k > rows.min(cols) {
        return Err(SpectralError::InvalidRank { k, rows, cols });
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(SpectralError::InvalidTolerance(opts.tol));
    }
    let width = (k + opts.oversampling.unwrap_or(k + 4)).min(rows.min(cols));
    if rows.max(cols) <= opts.dense_limit || width == rows.min(cols) {
        return dense_path(m, k);
    }
    subspace_path(m, k, width, opts)
}

fn dense_path<M: LinearOperator + ?Sized>(m: &M, k: usize) -> Result<SingularTriple, SpectralError> {
    let (u, sigma, v) = dense_svd_sorted(&m.to_dense())?;
    finish(u, sigma, v, k, 0)
}

fn finish(
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    v: DMatrix<f64>,
    k: usize,
    iterations: usize,
) -> Result<SingularTriple, SpectralError> {
    let s1 = sigma[0];
    let degenerate_gap = sigma.len() > k && (sigma[k - 1] - sigma[k]) <= GAP_EPS * s1.max(f64::MIN_POSITIVE);
    let rank_deficient = sigma[..k].iter().any(|&s| s <= ZERO_EPS * s1) || s1 == 0.0;
    let mut u = u.columns(0, k).into_owned();
    let mut v = v.columns(0, k).into_owned();
    fix_signs(&mut u, &mut v);
    Ok(SingularTriple {
        u,
        v,
        sigma: sigma[..k].to_vec(),
        degenerate_gap,
        rank_deficient,
        iterations,
    })
}

fn subspace_path<M: LinearOperator + ?Sized>(
    m: &M,
    k: usize,
    width: usize,
    opts: &SvdOptions,
) -> Result<SingularTriple, SpectralError> {
    let mut rng = seed::rng(opts.seed);
    let start = DMatrix::from_fn(m.ncols(), width, |_, _| rng.random_range(-1.0..1.0));
    let mut q = orthonormalize(start);
    let mut residuals = vec![f64::INFINITY; k];
    for sweep in 1..=opts.max_iter {
        let b = m.apply(&q);
        let (ub, sigma, wb) = dense_svd_sorted(&b)?;
        let u = ub.columns(0, width).into_owned();
        let v = &q * wb;
        let atu = m.apply_transpose(&u);
        let s1 = sigma[0];
        for c in 0..k {
            residuals[c] = if sigma[c] <= ZERO_EPS * s1 {
                0.0
            } else {
                (atu.column(c) - v.column(c) * sigma[c]).norm()
            };
        }
        if residuals.iter().all(|&r| r <= opts.tol * s1) {
            return finish(u, sigma, v, k, sweep);
        }
        q = orthonormalize(atu);
    }
    Err(SpectralError::NotConverged {
        iterations: opts.max_iter,
        residuals,
    })
}

/// Regularizer for the graph Laplacian; `None` uses the average degree.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LaplacianConfig {
    pub tau: Option<f64>,
}

/// `L(i,j) = A(i,j) / sqrt((τ + d_out(i)) (τ + d_in(j)))`.
pub fn regularized_laplacian(
    g: &DirectedGraph,
    cfg: &LaplacianConfig,
) -> Result<SparseMatrix, SpectralError> {
    let n = g.node_count();
    let tau = match cfg.tau {
        Some(t) => t,
        None if n == 0 => 0.0,
        None => g.edge_count() as f64 / n as f64,
    };
    if !tau.is_finite() || tau < 0.0 {
        return Err(SpectralError::InvalidTau(tau));
    }
    let (out, inn) = degrees(g);
    if tau == 0.0 {
        for i in 0..n {
            if out[i] == 0 {
                return Err(SpectralError::ZeroDegree { node: i, direction: "out" });
            }
            if inn[i] == 0 {
                return Err(SpectralError::ZeroDegree { node: i, direction: "in" });
            }
        }
    }
    let row_scale: Vec<f64> = out.iter().map(|&d| 1.0 / (tau + d as f64).sqrt()).collect();
    let col_scale: Vec<f64> = inn.iter().map(|&d| 1.0 / (tau + d as f64).sqrt()).collect();
    Ok(SparseMatrix::weighted(g, |i, j| row_scale[i] * col_scale[j]))
}
