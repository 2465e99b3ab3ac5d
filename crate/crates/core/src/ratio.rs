//! Entry-wise ratio transforms of singular vectors.
//!
//! Dividing each row of `Û` by a per-row scale cancels the node's degree
//! heterogeneity `θ(i)`, leaving a point that depends on the community only.
//! D-SCORE divides by the leading column; the `q` variant divides by the
//! row's `ℓ_q` norm and keeps all `K` columns.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::model::TheoreticalSvd;
use crate::spectral::SingularTriple;

#[derive(Debug, Error)]
pub enum RatioError {
    #[error("the D-SCORE ratio needs K >= 2, got {0}")]
    RankTooSmall(usize),
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("q must be at least 1")]
    InvalidQ,
    #[error("row selection refers to row {row} of {rows}")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("cannot build a ratio matrix from zero rows")]
    NoRows,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioConfig {
    /// Clamp bound; `None` means `ln(rows)`.
    pub threshold: Option<f64>,
    /// Norm used by the `q` variant.
    pub q: u32,
}

impl Default for RatioConfig {
    fn default() -> Self {
        RatioConfig {
            threshold: None,
            q: 2,
        }
    }
}

impl RatioConfig {
    fn resolve_threshold(&self, rows: usize) -> Result<f64, RatioError> {
        match self.threshold {
            Some(t) if t > 0.0 => Ok(t),
            Some(t) => Err(RatioError::InvalidThreshold(t)),
            None => Ok((rows as f64).ln().max(f64::MIN_POSITIVE)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioKind {
    /// `[R_U, R_V]`, `2K - 2` columns.
    Leading,
    /// Row-normalized `[U, V]`, `2K` columns.
    RowNorm { q: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioMatrix {
    pub data: DMatrix<f64>,
    pub kind: RatioKind,
    /// Bound actually applied.
    pub threshold: f64,
    /// Number of entries that hit the bound.
    pub clamped: usize,
}

/// `x / d` clamped to `[-t, t]`. A zero denominator maps `0/0` to 0 and any
/// other numerator to the bound with its sign.
fn clamped_ratio(x: f64, d: f64, t: f64, clamped: &mut usize) -> f64 {
    let r = if d == 0.0 {
        if x == 0.0 {
            return 0.0;
        }
        t.copysign(x)
    } else {
        x / d
    };
    if r.abs() >= t {
        *clamped += 1;
        t.copysign(r)
    } else {
        r
    }
}

fn selected(m: &DMatrix<f64>, rows: Option<&[usize]>) -> Result<DMatrix<f64>, RatioError> {
    match rows {
        None => Ok(m.clone()),
        Some(idx) => {
            if let Some(&row) = idx.iter().find(|&&r| r >= m.nrows()) {
                return Err(RatioError::RowOutOfRange {
                    row,
                    rows: m.nrows(),
                });
            }
            Ok(m.select_rows(idx))
        }
    }
}

fn leading_ratio(m: &DMatrix<f64>, t: f64, clamped: &mut usize) -> DMatrix<f64> {
    let k = m.ncols();
    DMatrix::from_fn(m.nrows(), k - 1, |i, c| {
        clamped_ratio(m[(i, c + 1)], m[(i, 0)], t, clamped)
    })
}

fn row_norm_ratio(m: &DMatrix<f64>, q: u32, t: f64, clamped: &mut usize) -> DMatrix<f64> {
    let norms: Vec<f64> = m
        .row_iter()
        .map(|row| row.iter().map(|x| x.abs().powi(q as i32)).sum::<f64>().powf(1.0 / q as f64))
        .collect();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, c| {
        clamped_ratio(m[(i, c)], norms[i], t, clamped)
    })
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn leading_pair(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    rows: Option<&[usize]>,
    cfg: &RatioConfig,
) -> Result<RatioMatrix, RatioError> {
    let k = u.ncols();
    if k < 2 {
        return Err(RatioError::RankTooSmall(k));
    }
    let (u, v) = (selected(u, rows)?, selected(v, rows)?);
    if u.nrows() == 0 {
        return Err(RatioError::NoRows);
    }
    let t = cfg.resolve_threshold(u.nrows())?;
    let mut clamped = 0;
    let ru = leading_ratio(&u, t, &mut clamped);
    let rv = leading_ratio(&v, t, &mut clamped);
    Ok(RatioMatrix {
        data: hstack(&ru, &rv),
        kind: RatioKind::Leading,
        threshold: t,
        clamped,
    })
}

fn row_norm_pair(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    rows: Option<&[usize]>,
    cfg: &RatioConfig,
) -> Result<RatioMatrix, RatioError> {
    if cfg.q == 0 {
        return Err(RatioError::InvalidQ);
    }
    let (u, v) = (selected(u, rows)?, selected(v, rows)?);
    if u.nrows() == 0 {
        return Err(RatioError::NoRows);
    }
    let t = cfg.resolve_threshold(u.nrows())?;
    let mut clamped = 0;
    let ru = row_norm_ratio(&u, cfg.q, t, &mut clamped);
    let rv = row_norm_ratio(&v, cfg.q, t, &mut clamped);
    Ok(RatioMatrix {
        data: hstack(&ru, &rv),
        kind: RatioKind::RowNorm { q: cfg.q },
        threshold: t,
        clamped,
    })
}

/// D-SCORE features `[Û_{k+1}/Û_1, V̂_{k+1}/V̂_1]`, optionally restricted to
/// `rows`. The clamp bound defaults to the log of the number of rows used.
pub fn dscore_ratio(
    svd: &SingularTriple,
    rows: Option<&[usize]>,
    cfg: &RatioConfig,
) -> Result<RatioMatrix, RatioError> {
    leading_pair(&svd.u, &svd.v, rows, cfg)
}

/// D-SCORE_q features: each row of `Û` and `V̂` divided by its `ℓ_q` norm.
pub fn dscoreq_ratio(
    svd: &SingularTriple,
    rows: Option<&[usize]>,
    cfg: &RatioConfig,
) -> Result<RatioMatrix, RatioError> {
    row_norm_pair(&svd.u, &svd.v, rows, cfg)
}

/// The population counterpart of [`dscore_ratio`]; rows within a community
/// coincide exactly.
pub fn oracle_dscore_ratio(ts: &TheoreticalSvd, cfg: &RatioConfig) -> Result<RatioMatrix, RatioError> {
    leading_pair(&ts.u, &ts.v, None, cfg)
}

pub fn oracle_dscoreq_ratio(ts: &TheoreticalSvd, cfg: &RatioConfig) -> Result<RatioMatrix, RatioError> {
    row_norm_pair(&ts.u, &ts.v, None, cfg)
}
