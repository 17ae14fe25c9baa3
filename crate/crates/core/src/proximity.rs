//! Distances between dense document vectors and the symmetric proximity
//! matrices built from them.
//!
//! Upstream representations are sparse; the kernels here work on dense slices
//! over the reduced vocabulary, where the inner loops are short and
//! branch-free.

use std::fmt;
use std::io::{self, Read, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::represent::TermDocumentMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum ProximityError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("Minkowski order must be >= 1, got {0}")]
    InvalidOrder(f64),
    #[error("zero vector cannot be compared by cosine")]
    ZeroVector,
    #[error("documents {a} and {b}: {source}")]
    Pair {
        a: u32,
        b: u32,
        #[source]
        source: Box<ProximityError>,
    },
    #[error("unknown distance `{0}`")]
    UnknownMetric(String),
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<(), ProximityError> {
    if x.len() == y.len() {
        Ok(())
    } else {
        Err(ProximityError::DimensionMismatch(x.len(), y.len()))
    }
}

/// `(Σ |x_j − y_j|^r)^(1/r)`; `r = 1` is Manhattan, `r = 2` Euclidean.
pub fn minkowski(x: &[f64], y: &[f64], r: f64) -> Result<f64, ProximityError> {
    check_dims(x, y)?;
    if !(r >= 1.0) || !r.is_finite() {
        return Err(ProximityError::InvalidOrder(r));
    }
    if r == 1.0 {
        return Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum());
    }
    if r == 2.0 {
        return Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
    }
    // scale by the largest component so that large orders do not overflow
    let scale = x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = x.iter().zip(y).map(|(a, b)| ((a - b).abs() / scale).powf(r)).sum();
    Ok(scale * sum.powf(r.recip()))
}

pub fn euclidean(x: &[f64], y: &[f64]) -> Result<f64, ProximityError> {
    minkowski(x, y, 2.0)
}

pub fn manhattan(x: &[f64], y: &[f64]) -> Result<f64, ProximityError> {
    minkowski(x, y, 1.0)
}

/// `max_k |x_k − y_k|`, also known as the Chebyshev distance.
pub fn maximum_distance(x: &[f64], y: &[f64]) -> Result<f64, ProximityError> {
    check_dims(x, y)?;
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

pub use maximum_distance as chebyshev;

/// Root mean squared coordinate difference, `euclidean / √d`.
pub fn average_distance(x: &[f64], y: &[f64]) -> Result<f64, ProximityError> {
    check_dims(x, y)?;
    if x.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / x.len() as f64).sqrt())
}

/// `1 − x·y / (‖x‖·‖y‖)`, clamped at zero; exactly zero for equal vectors.
pub fn cosine_distance(x: &[f64], y: &[f64]) -> Result<f64, ProximityError> {
    check_dims(x, y)?;
    let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        return Err(ProximityError::ZeroVector);
    }
    if x == y {
        return Ok(0.0);
    }
    Ok((1.0 - dot / (nx.sqrt() * ny.sqrt())).max(0.0))
}

/// Covariance of the data set together with its ridge-regularized inverse.
#[derive(Debug, Clone)]
pub struct MahalanobisContext {
    pub covariance: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub ridge: f64,
}

impl MahalanobisContext {
    /// Sample covariance of `vectors` (one observation per entry) with ridge
    /// `1e-6 · trace(Σ) / d`.
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Self {
        let d = vectors.first().map_or(0, Vec::len);
        let n = vectors.len();
        let mut mean = DVector::zeros(d);
        for v in vectors {
            mean += DVector::from_column_slice(v);
        }
        if n > 0 {
            mean /= n as f64;
        }
        let mut cov = DMatrix::zeros(d, d);
        for v in vectors {
            let c = DVector::from_column_slice(v) - &mean;
            cov.ger(1.0, &c, &c, 1.0);
        }
        if n > 1 {
            cov /= (n - 1) as f64;
        }
        Self::from_covariance(cov)
    }

    pub fn from_covariance(covariance: DMatrix<f64>) -> Self {
        let d = covariance.nrows().max(1) as f64;
        let trace = covariance.trace();
        let ridge = if trace > 0.0 { 1e-6 * trace / d } else { 1e-6 };
        Self::with_ridge(covariance, ridge)
    }

    /// Inverts `Σ + ridge·I`; Cholesky first, LU as a fallback.
    pub fn with_ridge(covariance: DMatrix<f64>, ridge: f64) -> Self {
        let d = covariance.nrows();
        let regularized = &covariance + DMatrix::identity(d, d) * ridge;
        let inverse = regularized
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| regularized.try_inverse())
            .unwrap_or_else(|| DMatrix::identity(d, d));
        Self {
            covariance,
            inverse,
            ridge,
        }
    }

    pub fn dim(&self) -> usize {
        self.inverse.nrows()
    }
}

/// `√((x−y) Σ⁻¹ (x−y)ᵀ)` with the regularized inverse; tiny negative
/// quadratic forms from rounding clamp to zero.
pub fn mahalanobis(x: &[f64], y: &[f64], ctx: &MahalanobisContext) -> Result<f64, ProximityError> {
    check_dims(x, y)?;
    if x.len() != ctx.dim() {
        return Err(ProximityError::DimensionMismatch(x.len(), ctx.dim()));
    }
    let diff = DVector::from_iterator(x.len(), x.iter().zip(y).map(|(a, b)| a - b));
    let q = diff.dot(&(&ctx.inverse * &diff));
    Ok(q.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Metric {
    Cosine,
    Euclidean,
    Manhattan,
    Minkowski(f64),
    Chebyshev,
    Average,
    Mahalanobis,
}

impl Metric {
    pub fn name(&self) -> String {
        match self {
            Metric::Cosine => "cosine".into(),
            Metric::Euclidean => "euclidean".into(),
            Metric::Manhattan => "manhattan".into(),
            Metric::Minkowski(r) => format!("minkowski:{r}"),
            Metric::Chebyshev => "chebyshev".into(),
            Metric::Average => "average".into(),
            Metric::Mahalanobis => "mahalanobis".into(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Metric {
    type Err = ProximityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "cosine" => Metric::Cosine,
            "euclidean" | "euclidian" => Metric::Euclidean,
            "manhattan" | "cityblock" => Metric::Manhattan,
            "chebyshev" | "chebychev" | "tchebychev" | "maximum" | "max" => Metric::Chebyshev,
            "average" => Metric::Average,
            "mahalanobis" => Metric::Mahalanobis,
            other => {
                let r = other
                    .strip_prefix("minkowski")
                    .map(|r| r.trim_start_matches([':', '=']))
                    .and_then(|r| r.parse::<f64>().ok())
                    .ok_or_else(|| ProximityError::UnknownMetric(s.to_owned()))?;
                if !(r >= 1.0) || !r.is_finite() {
                    return Err(ProximityError::InvalidOrder(r));
                }
                Metric::Minkowski(r)
            }
        })
    }
}

impl TryFrom<String> for Metric {
    type Error = ProximityError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> Self {
        m.name()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProximityKind {
    Distance,
    Similarity,
}

/// Symmetric `n × n` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityMatrix {
    pub kind: ProximityKind,
    pub metric: String,
    n: usize,
    values: Vec<f64>,
}

impl ProximityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Off-diagonal upper-triangle entries in row order.
    pub fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| self.get(i, j)))
    }

    /// Builds a matrix from a full row-major value list, checking shape.
    pub fn from_values(kind: ProximityKind, metric: impl Into<String>, n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n, "expected {n}x{n} values");
        Self {
            kind,
            metric: metric.into(),
            n,
            values,
        }
    }

    const MAGIC: &'static [u8; 8] = b"CA3DPROX";

    /// Binary dump: magic, kind byte (0 distance, 1 similarity), u32 n,
    /// u32 metric-name length and bytes, then `n²` little-endian f64 values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&[match self.kind {
            ProximityKind::Distance => 0,
            ProximityKind::Similarity => 1,
        }])?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&(self.metric.len() as u32).to_le_bytes())?;
        w.write_all(self.metric.as_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> io::Result<Self> {
        let invalid = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_owned());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(invalid("bad magic"));
        }
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let kind = match kind[0] {
            0 => ProximityKind::Distance,
            1 => ProximityKind::Similarity,
            _ => return Err(invalid("bad kind byte")),
        };
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let n = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let mut name = vec![0u8; u32::from_le_bytes(word) as usize];
        r.read_exact(&mut name)?;
        let metric = String::from_utf8(name).map_err(|_| invalid("metric name is not UTF-8"))?;
        let mut values = Vec::with_capacity(n * n);
        let mut buf = [0u8; 8];
        for _ in 0..n * n {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        Ok(Self {
            kind,
            metric,
            n,
            values,
        })
    }
}

/// Evaluates `f(i, j)` once for every `i < j` in parallel over rows and
/// mirrors the result; the diagonal is exactly zero.
pub fn build_distance_matrix_with<F>(n: usize, metric: &str, f: F) -> Result<ProximityMatrix, ProximityError>
where
    F: Fn(usize, usize) -> Result<f64, ProximityError> + Sync,
{
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| f(i, j)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    let mut values = vec![0.0; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(ProximityMatrix {
        kind: ProximityKind::Distance,
        metric: metric.to_owned(),
        n,
        values,
    })
}

/// Dense pairwise distances between all columns of `matrix`.
pub fn build_proximity(matrix: &TermDocumentMatrix, metric: Metric) -> Result<ProximityMatrix, ProximityError> {
    let dim = matrix.n_terms();
    let dense: Vec<Vec<f64>> = matrix.columns.iter().map(|c| c.densify(dim)).collect();
    let ids: Vec<u32> = matrix.columns.iter().map(|c| c.doc_id).collect();
    let ctx = matches!(metric, Metric::Mahalanobis).then(|| MahalanobisContext::from_vectors(&dense));
    build_distance_matrix_with(dense.len(), &metric.name(), |i, j| {
        let (x, y) = (&dense[i], &dense[j]);
        let d = match metric {
            Metric::Cosine => cosine_distance(x, y),
            Metric::Euclidean => euclidean(x, y),
            Metric::Manhattan => manhattan(x, y),
            Metric::Minkowski(r) => minkowski(x, y, r),
            Metric::Chebyshev => maximum_distance(x, y),
            Metric::Average => average_distance(x, y),
            Metric::Mahalanobis => mahalanobis(x, y, ctx.as_ref().expect("context built")),
        };
        d.map_err(|e| ProximityError::Pair {
            a: ids[i],
            b: ids[j],
            source: Box::new(e),
        })
    })
}

/// `s_ij = 1 − d_ij / d_max` over the largest off-diagonal distance; all ones
/// when every distance is zero. The diagonal is exactly one.
pub fn to_similarity(m: &ProximityMatrix) -> ProximityMatrix {
    let n = m.n;
    let d_max = m.off_diagonal().fold(0.0, f64::max);
    let mut values = vec![1.0; n * n];
    if d_max > 0.0 {
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    values[i * n + j] = 1.0 - m.get(i, j) / d_max;
                }
            }
        }
    }
    ProximityMatrix {
        kind: ProximityKind::Similarity,
        metric: m.metric.clone(),
        n,
        values,
    }
}
