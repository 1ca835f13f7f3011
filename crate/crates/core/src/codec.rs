//! Per-component bin coding of unit directions.
//!
//! Each of the `J = D` components of a direction is classified into one of `K`
//! uniform bins over `[-1, 1]`. Decoding takes the softmax expectation of the
//! bin centers per component and renormalizes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UnitVector;

/// Logit assigned to non-target bins of a one-hot distribution; relative to a
/// target logit of 0 this leaves `e^-50` of mass off the target.
pub const ONE_HOT_OFF_LOGIT: f64 = -50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct BinScheme {
    k: usize,
}

impl TryFrom<usize> for BinScheme {
    type Error = Error;
    fn try_from(k: usize) -> Result<Self> {
        BinScheme::new(k)
    }
}

impl From<BinScheme> for usize {
    fn from(s: BinScheme) -> usize {
        s.k
    }
}

impl Default for BinScheme {
    fn default() -> Self {
        BinScheme { k: 5 }
    }
}

impl BinScheme {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("bin count K must be positive".into()));
        }
        Ok(BinScheme { k })
    }

    pub fn bins(&self) -> usize {
        self.k
    }

    /// Edge `e` of `0..=K`, from -1 to 1.
    pub fn edge(&self, e: usize) -> f64 {
        -1.0 + 2.0 * e as f64 / self.k as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.k).map(|e| self.edge(e)).collect()
    }

    /// Center of zero-based bin `b`: `-1 + (2b + 1) / K`.
    pub fn center(&self, b: usize) -> f64 {
        -1.0 + (2 * b + 1) as f64 / self.k as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.k).map(|b| self.center(b)).collect()
    }

    /// Zero-based bin holding `v`: `[edge_b, edge_{b+1})`, last bin closed.
    /// Values outside `[-1, 1]` fall into the end bins.
    pub fn bin_of(&self, v: f64) -> usize {
        let b = ((v + 1.0) * self.k as f64 / 2.0).floor();
        if b.is_nan() || b < 0.0 {
            0
        } else {
            (b as usize).min(self.k - 1)
        }
    }
}

/// `J × K` logits, one row per component.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionDistribution {
    k: usize,
    logits: Vec<f64>,
}

impl DirectionDistribution {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.first().map_or(0, |r| r.len());
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch(
                "direction rows must be non-empty and of equal length".into(),
            ));
        }
        let logits: Vec<f64> = rows.into_iter().flatten().collect();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite logit".into()));
        }
        Ok(DirectionDistribution { k, logits })
    }

    pub fn from_flat(j: usize, k: usize, logits: Vec<f64>) -> Result<Self> {
        if j == 0 || k == 0 || logits.len() != j * k {
            return Err(Error::ShapeMismatch(format!(
                "{} logits for {j}×{k} distribution",
                logits.len()
            )));
        }
        Ok(DirectionDistribution { k, logits })
    }

    pub fn components(&self) -> usize {
        self.logits.len() / self.k
    }

    pub fn bins(&self) -> usize {
        self.k
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.logits[j * self.k..(j + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.logits.chunks(self.k)
    }

    pub fn flat(&self) -> &[f64] {
        &self.logits
    }

    /// One-hot distribution in logit form.
    pub fn one_hot(targets: &[usize], k: usize) -> Self {
        let mut logits = vec![ONE_HOT_OFF_LOGIT; targets.len() * k];
        for (j, &b) in targets.iter().enumerate() {
            logits[j * k + b] = 0.0;
        }
        DirectionDistribution { k, logits }
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Target bin per component.
pub fn encode_bins<const D: usize>(xi: &UnitVector<D>, scheme: &BinScheme) -> [usize; D] {
    xi.components().map(|c| scheme.bin_of(c))
}

/// One-hot rows (as probabilities) for each component of `xi`.
pub fn encode<const D: usize>(xi: &UnitVector<D>, scheme: &BinScheme) -> Vec<Vec<f64>> {
    encode_bins(xi, scheme)
        .iter()
        .map(|&b| {
            let mut row = vec![0.0; scheme.bins()];
            row[b] = 1.0;
            row
        })
        .collect()
}

/// [`encode`] as a logit distribution suitable for [`decode`].
pub fn encode_logits<const D: usize>(
    xi: &UnitVector<D>,
    scheme: &BinScheme,
) -> DirectionDistribution {
    DirectionDistribution::one_hot(&encode_bins(xi, scheme), scheme.bins())
}

/// Per-component softmax expectation of the bin centers, before
/// normalization.
pub fn decode_raw<const D: usize>(
    dist: &DirectionDistribution,
    scheme: &BinScheme,
) -> Result<[f64; D]> {
    if dist.components() != D || dist.bins() != scheme.bins() {
        return Err(Error::ShapeMismatch(format!(
            "{}×{} distribution for D = {D}, K = {}",
            dist.components(),
            dist.bins(),
            scheme.bins()
        )));
    }
    let centers = scheme.centers();
    Ok(std::array::from_fn(|j| {
        softmax(dist.row(j))
            .iter()
            .zip(centers.iter())
            .map(|(p, a)| p * a)
            .sum()
    }))
}

/// Decodes to a unit vector; fails when the raw expectation has norm below
/// 1e-6.
pub fn decode<const D: usize>(
    dist: &DirectionDistribution,
    scheme: &BinScheme,
) -> Result<UnitVector<D>> {
    let raw = decode_raw::<D>(dist, scheme)?;
    let norm = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !(norm >= 1e-6) {
        return Err(Error::DegenerateDirection { norm });
    }
    UnitVector::new(raw)
}

/// Flips `xi_hat` to point into the half-space of `reference`; a zero dot
/// product keeps `xi_hat`.
pub fn resolve_sign<const D: usize>(
    xi_hat: &UnitVector<D>,
    reference: &UnitVector<D>,
) -> UnitVector<D> {
    if xi_hat.dot(reference) >= 0.0 {
        *xi_hat
    } else {
        -*xi_hat
    }
}
