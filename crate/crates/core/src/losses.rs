//! Reference loss functions for geometry (direction, radius) and image
//! (centerline, boundary) predictions. Used to validate providers and any
//! externally produced prediction grids; nothing here is differentiated.

use serde::{Deserialize, Serialize};

use crate::codec::{decode_raw, encode, BinScheme, DirectionDistribution};
use crate::error::{Error, Result};
use crate::geometry::UnitVector;
use crate::grid::Grid;

/// Probability clamp used inside every logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_r: f64,
    pub lambda_c: f64,
    pub lambda_b: f64,
    pub w_c: f64,
    pub w_b: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_d: 1.0,
            lambda_r: 100.0,
            lambda_c: 1.0,
            lambda_b: 1.0,
            w_c: 0.9,
            w_b: 0.9,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_d", self.lambda_d),
            ("lambda_r", self.lambda_r),
            ("lambda_c", self.lambda_c),
            ("lambda_b", self.lambda_b),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        for (name, v) in [("w_c", self.w_c), ("w_b", self.w_b)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} = {v} not in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// `-[w y ln p + (1 - w)(1 - y) ln(1 - p)]` with `p` clamped to
/// `[eps, 1 - eps]`.
pub fn weighted_bce_value(p: f64, y: f64, w: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(w * y * p.ln() + (1.0 - w) * (1.0 - y) * (1.0 - p).ln())
}

/// Mean weighted binary cross entropy over all voxels.
pub fn weighted_bce<const D: usize>(pred: &Grid<D>, label: &Grid<D>, w: f64) -> Result<f64> {
    if pred.dims() != label.dims() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs label {:?}",
            pred.dims(),
            label.dims()
        )));
    }
    if !(w > 0.0 && w < 1.0) {
        return Err(Error::InvalidValue(format!("BCE weight {w} not in (0, 1)")));
    }
    let sum: f64 = pred
        .values()
        .iter()
        .zip(label.values())
        .map(|(&p, &y)| weighted_bce_value(p, y, w))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Mean over components of the cross entropy between `softmax(logits_j)` and
/// target row `j`.
pub fn class_loss(pred: &DirectionDistribution, target: &[Vec<f64>]) -> Result<f64> {
    if target.len() != pred.components() || target.iter().any(|r| r.len() != pred.bins()) {
        return Err(Error::ShapeMismatch(format!(
            "{}×{} prediction vs {} target rows",
            pred.components(),
            pred.bins(),
            target.len()
        )));
    }
    let floor = PROB_EPS.ln();
    let total: f64 = pred
        .rows()
        .zip(target)
        .map(|(logits, t)| {
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            -logits
                .iter()
                .zip(t)
                .map(|(l, tk)| tk * (l - lse).max(floor))
                .sum::<f64>()
        })
        .sum();
    Ok(total / pred.components() as f64)
}

/// `1 - |cos|` between two non-zero vectors.
pub fn sim_loss(xi: &[f64], xi_hat: &[f64]) -> Result<f64> {
    if xi.len() != xi_hat.len() {
        return Err(Error::ShapeMismatch("vector lengths differ".into()));
    }
    let na = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = xi_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = xi.iter().zip(xi_hat).map(|(a, b)| a * b).sum();
    Ok((1.0 - (dot / (na * nb)).abs()).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionLoss {
    pub class: f64,
    pub sim: f64,
}

impl DirectionLoss {
    pub fn total(&self) -> f64 {
        self.class + self.sim
    }
}

/// Classification plus similarity loss of a predicted distribution against a
/// ground-truth direction. An uninformative prediction (decoded expectation
/// with norm below 1e-6) takes the maximal similarity loss of 1.
pub fn direction_loss<const D: usize>(
    pred: &DirectionDistribution,
    xi: &UnitVector<D>,
    scheme: &BinScheme,
) -> Result<DirectionLoss> {
    let class = class_loss(pred, &encode(xi, scheme))?;
    let raw = decode_raw::<D>(pred, scheme)?;
    let norm = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
    let sim = if norm < 1e-6 {
        1.0
    } else {
        sim_loss(xi.components(), &raw)?
    };
    Ok(DirectionLoss { class, sim })
}

pub fn radius_loss(r: f64, r_hat: f64) -> f64 {
    (r - r_hat) * (r - r_hat)
}

pub fn geo_loss(direction: f64, radius: f64, w: &LossWeights) -> f64 {
    w.lambda_d * direction + w.lambda_r * radius
}

pub fn img_loss(centerline: f64, boundary: f64, w: &LossWeights) -> f64 {
    w.lambda_c * centerline + w.lambda_b * boundary
}

/// Per-point loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PointLoss {
    pub direction: f64,
    pub radius: f64,
    pub centerline: f64,
    pub boundary: f64,
}

/// Sum over points of the weighted geometry and image losses.
pub fn total_loss(points: &[PointLoss], w: &LossWeights) -> f64 {
    points
        .iter()
        .map(|p| geo_loss(p.direction, p.radius, w) + img_loss(p.centerline, p.boundary, w))
        .sum()
}

/// Image losses between prediction grids and label grids.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ImageLossReport {
    pub centerline: f64,
    pub boundary: f64,
    pub image: f64,
}

pub fn image_losses<const D: usize>(
    pred_centerline: &Grid<D>,
    label_centerline: &Grid<D>,
    pred_boundary: &Grid<D>,
    label_boundary: &Grid<D>,
    w: &LossWeights,
) -> Result<ImageLossReport> {
    let centerline = weighted_bce(pred_centerline, label_centerline, w.w_c)?;
    let boundary = weighted_bce(pred_boundary, label_boundary, w.w_b)?;
    Ok(ImageLossReport {
        centerline,
        boundary,
        image: img_loss(centerline, boundary, w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(v: f64) -> Grid<1> {
        Grid::from_values([1], vec![v]).unwrap()
    }

    #[test]
    fn bce_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((weighted_bce(&g(0.5), &g(1.0), 0.9).unwrap() - 0.9 * ln2).abs() < 1e-12);
        assert!((weighted_bce(&g(0.5), &g(0.0), 0.9).unwrap() - 0.1 * ln2).abs() < 1e-12);
        let labels = Grid::<2>::from_values([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(weighted_bce(&labels, &labels, 0.9).unwrap() <= 2e-6);
        assert!(weighted_bce(&Grid::<2>::zeros([2, 3]), &labels, 0.9).is_err());
        assert!(weighted_bce(&labels, &labels, 1.0).is_err());
    }

    #[test]
    fn class_loss_examples() {
        let mut target = vec![vec![0.0; 5]; 3];
        for (j, row) in target.iter_mut().enumerate() {
            row[j + 1] = 1.0;
        }
        let mut confident = vec![vec![0.0; 5]; 3];
        for (j, row) in confident.iter_mut().enumerate() {
            row[j + 1] = 100.0;
        }
        let d = DirectionDistribution::from_rows(confident).unwrap();
        assert!(class_loss(&d, &target).unwrap() < 1e-6);

        let u = DirectionDistribution::from_rows(vec![vec![0.0; 5]; 3]).unwrap();
        assert!((class_loss(&u, &target).unwrap() - 5f64.ln()).abs() < 1e-12);

        // mean of per-component terms
        let rows = vec![
            vec![1.0, 2.0, 0.5, -1.0, 0.0],
            vec![0.0, 0.0, 3.0, 0.0, 0.0],
            vec![-2.0, 1.0, 1.0, 0.0, 4.0],
        ];
        let per: Vec<f64> = (0..3)
            .map(|j| {
                let d = DirectionDistribution::from_rows(vec![rows[j].clone()]).unwrap();
                class_loss(&d, &target[j..j + 1]).unwrap()
            })
            .collect();
        let all = DirectionDistribution::from_rows(rows).unwrap();
        assert!((class_loss(&all, &target).unwrap() - per.iter().sum::<f64>() / 3.0).abs() < 1e-12);

        assert!(class_loss(&all, &target[..2]).is_err());
    }

    #[test]
    fn sim_loss_examples() {
        assert_eq!(sim_loss(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(sim_loss(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() < 1e-15);
        let v = sim_loss(&[1.0, 0.0, 0.0], &[1.0, 1.0, 0.0]).unwrap();
        assert!((v - (1.0 - 0.5f64.sqrt())).abs() < 1e-12);
        assert!(sim_loss(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn direction_loss_examples() {
        let s = BinScheme::default();
        let xi = UnitVector::new([0.3, -0.5, 0.81]).unwrap();
        let perfect = crate::codec::encode_logits(&xi, &s);
        let l = direction_loss(&perfect, &xi, &s).unwrap();
        let centers: Vec<f64> = crate::codec::encode_bins(&xi, &s)
            .iter()
            .map(|&b| s.center(b))
            .collect();
        let residual = sim_loss(xi.components(), &centers).unwrap();
        assert!(l.class < 1e-6);
        assert!(l.total() <= residual + 1e-6);

        let u = DirectionDistribution::from_rows(vec![vec![0.0; 5]; 3]).unwrap();
        let l = direction_loss(&u, &xi, &s).unwrap();
        assert!((l.class - 5f64.ln()).abs() < 1e-12);
        assert_eq!(l.sim, 1.0);
        assert_eq!(l.total(), l.class + l.sim);
    }

    #[test]
    fn aggregate_examples() {
        let w = LossWeights::default();
        assert!((geo_loss(0.5, 0.01, &w) - 1.5).abs() < 1e-12);
        assert!((img_loss(0.2, 0.3, &w) - 0.5).abs() < 1e-12);
        assert_eq!(total_loss(&[PointLoss::default(); 4], &w), 0.0);
        assert_eq!(radius_loss(3.0, 3.0), 0.0);
        assert_eq!(radius_loss(3.0, 2.5), 0.25);
        assert_eq!(radius_loss(1.0, 4.0), 9.0);
        assert!(w.validate().is_ok());
        assert!(LossWeights { w_c: 1.0, ..w }.validate().is_err());
    }

    proptest! {
        #[test]
        fn bce_decreases_toward_label(y in 0u8..2, p in 0.01f64..0.99, dp in 0.001f64..0.5, w in 0.05f64..0.95) {
            let y = y as f64;
            let closer = if y == 1.0 { (p + dp).min(1.0) } else { (p - dp).max(0.0) };
            let a = weighted_bce_value(p, y, w);
            let b = weighted_bce_value(closer, y, w);
            prop_assert!(a >= 0.0 && b >= 0.0);
            prop_assert!(b < a);
        }

        #[test]
        fn sim_loss_scale_invariant(
            v in proptest::array::uniform3(-10.0f64..10.0),
            s in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
            u in proptest::array::uniform3(-10.0f64..10.0),
        ) {
            prop_assume!(v.iter().map(|c| c * c).sum::<f64>() > 1e-6);
            prop_assume!(u.iter().map(|c| c * c).sum::<f64>() > 1e-6);
            let sv = v.map(|c| c * s);
            prop_assert!(sim_loss(&v, &sv).unwrap() <= 1e-12);
            let l = sim_loss(&v, &u).unwrap();
            prop_assert!((0.0..=1.0).contains(&l));
        }

        #[test]
        fn radius_loss_symmetric(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            prop_assert_eq!(radius_loss(a, b), radius_loss(b, a));
            prop_assert_eq!(radius_loss(a, b) == 0.0, a == b);
        }

        #[test]
        fn total_loss_monotone_per_component(
            base in proptest::array::uniform4(0.0f64..2.0),
            which in 0usize..4,
            frac in 0.0f64..1.0,
        ) {
            let w = LossWeights::default();
            let p = PointLoss { direction: base[0], radius: base[1], centerline: base[2], boundary: base[3] };
            let mut q = p;
            match which {
                0 => q.direction *= frac,
                1 => q.radius *= frac,
                2 => q.centerline *= frac,
                _ => q.boundary *= frac,
            }
            prop_assert!(total_loss(&[q], &w) <= total_loss(&[p], &w));
        }
    }
}
