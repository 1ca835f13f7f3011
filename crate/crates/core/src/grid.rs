//! Dense scalar grids in row-major order (last axis varies fastest).

use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<const D: usize> {
    dims: [usize; D],
    spacing: [f64; D],
    values: Vec<f64>,
}

impl<const D: usize> Grid<D> {
    pub fn zeros(dims: [usize; D]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: [usize; D], value: f64) -> Self {
        let n = dims.iter().product();
        Grid {
            dims,
            spacing: [1.0; D],
            values: vec![value; n],
        }
    }

    pub fn from_values(dims: [usize; D], values: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if dims.contains(&0) {
            return Err(Error::ShapeMismatch(format!("dims {dims:?} must be positive")));
        }
        if values.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} values for dims {dims:?} (expected {n})",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite value at flat index {i}")));
        }
        Ok(Grid {
            dims,
            spacing: [1.0; D],
            values,
        })
    }

    pub fn with_spacing(mut self, spacing: [f64; D]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn dims(&self) -> &[usize; D] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64; D] {
        &self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Element stride of each axis.
    pub fn strides(&self) -> [usize; D] {
        strides(&self.dims)
    }

    pub fn flat_index(&self, idx: [usize; D]) -> usize {
        idx.iter()
            .zip(self.strides().iter())
            .map(|(i, s)| i * s)
            .sum()
    }

    pub fn unravel(&self, flat: usize) -> [usize; D] {
        unravel(&self.dims, flat)
    }

    pub fn get(&self, idx: [usize; D]) -> f64 {
        self.values[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: [usize; D], v: f64) {
        let i = self.flat_index(idx);
        self.values[i] = v;
    }

    pub fn same_shape<const E: usize>(&self, other: &Grid<E>) -> bool {
        self.dims.as_slice() == other.dims.as_slice()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Grid {
            dims: self.dims,
            spacing: self.spacing,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// True when every coordinate lies within `[0, dim - 1]`.
    pub fn contains(&self, p: &Point<D>) -> bool {
        p.is_finite()
            && (0..D).all(|i| p.0[i] >= 0.0 && p.0[i] <= (self.dims[i] - 1) as f64)
    }

    /// Visits the `2^D` interpolation corners of `p` with their multilinear
    /// weights. Corners past the upper edge are folded onto the edge voxel.
    /// `p` must satisfy [`Grid::contains`].
    pub fn for_each_corner(&self, p: &Point<D>, mut f: impl FnMut([usize; D], f64)) {
        let mut base = [0usize; D];
        let mut frac = [0.0; D];
        for i in 0..D {
            let fl = p.0[i].floor();
            base[i] = fl as usize;
            frac[i] = p.0[i] - fl;
        }
        for corner in 0..(1usize << D) {
            let mut idx = base;
            let mut w = 1.0;
            for i in 0..D {
                if corner & (1 << i) != 0 {
                    idx[i] = (base[i] + 1).min(self.dims[i] - 1);
                    w *= frac[i];
                } else {
                    w *= 1.0 - frac[i];
                }
            }
            f(idx, w);
        }
    }

    /// Multilinear interpolation; `None` outside the grid.
    pub fn sample(&self, p: &Point<D>) -> Option<f64> {
        if !self.contains(p) {
            return None;
        }
        let mut acc = 0.0;
        self.for_each_corner(p, |idx, w| {
            if w != 0.0 {
                acc += w * self.get(idx)
            }
        });
        Some(acc)
    }

    /// Multilinear interpolation restricted to nonzero corners, renormalized by
    /// their total weight. Returns 0 when every contributing corner is zero.
    pub fn sample_nonzero(&self, p: &Point<D>) -> Option<f64> {
        if !self.contains(p) {
            return None;
        }
        let (mut acc, mut wsum) = (0.0, 0.0);
        self.for_each_corner(p, |idx, w| {
            let v = self.get(idx);
            if w > 0.0 && v != 0.0 {
                acc += w * v;
                wsum += w;
            }
        });
        Some(if wsum > 0.0 { acc / wsum } else { 0.0 })
    }

    /// Voxelwise maximum.
    pub fn max_with(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(Grid {
            dims: self.dims,
            spacing: self.spacing,
            values: self
                .values
                .iter()
                .zip(other.values.iter())
                .map(|(a, b)| a.max(*b))
                .collect(),
        })
    }
}

pub fn strides<const D: usize>(dims: &[usize; D]) -> [usize; D] {
    let mut s = [1usize; D];
    for i in (0..D.saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

pub fn unravel<const D: usize>(dims: &[usize; D], mut flat: usize) -> [usize; D] {
    let mut idx = [0usize; D];
    for i in (0..D).rev() {
        idx[i] = flat % dims[i];
        flat /= dims[i];
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn row_major_layout() {
        let g = Grid::<3>::zeros([2, 3, 4]);
        assert_eq!(g.strides(), [12, 4, 1]);
        assert_eq!(g.flat_index([1, 2, 3]), 23);
        assert_eq!(g.unravel(23), [1, 2, 3]);
    }

    #[test]
    fn from_values_checks_shape_and_finiteness() {
        assert!(Grid::<2>::from_values([2, 2], vec![0.0; 3]).is_err());
        assert!(Grid::<2>::from_values([2, 2], vec![0.0, 1.0, f64::NAN, 0.0]).is_err());
        assert!(Grid::<2>::from_values([0, 2], vec![]).is_err());
    }

    #[test]
    fn interpolation_hits_voxel_values_and_midpoints() {
        let g = Grid::<2>::from_values([2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.sample(&Point([1.0, 1.0])), Some(3.0));
        assert_eq!(g.sample(&Point([0.5, 0.5])), Some(1.5));
        assert_eq!(g.sample(&Point([0.0, 0.25])), Some(0.25));
        assert_eq!(g.sample(&Point([1.01, 0.0])), None);
        assert_eq!(g.sample(&Point([-0.01, 0.0])), None);
    }

    #[test]
    fn nonzero_sampling_ignores_empty_corners() {
        let g = Grid::<2>::from_values([2, 2], vec![2.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(g.sample_nonzero(&Point([0.5, 0.5])), Some(2.0));
        assert_eq!(g.sample_nonzero(&Point([1.0, 1.0])), Some(0.0));
    }

    proptest! {
        #[test]
        fn interpolation_is_bounded_by_corners(
            vals in proptest::collection::vec(-5.0f64..5.0, 27),
            p in proptest::array::uniform3(0.0f64..2.0),
        ) {
            let g = Grid::<3>::from_values([3, 3, 3], vals).unwrap();
            let p = Point(p);
            let v = g.sample(&p).unwrap();
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            g.for_each_corner(&p, |idx, _| {
                lo = lo.min(g.get(idx));
                hi = hi.max(g.get(idx));
            });
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
