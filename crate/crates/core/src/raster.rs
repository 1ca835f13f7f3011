//! Rasterization of the discrete-cylinder solid: the union over segments of
//! the tube of radius `phi * r` around each centerline piece.

use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::geometry::{
    perpendicular_frame_with, point_to_segment, BranchForest, FrameConvention, Point, UnitVector,
};
use crate::grid::{strides, Grid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapStyle {
    /// Each segment is closed by hemispheres (capsule union).
    #[default]
    Round,
    /// Open cylinders: a voxel must project strictly onto the segment.
    Flat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusProfile {
    /// `r(γ) = (1 - γ) r_i + γ r_{i+1}`.
    #[default]
    Interpolated,
    /// `r = r_i` over the whole segment.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConfig {
    pub phi: f64,
    pub cap_style: CapStyle,
    pub radius_profile: RadiusProfile,
    pub label_radius_override: Option<f64>,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            phi: 1.0,
            cap_style: CapStyle::Round,
            radius_profile: RadiusProfile::Interpolated,
            label_radius_override: None,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.phi > 0.0 && self.phi <= 1.0) {
            return Err(crate::Error::Config(format!("phi {} not in (0, 1]", self.phi)));
        }
        if let Some(r) = self.label_radius_override {
            if !(r > 0.0) {
                return Err(crate::Error::Config(format!(
                    "label_radius_override {r} must be positive"
                )));
            }
        }
        Ok(())
    }

    fn with_radius(&self, r: f64) -> Self {
        RasterConfig {
            label_radius_override: Some(r),
            ..*self
        }
    }
}

/// One centerline piece with its end radii, already scaled by `phi`.
#[derive(Clone, Copy, Debug)]
pub struct Segment<const D: usize> {
    pub a: Point<D>,
    pub b: Point<D>,
    pub ra: f64,
    pub rb: f64,
    pub branch: usize,
    /// Index of the start node within its branch.
    pub node: usize,
}

impl<const D: usize> Segment<D> {
    pub fn direction(&self) -> Option<UnitVector<D>> {
        UnitVector::new((self.b - self.a).0).ok()
    }

    fn radius_at(&self, g: f64, profile: RadiusProfile) -> f64 {
        match profile {
            RadiusProfile::Interpolated => (1.0 - g) * self.ra + g * self.rb,
            RadiusProfile::Constant => self.ra,
        }
    }

    /// Signed distance to this piece's surface (negative inside), or `None`
    /// for flat caps when `p` does not project onto the segment.
    pub fn signed_distance(&self, p: &Point<D>, cfg: &RasterConfig) -> Option<(f64, f64)> {
        if cfg.cap_style == CapStyle::Flat && self.a != self.b {
            let ab = self.b - self.a;
            let t = (*p - self.a).dot(&ab) / ab.norm_squared();
            if !(0.0..=1.0).contains(&t) {
                return None;
            }
        }
        let (d, g) = point_to_segment(p, &self.a, &self.b);
        Some((d - self.radius_at(g, cfg.radius_profile), g))
    }

    pub fn contains(&self, p: &Point<D>, cfg: &RasterConfig) -> bool {
        self.signed_distance(p, cfg).is_some_and(|(s, _)| s <= 0.0)
    }

    fn max_radius(&self) -> f64 {
        self.ra.max(self.rb)
    }
}

/// All pieces of a forest. Single-node branches become zero-length pieces
/// (balls).
pub fn segments<const D: usize>(forest: &BranchForest<D>, cfg: &RasterConfig) -> Vec<Segment<D>> {
    let radius = |r: f64| cfg.phi * cfg.label_radius_override.unwrap_or(r);
    let mut out = Vec::new();
    for (bi, b) in forest.branches.iter().enumerate() {
        if b.nodes.len() == 1 {
            let n = &b.nodes[0];
            out.push(Segment {
                a: n.position,
                b: n.position,
                ra: radius(n.radius),
                rb: radius(n.radius),
                branch: bi,
                node: 0,
            });
        }
        for (ni, w) in b.nodes.windows(2).enumerate() {
            out.push(Segment {
                a: w[0].position,
                b: w[1].position,
                ra: radius(w[0].radius),
                rb: radius(w[1].radius),
                branch: bi,
                node: ni,
            });
        }
    }
    out
}

/// Inclusive voxel bounding box of a segment grown by `reach`, clipped to
/// the grid.
fn bbox<const D: usize>(
    seg: &Segment<D>,
    reach: f64,
    dims: &[usize; D],
) -> Option<([usize; D], [usize; D])> {
    let mut lo = [0usize; D];
    let mut hi = [0usize; D];
    for i in 0..D {
        let l = (seg.a.0[i].min(seg.b.0[i]) - reach).ceil();
        let h = (seg.a.0[i].max(seg.b.0[i]) + reach).floor();
        if h < 0.0 || l > (dims[i] - 1) as f64 || l > h {
            return None;
        }
        lo[i] = l.max(0.0) as usize;
        hi[i] = (h as usize).min(dims[i] - 1);
    }
    Some((lo, hi))
}

/// Visits every (voxel, segment) pair where the voxel lies in the segment's
/// bounding box grown by `reach(segment)`. Slabs along the first axis are
/// processed independently; within a slab segments are visited in order.
pub(crate) fn sweep<const D: usize, T, R, V>(
    dims: [usize; D],
    segs: &[Segment<D>],
    reach: R,
    init: T,
    exec: Exec,
    visit: V,
) -> Vec<T>
where
    T: Clone + Send,
    R: Fn(&Segment<D>) -> f64,
    V: Fn(&mut T, &Point<D>, usize) + Sync + Send,
{
    let n: usize = dims.iter().product();
    let mut out = vec![init; n];
    let boxes: Vec<_> = segs
        .iter()
        .enumerate()
        .filter_map(|(i, s)| bbox(s, reach(s), &dims).map(|b| (i, b)))
        .collect();
    let st = strides(&dims);
    exec.for_each_chunk_mut(&mut out, st[0], |slab, cells| {
        for (si, (lo, hi)) in &boxes {
            if slab < lo[0] || slab > hi[0] {
                continue;
            }
            let mut idx = *lo;
            idx[0] = slab;
            loop {
                let local: usize = (1..D).map(|k| idx[k] * st[k]).sum();
                visit(&mut cells[local], &Point::from_index(idx), *si);
                // odometer over axes 1..D
                let mut k = D - 1;
                loop {
                    if k == 0 {
                        break;
                    }
                    if idx[k] < hi[k] {
                        idx[k] += 1;
                        break;
                    }
                    idx[k] = lo[k];
                    k -= 1;
                }
                if k == 0 {
                    break;
                }
            }
        }
    });
    out
}

fn binary<const D: usize>(dims: [usize; D], inside: Vec<bool>) -> Grid<D> {
    let values = inside.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
    Grid::from_values(dims, values).expect("dims match")
}

/// Binary mask of voxel centers inside the solid.
pub fn rasterize<const D: usize>(
    forest: &BranchForest<D>,
    dims: [usize; D],
    cfg: &RasterConfig,
) -> Grid<D> {
    rasterize_with(forest, dims, cfg, Exec::default())
}

pub fn rasterize_with<const D: usize>(
    forest: &BranchForest<D>,
    dims: [usize; D],
    cfg: &RasterConfig,
    exec: Exec,
) -> Grid<D> {
    let segs = segments(forest, cfg);
    let inside = sweep(dims, &segs, |s| s.max_radius(), false, exec, |cell, p, si| {
        if !*cell && segs[si].contains(p, cfg) {
            *cell = true;
        }
    });
    binary(dims, inside)
}

/// Same solid evaluated through the parametric cross-section form: the
/// offset from the axis foot is expressed in the `(nu, zeta, xi)` basis given
/// by `convention` and its length compared against the radius.
pub fn rasterize_in_frame<const D: usize>(
    forest: &BranchForest<D>,
    dims: [usize; D],
    cfg: &RasterConfig,
    convention: FrameConvention,
) -> Grid<D> {
    let segs = segments(forest, cfg);
    let bases: Vec<Option<Vec<UnitVector<D>>>> = segs
        .iter()
        .map(|s| {
            s.direction().map(|xi| {
                let f = perpendicular_frame_with(&xi, convention);
                let mut basis = vec![xi, f.nu];
                basis.extend(f.zeta);
                basis
            })
        })
        .collect();
    let inside = sweep(
        dims,
        &segs,
        |s| s.max_radius(),
        false,
        Exec::default(),
        |cell, p, si| {
            if *cell {
                return;
            }
            let s = &segs[si];
            let Some(basis) = &bases[si] else {
                *cell = p.distance(&s.a) <= s.ra;
                return;
            };
            let ab = s.b - s.a;
            let t = (*p - s.a).dot(&ab) / ab.norm_squared();
            if cfg.cap_style == CapStyle::Flat && !(0.0..=1.0).contains(&t) {
                return;
            }
            let g = t.clamp(0.0, 1.0);
            let o = *p - s.a.lerp(&s.b, g);
            let rho = basis
                .iter()
                .map(|e| {
                    let c = o.dot(&e.as_point());
                    c * c
                })
                .sum::<f64>()
                .sqrt();
            *cell = rho <= s.radius_at(g, cfg.radius_profile);
        },
    );
    binary(dims, inside)
}

/// Centerline label: every radius forced to 1.
pub fn make_centerline_label<const D: usize>(
    forest: &BranchForest<D>,
    dims: [usize; D],
) -> Grid<D> {
    rasterize(forest, dims, &RasterConfig::default().with_radius(1.0))
}

/// Boundary label: every radius forced to `r_b`.
pub fn make_boundary_label<const D: usize>(
    forest: &BranchForest<D>,
    dims: [usize; D],
    r_b: f64,
) -> crate::Result<Grid<D>> {
    if !(r_b > 0.0) {
        return Err(crate::Error::InvalidValue(format!("r_b {r_b} must be positive")));
    }
    Ok(rasterize(forest, dims, &RasterConfig::default().with_radius(r_b)))
}

/// Per-voxel nearest piece by signed distance, evaluated within `band`
/// voxels of each surface. Voxels outside every band hold `None`.
pub fn nearest_segment_field<const D: usize>(
    segs: &[Segment<D>],
    dims: [usize; D],
    cfg: &RasterConfig,
    band: f64,
    exec: Exec,
) -> Vec<Option<(f64, usize, f64)>> {
    sweep(
        dims,
        segs,
        |s| s.max_radius() + band,
        None,
        exec,
        |cell: &mut Option<(f64, usize, f64)>, p, si| {
            if let Some((sd, g)) = segs[si].signed_distance(p, cfg) {
                if sd <= band && cell.is_none_or(|(best, _, _)| sd < best) {
                    *cell = Some((sd, si, g));
                }
            }
        },
    )
}
