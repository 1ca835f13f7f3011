//! Synthetic curvilinear scenes: random smooth trees, their intensity image
//! (with optional noise and gaps) and the ground-truth label grids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{
    perpendicular_frame, point_to_segment, Branch, BranchForest, CenterNode, NodeRef, Point,
    UnitVector,
};
use crate::grid::Grid;
use crate::raster::{
    make_boundary_label, make_centerline_label, nearest_segment_field, rasterize, segments,
    RasterConfig,
};

const MAX_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub rng_seed: u64,
    pub dims: Vec<usize>,
    /// Inclusive range of branches per scene.
    pub branch_count: [usize; 2],
    /// Inclusive range of segments per branch.
    pub segments_per_branch: [usize; 2],
    pub segment_length: [f64; 2],
    /// Largest per-step direction change, radians.
    pub tortuosity: f64,
    pub radius: [f64; 2],
    /// Probability that a new branch sprouts from an existing one rather than
    /// starting a new tree.
    pub child_probability: f64,
    /// Minimum distance between a new branch and unrelated existing branches.
    pub min_separation: f64,
    pub contrast: f64,
    pub noise_sigma: f64,
    pub gap_probability: f64,
    pub gap_length: [f64; 2],
    /// Radius `r_b` of the boundary label.
    pub boundary_radius: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rng_seed: 0,
            dims: vec![64, 64, 64],
            branch_count: [2, 4],
            segments_per_branch: [10, 20],
            segment_length: [2.0, 4.0],
            tortuosity: 0.2,
            radius: [1.0, 3.0],
            child_probability: 0.5,
            min_separation: 8.0,
            contrast: 0.8,
            noise_sigma: 0.0,
            gap_probability: 0.0,
            gap_length: [2.0, 4.0],
            boundary_radius: 3.0,
        }
    }
}

fn check_range<T: PartialOrd + std::fmt::Debug>(name: &str, r: &[T; 2]) -> Result<()> {
    if r[0] > r[1] {
        return Err(Error::Config(format!("{name} range {r:?} is empty")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("branch_count", &self.branch_count)?;
        check_range("segments_per_branch", &self.segments_per_branch)?;
        check_range("segment_length", &self.segment_length)?;
        check_range("radius", &self.radius)?;
        check_range("gap_length", &self.gap_length)?;
        if self.branch_count[1] == 0 || self.segments_per_branch[0] == 0 {
            return Err(Error::Config("branch and segment counts must be positive".into()));
        }
        if !(self.segment_length[0] > 0.0 && self.radius[0] > 0.0 && self.gap_length[0] >= 0.0) {
            return Err(Error::Config("lengths and radii must be positive".into()));
        }
        for (name, p) in [
            ("gap_probability", self.gap_probability),
            ("child_probability", self.child_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} not in [0, 1]")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.tortuosity >= 0.0 && self.boundary_radius > 0.0) {
            return Err(Error::Config(
                "noise_sigma and tortuosity must be >= 0, boundary_radius > 0".into(),
            ));
        }
        if self.dims.contains(&0) {
            return Err(Error::Config(format!("dims {:?} must be positive", self.dims)));
        }
        Ok(())
    }

    pub fn dims<const D: usize>(&self) -> Result<[usize; D]> {
        self.dims.as_slice().try_into().map_err(|_| {
            Error::Config(format!("dims {:?} do not describe a {D}D grid", self.dims))
        })
    }
}

/// Ground-truth grids accompanying a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Labels<const D: usize> {
    pub centerline: Grid<D>,
    pub boundary: Grid<D>,
    /// Tube radius at voxels inside the solid, 0 elsewhere.
    pub radius: Grid<D>,
    /// Unit tangent per component inside the solid, 0 elsewhere.
    pub direction: [Grid<D>; D],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene<const D: usize> {
    pub forest: BranchForest<D>,
    pub intensity: Grid<D>,
    pub labels: Labels<D>,
}

fn random_unit<const D: usize>(rng: &mut ChaCha8Rng) -> UnitVector<D> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    loop {
        let v: [f64; D] = std::array::from_fn(|_| normal.sample(rng));
        if let Ok(u) = UnitVector::new(v) {
            return u;
        }
    }
}

/// Rotates `dir` by `angle` towards a random perpendicular.
fn perturb<const D: usize>(dir: &UnitVector<D>, angle: f64, rng: &mut ChaCha8Rng) -> UnitVector<D> {
    let frame = perpendicular_frame(dir);
    let perp = match frame.zeta {
        Some(zeta) => {
            let psi = rng.random_range(0.0..std::f64::consts::TAU);
            frame.nu.as_point() * psi.cos() + zeta.as_point() * psi.sin()
        }
        None => {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            frame.nu.as_point() * sign
        }
    };
    let v = dir.as_point() * angle.cos() + perp * angle.sin();
    UnitVector::new(v.0).unwrap_or(*dir)
}

fn inside_margin<const D: usize>(p: &Point<D>, dims: &[usize; D], margin: f64) -> bool {
    (0..D).all(|i| p.0[i] >= margin && p.0[i] <= dims[i] as f64 - 1.0 - margin)
}

fn sample_range(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

struct Walk<'a, const D: usize> {
    cfg: &'a SynthConfig,
    dims: [usize; D],
    margin: f64,
}

impl<const D: usize> Walk<'_, D> {
    /// Random walk from `start`. With `bounded` the walk ends where it would
    /// leave the margin box.
    fn branch(
        &self,
        rng: &mut ChaCha8Rng,
        start: Point<D>,
        mut dir: UnitVector<D>,
        start_radius: Option<f64>,
        bounded: bool,
    ) -> Vec<CenterNode<D>> {
        let [rmin, rmax] = self.cfg.radius;
        let mut r = start_radius.unwrap_or_else(|| sample_range(rng, self.cfg.radius));
        let steps = rng.random_range(self.cfg.segments_per_branch[0]..=self.cfg.segments_per_branch[1]);
        let mut nodes = vec![CenterNode::new(start, r)];
        let mut cur = start;
        for _ in 0..steps {
            let angle = rng.random_range(0.0..=self.cfg.tortuosity.max(0.0));
            dir = perturb(&dir, angle, rng);
            let len = sample_range(rng, self.cfg.segment_length);
            let next = cur + dir.as_point() * len;
            if bounded && !inside_margin(&next, &self.dims, self.margin) {
                break;
            }
            r = (r + rng.random_range(-0.1..=0.1)).clamp(rmin, rmax);
            nodes.push(CenterNode::new(next, r));
            cur = next;
        }
        nodes
    }

    /// Translates a free walk to a random position inside the margin box, or
    /// returns `None` when its extent does not fit.
    fn place(&self, rng: &mut ChaCha8Rng, mut nodes: Vec<CenterNode<D>>) -> Option<Vec<CenterNode<D>>> {
        let mut shift = [0.0; D];
        for (i, s) in shift.iter_mut().enumerate() {
            let lo = nodes.iter().map(|n| n.position.0[i]).fold(f64::INFINITY, f64::min);
            let hi = nodes.iter().map(|n| n.position.0[i]).fold(f64::NEG_INFINITY, f64::max);
            let (min, max) = (self.margin - lo, self.dims[i] as f64 - 1.0 - self.margin - hi);
            if min > max {
                return None;
            }
            *s = sample_range(rng, [min, max]);
        }
        for n in &mut nodes {
            n.position = n.position + Point(shift);
        }
        Some(nodes)
    }

    /// True when `nodes` stays `min_separation` away from every existing
    /// branch, ignoring the stretch next to its own attachment point.
    fn separated(
        &self,
        forest: &BranchForest<D>,
        nodes: &[CenterNode<D>],
        attach: Option<NodeRef>,
    ) -> bool {
        let sep = self.cfg.min_separation;
        let origin = nodes[0].position;
        nodes.iter().all(|n| {
            if attach.is_some() && n.position.distance(&origin) < sep {
                return true;
            }
            forest.branches.iter().all(|b| {
                b.segments().all(|(a, c)| {
                    point_to_segment(&n.position, &a.position, &c.position).0 >= sep
                })
            })
        })
    }
}

/// Random forest inside `dims`, deterministic in `cfg.rng_seed`.
pub fn random_forest<const D: usize>(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BranchForest<D>> {
    cfg.validate()?;
    let dims = cfg.dims::<D>()?;
    let walk = Walk {
        cfg,
        dims,
        margin: cfg.radius[1] + 2.0,
    };
    if dims.iter().any(|&d| (d as f64) <= 2.0 * walk.margin + 1.0) {
        return Err(Error::Config(format!(
            "grid {dims:?} too small for radius {}",
            cfg.radius[1]
        )));
    }
    let target = rng.random_range(cfg.branch_count[0]..=cfg.branch_count[1]);
    let center = Point(dims.map(|d| (d as f64 - 1.0) / 2.0));
    let mut forest = BranchForest::default();
    let mut attempt = 0;
    while forest.branches.len() < target && attempt < MAX_ATTEMPTS {
        attempt += 1;
        let sprout = !forest.branches.is_empty() && rng.random_bool(cfg.child_probability);
        let (nodes, attach) = if sprout {
            let bi = rng.random_range(0..forest.branches.len());
            let parent = &forest.branches[bi];
            let ni = rng.random_range(1..parent.len() - 1);
            let here = parent.nodes[ni];
            let tangent =
                UnitVector::new((parent.nodes[ni + 1].position - here.position).0).expect("distinct");
            let angle = rng.random_range(0.5..1.2);
            let dir = perturb(&tangent, angle, rng);
            let r = here.radius.min(sample_range(rng, cfg.radius));
            let nodes = walk.branch(rng, here.position, dir, Some(r), true);
            (nodes, Some(NodeRef { branch: bi, node: ni }))
        } else {
            let dir = random_unit(rng);
            let free = walk.branch(rng, center, dir, None, false);
            let Some(nodes) = walk.place(rng, free) else {
                continue;
            };
            (nodes, None)
        };
        if nodes.len() < 3 || !walk.separated(&forest, &nodes, attach) {
            continue;
        }
        forest.branches.push(Branch {
            nodes,
            parent: attach,
        });
    }
    if forest.branches.is_empty() {
        return Err(Error::Synthesis {
            attempts: attempt,
            reason: format!("no branch fits inside {dims:?}"),
        });
    }
    Ok(forest)
}

/// Ground-truth label grids for a forest.
pub fn make_labels<const D: usize>(
    forest: &BranchForest<D>,
    dims: [usize; D],
    boundary_radius: f64,
    exec: Exec,
) -> Result<Labels<D>> {
    let cfg = RasterConfig::default();
    let segs = segments(forest, &cfg);
    let nearest = nearest_segment_field(&segs, dims, &cfg, 0.0, exec);
    let mut radius = Grid::zeros(dims);
    let mut direction: [Grid<D>; D] = std::array::from_fn(|_| Grid::zeros(dims));
    for (flat, cell) in nearest.iter().enumerate() {
        let Some((_, si, g)) = *cell else { continue };
        let s = &segs[si];
        radius.values_mut()[flat] = (1.0 - g) * s.ra + g * s.rb;
        if let Some(xi) = s.direction() {
            for (c, grid) in direction.iter_mut().enumerate() {
                grid.values_mut()[flat] = xi.components()[c];
            }
        }
    }
    Ok(Labels {
        centerline: make_centerline_label(forest, dims),
        boundary: make_boundary_label(forest, dims, boundary_radius)?,
        radius,
        direction,
    })
}

/// Sub-polylines of `branch` that get their intensity removed.
fn gap_pieces<const D: usize>(
    branch: &Branch<D>,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Branch<D>> {
    let arc: Vec<f64> = std::iter::once(0.0)
        .chain(branch.segments().scan(0.0, |acc, (a, b)| {
            *acc += a.position.distance(&b.position);
            Some(*acc)
        }))
        .collect();
    let total = *arc.last().unwrap_or(&0.0);
    let rmax = branch.nodes.iter().map(|n| n.radius).fold(0.0, f64::max);
    let at = |s: f64| -> Point<D> {
        let i = arc.partition_point(|&a| a <= s).clamp(1, arc.len() - 1);
        let (a, b) = (&branch.nodes[i - 1], &branch.nodes[i]);
        let t = ((s - arc[i - 1]) / (arc[i] - arc[i - 1])).clamp(0.0, 1.0);
        a.position.lerp(&b.position, t)
    };
    let mut out = Vec::new();
    for i in 0..branch.len().saturating_sub(1) {
        if !rng.random_bool(cfg.gap_probability) {
            continue;
        }
        let len = sample_range(rng, cfg.gap_length).min(total);
        let s0 = arc[i].min(total - len);
        let s1 = s0 + len;
        let mut pts = vec![at(s0)];
        pts.extend(arc.iter().filter(|&&a| a > s0 && a < s1).map(|&a| at(a)));
        pts.push(at(s1));
        pts.dedup();
        // keep the hole slightly wider than the soft tube edge
        let r = rmax + 1.5;
        out.push(Branch::new(pts.into_iter().map(|p| CenterNode::new(p, r)).collect()));
    }
    out
}

/// Generates a full scene. Identical configs give bit-identical scenes.
pub fn synthesize<const D: usize>(cfg: &SynthConfig) -> Result<Scene<D>> {
    synthesize_with(cfg, Exec::default())
}

pub fn synthesize_with<const D: usize>(cfg: &SynthConfig, exec: Exec) -> Result<Scene<D>> {
    let dims = cfg.dims::<D>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let forest = random_forest::<D>(cfg, &mut rng)?;
    let labels = make_labels(&forest, dims, cfg.boundary_radius, exec)?;

    let rcfg = RasterConfig::default();
    let segs = segments(&forest, &rcfg);
    let soft: Vec<f64> = nearest_segment_field(&segs, dims, &rcfg, 1.0, exec)
        .into_iter()
        .map(|c| c.map_or(0.0, |(sd, _, _)| (1.0 - sd).clamp(0.0, 1.0)))
        .collect();

    let gaps = BranchForest::new(
        forest
            .branches
            .iter()
            .flat_map(|b| gap_pieces(b, cfg, &mut rng))
            .collect(),
    );
    let holes = rasterize(&gaps, dims, &rcfg);

    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let values: Vec<f64> = soft
        .iter()
        .zip(holes.values())
        .map(|(&s, &h)| {
            let base = if h != 0.0 { 0.0 } else { cfg.contrast * s };
            let n = if cfg.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            (base + n).clamp(0.0, 1.0)
        })
        .collect();
    let intensity = Grid::from_values(dims, values)?;
    Ok(Scene {
        forest,
        intensity,
        labels,
    })
}
