//! Iterative tracing: geometry step, centerline snap, boundary stop.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::codec::{decode, resolve_sign};
use crate::error::{Error, Result};
use crate::geometry::{point_to_segment, step, Branch, BranchForest, CenterNode, Point, UnitVector};
use crate::grid::Grid;
use crate::provider::{FeatureQuery, FeatureResponse, Provider, MIN_RADIUS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub centerline_threshold: f64,
    pub boundary_threshold: f64,
    pub history_len: usize,
    pub max_steps: usize,
    pub revisit_radius: f64,
    pub bidirectional: bool,
    /// Step by the predicted radius and direction. When off, steps have
    /// length `fixed_step` along the previous heading.
    pub use_geometry: bool,
    /// Project each step onto the nearest confident centerline voxel.
    pub use_snapping: bool,
    pub fixed_step: f64,
    pub min_branch_nodes: usize,
    /// Drop nodes at the end of a branch that never snapped back onto the
    /// centerline. Only applies with snapping on.
    pub trim_unsnapped_ends: bool,
    /// Passes of a [1, 2, 1] filter over the interior node positions of each
    /// finished branch.
    pub smoothing_passes: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            centerline_threshold: 0.5,
            boundary_threshold: 0.5,
            history_len: 4,
            max_steps: 10_000,
            revisit_radius: 1.0,
            bidirectional: true,
            use_geometry: true,
            use_snapping: true,
            fixed_step: 1.0,
            min_branch_nodes: 3,
            trim_unsnapped_ends: true,
            smoothing_passes: 1,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("centerline_threshold", self.centerline_threshold),
            ("boundary_threshold", self.boundary_threshold),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {t}")));
            }
        }
        if self.history_len == 0 || self.max_steps == 0 {
            return Err(Error::Config("history_len and max_steps must be positive".into()));
        }
        if !(self.revisit_radius > 0.0 && self.revisit_radius.is_finite()) {
            return Err(Error::Config(format!(
                "revisit_radius must be positive, got {}",
                self.revisit_radius
            )));
        }
        if !(self.fixed_step > 0.0 && self.fixed_step.is_finite()) {
            return Err(Error::Config(format!(
                "fixed_step must be positive, got {}",
                self.fixed_step
            )));
        }
        Ok(())
    }
}

/// Snap window radius in voxels for a step radius.
pub fn snap_window(r_hat: f64) -> usize {
    ((2.0 * r_hat).ceil().max(2.0)) as usize
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Snap<const D: usize> {
    pub point: Point<D>,
    /// False when no confident voxel lay in the window and the input point
    /// was returned unchanged.
    pub snapped: bool,
}

/// Nearest voxel center within the window whose centerline probability
/// exceeds `threshold`. Ties go to the lexicographically smallest index.
pub fn snap<const D: usize>(
    c_tilde: &Point<D>,
    centerline: &Grid<D>,
    r_hat: f64,
    threshold: f64,
) -> Snap<D> {
    snap_excluding(c_tilde, centerline, r_hat, threshold, |_| false)
}

/// [`snap`] restricted to voxels for which `exclude` is false.
pub fn snap_excluding<const D: usize>(
    c_tilde: &Point<D>,
    centerline: &Grid<D>,
    r_hat: f64,
    threshold: f64,
    exclude: impl Fn(&Point<D>) -> bool,
) -> Snap<D> {
    let w = snap_window(r_hat) as f64;
    let dims = *centerline.dims();
    let mut lo = [0usize; D];
    let mut hi = [0usize; D];
    for a in 0..D {
        let l = (c_tilde.0[a] - w).ceil().max(0.0);
        let h = (c_tilde.0[a] + w).floor().min(dims[a] as f64 - 1.0);
        if !(l <= h) {
            return Snap {
                point: *c_tilde,
                snapped: false,
            };
        }
        lo[a] = l as usize;
        hi[a] = h as usize;
    }
    let mut best: Option<(f64, [usize; D])> = None;
    let mut idx = lo;
    loop {
        let q = Point::from_index(idx);
        let d2 = q.distance_squared(c_tilde);
        if d2 <= w * w
            && centerline.get(idx) > threshold
            && best.is_none_or(|(b, _)| d2 < b)
            && !exclude(&q)
        {
            best = Some((d2, idx));
        }
        let mut axis = D;
        loop {
            if axis == 0 {
                return match best {
                    Some((_, i)) => Snap {
                        point: Point::from_index(i),
                        snapped: true,
                    },
                    None => Snap {
                        point: *c_tilde,
                        snapped: false,
                    },
                };
            }
            axis -= 1;
            if idx[axis] < hi[axis] {
                idx[axis] += 1;
                break;
            }
            idx[axis] = lo[axis];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The start point failed the boundary test or was already visited.
    Rejected,
    Boundary,
    Revisit,
    OutOfBounds,
    MaxSteps,
}

#[derive(Clone, Copy, Debug)]
enum Stamp {
    Path(usize),
    Cover(usize),
}

/// Sparse record of what has been traced. The path layer holds the accepted
/// steps as tapered tubes, registered in every voxel close enough to need an
/// exact distance check; the coverage layer marks the same tubes on the
/// voxel grid and suppresses later seeds. Both extend `revisit_radius`
/// beyond the node radii.
#[derive(Clone, Debug)]
pub struct Visited<const D: usize> {
    dims: [usize; D],
    radius: f64,
    pieces: Vec<Piece<D>>,
    path: HashMap<usize, Vec<u32>>,
    coverage: HashSet<usize>,
    journal: Vec<Stamp>,
}

#[derive(Clone, Copy, Debug)]
struct Piece<const D: usize> {
    a: Point<D>,
    b: Point<D>,
    ra: f64,
    rb: f64,
}

impl<const D: usize> Piece<D> {
    /// Distance from `p` to the piece axis and the tube radius there.
    fn reach(&self, p: &Point<D>) -> (f64, f64) {
        let (d, g) = point_to_segment(p, &self.a, &self.b);
        (d, self.ra + g * (self.rb - self.ra))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Checkpoint {
    pieces: usize,
    journal: usize,
}

impl<const D: usize> Visited<D> {
    pub fn new(dims: [usize; D], revisit_radius: f64) -> Self {
        Visited {
            dims,
            radius: revisit_radius,
            pieces: Vec::new(),
            path: HashMap::new(),
            coverage: HashSet::new(),
            journal: Vec::new(),
        }
    }

    fn flat(&self, idx: [usize; D]) -> usize {
        idx.iter().zip(self.dims.iter()).fold(0, |acc, (i, d)| acc * d + i)
    }

    /// Voxels whose center lies within `reach` of segment `a`–`b`.
    fn voxels_near(&self, a: &Point<D>, b: &Point<D>, reach: f64, mut f: impl FnMut(usize)) {
        let mut lo = [0usize; D];
        let mut hi = [0usize; D];
        for k in 0..D {
            let l = (a.0[k].min(b.0[k]) - reach).ceil().max(0.0);
            let h = (a.0[k].max(b.0[k]) + reach)
                .floor()
                .min(self.dims[k] as f64 - 1.0);
            if !(l <= h) {
                return;
            }
            lo[k] = l as usize;
            hi[k] = h as usize;
        }
        let mut idx = lo;
        loop {
            let (d, _) = point_to_segment(&Point::from_index(idx), a, b);
            if d <= reach {
                f(self.flat(idx));
            }
            let mut k = D;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                if idx[k] < hi[k] {
                    idx[k] += 1;
                    break;
                }
                idx[k] = lo[k];
            }
        }
    }

    /// Records an accepted step from `a` to `b` and returns its id.
    pub fn stamp(&mut self, a: &CenterNode<D>, b: &CenterNode<D>) -> u32 {
        let id = self.pieces.len() as u32;
        let piece = Piece {
            a: a.position,
            b: b.position,
            ra: a.radius + self.radius,
            rb: b.radius + self.radius,
        };
        self.pieces.push(piece);
        let outer = piece.ra.max(piece.rb);
        let mut near = Vec::new();
        self.voxels_near(&piece.a, &piece.b, outer + 0.5 * (D as f64).sqrt(), |v| near.push(v));
        for v in near {
            self.path.entry(v).or_default().push(id);
            self.journal.push(Stamp::Path(v));
            let (d, r) = piece.reach(&Point::from_index(crate::grid::unravel(&self.dims, v)));
            if d <= r && self.coverage.insert(v) {
                self.journal.push(Stamp::Cover(v));
            }
        }
        id
    }

    /// True when `p` lies strictly within the revisit radius of the tube
    /// around an accepted step.
    pub fn hits(&self, p: &Point<D>) -> bool {
        self.hits_except(p, |_| false)
    }

    /// [`Visited::hits`] ignoring the steps for which `skip` is true.
    pub fn hits_except(&self, p: &Point<D>, skip: impl Fn(u32) -> bool) -> bool {
        let Some(v) = p.nearest_voxel(&self.dims) else {
            return false;
        };
        self.path.get(&self.flat(v)).is_some_and(|ids| {
            ids.iter().any(|&i| {
                let (d, r) = self.pieces[i as usize].reach(p);
                d < r && !skip(i)
            })
        })
    }

    pub fn covers(&self, idx: [usize; D]) -> bool {
        self.coverage.contains(&self.flat(idx))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            pieces: self.pieces.len(),
            journal: self.journal.len(),
        }
    }

    pub fn rollback(&mut self, cp: Checkpoint) {
        while self.journal.len() > cp.journal {
            match self.journal.pop().expect("non-empty") {
                Stamp::Path(v) => {
                    let ids = self.path.get_mut(&v).expect("stamped");
                    ids.pop();
                    if ids.is_empty() {
                        self.path.remove(&v);
                    }
                }
                Stamp::Cover(v) => {
                    self.coverage.remove(&v);
                }
            }
        }
        self.pieces.truncate(cp.pieces);
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceStats {
    pub steps: usize,
    pub unsnapped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceOutcome<const D: usize> {
    pub branch: Branch<D>,
    pub stop: StopReason,
    pub stats: TraceStats,
}

pub struct Tracer<'a, const D: usize> {
    provider: &'a Provider<D>,
    cfg: TraceConfig,
    visited: Visited<D>,
    max_radius: f64,
}

impl<'a, const D: usize> Tracer<'a, D> {
    pub fn new(provider: &'a Provider<D>, cfg: TraceConfig) -> Result<Self> {
        cfg.validate()?;
        let dims = *provider.dims();
        let diag = dims.iter().map(|&d| (d * d) as f64).sum::<f64>().sqrt();
        Ok(Tracer {
            provider,
            cfg,
            visited: Visited::new(dims, cfg.revisit_radius),
            max_radius: (diag / 4.0).max(MIN_RADIUS),
        })
    }

    pub fn visited(&self) -> &Visited<D> {
        &self.visited
    }

    fn query(&self, p: Point<D>, history: &[CenterNode<D>]) -> (FeatureResponse, f64) {
        let start = history.len().saturating_sub(self.cfg.history_len);
        let hist: Vec<Point<D>> = history[start..].iter().map(|n| n.position).collect();
        let resp = self.provider.query(&FeatureQuery {
            position: p,
            history: &hist,
        });
        let r = resp.radius.clamp(MIN_RADIUS, self.max_radius);
        (resp, r)
    }

    fn heading_at(&self, resp: &FeatureResponse) -> UnitVector<D> {
        decode::<D>(&resp.direction, self.provider.scheme()).unwrap_or_else(|_| UnitVector::axis(0))
    }

    /// Accepts the start point if it passes the boundary and revisit tests.
    fn start(&mut self, seed: Point<D>) -> Option<(CenterNode<D>, FeatureResponse, u32)> {
        if !self.provider.contains(&seed) || self.visited.hits(&seed) {
            return None;
        }
        let (resp, r) = self.query(seed, &[]);
        if resp.boundary_prob <= self.cfg.boundary_threshold {
            return None;
        }
        let node = CenterNode::new(seed, r);
        let id = self.visited.stamp(&node, &node);
        Some((node, resp, id))
    }

    /// True when the segment `a`-`b` stays above the boundary threshold,
    /// checked every half voxel.
    fn inside(&self, a: &Point<D>, b: &Point<D>) -> bool {
        let boundary = &self.provider.maps().boundary;
        let n = (a.distance(b) * 2.0).ceil().max(1.0) as usize;
        (1..=n).all(|k| {
            boundary
                .sample(&a.lerp(b, k as f64 / n as f64))
                .is_some_and(|v| v > self.cfg.boundary_threshold)
        })
    }

    /// Walks from an accepted node, returning the nodes after it and the
    /// ids of the steps that reached them.
    ///
    /// `behind` lists steps of the same chain with their arc position
    /// relative to `first`. Steps within two footprint radii of arc length
    /// behind the head are ignored by the revisit test, since every new
    /// node lies inside the footprint of the one before it.
    fn extend(
        &mut self,
        first: CenterNode<D>,
        first_resp: FeatureResponse,
        heading: UnitVector<D>,
        mut behind: Vec<(u32, f64)>,
        stats: &mut TraceStats,
    ) -> (Vec<CenterNode<D>>, Vec<u32>, StopReason) {
        let cfg = self.cfg;
        let mut nodes = vec![first];
        let mut ids = vec![u32::MAX];
        let mut snapped = vec![true];
        let mut stop = StopReason::MaxSteps;
        let mut resp = first_resp;
        let mut prev = heading;
        let mut arc = 0.0;
        for _ in 0..cfg.max_steps {
            let c = *nodes.last().expect("non-empty");
            let window = 2.0 * (c.radius + cfg.revisit_radius);
            behind.retain(|&(_, pos)| arc - pos < window);
            let recent = |i: u32| behind.iter().any(|&(j, _)| j == i);
            let (xi, reach) = if cfg.use_geometry {
                let xi = decode::<D>(&resp.direction, self.provider.scheme())
                    .map(|x| resolve_sign(&x, &prev))
                    .unwrap_or(prev);
                (xi, c.radius)
            } else {
                (prev, cfg.fixed_step)
            };
            let c_tilde = step(&c.position, reach, &xi);
            let (c_hat, on_ridge) = if cfg.use_snapping {
                // successors lie ahead of the current node and its last step, off
                // the traced path and reachable without leaving the structure
                let s = snap_excluding(
                    &c_tilde,
                    &self.provider.maps().centerline,
                    reach,
                    cfg.centerline_threshold,
                    |q| {
                        let d = *q - c.position;
                        d.dot(&xi.as_point()) <= 0.0
                            || d.dot(&prev.as_point()) <= 0.0
                            || self.visited.hits_except(q, recent)
                            || !self.inside(&c.position, q)
                    },
                );
                if !s.snapped {
                    stats.unsnapped += 1;
                }
                (s.point, s.snapped)
            } else {
                (c_tilde, true)
            };
            if !c_hat.is_finite() || !self.provider.contains(&c_hat) {
                stop = StopReason::OutOfBounds;
                break;
            }
            let (next, r) = self.query(c_hat, &nodes);
            if next.boundary_prob <= cfg.boundary_threshold {
                stop = StopReason::Boundary;
                break;
            }
            if self.visited.hits_except(&c_hat, recent) {
                stop = StopReason::Revisit;
                break;
            }
            let node = CenterNode::new(c_hat, r);
            let id = self.visited.stamp(&c, &node);
            arc += c.position.distance(&c_hat);
            behind.push((id, arc));
            prev = UnitVector::new((c_hat - c.position).0).unwrap_or(prev);
            nodes.push(node);
            ids.push(id);
            snapped.push(on_ridge);
            resp = next;
            stats.steps += 1;
        }
        if cfg.use_snapping && cfg.trim_unsnapped_ends {
            let keep = snapped.iter().rposition(|&s| s).map_or(1, |i| i + 1);
            nodes.truncate(keep);
            ids.truncate(keep);
        }
        (nodes.split_off(1), ids.split_off(1), stop)
    }

    /// Single-direction trace from `seed`. The first step follows the
    /// provider direction at the seed, signed by `heading` when given.
    pub fn trace_branch(&mut self, seed: Point<D>, heading: Option<UnitVector<D>>) -> TraceOutcome<D> {
        let mut stats = TraceStats::default();
        let Some((node, resp, id)) = self.start(seed) else {
            return TraceOutcome {
                branch: Branch::new(Vec::new()),
                stop: StopReason::Rejected,
                stats,
            };
        };
        let h = self.heading_at(&resp);
        let h = heading.map_or(h, |g| resolve_sign(&h, &g));
        let (rest, _, stop) = self.extend(node, resp, h, vec![(id, 0.0)], &mut stats);
        let mut nodes = vec![node];
        nodes.extend(rest);
        smooth(&mut nodes, self.cfg.smoothing_passes);
        TraceOutcome {
            branch: Branch::new(nodes),
            stop,
            stats,
        }
    }

    /// Bidirectional trace from `seed`; the result runs from the far end of
    /// the negative half through the seed to the end of the positive half.
    /// Branches below `min_branch_nodes` are undone and returned empty.
    pub fn trace_seed(&mut self, seed: Point<D>) -> Branch<D> {
        let cp = self.visited.checkpoint();
        let mut stats = TraceStats::default();
        let Some((node, resp, id)) = self.start(seed) else {
            return Branch::new(Vec::new());
        };
        let h = self.heading_at(&resp);
        let (fwd, fwd_ids, _) = self.extend(node, resp.clone(), h, vec![(id, 0.0)], &mut stats);
        let mut nodes = Vec::new();
        if self.cfg.bidirectional {
            // the positive half lies behind the seed when walking the other way
            let mut behind = vec![(id, 0.0)];
            let mut arc = 0.0;
            let mut last = node.position;
            for (n, &i) in fwd.iter().zip(&fwd_ids) {
                behind.push((i, -arc));
                arc += last.distance(&n.position);
                last = n.position;
            }
            let (bwd, _, _) = self.extend(node, resp, -h, behind, &mut stats);
            nodes.extend(bwd.into_iter().rev());
        }
        nodes.push(node);
        nodes.extend(fwd);
        if nodes.len() < self.cfg.min_branch_nodes {
            self.visited.rollback(cp);
            return Branch::new(Vec::new());
        }
        smooth(&mut nodes, self.cfg.smoothing_passes);
        Branch::new(nodes)
    }

    pub fn trace_all(&mut self) -> BranchForest<D> {
        let seeds = generate_seeds(self.provider, &self.cfg);
        let mut branches = Vec::new();
        for idx in seeds {
            if self.visited.covers(idx) {
                continue;
            }
            let b = self.trace_seed(Point::from_index(idx));
            if !b.is_empty() {
                branches.push(b);
            }
        }
        BranchForest::new(branches)
    }
}

fn smooth<const D: usize>(nodes: &mut [CenterNode<D>], passes: usize) {
    for _ in 0..passes {
        let p: Vec<Point<D>> = nodes.iter().map(|n| n.position).collect();
        for i in 1..p.len().saturating_sub(1) {
            nodes[i].position = (p[i - 1] + p[i] * 2.0 + p[i + 1]) * 0.25;
        }
    }
}

/// Candidate seed voxels: centerline probability above threshold, most
/// confident first, ties in index order.
pub fn generate_seeds<const D: usize>(provider: &Provider<D>, cfg: &TraceConfig) -> Vec<[usize; D]> {
    let c = &provider.maps().centerline;
    let mut cand: Vec<(f64, usize)> = c
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > cfg.centerline_threshold)
        .map(|(i, v)| (*v, i))
        .collect();
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    cand.into_iter().map(|(_, i)| c.unravel(i)).collect()
}

/// Single-direction trace in a fresh tracing state.
pub fn trace_branch<const D: usize>(
    seed: Point<D>,
    provider: &Provider<D>,
    cfg: &TraceConfig,
) -> Result<TraceOutcome<D>> {
    Ok(Tracer::new(provider, *cfg)?.trace_branch(seed, None))
}

pub fn trace_all<const D: usize>(provider: &Provider<D>, cfg: &TraceConfig) -> Result<BranchForest<D>> {
    Ok(Tracer::new(provider, *cfg)?.trace_all())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::BinScheme;
    use crate::exec::Exec;
    use crate::provider::build_oracle;
    use crate::synth::make_labels;
    use rand::{Rng, SeedableRng};

    fn tube(a: [f64; 3], b: [f64; 3], r: f64) -> Branch<3> {
        Branch::new(vec![CenterNode::new(Point(a), r), CenterNode::new(Point(b), r)])
    }

    fn oracle(forest: &BranchForest<3>, dims: [usize; 3]) -> Provider<3> {
        let labels = make_labels(forest, dims, 3.0, Exec::default()).unwrap();
        build_oracle(&labels, BinScheme::default(), Exec::default()).unwrap()
    }

    fn brute_snap(c: &Point<3>, g: &Grid<3>, r: f64, t: f64) -> Option<[usize; 3]> {
        let w = snap_window(r) as f64;
        let mut best: Option<(f64, [usize; 3])> = None;
        for i in 0..g.len() {
            let idx = g.unravel(i);
            let d2 = Point::from_index(idx).distance_squared(c);
            if d2 <= w * w && g.get(idx) > t {
                let better = match best {
                    None => true,
                    Some((b, bi)) => d2 < b || (d2 == b && idx < bi),
                };
                if better {
                    best = Some((d2, idx));
                }
            }
        }
        best.map(|(_, i)| i)
    }

    #[test]
    fn snap_examples() {
        let mut g = Grid::<3>::zeros([10, 10, 10]);
        g.set([5, 5, 5], 0.9);
        g.set([6, 5, 5], 0.9);
        let s = snap(&Point([5.4, 5.0, 5.0]), &g, 1.0, 0.5);
        assert!(s.snapped);
        assert_eq!(s.point, Point([5.0, 5.0, 5.0]));

        let mut g = Grid::<3>::zeros([10, 10, 10]);
        g.set([4, 5, 5], 0.9);
        g.set([6, 5, 5], 0.9);
        assert_eq!(snap(&Point([5.0, 5.0, 5.0]), &g, 1.0, 0.5).point, Point([4.0, 5.0, 5.0]));

        let empty = Grid::<3>::zeros([10, 10, 10]);
        let s = snap(&Point([5.2, 5.0, 5.0]), &empty, 1.0, 0.5);
        assert!(!s.snapped);
        assert_eq!(s.point, Point([5.2, 5.0, 5.0]));
        assert_eq!(snap_window(0.5), 2);
        assert_eq!(snap_window(1.6), 4);
    }

    #[test]
    fn snap_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let vals = (0..12 * 12 * 12)
                .map(|_| if rng.random_bool(0.08) { rng.random_range(0.5..1.0) } else { 0.0 })
                .collect();
            let g = Grid::from_values([12, 12, 12], vals).unwrap();
            let c = Point([
                rng.random_range(-1.0..12.0),
                rng.random_range(-1.0..12.0),
                rng.random_range(-1.0..12.0),
            ]);
            let r = rng.random_range(0.3..2.5);
            let s = snap(&c, &g, r, 0.5);
            match brute_snap(&c, &g, r, 0.5) {
                Some(i) => assert_eq!(s.point, Point::from_index(i)),
                None => assert!(!s.snapped && s.point == c),
            }
        }
    }

    #[test]
    fn straight_tube_from_one_end() {
        let forest = BranchForest::new(vec![tube([4.0, 12.0, 12.0], [36.0, 12.0, 12.0], 2.0)]);
        let p = oracle(&forest, [40, 24, 24]);
        let out = trace_branch(Point([4.0, 12.0, 12.0]), &p, &TraceConfig::default()).unwrap();
        let b = &out.branch;
        assert!(b.length() >= 0.95 * 32.0, "length {}", b.length());
        for n in &b.nodes {
            assert!(p.query(&FeatureQuery { position: n.position, history: &[] }).boundary_prob > 0.5);
            let lateral = ((n.position.0[1] - 12.0).powi(2) + (n.position.0[2] - 12.0).powi(2)).sqrt();
            assert!(lateral <= 0.5);
        }
    }

    #[test]
    fn background_seed_is_rejected() {
        let forest = BranchForest::new(vec![tube([4.0, 12.0, 12.0], [20.0, 12.0, 12.0], 2.0)]);
        let p = oracle(&forest, [24, 24, 24]);
        let out = trace_branch(Point([3.0, 3.0, 3.0]), &p, &TraceConfig::default()).unwrap();
        assert!(out.branch.is_empty());
        assert_eq!(out.stop, StopReason::Rejected);
    }

    #[test]
    fn closed_loop_terminates() {
        let n = 40;
        let nodes: Vec<_> = (0..=n)
            .map(|i| {
                let a = i as f64 / n as f64 * std::f64::consts::TAU;
                CenterNode::new(Point([16.0 + 10.0 * a.cos(), 16.0 + 10.0 * a.sin(), 8.0]), 1.5)
            })
            .collect();
        let forest = BranchForest::new(vec![Branch::new(nodes)]);
        let p = oracle(&forest, [32, 32, 16]);
        let cfg = TraceConfig::default();
        let out = trace_branch(Point([26.0, 16.0, 8.0]), &p, &cfg).unwrap();
        assert_eq!(out.stop, StopReason::Revisit);
        assert!(out.stats.steps < cfg.max_steps);
        assert!(out.branch.length() > 50.0);
    }

    #[test]
    fn bidirectional_from_midpoint_is_symmetric() {
        let forest = BranchForest::new(vec![tube([4.0, 12.0, 12.0], [36.0, 12.0, 12.0], 2.0)]);
        let p = oracle(&forest, [41, 24, 24]);
        let mut t = Tracer::new(&p, TraceConfig::default()).unwrap();
        let b = t.trace_seed(Point([20.0, 12.0, 12.0]));
        let mid = b.nodes.iter().position(|n| n.position == Point([20.0, 12.0, 12.0])).unwrap();
        let after = b.len() - 1 - mid;
        assert!(mid.abs_diff(after) <= 1, "{mid} vs {after}");
    }

    #[test]
    fn seeds_and_forest() {
        let forest = BranchForest::new(vec![tube([4.0, 12.0, 12.0], [36.0, 12.0, 12.0], 1.5)]);
        let dims = [40, 24, 24];
        let p = oracle(&forest, dims);
        let seeds = generate_seeds(&p, &TraceConfig::default());
        let labels = make_labels(&forest, dims, 3.0, Exec::default()).unwrap();
        assert_eq!(labels.centerline.get(seeds[0]), 1.0);
        assert_eq!(seeds, generate_seeds(&p, &TraceConfig::default()));

        let traced = trace_all(&p, &TraceConfig::default()).unwrap();
        assert_eq!(traced.branches.len(), 1);
        assert_eq!(traced, trace_all(&p, &TraceConfig::default()).unwrap());

        let blank = oracle(&BranchForest::new(Vec::new()), dims);
        assert!(generate_seeds(&blank, &TraceConfig::default()).is_empty());
        assert!(trace_all(&blank, &TraceConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn parallel_tubes_stay_apart() {
        let forest = BranchForest::new(vec![
            tube([4.0, 12.0, 12.0], [36.0, 12.0, 12.0], 1.5),
            tube([4.0, 18.0, 12.0], [36.0, 18.0, 12.0], 1.5),
        ]);
        let p = oracle(&forest, [40, 30, 24]);
        let traced = trace_all(&p, &TraceConfig::default()).unwrap();
        assert_eq!(traced.branches.len(), 2);
        for b in &traced.branches {
            let y0 = b.nodes[0].position.0[1];
            assert!(b.nodes.iter().all(|n| (n.position.0[1] - y0).abs() < 2.0));
        }
    }

    #[test]
    fn visited_rollback_restores_state() {
        let mut v = Visited::<3>::new([10, 10, 10], 1.0);
        let a = CenterNode::new(Point([2.0, 2.0, 2.0]), 1.0);
        let b = CenterNode::new(Point([6.0, 2.0, 2.0]), 1.0);
        v.stamp(&a, &a);
        let cp = v.checkpoint();
        v.stamp(&a, &b);
        assert!(v.hits(&Point([4.0, 2.5, 2.0])));
        assert!(v.covers([5, 2, 2]));
        v.rollback(cp);
        assert!(!v.hits(&Point([4.0, 2.5, 2.0])));
        assert!(!v.covers([5, 2, 2]));
        // node radius plus revisit radius around the seed
        assert!(v.hits(&Point([2.0, 3.9, 2.0])));
        assert!(!v.hits(&Point([2.0, 4.0, 2.0])));
    }
}
