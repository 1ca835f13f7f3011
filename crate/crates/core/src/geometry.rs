//! Dimension-generic points, directions, centerline branches and normal frames.
//!
//! All coordinates are continuous voxel-index coordinates: the center of voxel
//! `[i, j, k]` sits at `(i, j, k)`.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point<const D: usize>(pub [f64; D]);

impl<const D: usize> Point<D> {
    pub const ORIGIN: Self = Point([0.0; D]);

    pub fn new(coords: [f64; D]) -> Self {
        Point(coords)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (*self - *other).norm()
    }

    pub fn distance_squared(&self, other: &Self) -> f64 {
        (*self - *other).norm_squared()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    /// `(1 - t) * self + t * other`
    pub fn lerp(&self, other: &Self, t: f64) -> Self {
        Point(std::array::from_fn(|i| {
            (1.0 - t) * self.0[i] + t * other.0[i]
        }))
    }

    /// Nearest voxel index, or `None` if outside `dims`.
    pub fn nearest_voxel(&self, dims: &[usize; D]) -> Option<[usize; D]> {
        let mut idx = [0usize; D];
        for i in 0..D {
            let r = self.0[i].round();
            if !(r >= 0.0 && r < dims[i] as f64) {
                return None;
            }
            idx[i] = r as usize;
        }
        Some(idx)
    }

    pub fn from_index(idx: [usize; D]) -> Self {
        Point(idx.map(|v| v as f64))
    }
}

impl<const D: usize> Add for Point<D> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Point(std::array::from_fn(|i| self.0[i] + rhs.0[i]))
    }
}

impl<const D: usize> Sub for Point<D> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Point(std::array::from_fn(|i| self.0[i] - rhs.0[i]))
    }
}

impl<const D: usize> Mul<f64> for Point<D> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Point(self.0.map(|c| c * rhs))
    }
}

impl<const D: usize> Neg for Point<D> {
    type Output = Self;
    fn neg(self) -> Self {
        Point(self.0.map(|c| -c))
    }
}

/// A direction with Euclidean norm 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitVector<const D: usize>([f64; D]);

impl<const D: usize> UnitVector<D> {
    /// Normalizes `v`. Fails for (near) zero or non-finite input.
    pub fn new(v: [f64; D]) -> Result<Self> {
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::ZeroVector);
        }
        Ok(UnitVector(v.map(|c| c / n)))
    }

    /// Unit vector along axis `i`.
    pub fn axis(i: usize) -> Self {
        let mut v = [0.0; D];
        v[i] = 1.0;
        UnitVector(v)
    }

    pub fn components(&self) -> &[f64; D] {
        &self.0
    }

    pub fn as_point(&self) -> Point<D> {
        Point(self.0)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }
}

impl<const D: usize> Neg for UnitVector<D> {
    type Output = Self;
    fn neg(self) -> Self {
        UnitVector(self.0.map(|c| -c))
    }
}

/// One sampled centerline point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CenterNode<const D: usize> {
    pub position: Point<D>,
    pub radius: f64,
    pub direction: Option<UnitVector<D>>,
}

impl<const D: usize> CenterNode<D> {
    pub fn new(position: Point<D>, radius: f64) -> Self {
        CenterNode {
            position,
            radius,
            direction: None,
        }
    }
}

/// Reference to node `node` of branch `branch` within a forest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub branch: usize,
    pub node: usize,
}

/// An ordered polyline of centerline nodes. Node `i > 0` has node `i - 1` as
/// its parent; the first node's parent is `parent` (or none for a root).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Branch<const D: usize> {
    pub nodes: Vec<CenterNode<D>>,
    pub parent: Option<NodeRef>,
}

impl<const D: usize> Branch<D> {
    pub fn new(nodes: Vec<CenterNode<D>>) -> Self {
        Branch {
            nodes,
            parent: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Consecutive node pairs.
    pub fn segments(&self) -> impl Iterator<Item = (&CenterNode<D>, &CenterNode<D>)> {
        self.nodes.windows(2).map(|w| (&w[0], &w[1]))
    }

    pub fn length(&self) -> f64 {
        self.segments()
            .map(|(a, b)| a.position.distance(&b.position))
            .sum()
    }
}

/// A set of branches linked into a tree (or several trees).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct BranchForest<const D: usize> {
    pub branches: Vec<Branch<D>>,
}

impl<const D: usize> BranchForest<D> {
    pub fn new(branches: Vec<Branch<D>>) -> Self {
        BranchForest { branches }
    }

    pub fn is_empty(&self) -> bool {
        self.branches.iter().all(|b| b.is_empty())
    }

    pub fn node_count(&self) -> usize {
        self.branches.iter().map(|b| b.len()).sum()
    }

    pub fn total_length(&self) -> f64 {
        self.branches.iter().map(|b| b.length()).sum()
    }

    pub fn node(&self, r: NodeRef) -> Option<&CenterNode<D>> {
        self.branches.get(r.branch).and_then(|b| b.nodes.get(r.node))
    }

    /// Checks finiteness, positive radii, distinct consecutive positions and
    /// that every parent link points into an earlier branch (which makes the
    /// parent graph acyclic).
    pub fn validate(&self) -> Result<()> {
        for (bi, b) in self.branches.iter().enumerate() {
            for (ni, n) in b.nodes.iter().enumerate() {
                if !n.position.is_finite() {
                    return Err(Error::Forest(format!(
                        "branch {bi} node {ni}: non-finite position"
                    )));
                }
                if !(n.radius > 0.0 && n.radius.is_finite()) {
                    return Err(Error::Forest(format!(
                        "branch {bi} node {ni}: radius {} must be positive",
                        n.radius
                    )));
                }
            }
            if let Some((i, _)) = b
                .nodes
                .windows(2)
                .enumerate()
                .find(|(_, w)| w[0].position == w[1].position)
            {
                return Err(Error::Forest(format!(
                    "branch {bi}: nodes {i} and {} coincide",
                    i + 1
                )));
            }
            if let Some(p) = b.parent {
                if p.branch >= bi || self.node(p).is_none() {
                    return Err(Error::Forest(format!(
                        "branch {bi}: invalid parent link {}:{}",
                        p.branch, p.node
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Orthonormal basis of the plane perpendicular to an axis. In 2D the plane is
/// a line and `zeta` is `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalFrame<const D: usize> {
    pub nu: UnitVector<D>,
    pub zeta: Option<UnitVector<D>>,
}

/// Which reference axis seeds the normal frame. Any choice yields a valid
/// orthonormal frame; the alternate convention exists to check that nothing
/// downstream depends on the choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FrameConvention {
    #[default]
    Standard,
    Alternate,
}

/// `(t - t_i) / (t_{i+1} - t_i)`.
pub fn gamma(t: f64, t_i: f64, t_ip1: f64) -> Result<f64> {
    if !(t_ip1 > t_i) {
        return Err(Error::DegenerateInterval {
            start: t_i,
            end: t_ip1,
        });
    }
    Ok((t - t_i) / (t_ip1 - t_i))
}

/// Advances `c` by `r` along `xi`.
pub fn step<const D: usize>(c: &Point<D>, r: f64, xi: &UnitVector<D>) -> Point<D> {
    Point(std::array::from_fn(|i| c.0[i] + r * xi.0[i]))
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn to_dim<const D: usize, const E: usize>(v: [f64; E]) -> [f64; D] {
    std::array::from_fn(|i| v[i])
}

pub fn perpendicular_frame<const D: usize>(axis: &UnitVector<D>) -> NormalFrame<D> {
    perpendicular_frame_with(axis, FrameConvention::Standard)
}

/// Builds the frame spanning the plane normal to `axis`.
///
/// Standard convention: `nu = axis × ẑ` unless the axis is within ~26° of ẑ,
/// then `nu = axis × x̂`; `zeta = axis × nu`. In 2D `nu` is the axis rotated by
/// +90°.
pub fn perpendicular_frame_with<const D: usize>(
    axis: &UnitVector<D>,
    convention: FrameConvention,
) -> NormalFrame<D> {
    match D {
        2 => {
            let [x, y] = [axis.0[0], axis.0[1]];
            let v = match convention {
                FrameConvention::Standard => [-y, x],
                FrameConvention::Alternate => [y, -x],
            };
            NormalFrame {
                nu: UnitVector(to_dim(v)),
                zeta: None,
            }
        }
        3 => {
            let a = [axis.0[0], axis.0[1], axis.0[2]];
            let (primary, fallback, pick) = match convention {
                FrameConvention::Standard => ([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 2),
                FrameConvention::Alternate => ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0),
            };
            let reference = if a[pick].abs() < 0.9 { primary } else { fallback };
            let nu = normalize3(cross(a, reference));
            let zeta = normalize3(cross(a, nu));
            NormalFrame {
                nu: UnitVector(to_dim(nu)),
                zeta: Some(UnitVector(to_dim(zeta))),
            }
        }
        _ => panic!("normal frames are defined for D = 2 or 3, got {D}"),
    }
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Distance from `p` to segment `ab` and the clamped projection parameter.
pub fn point_to_segment<const D: usize>(p: &Point<D>, a: &Point<D>, b: &Point<D>) -> (f64, f64) {
    let ab = *b - *a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p.distance(a), 0.0);
    }
    let g = ((*p - *a).dot(&ab) / len2).clamp(0.0, 1.0);
    let foot = a.lerp(b, g);
    (p.distance(&foot), g)
}

/// Subdivides each segment into equal pieces no longer than `spacing`.
/// Original nodes are kept, so arc length is preserved; radii are linearly
/// interpolated and directions copied from the segment start.
pub fn resample<const D: usize>(branch: &Branch<D>, spacing: f64) -> Result<Branch<D>> {
    if !(spacing > 0.0) {
        return Err(Error::InvalidValue(format!(
            "resample spacing {spacing} must be positive"
        )));
    }
    if branch.len() < 2 {
        return Ok(branch.clone());
    }
    let mut nodes = Vec::with_capacity(branch.len());
    nodes.push(branch.nodes[0]);
    for (a, b) in branch.segments() {
        let len = a.position.distance(&b.position);
        let pieces = (len / spacing).ceil().max(1.0) as usize;
        for k in 1..pieces {
            let t = k as f64 / pieces as f64;
            nodes.push(CenterNode {
                position: a.position.lerp(&b.position, t),
                radius: (1.0 - t) * a.radius + t * b.radius,
                direction: a.direction,
            });
        }
        nodes.push(*b);
    }
    Ok(Branch {
        nodes,
        parent: branch.parent,
    })
}

/// Places nodes at equal arc-length intervals no longer than `spacing`,
/// both endpoints included, and returns them with that interval. Interior
/// vertices are not kept, so the chord length of the result can fall short
/// of the input where it bends.
pub fn resample_uniform<const D: usize>(branch: &Branch<D>, spacing: f64) -> Result<(Branch<D>, f64)> {
    if !(spacing > 0.0) {
        return Err(Error::InvalidValue(format!(
            "resample spacing {spacing} must be positive"
        )));
    }
    let total = branch.length();
    if branch.len() < 2 || total == 0.0 {
        return Ok((branch.clone(), 0.0));
    }
    let pieces = (total / spacing).ceil().max(1.0) as usize;
    let interval = total / pieces as f64;
    let mut nodes = Vec::with_capacity(pieces + 1);
    nodes.push(branch.nodes[0]);
    let mut segs = branch.segments().peekable();
    let mut start = 0.0;
    for k in 1..pieces {
        let t = k as f64 * interval;
        while let Some((a, b)) = segs.peek() {
            let len = a.position.distance(&b.position);
            if start + len >= t {
                break;
            }
            start += len;
            segs.next();
        }
        let (a, b) = segs.peek().expect("t lies before the end");
        let len = a.position.distance(&b.position);
        let g = ((t - start) / len).clamp(0.0, 1.0);
        nodes.push(CenterNode {
            position: a.position.lerp(&b.position, g),
            radius: (1.0 - g) * a.radius + g * b.radius,
            direction: a.direction,
        });
    }
    nodes.push(*branch.nodes.last().expect("non-empty"));
    Ok((
        Branch {
            nodes,
            parent: branch.parent,
        },
        interval,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit3() -> impl Strategy<Value = UnitVector<3>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-4)
            .prop_map(|(x, y, z)| UnitVector::new([x, y, z]).unwrap())
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma(2.0, 2.0, 4.0).unwrap(), 0.0);
        assert_eq!(gamma(4.0, 2.0, 4.0).unwrap(), 1.0);
        assert_eq!(gamma(3.0, 2.0, 4.0).unwrap(), 0.5);
        assert!(matches!(
            gamma(3.0, 4.0, 4.0),
            Err(Error::DegenerateInterval { .. })
        ));
    }

    #[test]
    fn step_examples() {
        let up = UnitVector::new([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(step(&Point([5.0, 5.0, 5.0]), 2.0, &up).0, [5.0, 5.0, 7.0]);
        let x = UnitVector::axis(0);
        assert_eq!(step(&Point::<3>::ORIGIN, 1.0, &x).0, [1.0, 0.0, 0.0]);
        let d = UnitVector::new([0.6, 0.8, 0.0]).unwrap();
        let p = step(&Point::<3>::ORIGIN, 2.0, &d);
        assert!((p.0[0] - 1.2).abs() < 1e-15 && (p.0[1] - 1.6).abs() < 1e-15);
        assert_eq!(p.0[2], 0.0);
    }

    #[test]
    fn frame_examples() {
        let f = perpendicular_frame(&UnitVector::<3>::axis(2));
        let (nu, zeta) = (f.nu, f.zeta.unwrap());
        let z = UnitVector::<3>::axis(2);
        assert!(nu.dot(&z).abs() < 1e-12 && zeta.dot(&z).abs() < 1e-12);
        assert!(nu.dot(&zeta).abs() < 1e-12);

        let f = perpendicular_frame(&UnitVector::<3>::axis(0));
        assert!((f.nu.dot(&f.nu) - 1.0).abs() < 1e-12);
        assert!((f.zeta.unwrap().dot(&f.zeta.unwrap()) - 1.0).abs() < 1e-12);

        let f2 = perpendicular_frame(&UnitVector::new([3.0, 4.0]).unwrap());
        assert_eq!(f2.zeta, None);
        assert_eq!(f2.nu.components(), &[-0.8, 0.6]);
    }

    #[test]
    fn frame_cross_product_recovers_axis() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let Ok(axis) = UnitVector::new(v) else {
                continue;
            };
            for conv in [FrameConvention::Standard, FrameConvention::Alternate] {
                let f = perpendicular_frame_with(&axis, conv);
                let nu = *f.nu.components();
                let zeta = *f.zeta.unwrap().components();
                let c = cross(nu, zeta);
                let s = c[0] * axis.0[0] + c[1] * axis.0[1] + c[2] * axis.0[2];
                assert!((s.abs() - 1.0).abs() < 1e-9);
                for i in 0..3 {
                    assert!((c[i] - s.signum() * axis.0[i]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn point_to_segment_examples() {
        let a = Point([0.0, 0.0, 0.0]);
        let b = Point([10.0, 0.0, 0.0]);
        assert_eq!(point_to_segment(&Point([5.0, 1.0, 0.0]), &a, &b), (1.0, 0.5));
        assert_eq!(point_to_segment(&Point([-3.0, 4.0, 0.0]), &a, &b), (5.0, 0.0));
        assert_eq!(point_to_segment(&a, &a, &b), (0.0, 0.0));
        assert_eq!(point_to_segment(&Point([3.0, 4.0, 0.0]), &a, &a), (5.0, 0.0));
    }

    fn straight(len: f64) -> Branch<3> {
        Branch::new(vec![
            CenterNode::new(Point([0.0, 0.0, 0.0]), 1.0),
            CenterNode::new(Point([len, 0.0, 0.0]), 2.0),
        ])
    }

    #[test]
    fn resample_examples() {
        let r = resample(&straight(10.0), 1.0).unwrap();
        assert_eq!(r.len(), 11);
        assert!((r.nodes[5].radius - 1.5).abs() < 1e-12);
        assert_eq!(r.nodes[10].position.0, [10.0, 0.0, 0.0]);

        let single = Branch::new(vec![CenterNode::new(Point([1.0, 2.0, 3.0]), 1.0)]);
        assert_eq!(resample(&single, 1.0).unwrap(), single);

        // L shape: 12 along x then 8 along y.
        let l = Branch::new(vec![
            CenterNode::new(Point([0.0, 0.0, 0.0]), 1.0),
            CenterNode::new(Point([12.0, 0.0, 0.0]), 1.0),
            CenterNode::new(Point([12.0, 8.0, 0.0]), 1.0),
        ]);
        let r = resample(&l, 2.0).unwrap();
        let arc: f64 = r
            .segments()
            .map(|(a, b)| a.position.distance(&b.position))
            .sum();
        assert!((arc - 20.0).abs() < 1e-6);
        assert!(r.segments().all(|(a, b)| a.position.distance(&b.position) <= 2.0 + 1e-12));

        assert!(resample(&l, 0.0).is_err());

        let (u, step) = resample_uniform(&l, 3.0).unwrap();
        assert_eq!(u.len(), 8);
        assert!((step - 20.0 / 7.0).abs() < 1e-12);
        assert!((u.nodes[1].position.0[0] - step).abs() < 1e-12);
        assert!(resample_uniform(&l, -1.0).is_err());
    }

    #[test]
    fn validate_rejects_bad_forests() {
        let mut f = BranchForest::new(vec![straight(5.0), straight(3.0)]);
        assert!(f.validate().is_ok());
        f.branches[1].parent = Some(NodeRef { branch: 0, node: 1 });
        assert!(f.validate().is_ok());
        f.branches[0].parent = Some(NodeRef { branch: 1, node: 0 });
        assert!(f.validate().is_err());
        f.branches[0].parent = None;
        f.branches[0].nodes[0].radius = 0.0;
        assert!(f.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn frame_is_orthonormal(axis in unit3()) {
            let f = perpendicular_frame(&axis);
            let zeta = f.zeta.unwrap();
            prop_assert!(f.nu.dot(&axis).abs() <= 1e-9);
            prop_assert!(zeta.dot(&axis).abs() <= 1e-9);
            prop_assert!(f.nu.dot(&zeta).abs() <= 1e-9);
            prop_assert!((f.nu.dot(&f.nu) - 1.0).abs() <= 1e-9);
            prop_assert!((zeta.dot(&zeta) - 1.0).abs() <= 1e-9);
            prop_assert_eq!(f, perpendicular_frame(&axis));
        }

        #[test]
        fn step_inverts(
            c in proptest::array::uniform3(-100.0f64..100.0),
            r in 0.1f64..10.0,
            xi in unit3(),
        ) {
            let back = step(&step(&Point(c), r, &xi), r, &-xi);
            for i in 0..3 {
                prop_assert!((back.0[i] - c[i]).abs() <= 1e-12);
            }
        }

        #[test]
        fn segment_distance_matches_sampled_minimum(
            p in proptest::array::uniform3(-10.0f64..10.0),
            a in proptest::array::uniform3(-10.0f64..10.0),
            b in proptest::array::uniform3(-10.0f64..10.0),
        ) {
            let (p, a, b) = (Point(p), Point(a), Point(b));
            let (d, g) = point_to_segment(&p, &a, &b);
            prop_assert!((0.0..=1.0).contains(&g));
            let brute = (0..=10_000)
                .map(|k| p.distance(&a.lerp(&b, k as f64 / 10_000.0)))
                .fold(f64::INFINITY, f64::min);
            prop_assert!(d <= brute + 1e-12);
            prop_assert!((d - brute).abs() <= 1e-4);
        }

        #[test]
        fn uniform_resample_is_even(
            pts in proptest::collection::vec(proptest::array::uniform3(-20.0f64..20.0), 2..8),
            spacing in 0.2f64..5.0,
        ) {
            let b = Branch::new(pts.iter().map(|p| CenterNode::new(Point(*p), 1.0)).collect());
            prop_assume!(b.length() > 1e-9);
            let (r, step) = resample_uniform(&b, spacing).unwrap();
            prop_assert!(step <= spacing + 1e-12);
            prop_assert!(((r.len() - 1) as f64 * step - b.length()).abs() <= 1e-6 * b.length().max(1.0));
            prop_assert_eq!(r.nodes.first(), b.nodes.first());
            prop_assert_eq!(r.nodes.last(), b.nodes.last());
            // every sample lies on the input polyline
            for n in &r.nodes {
                let d = b.segments()
                    .map(|(a, c)| point_to_segment(&n.position, &a.position, &c.position).0)
                    .fold(f64::INFINITY, f64::min);
                prop_assert!(d <= 1e-9);
            }
        }

        #[test]
        fn resample_preserves_arc_length(
            pts in proptest::collection::vec(proptest::array::uniform3(-20.0f64..20.0), 2..8),
            spacing in 0.2f64..5.0,
        ) {
            let b = Branch::new(pts.iter().map(|p| CenterNode::new(Point(*p), 1.0)).collect());
            let r = resample(&b, spacing).unwrap();
            let (l0, l1) = (b.length(), r.length());
            prop_assert!((l0 - l1).abs() <= 1e-6 * l0.max(1.0));
            prop_assert_eq!(r.nodes.first(), b.nodes.first());
            prop_assert_eq!(r.nodes.last(), b.nodes.last());
        }
    }
}
