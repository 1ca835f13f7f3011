//! On-disk formats: header + raw grid files and SWC reconstructions.
//!
//! A grid `base` is stored as `base.hdr` (TOML) and `base.raw`. The payload
//! is little-endian, channel-major, row-major with the last axis fastest.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Branch, BranchForest, CenterNode, NodeRef, Point};
use crate::grid::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    U16,
    F32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ByteOrder {
    #[default]
    Little,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridHeader {
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
    pub channels: usize,
    pub dtype: Dtype,
    #[serde(default)]
    pub byte_order: ByteOrder,
}

impl GridHeader {
    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn payload_len(&self) -> usize {
        self.voxels() * self.channels * self.dtype.size()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GridData {
    U8(Vec<u8>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl GridData {
    pub fn dtype(&self) -> Dtype {
        match self {
            GridData::U8(_) => Dtype::U8,
            GridData::U16(_) => Dtype::U16,
            GridData::F32(_) => Dtype::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GridData::U8(v) => v.len(),
            GridData::U16(v) => v.len(),
            GridData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_bytes(&self) -> Vec<u8> {
        match self {
            GridData::U8(v) => v.clone(),
            GridData::U16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            GridData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn from_bytes(dtype: Dtype, bytes: &[u8]) -> Self {
        match dtype {
            Dtype::U8 => GridData::U8(bytes.to_vec()),
            Dtype::U16 => GridData::U16(
                bytes
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            Dtype::F32 => GridData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        }
    }

    /// Values as f64. Integer data is divided by its maximum so the result
    /// lies in `[0, 1]`; float data is returned unchanged.
    pub fn normalized(&self) -> Vec<f64> {
        fn by_max(v: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
            let m = v.clone().fold(0.0, f64::max);
            if m > 0.0 {
                v.map(|x| x / m).collect()
            } else {
                v.collect()
            }
        }
        match self {
            GridData::U8(v) => by_max(v.iter().map(|&x| x as f64)),
            GridData::U16(v) => by_max(v.iter().map(|&x| x as f64)),
            GridData::F32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridFile {
    pub header: GridHeader,
    pub data: GridData,
}

impl GridFile {
    pub fn new(dims: Vec<usize>, spacing: Vec<f64>, channels: usize, data: GridData) -> Result<Self> {
        let header = GridHeader {
            dims,
            spacing,
            channels,
            dtype: data.dtype(),
            byte_order: ByteOrder::Little,
        };
        if header.spacing.len() != header.dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} spacing values for {} dims",
                header.spacing.len(),
                header.dims.len()
            )));
        }
        if data.len() != header.voxels() * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for dims {:?} x {channels} channels",
                data.len(),
                header.dims
            )));
        }
        Ok(GridFile { header, data })
    }

    /// Packs grids as f32 channels. All grids must share dims.
    pub fn from_grids<const D: usize>(channels: &[Grid<D>]) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::ShapeMismatch("no channels to write".into()))?;
        if channels.iter().any(|g| g.dims() != first.dims()) {
            return Err(Error::ShapeMismatch("channels differ in dims".into()));
        }
        let data = channels
            .iter()
            .flat_map(|g| g.values().iter().map(|&v| v as f32))
            .collect();
        GridFile::new(
            first.dims().to_vec(),
            first.spacing().to_vec(),
            channels.len(),
            GridData::F32(data),
        )
    }

    pub fn to_grids<const D: usize>(&self) -> Result<Vec<Grid<D>>> {
        let dims: [usize; D] = self.header.dims.as_slice().try_into().map_err(|_| {
            Error::ShapeMismatch(format!("grid has dims {:?}, expected {D}D", self.header.dims))
        })?;
        let spacing: [f64; D] = self.header.spacing.as_slice().try_into().map_err(|_| {
            Error::ShapeMismatch(format!("{} spacing values, expected {D}", self.header.spacing.len()))
        })?;
        let n = self.header.voxels();
        self.data
            .normalized()
            .chunks(n.max(1))
            .take(self.header.channels)
            .map(|c| Grid::from_values(dims, c.to_vec()).map(|g| g.with_spacing(spacing)))
            .collect()
    }
}

/// `base` without a trailing `.hdr` / `.raw`.
pub fn grid_base(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("hdr" | "raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let mut s = grid_base(base).into_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn header_path(base: &Path) -> PathBuf {
    with_suffix(base, "hdr")
}

pub fn payload_path(base: &Path) -> PathBuf {
    with_suffix(base, "raw")
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_grid_file(base: &Path, file: &GridFile) -> Result<()> {
    let header = toml::to_string(&file.header)
        .map_err(|e| Error::load(header_path(base), e.to_string()))?;
    write_atomic(&payload_path(base), &file.data.to_bytes())?;
    write_atomic(&header_path(base), header.as_bytes())
}

pub fn read_grid_file(base: &Path) -> Result<GridFile> {
    let hp = header_path(base);
    let text = std::fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: GridHeader =
        toml::from_str(&text).map_err(|e| Error::load(&hp, e.message().to_string()))?;
    if header.dims.is_empty() || header.dims.contains(&0) || header.channels == 0 {
        return Err(Error::load(&hp, format!(
            "dims {:?} with {} channels describes an empty grid",
            header.dims, header.channels
        )));
    }
    if header.spacing.len() != header.dims.len() {
        return Err(Error::load(&hp, "spacing length differs from dims length"));
    }
    let pp = payload_path(base);
    let bytes = std::fs::read(&pp).map_err(|e| Error::io(&pp, e))?;
    if bytes.len() != header.payload_len() {
        return Err(Error::load(
            &pp,
            format!(
                "payload is {} bytes, header implies {}",
                bytes.len(),
                header.payload_len()
            ),
        ));
    }
    let data = GridData::from_bytes(header.dtype, &bytes);
    Ok(GridFile { header, data })
}

pub fn write_grid_f32<const D: usize>(base: &Path, channels: &[Grid<D>]) -> Result<()> {
    write_grid_file(base, &GridFile::from_grids(channels)?)
}

/// Reads all channels of a grid file. Non-finite values are rejected.
pub fn read_grid<const D: usize>(base: &Path) -> Result<Vec<Grid<D>>> {
    let file = read_grid_file(base)?;
    file.to_grids().map_err(|e| Error::load(header_path(base), e.to_string()))
}

/// Reads a single-channel grid.
pub fn read_grid1<const D: usize>(base: &Path) -> Result<Grid<D>> {
    let mut g = read_grid::<D>(base)?;
    if g.len() != 1 {
        return Err(Error::load(
            header_path(base),
            format!("expected 1 channel, found {}", g.len()),
        ));
    }
    Ok(g.remove(0))
}

/// Spatial dimensionality recorded in a grid header.
pub fn grid_rank(base: &Path) -> Result<usize> {
    let hp = header_path(base);
    let text = std::fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: GridHeader =
        toml::from_str(&text).map_err(|e| Error::load(&hp, e.message().to_string()))?;
    Ok(header.dims.len())
}

pub const SWC_HEADER: &str = "# id type x y z radius parent\n";

/// SWC text for a forest. Nodes are numbered from 1 in branch order; a
/// branch's first node points at its parent node or -1.
pub fn swc_string<const D: usize>(forest: &BranchForest<D>) -> Result<String> {
    if D != 2 && D != 3 {
        return Err(Error::InvalidValue(format!("SWC holds 2D or 3D data, not {D}D")));
    }
    let mut first_id = Vec::with_capacity(forest.branches.len());
    let mut next = 1usize;
    for b in &forest.branches {
        first_id.push(next);
        next += b.nodes.len();
    }
    let mut out = String::from(SWC_HEADER);
    for (bi, b) in forest.branches.iter().enumerate() {
        for (ni, n) in b.nodes.iter().enumerate() {
            let id = first_id[bi] + ni;
            let parent = if ni > 0 {
                (id - 1) as i64
            } else {
                match b.parent {
                    Some(r) if r.branch < bi && r.node < forest.branches[r.branch].nodes.len() => {
                        (first_id[r.branch] + r.node) as i64
                    }
                    Some(r) => {
                        return Err(Error::Forest(format!(
                            "branch {bi} has invalid parent {}:{}",
                            r.branch, r.node
                        )))
                    }
                    None => -1,
                }
            };
            let p = n.position.0;
            let z = if D == 3 { p[2] } else { 0.0 };
            writeln!(
                out,
                "{id} 0 {:.4} {:.4} {:.4} {:.4} {parent}",
                p[0], p[1], z, n.radius
            )
            .expect("string write");
        }
    }
    Ok(out)
}

pub fn write_swc<const D: usize>(path: &Path, forest: &BranchForest<D>) -> Result<()> {
    write_atomic(path, swc_string(forest)?.as_bytes())
}

/// Parses SWC text. A node continues the branch of node `id - 1` when that is
/// its parent; any other parent starts a new branch attached there.
pub fn parse_swc<const D: usize>(text: &str, path: &Path) -> Result<BranchForest<D>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut branches: Vec<Branch<D>> = Vec::new();
    let mut where_is: Vec<NodeRef> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = s.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(err(line, format!("expected 7 fields, found {}", fields.len())));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| err(line, format!("bad id {:?}", fields[0])))?;
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, format!("bad number {:?}", fields[i])))
        };
        let (x, y, z, r) = (num(2)?, num(3)?, num(4)?, num(5)?);
        let parent: i64 = fields[6]
            .parse()
            .map_err(|_| err(line, format!("bad parent {:?}", fields[6])))?;
        if id != where_is.len() + 1 {
            return Err(err(
                line,
                format!("id {id} out of sequence (expected {})", where_is.len() + 1),
            ));
        }
        if parent != -1 && (parent < 1 || parent as usize >= id) {
            return Err(err(
                line,
                format!("node {id} has parent {parent}, which does not precede it (cycle or forward reference)"),
            ));
        }
        let coords: [f64; D] = match D {
            2 => std::array::from_fn(|a| [x, y][a]),
            _ => std::array::from_fn(|a| [x, y, z][a]),
        };
        let node = CenterNode::new(Point(coords), r);
        let continues = parent != -1 && parent as usize == id - 1;
        if continues {
            let at = where_is[id - 2];
            branches[at.branch].nodes.push(node);
            where_is.push(NodeRef {
                branch: at.branch,
                node: at.node + 1,
            });
        } else {
            let attach = (parent != -1).then(|| where_is[parent as usize - 1]);
            let mut b = Branch::new(vec![node]);
            b.parent = attach;
            branches.push(b);
            where_is.push(NodeRef {
                branch: branches.len() - 1,
                node: 0,
            });
        }
    }
    Ok(BranchForest::new(branches))
}

pub fn read_swc<const D: usize>(path: &Path) -> Result<BranchForest<D>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_swc(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_forest(rng: &mut impl Rng) -> BranchForest<3> {
        let mut branches: Vec<Branch<3>> = Vec::new();
        for b in 0..rng.random_range(1..5) {
            let n = rng.random_range(2..8);
            let mut nodes: Vec<CenterNode<3>> = (0..n)
                .map(|_| {
                    CenterNode::new(
                        Point([
                            rng.random_range(0.0..64.0),
                            rng.random_range(0.0..64.0),
                            rng.random_range(0.0..64.0),
                        ]),
                        rng.random_range(0.5..4.0),
                    )
                })
                .collect();
            let mut branch = Branch::new(Vec::new());
            if b > 0 && rng.random_bool(0.5) {
                let pb = rng.random_range(0..b);
                // attach to an interior node so the link is not read as a continuation
                let len = branches[pb].nodes.len();
                let pn = rng.random_range(0..len - 1);
                nodes[0].position = branches[pb].nodes[pn].position;
                branch.parent = Some(NodeRef { branch: pb, node: pn });
            }
            branch.nodes = nodes;
            branches.push(branch);
        }
        BranchForest::new(branches)
    }

    #[test]
    fn swc_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let f = random_forest(&mut rng);
            let back: BranchForest<3> = parse_swc(&swc_string(&f).unwrap(), Path::new("t.swc")).unwrap();
            assert_eq!(back.branches.len(), f.branches.len());
            for (a, b) in f.branches.iter().zip(&back.branches) {
                assert_eq!(a.parent, b.parent);
                assert_eq!(a.nodes.len(), b.nodes.len());
                for (x, y) in a.nodes.iter().zip(&b.nodes) {
                    assert!(x.position.distance(&y.position) <= 1e-4 * 3f64.sqrt());
                    assert!((x.radius - y.radius).abs() <= 1e-4);
                }
            }
        }
    }

    #[test]
    fn swc_2d_writes_zero_z() {
        let f = BranchForest::new(vec![Branch::new(vec![
            CenterNode::new(Point([1.0, 2.0]), 1.0),
            CenterNode::new(Point([3.0, 4.0]), 1.5),
        ])]);
        let s = swc_string(&f).unwrap();
        assert!(s.contains("1 0 1.0000 2.0000 0.0000 1.0000 -1"));
        assert!(s.contains("2 0 3.0000 4.0000 0.0000 1.5000 1"));
        let back: BranchForest<2> = parse_swc(&s, Path::new("t.swc")).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn swc_errors() {
        let p = Path::new("bad.swc");
        let cyc = "1 0 0 0 0 1 -1\n2 0 1 0 0 1 3\n3 0 2 0 0 1 2\n";
        match parse_swc::<3>(cyc, p) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("node 2"));
            }
            other => panic!("{other:?}"),
        }
        match parse_swc::<3>("# c\n1 0 0 0 1 -1\n", p) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_swc::<3>("1 0 a 0 0 1 -1\n", p).is_err());
    }

    #[test]
    fn empty_forest_swc() {
        let e = BranchForest::<3>::new(Vec::new());
        let s = swc_string(&e).unwrap();
        assert!(s.lines().all(|l| l.starts_with('#')));
        assert!(parse_swc::<3>(&s, Path::new("e.swc")).unwrap().is_empty());
    }

    #[test]
    fn grid_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 64 * 64 * 64;
        let f32s: Vec<f32> = (0..n).map(|_| rng.random::<f32>() * 1e3 - 5e2).collect();
        let cases = [
            GridData::F32(f32s),
            GridData::U16((0..n).map(|_| rng.random()).collect()),
            GridData::U8((0..n).map(|_| rng.random()).collect()),
        ];
        for (i, data) in cases.into_iter().enumerate() {
            let base = dir.path().join(format!("g{i}"));
            let f = GridFile::new(vec![64, 64, 64], vec![1.0, 1.0, 2.0], 1, data).unwrap();
            write_grid_file(&base, &f).unwrap();
            let back = read_grid_file(&base).unwrap();
            assert_eq!(back, f);
            let (a, b) = (std::fs::read(payload_path(&base)).unwrap(), f.data.to_bytes());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("t");
        let g = Grid::<2>::filled([4, 5], 0.25);
        write_grid_f32(&base, &[g]).unwrap();
        let bytes = std::fs::read(payload_path(&base)).unwrap();
        std::fs::write(payload_path(&base), &bytes[..bytes.len() - 3]).unwrap();
        match read_grid_file(&base) {
            Err(Error::Load { msg, .. }) => assert!(msg.contains("payload")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn u16_normalizes_by_max() {
        let f = GridFile::new(vec![2, 2], vec![1.0, 1.0], 1, GridData::U16(vec![0, 1000, 4000, 2000]))
            .unwrap();
        let g = &f.to_grids::<2>().unwrap()[0];
        assert_eq!(g.values(), &[0.0, 0.25, 1.0, 0.5]);
        assert!(g.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn multichannel_and_paths() {
        let dir = tempfile::tempdir().unwrap();
        let a = Grid::<3>::filled([2, 3, 4], 1.5);
        let b = Grid::<3>::filled([2, 3, 4], -2.0);
        let base = dir.path().join("vec");
        write_grid_f32(&base, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(read_grid::<3>(&base.with_extension("hdr")).unwrap(), vec![a, b]);
        assert!(read_grid::<2>(&base).is_err());
        assert_eq!(grid_rank(&base).unwrap(), 3);
        assert_eq!(header_path(Path::new("x/scene.v1")), PathBuf::from("x/scene.v1.hdr"));
    }
}
