//! Feature providers: the per-point source of centerline probability,
//! boundary probability, radius and binned direction consumed by the tracer.
//!
//! All providers share one representation, [`FeatureMaps`], and differ in how
//! the maps are built: from ground truth ([`build_oracle`]), from classical
//! filters on the intensity image ([`build_classical`]) or from grids on disk
//! ([`build_file`]).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{encode_logits, BinScheme, DirectionDistribution};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::filters::{distance_transform, gaussian_smooth, max_filter3, structure_tensor_directions};
use crate::geometry::{Point, UnitVector};
use crate::grid::Grid;
use crate::io;
use crate::synth::Labels;

/// Smallest radius a provider reports.
pub const MIN_RADIUS: f64 = 0.5;

/// Gaussian width applied to binary labels by the oracle.
pub const ORACLE_SIGMA: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Oracle,
    Classical,
    File,
}

impl std::str::FromStr for ProviderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(ProviderKind::Oracle),
            "classical" => Ok(ProviderKind::Classical),
            "file" => Ok(ProviderKind::File),
            other => Err(Error::Config(format!(
                "unknown provider {other:?} (expected oracle, classical or file)"
            ))),
        }
    }
}

/// Direction source: either a unit-vector field (one grid per component) or
/// `J × K` logit channels, channel `j * K + k`.
#[derive(Clone, Debug, PartialEq)]
pub enum DirectionField<const D: usize> {
    Vectors([Grid<D>; D]),
    Logits { bins: usize, channels: Vec<Grid<D>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMaps<const D: usize> {
    pub centerline: Grid<D>,
    pub boundary: Grid<D>,
    pub radius: Grid<D>,
    pub direction: DirectionField<D>,
}

impl<const D: usize> FeatureMaps<D> {
    pub fn dims(&self) -> &[usize; D] {
        self.centerline.dims()
    }

    /// Checks shapes and value ranges, naming the offending map.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let dims = *self.dims();
        let mut direction_grids: Vec<&Grid<D>> = match &self.direction {
            DirectionField::Vectors(v) => v.iter().collect(),
            DirectionField::Logits { channels, .. } => channels.iter().collect(),
        };
        direction_grids.extend([&self.boundary, &self.radius]);
        if direction_grids.iter().any(|g| g.dims() != &dims) {
            return Err(("direction", format!("grids do not all have dims {dims:?}")));
        }
        for (name, g) in [("centerline", &self.centerline), ("boundary", &self.boundary)] {
            let (lo, hi) = (g.min(), g.max());
            if lo < -1e-6 || hi > 1.0 + 1e-6 {
                return Err((name, format!("probability range [{lo}, {hi}] outside [0, 1]")));
            }
        }
        let rmin = self.radius.min();
        if rmin < 0.0 {
            return Err(("radius", format!("minimum radius {rmin} is negative")));
        }
        match &self.direction {
            DirectionField::Vectors(v) => {
                let worst = (0..self.centerline.len())
                    .map(|i| v.iter().map(|g| g.values()[i].powi(2)).sum::<f64>().sqrt())
                    .fold(0.0, f64::max);
                if worst > 1.0 + 1e-3 {
                    return Err(("direction", format!("vector norm {worst} exceeds 1")));
                }
            }
            DirectionField::Logits { bins, channels } => {
                if *bins == 0 || channels.len() != D * bins {
                    return Err((
                        "direction",
                        format!("{} logit channels for D = {D}, K = {bins}", channels.len()),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalParams {
    /// Pre-smoothing of the intensity image.
    pub sigma_s: f64,
    /// Foreground threshold as a fraction of the smoothed maximum.
    pub foreground_fraction: f64,
    /// Smoothing of the binary mask that yields the boundary probability.
    pub boundary_sigma: f64,
    /// Subtracted from the distance transform: the surface lies halfway
    /// between the last foreground and first background voxel center.
    pub radius_offset: f64,
}

impl Default for ClassicalParams {
    fn default() -> Self {
        ClassicalParams {
            sigma_s: 1.0,
            foreground_fraction: 0.5,
            boundary_sigma: 1.0,
            radius_offset: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub bins: BinScheme,
    /// Weight of the history mean direction blended into vector-field
    /// directions (classical and file providers). 0 disables.
    pub history_weight: f64,
    pub classical: ClassicalParams,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            bins: BinScheme::default(),
            history_weight: 0.3,
            classical: ClassicalParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeatureQuery<'a, const D: usize> {
    pub position: Point<D>,
    /// Prior points, oldest first.
    pub history: &'a [Point<D>],
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureResponse {
    pub centerline_prob: f64,
    pub boundary_prob: f64,
    pub radius: f64,
    pub direction: DirectionDistribution,
    /// Set when the query fell outside the grid; probabilities are then 0.
    pub out_of_bounds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Provider<const D: usize> {
    kind: ProviderKind,
    maps: FeatureMaps<D>,
    scheme: BinScheme,
    history_weight: f64,
}

/// Unit direction of the history, newest minus oldest.
fn history_heading<const D: usize>(history: &[Point<D>]) -> Option<UnitVector<D>> {
    match (history.first(), history.last()) {
        (Some(a), Some(b)) if history.len() >= 2 => UnitVector::new((*b - *a).0).ok(),
        _ => None,
    }
}

impl<const D: usize> Provider<D> {
    pub fn from_maps(
        kind: ProviderKind,
        maps: FeatureMaps<D>,
        scheme: BinScheme,
        history_weight: f64,
    ) -> Result<Self> {
        maps.validate()
            .map_err(|(name, msg)| Error::InvalidValue(format!("{name} map: {msg}")))?;
        if let DirectionField::Logits { bins, .. } = &maps.direction {
            if *bins != scheme.bins() {
                return Err(Error::ShapeMismatch(format!(
                    "logit field has K = {bins}, scheme has K = {}",
                    scheme.bins()
                )));
            }
        }
        let history_weight = match kind {
            ProviderKind::Oracle => 0.0,
            _ => history_weight.clamp(0.0, 1.0),
        };
        Ok(Provider {
            kind,
            maps,
            scheme,
            history_weight,
        })
    }

    pub fn kind(&self) -> ProviderKind {
        self.kind
    }

    pub fn maps(&self) -> &FeatureMaps<D> {
        &self.maps
    }

    pub fn scheme(&self) -> &BinScheme {
        &self.scheme
    }

    pub fn dims(&self) -> &[usize; D] {
        self.maps.dims()
    }

    pub fn contains(&self, p: &Point<D>) -> bool {
        self.maps.centerline.contains(p)
    }

    fn uniform(&self) -> DirectionDistribution {
        DirectionDistribution::from_flat(D, self.scheme.bins(), vec![0.0; D * self.scheme.bins()])
            .expect("valid shape")
    }

    /// Sign-aligned multilinear blend of the non-zero corner vectors.
    fn sample_vector(&self, field: &[Grid<D>; D], p: &Point<D>) -> Option<UnitVector<D>> {
        let mut corners: Vec<([f64; D], f64)> = Vec::with_capacity(1 << D);
        self.maps.centerline.for_each_corner(p, |idx, w| {
            let v: [f64; D] = std::array::from_fn(|c| field[c].get(idx));
            if w > 0.0 && v.iter().any(|c| *c != 0.0) {
                corners.push((v, w));
            }
        });
        let (lead, _) = *corners
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        let mut acc = [0.0; D];
        for (v, w) in &corners {
            let dot: f64 = v.iter().zip(lead.iter()).map(|(a, b)| a * b).sum();
            let s = if dot < 0.0 { -w } else { *w };
            for c in 0..D {
                acc[c] += s * v[c];
            }
        }
        UnitVector::new(acc).ok()
    }

    pub fn query(&self, q: &FeatureQuery<'_, D>) -> FeatureResponse {
        let p = q.position;
        if !self.contains(&p) {
            return FeatureResponse {
                centerline_prob: 0.0,
                boundary_prob: 0.0,
                radius: MIN_RADIUS,
                direction: self.uniform(),
                out_of_bounds: true,
            };
        }
        let sample = |g: &Grid<D>| g.sample(&p).expect("in bounds").clamp(0.0, 1.0);
        let radius = self
            .maps
            .radius
            .sample_nonzero(&p)
            .expect("in bounds")
            .max(MIN_RADIUS);
        let direction = match &self.maps.direction {
            DirectionField::Vectors(field) => match self.sample_vector(field, &p) {
                Some(mut v) => {
                    if let Some(h) = history_heading(q.history) {
                        v = crate::codec::resolve_sign(&v, &h);
                        if self.history_weight > 0.0 {
                            let a = self.history_weight;
                            let blended = v.as_point() * (1.0 - a) + h.as_point() * a;
                            v = UnitVector::new(blended.0).unwrap_or(v);
                        }
                    }
                    encode_logits(&v, &self.scheme)
                }
                None => self.uniform(),
            },
            DirectionField::Logits { bins, channels } => {
                let flat = channels
                    .iter()
                    .map(|g| g.sample(&p).expect("in bounds"))
                    .collect();
                DirectionDistribution::from_flat(D, *bins, flat).expect("validated shape")
            }
        };
        FeatureResponse {
            centerline_prob: sample(&self.maps.centerline),
            boundary_prob: sample(&self.maps.boundary),
            radius,
            direction,
            out_of_bounds: false,
        }
    }
}

/// Oracle from ground-truth labels: probabilities are the labels smoothed with
/// σ = 0.7, radius and direction are read from the stored fields.
pub fn build_oracle<const D: usize>(
    labels: &Labels<D>,
    scheme: BinScheme,
    exec: Exec,
) -> Result<Provider<D>> {
    let dims = *labels.centerline.dims();
    if labels.boundary.dims() != &dims
        || labels.radius.dims() != &dims
        || labels.direction.iter().any(|g| g.dims() != &dims)
    {
        return Err(Error::ShapeMismatch("label grids differ in shape".into()));
    }
    let maps = FeatureMaps {
        centerline: gaussian_smooth(&labels.centerline, ORACLE_SIGMA, exec),
        boundary: gaussian_smooth(&labels.boundary, ORACLE_SIGMA, exec),
        radius: labels.radius.clone(),
        direction: DirectionField::Vectors(labels.direction.clone()),
    };
    Provider::from_maps(ProviderKind::Oracle, maps, scheme, 0.0)
}

/// Classical feature maps from an intensity image in `[0, 1]`.
pub fn classical_maps<const D: usize>(
    intensity: &Grid<D>,
    params: &ClassicalParams,
    exec: Exec,
) -> FeatureMaps<D> {
    let dims = *intensity.dims();
    let smoothed = gaussian_smooth(intensity, params.sigma_s, exec);
    let peak = smoothed.max();
    let threshold = params.foreground_fraction * peak;
    let mask = smoothed.map(|v| if peak > 0.0 && v > threshold { 1.0 } else { 0.0 });

    let diag = dims.iter().map(|&d| (d * d) as f64).sum::<f64>().sqrt();
    let dt = distance_transform(&mask, exec).map(|v| v.min(diag));
    let dt_max = max_filter3(&dt, exec);

    let mut centerline = Grid::zeros(dims);
    let mut radius = Grid::zeros(dims);
    for i in 0..mask.len() {
        if mask.values()[i] == 0.0 {
            continue;
        }
        let d = dt.values()[i];
        let m = dt_max.values()[i];
        centerline.values_mut()[i] = if m > 0.0 { (d / m).clamp(0.0, 1.0) } else { 0.0 };
        radius.values_mut()[i] = (d - params.radius_offset).max(MIN_RADIUS);
    }
    let boundary = gaussian_smooth(&mask, params.boundary_sigma, exec).map(|v| v.clamp(0.0, 1.0));
    let direction = DirectionField::Vectors(structure_tensor_directions(&smoothed, &mask, exec));
    FeatureMaps {
        centerline,
        boundary,
        radius,
        direction,
    }
}

pub fn build_classical<const D: usize>(
    intensity: &Grid<D>,
    cfg: &ProviderConfig,
    exec: Exec,
) -> Result<Provider<D>> {
    let (lo, hi) = (intensity.min(), intensity.max());
    if lo < 0.0 || hi > 1.0 {
        return Err(Error::InvalidValue(format!(
            "intensity range [{lo}, {hi}] outside [0, 1]"
        )));
    }
    let maps = classical_maps(intensity, &cfg.classical, exec);
    Provider::from_maps(ProviderKind::Classical, maps, cfg.bins, cfg.history_weight)
}

/// Basenames of the map grids inside a feature directory.
pub const CENTERLINE_FILE: &str = "centerline";
pub const BOUNDARY_FILE: &str = "boundary";
pub const RADIUS_FILE: &str = "radius";
pub const DIRECTION_FILE: &str = "direction";
pub const LOGITS_FILE: &str = "direction_logits";

/// Writes maps as `centerline`, `boundary`, `radius` and `direction` (or
/// `direction_logits`) grids under `dir`.
pub fn write_maps<const D: usize>(maps: &FeatureMaps<D>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_grid_f32(&dir.join(CENTERLINE_FILE), std::slice::from_ref(&maps.centerline))?;
    io::write_grid_f32(&dir.join(BOUNDARY_FILE), std::slice::from_ref(&maps.boundary))?;
    io::write_grid_f32(&dir.join(RADIUS_FILE), std::slice::from_ref(&maps.radius))?;
    match &maps.direction {
        DirectionField::Vectors(v) => io::write_grid_f32(&dir.join(DIRECTION_FILE), v),
        DirectionField::Logits { channels, .. } => {
            io::write_grid_f32(&dir.join(LOGITS_FILE), channels)
        }
    }
}

/// File-backed provider. `dir` must hold `centerline`, `boundary` and
/// `radius` grids plus either a D-channel `direction` grid or a `D × K`
/// channel `direction_logits` grid.
pub fn build_file<const D: usize>(dir: &Path, cfg: &ProviderConfig) -> Result<Provider<D>> {
    let single = |name: &str| -> Result<Grid<D>> {
        let path = dir.join(name);
        let mut chans = io::read_grid::<D>(&path)?;
        if chans.len() != 1 {
            return Err(Error::load(
                io::header_path(&path),
                format!("expected 1 channel, found {}", chans.len()),
            ));
        }
        Ok(chans.remove(0))
    };
    let centerline = single(CENTERLINE_FILE)?;
    let boundary = single(BOUNDARY_FILE)?;
    let radius = single(RADIUS_FILE)?;

    let vec_path = dir.join(DIRECTION_FILE);
    let logit_path = dir.join(LOGITS_FILE);
    let (direction, dir_path) = if io::header_path(&vec_path).exists() {
        let chans = io::read_grid::<D>(&vec_path)?;
        let n = chans.len();
        let arr: [Grid<D>; D] = chans.try_into().map_err(|_| {
            Error::load(io::header_path(&vec_path), format!("expected {D} channels, found {n}"))
        })?;
        (DirectionField::Vectors(arr), vec_path)
    } else if io::header_path(&logit_path).exists() {
        let chans = io::read_grid::<D>(&logit_path)?;
        let bins = chans.len() / D;
        if bins * D != chans.len() || bins == 0 {
            return Err(Error::load(
                io::header_path(&logit_path),
                format!("{} channels is not a multiple of D = {D}", chans.len()),
            ));
        }
        (
            DirectionField::Logits {
                bins,
                channels: chans,
            },
            logit_path,
        )
    } else {
        return Err(Error::load(
            io::header_path(&vec_path),
            "missing direction field (neither direction nor direction_logits present)",
        ));
    };
    let maps = FeatureMaps {
        centerline,
        boundary,
        radius,
        direction,
    };
    maps.validate().map_err(|(name, msg)| {
        let path = match name {
            "direction" => dir_path.clone(),
            other => dir.join(other),
        };
        Error::load(io::header_path(&path), msg)
    })?;
    Provider::from_maps(ProviderKind::File, maps, cfg.bins, cfg.history_weight)
}
