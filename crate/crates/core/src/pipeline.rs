//! End-to-end operations behind the command-line subcommands.
//!
//! Directory layout written by [`synth`]:
//!
//! ```text
//! out/intensity.{hdr,raw}
//! out/labels/{centerline,boundary,radius,direction}.{hdr,raw}
//! out/gt.swc
//! ```
//!
//! Feature directories (from [`features`] or external tools) use the same
//! map names as `labels/`, with `direction_logits` as an alternative to
//! `direction`.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::codec::{encode_logits, DirectionDistribution};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{BranchForest, UnitVector};
use crate::grid::Grid;
use crate::io;
use crate::losses::{direction_loss, geo_loss, image_losses, radius_loss};
use crate::metrics::{evaluate, MetricReport};
use crate::provider::{
    build_classical, build_file, build_oracle, classical_maps, write_maps, DirectionField,
    FeatureMaps, Provider, ProviderKind,
};
use crate::synth::{synthesize_with, Labels, Scene};
use crate::tracer::trace_all;

pub const INTENSITY_FILE: &str = "intensity";
pub const LABELS_DIR: &str = "labels";
pub const GT_SWC: &str = "gt.swc";

pub fn write_labels<const D: usize>(labels: &Labels<D>, dir: &Path) -> Result<()> {
    let maps = FeatureMaps {
        centerline: labels.centerline.clone(),
        boundary: labels.boundary.clone(),
        radius: labels.radius.clone(),
        direction: DirectionField::Vectors(labels.direction.clone()),
    };
    write_maps(&maps, dir)
}

pub fn read_labels<const D: usize>(dir: &Path) -> Result<Labels<D>> {
    let direction_base = dir.join("direction");
    let chans = io::read_grid::<D>(&direction_base)?;
    let n = chans.len();
    let direction: [Grid<D>; D] = chans.try_into().map_err(|_| {
        Error::load(
            io::header_path(&direction_base),
            format!("expected {D} channels, found {n}"),
        )
    })?;
    Ok(Labels {
        centerline: io::read_grid1(&dir.join("centerline"))?,
        boundary: io::read_grid1(&dir.join("boundary"))?,
        radius: io::read_grid1(&dir.join("radius"))?,
        direction,
    })
}

pub fn write_scene<const D: usize>(scene: &Scene<D>, out: &Path) -> Result<()> {
    io::write_grid_f32(&out.join(INTENSITY_FILE), std::slice::from_ref(&scene.intensity))?;
    write_labels(&scene.labels, &out.join(LABELS_DIR))?;
    io::write_swc(&out.join(GT_SWC), &scene.forest)
}

pub fn synth<const D: usize>(cfg: &RunConfig, out: &Path, exec: Exec) -> Result<Scene<D>> {
    let scene = synthesize_with::<D>(&cfg.synth_config(), exec)?;
    write_scene(&scene, out)?;
    Ok(scene)
}

/// Resolves an intensity grid given either a scene directory or a grid base.
fn intensity_base(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join(INTENSITY_FILE)
    } else {
        io::grid_base(input)
    }
}

/// Resolves a label directory given either a scene directory or the labels
/// directory itself.
fn labels_dir(input: &Path) -> PathBuf {
    let nested = input.join(LABELS_DIR);
    if nested.is_dir() {
        nested
    } else {
        input.to_path_buf()
    }
}

pub fn read_intensity<const D: usize>(input: &Path) -> Result<Grid<D>> {
    io::read_grid1(&intensity_base(input))
}

/// Classical feature maps for an intensity grid, written under `out`.
pub fn features<const D: usize>(cfg: &RunConfig, input: &Path, out: &Path, exec: Exec) -> Result<()> {
    let intensity = read_intensity::<D>(input)?;
    let maps = classical_maps(&intensity, &cfg.provider.classical, exec);
    write_maps(&maps, out)
}

pub fn load_provider<const D: usize>(
    cfg: &RunConfig,
    kind: ProviderKind,
    input: &Path,
    exec: Exec,
) -> Result<Provider<D>> {
    match kind {
        ProviderKind::Oracle => {
            let labels = read_labels::<D>(&labels_dir(input))?;
            build_oracle(&labels, cfg.bins, exec)
        }
        ProviderKind::Classical => {
            build_classical(&read_intensity::<D>(input)?, &cfg.provider_config(), exec)
        }
        ProviderKind::File => build_file(input, &cfg.provider_config()),
    }
}

pub fn trace<const D: usize>(
    cfg: &RunConfig,
    kind: ProviderKind,
    input: &Path,
    out: &Path,
    exec: Exec,
) -> Result<BranchForest<D>> {
    let provider = load_provider::<D>(cfg, kind, input, exec)?;
    let forest = trace_all(&provider, &cfg.trace)?;
    io::write_swc(out, &forest)?;
    Ok(forest)
}

/// Metrics between two SWC files. Both are read as 3D; 2D files carry
/// z = 0, which leaves every distance unchanged.
pub fn eval(cfg: &RunConfig, pred: &Path, gt: &Path) -> Result<MetricReport> {
    let p = io::read_swc::<3>(pred)?;
    let g = io::read_swc::<3>(gt)?;
    evaluate(&p, &g, &cfg.matching)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub centerline: f64,
    pub boundary: f64,
    pub image: f64,
    pub direction_class: f64,
    pub direction_sim: f64,
    pub direction: f64,
    pub radius: f64,
    pub geometry: f64,
    pub total: f64,
    /// Ground-truth centerline voxels at which geometry terms were averaged.
    pub points: usize,
}

/// Image losses over whole grids plus geometry losses averaged over the
/// labelled centerline voxels that carry a direction.
pub fn losses<const D: usize>(cfg: &RunConfig, pred: &FeatureMaps<D>, labels: &Labels<D>) -> Result<LossReport> {
    let img = image_losses(
        &pred.centerline,
        &labels.centerline,
        &pred.boundary,
        &labels.boundary,
        &cfg.loss,
    )?;
    if pred.radius.dims() != labels.radius.dims() {
        return Err(Error::ShapeMismatch(format!(
            "prediction dims {:?} vs label dims {:?}",
            pred.radius.dims(),
            labels.radius.dims()
        )));
    }
    let (mut class, mut sim, mut rad, mut n) = (0.0, 0.0, 0.0, 0usize);
    for i in 0..labels.centerline.len() {
        if labels.centerline.values()[i] < 0.5 {
            continue;
        }
        let xi: [f64; D] = std::array::from_fn(|c| labels.direction[c].values()[i]);
        let Ok(xi) = UnitVector::new(xi) else { continue };
        let dist = match &pred.direction {
            DirectionField::Vectors(v) => {
                let p: [f64; D] = std::array::from_fn(|c| v[c].values()[i]);
                match UnitVector::new(p) {
                    Ok(u) => encode_logits(&u, &cfg.bins),
                    Err(_) => DirectionDistribution::from_flat(D, cfg.bins.bins(), vec![0.0; D * cfg.bins.bins()])?,
                }
            }
            DirectionField::Logits { bins, channels } => DirectionDistribution::from_flat(
                D,
                *bins,
                channels.iter().map(|g| g.values()[i]).collect(),
            )?,
        };
        let d = direction_loss(&dist, &xi, &cfg.bins)?;
        class += d.class;
        sim += d.sim;
        rad += radius_loss(labels.radius.values()[i], pred.radius.values()[i]);
        n += 1;
    }
    let m = n.max(1) as f64;
    let (class, sim, rad) = (class / m, sim / m, rad / m);
    let geometry = geo_loss(class + sim, rad, &cfg.loss);
    Ok(LossReport {
        centerline: img.centerline,
        boundary: img.boundary,
        image: img.image,
        direction_class: class,
        direction_sim: sim,
        direction: class + sim,
        radius: rad,
        geometry,
        total: geometry + img.image,
        points: n,
    })
}

/// Reads a prediction directory laid out like a feature directory.
pub fn read_maps<const D: usize>(cfg: &RunConfig, dir: &Path) -> Result<FeatureMaps<D>> {
    Ok(build_file::<D>(dir, &cfg.provider_config())?.maps().clone())
}

pub fn loss<const D: usize>(cfg: &RunConfig, pred: &Path, gt: &Path) -> Result<LossReport> {
    let maps = read_maps::<D>(cfg, pred)?;
    let labels = read_labels::<D>(&labels_dir(gt))?;
    losses(cfg, &maps, &labels)
}
