//! Reconstruction scores: node matching, SSD precision/recall/F1, position
//! and radius error, length-weighted edge scores and average branch length.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{resample_uniform, BranchForest, CenterNode};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusError {
    #[default]
    Absolute,
    /// `|r_pred - r_gt| / r_gt`.
    Relative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub resample_spacing: f64,
    pub match_distance: f64,
    pub radius_error: RadiusError,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            resample_spacing: 1.0,
            match_distance: 2.0,
            radius_error: RadiusError::Absolute,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("resample_spacing", self.resample_spacing),
            ("match_distance", self.match_distance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Arc length of the input polyline between the two nodes.
    pub length: f64,
}

/// Nodes of a resampled forest in branch-major order, with the edges joining
/// consecutive nodes of a branch.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSet<const D: usize> {
    pub nodes: Vec<CenterNode<D>>,
    pub edges: Vec<Edge>,
}

impl<const D: usize> NodeSet<D> {
    pub fn from_forest(forest: &BranchForest<D>, spacing: f64) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for b in &forest.branches {
            let (r, step) = resample_uniform(b, spacing)?;
            let base = nodes.len();
            for i in 1..r.nodes.len() {
                edges.push(Edge {
                    a: base + i - 1,
                    b: base + i,
                    length: step,
                });
            }
            nodes.extend(r.nodes);
        }
        Ok(NodeSet { nodes, edges })
    }

    /// Joins consecutive nodes, weighting each edge by its chord length.
    pub fn from_chain(nodes: Vec<CenterNode<D>>) -> Self {
        let edges = (1..nodes.len())
            .map(|i| Edge {
                a: i - 1,
                b: i,
                length: nodes[i - 1].position.distance(&nodes[i].position),
            })
            .collect();
        NodeSet { nodes, edges }
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub pred: usize,
    pub gt: usize,
    pub distance: f64,
}

/// Greedy matching: repeatedly pairs the globally closest unmatched
/// (pred, gt) nodes within `max_distance`. Equal distances are taken in
/// (pred, gt) index order.
pub fn match_nodes<const D: usize>(
    pred: &[CenterNode<D>],
    gt: &[CenterNode<D>],
    max_distance: f64,
) -> Vec<Match> {
    let cell = |p: &[f64; D]| -> [i64; D] {
        std::array::from_fn(|a| (p[a] / max_distance).floor() as i64)
    };
    let mut buckets: HashMap<[i64; D], Vec<usize>> = HashMap::new();
    for (j, n) in gt.iter().enumerate() {
        buckets.entry(cell(&n.position.0)).or_default().push(j);
    }
    let offsets = crate::filters::neighborhood::<D>();
    let mut pairs = Vec::new();
    for (i, n) in pred.iter().enumerate() {
        let c = cell(&n.position.0);
        for off in &offsets {
            let key: [i64; D] = std::array::from_fn(|a| c[a] + off[a]);
            for &j in buckets.get(&key).into_iter().flatten() {
                let d = n.position.distance(&gt[j].position);
                if d <= max_distance {
                    pairs.push(Match {
                        pred: i,
                        gt: j,
                        distance: d,
                    });
                }
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.pred.cmp(&b.pred))
            .then(a.gt.cmp(&b.gt))
    });
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut out = Vec::new();
    for m in pairs {
        if !used_p[m.pred] && !used_g[m.gt] {
            used_p[m.pred] = true;
            used_g[m.gt] = true;
            out.push(m);
        }
    }
    out
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Both sides were empty; the scores are 1 by convention.
    pub vacuous: bool,
}

fn scores(hit_p: f64, total_p: f64, hit_g: f64, total_g: f64) -> Scores {
    if total_p == 0.0 && total_g == 0.0 {
        return Scores {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
            vacuous: true,
        };
    }
    let precision = if total_p > 0.0 { hit_p / total_p } else { 0.0 };
    let recall = if total_g > 0.0 { hit_g / total_g } else { 0.0 };
    Scores {
        precision,
        recall,
        f1: harmonic(precision, recall),
        vacuous: false,
    }
}

pub fn ssd_scores(matches: usize, total_pred: usize, total_gt: usize) -> Scores {
    scores(matches as f64, total_pred as f64, matches as f64, total_gt as f64)
}

/// Mean position and radius error over matched pairs; `None` without
/// matches.
pub fn position_radius_errors<const D: usize>(
    pred: &[CenterNode<D>],
    gt: &[CenterNode<D>],
    matches: &[Match],
    mode: RadiusError,
) -> Option<(f64, f64)> {
    if matches.is_empty() {
        return None;
    }
    let n = matches.len() as f64;
    let pe = matches.iter().map(|m| m.distance).sum::<f64>() / n;
    let re = matches
        .iter()
        .map(|m| {
            let (rp, rg) = (pred[m.pred].radius, gt[m.gt].radius);
            match mode {
                RadiusError::Absolute => (rp - rg).abs(),
                RadiusError::Relative => (rp - rg).abs() / rg,
            }
        })
        .sum::<f64>()
        / n;
    Some((pe, re))
}

fn matched_length<const D: usize>(set: &NodeSet<D>, matched: &[bool]) -> f64 {
    set.edges
        .iter()
        .filter(|e| matched[e.a] && matched[e.b])
        .map(|e| e.length)
        .sum()
}

/// Length-weighted scores: an edge counts when both endpoints are matched.
pub fn length_scores<const D: usize>(pred: &NodeSet<D>, gt: &NodeSet<D>, matches: &[Match]) -> Scores {
    let mut mp = vec![false; pred.nodes.len()];
    let mut mg = vec![false; gt.nodes.len()];
    for m in matches {
        mp[m.pred] = true;
        mg[m.gt] = true;
    }
    scores(
        matched_length(pred, &mp),
        pred.total_length(),
        matched_length(gt, &mg),
        gt.total_length(),
    )
}

/// Average branch length; 0 for an empty forest.
pub fn abl<const D: usize>(forest: &BranchForest<D>) -> f64 {
    if forest.branches.is_empty() {
        0.0
    } else {
        forest.total_length() / forest.branches.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub ssd_precision: f64,
    pub ssd_recall: f64,
    pub ssd_f1: f64,
    pub pe: f64,
    pub re: f64,
    pub len_precision: f64,
    pub len_recall: f64,
    pub len_f1: f64,
    pub abl: f64,
    pub pred_nodes: usize,
    pub gt_nodes: usize,
    pub matched_nodes: usize,
    pub pred_branches: usize,
    pub gt_branches: usize,
    pub flags: Vec<String>,
}

pub fn evaluate<const D: usize>(
    pred: &BranchForest<D>,
    gt: &BranchForest<D>,
    cfg: &MatchConfig,
) -> Result<MetricReport> {
    cfg.validate()?;
    let p = NodeSet::from_forest(pred, cfg.resample_spacing)?;
    let g = NodeSet::from_forest(gt, cfg.resample_spacing)?;
    let matches = match_nodes(&p.nodes, &g.nodes, cfg.match_distance);
    let ssd = ssd_scores(matches.len(), p.nodes.len(), g.nodes.len());
    let len = length_scores(&p, &g, &matches);
    let mut flags = Vec::new();
    if ssd.vacuous {
        flags.push("empty_prediction_and_ground_truth".to_string());
    }
    let (pe, re) = position_radius_errors(&p.nodes, &g.nodes, &matches, cfg.radius_error)
        .unwrap_or_else(|| {
            flags.push("no_matches".to_string());
            (0.0, 0.0)
        });
    Ok(MetricReport {
        ssd_precision: ssd.precision,
        ssd_recall: ssd.recall,
        ssd_f1: ssd.f1,
        pe,
        re,
        len_precision: len.precision,
        len_recall: len.recall,
        len_f1: len.f1,
        abl: abl(pred),
        pred_nodes: p.nodes.len(),
        gt_nodes: g.nodes.len(),
        matched_nodes: matches.len(),
        pred_branches: pred.branches.len(),
        gt_branches: gt.branches.len(),
        flags,
    })
}
