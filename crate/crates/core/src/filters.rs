//! Separable image filters used by the feature providers: Gaussian smoothing,
//! exact Euclidean distance transform, 3^D maximum filter and the structure
//! tensor orientation field.

use nalgebra::{Matrix2, Matrix3, SymmetricEigen};

use crate::exec::Exec;
use crate::grid::{strides, unravel, Grid};

/// Runs `f` over every 1D line along `axis` and writes the results back.
fn map_lines<const D: usize, F>(grid: &Grid<D>, axis: usize, exec: Exec, f: F) -> Grid<D>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync + Send,
{
    let dims = *grid.dims();
    let st = strides(&dims);
    let len = dims[axis];
    let step = st[axis];
    let lines = grid.len() / len;
    let src = grid.values();
    let base = |l: usize| (l / step) * len * step + l % step;
    let results = exec.map(lines, |l| {
        let b = base(l);
        let line: Vec<f64> = (0..len).map(|i| src[b + i * step]).collect();
        f(&line)
    });
    let mut out = grid.clone();
    let dst = out.values_mut();
    for (l, line) in results.into_iter().enumerate() {
        let b = base(l);
        for (i, v) in line.into_iter().enumerate() {
            dst[b + i * step] = v;
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with edge replication. `sigma <= 0` is a no-op.
pub fn gaussian_smooth<const D: usize>(grid: &Grid<D>, sigma: f64, exec: Exec) -> Grid<D> {
    if !(sigma > 0.0) {
        return grid.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut g = grid.clone();
    for axis in 0..D {
        g = map_lines(&g, axis, exec, |line| {
            let n = line.len() as i64;
            (0..n)
                .map(|i| {
                    k.iter()
                        .enumerate()
                        .map(|(j, w)| w * line[(i + j as i64 - r).clamp(0, n - 1) as usize])
                        .sum()
                })
                .collect()
        });
    }
    g
}

/// 1D squared distance transform of a sampled function (lower envelope of
/// parabolas).
fn edt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut k = 0usize;
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(i) => i,
        None => return vec![f64::INFINITY; n],
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            // z[0] is -inf, so this never underflows
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
    d
}

/// Euclidean distance from every voxel to the nearest voxel where `mask`
/// is zero (0 on background). Infinite when the mask has no background.
pub fn distance_transform<const D: usize>(mask: &Grid<D>, exec: Exec) -> Grid<D> {
    let mut g = mask.map(|v| if v != 0.0 { f64::INFINITY } else { 0.0 });
    for axis in 0..D {
        g = map_lines(&g, axis, exec, edt_1d);
    }
    g.map(f64::sqrt)
}

/// Offsets of the 3^D neighborhood (including the center).
pub fn neighborhood<const D: usize>() -> Vec<[i64; D]> {
    let n = 3usize.pow(D as u32);
    (0..n)
        .map(|mut c| {
            let mut o = [0i64; D];
            for v in o.iter_mut() {
                *v = (c % 3) as i64 - 1;
                c /= 3;
            }
            o
        })
        .collect()
}

pub(crate) fn offset_index<const D: usize>(
    idx: [usize; D],
    off: [i64; D],
    dims: &[usize; D],
) -> Option<[usize; D]> {
    let mut out = [0usize; D];
    for i in 0..D {
        let v = idx[i] as i64 + off[i];
        if v < 0 || v >= dims[i] as i64 {
            return None;
        }
        out[i] = v as usize;
    }
    Some(out)
}

/// Maximum over the in-bounds 3^D neighborhood.
pub fn max_filter3<const D: usize>(grid: &Grid<D>, exec: Exec) -> Grid<D> {
    let dims = *grid.dims();
    let offs = neighborhood::<D>();
    let vals = exec.map(grid.len(), |flat| {
        let idx = unravel(&dims, flat);
        offs.iter()
            .filter_map(|o| offset_index(idx, *o, &dims))
            .map(|n| grid.get(n))
            .fold(f64::NEG_INFINITY, f64::max)
    });
    Grid::from_values(dims, vals).expect("same shape")
}

/// Central-difference gradient (one-sided at the borders).
fn gradient<const D: usize>(grid: &Grid<D>, idx: [usize; D]) -> [f64; D] {
    let dims = grid.dims();
    std::array::from_fn(|a| {
        let mut lo = idx;
        let mut hi = idx;
        if idx[a] > 0 {
            lo[a] -= 1;
        }
        if idx[a] + 1 < dims[a] {
            hi[a] += 1;
        }
        let h = (hi[a] - lo[a]) as f64;
        if h == 0.0 {
            0.0
        } else {
            (grid.get(hi) - grid.get(lo)) / h
        }
    })
}

/// Eigenvector of the smallest eigenvalue of a symmetric D×D matrix, with
/// the sign fixed so its largest-magnitude component is positive.
pub fn smallest_eigenvector<const D: usize>(m: &[[f64; D]; D]) -> [f64; D] {
    let v: Vec<f64> = match D {
        2 => {
            let e = SymmetricEigen::new(Matrix2::from_fn(|i, j| m[i][j]));
            let k = e.eigenvalues.imin();
            e.eigenvectors.column(k).iter().copied().collect()
        }
        3 => {
            let e = SymmetricEigen::new(Matrix3::from_fn(|i, j| m[i][j]));
            let k = e.eigenvalues.imin();
            e.eigenvectors.column(k).iter().copied().collect()
        }
        _ => panic!("structure tensors are defined for D = 2 or 3, got {D}"),
    };
    let mut out: [f64; D] = std::array::from_fn(|i| v[i]);
    let lead = (0..D)
        .max_by(|&a, &b| out[a].abs().total_cmp(&out[b].abs()))
        .unwrap_or(0);
    if out[lead] < 0.0 {
        out.iter_mut().for_each(|c| *c = -*c);
    }
    out
}

/// Per-voxel orientation of least intensity variation: the smallest-eigenvalue
/// eigenvector of the Gaussian-weighted (σ = 1) structure tensor over the 3^D
/// window. Voxels where `mask` is zero, or whose tensor vanishes, get the
/// zero vector. Returns one grid per component.
pub fn structure_tensor_directions<const D: usize>(
    smoothed: &Grid<D>,
    mask: &Grid<D>,
    exec: Exec,
) -> [Grid<D>; D] {
    let dims = *smoothed.dims();
    let offs = neighborhood::<D>();
    let weights: Vec<f64> = offs
        .iter()
        .map(|o| (-(o.iter().map(|c| c * c).sum::<i64>() as f64) / 2.0).exp())
        .collect();
    let dirs = exec.map(smoothed.len(), |flat| {
        if mask.values()[flat] == 0.0 {
            return [0.0; D];
        }
        let idx = unravel(&dims, flat);
        let mut t = [[0.0; D]; D];
        for (o, w) in offs.iter().zip(weights.iter()) {
            let Some(n) = offset_index(idx, *o, &dims) else {
                continue;
            };
            let g = gradient(smoothed, n);
            for i in 0..D {
                for j in 0..D {
                    t[i][j] += w * g[i] * g[j];
                }
            }
        }
        let trace: f64 = (0..D).map(|i| t[i][i]).sum();
        if !(trace > 1e-18) {
            return [0.0; D];
        }
        smallest_eigenvector(&t)
    });
    std::array::from_fn(|c| {
        Grid::from_values(dims, dirs.iter().map(|d| d[c]).collect()).expect("same shape")
    })
}
