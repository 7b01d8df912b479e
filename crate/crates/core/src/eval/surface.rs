//! Border extraction and surface distances.
//!
//! Nearest-border distances come from an exact anisotropic Euclidean
//! distance transform (separable lower-envelope method), one pass per axis.

use ndarray::{Array3, Axis};

use crate::data::{LabelVolume, Spacing};

/// Foreground voxels with at least one background face neighbour; the space
/// outside the array counts as background.
pub fn border_mask(mask: &Array3<u8>) -> Array3<u8> {
    let (d, h, w) = mask.dim();
    Array3::from_shape_fn((d, h, w), |(z, y, x)| {
        if mask[[z, y, x]] == 0 {
            return 0;
        }
        let bg = |z: isize, y: isize, x: isize| {
            z < 0
                || y < 0
                || x < 0
                || z >= d as isize
                || y >= h as isize
                || x >= w as isize
                || mask[[z as usize, y as usize, x as usize]] == 0
        };
        let (z, y, x) = (z as isize, y as isize, x as isize);
        let edge = bg(z - 1, y, x)
            || bg(z + 1, y, x)
            || bg(z, y - 1, x)
            || bg(z, y + 1, x)
            || bg(z, y, x - 1)
            || bg(z, y, x + 1);
        edge as u8
    })
}

/// Border voxel indices in raster order.
pub fn border_voxels(mask: &LabelVolume) -> Vec<[usize; 3]> {
    border_mask(mask.voxels())
        .indexed_iter()
        .filter(|(_, &v)| v != 0)
        .map(|((z, y, x), _)| [z, y, x])
        .collect()
}

/// Squared distance transform of one line sampled every `step` mm; `f`
/// holds squared distances so far (infinite where unknown).
fn envelope_1d(f: &[f64], step: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let xq = q as f64 * step;
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let xp = p as f64 * step;
            let s = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp));
            if s <= *z.last().expect("z tracks v") {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let x = q as f64 * step;
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let dx = x - v[k] as f64 * step;
        *o = dx * dx + f[v[k]];
    }
}

/// Squared Euclidean distance (mm^2) from every voxel to the nearest
/// nonzero voxel of `features`; infinite everywhere if there is none.
pub fn squared_distance_transform(features: &Array3<u8>, spacing: Spacing) -> Array3<f64> {
    let mut dist = features.mapv(|v| if v != 0 { 0.0 } else { f64::INFINITY });
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let step = spacing.0[axis];
        let len = dist.len_of(Axis(axis));
        let mut line = vec![0.0; len];
        let mut out = vec![0.0; len];
        for mut lane in dist.lanes_mut(Axis(axis)) {
            for (l, &d) in line.iter_mut().zip(lane.iter()) {
                *l = d;
            }
            envelope_1d(&line, step, &mut out, &mut v, &mut z);
            for (d, &o) in lane.iter_mut().zip(out.iter()) {
                *d = o;
            }
        }
    }
    dist
}

/// Distances (mm) from each border voxel of `from` to the border of `to`.
pub fn directed_border_distances(from: &Array3<u8>, to: &Array3<u8>, spacing: Spacing) -> Vec<f64> {
    let to_border = border_mask(to);
    let dt = squared_distance_transform(&to_border, spacing);
    border_mask(from)
        .indexed_iter()
        .filter(|(_, &b)| b != 0)
        .map(|(i, _)| dt[i].sqrt())
        .collect()
}
