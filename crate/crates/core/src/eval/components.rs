//! 3D connected components.

use std::collections::VecDeque;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::data::LabelVolume;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Connectivity {
    /// Face neighbours.
    #[serde(rename = "6")]
    Six,
    /// Face, edge and corner neighbours.
    #[serde(rename = "26")]
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let n = dz.abs() + dy.abs() + dx.abs();
                    let keep = match self {
                        Connectivity::Six => n == 1,
                        Connectivity::TwentySix => n > 0,
                    };
                    if keep {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }
}

impl std::str::FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "6" => Ok(Self::Six),
            "26" => Ok(Self::TwentySix),
            other => Err(Error::Config(format!("connectivity must be 6 or 26, got {other:?}"))),
        }
    }
}

/// Labels foreground components `1..=n` in raster order of their first
/// voxel; returns the label map and the component sizes.
pub fn label_components(mask: &Array3<u8>, conn: Connectivity) -> (Array3<u32>, Vec<usize>) {
    let dim = mask.dim();
    let offsets = conn.offsets();
    let mut labels = Array3::<u32>::zeros(dim);
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for ((z, y, x), &v) in mask.indexed_iter() {
        if v == 0 || labels[[z, y, x]] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        labels[[z, y, x]] = id;
        queue.push_back([z, y, x]);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            for o in &offsets {
                let q = [
                    p[0] as isize + o[0],
                    p[1] as isize + o[1],
                    p[2] as isize + o[2],
                ];
                if q[0] < 0
                    || q[1] < 0
                    || q[2] < 0
                    || q[0] >= dim.0 as isize
                    || q[1] >= dim.1 as isize
                    || q[2] >= dim.2 as isize
                {
                    continue;
                }
                let q = [q[0] as usize, q[1] as usize, q[2] as usize];
                if mask[q] != 0 && labels[q] == 0 {
                    labels[q] = id;
                    queue.push_back(q);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentResult {
    pub mask: LabelVolume,
    /// Set when the input had no foreground.
    pub empty: bool,
    pub components: usize,
}

/// Keeps only the largest connected component. Among equally large
/// components the one whose first voxel comes first in (depth, height,
/// width) order wins.
pub fn largest_component(mask: &LabelVolume, conn: Connectivity) -> ComponentResult {
    let (labels, sizes) = label_components(mask.voxels(), conn);
    let Some(best) = sizes
        .iter()
        .enumerate()
        .fold(None::<(usize, usize)>, |acc, (i, &s)| match acc {
            Some((_, bs)) if bs >= s => acc,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i as u32 + 1)
    else {
        return ComponentResult {
            mask: mask.clone(),
            empty: true,
            components: 0,
        };
    };
    let kept = labels.mapv(|l| (l == best) as u8);
    ComponentResult {
        mask: LabelVolume::new(kept, mask.spacing(), mask.organ()).expect("binary by construction"),
        empty: false,
        components: sizes.len(),
    }
}
