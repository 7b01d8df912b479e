//! Random affine augmentation of slice samples.
//!
//! Every copy draws its own transform from a seed derived from
//! `(seed, source_id, slice_index, copy_index)`, so copies can be produced
//! lazily, in any order, and still be reproducible.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SliceSample;
use crate::error::{Error, Result};

/// Symmetric ranges; a sample draws uniformly from `[-range, range]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    /// Isotropic scale change as a fraction (0.1 means 0.9 to 1.1).
    pub scale_range: f64,
    pub rotation_range: f64,
    pub shear_range: f64,
    /// Translation as a fraction of the side length.
    pub shift_range: f64,
    pub copies: usize,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            scale_range: 0.10,
            rotation_range: 10.0,
            shear_range: 5.0,
            shift_range: 0.10,
            copies: 100,
            seed: 0,
        }
    }
}

impl AugmentParams {
    pub fn identity(copies: usize, seed: u64) -> Self {
        Self {
            scale_range: 0.0,
            rotation_range: 0.0,
            shear_range: 0.0,
            shift_range: 0.0,
            copies,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.copies == 0 {
            return Err(Error::Config("augment.copies must be at least 1".into()));
        }
        let ranges = [
            ("scale_range", self.scale_range),
            ("rotation_range", self.rotation_range),
            ("shear_range", self.shear_range),
            ("shift_range", self.shift_range),
        ];
        for (name, r) in ranges {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::Config(format!("augment.{name} must be finite and >= 0, got {r}")));
            }
        }
        if self.scale_range >= 1.0 {
            return Err(Error::Config("augment.scale_range must be below 1".into()));
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Platform-independent seed for one augmented copy.
pub fn copy_seed(seed: u64, source_id: &str, slice_index: usize, copy_index: usize) -> u64 {
    [fnv1a(source_id.as_bytes()), slice_index as u64, copy_index as u64]
        .iter()
        .fold(splitmix(seed), |h, &v| splitmix(h ^ v))
}

/// Maps output pixel coordinates to source coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    /// Forward linear part acting on `(row, col)` offsets from the centre.
    pub matrix: [[f64; 2]; 2],
    /// Forward translation in pixels.
    pub shift: [f64; 2],
}

impl Affine {
    pub fn identity() -> Self {
        Self {
            matrix: [[1.0, 0.0], [0.0, 1.0]],
            shift: [0.0, 0.0],
        }
    }

    pub fn det(&self) -> f64 {
        let m = self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    fn draw<R: Rng>(params: &AugmentParams, h: usize, w: usize, rng: &mut R) -> Self {
        let mut sym = |r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let s = 1.0 + sym(params.scale_range);
        let theta = sym(params.rotation_range).to_radians();
        let shear = sym(params.shear_range).to_radians().tan();
        let dy = sym(params.shift_range) * h as f64;
        let dx = sym(params.shift_range) * w as f64;
        let (sn, cs) = theta.sin_cos();
        // rotation * shear * scale
        let rot = [[cs, -sn], [sn, cs]];
        let sh = [[1.0, shear], [0.0, 1.0]];
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = s * (rot[i][0] * sh[0][j] + rot[i][1] * sh[1][j]);
            }
        }
        Self {
            matrix: m,
            shift: [dy, dx],
        }
    }

    /// Source position of output pixel `(i, j)` for an image centred at `c`.
    fn source(&self, inv: &[[f64; 2]; 2], c: [f64; 2], i: usize, j: usize) -> [f64; 2] {
        let y = i as f64 - c[0] - self.shift[0];
        let x = j as f64 - c[1] - self.shift[1];
        [
            inv[0][0] * y + inv[0][1] * x + c[0],
            inv[1][0] * y + inv[1][1] * x + c[1],
        ]
    }

    fn inverse(&self) -> [[f64; 2]; 2] {
        let m = self.matrix;
        let d = self.det();
        [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
    }

    /// Warps an image: bilinear interpolation, out-of-bounds pixels take
    /// each channel's minimum.
    pub fn warp_image(&self, img: &Array3<f64>) -> Array3<f64> {
        let (h, w, c) = img.dim();
        let fill: Vec<f64> = (0..c)
            .map(|k| {
                img.slice(ndarray::s![.., .., k])
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let inv = self.inverse();
        let centre = [(h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0];
        let mut out = Array3::zeros((h, w, c));
        for i in 0..h {
            for j in 0..w {
                let [y, x] = self.source(&inv, centre, i, j);
                let inside = y >= 0.0 && x >= 0.0 && y <= (h - 1) as f64 && x <= (w - 1) as f64;
                if !inside {
                    for k in 0..c {
                        out[[i, j, k]] = fill[k];
                    }
                    continue;
                }
                let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                let (fy, fx) = (y - y0 as f64, x - x0 as f64);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                for k in 0..c {
                    let top = img[[y0, x0, k]] * (1.0 - fx) + img[[y0, x1, k]] * fx;
                    let bot = img[[y1, x0, k]] * (1.0 - fx) + img[[y1, x1, k]] * fx;
                    out[[i, j, k]] = if fy == 0.0 { top } else { top * (1.0 - fy) + bot * fy };
                }
            }
        }
        out
    }

    /// Warps a mask with nearest-neighbour lookup; outside is background.
    pub fn warp_mask(&self, mask: &Array2<u8>) -> Array2<u8> {
        let (h, w) = mask.dim();
        let inv = self.inverse();
        let centre = [(h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0];
        Array2::from_shape_fn((h, w), |(i, j)| {
            let [y, x] = self.source(&inv, centre, i, j);
            let (y, x) = (y.round(), x.round());
            if y >= 0.0 && x >= 0.0 && y < h as f64 && x < w as f64 {
                mask[[y as usize, x as usize]]
            } else {
                0
            }
        })
    }
}

/// Draws the transform of one copy, redrawing degenerate ones.
pub fn copy_transform(sample: &SliceSample, params: &AugmentParams, copy_index: usize) -> Affine {
    let seed = copy_seed(params.seed, &sample.source_id, sample.slice_index, copy_index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let a = Affine::draw(params, sample.height(), sample.width(), &mut rng);
        if a.det().abs() > 1e-6 {
            return a;
        }
    }
}

/// Produces copy number `copy_index` of `sample`.
pub fn augment_copy(sample: &SliceSample, params: &AugmentParams, copy_index: usize) -> SliceSample {
    let a = copy_transform(sample, params, copy_index);
    SliceSample {
        input: a.warp_image(&sample.input),
        target: a.warp_mask(&sample.target),
        slice_index: sample.slice_index,
        source_id: sample.source_id.clone(),
    }
}

/// Produces all `params.copies` augmented copies of `sample`.
pub fn augment(sample: &SliceSample, params: &AugmentParams) -> Result<Vec<SliceSample>> {
    params.validate()?;
    Ok((0..params.copies).map(|k| augment_copy(sample, params, k)).collect())
}
