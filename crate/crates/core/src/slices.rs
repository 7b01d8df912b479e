//! Axial slice extraction, channel replication and re-stacking.

use ndarray::{s, stack, Array2, Array3, Axis};

use crate::data::{validate_pair, LabelVolume, Modality, Organ, SliceSample, Spacing, Volume};
use crate::error::{Error, Result};

/// One axial plane and, when a mask was given, its target plane.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePlanes {
    pub image: Array2<f64>,
    pub target: Option<Array2<u8>>,
}

pub fn extract_slices(volume: &Volume, mask: Option<&LabelVolume>) -> Result<Vec<SlicePlanes>> {
    if let Some(m) = mask {
        validate_pair(volume, m)?;
    }
    let depth = volume.dim().0;
    Ok((0..depth)
        .map(|k| SlicePlanes {
            image: volume.voxels().index_axis(Axis(0), k).to_owned(),
            target: mask.map(|m| m.voxels().index_axis(Axis(0), k).to_owned()),
        })
        .collect())
}

/// Builds the 3-channel network input from one plane. CT and T2-SPIR planes
/// are triplicated; a T1 in-phase plane needs its registered opposed-phase
/// companion and yields `(in, out, in)`.
pub fn replicate_channels(
    plane: &Array2<f64>,
    modality: Modality,
    companion: Option<&Array2<f64>>,
) -> Result<Array3<f64>> {
    let views = match (modality, companion) {
        (Modality::T1In, Some(out)) => {
            if out.dim() != plane.dim() {
                return Err(Error::Replication(format!(
                    "T1 opposed-phase plane is {:?}, in-phase plane is {:?}",
                    out.dim(),
                    plane.dim()
                )));
            }
            [plane.view(), out.view(), plane.view()]
        }
        (Modality::T1In, None) => {
            return Err(Error::Replication(
                "a T1 in-phase plane needs its opposed-phase companion".into(),
            ))
        }
        (Modality::T1Out, _) => {
            return Err(Error::Replication(
                "T1 opposed-phase planes enter only as the companion of an in-phase plane".into(),
            ))
        }
        (Modality::Ct | Modality::T2Spir, Some(_)) => {
            return Err(Error::Replication(format!(
                "{modality:?} planes take no companion"
            )))
        }
        (Modality::Ct | Modality::T2Spir, None) => [plane.view(), plane.view(), plane.view()],
    };
    Ok(stack(Axis(2), &views).expect("planes share a shape"))
}

/// Per-plane min-max rescaling to `[0, 1]`; a constant plane becomes zeros.
pub fn normalize_plane(plane: &Array2<f64>) -> Array2<f64> {
    let (lo, hi) = plane
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range > 0.0 {
        plane.mapv(|v| (v - lo) / range)
    } else {
        Array2::zeros(plane.dim())
    }
}

/// Turns a volume (plus the T1 opposed-phase companion when needed) and an
/// optional mask into network-ready samples: each plane is min-max normalized
/// and replicated to three channels. Without a mask the targets are zero.
pub fn build_samples(
    volume: &Volume,
    companion: Option<&Volume>,
    mask: Option<&LabelVolume>,
    source_id: &str,
) -> Result<Vec<SliceSample>> {
    let planes = extract_slices(volume, mask)?;
    let companion_planes = match companion {
        Some(c) => {
            if c.dim() != volume.dim() {
                return Err(Error::Replication(format!(
                    "companion volume is {:?}, primary volume is {:?}",
                    c.dim(),
                    volume.dim()
                )));
            }
            Some(extract_slices(c, None)?)
        }
        None => None,
    };
    planes
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            let image = normalize_plane(&p.image);
            let comp = companion_planes.as_ref().map(|c| normalize_plane(&c[k].image));
            let input = replicate_channels(&image, volume.modality(), comp.as_ref())?;
            let target = p.target.unwrap_or_else(|| Array2::zeros(image.dim()));
            SliceSample::new(input, target, k, source_id)
        })
        .collect()
}

/// Stacks 2D binary planes back into a volume, plane `k` becoming slice `k`.
pub fn stack_predictions(planes: &[Array2<u8>], spacing: Spacing, organ: Organ) -> Result<LabelVolume> {
    let first = planes
        .first()
        .ok_or_else(|| Error::Shape("cannot stack an empty list of planes".into()))?;
    if let Some((k, p)) = planes.iter().enumerate().find(|(_, p)| p.dim() != first.dim()) {
        return Err(Error::Shape(format!(
            "ragged planes: plane {k} is {:?}, plane 0 is {:?}",
            p.dim(),
            first.dim()
        )));
    }
    let (h, w) = first.dim();
    let mut voxels = Array3::<u8>::zeros((planes.len(), h, w));
    for (k, p) in planes.iter().enumerate() {
        voxels.slice_mut(s![k, .., ..]).assign(p);
    }
    LabelVolume::new(voxels, spacing, organ)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Spacing;

    fn sp() -> Spacing {
        Spacing::new(5.0, 1.5, 1.5).unwrap()
    }

    fn volume(d: usize, modality: Modality) -> Volume {
        let v = Array3::from_shape_fn((d, 8, 8), |(k, i, j)| (k * 64 + i * 8 + j) as f64);
        Volume::new(v, sp(), modality).unwrap()
    }

    #[test]
    fn one_plane_per_axial_slice() {
        assert_eq!(extract_slices(&volume(26, Modality::T2Spir), None).unwrap().len(), 26);
        let planes = extract_slices(&volume(1, Modality::Ct), None).unwrap();
        assert_eq!(planes.len(), 1);
        assert!(planes[0].target.is_none());
    }

    #[test]
    fn stack_inverts_extract() {
        let mask = Array3::from_shape_fn((5, 8, 8), |(k, i, j)| ((k + i * j) % 3 == 0) as u8);
        let mask = LabelVolume::new(mask, sp(), Organ::Liver).unwrap();
        let vol = volume(5, Modality::Ct);
        let planes: Vec<_> = extract_slices(&vol, Some(&mask))
            .unwrap()
            .into_iter()
            .map(|p| p.target.unwrap())
            .collect();
        let back = stack_predictions(&planes, sp(), Organ::Liver).unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn stack_shapes_and_errors() {
        let planes = vec![Array2::<u8>::zeros((256, 256)); 26];
        assert_eq!(stack_predictions(&planes, sp(), Organ::Spleen).unwrap().dim(), (26, 256, 256));
        assert!(stack_predictions(&[], sp(), Organ::Spleen).is_err());
        let ragged = vec![Array2::<u8>::zeros((4, 4)), Array2::<u8>::zeros((4, 5))];
        assert!(matches!(stack_predictions(&ragged, sp(), Organ::Spleen), Err(Error::Shape(_))));
    }

    #[test]
    fn replication_rules() {
        let a = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64);
        let b = a.mapv(|v| -v);
        for m in [Modality::Ct, Modality::T2Spir] {
            let x = replicate_channels(&a, m, None).unwrap();
            for c in 0..3 {
                assert_eq!(x.index_axis(Axis(2), c), a);
            }
        }
        let x = replicate_channels(&a, Modality::T1In, Some(&b)).unwrap();
        assert_eq!(x.index_axis(Axis(2), 0), a);
        assert_eq!(x.index_axis(Axis(2), 1), b);
        assert_eq!(x.index_axis(Axis(2), 2), a);
        assert!(replicate_channels(&a, Modality::T1In, None).is_err());
        assert!(replicate_channels(&a, Modality::T1In, Some(&Array2::zeros((4, 4)))).is_err());
    }

    #[test]
    fn samples_are_normalized_per_plane() {
        let vol = volume(3, Modality::Ct);
        let samples = build_samples(&vol, None, None, "case").unwrap();
        assert_eq!(samples.len(), 3);
        for s in &samples {
            let max = s.input.iter().cloned().fold(f64::MIN, f64::max);
            let min = s.input.iter().cloned().fold(f64::MAX, f64::min);
            assert_eq!((min, max), (0.0, 1.0));
        }
    }
}
