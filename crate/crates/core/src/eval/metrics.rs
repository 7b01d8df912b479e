//! Overlap, volume and surface metrics between a segmentation `S` and its
//! groundtruth `G`.

use serde::{Deserialize, Serialize};

use super::surface::directed_border_distances;
use crate::data::{LabelVolume, Spacing};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice: f64,
    /// Percent.
    pub ravd: f64,
    /// Millimetres.
    pub assd: f64,
    /// Millimetres.
    pub mssd: f64,
}

fn check_pair(s: &LabelVolume, g: &LabelVolume) -> Result<()> {
    if s.dim() != g.dim() {
        return Err(Error::Metric(format!(
            "segmentation is {:?} but groundtruth is {:?}",
            s.dim(),
            g.dim()
        )));
    }
    if !s.spacing().approx_eq(&g.spacing()) {
        return Err(Error::Metric(format!(
            "segmentation spacing {:?} differs from groundtruth spacing {:?}",
            s.spacing().0,
            g.spacing().0
        )));
    }
    Ok(())
}

fn intersection(s: &LabelVolume, g: &LabelVolume) -> usize {
    s.voxels()
        .iter()
        .zip(g.voxels().iter())
        .filter(|(&a, &b)| a != 0 && b != 0)
        .count()
}

/// `2|S n G| / (|S| + |G|)`; two empty masks agree perfectly.
pub fn dice_coeff(s: &LabelVolume, g: &LabelVolume) -> Result<f64> {
    check_pair(s, g)?;
    let (ns, ng) = (s.count(), g.count());
    if ns + ng == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * intersection(s, g) as f64 / (ns + ng) as f64)
}

/// `100 * abs(|S| - |G|) / |G|`.
pub fn ravd(s: &LabelVolume, g: &LabelVolume) -> Result<f64> {
    check_pair(s, g)?;
    let (ns, ng) = (s.count(), g.count());
    if ng == 0 {
        return Err(Error::Metric("RAVD is undefined for an empty groundtruth".into()));
    }
    Ok(100.0 * ns.abs_diff(ng) as f64 / ng as f64)
}

fn both_directions(s: &LabelVolume, g: &LabelVolume) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(s, g)?;
    if s.is_empty() || g.is_empty() {
        return Err(Error::Metric(
            "surface distances are undefined when either mask is empty".into(),
        ));
    }
    let sp: Spacing = g.spacing();
    Ok((
        directed_border_distances(s.voxels(), g.voxels(), sp),
        directed_border_distances(g.voxels(), s.voxels(), sp),
    ))
}

/// Mean over the border voxels of both masks of the distance to the other
/// mask's border, in mm.
pub fn assd(s: &LabelVolume, g: &LabelVolume) -> Result<f64> {
    let (a, b) = both_directions(s, g)?;
    Ok((a.iter().sum::<f64>() + b.iter().sum::<f64>()) / (a.len() + b.len()) as f64)
}

/// Largest border-to-border distance in either direction, in mm.
pub fn mssd(s: &LabelVolume, g: &LabelVolume) -> Result<f64> {
    let (a, b) = both_directions(s, g)?;
    Ok(a.iter().chain(b.iter()).cloned().fold(0.0, f64::max))
}

/// All four metrics, sharing one pair of distance transforms.
pub fn evaluate(s: &LabelVolume, g: &LabelVolume) -> Result<MetricReport> {
    let dice = dice_coeff(s, g)?;
    let ravd = ravd(s, g)?;
    let (a, b) = both_directions(s, g)?;
    let n = (a.len() + b.len()) as f64;
    Ok(MetricReport {
        dice,
        ravd,
        assd: (a.iter().sum::<f64>() + b.iter().sum::<f64>()) / n,
        mssd: a.iter().chain(b.iter()).cloned().fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Organ;
    use ndarray::Array3;

    fn lv(v: Array3<u8>, sp: Spacing) -> LabelVolume {
        LabelVolume::new(v, sp, Organ::Spleen).unwrap()
    }

    fn iso() -> Spacing {
        Spacing::isotropic(1.0).unwrap()
    }

    #[test]
    fn dice_cases() {
        let mut a = Array3::<u8>::zeros((1, 1, 6));
        let mut b = a.clone();
        a.slice_mut(ndarray::s![0, 0, 0..4]).fill(1);
        b.slice_mut(ndarray::s![0, 0, 2..6]).fill(1);
        assert_eq!(dice_coeff(&lv(a.clone(), iso()), &lv(b, iso())).unwrap(), 0.5);
        assert_eq!(dice_coeff(&lv(a.clone(), iso()), &lv(a.clone(), iso())).unwrap(), 1.0);
        let z = lv(Array3::zeros((1, 1, 6)), iso());
        assert_eq!(dice_coeff(&z, &z).unwrap(), 1.0);
        assert_eq!(dice_coeff(&lv(a, iso()), &z).unwrap(), 0.0);
        assert!(dice_coeff(&z, &lv(Array3::zeros((1, 1, 5)), iso())).is_err());
    }

    #[test]
    fn ravd_cases() {
        let mut s = Array3::<u8>::zeros((10, 11, 1));
        let mut g = s.clone();
        s.fill(1);
        g.slice_mut(ndarray::s![.., 0..10, ..]).fill(1);
        assert_eq!(ravd(&lv(s, iso()), &lv(g.clone(), iso())).unwrap(), 10.0);
        assert_eq!(ravd(&lv(g.clone(), iso()), &lv(g, iso())).unwrap(), 0.0);
        let z = lv(Array3::zeros((10, 11, 1)), iso());
        assert!(ravd(&z, &z).is_err());
    }

    #[test]
    fn single_voxel_distances() {
        let mut s = Array3::<u8>::zeros((1, 1, 3));
        let mut g = s.clone();
        s[[0, 0, 0]] = 1;
        g[[0, 0, 2]] = 1;
        let r = evaluate(&lv(s.clone(), iso()), &lv(g.clone(), iso())).unwrap();
        assert_eq!((r.assd, r.mssd), (2.0, 2.0));
        let sp = Spacing::new(1.0, 1.0, 2.5).unwrap();
        let (s, g) = (lv(s, sp), lv(g, sp));
        assert_eq!((assd(&s, &g).unwrap(), mssd(&s, &g).unwrap()), (5.0, 5.0));
        assert_eq!((assd(&s, &s).unwrap(), mssd(&s, &s).unwrap()), (0.0, 0.0));
        let z = lv(Array3::zeros((1, 1, 3)), sp);
        assert!(assd(&s, &z).is_err());
    }
}
