//! Checkpoint directories: a `manifest.toml`, one weight archive per
//! network and the training loss log.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversarial::{build_discriminator_with, Discriminator, DiscriminatorSpec, LossRecord};
use crate::archive::WeightArchive;
use crate::cascade::{Segmenter, SegmenterSpec};
use crate::data::{Organ, TrainingModality};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MANIFEST: &str = "manifest.toml";
pub const LOSSES: &str = "losses.csv";
pub const LOSS_HEADER: [&str; 5] = ["step", "l_G", "l_D", "l_dice", "adv_term"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub variant: String,
    pub modality: TrainingModality,
    pub organ: Organ,
    pub seed: u64,
    pub steps: usize,
    pub segmenter: SegmenterSpec,
    pub discriminator: Option<DiscriminatorSpec>,
}

fn store_files(spec: &SegmenterSpec) -> &'static [&'static str] {
    match spec {
        SegmenterSpec::Single { .. } => &["generator.warc"],
        SegmenterSpec::Cascade { .. } => &["stage1.warc", "stage2.warc"],
    }
}

pub fn write_losses_to<W: Write>(w: W, records: &[LossRecord]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(LOSS_HEADER)?;
    for r in records {
        out.write_record([
            r.step.to_string(),
            format!("{}", r.l_g),
            format!("{}", r.l_d),
            format!("{}", r.l_dice),
            format!("{}", r.adv_term),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_losses(path: &Path, records: &[LossRecord]) -> Result<()> {
    write_atomic(path, |w| write_losses_to(w, records).map_err(std::io::Error::other))
}

/// Writes the checkpoint into `dir`, creating it if needed. Every file is
/// written atomically.
pub fn save(
    dir: &Path,
    manifest: &Manifest,
    segmenter: &Segmenter,
    discriminator: Option<&Discriminator>,
    records: &[LossRecord],
) -> Result<()> {
    if manifest.segmenter != segmenter.spec() {
        return Err(Error::Config("manifest architecture does not match the segmenter".into()));
    }
    if manifest.discriminator != discriminator.map(|d| *d.spec()) {
        return Err(Error::Config("manifest discriminator does not match the model".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (store, name) in segmenter.stores().into_iter().zip(store_files(&manifest.segmenter)) {
        WeightArchive::from_store(store).write(&dir.join(name))?;
    }
    if let Some(d) = discriminator {
        WeightArchive::from_store(d.store()).write(&dir.join("discriminator.warc"))?;
    }
    write_losses(&dir.join(LOSSES), records)?;
    let text = toml::to_string_pretty(manifest).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    write_atomic(&dir.join(MANIFEST), |w| w.write_all(text.as_bytes()))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    m.segmenter.validate()?;
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub segmenter: Segmenter,
    pub discriminator: Option<Discriminator>,
}

/// Rebuilds the networks described by the manifest and restores their
/// weights.
pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let mut segmenter = manifest.segmenter.build(0)?;
    let files = store_files(&manifest.segmenter);
    for (store, name) in segmenter.stores_mut().into_iter().zip(files) {
        WeightArchive::read(&dir.join(name))?.restore_into(store)?;
    }
    let discriminator = match manifest.discriminator {
        Some(spec) => {
            let mut d = build_discriminator_with(spec, 0)?;
            WeightArchive::read(&dir.join("discriminator.warc"))?.restore_into(d.store_mut())?;
            Some(d)
        }
        None => None,
    };
    Ok(Checkpoint {
        manifest,
        segmenter,
        discriminator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::CascadeSpec;
    use crate::generator::{EncoderKind, NetworkSpec};
    use ndarray::Array4;

    #[test]
    fn roundtrip_preserves_outputs() {
        let spec = SegmenterSpec::Cascade {
            cascade: CascadeSpec::from_base(NetworkSpec::new(EncoderKind::Basic32).width(0.125)),
        };
        let seg = spec.build(7).unwrap();
        let d = build_discriminator_with(DiscriminatorSpec::new(4).width(0.125), 3).unwrap();
        let manifest = Manifest {
            variant: "unet11".into(),
            modality: TrainingModality::T2Spir,
            organ: Organ::Spleen,
            seed: 7,
            steps: 1,
            segmenter: spec,
            discriminator: Some(*d.spec()),
        };
        let rec = LossRecord {
            step: 1,
            l_g: 2.0,
            l_d: 1.0,
            l_dice: 0.5,
            adv_term: 0.25,
        };
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &manifest, &seg, Some(&d), &[rec]).unwrap();
        let ck = load(dir.path()).unwrap();
        assert_eq!(ck.manifest, manifest);
        let x = Array4::from_shape_fn((1, 16, 16, 3), |(_, i, j, c)| ((i * 3 + j + c) % 7) as f64 / 7.0);
        // weights are archived as f32
        let (a, b) = (ck.segmenter.forward(&x).unwrap(), seg.forward(&x).unwrap());
        assert!(a.iter().zip(b.iter()).all(|(p, q)| (p - q).abs() < 1e-5));
        let again = load(dir.path()).unwrap().segmenter.forward(&x).unwrap();
        assert_eq!(again, a);
        let losses = fs::read_to_string(dir.path().join(LOSSES)).unwrap();
        assert_eq!(losses, "step,l_G,l_D,l_dice,adv_term\n1,2,1,0.5,0.25\n");
    }
}
