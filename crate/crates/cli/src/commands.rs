//! The four workflows.

use std::fmt;
use std::path::{Path, PathBuf};

use autoseg::adversarial::{stack_batch, train};
use autoseg::archive::WeightArchive;
use autoseg::checkpoint::{self, Manifest};
use autoseg::data::{validate_pair, LabelVolume, Modality, Organ, SliceSample, TrainingModality, Volume};
use autoseg::eval::{
    dice_coeff, evaluate, largest_component, read_report, select_movpunet, write_report, CaseScore, Category,
    Connectivity, ScoreTable, Scoreboard,
};
use autoseg::io::{load_mask, load_volume, write_mask, VolumeFormat};
use autoseg::slices::{build_samples, stack_predictions};
use autoseg::variant;
use autoseg::Error;
use ndarray::{Array2, Axis};

use crate::config::{ConfigError, Effective};

/// Name of the composite best-per-cell model on the scoreboard.
pub const COMPOSITE: &str = "MOvpUNet";
/// Sigmoid outputs above this are foreground.
pub const THRESHOLD: f64 = 0.5;
const PREDICT_BATCH: usize = 4;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Run(Error),
}

impl CliError {
    /// 2 for configuration problems, 4 for numeric failures, 3 for
    /// everything caused by the input data.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(e) if e.is_numeric_error() => 4,
            CliError::Run(Error::Config(_) | Error::Spec(_) | Error::Pretrained(_)) => 2,
            CliError::Run(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn require_nonempty(key: &str, v: &[PathBuf]) -> CliResult<()> {
    if v.is_empty() {
        return Err(ConfigError::new(key, "at least one path is required").into());
    }
    Ok(())
}

fn require_same_len(key: &str, v: &[PathBuf], other: &str, n: usize) -> CliResult<()> {
    if v.len() != n {
        return Err(ConfigError::new(key, format!("has {} entries but {other} has {n}", v.len())).into());
    }
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "case".into())
}

/// Companions are required for T1 and forbidden otherwise.
fn check_companions(key: &str, modality: TrainingModality, companions: &[PathBuf], n: usize) -> CliResult<()> {
    if modality == TrainingModality::T1Dual {
        require_same_len(key, companions, "volumes", n)
    } else if !companions.is_empty() {
        Err(ConfigError::new(key, "only T1 volumes take opposed-phase companions").into())
    } else {
        Ok(())
    }
}

fn load_input(path: &Path, companion: Option<&PathBuf>, modality: TrainingModality) -> CliResult<(Volume, Option<Volume>)> {
    let volume = load_volume(path, VolumeFormat::from_path(path)?, modality.primary())?;
    let companion = match companion {
        Some(c) => Some(load_volume(c, VolumeFormat::from_path(c)?, Modality::T1Out)?),
        None => None,
    };
    Ok((volume, companion))
}

fn create_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_owned(),
        source: e,
    })?;
    Ok(())
}

/// Trains the configured variant and writes a checkpoint to the output
/// directory.
pub fn cmd_train(cfg: &Effective) -> CliResult<PathBuf> {
    let variant = cfg.variant()?;
    let modality = cfg.modality()?;
    let organ = cfg.organ()?;
    let t = &cfg.train;
    require_nonempty("train.volumes", &t.volumes)?;
    require_same_len("train.masks", &t.masks, "train.volumes", t.volumes.len())?;
    check_companions("train.companions", modality, &t.companions, t.volumes.len())?;

    let mut dataset: Vec<SliceSample> = Vec::new();
    for (i, path) in t.volumes.iter().enumerate() {
        let (volume, companion) = load_input(path, t.companions.get(i), modality)?;
        let mask_path = &t.masks[i];
        let mask = load_mask(mask_path, VolumeFormat::from_path(mask_path)?, organ, cfg.label)?;
        validate_pair(&volume, &mask)?;
        dataset.extend(build_samples(&volume, companion.as_ref(), Some(&mask), &stem(path))?);
    }
    log::info!("{} training slices from {} volumes", dataset.len(), t.volumes.len());

    let spec = variant.spec_with_width(cfg.width_multiplier);
    let mut segmenter = spec.build(cfg.seed)?;
    if variant.pretrained {
        match &t.pretrained_weights {
            Some(p) => {
                let n = segmenter.load_pretrained(&WeightArchive::read(p)?)?;
                log::info!("loaded {n} pre-trained encoder tensors from {}", p.display());
            }
            None => log::warn!(
                "variant {} expects pre-trained encoder weights but train.pretrained_weights is unset; \
                 using random initialization",
                variant.name
            ),
        }
    }
    let augment = t.augment.unwrap_or(true).then_some(&cfg.augment);
    let report = train(&dataset, segmenter, cfg.adversarial, augment)?;
    if let Some(last) = report.records.last() {
        log::info!(
            "finished after {} steps: l_G {:.4}, l_D {:.4}, dice loss {:.4}",
            last.step,
            last.l_g,
            last.l_d,
            last.l_dice
        );
    }
    let steps = report.trainer.steps();
    let (segmenter, discriminator) = report.trainer.into_parts();
    let manifest = Manifest {
        variant: variant.name.to_owned(),
        modality,
        organ,
        seed: cfg.seed,
        steps,
        segmenter: segmenter.spec(),
        discriminator: discriminator.as_ref().map(|d| *d.spec()),
    };
    checkpoint::save(&cfg.out, &manifest, &segmenter, discriminator.as_ref(), &report.records)?;
    Ok(cfg.out.clone())
}

/// Segments one volume: per-slice forward pass, threshold, re-stack and
/// keep the largest 26-connected component.
pub fn segment_volume(
    segmenter: &autoseg::cascade::Segmenter,
    volume: &Volume,
    companion: Option<&Volume>,
    organ: Organ,
) -> CliResult<LabelVolume> {
    let samples = build_samples(volume, companion, None, "predict")?;
    let mut planes: Vec<Array2<u8>> = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(PREDICT_BATCH) {
        let refs: Vec<&SliceSample> = chunk.iter().collect();
        let (x, _) = stack_batch(&refs)?;
        let y = segmenter.forward(&x)?;
        if let Some(v) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValues(format!("network output contains {v}")).into());
        }
        for b in y.axis_iter(Axis(0)) {
            planes.push(b.index_axis(Axis(2), 0).mapv(|p| (p > THRESHOLD) as u8));
        }
    }
    let stacked = stack_predictions(&planes, volume.spacing(), organ)?;
    let kept = largest_component(&stacked, Connectivity::TwentySix);
    if kept.empty {
        log::warn!("prediction is empty");
    }
    validate_pair(volume, &kept.mask)?;
    Ok(kept.mask)
}

/// Writes `<out>/<volume stem>_<organ>.<ext>` for every input volume.
pub fn cmd_predict(cfg: &Effective) -> CliResult<Vec<PathBuf>> {
    let p = &cfg.predict;
    let ck_dir = p
        .checkpoint
        .as_ref()
        .ok_or_else(|| ConfigError::new("predict.checkpoint", "required"))?;
    require_nonempty("predict.volumes", &p.volumes)?;
    let ck = checkpoint::load(ck_dir)?;
    let modality = cfg.modality.unwrap_or(ck.manifest.modality);
    let organ = cfg.organ.unwrap_or(ck.manifest.organ);
    if modality != ck.manifest.modality || organ != ck.manifest.organ {
        return Err(ConfigError::new(
            "modality",
            format!(
                "checkpoint was trained for {}/{}, not {modality}/{organ}",
                ck.manifest.modality, ck.manifest.organ
            ),
        )
        .into());
    }
    check_companions("predict.companions", modality, &p.companions, p.volumes.len())?;
    create_out(&cfg.out)?;
    let mut written = Vec::new();
    for (i, path) in p.volumes.iter().enumerate() {
        let (volume, companion) = load_input(path, p.companions.get(i), modality)?;
        let mask = segment_volume(&ck.segmenter, &volume, companion.as_ref(), organ)?;
        let format = VolumeFormat::from_path(path)?;
        let out = cfg.out.join(format!("{}_{}.{}", stem(path), organ, format.extension()));
        write_mask(&out, &mask, format)?;
        log::info!("{} -> {} ({} voxels)", path.display(), out.display(), mask.count());
        written.push(out);
    }
    Ok(written)
}

/// Scores prediction/groundtruth pairs into `<out>/report.csv`. A case whose
/// metrics are undefined (an empty mask) scores 0.
pub fn cmd_evaluate(cfg: &Effective) -> CliResult<PathBuf> {
    let e = &cfg.evaluate;
    let variant = cfg
        .variant
        .clone()
        .ok_or_else(|| ConfigError::new("variant", "required to label the report rows"))?;
    let modality = cfg.modality()?;
    let organ = cfg.organ()?;
    require_nonempty("evaluate.groundtruth", &e.groundtruth)?;
    require_same_len("evaluate.predictions", &e.predictions, "evaluate.groundtruth", e.groundtruth.len())?;
    if !e.cases.is_empty() && e.cases.len() != e.groundtruth.len() {
        return Err(ConfigError::new(
            "evaluate.cases",
            format!("has {} entries but evaluate.groundtruth has {}", e.cases.len(), e.groundtruth.len()),
        )
        .into());
    }
    let mut rows = Vec::new();
    for (i, (sp, gp)) in e.predictions.iter().zip(&e.groundtruth).enumerate() {
        let case = e.cases.get(i).cloned().unwrap_or_else(|| stem(gp));
        let s = load_mask(sp, VolumeFormat::from_path(sp)?, organ, None)?;
        let g = load_mask(gp, VolumeFormat::from_path(gp)?, organ, cfg.label)?;
        // shape and spacing problems are input errors, not zero scores
        dice_coeff(&s, &g)?;
        let report = match evaluate(&s, &g) {
            Ok(r) => Some(r),
            Err(err) => {
                log::warn!("case {case}: {err}; scoring it 0");
                None
            }
        };
        let row = CaseScore::from_report(variant.clone(), modality, organ, case, report);
        log::info!("case {}: score {:.2}", row.case, row.case_score);
        rows.push(row);
    }
    create_out(&cfg.out)?;
    let out = cfg.out.join("report.csv");
    write_report(&out, &rows)?;
    Ok(out)
}

/// Merges report CSVs, ranks every scoreboard column and selects the best
/// variant per (modality, organ); writes `<out>/scoreboard.json`.
pub fn cmd_score(cfg: &Effective) -> CliResult<(PathBuf, Scoreboard)> {
    require_nonempty("score.reports", &cfg.score.reports)?;
    let mut table = ScoreTable::new();
    for p in &cfg.score.reports {
        for row in read_report(p)?.rows() {
            table.insert(row.clone())?;
        }
    }
    let registry = select_movpunet(&table, variant::parameter_count)?;
    let board = Scoreboard::build(&table, &Category::SCOREBOARD, Some((COMPOSITE, &registry)))?;
    create_out(&cfg.out)?;
    let out = cfg.out.join("scoreboard.json");
    board.write_json(&out)?;
    Ok((out, board))
}

/// Plain-text rendering of the rankings.
pub fn render_scoreboard(board: &Scoreboard) -> String {
    let mut s = String::new();
    for c in &board.columns {
        let key = c.to_string();
        let Some(ranked) = board.rankings.get(&key) else {
            continue;
        };
        s.push_str(&format!("{key}\n"));
        for r in ranked {
            s.push_str(&format!("  {:>5}  {:<16} {:.2}\n", r.label, r.name, r.score));
        }
        if let Some(v) = board.composite.as_ref().and_then(|c| c.scores.get(&key)) {
            s.push_str(&format!("  {:>5}  {:<16} {:.2}\n", "-", COMPOSITE, v));
        }
    }
    s
}
