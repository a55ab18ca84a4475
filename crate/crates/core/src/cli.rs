//! Command-line front end for the `veritas` binary.
//!
//! Exit codes: 0 on success, 1 for invalid input or usage, 2 when the
//! numerics fail (no convergence, divergence, degenerate data). Tables go
//! out as CSV with a header row, structured results as JSON, logs to stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::atlas::{
    landmark_weights, procrustes_solve_weighted, weighted_average, LandmarkSet, ProcrustesOptions,
    ProcrustesSolution,
};
use crate::condition::Condition;
use crate::contracts::{build_anatomical, fit_gmm2_with, ContractConfig, EmOptions, Gmm2};
use crate::dro::toy::{per_class_accuracy, toy_train, BlobSpec, Mode, TrainConfig};
use crate::error::{Error, Result};
use crate::fallback::{eligible, fuse_atlases, AtlasEntry, FusionParams};
use crate::fusion::{brain_mask, failsafe_map, incident_fraction, trustworthy_fuse, FusionConfig};
use crate::io::{self as vio, Volume};
use crate::labelset::{
    leaf_dice, leaf_structure, marginal_ce, marginal_dice, soft_target_dice, PartialAnnotation,
    SoftPrediction, DEFAULT_ALPHA, DEFAULT_SMOOTHING,
};
use crate::metrics::{dice, hd95, hd95_fn, margin_for_other_pathologies, tune_margin, MarginTable};
use crate::volume::{LabelSpace, MaskVolume};

/// Environment variable read when `--seed` is not given.
pub const SEED_ENV: &str = "VERITAS_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "veritas",
    version,
    about = "Trustworthy segmentation fusion and supporting numerics"
)]
pub struct Cli {
    /// Worker threads for data-parallel steps (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trustworthy fusion of a backbone map with a fallback under contracts.
    Fuse(FuseArgs),
    /// Heat-kernel fusion of warped atlases into a fallback map.
    FallbackFuse(FallbackFuseArgs),
    /// Margins from HD95 false-negative distances over validation pairs.
    TuneMargins(TuneMarginsArgs),
    /// Two-component intensity GMM by EM.
    FitGmm(FitGmmArgs),
    /// Weighted generalized Procrustes on landmark CSV.
    Procrustes(ProcrustesArgs),
    /// Temporally weighted, mirror-symmetrised intensity average.
    AtlasAverage(AtlasAverageArgs),
    /// Label-set loss values for a prediction and a partial annotation.
    Losses(LossesArgs),
    /// ERM or hardness-weighted DRO training on imbalanced toy blobs.
    DroDemo(DroDemoArgs),
    /// Dice, HD95 and HD95-FN between two segmentations.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Backbone probability volume.
    #[arg(long)]
    pub ai: PathBuf,
    /// Fallback probability volume.
    #[arg(long)]
    pub fallback: PathBuf,
    /// Subject intensity volume.
    #[arg(long)]
    pub image: PathBuf,
    /// Contract config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Output probability volume header.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional conflict map output.
    #[arg(long)]
    pub conflict: Option<PathBuf>,
    /// Label space JSON overriding the config's class list.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Overrides the config's epsilon.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Conflict level counted as an incident in the log summary.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
}

#[derive(Debug, Args)]
pub struct FallbackFuseArgs {
    /// Atlas manifest JSON; relative paths resolve against its directory.
    #[arg(long)]
    pub atlases: PathBuf,
    /// Subject intensity volume.
    #[arg(long)]
    pub subject: PathBuf,
    /// Subject gestational age in weeks.
    #[arg(long)]
    pub ga_weeks: f64,
    /// neurotypical, spina_bifida or other.
    #[arg(long, value_parser = parse_condition)]
    pub condition: Condition,
    /// Brain mask used for intensity normalisation.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Fusion parameters JSON (defaults otherwise).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Output probability volume header.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TuneMarginsArgs {
    /// CSV with columns `class,condition,pred,gt` (mask volume paths).
    #[arg(long)]
    pub pairs: PathBuf,
    /// Output CSV (stdout otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitGmmArgs {
    /// Intensity volume.
    #[arg(long)]
    pub image: PathBuf,
    /// Samples are taken inside this mask (whole grid otherwise).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Output JSON (stdout otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProcrustesArgs {
    /// Landmark CSV `sample_id,ga_days,landmark_id,x_mm,y_mm,z_mm,present`.
    #[arg(long)]
    pub landmarks: PathBuf,
    /// Target age in days; every present landmark weighs 1 without it.
    #[arg(long)]
    pub ga_target: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub rel_tol: f64,
    /// Output JSON (stdout otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AtlasAverageArgs {
    /// JSON list of `{ "image": path, "ga_days": age }`.
    #[arg(long)]
    pub volumes: PathBuf,
    /// Target age in days.
    #[arg(long)]
    pub ga_target: f64,
    /// Axis of the left-right mirror.
    #[arg(long, default_value_t = 0)]
    pub flip_axis: usize,
    /// Mask for the intensity rescaling.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Output scalar volume header.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossesArgs {
    /// Probability volume.
    #[arg(long)]
    pub pred: PathBuf,
    /// Label-set volume.
    #[arg(long)]
    pub labels: PathBuf,
    /// Dice exponent on the denominator, 1 or 2.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: u32,
    #[arg(long, default_value_t = DEFAULT_SMOOTHING)]
    pub smoothing: f64,
    /// Output CSV (stdout otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DemoMode {
    Erm,
    Dro,
}

#[derive(Debug, Args)]
pub struct DroDemoArgs {
    #[arg(long, value_enum, default_value_t = DemoMode::Dro)]
    pub mode: DemoMode,
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    /// RNG seed; falls back to VERITAS_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Training set size.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Fraction of the training set in the minority class.
    #[arg(long, default_value_t = 0.01)]
    pub minority: f64,
    /// Disables the clipped importance weights in DRO mode.
    #[arg(long)]
    pub no_importance: bool,
    /// Output CSV (stdout otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Prediction: mask or probability volume.
    #[arg(long)]
    pub a: PathBuf,
    /// Reference: same kind as `--a`.
    #[arg(long)]
    pub b: PathBuf,
    /// Case identifier (default: file stem of `--a`).
    #[arg(long)]
    pub case_id: Option<String>,
    /// Label space JSON naming the channels of probability volumes.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Output CSV (stdout otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_condition(s: &str) -> std::result::Result<Condition, String> {
    s.parse::<Condition>().map_err(|e| e.to_string())
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

/// Runs a parsed command inside a pool of the requested size.
pub fn execute(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Validation("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Validation(format!("cannot start thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fuse(a) => cmd_fuse(a),
        Command::FallbackFuse(a) => cmd_fallback_fuse(a),
        Command::TuneMargins(a) => cmd_tune_margins(a),
        Command::FitGmm(a) => cmd_fit_gmm(a),
        Command::Procrustes(a) => cmd_procrustes(a),
        Command::AtlasAverage(a) => cmd_atlas_average(a),
        Command::Losses(a) => cmd_losses(a),
        Command::DroDemo(a) => cmd_dro_demo(a),
        Command::Metrics(a) => cmd_metrics(a),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) => Ok(Box::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn csv_writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    Ok(csv::Writer::from_writer(output(path)?))
}

fn csv_err(path: Option<&Path>, e: csv::Error) -> Error {
    let name = path.map_or_else(|| "stdout".to_string(), |p| p.display().to_string());
    Error::Validation(format!("{name}: {e}"))
}

fn write_rows(path: Option<&Path>, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush()
        .map_err(|e| Error::io(path.unwrap_or(Path::new("stdout")), e))
}

fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => vio::write_json(value, p),
        None => {
            let mut text = serde_json::to_string_pretty(value).expect("value serializes");
            text.push('\n');
            io::stdout()
                .lock()
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("stdout", e))
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        v.to_string()
    }
}

fn cmd_fuse(a: FuseArgs) -> Result<()> {
    let p_ai = vio::read_prob(&a.ai)?;
    let p_fb = vio::read_prob(&a.fallback)?;
    let image = vio::read_scalar(&a.image)?;
    p_ai.meta().ensure_same(p_fb.meta())?;
    p_ai.meta().ensure_same(image.meta())?;
    let mut cfg: ContractConfig = vio::read_json(&a.config)?;
    if let Some(eps) = a.epsilon {
        cfg.epsilon = eps;
    }
    let space = match &a.classes {
        Some(p) => {
            let s = vio::read_label_space(p)?;
            if s.len() != p_ai.channels() {
                return Err(Error::Validation(format!(
                    "{} names {} classes but the volumes have {} channels",
                    p.display(),
                    s.len(),
                    p_ai.channels()
                )));
            }
            s
        }
        None => cfg.label_space(p_ai.channels())?,
    };
    let margins = cfg.margins(&space)?;
    let masks: Vec<MaskVolume> = (0..space.len()).map(|c| p_fb.argmax_mask(c)).collect();
    let aw = build_anatomical(&masks, &margins, cfg.phi)?;
    let fcfg = FusionConfig::from_contracts(&cfg, &space)?;
    let fused = trustworthy_fuse(&p_ai, &p_fb, &aw, &image, &fcfg)?;
    vio::write_volume(&fused, &a.out)?;
    let conflict = failsafe_map(&p_ai, &aw)?;
    let brain = brain_mask(&p_fb, cfg.background_index(&space)?);
    let frac = incident_fraction(&conflict, a.tau, Some(&brain))?;
    eprintln!(
        "fuse: {} voxels, {:.4} of the brain mask has conflict >= {}",
        p_ai.meta().len(),
        frac,
        a.tau
    );
    if let Some(p) = &a.conflict {
        vio::write_volume(&conflict, p)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtlasManifestEntry {
    id: String,
    ga_days: f64,
    condition: Condition,
    image: PathBuf,
    probs: PathBuf,
    displacement: PathBuf,
}

fn cmd_fallback_fuse(a: FallbackFuseArgs) -> Result<()> {
    let params: FusionParams = match &a.params {
        Some(p) => vio::read_json(p)?,
        None => FusionParams::default(),
    };
    params.validate()?;
    let manifest: Vec<AtlasManifestEntry> = vio::read_json(&a.atlases)?;
    let subject = vio::read_scalar(&a.subject)?;
    let mask = a.mask.as_ref().map(vio::read_mask).transpose()?;
    let mut entries = Vec::new();
    for m in manifest
        .iter()
        .filter(|m| eligible(m.ga_days, m.condition, a.ga_weeks, a.condition, &params))
    {
        entries.push(AtlasEntry {
            id: m.id.clone(),
            ga_days: m.ga_days,
            condition: m.condition,
            image: vio::read_scalar(resolve(&a.atlases, &m.image))?,
            probs: vio::read_prob(resolve(&a.atlases, &m.probs))?,
            displacement: vio::read_vector(resolve(&a.atlases, &m.displacement))?,
        });
    }
    if entries.is_empty() {
        return Err(Error::Empty(format!(
            "no {} atlas in {} within the window around {} weeks",
            a.condition,
            a.atlases.display(),
            a.ga_weeks
        )));
    }
    let ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
    eprintln!("fallback-fuse: using atlases {}", ids.join(", "));
    let refs: Vec<&AtlasEntry> = entries.iter().collect();
    let fused = fuse_atlases(&refs, &subject, mask.as_ref(), &params)?;
    vio::write_volume(&fused, &a.out)
}

#[derive(Debug, Deserialize)]
struct PairRow {
    class: String,
    condition: String,
    pred: PathBuf,
    gt: PathBuf,
}

fn cmd_tune_margins(a: TuneMarginsArgs) -> Result<()> {
    let file = File::open(&a.pairs).map_err(|e| Error::io(&a.pairs, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut groups: std::collections::BTreeMap<(String, Condition), Vec<(MaskVolume, MaskVolume)>> =
        Default::default();
    for row in rdr.deserialize::<PairRow>() {
        let row = row.map_err(|e| Error::Validation(format!("{}: {e}", a.pairs.display())))?;
        let cond: Condition = row.condition.parse()?;
        let pred = vio::read_mask(resolve(&a.pairs, &row.pred))?;
        let gt = vio::read_mask(resolve(&a.pairs, &row.gt))?;
        groups
            .entry((row.class, cond))
            .or_default()
            .push((pred, gt));
    }
    if groups.is_empty() {
        return Err(Error::Empty(format!(
            "{} lists no pairs",
            a.pairs.display()
        )));
    }
    let mut table = MarginTable::new();
    for ((class, cond), pairs) in &groups {
        table.insert(class, *cond, tune_margin(pairs)?)?;
    }
    let classes: std::collections::BTreeSet<&str> =
        groups.keys().map(|(c, _)| c.as_str()).collect();
    for c in classes {
        if !table.contains(c, Condition::Other) {
            if let Ok(eta) = margin_for_other_pathologies(&table, c) {
                table.insert(c, Condition::Other, eta)?;
            }
        }
    }
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|(c, cond, eta)| vec![c.to_string(), cond.to_string(), fmt_f64(eta)])
        .collect();
    let header = ["class", "condition", "margin_mm"].map(String::from);
    write_rows(a.out.as_deref(), &header, &rows)
}

#[derive(Debug, Serialize)]
struct GmmReport {
    model: Gmm2,
    iterations: usize,
    mean_log_likelihood: f64,
    samples: usize,
}

fn cmd_fit_gmm(a: FitGmmArgs) -> Result<()> {
    let image = vio::read_scalar(&a.image)?;
    let mask = a.mask.as_ref().map(vio::read_mask).transpose()?;
    if let Some(m) = &mask {
        image.meta().ensure_same(m.meta())?;
    }
    let xs: Vec<f64> = image
        .data()
        .iter()
        .enumerate()
        .filter(|(i, _)| mask.as_ref().is_none_or(|m| m.data()[*i]))
        .map(|(_, &v)| v)
        .collect();
    let fit = fit_gmm2_with(&xs, &EmOptions::default())?;
    let report = GmmReport {
        model: fit.model,
        iterations: fit.iterations,
        mean_log_likelihood: *fit.log_likelihood.last().expect("trace is non-empty"),
        samples: xs.len(),
    };
    emit_json(&report, a.out.as_deref())
}

#[derive(Debug, Serialize)]
struct ProcrustesReport {
    landmark_ids: Vec<String>,
    #[serde(flatten)]
    solution: ProcrustesSolution,
}

fn cmd_procrustes(a: ProcrustesArgs) -> Result<()> {
    let set = LandmarkSet::read_csv(&a.landmarks)?;
    let w = landmark_weights(&set.configs, a.ga_target);
    let opts = ProcrustesOptions {
        max_iter: a.max_iter,
        rel_tol: a.rel_tol,
    };
    let solution = procrustes_solve_weighted(&set.configs, &w, &opts)?;
    if !solution.converged {
        eprintln!(
            "procrustes: stopped at the iteration limit ({}) before reaching the tolerance",
            solution.iterations
        );
    }
    let report = ProcrustesReport {
        landmark_ids: set.landmark_ids,
        solution,
    };
    emit_json(&report, a.out.as_deref())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AverageEntry {
    image: PathBuf,
    ga_days: f64,
}

fn cmd_atlas_average(a: AtlasAverageArgs) -> Result<()> {
    let entries: Vec<AverageEntry> = vio::read_json(&a.volumes)?;
    let volumes = entries
        .iter()
        .map(|e| vio::read_scalar(resolve(&a.volumes, &e.image)))
        .collect::<Result<Vec<_>>>()?;
    let ages: Vec<f64> = entries.iter().map(|e| e.ga_days).collect();
    let mask = a.mask.as_ref().map(vio::read_mask).transpose()?;
    let avg = weighted_average(&volumes, &ages, a.ga_target, a.flip_axis, mask.as_ref())?;
    vio::write_volume(&avg, &a.out)
}

fn cmd_losses(a: LossesArgs) -> Result<()> {
    let pv = vio::read_prob(&a.pred)?;
    let ls = vio::read_labelset(&a.labels)?;
    pv.meta().ensure_same(ls.meta())?;
    let k = pv.channels();
    let p = SoftPrediction::new(k, pv.data().to_vec())?;
    let g = PartialAnnotation::new(k, ls.data().to_vec())?;
    let mut rows = Vec::new();
    match leaf_structure(&g) {
        Ok(_) => rows.push(("leaf_dice", leaf_dice(&p, &g, a.alpha, a.smoothing)?)),
        Err(e) => eprintln!("losses: leaf_dice skipped ({e})"),
    }
    rows.push((
        "marginal_dice",
        marginal_dice(&p, &g, a.alpha, a.smoothing)?,
    ));
    rows.push((
        "soft_target_dice",
        soft_target_dice(&p, &g, a.alpha, a.smoothing)?,
    ));
    rows.push(("marginal_ce", marginal_ce(&p, &g)?));
    let rows: Vec<Vec<String>> = rows
        .into_iter()
        .map(|(n, v)| vec![n.to_string(), fmt_f64(v)])
        .collect();
    write_rows(a.out.as_deref(), &["loss".into(), "value".into()], &rows)
}

/// `--seed`, else `VERITAS_SEED`, else 0.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn cmd_dro_demo(a: DroDemoArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?;
    if !(a.minority > 0.0 && a.minority < 1.0) {
        return Err(Error::Validation(format!(
            "minority fraction {} outside (0, 1)",
            a.minority
        )));
    }
    if a.n < 3 {
        return Err(Error::Validation("need at least 3 training points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = BlobSpec::imbalanced(a.n, a.minority).sample(&mut rng);
    let test = BlobSpec::balanced(a.n / 3 + 1).sample(&mut rng);
    let mode = match a.mode {
        DemoMode::Erm => Mode::Erm,
        DemoMode::Dro => Mode::Dro {
            beta: a.beta,
            importance: !a.no_importance,
        },
    };
    let cfg = TrainConfig {
        mode,
        lr: a.lr,
        epochs: a.epochs,
        batch: a.batch,
        seed,
    };
    let r = toy_train(&train, &cfg, Some(&test))?;
    let mut header = vec!["epoch".to_string(), "mean_loss".to_string()];
    header.extend((0..train.classes).map(|c| format!("acc_c{c}")));
    header.push("entropy".into());
    let rows: Vec<Vec<String>> = r
        .history
        .iter()
        .map(|h| {
            let mut row = vec![h.epoch.to_string(), fmt_f64(h.mean_loss)];
            row.extend(h.accuracy.iter().map(|&v| fmt_f64(v)));
            row.push(fmt_f64(h.sampling_entropy));
            row
        })
        .collect();
    let minority = per_class_accuracy(&r.model, &test)[train.classes - 1];
    eprintln!("dro-demo: seed {seed}, final minority-class test accuracy {minority:.4}");
    write_rows(a.out.as_deref(), &header, &rows)
}

fn metric_row(case: &str, class: &str, a: &MaskVolume, b: &MaskVolume) -> Result<Vec<String>> {
    let d = dice(a, b)?;
    let h = match (a.is_empty(), b.is_empty()) {
        (false, false) => hd95(a, b)?,
        (true, true) => f64::NAN,
        _ => f64::INFINITY,
    };
    let hf = if a.is_empty() {
        f64::NAN
    } else {
        hd95_fn(a, b)?
    };
    Ok(vec![
        case.into(),
        class.into(),
        fmt_f64(d),
        fmt_f64(h),
        fmt_f64(hf),
    ])
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let va = vio::read_volume(&a.a)?;
    let vb = vio::read_volume(&a.b)?;
    va.meta().ensure_same(vb.meta())?;
    let case = a.case_id.clone().unwrap_or_else(|| {
        a.a.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "case".into())
    });
    let rows = match (&va, &vb) {
        (Volume::Mask(ma), Volume::Mask(mb)) => vec![metric_row(&case, "foreground", ma, mb)?],
        (Volume::Prob(pa), Volume::Prob(pb)) => {
            if pa.channels() != pb.channels() {
                return Err(Error::Validation(format!(
                    "channel counts differ: {} vs {}",
                    pa.channels(),
                    pb.channels()
                )));
            }
            let space = match &a.classes {
                Some(p) => {
                    let s = vio::read_label_space(p)?;
                    if s.len() != pa.channels() {
                        return Err(Error::Validation(format!(
                            "{} names {} classes but the volumes have {} channels",
                            p.display(),
                            s.len(),
                            pa.channels()
                        )));
                    }
                    s
                }
                None => LabelSpace::indexed(pa.channels())?,
            };
            (0..space.len())
                .map(|c| {
                    metric_row(
                        &case,
                        &space.names()[c],
                        &pa.argmax_mask(c),
                        &pb.argmax_mask(c),
                    )
                })
                .collect::<Result<Vec<_>>>()?
        }
        _ => {
            return Err(Error::Validation(
                "metrics needs two mask volumes or two probability volumes".into(),
            ))
        }
    };
    let header = ["case_id", "class", "dice", "hd95", "hd95_fn"].map(String::from);
    write_rows(a.out.as_deref(), &header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["veritas", "no-such-command"]), 1);
        assert_eq!(run(["veritas", "--help"]), 0);
    }

    #[test]
    fn missing_file_exits_one() {
        assert_eq!(
            run(["veritas", "fit-gmm", "--image", "/nonexistent/img.json"]),
            1
        );
    }

    #[test]
    fn float_formatting() {
        assert_eq!(fmt_f64(1.0), "1");
        assert_eq!(fmt_f64(0.25), "0.25");
        assert_eq!(fmt_f64(f64::NAN), "nan");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
    }
}
