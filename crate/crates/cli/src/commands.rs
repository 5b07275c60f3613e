use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args};
use fuzzyseg::annotations::{load_annotations, synthesize_weak_labels};
use fuzzyseg::harness::{refine_sample, run_leave_one_out, Sample};
use fuzzyseg::io::{read_image, read_logits, read_mask, read_probs, write_bytes, write_logits, write_mask};
use fuzzyseg::metrics::{mean_over_dataset, ConfusionAccumulator};
use fuzzyseg::refine::init_from_prob;
use fuzzyseg::superpixels::{load_superpixels, slic};
use fuzzyseg::synthetic::stream_rng;
use fuzzyseg::{Family, LabelMap, LogitField};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;

use crate::config::{self, RunConfig};
use crate::error::CliError;
use crate::ConfigArgs;

/// Fails with a config error naming `path` when it is not a readable file.
pub fn input(path: &Path) -> Result<&Path, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Config(format!("input file not found: {}", path.display())))
    }
}

pub fn load_config(args: &ConfigArgs, mut flags: Vec<(&'static str, Value)>) -> Result<RunConfig, CliError> {
    if let Some(seed) = args.seed {
        flags.push(("seed", Value::from(seed)));
    }
    config::load(args.config.as_deref(), &args.overrides, flags)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => Ok(write_bytes(p, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Input files for one image.
struct SampleFiles {
    name: String,
    probs: Option<PathBuf>,
    logits: Option<PathBuf>,
    annotations: PathBuf,
    image: Option<PathBuf>,
    superpixels: Option<PathBuf>,
    gt: Option<PathBuf>,
}

impl SampleFiles {
    fn check_inputs(&self, cfg: &RunConfig) -> Result<(), CliError> {
        let paths = [&self.probs, &self.logits, &self.image, &self.superpixels, &self.gt];
        for p in paths.into_iter().flatten().chain([&self.annotations]) {
            input(p)?;
        }
        if self.probs.is_some() == self.logits.is_some() {
            return Err(CliError::Config(format!("{}: give exactly one of probs or logits", self.name)));
        }
        if cfg.constraints.contains(Family::Borders) && self.image.is_none() && self.superpixels.is_none() {
            return Err(CliError::Config(format!(
                "{}: the borders family needs an image or a superpixel map",
                self.name
            )));
        }
        if cfg.constraints.contains(Family::Fs) && self.gt.is_none() {
            return Err(CliError::Config(format!("{}: the fs family needs a ground-truth mask", self.name)));
        }
        Ok(())
    }

    fn load(&self, cfg: &RunConfig) -> Result<Sample, CliError> {
        let init: LogitField = match (&self.probs, &self.logits) {
            (Some(p), _) => init_from_prob(&read_probs(p)?, cfg.init_floor)?,
            (None, Some(l)) => read_logits(l)?,
            (None, None) => unreachable!("checked by check_inputs"),
        };
        let shape = init.shape();
        let (h, w) = (shape.height, shape.width);
        let annotations = load_annotations(&self.annotations, h, w, cfg.classes.as_deref())?;
        if annotations.classes.len() != shape.classes {
            return Err(CliError::Config(format!(
                "{}: annotations name {} classes, the field has {}",
                self.annotations.display(),
                annotations.classes.len(),
                shape.classes
            )));
        }
        let superpixels = if !cfg.constraints.contains(Family::Borders) {
            None
        } else if let Some(p) = &self.superpixels {
            Some(load_superpixels(p, h, w)?)
        } else {
            let path = self.image.as_ref().expect("checked by check_inputs");
            let img = read_image(path)?;
            if (img.height, img.width) != (h, w) {
                return Err(CliError::Config(format!(
                    "{}: image is {}x{}, the field is {h}x{w}",
                    path.display(),
                    img.height,
                    img.width
                )));
            }
            Some(slic(&img, &cfg.slic_for(h, w))?)
        };
        let gt = match &self.gt {
            Some(p) => {
                let m = read_mask(p)?;
                if (m.height(), m.width()) != (h, w) {
                    return Err(CliError::Config(format!("{}: mask size differs from the field", p.display())));
                }
                m.check_classes(shape.classes)?;
                Some(m)
            }
            None => None,
        };
        Ok(Sample { name: self.name.clone(), init, annotations, superpixels, gt })
    }
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("init").required(true).args(["probs", "logits"])))]
pub struct RefineArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Pseudo-label probability field (PFT).
    #[arg(long, value_name = "FILE")]
    probs: Option<PathBuf>,
    /// Initial logit field (PFT), used as is.
    #[arg(long, value_name = "FILE")]
    logits: Option<PathBuf>,
    /// Annotation JSON with boxes, scribbles and points.
    #[arg(long, value_name = "FILE")]
    annotations: PathBuf,
    /// Image (PGM/PPM) to compute superpixels from.
    #[arg(long, value_name = "FILE")]
    image: Option<PathBuf>,
    /// Precomputed superpixel map (PGM), instead of running SLIC.
    #[arg(long, value_name = "FILE")]
    superpixels: Option<PathBuf>,
    /// Ground-truth mask, needed only by the fs family.
    #[arg(long, value_name = "FILE")]
    gt: Option<PathBuf>,
    /// Where to write the refined mask (PGM).
    #[arg(long, value_name = "FILE")]
    out_mask: PathBuf,
    /// Where to write the loss trace (JSON lines).
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
    /// Where to write the refined logits (PFT).
    #[arg(long, value_name = "FILE")]
    out_logits: Option<PathBuf>,
    /// Number of optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
}

pub fn refine(a: RefineArgs) -> Result<(), CliError> {
    let mut flags = Vec::new();
    if let Some(s) = a.steps {
        flags.push(("refine.steps", Value::from(s)));
    }
    if let Some(lr) = a.lr {
        flags.push(("refine.learning_rate", Value::from(lr)));
    }
    let cfg = load_config(&a.cfg, flags)?;
    let files = SampleFiles {
        name: a.annotations.display().to_string(),
        probs: a.probs,
        logits: a.logits,
        annotations: a.annotations,
        image: a.image,
        superpixels: a.superpixels,
        gt: a.gt,
    };
    files.check_inputs(&cfg)?;
    let sample = files.load(&cfg)?;
    let out = refine_sample(&sample, &cfg.constraints, &cfg.refine)?;
    write_mask(&a.out_mask, &out.mask)?;
    if let Some(p) = &a.trace {
        write_bytes(p, out.trace.to_jsonl().as_bytes())?;
    }
    if let Some(p) = &a.out_logits {
        write_logits(p, &out.logits)?;
    }
    if let (Some(first), Some(last)) = (out.trace.first(), out.trace.last()) {
        println!("loss {:.6} -> {:.6} over {} steps", first.loss, last.loss, cfg.refine.steps);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Predicted mask (PGM). Repeat once per image, in the same order as --gt.
    #[arg(long, value_name = "FILE", required = true)]
    pred: Vec<PathBuf>,
    /// Ground-truth mask (PGM). Repeat once per image.
    #[arg(long, value_name = "FILE", required = true)]
    gt: Vec<PathBuf>,
    /// Number of classes (default: largest label seen plus one).
    #[arg(long)]
    classes: Option<usize>,
    /// Write per-class scores as CSV here instead of standard output.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    /// Also write the scores as JSON.
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    load_config(&a.cfg, Vec::new())?;
    if a.pred.len() != a.gt.len() {
        return Err(CliError::Config(format!("{} --pred files but {} --gt files", a.pred.len(), a.gt.len())));
    }
    for p in a.pred.iter().chain(&a.gt) {
        input(p)?;
    }
    let pairs: Vec<(LabelMap, LabelMap)> = a
        .pred
        .par_iter()
        .zip(&a.gt)
        .map(|(p, g)| Ok((read_mask(p)?, read_mask(g)?)))
        .collect::<Result<_, fuzzyseg::Error>>()?;
    let seen = pairs.iter().map(|(p, g)| p.max_label().max(g.max_label()) + 1).max().unwrap_or(1);
    let classes = match a.classes {
        Some(c) if c < seen => {
            return Err(CliError::Config(format!("--classes {c} but a mask uses label {}", seen - 1)));
        }
        Some(c) => c,
        None => seen,
    };
    let accs =
        pairs.par_iter().map(|(p, g)| ConfusionAccumulator::from_pair(p, g, classes)).collect::<Result<Vec<_>, _>>()?;
    let scores = mean_over_dataset(&accs);
    let mut csv = scores.to_csv();
    csv.push_str(&format!("mean,{},{}\n", scores.miou, scores.mdice));
    write_output(a.csv.as_deref(), &csv)?;
    if let Some(p) = &a.json {
        let text = serde_json::to_string_pretty(&scores).map_err(fuzzyseg::Error::from)?;
        write_bytes(p, format!("{text}\n").as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    samples: Vec<ManifestSample>,
}

/// One manifest entry; paths are relative to the manifest file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSample {
    name: Option<String>,
    probs: Option<PathBuf>,
    logits: Option<PathBuf>,
    annotations: PathBuf,
    gt: PathBuf,
    image: Option<PathBuf>,
    superpixels: Option<PathBuf>,
}

fn read_manifest(path: &Path) -> Result<Vec<SampleFiles>, CliError> {
    let text = fs::read_to_string(input(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if manifest.samples.is_empty() {
        return Err(CliError::Config(format!("{}: no samples", path.display())));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: PathBuf| dir.join(p);
    Ok(manifest
        .samples
        .into_iter()
        .enumerate()
        .map(|(k, s)| SampleFiles {
            name: s.name.unwrap_or_else(|| format!("sample{k}")),
            probs: s.probs.map(resolve),
            logits: s.logits.map(resolve),
            annotations: resolve(s.annotations),
            image: s.image.map(resolve),
            superpixels: s.superpixels.map(resolve),
            gt: Some(resolve(s.gt)),
        })
        .collect())
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// JSON manifest: `{"samples": [{"probs", "annotations", "gt", "image", ...}]}`.
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Family to drop in turn. Repeatable; default: every configured family.
    #[arg(long, value_name = "FAMILY")]
    leave_out: Vec<Family>,
    /// Write the table as CSV here instead of standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Number of optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
}

pub fn ablate(a: AblateArgs) -> Result<(), CliError> {
    let mut flags = Vec::new();
    if let Some(s) = a.steps {
        flags.push(("refine.steps", Value::from(s)));
    }
    if let Some(lr) = a.lr {
        flags.push(("refine.learning_rate", Value::from(lr)));
    }
    let cfg = load_config(&a.cfg, flags)?;
    let files = read_manifest(&a.manifest)?;
    for f in &files {
        f.check_inputs(&cfg)?;
    }
    let full = &cfg.constraints.families;
    let leave_out = if a.leave_out.is_empty() { full.clone() } else { a.leave_out.clone() };
    for f in &leave_out {
        if !full.contains(f) {
            return Err(CliError::Config(format!("--leave-out {f}: not among the configured families")));
        }
    }
    if full.len() < 2 {
        return Err(CliError::Config("ablation needs at least two configured families".into()));
    }
    let samples = files.par_iter().map(|f| f.load(&cfg)).collect::<Result<Vec<_>, _>>()?;
    let table = run_leave_one_out(full, &leave_out, &cfg.constraints, &samples, &cfg.refine)?;
    write_output(a.out.as_deref(), &table.to_csv())
}

#[derive(Debug, Args)]
pub struct GenWeakArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Ground-truth mask (PGM). Repeatable.
    #[arg(long, value_name = "FILE", required = true)]
    gt: Vec<PathBuf>,
    /// Class names in label order, comma separated.
    #[arg(long, value_name = "NAMES", value_delimiter = ',', required = true)]
    classes: Vec<String>,
    /// Background class name (default: the first class).
    #[arg(long, value_name = "NAME")]
    background: Option<String>,
    /// Points sampled per class present in the mask.
    #[arg(long, default_value_t = 3)]
    points: usize,
    /// Jitter each box to this target overlap with its object, in (0, 1].
    #[arg(long, value_name = "OVERLAP")]
    jitter: Option<f64>,
    /// Directory receiving one `<mask stem>.json` per mask.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

pub fn gen_weak(a: GenWeakArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.cfg, Vec::new())?;
    let classes = cfg.classes.clone().unwrap_or(a.classes);
    let background = match &a.background {
        None => 0,
        Some(name) => classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CliError::Config(format!("--background `{name}` is not among the classes")))?,
    };
    let mut stems = BTreeSet::new();
    let mut outputs = Vec::with_capacity(a.gt.len());
    for p in &a.gt {
        input(p)?;
        let stem = p
            .file_stem()
            .ok_or_else(|| CliError::Config(format!("{}: no file name", p.display())))?
            .to_string_lossy()
            .into_owned();
        if !stems.insert(stem.clone()) {
            return Err(CliError::Config(format!("two masks share the file name `{stem}`")));
        }
        outputs.push(a.out_dir.join(format!("{stem}.json")));
    }
    let docs =
        a.gt.par_iter()
            .enumerate()
            .map(|(k, p)| {
                let gt = read_mask(p)?;
                let mut rng = stream_rng(cfg.seed, "gen-weak", k as u64);
                let (ann, _) = synthesize_weak_labels(&gt, &classes, background, a.points, a.jitter, &mut rng)?;
                ann.to_json()
            })
            .collect::<Result<Vec<_>, fuzzyseg::Error>>()?;
    fs::create_dir_all(&a.out_dir)
        .map_err(|e| CliError::Runtime(fuzzyseg::Error::Io { path: a.out_dir.clone(), source: e }))?;
    for (path, doc) in outputs.iter().zip(docs) {
        write_bytes(path, format!("{doc}\n").as_bytes())?;
    }
    println!("wrote {} annotation files to {}", outputs.len(), a.out_dir.display());
    Ok(())
}
