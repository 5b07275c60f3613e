use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use fuzzyseg::fuzzy::eval_fuzzy;
use fuzzyseg::oracle::{exact_prob, OracleBudget};
use fuzzyseg::synthetic::stream_rng;
use fuzzyseg::{Family, Shape};
use fuzzyseg_validation::{random_dims, random_formula, random_probs};
use rand::Rng;
use rayon::prelude::*;

use crate::error::CliError;
use crate::ConfigArgs;

/// Families whose formulas never reuse a pixel, so the fuzzy value is exact.
const EXACT_FAMILIES: [Family; 4] = [Family::Fs, Family::Scribbles, Family::Background, Family::BboxShallow];
const EXACT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Family to check. Repeatable; default: all of them.
    #[arg(long, value_name = "FAMILY")]
    family: Vec<Family>,
    /// Random instances per family.
    #[arg(long, default_value_t = 50)]
    instances: usize,
    /// Largest grid side, at most 3.
    #[arg(long, default_value_t = 3)]
    max_size: usize,
    /// Largest class count, between 2 and 3.
    #[arg(long, default_value_t = 3)]
    max_classes: usize,
    /// Write one CSV row per instance here.
    #[arg(long, value_name = "FILE")]
    details: Option<PathBuf>,
}

struct Instance {
    family: Family,
    shape: Shape,
    fuzzy: f64,
    exact: f64,
}

impl Instance {
    fn gap(&self) -> f64 {
        (self.fuzzy - self.exact).abs()
    }
}

fn instance(family: Family, seed: u64, k: usize, a: &OracleCheckArgs) -> fuzzyseg::Result<Instance> {
    let mut rng = stream_rng(seed, family.as_str(), k as u64);
    let (h, w) = random_dims(family, a.max_size, &mut rng);
    let classes = rng.gen_range(2..=a.max_classes);
    let shape = Shape::new(h, w, classes);
    let formula = random_formula(family, h, w, classes, &mut rng);
    let probs = random_probs(shape, &mut rng);
    let fuzzy = eval_fuzzy(&formula, &probs)?.log_prob.value();
    let exact = exact_prob(&formula, &probs, OracleBudget::default())?.ln();
    Ok(Instance { family, shape, fuzzy, exact })
}

pub fn run(a: OracleCheckArgs) -> Result<(), CliError> {
    let cfg = crate::commands::load_config(&a.cfg, Vec::new())?;
    if !(1..=3).contains(&a.max_size) {
        return Err(CliError::Config(format!("--max-size must be between 1 and 3, got {}", a.max_size)));
    }
    if !(2..=3).contains(&a.max_classes) {
        return Err(CliError::Config(format!("--max-classes must be 2 or 3, got {}", a.max_classes)));
    }
    if a.instances == 0 {
        return Err(CliError::Config("--instances must be at least 1".into()));
    }
    let families: Vec<Family> = if a.family.is_empty() { Family::ALL.to_vec() } else { a.family.clone() };
    let jobs: Vec<(Family, usize)> = families.iter().flat_map(|&f| (0..a.instances).map(move |k| (f, k))).collect();
    let results = jobs.par_iter().map(|&(f, k)| instance(f, cfg.seed, k, &a)).collect::<fuzzyseg::Result<Vec<_>>>()?;

    let mut summary = String::from("family,instances,max_gap,mean_gap,exact_expected\n");
    let mut broken = Vec::new();
    for (f, rows) in families.iter().zip(results.chunks(a.instances)) {
        let max = rows.iter().map(Instance::gap).fold(0.0, f64::max);
        let mean = rows.iter().map(Instance::gap).sum::<f64>() / rows.len() as f64;
        let expected = EXACT_FAMILIES.contains(f);
        writeln!(summary, "{f},{},{max:.3e},{mean:.3e},{expected}", rows.len()).unwrap();
        if expected && (max.is_nan() || max >= EXACT_TOLERANCE) {
            broken.push(format!("{f} (max gap {max:.3e})"));
        }
    }
    print!("{summary}");
    if let Some(p) = &a.details {
        let mut out = String::from("family,instance,height,width,classes,fuzzy_log_prob,exact_log_prob,gap\n");
        for (n, r) in results.iter().enumerate() {
            let s = r.shape;
            writeln!(
                out,
                "{},{},{},{},{},{:.12},{:.12},{:.3e}",
                r.family,
                n % a.instances,
                s.height,
                s.width,
                s.classes,
                r.fuzzy,
                r.exact,
                r.gap()
            )
            .unwrap();
        }
        fuzzyseg::io::write_bytes(p, out.as_bytes())?;
    }
    if broken.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("fuzzy value is not exact for {}", broken.join(", "))))
    }
}
