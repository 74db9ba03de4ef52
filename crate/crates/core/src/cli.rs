//! `specaug` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::augment::{
    band_energy_fraction, random_insertion, reconstruct_full, view_seeds, AugmentedView, Augmenter,
    RandomAugmenter,
};
use crate::error::{Error, Result};
use crate::eval::{
    apply_attack, linear_probe, probe_seed, run_experiment, run_split, train_run, Attack,
    ExperimentConfig, Variant, CONFIG_KEYS, THREADS_ENV,
};
use crate::graph::Graph;
use crate::io::{self, Dataset};
use crate::spectral::{adjacency_system, band_distance, eig_full, BandReport, SpectrumKind};
use crate::theory::{verify_dataset, verify_suite};

fn config_help() -> String {
    let mut s = String::from("Config keys (key=value file via --config, or --set key=value):\n");
    for (k, v) in CONFIG_KEYS {
        s.push_str(&format!("  {k:<11} {v}\n"));
    }
    s.push_str(&format!(
        "\nEnvironment:\n  {THREADS_ENV:<14} maximum number of worker threads\n\nExit codes: 0 success, 1 config or input error, 2 numerical failure."
    ));
    s
}

#[derive(Debug, Parser)]
#[command(
    name = "specaug",
    version,
    about = "Spectral graph augmentation and contrastive training",
    after_help = config_help()
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Args)]
struct Common {
    /// Dataset directory or inline spec (e.g. sbm:n=400,C=2,p_in=0.1,p_out=0.01)
    #[arg(long)]
    dataset: Option<String>,
    /// key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for every random choice
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AttackMethod {
    Random,
    Dice,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Per-frequency-group distance between the original and a perturbed graph
    #[command(after_help = config_help())]
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Number of frequency groups
        #[arg(long, default_value_t = 10)]
        groups: usize,
        /// none | random_insert:<ratio> | gasser
        #[arg(long, default_value = "gasser")]
        perturbation: String,
        /// CSV output (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON summary output
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Write two augmented views and plan.json
    #[command(after_help = config_help())]
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the encoder; writes embeddings.csv, params.bin, train.json
    #[command(after_help = config_help())]
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear-probe accuracy of an embeddings CSV
    #[command(after_help = config_help())]
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Poison the structure and write the attacked dataset
    #[command(after_help = config_help())]
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: AttackMethod,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Numerical checks of the spectral statements (JSON report)
    #[command(after_help = config_help())]
    Verify {
        #[command(flatten)]
        common: Common,
        /// Generated instances per check (ignored with --dataset)
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Nodes per generated instance
        #[arg(long, default_value_t = 40)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a configured experiment over several seeds (JSON report)
    #[command(after_help = config_help())]
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                if !p.is_file() {
                    return Err(Error::Config(format!("config file `{}` does not exist", p.display())));
                }
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?;
                ExperimentConfig::parse(&text)?
            }
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{o}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        Ok(cfg)
    }

    fn dataset(&self, cfg: &ExperimentConfig) -> Result<Dataset> {
        if cfg.dataset.is_empty() {
            return Err(Error::Config("no dataset given (--dataset or dataset= in the config)".into()));
        }
        io::resolve_dataset(&cfg.dataset)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => io::write_atomic(p, text.as_bytes()),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes())
                .and_then(|_| so.flush())
                .map_err(|e| Error::Io {
                    path: "<stdout>".into(),
                    source: e,
                })
        }
    }
}

fn json_text<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn lap_sym(g: &Graph) -> Result<crate::spectral::EigenSystem> {
    eig_full(&g.normalized_laplacian(), SpectrumKind::LapSym)
}

fn analyze(
    common: &Common,
    groups: usize,
    perturbation: &str,
    out: Option<&Path>,
    summary: Option<&Path>,
) -> Result<()> {
    let cfg = common.config()?;
    let data = common.dataset(&cfg)?;
    let g = &data.graph;
    let orig = lap_sym(g)?;
    let mut info = serde_json::Map::new();
    info.insert("perturbation".into(), json!(perturbation));
    let report: BandReport = match perturbation.split_once(':') {
        _ if perturbation == "none" => band_distance(&orig, &orig, groups)?,
        Some(("random_insert", ratio)) => {
            let ratio: f64 = ratio
                .parse()
                .map_err(|_| Error::Config(format!("bad random_insert ratio `{ratio}`")))?;
            let aug = random_insertion(g, ratio, common.seed)?;
            band_distance(&orig, &lap_sym(&aug)?, groups)?
        }
        None if perturbation == "gasser" => {
            let mut a = cfg.effective_augment();
            a.seed = common.seed;
            let es = adjacency_system(g, None, common.seed)?;
            let augmenter = Augmenter::with_system(g, es, a)?;
            let (view, plan) = augmenter.view_with_plan(common.seed)?;
            let delta = reconstruct_full(augmenter.system(), &plan)? - g.normalized_adjacency().dense();
            info.insert(
                "band_energy".into(),
                json!(band_energy_fraction(&delta, augmenter.system(), &plan.band)?),
            );
            band_distance(&orig, &lap_sym(&view.topology)?, groups)?
        }
        _ => {
            return Err(Error::Config(format!(
                "unknown perturbation `{perturbation}` (none, random_insert:<ratio>, gasser)"
            )))
        }
    };
    info.insert("f_norm_cov".into(), json!(report.f_norm_cov()));
    emit(out, &report.to_csv())?;
    let summary_text = json_text(&info)?;
    match summary {
        Some(p) => io::write_atomic(p, summary_text.as_bytes()),
        None => {
            eprint!("{summary_text}");
            Ok(())
        }
    }
}

fn augment(common: &Common, out: &Path) -> Result<()> {
    let cfg = common.config()?;
    cfg.augment.validate()?;
    let data = common.dataset(&cfg)?;
    let g = &data.graph;
    let mut a = cfg.effective_augment();
    a.seed = common.seed;
    io::create_dir(out)?;
    let mut views = Vec::new();
    let seeds = view_seeds(common.seed);
    let spectral = match cfg.variant {
        Variant::RandomBaseline => None,
        _ => Some(Augmenter::new(g, a)?),
    };
    for (name, s) in ["view_a", "view_b"].into_iter().zip(seeds) {
        let (view, plan): (AugmentedView, _) = match &spectral {
            Some(aug) => {
                let (v, p) = aug.view_with_plan(s)?;
                (v, Some(p))
            }
            None => (RandomAugmenter::new(g, a)?.view(s)?, None),
        };
        io::write_dataset(&out.join(name), &view.topology, &view.features, data.split.as_ref())?;
        views.push(json!({
            "name": name,
            "seed": s,
            "edges": view.topology.m(),
            "band": plan.as_ref().map(|p| p.band.clone()),
            "b0": plan.as_ref().map(|p| p.b0),
            "gamma_digest": plan.as_ref().map(|p| p.gamma_digest()),
        }));
    }
    let plan = json!({
        "seed": common.seed,
        "variant": cfg.variant,
        "augment": a,
        "views": views,
    });
    io::write_atomic(&out.join("plan.json"), json_text(&plan)?.as_bytes())
}

fn train(common: &Common, out: &Path) -> Result<()> {
    let cfg = common.config()?;
    cfg.augment.validate()?;
    cfg.train.validate()?;
    let data = common.dataset(&cfg)?;
    let outcome = train_run(&data.graph, &cfg, common.seed)?;
    io::create_dir(out)?;
    io::write_atomic(
        &out.join("embeddings.csv"),
        io::format_matrix_csv(&outcome.embeddings).as_bytes(),
    )?;
    io::write_atomic(&out.join("params.bin"), &outcome.params.to_bytes())?;
    let summary = json!({
        "seed": common.seed,
        "config": cfg,
        "losses": outcome.losses,
    });
    io::write_atomic(&out.join("train.json"), json_text(&summary)?.as_bytes())
}

fn eval(common: &Common, embeddings: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = common.config()?;
    let data = common.dataset(&cfg)?;
    let y = data
        .graph
        .labels()
        .ok_or_else(|| Error::Config("eval needs a labelled dataset".into()))?;
    let z = io::read_matrix_csv(embeddings)?;
    if z.nrows() != data.graph.n() {
        return Err(Error::Config(format!(
            "{} embedding rows for {} nodes",
            z.nrows(),
            data.graph.n()
        )));
    }
    let split = run_split(&data, common.seed)?;
    let r = linear_probe(&z, y, &split, probe_seed(common.seed))?;
    let report = json!({
        "seed": common.seed,
        "accuracy": r.test_accuracy,
        "val_accuracy": r.val_accuracy,
        "iterations": r.iterations,
        "split": { "train": split.train.len(), "val": split.val.len(), "test": split.test.len() },
    });
    emit(out, &json_text(&report)?)
}

fn attack(common: &Common, method: AttackMethod, sigma: f64, out: &Path) -> Result<()> {
    let cfg = common.config()?;
    let data = common.dataset(&cfg)?;
    let kind = match method {
        AttackMethod::Random => Attack::Random,
        AttackMethod::Dice => Attack::Dice,
    };
    let g = apply_attack(&data.graph, kind, sigma, common.seed)?;
    io::write_dataset(out, &g, g.features(), data.split.as_ref())
}

fn verify(common: &Common, instances: usize, n: usize, out: Option<&Path>) -> Result<()> {
    let cfg = common.config()?;
    let report = if cfg.dataset.is_empty() {
        if n < 4 || !n.is_multiple_of(2) {
            return Err(Error::Config(format!("--n must be even and at least 4, got {n}")));
        }
        verify_suite(instances, n, common.seed)?
    } else {
        let data = common.dataset(&cfg)?;
        verify_dataset(&data.graph, common.seed)?
    };
    emit(out, &json_text(&report)?)
}

fn experiment(common: &Common, out: Option<&Path>) -> Result<()> {
    let cfg = common.config()?;
    cfg.validate()?;
    let data = common.dataset(&cfg)?;
    let report = run_experiment(&data, &cfg, common.seed)?;
    emit(out, &json_text(&report)?)
}

fn dispatch(verb: &Verb) -> Result<()> {
    match verb {
        Verb::Analyze {
            common,
            groups,
            perturbation,
            out,
            summary,
        } => analyze(common, *groups, perturbation, out.as_deref(), summary.as_deref()),
        Verb::Augment { common, out } => augment(common, out),
        Verb::Train { common, out } => train(common, out),
        Verb::Eval {
            common,
            embeddings,
            out,
        } => eval(common, embeddings, out.as_deref()),
        Verb::Attack {
            common,
            method,
            sigma,
            out,
        } => attack(common, *method, *sigma, out),
        Verb::Verify {
            common,
            instances,
            n,
            out,
        } => verify(common, *instances, *n, out.as_deref()),
        Verb::Experiment { common, out } => experiment(common, out.as_deref()),
    }
}

/// Exit status for an error: `2` for numerical failures, `1` otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

/// Parses `args` (including the program name) and runs the verb.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli.verb) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
