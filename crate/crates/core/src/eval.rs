//! Linear-probe evaluation, splits, structure attacks, and the experiment
//! driver behind the `experiment` verb.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{budget_floor, AugmentConfig, Augmenter, BandMode, RandomAugmenter};
use crate::error::{Error, Result};
use crate::gcl::{infer, train_with, TrainConfig, TrainOutcome};
use crate::graph::{ordered, Graph};
use crate::io::Dataset;
use crate::seed;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "GASSER_THREADS";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Disjoint parts inside `[0, n)`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(Error::Range {
                    id: i,
                    n,
                    context: "split".into(),
                });
            }
            if !seen.insert(i) {
                return Err(Error::pre(format!("node {i} appears in two split parts")));
            }
        }
        Ok(())
    }

    /// A split the probe can use: every part non-empty.
    pub fn check_probe(&self) -> Result<()> {
        for (name, part) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if part.is_empty() {
                return Err(Error::pre(format!("{name} split is empty")));
            }
        }
        Ok(())
    }
}

/// Seeded shuffle, then contiguous parts of `⌊r·n⌋` train and val nodes;
/// the remainder is test.
pub fn make_split(n: usize, ratios: [f64; 3], seed: u64) -> Result<Split> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| *r < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut seed::rng_for(seed, &[0x5911]));
    let a = budget_floor(ratios[0] * n as f64).min(n);
    let b = (a + budget_floor(ratios[1] * n as f64)).min(n);
    let part = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(Split {
        train: part(&ids[..a]),
        val: part(&ids[a..b]),
        test: part(&ids[b..]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeOutcome {
    pub test_accuracy: f64,
    pub val_accuracy: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

/// Per-seed accuracies with their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ProbeResult {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Result<Self> {
        let s = Stats::of(&accuracies).ok_or_else(|| Error::pre("no accuracies"))?;
        Ok(Self {
            accuracies,
            mean: s.mean,
            std: s.std,
        })
    }
}

const PROBE_LR: f64 = 0.01;
const PROBE_DECAY: f64 = 1e-4;
const PROBE_MAX_ITER: usize = 500;
const PROBE_TOL: f64 = 1e-6;

fn zscore(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    let n = z.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n).sqrt();
        if sd < 1e-12 {
            col.fill(0.0);
        } else {
            col /= sd;
        }
    }
    out
}

fn argmax(row: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn accuracy(x: &DMatrix<f64>, w: &DMatrix<f64>, b: &DVector<f64>, y: &[usize], ids: &[usize]) -> f64 {
    let correct = ids
        .iter()
        .filter(|&&i| {
            let logits = (x.row(i) * w).transpose() + b;
            argmax(logits.iter().copied()) == y[i]
        })
        .count();
    correct as f64 / ids.len() as f64
}

/// Multinomial logistic regression on the train rows of column-standardized
/// embeddings, trained with Adam and L2 decay; reports test accuracy of
/// the iterate with the best validation accuracy.
pub fn linear_probe(z: &DMatrix<f64>, y: &[usize], split: &Split, seed: u64) -> Result<ProbeOutcome> {
    split.check_probe()?;
    split.validate(z.nrows())?;
    if y.len() != z.nrows() {
        return Err(Error::pre(format!("{} labels for {} embeddings", y.len(), z.nrows())));
    }
    let classes = y.iter().max().map_or(0, |m| m + 1);
    let x = zscore(z);
    let h = x.ncols();
    let xt = DMatrix::from_fn(split.train.len(), h, |r, c| x[(split.train[r], c)]);
    let mut onehot = DMatrix::zeros(split.train.len(), classes);
    for (r, &i) in split.train.iter().enumerate() {
        onehot[(r, y[i])] = 1.0;
    }
    let mut rng = seed::rng_for(seed, &[0x9a0b]);
    let scale = 0.01 / (h.max(1) as f64).sqrt();
    let mut w = DMatrix::from_fn(h, classes, |_, _| rng.random_range(-scale..scale));
    let mut b = DVector::zeros(classes);
    let (mut mw, mut vw) = (DMatrix::zeros(h, classes), DMatrix::zeros(h, classes));
    let (mut mb, mut vb) = (DVector::zeros(classes), DVector::zeros(classes));
    let nt = split.train.len() as f64;

    let mut best_val = -1.0;
    let mut best_test = 0.0;
    let mut prev_loss = f64::INFINITY;
    let mut iterations = 0;
    for t in 1..=PROBE_MAX_ITER {
        iterations = t;
        let mut logits = &xt * &w;
        for mut row in logits.row_iter_mut() {
            row += b.transpose();
            let mx = row.max();
            row.apply(|v| *v = (*v - mx).exp());
            let s = row.sum();
            row /= s;
        }
        let probs = logits;
        let loss = -(0..split.train.len())
            .map(|r| probs[(r, y[split.train[r]])].max(1e-300).ln())
            .sum::<f64>()
            / nt
            + 0.5 * PROBE_DECAY * w.norm_squared();
        let diff = (&probs - &onehot) / nt;
        let gw = xt.transpose() * &diff + &w * PROBE_DECAY;
        let gb: DVector<f64> = diff.row_sum().transpose();

        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        mw = &mw * b1 + &gw * (1.0 - b1);
        vw = &vw * b2 + gw.map(|g| g * g) * (1.0 - b2);
        mb = &mb * b1 + &gb * (1.0 - b1);
        vb = &vb * b2 + gb.map(|g| g * g) * (1.0 - b2);
        w.zip_zip_apply(&mw, &vw, |wi, m, v| *wi -= PROBE_LR * (m / c1) / ((v / c2).sqrt() + eps));
        b.zip_zip_apply(&mb, &vb, |bi, m, v| *bi -= PROBE_LR * (m / c1) / ((v / c2).sqrt() + eps));

        let val = accuracy(&x, &w, &b, y, &split.val);
        if val > best_val {
            best_val = val;
            best_test = accuracy(&x, &w, &b, y, &split.test);
        }
        if (prev_loss - loss).abs() < PROBE_TOL {
            break;
        }
        prev_loss = loss;
    }
    Ok(ProbeOutcome {
        test_accuracy: best_test,
        val_accuracy: best_val,
        iterations,
    })
}

fn attack_budget(g: &Graph, sigma: f64) -> Result<usize> {
    let k = budget_floor(sigma * g.m() as f64);
    if k == 0 {
        return Err(Error::pre(format!(
            "budget ⌊{sigma}·{}⌋ is zero",
            g.m()
        )));
    }
    Ok(k)
}

/// `t`-th pair of the row-major strict upper triangle of an `n × n` matrix.
fn pair_at(n: usize, t: usize) -> (usize, usize) {
    let offset = |i: usize| i * n - i * (i + 1) / 2;
    let (mut lo, mut hi) = (0, n - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if offset(mid) <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, lo + 1 + t - offset(lo))
}

fn rebuild(g: &Graph, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Graph> {
    g.with_edges(edges.into_iter().map(|(i, j)| (i, j, 1.0)))
}

/// Flips exactly `⌊σ·m⌋` distinct uniformly chosen node pairs.
pub fn attack_random(g: &Graph, sigma: f64, seed: u64) -> Result<Graph> {
    let k = attack_budget(g, sigma)?;
    let n = g.n();
    let total = n * n.saturating_sub(1) / 2;
    if k > total {
        return Err(Error::pre(format!("budget {k} exceeds the {total} node pairs")));
    }
    let mut rng = seed::rng_for(seed, &[0xa77a]);
    let flips: HashSet<(usize, usize)> =
        index::sample(&mut rng, total, k).into_iter().map(|t| pair_at(n, t)).collect();
    let kept = g.edges().iter().map(|e| e.pair()).filter(|p| !flips.contains(p));
    let mut added: Vec<_> = flips.iter().copied().filter(|&(i, j)| !g.has_edge(i, j)).collect();
    added.sort_unstable();
    rebuild(g, kept.chain(added))
}

/// DICE: each of the `⌊σ·m⌋` operations deletes a uniformly chosen
/// intra-class edge or inserts a uniformly chosen absent inter-class pair,
/// each with probability 1/2, falling back to the other when one kind is
/// exhausted.
pub fn attack_dice(g: &Graph, sigma: f64, seed: u64) -> Result<Graph> {
    let y = g
        .labels()
        .ok_or_else(|| Error::pre("DICE needs node labels"))?;
    let k = attack_budget(g, sigma)?;
    let n = g.n();
    let mut rng = seed::rng_for(seed, &[0xd1ce]);

    let mut intra: Vec<(usize, usize)> = Vec::new();
    let mut inter_edges = 0usize;
    for e in g.edges() {
        if y[e.u] == y[e.v] {
            intra.push(e.pair());
        } else {
            inter_edges += 1;
        }
    }
    let mut sizes = vec![0usize; y.iter().max().map_or(0, |m| m + 1)];
    for &c in y {
        sizes[c] += 1;
    }
    let inter_pairs = (n * n - sizes.iter().map(|s| s * s).sum::<usize>()) / 2;
    let mut insertable = inter_pairs - inter_edges;

    let mut deleted = HashSet::new();
    let mut inserted = HashSet::new();
    for _ in 0..k {
        let want_delete = rng.random_bool(0.5);
        let delete = match (want_delete, intra.is_empty(), insertable == 0) {
            (_, true, true) => {
                return Err(Error::pre("DICE budget exceeds both edge categories"));
            }
            (_, true, false) => false,
            (_, false, true) => true,
            (d, false, false) => d,
        };
        if delete {
            let idx = rng.random_range(0..intra.len());
            deleted.insert(intra.swap_remove(idx));
        } else {
            loop {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if y[a] != y[b] && !g.has_edge(a, b) && inserted.insert(ordered(a, b)) {
                    break;
                }
            }
            insertable -= 1;
        }
    }
    let kept = g.edges().iter().map(|e| e.pair()).filter(|p| !deleted.contains(p));
    let mut added: Vec<_> = inserted.into_iter().collect();
    added.sort_unstable();
    rebuild(g, kept.chain(added))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    Full,
    /// Unweighted views.
    W,
    /// Band mode swapped.
    B,
    RandomBaseline,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FULL" => Ok(Variant::Full),
            "W" => Ok(Variant::W),
            "B" => Ok(Variant::B),
            "RANDOM_BASELINE" | "RANDOM" => Ok(Variant::RandomBaseline),
            _ => Err(Error::Config(format!(
                "unknown variant `{s}` (FULL, W, B, RANDOM_BASELINE)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attack {
    None,
    Random,
    Dice,
}

impl FromStr for Attack {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Attack::None),
            "random" => Ok(Attack::Random),
            "dice" => Ok(Attack::Dice),
            _ => Err(Error::Config(format!("unknown attack `{s}` (none, random, dice)"))),
        }
    }
}

pub fn apply_attack(g: &Graph, attack: Attack, sigma: f64, seed: u64) -> Result<Graph> {
    match attack {
        Attack::None => Ok(g.clone()),
        Attack::Random => attack_random(g, sigma, seed),
        Attack::Dice => attack_dice(g, sigma, seed),
    }
}

/// Keys accepted in an experiment config file, with their meaning.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("dataset", "dataset directory or inline spec such as sbm:n=400,C=2,p_in=0.1,p_out=0.01"),
    ("variant", "FULL | W (unweighted) | B (swapped band) | RANDOM_BASELINE"),
    ("band_mode", "homophilic | heterophilic"),
    ("b0", "lowest-frequency eigenpairs left untouched (homophilic mode)"),
    ("band_size", "number of perturbed eigenpairs |B|"),
    ("pivot", "diagonal weight of the combination coefficients, in (0, 1]"),
    ("r1", "fraction of edges dropped, in [0, 1)"),
    ("r2", "edges added from the pool, as a fraction of m, in [0, 1)"),
    ("pool_size", "candidate non-edges scored for insertion; 'auto' = min(5m, available)"),
    ("mask_ratio", "fraction of feature columns zeroed per view"),
    ("alpha", "decorrelation weight of the training loss"),
    ("hidden", "encoder width"),
    ("dropout", "dropout rate between encoder layers"),
    ("lr", "encoder learning rate"),
    ("epochs", "training epochs"),
    ("seeds", "number of runs (e.g. 10) or an explicit list (e.g. 0,1,2 or 5,)"),
    ("attack", "none | random | dice"),
    ("sigma", "attack budget as a fraction of m"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub variant: Variant,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub attack: Attack,
    pub sigma: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: String::new(),
            variant: Variant::Full,
            augment: AugmentConfig::default(),
            train: TrainConfig::default(),
            seeds: (0..10).collect(),
            attack: Attack::None,
            sigma: 0.1,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

impl ExperimentConfig {
    /// Parses `key=value` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got `{line}`", no + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", no + 1)));
            }
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, k: &str, v: &str) -> Result<()> {
        let a = &mut self.augment;
        let t = &mut self.train;
        match k {
            "dataset" => self.dataset = v.to_string(),
            "variant" => self.variant = v.parse()?,
            "band_mode" => {
                a.band_mode = match v.to_ascii_lowercase().as_str() {
                    "homophilic" => BandMode::Homophilic,
                    "heterophilic" => BandMode::Heterophilic,
                    _ => return Err(Error::Config(format!("unknown band_mode `{v}`"))),
                }
            }
            "b0" => a.b0 = parse_value(k, v)?,
            "band_size" => a.band_size = parse_value(k, v)?,
            "pivot" => a.pivot = parse_value(k, v)?,
            "r1" => a.r1 = parse_value(k, v)?,
            "r2" => a.r2 = parse_value(k, v)?,
            "pool_size" => {
                a.pool_size = if v.eq_ignore_ascii_case("auto") {
                    None
                } else {
                    Some(parse_value(k, v)?)
                }
            }
            "mask_ratio" => a.mask_ratio = parse_value(k, v)?,
            "alpha" => t.alpha = parse_value(k, v)?,
            "hidden" => t.hidden = parse_value(k, v)?,
            "dropout" => t.dropout = parse_value(k, v)?,
            "lr" => t.lr = parse_value(k, v)?,
            "epochs" => t.epochs = parse_value(k, v)?,
            "seeds" => {
                self.seeds = if v.contains(',') {
                    v.split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| parse_value(k, s))
                        .collect::<Result<_>>()?
                } else {
                    (0..parse_value::<u64>(k, v)?).collect()
                }
            }
            "attack" => self.attack = v.parse()?,
            "sigma" => self.sigma = parse_value(k, v)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown config key `{k}` (see --help for the list)"
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_empty() {
            return Err(Error::Config("config has no dataset".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("config has no seeds".into()));
        }
        self.augment.validate()?;
        self.train.validate()?;
        if self.attack != Attack::None && !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::Config(format!("sigma {} outside (0, 1)", self.sigma)));
        }
        Ok(())
    }

    /// Augmentation config after applying the variant.
    pub fn effective_augment(&self) -> AugmentConfig {
        let mut a = self.augment;
        match self.variant {
            Variant::W => a.weighted = false,
            Variant::B => a.band_mode = a.band_mode.swapped(),
            Variant::Full | Variant::RandomBaseline => {}
        }
        a
    }

    /// Round-trippable `key=value` text.
    pub fn to_text(&self) -> String {
        let a = &self.augment;
        let t = &self.train;
        let mut s = String::new();
        let variant = match self.variant {
            Variant::Full => "FULL",
            Variant::W => "W",
            Variant::B => "B",
            Variant::RandomBaseline => "RANDOM_BASELINE",
        };
        let band = match a.band_mode {
            BandMode::Homophilic => "homophilic",
            BandMode::Heterophilic => "heterophilic",
        };
        let pool = a.pool_size.map_or("auto".to_string(), |p| p.to_string());
        let mut seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        if seeds.len() == 1 {
            seeds.push(String::new());
        }
        let attack = match self.attack {
            Attack::None => "none",
            Attack::Random => "random",
            Attack::Dice => "dice",
        };
        for (k, v) in [
            ("dataset", self.dataset.clone()),
            ("variant", variant.into()),
            ("band_mode", band.into()),
            ("b0", a.b0.to_string()),
            ("band_size", a.band_size.to_string()),
            ("pivot", a.pivot.to_string()),
            ("r1", a.r1.to_string()),
            ("r2", a.r2.to_string()),
            ("pool_size", pool),
            ("mask_ratio", a.mask_ratio.to_string()),
            ("alpha", t.alpha.to_string()),
            ("hidden", t.hidden.to_string()),
            ("dropout", t.dropout.to_string()),
            ("lr", t.lr.to_string()),
            ("epochs", t.epochs.to_string()),
            ("seeds", seeds.join(",")),
            ("attack", attack.into()),
            ("sigma", self.sigma.to_string()),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Test accuracy on the clean graph.
    pub accuracy: f64,
    /// Test accuracy with embeddings inferred on the poisoned graph.
    pub attacked_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    /// SHA-256 of the trained `params.bin` bytes.
    pub params_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub accuracy: Stats,
    pub attacked_accuracy: Option<Stats>,
    /// Clean minus attacked accuracy.
    pub drop: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub base_seed: u64,
    pub results: Vec<SeedResult>,
    pub summary: ReportSummary,
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// The dataset's own split, or a seeded 1:1:8 split.
pub fn run_split(data: &Dataset, run_seed: u64) -> Result<Split> {
    match &data.split {
        Some(s) => Ok(s.clone()),
        None => make_split(data.graph.n(), [0.1, 0.1, 0.8], seed::derive(run_seed, &[0x5b])),
    }
}

pub fn probe_seed(run_seed: u64) -> u64 {
    seed::derive(run_seed, &[0x9b])
}

/// Trains the configured variant on `g` with streams derived from
/// `run_seed`.
pub fn train_run(g: &Graph, cfg: &ExperimentConfig, run_seed: u64) -> Result<TrainOutcome> {
    let mut aug = cfg.effective_augment();
    aug.seed = seed::derive(run_seed, &[0xa6]);
    let mut tcfg = cfg.train;
    tcfg.seed = seed::derive(run_seed, &[0x7a]);
    match cfg.variant {
        Variant::RandomBaseline => train_with(g, &RandomAugmenter::new(g, aug)?, &tcfg),
        _ => train_with(g, &Augmenter::new(g, aug)?, &tcfg),
    }
}

/// One run: train on the clean graph, probe clean embeddings, and, under an
/// attack, probe embeddings of the poisoned graph from the same frozen
/// encoder.
pub fn run_seed(data: &Dataset, cfg: &ExperimentConfig, run_seed: u64) -> Result<SeedResult> {
    let g = &data.graph;
    let y = g
        .labels()
        .ok_or_else(|| Error::Config("experiments need a labelled dataset".into()))?;
    let split = run_split(data, run_seed)?;
    let outcome = train_run(g, cfg, run_seed)?;
    let probe_seed = probe_seed(run_seed);
    let accuracy = linear_probe(&outcome.embeddings, y, &split, probe_seed)?.test_accuracy;
    let attacked_accuracy = match cfg.attack {
        Attack::None => None,
        attack => {
            let poisoned = apply_attack(g, attack, cfg.sigma, seed::derive(run_seed, &[0xa7]))?;
            let z = infer(&poisoned, &outcome.params)?;
            Some(linear_probe(&z, y, &split, probe_seed)?.test_accuracy)
        }
    };
    Ok(SeedResult {
        seed: run_seed,
        accuracy,
        attacked_accuracy,
        final_loss: outcome.losses.last().copied(),
        params_digest: digest(&outcome.params.to_bytes()),
    })
}

/// Worker count from `GASSER_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
}

fn run_all<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(t) = thread_cap() {
            builder = builder.num_threads(t);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| seeds.par_iter().map(|&s| f(s)).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        seeds.iter().map(|&s| f(s)).collect()
    }
}

/// Runs every configured seed (in parallel when enabled) and aggregates in
/// seed order. Run `s` uses the stream `derive(base_seed, [s])`; results
/// are reported under `s`.
pub fn run_experiment(data: &Dataset, cfg: &ExperimentConfig, base_seed: u64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut results = run_all(&cfg.seeds, |s| {
        let mut r = run_seed(data, cfg, seed::derive(base_seed, &[s]))?;
        r.seed = s;
        Ok(r)
    })?;
    results.sort_by_key(|r| r.seed);
    let acc: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let attacked: Vec<f64> = results.iter().filter_map(|r| r.attacked_accuracy).collect();
    let drops: Vec<f64> = results
        .iter()
        .filter_map(|r| r.attacked_accuracy.map(|a| r.accuracy - a))
        .collect();
    let summary = ReportSummary {
        accuracy: Stats::of(&acc).expect("seeds validated non-empty"),
        attacked_accuracy: Stats::of(&attacked),
        drop: Stats::of(&drops),
    };
    Ok(ExperimentReport {
        config: cfg.clone(),
        base_seed,
        results,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{homophily_of, sbm_generate, SbmParams};

    fn sbm(n: usize, p_in: f64, p_out: f64, s: u64) -> Graph {
        sbm_generate(&SbmParams {
            n,
            classes: 2,
            p_in,
            p_out,
            feature_dim: 4,
            seed: s,
        })
        .unwrap()
    }

    #[test]
    fn split_sizes_and_seeds() {
        let s = make_split(100, [0.1, 0.1, 0.8], 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (10, 10, 80));
        s.validate(100).unwrap();
        let t = make_split(100, [0.1, 0.1, 0.8], 2).unwrap();
        assert_ne!(s.train, t.train);
        let all_train = make_split(10, [1.0, 0.0, 0.0], 0).unwrap();
        assert!(all_train.check_probe().is_err());
        assert!(make_split(10, [0.5, 0.1, 0.1], 0).is_err());
    }

    #[test]
    fn pair_decoding_covers_triangle() {
        let n = 7;
        let mut t = 0;
        for i in 0..n {
            for j in i + 1..n {
                assert_eq!(pair_at(n, t), (i, j));
                t += 1;
            }
        }
    }

    #[test]
    fn probe_on_one_hot_labels() {
        let n = 60;
        let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let z = DMatrix::from_fn(n, 3, |i, c| f64::from(u8::from(y[i] == c)));
        let split = make_split(n, [0.2, 0.2, 0.6], 4).unwrap();
        let r = linear_probe(&z, &y, &split, 0).unwrap();
        assert_eq!(r.test_accuracy, 1.0);
        assert_eq!(r, linear_probe(&z, &y, &split, 0).unwrap());
    }

    #[test]
    fn probe_on_zero_embeddings_is_chance() {
        let n = 200;
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let z = DMatrix::zeros(n, 4);
        let accs: Vec<f64> = (0..10)
            .map(|s| {
                let split = make_split(n, [0.1, 0.1, 0.8], s).unwrap();
                linear_probe(&z, &y, &split, s).unwrap().test_accuracy
            })
            .collect();
        let mean = Stats::of(&accs).unwrap().mean;
        assert!((mean - 0.5).abs() <= 0.1, "{mean}");
    }

    #[test]
    fn random_attack_budget() {
        let mut pairs = Vec::new();
        for i in 0..50 {
            pairs.push((i, (i + 1) % 50));
        }
        let g = Graph::from_pairs(50, &pairs).unwrap();
        assert_eq!(g.m(), 50);
        let a = attack_random(&g, 0.1, 3).unwrap();
        let before: HashSet<_> = g.edges().iter().map(|e| e.pair()).collect();
        let after: HashSet<_> = a.edges().iter().map(|e| e.pair()).collect();
        assert_eq!(before.symmetric_difference(&after).count(), 5);
        assert_eq!(a, attack_random(&g, 0.1, 3).unwrap());

        let small = Graph::from_pairs(11, &pairs[..10].iter().map(|&(i, j)| (i, j.min(10))).collect::<Vec<_>>()).unwrap();
        assert!(attack_random(&small, 0.05, 0).is_err());
    }

    #[test]
    fn dice_respects_classes() {
        let g = sbm(30, 0.5, 0.1, 2);
        let y = g.labels().unwrap().to_vec();
        let a = attack_dice(&g, 0.2, 5).unwrap();
        let before: HashSet<_> = g.edges().iter().map(|e| e.pair()).collect();
        let after: HashSet<_> = a.edges().iter().map(|e| e.pair()).collect();
        for &(i, j) in before.difference(&after) {
            assert_eq!(y[i], y[j]);
        }
        for &(i, j) in after.difference(&before) {
            assert_ne!(y[i], y[j]);
        }
        assert_eq!(
            before.symmetric_difference(&after).count(),
            budget_floor(0.2 * g.m() as f64)
        );
    }

    #[test]
    fn dice_lowers_homophily() {
        for s in 0..10 {
            let g = sbm(100, 0.2, 0.005, s);
            let y = g.labels().unwrap();
            let h0 = homophily_of(&g, y).unwrap();
            assert!(h0 > 0.85);
            let a = attack_dice(&g, 0.1, s).unwrap();
            assert!(homophily_of(&a, y).unwrap() <= h0);
        }
    }

    #[test]
    fn dice_budget_of_ten() {
        let mut g = sbm(60, 0.3, 0.05, 1);
        let keep: Vec<_> = g.edges().iter().take(100).map(|e| (e.u, e.v, 1.0)).collect();
        g = g.with_edges(keep).unwrap();
        let a = attack_dice(&g, 0.1, 0).unwrap();
        let before: HashSet<_> = g.edges().iter().map(|e| e.pair()).collect();
        let after: HashSet<_> = a.edges().iter().map(|e| e.pair()).collect();
        assert_eq!(before.symmetric_difference(&after).count(), 10);
        assert!(attack_dice(&Graph::from_pairs(3, &[(0, 1)]).unwrap(), 1.0, 0).is_err());
    }

    #[test]
    fn config_parsing() {
        let text = "# demo\ndataset=sbm:n=40,C=2,p_in=0.3,p_out=0.05\nvariant=w\nband_mode=heterophilic\nr1=0.1\nseeds=3\nattack=dice\npool_size=auto\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.variant, Variant::W);
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.augment.band_mode, BandMode::Heterophilic);
        assert_eq!(c.attack, Attack::Dice);
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
        assert!(matches!(ExperimentConfig::parse("variant=XL"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("colour=red"), Err(Error::Config(_))));
        assert!(ExperimentConfig::parse("r1=0.1\nr1=0.2").is_err());
        assert_eq!(CONFIG_KEYS.len(), 18);
        let text = c.to_text();
        let listed: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap()).collect();
        let keys: Vec<&str> = CONFIG_KEYS.iter().map(|k| k.0).collect();
        assert_eq!(listed, keys);
    }

    #[test]
    fn variants_adjust_augmentation() {
        let mut c = ExperimentConfig::default();
        c.variant = Variant::B;
        assert_eq!(c.effective_augment().band_mode, BandMode::Heterophilic);
        c.variant = Variant::W;
        assert!(!c.effective_augment().weighted);
    }

    fn small_experiment(attack: Attack) -> (Dataset, ExperimentConfig) {
        let data = Dataset {
            graph: sbm(60, 0.3, 0.03, 1),
            split: None,
        };
        let mut cfg = ExperimentConfig {
            dataset: "inline".into(),
            seeds: vec![0, 1],
            attack,
            ..ExperimentConfig::default()
        };
        cfg.augment.b0 = 2;
        cfg.augment.band_size = 8;
        cfg.train.epochs = 3;
        cfg.train.hidden = 8;
        (data, cfg)
    }

    #[test]
    fn attack_none_matches_plain_run() {
        let (data, cfg) = small_experiment(Attack::None);
        let report = run_experiment(&data, &cfg, 7).unwrap();
        assert_eq!(report.results.len(), 2);
        assert!(report.summary.attacked_accuracy.is_none());
        let plain = run_seed(&data, &cfg, seed::derive(7, &[1])).unwrap();
        assert_eq!(plain.accuracy, report.results[1].accuracy);

        let (_, dice) = small_experiment(Attack::Dice);
        let attacked = run_experiment(&data, &dice, 7).unwrap();
        for (a, b) in attacked.results.iter().zip(&report.results) {
            assert_eq!(a.params_digest, b.params_digest);
            assert_eq!(a.accuracy, b.accuracy);
            assert!(a.attacked_accuracy.is_some());
        }
        let json = serde_json::to_value(&attacked).unwrap();
        assert!(json["summary"]["drop"]["mean"].is_number());
        assert_eq!(json["config"]["variant"], "FULL");
    }

    #[test]
    fn random_baseline_runs() {
        let (data, mut cfg) = small_experiment(Attack::None);
        cfg.variant = Variant::RandomBaseline;
        let r = run_experiment(&data, &cfg, 1).unwrap();
        assert!(r.results.iter().all(|x| (0.0..=1.0).contains(&x.accuracy)));
    }
}
