//! Spectral augmentation: perturb a band of adjacency eigenvectors inside
//! their own span, read the perturbed adjacency back entry by entry, and turn
//! the relative change into edge drops and additions.
//!
//! Index `i` always refers to the `i`-th adjacency eigenpair in descending
//! `ω` order, which is the `i`-th lowest normalized-Laplacian frequency.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{ordered, Graph, SymMatrix};
use crate::seed;
use crate::spectral::{adjacency_system, group_bounds, EigenSystem, SpectrumKind};

/// Lower bound of reweighted edges.
pub const MIN_WEIGHT: f64 = 1e-3;

const COLLAPSE_TOL: f64 = 1e-10;
const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandMode {
    /// Keep the `b0` lowest frequencies and perturb the next `|B|`.
    Homophilic,
    /// Perturb `|B|` frequencies spread over the whole spectrum.
    Heterophilic,
}

impl BandMode {
    pub fn swapped(self) -> Self {
        match self {
            BandMode::Homophilic => BandMode::Heterophilic,
            BandMode::Heterophilic => BandMode::Homophilic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpreadSampling {
    /// Evenly strided indices `⌊k·n/|B|⌋`.
    Stride,
    /// Seeded uniform sample without replacement.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub band_mode: BandMode,
    pub spread: SpreadSampling,
    pub b0: usize,
    pub band_size: usize,
    /// Diagonal weight `γ_ii` of each combination row.
    pub pivot: f64,
    /// Fraction of edges dropped, budget `⌈r1·m⌉`.
    pub r1: f64,
    /// Fraction of `m` added from the pool, budget `⌈r2·m⌉`.
    pub r2: f64,
    /// `None` means `min(5m, available)`.
    pub pool_size: Option<usize>,
    pub mask_ratio: f64,
    pub weighted: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            band_mode: BandMode::Homophilic,
            spread: SpreadSampling::Stride,
            b0: 10,
            band_size: 40,
            pivot: 0.7,
            r1: 0.2,
            r2: 0.2,
            pool_size: None,
            mask_ratio: 0.2,
            weighted: true,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pivot > 0.0 && self.pivot <= 1.0) {
            return Err(Error::Config(format!("pivot {} outside (0, 1]", self.pivot)));
        }
        for (name, v) in [("r1", self.r1), ("r2", self.r2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!(
                "mask_ratio = {} outside [0, 1)",
                self.mask_ratio
            )));
        }
        Ok(())
    }

    /// Eigenpairs the pipeline needs: `b0 + |B|` for the contiguous band,
    /// everything otherwise.
    pub fn pairs_needed(&self) -> Option<usize> {
        match self.band_mode {
            BandMode::Homophilic => Some(self.b0 + self.band_size),
            BandMode::Heterophilic => None,
        }
    }
}

/// `⌈x⌉` that ignores representation noise like `0.1 · 40 = 4.000…01`.
pub(crate) fn budget_ceil(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

pub(crate) fn budget_floor(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}

/// Selected band `B`, ascending.
pub fn select_band(es: &EigenSystem, cfg: &AugmentConfig, seed: u64) -> Result<Vec<usize>> {
    let available = es.len();
    let k = cfg.band_size;
    let band = match cfg.band_mode {
        BandMode::Homophilic => {
            if cfg.b0 + k > available {
                return Err(Error::pre(format!(
                    "band b0 + |B| = {} exceeds the {available} available eigenpairs",
                    cfg.b0 + k
                )));
            }
            (cfg.b0..cfg.b0 + k).collect()
        }
        BandMode::Heterophilic => {
            let n = es.n();
            if !es.complete || k > n {
                return Err(Error::pre(format!(
                    "spread band of {k} needs a complete system of at least that size"
                )));
            }
            match cfg.spread {
                SpreadSampling::Stride => (0..k).map(|j| j * n / k).collect(),
                SpreadSampling::Random => {
                    let mut rng = seed::rng_for(seed, &[0xba2d]);
                    let mut b = index::sample(&mut rng, n, k).into_vec();
                    b.sort_unstable();
                    b
                }
            }
        }
    };
    Ok(band)
}

fn gamma_row(len: usize, row: usize, pivot: f64, rng: &mut seed::Rng) -> Vec<f64> {
    let mut r = vec![0.0; len];
    if len == 1 {
        r[0] = 1.0;
        return r;
    }
    let draws: Vec<f64> = (0..len - 1).map(|_| rng.random::<f64>()).collect();
    let total: f64 = draws.iter().sum();
    let mut it = draws.into_iter();
    for (j, v) in r.iter_mut().enumerate() {
        *v = if j == row {
            pivot
        } else {
            (1.0 - pivot) * it.next().unwrap() / total
        };
    }
    r
}

/// Row-stochastic `|B| × |B|` combination matrix with `pivot` on the
/// diagonal and the remaining mass spread by normalized uniforms.
pub fn sample_gamma(len: usize, pivot: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = seed::rng_for(seed, &[0x6a33a]);
    let mut g = DMatrix::zeros(len, len);
    for i in 0..len {
        let row = gamma_row(len, i, pivot, &mut rng);
        for (j, v) in row.into_iter().enumerate() {
            g[(i, j)] = v;
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationPlan {
    pub band: Vec<usize>,
    pub b0: usize,
    /// Sampled combination coefficients (after any resampling).
    pub gamma: DMatrix<f64>,
    /// Coefficients of the orthonormalized vectors: row `i` expresses
    /// `φ̃_i` in the original band basis.
    pub gamma_eff: DMatrix<f64>,
    /// `n × |B|`, orthonormal columns.
    pub phi_tilde: DMatrix<f64>,
    pub seed: u64,
}

impl PerturbationPlan {
    pub fn gamma_digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.gamma.iter() {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Identity plan (`B = ∅`).
    pub fn empty(n: usize) -> Self {
        Self {
            band: Vec::new(),
            b0: 0,
            gamma: DMatrix::zeros(0, 0),
            gamma_eff: DMatrix::zeros(0, 0),
            phi_tilde: DMatrix::zeros(n, 0),
            seed: 0,
        }
    }
}

fn band_basis(es: &EigenSystem, band: &[usize]) -> Result<DMatrix<f64>> {
    let mut phi = DMatrix::zeros(es.n(), band.len());
    for (c, &i) in band.iter().enumerate() {
        if i >= es.len() {
            return Err(Error::pre(format!(
                "band index {i} outside the {} available eigenpairs",
                es.len()
            )));
        }
        phi.set_column(c, &es.vectors.column(i));
    }
    Ok(phi)
}

fn check_adjacency(es: &EigenSystem) -> Result<()> {
    if es.kind != SpectrumKind::AdjSym {
        return Err(Error::pre(format!(
            "augmentation works on ADJ_SYM pairs, got {:?}",
            es.kind
        )));
    }
    Ok(())
}

/// Mixes the band eigenvectors with `gamma` and orthonormalizes them by
/// modified Gram–Schmidt in ascending-frequency order; the first vector is
/// only normalized. A row whose residual collapses is resampled from a fresh
/// stream of `seed`.
pub fn perturb_eigenvectors(
    es: &EigenSystem,
    band: &[usize],
    gamma: &DMatrix<f64>,
    pivot: f64,
    seed: u64,
) -> Result<PerturbationPlan> {
    check_adjacency(es)?;
    let k = band.len();
    if gamma.shape() != (k, k) {
        return Err(Error::pre(format!(
            "gamma is {:?}, band has {k} indices",
            gamma.shape()
        )));
    }
    if band.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::pre("band indices must be strictly ascending"));
    }
    let phi = band_basis(es, band)?;
    let mut gamma = gamma.clone();
    let mut tilde = DMatrix::zeros(es.n(), k);

    for i in 0..k {
        let mut attempt = 0;
        loop {
            let mut v = &phi * gamma.row(i).transpose();
            for _ in 0..2 {
                for j in 0..i {
                    let d = tilde.column(j).dot(&v);
                    v.axpy(-d, &tilde.column(j), 1.0);
                }
            }
            let r = v.norm();
            if r >= COLLAPSE_TOL {
                tilde.set_column(i, &(v / r));
                break;
            }
            attempt += 1;
            if attempt > MAX_RESAMPLES {
                return Err(Error::num(format!(
                    "Gram-Schmidt collapse on band row {i} after {MAX_RESAMPLES} resamples"
                )));
            }
            let mut rng = seed::rng_for(seed, &[0x7e5a, i as u64, attempt as u64]);
            let row = gamma_row(k, i, pivot, &mut rng);
            for (j, val) in row.into_iter().enumerate() {
                gamma[(i, j)] = val;
            }
        }
    }
    let gamma_eff = tilde.transpose() * &phi;
    Ok(PerturbationPlan {
        band: band.to_vec(),
        b0: band.first().copied().unwrap_or(0),
        gamma,
        gamma_eff,
        phi_tilde: tilde,
        seed,
    })
}

fn band_omegas(es: &EigenSystem, plan: &PerturbationPlan) -> Vec<f64> {
    plan.band.iter().map(|&i| es.values[i]).collect()
}

/// `Σ_{i∉B} ω_i φ_i φ_iᵀ + Σ_{i∈B} ω_i φ̃_i φ̃_iᵀ` from all eigenpairs.
pub fn reconstruct_full(es: &EigenSystem, plan: &PerturbationPlan) -> Result<DMatrix<f64>> {
    check_adjacency(es)?;
    if !es.complete {
        return Err(Error::pre("full reconstruction needs every eigenpair"));
    }
    let mut vecs = es.vectors.clone();
    for (c, &i) in plan.band.iter().enumerate() {
        vecs.set_column(i, &plan.phi_tilde.column(c));
    }
    let mut scaled = vecs.clone();
    for (c, &w) in es.values.iter().enumerate() {
        scaled.column_mut(c).scale_mut(w);
    }
    Ok(scaled * vecs.transpose())
}

fn weighted_outer(basis: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let mut scaled = basis.clone();
    for (c, &w) in weights.iter().enumerate() {
        scaled.column_mut(c).scale_mut(w);
    }
    scaled * basis.transpose()
}

/// Remove-and-add form `A − Σ_B ω_i φ_iφ_iᵀ + Σ_B ω_i φ̃_iφ̃_iᵀ`.
pub fn reconstruct_three_term(
    a_sym: &DMatrix<f64>,
    es: &EigenSystem,
    plan: &PerturbationPlan,
) -> Result<DMatrix<f64>> {
    check_adjacency(es)?;
    let phi = band_basis(es, &plan.band)?;
    let w = band_omegas(es, plan);
    Ok(a_sym - weighted_outer(&phi, &w) + weighted_outer(&plan.phi_tilde, &w))
}

/// `C = Γᵀ Ω_B Γ − Ω_B` with `Γ = gamma_eff`. Its diagonal is the
/// per-eigenvector bracket `Σ_j ω_j Γ_ji² − ω_i`; the off-diagonal entries
/// are the cross terms between band eigenvectors.
pub fn band_coupling(es: &EigenSystem, plan: &PerturbationPlan) -> DMatrix<f64> {
    let w = band_omegas(es, plan);
    let k = w.len();
    let mut c = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            let s: f64 = (0..k)
                .map(|i| w[i] * plan.gamma_eff[(i, a)] * plan.gamma_eff[(i, b)])
                .sum();
            c[(a, b)] = s;
        }
        c[(a, a)] -= w[a];
    }
    c
}

/// `A + Φ_B C Φ_Bᵀ`; needs only the band eigenpairs.
pub fn reconstruct_incremental(
    a_sym: &DMatrix<f64>,
    es: &EigenSystem,
    plan: &PerturbationPlan,
) -> Result<DMatrix<f64>> {
    check_adjacency(es)?;
    let phi = band_basis(es, &plan.band)?;
    let c = band_coupling(es, plan);
    Ok(a_sym + &phi * c * phi.transpose())
}

/// Per-entry evaluation of the perturbed adjacency. After an
/// `O(n·|B|²)` setup each entry costs `O(|B|)`.
#[derive(Debug, Clone)]
pub struct EntryPerturbation {
    phi: DMatrix<f64>,
    coupled: DMatrix<f64>,
}

impl EntryPerturbation {
    pub fn new(es: &EigenSystem, plan: &PerturbationPlan) -> Result<Self> {
        check_adjacency(es)?;
        let phi = band_basis(es, &plan.band)?;
        let coupled = &phi * band_coupling(es, plan);
        Ok(Self { phi, coupled })
    }

    /// `Ã_pq` given the original entry `A_pq`. Evaluated on the ordered
    /// pair so that `(p, q)` and `(q, p)` agree bit for bit.
    pub fn entry(&self, a_pq: f64, p: usize, q: usize) -> f64 {
        let (p, q) = ordered(p, q);
        let delta: f64 = self
            .coupled
            .row(p)
            .iter()
            .zip(self.phi.row(q).iter())
            .map(|(a, b)| a * b)
            .sum();
        a_pq + delta
    }
}

pub fn entry_perturbation(
    a_sym: &SymMatrix,
    es: &EigenSystem,
    plan: &PerturbationPlan,
    p: usize,
    q: usize,
) -> Result<f64> {
    if p >= a_sym.n() || q >= a_sym.n() {
        return Err(Error::Range {
            id: p.max(q),
            n: a_sym.n(),
            context: "entry perturbation".into(),
        });
    }
    Ok(EntryPerturbation::new(es, plan)?.entry(a_sym.get(p, q), p, q))
}

/// Perturbed values `Ã` and relative scores for a list of pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub pairs: Vec<(usize, usize)>,
    pub values: Vec<f64>,
    pub scores: Vec<f64>,
}

/// `Ψ⁺_ij = |Ã_ij − A_ij| / A_ij` for every edge, in `g.edges()` order.
pub fn score_existing_edges(
    g: &Graph,
    a_sym: &SymMatrix,
    scorer: &EntryPerturbation,
) -> PairScores {
    let mut out = PairScores {
        pairs: Vec::with_capacity(g.m()),
        values: Vec::with_capacity(g.m()),
        scores: Vec::with_capacity(g.m()),
    };
    for e in g.edges() {
        let a = a_sym.get(e.u, e.v);
        let t = scorer.entry(a, e.u, e.v);
        out.pairs.push(e.pair());
        out.values.push(t);
        out.scores.push((t - a).abs() / a);
    }
    out
}

/// Number of node pairs eligible for the pool: non-edges whose endpoints
/// both have positive degree.
pub fn available_pool(g: &Graph) -> usize {
    let positive = g.degrees().iter().filter(|&&d| d > 0.0).count();
    positive * positive.saturating_sub(1) / 2 - g.m()
}

pub fn default_pool_size(g: &Graph) -> usize {
    (5 * g.m()).min(available_pool(g))
}

/// Uniform sample of eligible non-edges without replacement, sorted.
pub fn sample_edge_pool(g: &Graph, pool_size: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let available = available_pool(g);
    if pool_size > available {
        return Err(Error::pre(format!(
            "edge pool of {pool_size} requested, only {available} eligible pairs"
        )));
    }
    let deg = g.degrees();
    let nodes: Vec<usize> = (0..g.n()).filter(|&i| deg[i] > 0.0).collect();
    let mut rng = seed::rng_for(seed, &[0x9001]);
    let mut pool: Vec<(usize, usize)> = if 2 * pool_size <= available {
        let mut picked = HashSet::with_capacity(pool_size);
        while picked.len() < pool_size {
            let a = nodes[rng.random_range(0..nodes.len())];
            let b = nodes[rng.random_range(0..nodes.len())];
            if a != b && !g.has_edge(a, b) {
                picked.insert(ordered(a, b));
            }
        }
        picked.into_iter().collect()
    } else {
        let mut all = Vec::with_capacity(available);
        for (x, &a) in nodes.iter().enumerate() {
            for &b in &nodes[x + 1..] {
                if !g.has_edge(a, b) {
                    all.push((a, b));
                }
            }
        }
        index::sample(&mut rng, all.len(), pool_size)
            .into_iter()
            .map(|i| all[i])
            .collect()
    };
    pool.sort_unstable();
    Ok(pool)
}

/// `Ψ⁻_ij = Ã_ij / A^ρ_ij` with the proxy `A^ρ_ij = 1/√(d_i d_j)`.
pub fn score_candidate_edges(
    g: &Graph,
    scorer: &EntryPerturbation,
    pool: &[(usize, usize)],
) -> Result<PairScores> {
    let deg = g.degrees();
    let mut out = PairScores {
        pairs: Vec::with_capacity(pool.len()),
        values: Vec::with_capacity(pool.len()),
        scores: Vec::with_capacity(pool.len()),
    };
    for &(i, j) in pool {
        if deg[i] <= 0.0 || deg[j] <= 0.0 {
            return Err(Error::pre(format!(
                "pool pair ({i}, {j}) has a zero-degree endpoint"
            )));
        }
        let t = scorer.entry(0.0, i, j);
        let proxy = 1.0 / (deg[i] * deg[j]).sqrt();
        out.pairs.push((i, j));
        out.values.push(t);
        out.scores.push(t / proxy);
    }
    Ok(out)
}

/// Indices of the `k` largest scores; ties go to the lexicographically
/// smaller pair.
fn top_k(scores: &PairScores, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores.scores[b]
            .total_cmp(&scores.scores[a])
            .then(scores.pairs[a].cmp(&scores.pairs[b]))
    });
    idx.truncate(k);
    idx
}

/// Min-max rescale into `[MIN_WEIGHT, 1]`; non-positive inputs map to the
/// floor.
fn rescale_weights(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| {
            if v <= 0.0 {
                MIN_WEIGHT
            } else if hi - lo < 1e-15 {
                1.0
            } else {
                MIN_WEIGHT + (1.0 - MIN_WEIGHT) * (v - lo) / (hi - lo)
            }
        })
        .map(|w| w.clamp(MIN_WEIGHT, 1.0))
        .collect()
}

/// Drops the `⌈r1·m⌉` edges with the largest `Ψ⁺`, adds the `⌈r2·m⌉` pool
/// pairs with the largest `Ψ⁻`, and weights the result by the perturbed
/// values (or `1` when unweighted).
pub fn flip_edges(
    g: &Graph,
    existing: &PairScores,
    candidates: &PairScores,
    cfg: &AugmentConfig,
) -> Result<Graph> {
    if existing.pairs.len() != g.m() {
        return Err(Error::pre("edge scores do not cover every edge"));
    }
    let m = g.m();
    let drop = budget_ceil(cfg.r1 * m as f64);
    if drop > 0 && drop >= m {
        return Err(Error::pre(format!(
            "drop budget {drop} would remove all {m} edges"
        )));
    }
    let add = budget_ceil(cfg.r2 * m as f64).min(candidates.pairs.len());

    let dropped: HashSet<usize> = top_k(existing, drop).into_iter().collect();
    let mut pairs = Vec::with_capacity(m - drop + add);
    let mut values = Vec::with_capacity(m - drop + add);
    for k in 0..m {
        if !dropped.contains(&k) {
            pairs.push(existing.pairs[k]);
            values.push(existing.values[k]);
        }
    }
    for k in top_k(candidates, add) {
        pairs.push(candidates.pairs[k]);
        values.push(candidates.values[k]);
    }
    let weights = if cfg.weighted {
        rescale_weights(&values)
    } else {
        vec![1.0; values.len()]
    };
    Graph::new(
        g.n(),
        pairs.into_iter().zip(weights).map(|((i, j), w)| (i, j, w)),
        DMatrix::zeros(g.n(), 0),
        g.labels().map(<[usize]>::to_vec),
    )
}

/// Zeroes a uniformly chosen `⌈ratio·d⌉` subset of feature columns.
pub fn mask_features(x: &DMatrix<f64>, ratio: f64, seed: u64) -> DMatrix<f64> {
    let d = x.ncols();
    let k = budget_ceil(ratio * d as f64).min(d);
    let mut out = x.clone();
    if k == 0 {
        return out;
    }
    let mut rng = seed::rng_for(seed, &[0x3a5c]);
    for c in index::sample(&mut rng, d, k) {
        out.column_mut(c).fill(0.0);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedView {
    /// Weighted topology; carries labels but no features.
    pub topology: Graph,
    pub features: DMatrix<f64>,
}

impl AugmentedView {
    /// The unaugmented graph as a view.
    pub fn identity(g: &Graph) -> Self {
        Self {
            topology: g
                .with_edges(g.edges().iter().map(|e| (e.u, e.v, e.weight)))
                .and_then(|t| t.with_features(DMatrix::zeros(g.n(), 0)))
                .expect("re-validating an existing edge set"),
            features: g.features().clone(),
        }
    }
}

/// Anything that can produce a pair of training views from a seed.
pub trait ViewSource: Sync {
    fn views(&self, seed: u64) -> Result<(AugmentedView, AugmentedView)>;
}

/// Seeds of the two views built from `seed`.
pub fn view_seeds(seed: u64) -> [u64; 2] {
    [seed::derive(seed, &[0xa]), seed::derive(seed, &[0xb])]
}

/// Spectral view generator with the graph's decomposition cached.
#[derive(Debug, Clone)]
pub struct Augmenter<'g> {
    graph: &'g Graph,
    a_sym: SymMatrix,
    es: EigenSystem,
    cfg: AugmentConfig,
}

impl<'g> Augmenter<'g> {
    pub fn new(graph: &'g Graph, cfg: AugmentConfig) -> Result<Self> {
        cfg.validate()?;
        let es = adjacency_system(graph, cfg.pairs_needed(), cfg.seed)?;
        Self::with_system(graph, es, cfg)
    }

    /// Reuses a precomputed ADJ_SYM system.
    pub fn with_system(graph: &'g Graph, es: EigenSystem, cfg: AugmentConfig) -> Result<Self> {
        cfg.validate()?;
        check_adjacency(&es)?;
        Ok(Self {
            graph,
            a_sym: graph.normalized_adjacency(),
            es,
            cfg,
        })
    }

    pub fn system(&self) -> &EigenSystem {
        &self.es
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    pub fn plan(&self, seed: u64) -> Result<PerturbationPlan> {
        let band = select_band(&self.es, &self.cfg, seed)?;
        let gamma = sample_gamma(band.len(), self.cfg.pivot, seed);
        let mut plan = perturb_eigenvectors(&self.es, &band, &gamma, self.cfg.pivot, seed)?;
        plan.b0 = match self.cfg.band_mode {
            BandMode::Homophilic => self.cfg.b0,
            BandMode::Heterophilic => 0,
        };
        Ok(plan)
    }

    /// One view plus the plan that produced it.
    pub fn view_with_plan(&self, seed: u64) -> Result<(AugmentedView, PerturbationPlan)> {
        let g = self.graph;
        let plan = self.plan(seed)?;
        let scorer = EntryPerturbation::new(&self.es, &plan)?;
        let existing = score_existing_edges(g, &self.a_sym, &scorer);
        let pool_size = self.cfg.pool_size.unwrap_or_else(|| default_pool_size(g));
        let pool = sample_edge_pool(g, pool_size, seed)?;
        let candidates = score_candidate_edges(g, &scorer, &pool)?;
        let topology = flip_edges(g, &existing, &candidates, &self.cfg)?;
        let features = mask_features(g.features(), self.cfg.mask_ratio, seed);
        Ok((AugmentedView { topology, features }, plan))
    }

    pub fn view(&self, seed: u64) -> Result<AugmentedView> {
        Ok(self.view_with_plan(seed)?.0)
    }
}

impl ViewSource for Augmenter<'_> {
    fn views(&self, seed: u64) -> Result<(AugmentedView, AugmentedView)> {
        let [a, b] = view_seeds(seed);
        Ok((self.view(a)?, self.view(b)?))
    }
}

/// Two views from `cfg.seed`.
pub fn make_views(g: &Graph, cfg: &AugmentConfig) -> Result<(AugmentedView, AugmentedView)> {
    Augmenter::new(g, *cfg)?.views(cfg.seed)
}

/// Uniform spatial control: drops `⌈r1·m⌉` random edges and adds `⌈r2·m⌉`
/// random non-edges, all weights `1`, same feature masking.
#[derive(Debug, Clone)]
pub struct RandomAugmenter<'g> {
    graph: &'g Graph,
    cfg: AugmentConfig,
}

impl<'g> RandomAugmenter<'g> {
    pub fn new(graph: &'g Graph, cfg: AugmentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { graph, cfg })
    }

    pub fn view(&self, seed: u64) -> Result<AugmentedView> {
        let g = self.graph;
        let m = g.m();
        let drop = budget_ceil(self.cfg.r1 * m as f64);
        if drop > 0 && drop >= m {
            return Err(Error::pre(format!("drop budget {drop} would remove all {m} edges")));
        }
        let max_pairs = g.n() * g.n().saturating_sub(1) / 2;
        let add = budget_ceil(self.cfg.r2 * m as f64).min(max_pairs - m);
        let mut rng = seed::rng_for(seed, &[0x7a4d]);
        let dropped: HashSet<usize> = index::sample(&mut rng, m, drop).into_iter().collect();
        let mut edges: Vec<(usize, usize, f64)> = g
            .edges()
            .iter()
            .enumerate()
            .filter(|(k, _)| !dropped.contains(k))
            .map(|(_, e)| (e.u, e.v, 1.0))
            .collect();
        let mut added = HashSet::new();
        while added.len() < add {
            let a = rng.random_range(0..g.n());
            let b = rng.random_range(0..g.n());
            if a != b && !g.has_edge(a, b) {
                added.insert(ordered(a, b));
            }
        }
        let mut added: Vec<_> = added.into_iter().collect();
        added.sort_unstable();
        edges.extend(added.into_iter().map(|(i, j)| (i, j, 1.0)));
        let topology = Graph::new(
            g.n(),
            edges,
            DMatrix::zeros(g.n(), 0),
            g.labels().map(<[usize]>::to_vec),
        )?;
        let features = mask_features(g.features(), self.cfg.mask_ratio, seed);
        Ok(AugmentedView { topology, features })
    }
}

impl ViewSource for RandomAugmenter<'_> {
    fn views(&self, seed: u64) -> Result<(AugmentedView, AugmentedView)> {
        let [a, b] = view_seeds(seed);
        Ok((self.view(a)?, self.view(b)?))
    }
}

/// `g` plus `⌈ratio·m⌉` uniformly chosen new edges of weight `1`.
pub fn random_insertion(g: &Graph, ratio: f64, seed: u64) -> Result<Graph> {
    let cfg = AugmentConfig {
        r1: 0.0,
        r2: ratio,
        mask_ratio: 0.0,
        ..AugmentConfig::default()
    };
    Ok(RandomAugmenter::new(g, cfg)?.view(seed)?.topology)
}

/// Fraction of `‖Δ‖_F²` inside `span{φ_i : i ∈ band}`: `‖Φ_Bᵀ Δ Φ_B‖_F² / ‖Δ‖_F²`.
pub fn band_energy_fraction(delta: &DMatrix<f64>, es: &EigenSystem, band: &[usize]) -> Result<f64> {
    let phi = band_basis(es, band)?;
    let total = delta.norm_squared();
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok((phi.transpose() * delta * &phi).norm_squared() / total)
}

/// `‖P Δ P‖_F` with `P` the projector onto the complement of the band.
pub fn outside_band_norm(delta: &DMatrix<f64>, es: &EigenSystem, band: &[usize]) -> Result<f64> {
    let phi = band_basis(es, band)?;
    let n = es.n();
    let p = DMatrix::<f64>::identity(n, n) - &phi * phi.transpose();
    Ok((&p * delta * &p).norm())
}

/// `‖Δ V_k‖_F²` for each of `groups` contiguous frequency groups of a
/// complete system.
pub fn group_energies(delta: &DMatrix<f64>, es: &EigenSystem, groups: usize) -> Result<Vec<f64>> {
    if !es.complete {
        return Err(Error::pre("group energies need a complete system"));
    }
    Ok(group_bounds(es.n(), groups)
        .into_iter()
        .map(|(lo, hi)| (delta * es.vectors.columns(lo, hi - lo)).norm_squared())
        .collect())
}
