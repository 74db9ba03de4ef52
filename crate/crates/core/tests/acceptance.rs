use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use specaug::augment::{
    band_energy_fraction, outside_band_norm, perturb_eigenvectors, random_insertion,
    reconstruct_full, reconstruct_incremental, reconstruct_three_term, sample_gamma, select_band,
    AugmentConfig, AugmentedView, Augmenter, BandMode, EntryPerturbation, SpreadSampling,
};
use specaug::eval::{run_experiment, ExperimentConfig, ExperimentReport};
use specaug::gcl::{loss_gradients, EncoderParams, TrainConfig};
use specaug::graph::{homophily_of, sbm_generate, SbmParams};
use specaug::io::{resolve_dataset, Dataset};
use specaug::seed;
use specaug::spectral::{adjacency_system, band_distance, eig_dense, eig_full, eig_partial};
use specaug::theory::{
    check_remark1, check_theorem1, check_theorem2, check_theorem2_signed, disjoint_cliques,
    identity_residual_2m, identity_residual_m, theorem1_instance, theorem2_instance,
    theorem3_identity, unit_rows,
};
use specaug::{Graph, SpectrumKind};

const HOMO_SBM: &str = "sbm:n=400,C=2,p_in=0.045,p_out=0.005,d=16";
const HETERO_SBM: &str = "sbm:n=400,C=2,p_in=0.005,p_out=0.045,d=16";

/// Shared by every variant of the desk-scale runs.
const SHARED: &str = "\
b0=10
band_size=40
pivot=0.7
r1=0.2
r2=0.2
mask_ratio=0.2
alpha=0.001
hidden=128
dropout=0
lr=0.001
epochs=200
seeds=10
";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(limit_secs: u64, started: Instant) -> (bool, Duration) {
    let took = started.elapsed();
    (took <= Duration::from_secs(limit_secs), took)
}

fn random_graph(n: usize, p: f64, rng: &mut seed::Rng) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    Graph::new(n, edges, DMatrix::zeros(n, 0), None).unwrap()
}

fn random_labels(n: usize, rng: &mut seed::Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..2)).collect()
}

fn sbm(n: usize, p_in: f64, p_out: f64, s: u64) -> Graph {
    sbm_generate(&SbmParams {
        n,
        classes: 2,
        p_in,
        p_out,
        feature_dim: 8,
        seed: s,
    })
    .unwrap()
}

/// A random graph with a random band configuration and its perturbation plan.
struct Instance {
    a: DMatrix<f64>,
    es: specaug::EigenSystem,
    plan: specaug::augment::PerturbationPlan,
    g: Graph,
}

fn random_instance(s: u64) -> Instance {
    let mut rng = seed::rng_for(s, &[0xacc]);
    loop {
        let n = rng.random_range(8..=40);
        let g = random_graph(n, rng.random_range(0.1..0.5), &mut rng);
        if g.m() == 0 {
            continue;
        }
        let band_size = rng.random_range(2..=(n / 3).max(2));
        let cfg = AugmentConfig {
            band_mode: if rng.random() {
                BandMode::Homophilic
            } else {
                BandMode::Heterophilic
            },
            spread: if rng.random() {
                SpreadSampling::Stride
            } else {
                SpreadSampling::Random
            },
            b0: rng.random_range(0..=n - band_size),
            band_size,
            pivot: rng.random_range(0.3..=1.0),
            ..AugmentConfig::default()
        };
        let es = adjacency_system(&g, None, s).unwrap();
        let band = select_band(&es, &cfg, s).unwrap();
        let gamma = sample_gamma(band.len(), cfg.pivot, s);
        let Ok(plan) = perturb_eigenvectors(&es, &band, &gamma, cfg.pivot, s) else {
            continue;
        };
        return Instance {
            a: g.normalized_adjacency().dense(),
            es,
            plan,
            g,
        };
    }
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for s in 0..50 {
        let inst = random_instance(s);
        let full = reconstruct_full(&inst.es, &inst.plan).unwrap();
        let three = reconstruct_three_term(&inst.a, &inst.es, &inst.plan).unwrap();
        let inc = reconstruct_incremental(&inst.a, &inst.es, &inst.plan).unwrap();
        let scorer = EntryPerturbation::new(&inst.es, &inst.plan).unwrap();
        let n = inst.g.n();
        let entries = DMatrix::from_fn(n, n, |p, q| scorer.entry(inst.a[(p, q)], p, q));
        for m in [&three, &inc, &entries] {
            worst = worst.max((m - &full).abs().max());
        }
    }
    let (fast, took) = within(60, started);
    outcome(
        worst <= 1e-8 && fast,
        format!("max entrywise disagreement {worst:.2e} over 50 graphs in {took:.1?}"),
    )
}

fn criterion_2() -> Outcome {
    let mut ortho = 0.0f64;
    let mut spectrum = 0.0f64;
    for s in 100..150 {
        let inst = random_instance(s);
        let t = &inst.plan.phi_tilde;
        let k = t.ncols();
        ortho = ortho.max((t.transpose() * t - DMatrix::<f64>::identity(k, k)).abs().max());
        let rec = reconstruct_full(&inst.es, &inst.plan).unwrap();
        let got = eig_dense(&rec, SpectrumKind::AdjSym).unwrap();
        let want = eig_dense(&inst.a, SpectrumKind::AdjSym).unwrap();
        for (a, b) in got.values.iter().zip(want.values.iter()) {
            spectrum = spectrum.max((a - b).abs());
        }
    }
    outcome(
        ortho <= 1e-8 && spectrum <= 1e-8,
        format!("orthonormality error {ortho:.2e}, eigenvalue drift {spectrum:.2e} over 50 instances"),
    )
}

fn criterion_3() -> Outcome {
    let mut min_energy = f64::INFINITY;
    let mut max_outside = 0.0f64;
    for s in 200..250 {
        let inst = random_instance(s);
        let delta = reconstruct_full(&inst.es, &inst.plan).unwrap() - &inst.a;
        if delta.norm() < 1e-12 {
            continue;
        }
        min_energy = min_energy.min(band_energy_fraction(&delta, &inst.es, &inst.plan.band).unwrap());
        max_outside = max_outside.max(outside_band_norm(&delta, &inst.es, &inst.plan.band).unwrap());
    }
    outcome(
        min_energy >= 0.99 && max_outside <= 1e-8,
        format!("min band energy {min_energy:.6}, max outside-band norm {max_outside:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let started = Instant::now();
    let mut covs = Vec::new();
    let mut min_energy = f64::INFINITY;
    for s in 0..10 {
        let g = sbm(200, 0.1, 0.02, s);
        let orig = eig_full(&g.normalized_laplacian(), SpectrumKind::LapSym).unwrap();
        let aug = random_insertion(&g, 0.2, s).unwrap();
        let aug_es = eig_full(&aug.normalized_laplacian(), SpectrumKind::LapSym).unwrap();
        covs.push(band_distance(&orig, &aug_es, 10).unwrap().f_norm_cov());

        let cfg = AugmentConfig { seed: s, ..AugmentConfig::default() };
        let augmenter = Augmenter::new(&g, cfg).unwrap();
        let plan = augmenter.plan(s).unwrap();
        let delta = reconstruct_full(augmenter.system(), &plan).unwrap() - g.normalized_adjacency().dense();
        min_energy = min_energy.min(band_energy_fraction(&delta, augmenter.system(), &plan.band).unwrap());
    }
    let mean_cov = covs.iter().sum::<f64>() / covs.len() as f64;
    let (fast, took) = within(120, started);
    outcome(
        mean_cov <= 0.5 && min_energy >= 0.99 && fast,
        format!("random insertion mean CoV {mean_cov:.3}, spectral band energy >= {min_energy:.6}, {took:.1?}"),
    )
}

fn criterion_5() -> (Outcome, String) {
    let mut worst = 0.0f64;
    let mut worst_m = 0.0f64;
    let mut rng = seed::rng_for(5, &[0xacc]);
    let mut done = 0;
    while done < 100 {
        let n = rng.random_range(6..=40);
        let g = random_graph(n, rng.random_range(0.1..0.6), &mut rng);
        if g.m() == 0 {
            continue;
        }
        let y = random_labels(n, &mut rng);
        worst = worst.max(identity_residual_2m(&g, &y).unwrap());
        worst_m = worst_m.max(identity_residual_m(&g, &y).unwrap());
        done += 1;
    }
    (
        outcome(worst <= 1e-12, format!("max |h - (1 - yLy/2m)| = {worst:.3e} over 100 graphs")),
        format!("max |h - (1 - yLy/m)| = {worst_m:.3e} on the same graphs"),
    )
}

fn perfectly_homophilous(s: u64) -> (Graph, Vec<usize>) {
    let mut rng = seed::rng_for(s, &[0x4e1]);
    let n = 2 * rng.random_range(4..=20);
    let y = random_labels(n, &mut rng);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if y[i] == y[j] && rng.random::<f64>() < 0.4 {
                pairs.push((i, j));
            }
        }
    }
    (Graph::from_pairs(n, &pairs).unwrap(), y)
}

fn criterion_6() -> (Outcome, String) {
    let started = Instant::now();
    let mut t1 = 0;
    for s in 0..100 {
        let (g, y, y_hat) = theorem1_instance(40, s).unwrap();
        t1 += usize::from(check_theorem1(&g, &y, &y_hat).unwrap().satisfied);
    }
    let mut t2 = 0;
    let mut t2_signed = 0;
    for s in 0..100 {
        let (g, y) = theorem2_instance(40, s).unwrap();
        t2 += usize::from(check_theorem2(&g, &y).unwrap().satisfied);
        t2_signed += usize::from(check_theorem2_signed(&g, &y).unwrap().satisfied);
    }
    let mut remark = 0.0f64;
    for (parts, size) in [(2, 5), (4, 6), (3, 7)] {
        let (g, y) = disjoint_cliques(parts, size).unwrap();
        remark = remark.max(check_remark1(&g, &y).unwrap());
    }
    for s in 0..20 {
        let (g, y) = perfectly_homophilous(s);
        if g.m() > 0 && homophily_of(&g, &y).unwrap() == 1.0 {
            remark = remark.max(check_remark1(&g, &y).unwrap());
        }
    }
    let (fast, took) = within(180, started);
    (
        outcome(
            t1 == 100 && t2 == 100 && remark <= 1e-10 && fast,
            format!("theorem 1 {t1}/100, theorem 2 {t2}/100, remark residual {remark:.2e}, {took:.1?}"),
        ),
        format!("theorem 2 with signed labels {t2_signed}/100"),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = seed::rng_for(7, &[0xacc]);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..60);
        let h = rng.random_range(1..20);
        let za = unit_rows(n, h, &mut rng);
        let zb = unit_rows(n, h, &mut rng);
        worst = worst.max(theorem3_identity(&za, &zb).unwrap().residual);
    }
    outcome(worst <= 1e-10, format!("max residual {worst:.2e} over 50 pairs"))
}

fn criterion_8() -> Outcome {
    let started = Instant::now();
    let g = sbm(500, 0.05, 0.01, 8);
    let l = g.normalized_laplacian();
    let partial = eig_partial(&l, SpectrumKind::LapSym, 20, 8).unwrap();
    let dense = eig_full(&l, SpectrumKind::LapSym).unwrap();
    let worst = (0..20)
        .map(|i| (partial.values[i] - dense.values[i]).abs())
        .fold(0.0, f64::max);
    let (fast, took) = within(60, started);
    outcome(
        partial.len() == 20 && worst <= 1e-6 && fast,
        format!("max eigenvalue error {worst:.2e} for K=20 on n=500, {took:.1?}"),
    )
}

fn random_view(n: usize, d: usize, rng: &mut seed::Rng) -> AugmentedView {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < 0.3 {
                edges.push((i, j, rng.random_range(0.1..1.0)));
            }
        }
    }
    AugmentedView {
        topology: Graph::new(n, edges, DMatrix::zeros(n, 0), None).unwrap(),
        features: DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0)),
    }
}

fn gradient_error(s: u64) -> f64 {
    let mut rng = seed::rng_for(s, &[0x9c]);
    let n = rng.random_range(8..16);
    let d = rng.random_range(2..6);
    let hidden = rng.random_range(2..5);
    let layers = 1 + (s as usize % 2);
    let va = random_view(n, d, &mut rng);
    let vb = random_view(n, d, &mut rng);
    let params = EncoderParams::init(d, hidden, layers, s).unwrap();
    let cfg = TrainConfig {
        alpha: rng.random_range(0.01..1.0),
        hidden,
        layers,
        dropout: if s.is_multiple_of(3) { 0.2 } else { 0.0 },
        ..TrainConfig::default()
    };
    let loss = |p: &EncoderParams| loss_gradients((&va, &vb), p, &cfg, s).unwrap().0;
    let (_, grads) = loss_gradients((&va, &vb), &params, &cfg, s).unwrap();
    let step = 1e-5;
    let mut num = Vec::new();
    let mut ana = Vec::new();
    for layer in 0..layers {
        let (rows, cols) = if layer == 0 { params.w1.shape() } else { (hidden, hidden) };
        for r in 0..rows {
            for c in 0..cols {
                let bumped = |delta: f64| {
                    let mut p = params.clone();
                    let w = if layer == 0 { &mut p.w1 } else { p.w2.as_mut().unwrap() };
                    w[(r, c)] += delta;
                    loss(&p)
                };
                num.push((bumped(step) - bumped(-step)) / (2.0 * step));
                ana.push(if layer == 0 {
                    grads.w1[(r, c)]
                } else {
                    grads.w2.as_ref().unwrap()[(r, c)]
                });
            }
        }
    }
    let diff = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    diff / num.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12)
}

fn criterion_9() -> Outcome {
    let worst = (0..24).map(gradient_error).fold(0.0, f64::max);
    outcome(worst <= 1e-4, format!("max relative gradient error {worst:.2e} over 24 instances"))
}

fn experiment(data: &Dataset, spec: &str, mode: &str, variant: &str, extra: &str) -> ExperimentReport {
    let text = format!("dataset={spec}\nvariant={variant}\nband_mode={mode}\n{SHARED}{extra}");
    let cfg = ExperimentConfig::parse(&text).unwrap();
    run_experiment(data, &cfg, 0).unwrap()
}

fn criterion_10() -> Outcome {
    let started = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, spec, mode) in [("homophilic", HOMO_SBM, "homophilic"), ("heterophilic", HETERO_SBM, "heterophilic")] {
        let data = resolve_dataset(spec).unwrap();
        let acc = |v: &str| experiment(&data, spec, mode, v, "").summary.accuracy.mean;
        let (full, random, swapped) = (acc("FULL"), acc("RANDOM_BASELINE"), acc("B"));
        pass &= full >= random && full >= swapped;
        parts.push(format!("{name}: FULL {full:.4} RANDOM {random:.4} B {swapped:.4}"));
    }
    let (fast, took) = within(900, started);
    outcome(pass && fast, format!("{}; {took:.1?}", parts.join("; ")))
}

fn criterion_11() -> Outcome {
    let started = Instant::now();
    let data = resolve_dataset(HOMO_SBM).unwrap();
    let drop = |v: &str| {
        experiment(&data, HOMO_SBM, "homophilic", v, "attack=dice\nsigma=0.1\n")
            .summary
            .drop
            .expect("attacked runs report a drop")
            .mean
    };
    let (full, random) = (drop("FULL"), drop("RANDOM_BASELINE"));
    let (fast, took) = within(600, started);
    outcome(
        full <= random && fast,
        format!("DICE 0.1 accuracy drop FULL {full:.4} vs RANDOM {random:.4}; {took:.1?}"),
    )
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_specaug"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_12() -> Outcome {
    let spec = "sbm:n=60,C=2,p_in=0.2,p_out=0.03,d=6";
    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path();
    let cfg_path = base.join("exp.cfg");
    std::fs::write(
        &cfg_path,
        format!("dataset={spec}\nb0=2\nband_size=8\nhidden=8\nepochs=5\nseeds=2\nattack=dice\n"),
    )
    .unwrap();
    let setup = run_cli(&["train", "--dataset", spec, "--seed", "3", "--set", "b0=2", "--set", "band_size=8",
        "--set", "hidden=8", "--set", "epochs=5", "--out", base.join("emb").to_str().unwrap()]);
    if !setup.status.success() {
        return outcome(false, format!("setup train failed: {}", String::from_utf8_lossy(&setup.stderr)));
    }
    let embeddings = base.join("emb").join("embeddings.csv");
    let emb = embeddings.to_str().unwrap();
    let small = ["--set", "b0=2", "--set", "band_size=8"];
    let verbs: Vec<(&str, Vec<&str>)> = vec![
        ("analyze", vec!["analyze", "--dataset", spec, "--seed", "3"]),
        ("augment", [&["augment", "--dataset", spec, "--seed", "3"][..], &small].concat()),
        ("train", [&["train", "--dataset", spec, "--seed", "3", "--set", "hidden=8", "--set", "epochs=5"][..], &small].concat()),
        ("eval", vec!["eval", "--dataset", spec, "--embeddings", emb, "--seed", "3"]),
        ("attack", vec!["attack", "--dataset", spec, "--method", "dice", "--seed", "3"]),
        ("verify", vec!["verify", "--instances", "5", "--n", "12", "--seed", "3"]),
        ("experiment", vec!["experiment", "--config", cfg_path.to_str().unwrap(), "--seed", "3"]),
    ];
    let mut mismatched = Vec::new();
    for (verb, args) in &verbs {
        let mut runs = Vec::new();
        for attempt in 0..2 {
            let dir = base.join(format!("{verb}-{attempt}"));
            let target = if matches!(*verb, "augment" | "train" | "attack") {
                dir.clone()
            } else {
                std::fs::create_dir_all(&dir).unwrap();
                dir.join("report")
            };
            let mut full: Vec<&str> = args.clone();
            let target_str = target.to_str().unwrap().to_string();
            full.push("--out");
            full.push(&target_str);
            let summary = dir.join("summary.json").to_str().unwrap().to_string();
            if *verb == "analyze" {
                full.push("--summary");
                full.push(&summary);
            }
            let out = run_cli(&full);
            if !out.status.success() {
                mismatched.push(format!("{verb} failed: {}", String::from_utf8_lossy(&out.stderr).trim()));
            }
            runs.push((read_tree(&dir), out.stdout));
        }
        if runs[0] != runs[1] || runs[0].0.is_empty() {
            mismatched.push(verb.to_string());
        }
    }
    if mismatched.is_empty() {
        outcome(true, format!("{} verbs byte-identical across two runs", verbs.len()))
    } else {
        outcome(false, format!("differing or failing: {}", mismatched.join(", ")))
    }
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {tag} {name}: {}", o.detail);
        failed += usize::from(!o.pass);
    };
    report(1, "reconstruction equivalence", criterion_1());
    report(2, "orthogonality and spectrum", criterion_2());
    report(3, "band locality", criterion_3());
    report(4, "frequency profile contrast", criterion_4());
    let (five, five_info) = criterion_5();
    report(5, "homophily identity", five);
    println!("             info: {five_info}");
    let (six, six_info) = criterion_6();
    report(6, "theorem oracles", six);
    println!("             info: {six_info}");
    report(7, "alignment identity", criterion_7());
    report(8, "lanczos accuracy", criterion_8());
    report(9, "gradient check", criterion_9());
    report(10, "desk-scale effectiveness", criterion_10());
    report(11, "robustness under DICE", criterion_11());
    report(12, "cli determinism", criterion_12());
    println!("acceptance: {} of 12 criteria failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
