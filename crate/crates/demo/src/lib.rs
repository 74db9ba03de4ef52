//! Browser bindings: small SBM graphs generated on the fly, perturbed and
//! measured in the spectral domain. Every export returns a JSON string.

use serde::Serialize;
use specaug::augment::{
    band_energy_fraction, random_insertion, reconstruct_full, AugmentConfig, Augmenter, BandMode,
};
use specaug::graph::{sbm_generate, SbmParams};
use specaug::spectral::{
    adjacency_system, band_distance, eig_full, spectral_coefficients, EigenSystem, SpectrumKind,
};
use specaug::{Graph, Result};
use wasm_bindgen::prelude::*;

const GROUPS: usize = 10;
const MAX_NODES: usize = 400;

fn graph(n: usize, p_in: f64, p_out: f64, seed: u64) -> Result<Graph> {
    if n > MAX_NODES {
        return Err(specaug::Error::Config(format!(
            "the demo is limited to {MAX_NODES} nodes"
        )));
    }
    sbm_generate(&SbmParams {
        n,
        classes: 2,
        p_in,
        p_out,
        feature_dim: 4,
        seed,
    })
}

fn lap_sym(g: &Graph) -> Result<EigenSystem> {
    eig_full(&g.normalized_laplacian(), SpectrumKind::LapSym)
}

fn augment_config(b0: usize, band_size: usize, pivot: f64, heterophilic: bool, seed: u64) -> AugmentConfig {
    AugmentConfig {
        band_mode: if heterophilic {
            BandMode::Heterophilic
        } else {
            BandMode::Homophilic
        },
        b0,
        band_size,
        pivot,
        seed,
        ..AugmentConfig::default()
    }
}

#[derive(Debug, Serialize)]
pub struct BandProfile {
    pub random_f_norm: Vec<f64>,
    pub spectral_f_norm: Vec<f64>,
    pub random_cov: f64,
    pub spectral_cov: f64,
    pub band: Vec<usize>,
    pub band_energy: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn band_profile_of(
    n: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
    insert_ratio: f64,
    b0: usize,
    band_size: usize,
    pivot: f64,
) -> Result<BandProfile> {
    let g = graph(n, p_in, p_out, seed)?;
    let orig = lap_sym(&g)?;
    let random = band_distance(&orig, &lap_sym(&random_insertion(&g, insert_ratio, seed)?)?, GROUPS)?;
    let es = adjacency_system(&g, None, seed)?;
    let augmenter = Augmenter::with_system(&g, es, augment_config(b0, band_size, pivot, false, seed))?;
    let (view, plan) = augmenter.view_with_plan(seed)?;
    let delta = reconstruct_full(augmenter.system(), &plan)? - g.normalized_adjacency().dense();
    let band_energy = band_energy_fraction(&delta, augmenter.system(), &plan.band)?;
    let spectral = band_distance(&orig, &lap_sym(&view.topology)?, GROUPS)?;
    Ok(BandProfile {
        random_cov: random.f_norm_cov(),
        spectral_cov: spectral.f_norm_cov(),
        random_f_norm: random.f_norm,
        spectral_f_norm: spectral.f_norm,
        band: plan.band,
        band_energy,
    })
}

#[derive(Debug, Serialize)]
pub struct Preview {
    pub labels: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    /// `(i, j, weight)` of the augmented view.
    pub view: Vec<(usize, usize, f64)>,
    pub dropped: usize,
    pub added: usize,
    pub homophily: f64,
    pub view_homophily: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn augment_preview_of(
    n: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
    b0: usize,
    band_size: usize,
    pivot: f64,
    r1: f64,
    r2: f64,
    heterophilic: bool,
) -> Result<Preview> {
    let g = graph(n, p_in, p_out, seed)?;
    let cfg = AugmentConfig {
        r1,
        r2,
        ..augment_config(b0, band_size, pivot, heterophilic, seed)
    };
    let view = Augmenter::new(&g, cfg)?.view(seed)?;
    let t = &view.topology;
    let dropped = g.edges().iter().filter(|e| !t.has_edge(e.u, e.v)).count();
    let added = t.edges().iter().filter(|e| !g.has_edge(e.u, e.v)).count();
    Ok(Preview {
        labels: g.labels().map(<[usize]>::to_vec).unwrap_or_default(),
        edges: g.edges().iter().map(|e| e.pair()).collect(),
        view: t.edges().iter().map(|e| (e.u, e.v, e.weight)).collect(),
        dropped,
        added,
        homophily: g.homophily()?,
        view_homophily: t.homophily()?,
    })
}

#[derive(Debug, Serialize)]
pub struct LabelSpectrum {
    pub homophily: f64,
    pub eigenvalues: Vec<f64>,
    /// Share of the centred label signal's energy on each eigenvector.
    pub energy: Vec<f64>,
    /// Energy per contiguous tenth of the spectrum.
    pub grouped: Vec<f64>,
}

pub fn label_spectrum_of(n: usize, p_in: f64, p_out: f64, seed: u64) -> Result<LabelSpectrum> {
    let g = graph(n, p_in, p_out, seed)?;
    let labels = g.labels().unwrap_or_default();
    let mean = labels.iter().sum::<usize>() as f64 / n as f64;
    let y: Vec<f64> = labels.iter().map(|&l| l as f64 - mean).collect();
    let es = eig_full(&g.unnormalized_laplacian(), SpectrumKind::LapUnnorm)?;
    let coeffs = spectral_coefficients(&es, &y)?;
    let total = coeffs.energy().max(f64::MIN_POSITIVE);
    let energy: Vec<f64> = coeffs.c.iter().map(|c| c * c / total).collect();
    let grouped = specaug::spectral::group_bounds(n, GROUPS)
        .into_iter()
        .map(|(lo, hi)| energy[lo..hi].iter().sum())
        .collect();
    Ok(LabelSpectrum {
        homophily: g.homophily()?,
        eigenvalues: es.values.to_vec(),
        energy,
        grouped,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// F_norm per frequency group for random edge insertion and for a spectral
/// perturbation of the same graph.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn band_profile(
    n: usize,
    p_in: f64,
    p_out: f64,
    seed: u32,
    insert_ratio: f64,
    b0: usize,
    band_size: usize,
    pivot: f64,
) -> std::result::Result<String, JsError> {
    to_js(band_profile_of(n, p_in, p_out, seed as u64, insert_ratio, b0, band_size, pivot))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn augment_preview(
    n: usize,
    p_in: f64,
    p_out: f64,
    seed: u32,
    b0: usize,
    band_size: usize,
    pivot: f64,
    r1: f64,
    r2: f64,
    heterophilic: bool,
) -> std::result::Result<String, JsError> {
    to_js(augment_preview_of(
        n, p_in, p_out, seed as u64, b0, band_size, pivot, r1, r2, heterophilic,
    ))
}

#[wasm_bindgen]
pub fn label_spectrum(n: usize, p_in: f64, p_out: f64, seed: u32) -> std::result::Result<String, JsError> {
    to_js(label_spectrum_of(n, p_in, p_out, seed as u64))
}
