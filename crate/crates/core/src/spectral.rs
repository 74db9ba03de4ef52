//! Eigen-decompositions of graph matrices, spectral coefficients of label
//! signals, and the per-band distance between two normalized Laplacians.

mod lanczos;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Graph, SymMatrix};

pub use lanczos::{lanczos, LanczosEnd};

/// Which matrix an [`EigenSystem`] decomposes. Laplacian kinds are stored in
/// ascending eigenvalue order, the adjacency kind in descending order, so
/// index `i` means the same frequency in both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpectrumKind {
    AdjSym,
    LapSym,
    LapUnnorm,
}

impl SpectrumKind {
    fn ascending(self) -> bool {
        !matches!(self, SpectrumKind::AdjSym)
    }
}

/// Decomposition with column `i` of `vectors` paired with `values[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub kind: SpectrumKind,
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub complete: bool,
}

/// Size above which the augmentation pipeline switches to Lanczos.
pub const DENSE_LIMIT: usize = 3000;

impl EigenSystem {
    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn vector(&self, i: usize) -> DVector<f64> {
        self.vectors.column(i).into_owned()
    }

    /// `‖VᵀV − I‖_max`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.vectors.transpose() * &self.vectors;
        (g - DMatrix::<f64>::identity(self.len(), self.len()))
            .abs()
            .max()
    }

    /// `V Λ Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (c, &v) in self.values.iter().enumerate() {
            scaled.column_mut(c).scale_mut(v);
        }
        scaled * self.vectors.transpose()
    }

    /// Re-labels a decomposition of `I − A_sym` (ascending `λ`) as the
    /// adjacency decomposition with `ω = 1 − λ` (descending).
    pub fn into_adjacency(self) -> Result<Self> {
        if self.kind != SpectrumKind::LapSym {
            return Err(Error::pre(format!(
                "adjacency pairs derive from a LAP_SYM system, got {:?}",
                self.kind
            )));
        }
        Ok(Self {
            kind: SpectrumKind::AdjSym,
            values: self.values.iter().map(|l| 1.0 - l).collect(),
            ..self
        })
    }

    /// Laplacian-frequency of pair `i`: `λ_i` for Laplacian kinds, `1 − ω_i`
    /// for the adjacency kind.
    pub fn frequency(&self, i: usize) -> f64 {
        match self.kind {
            SpectrumKind::AdjSym => 1.0 - self.values[i],
            _ => self.values[i],
        }
    }
}

/// Flips each column so its largest-magnitude entry is positive; among
/// entries tied within `1e-12` the lowest index decides.
pub(crate) fn fix_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let max = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if let Some(pivot) = col.iter().find(|v| v.abs() >= max - 1e-12).copied() {
            if pivot < 0.0 {
                col.neg_mut();
            }
        }
    }
}

fn sorted_system(
    kind: SpectrumKind,
    values: &[f64],
    vectors: &DMatrix<f64>,
    keep: usize,
    complete: bool,
) -> EigenSystem {
    let mut order: Vec<usize> = (0..values.len()).collect();
    if kind.ascending() {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    } else {
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    }
    order.truncate(keep);
    let mut vecs = DMatrix::zeros(vectors.nrows(), order.len());
    for (c, &src) in order.iter().enumerate() {
        vecs.set_column(c, &vectors.column(src));
    }
    fix_signs(&mut vecs);
    EigenSystem {
        kind,
        values: order.iter().map(|&i| values[i]).collect(),
        vectors: vecs,
        complete,
    }
}

/// Full decomposition of a dense symmetric matrix.
pub fn eig_dense(m: &DMatrix<f64>, kind: SpectrumKind) -> Result<EigenSystem> {
    if !m.is_square() {
        return Err(Error::pre("eigen-decomposition needs a square matrix"));
    }
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), 1e-15, 100_000)
        .ok_or_else(|| Error::num(format!("symmetric QR did not converge (n = {n})")))?;
    Ok(sorted_system(
        kind,
        eig.eigenvalues.as_slice(),
        &eig.eigenvectors,
        n,
        true,
    ))
}

pub fn eig_full(m: &SymMatrix, kind: SpectrumKind) -> Result<EigenSystem> {
    eig_dense(&m.dense(), kind)
}

/// The `k` low-frequency pairs of `m` by Lanczos with full
/// reorthogonalization: smallest eigenvalues for Laplacian kinds, largest
/// for the adjacency kind.
pub fn eig_partial(m: &SymMatrix, kind: SpectrumKind, k: usize, seed: u64) -> Result<EigenSystem> {
    let n = m.n();
    if k == 0 || k >= n {
        return Err(Error::pre(format!(
            "partial decomposition needs 1 <= K < n, got K = {k}, n = {n}"
        )));
    }
    let end = if kind.ascending() {
        LanczosEnd::Smallest
    } else {
        LanczosEnd::Largest
    };
    let (values, vectors) = lanczos(m.csr(), k, end, seed)?;
    Ok(sorted_system(kind, &values, &vectors, k, false))
}

/// Adjacency eigenpairs of `g` obtained from one decomposition of
/// `I − A_sym`. `k = None` asks for all pairs; graphs above [`DENSE_LIMIT`]
/// with `k = Some(_)` go through Lanczos.
pub fn adjacency_system(g: &Graph, k: Option<usize>, seed: u64) -> Result<EigenSystem> {
    let shifted = g.shifted_adjacency();
    let sys = match k {
        Some(k) if g.n() > DENSE_LIMIT && k < g.n() => {
            eig_partial(&shifted, SpectrumKind::LapSym, k, seed)?
        }
        _ => eig_full(&shifted, SpectrumKind::LapSym)?,
    };
    sys.into_adjacency()
}

/// Projections `c_i = u_iᵀ y` of a signal on unnormalized-Laplacian
/// eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoefficients {
    pub c: Vec<f64>,
}

impl SpectralCoefficients {
    pub fn energy(&self) -> f64 {
        self.c.iter().map(|c| c * c).sum()
    }

    /// `Σ_{i ≥ from} c_i²`.
    pub fn tail_energy(&self, from: usize) -> f64 {
        self.c[from..].iter().map(|c| c * c).sum()
    }

    /// `Σ_{i < to} c_i²`.
    pub fn head_energy(&self, to: usize) -> f64 {
        self.c[..to].iter().map(|c| c * c).sum()
    }
}

pub fn spectral_coefficients(es: &EigenSystem, y: &[f64]) -> Result<SpectralCoefficients> {
    if es.kind != SpectrumKind::LapUnnorm {
        return Err(Error::pre(format!(
            "spectral coefficients use the unnormalized Laplacian, got {:?}",
            es.kind
        )));
    }
    if !es.complete {
        return Err(Error::pre("spectral coefficients need a complete eigensystem"));
    }
    if y.len() != es.n() {
        return Err(Error::pre(format!(
            "signal has {} entries for {} nodes",
            y.len(),
            es.n()
        )));
    }
    let y = DVector::from_column_slice(y);
    let c = es.vectors.transpose() * y;
    Ok(SpectralCoefficients {
        c: c.as_slice().to_vec(),
    })
}

/// Contiguous index slices `[⌊(k−1)n/K⌋, ⌊kn/K⌋)` for `k = 1..=K`.
pub fn group_bounds(n: usize, groups: usize) -> Vec<(usize, usize)> {
    (1..=groups)
        .map(|k| ((k - 1) * n / groups, k * n / groups))
        .collect()
}

/// Per-group distances between grouped decomposed components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandReport {
    pub k_groups: usize,
    /// `‖L^k − L̃^k‖_F`.
    pub f: Vec<f64>,
    /// Distance after dividing each grouped component by its largest
    /// eigenvalue.
    pub f_norm: Vec<f64>,
    /// Normalizer of the original graph's group.
    pub norms: Vec<f64>,
}

const NORM_FLOOR: f64 = 1e-12;

impl BandReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("group,F,F_norm,norm\n");
        for k in 0..self.k_groups {
            s.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e}\n",
                k + 1,
                self.f[k],
                self.f_norm[k],
                self.norms[k]
            ));
        }
        s
    }

    /// Population coefficient of variation of `f_norm`.
    pub fn f_norm_cov(&self) -> f64 {
        coefficient_of_variation(&self.f_norm)
    }
}

pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if mean.abs() < f64::MIN_POSITIVE {
        return 0.0;
    }
    var.sqrt() / mean
}

fn grouped_component(es: &EigenSystem, lo: usize, hi: usize, scale: f64) -> DMatrix<f64> {
    let block = es.vectors.columns(lo, hi - lo);
    let mut scaled = block.clone_owned();
    for c in 0..hi - lo {
        scaled.column_mut(c).scale_mut(es.values[lo + c] * scale);
    }
    scaled * block.transpose()
}

pub fn band_distance(orig: &EigenSystem, aug: &EigenSystem, k_groups: usize) -> Result<BandReport> {
    for es in [orig, aug] {
        if es.kind != SpectrumKind::LapSym || !es.complete {
            return Err(Error::pre("band distance compares complete LAP_SYM systems"));
        }
    }
    if orig.n() != aug.n() {
        return Err(Error::pre(format!(
            "node counts differ: {} vs {}",
            orig.n(),
            aug.n()
        )));
    }
    if k_groups == 0 || k_groups > orig.n() {
        return Err(Error::pre(format!("cannot form {k_groups} groups")));
    }
    let normalizer = |es: &EigenSystem, lo: usize, hi: usize| {
        let max = es.values[lo..hi].iter().copied().fold(f64::MIN, f64::max);
        if max < NORM_FLOOR {
            1.0
        } else {
            1.0 / max
        }
    };
    let mut report = BandReport {
        k_groups,
        f: Vec::with_capacity(k_groups),
        f_norm: Vec::with_capacity(k_groups),
        norms: Vec::with_capacity(k_groups),
    };
    for (lo, hi) in group_bounds(orig.n(), k_groups) {
        let raw = grouped_component(orig, lo, hi, 1.0) - grouped_component(aug, lo, hi, 1.0);
        report.f.push(raw.norm());
        let (so, sa) = (normalizer(orig, lo, hi), normalizer(aug, lo, hi));
        let scaled = grouped_component(orig, lo, hi, so) - grouped_component(aug, lo, hi, sa);
        report.f_norm.push(scaled.norm());
        report.norms.push(1.0 / so);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{sbm_generate, SbmParams};
    use crate::seed;
    use rand::Rng;

    fn random_symmetric(n: usize, s: u64) -> DMatrix<f64> {
        let mut rng = seed::rng(s);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    fn cycle_with_chord(n: usize) -> Graph {
        let mut pairs: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        pairs.push((0, n / 2));
        Graph::from_pairs(n, &pairs).unwrap()
    }

    #[test]
    fn single_edge_normalized_laplacian() {
        let g = Graph::from_pairs(2, &[(0, 1)]).unwrap();
        let es = eig_full(&g.normalized_laplacian(), SpectrumKind::LapSym).unwrap();
        assert!(es.values[0].abs() < 1e-14);
        assert!((es.values[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn connected_laplacian_kernel_is_constant() {
        let g = cycle_with_chord(9);
        let es = eig_full(&g.unnormalized_laplacian(), SpectrumKind::LapUnnorm).unwrap();
        assert!(es.values[0].abs() < 1e-12);
        let c = 1.0 / 3.0;
        for v in es.vector(0).iter() {
            assert!((v - c).abs() < 1e-10);
        }
    }

    #[test]
    fn random_matrix_reconstructs() {
        let m = random_symmetric(30, 5);
        let es = eig_dense(&m, SpectrumKind::LapSym).unwrap();
        assert!((es.reconstruct() - &m).abs().max() <= 1e-8 * m.abs().max());
        assert!(es.orthonormality_error() <= 1e-8);
        assert!(es.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn adjacency_kind_sorts_descending() {
        let g = cycle_with_chord(8);
        let es = eig_full(&g.normalized_adjacency(), SpectrumKind::AdjSym).unwrap();
        assert!(es.values.windows(2).all(|w| w[0] >= w[1]));
        assert!((es.values[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sign_convention() {
        let m = random_symmetric(12, 9);
        let es = eig_dense(&m, SpectrumKind::LapSym).unwrap();
        for col in es.vectors.column_iter() {
            let max = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let first = col.iter().find(|v| v.abs() >= max - 1e-12).unwrap();
            assert!(*first > 0.0);
        }
        let mut tie = DMatrix::from_column_slice(2, 1, &[-0.5f64.sqrt(), 0.5f64.sqrt()]);
        fix_signs(&mut tie);
        assert!(tie[(0, 0)] > 0.0);
    }

    #[test]
    fn laplacian_and_adjacency_spectra_mirror() {
        let g = cycle_with_chord(11);
        let l = eig_full(&g.normalized_laplacian(), SpectrumKind::LapSym).unwrap();
        let a = eig_full(&g.normalized_adjacency(), SpectrumKind::AdjSym).unwrap();
        for (lam, om) in l.values.iter().zip(&a.values) {
            assert!((lam - (1.0 - om)).abs() <= 1e-8);
        }
        assert!(l.values.iter().all(|&v| (-1e-12..=2.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn adjacency_system_handles_isolated_nodes() {
        let g = Graph::from_pairs(5, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let es = adjacency_system(&g, None, 0).unwrap();
        let err = (es.reconstruct() - g.normalized_adjacency().dense()).abs().max();
        assert!(err < 1e-12);
    }

    #[test]
    fn partial_matches_dense_on_sbm() {
        let g = sbm_generate(&SbmParams {
            n: 120,
            classes: 2,
            p_in: 0.15,
            p_out: 0.03,
            feature_dim: 2,
            seed: 2,
        })
        .unwrap();
        let m = g.normalized_laplacian();
        let full = eig_full(&m, SpectrumKind::LapSym).unwrap();
        let part = eig_partial(&m, SpectrumKind::LapSym, 6, 11).unwrap();
        assert!(!part.complete);
        for i in 0..6 {
            assert!((part.values[i] - full.values[i]).abs() <= 1e-6);
        }
        assert!(part.orthonormality_error() <= 1e-8);
    }

    #[test]
    fn partial_on_diagonal_and_near_full_requests() {
        let diag: Vec<f64> = vec![5.0, 1.0, 4.0, 2.0, 3.0, 7.0];
        let m = SymMatrix(crate::sparse::CsrMatrix::from_triplets(
            6,
            diag.iter().enumerate().map(|(i, &v)| (i, i, v)).collect(),
        ));
        let es = eig_partial(&m, SpectrumKind::LapUnnorm, 3, 0).unwrap();
        for (got, want) in es.values.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-10);
        }
        let top = eig_partial(&m, SpectrumKind::AdjSym, 2, 0).unwrap();
        assert!((top.values[0] - 7.0).abs() < 1e-10 && (top.values[1] - 5.0).abs() < 1e-10);

        let g = cycle_with_chord(7);
        let lm = g.normalized_laplacian();
        let full = eig_full(&lm, SpectrumKind::LapSym).unwrap();
        let part = eig_partial(&lm, SpectrumKind::LapSym, 6, 3).unwrap();
        for i in 0..6 {
            assert!((part.values[i] - full.values[i]).abs() <= 1e-6);
        }
    }

    #[test]
    fn partial_rejects_bad_k() {
        let g = cycle_with_chord(5);
        let m = g.normalized_laplacian();
        assert!(eig_partial(&m, SpectrumKind::LapSym, 5, 0).is_err());
        assert!(eig_partial(&m, SpectrumKind::LapSym, 0, 0).is_err());
    }

    #[test]
    fn coefficients_of_basic_signals() {
        let g = cycle_with_chord(10);
        let es = eig_full(&g.unnormalized_laplacian(), SpectrumKind::LapUnnorm).unwrap();
        let ones = spectral_coefficients(&es, &[1.0; 10]).unwrap();
        assert!((ones.c[0] - 10f64.sqrt()).abs() < 1e-8);
        assert!(ones.c[1..].iter().all(|c| c.abs() < 1e-8));

        let k = 4;
        let uk: Vec<f64> = es.vector(k).iter().copied().collect();
        let c = spectral_coefficients(&es, &uk).unwrap();
        for (i, ci) in c.c.iter().enumerate() {
            let want = if i == k { 1.0 } else { 0.0 };
            assert!((ci - want).abs() < 1e-8);
        }
    }

    #[test]
    fn coefficients_need_complete_unnormalized_system() {
        let g = cycle_with_chord(6);
        let lsym = eig_full(&g.normalized_laplacian(), SpectrumKind::LapSym).unwrap();
        assert!(spectral_coefficients(&lsym, &[0.0; 6]).is_err());
        let part = eig_partial(&g.unnormalized_laplacian(), SpectrumKind::LapUnnorm, 2, 0).unwrap();
        assert!(spectral_coefficients(&part, &[0.0; 6]).is_err());
    }

    #[test]
    fn disjoint_cliques_indicator_lives_in_kernel() {
        let mut pairs = Vec::new();
        for base in [0, 4] {
            for i in 0..4 {
                for j in i + 1..4 {
                    pairs.push((base + i, base + j));
                }
            }
        }
        let g = Graph::from_pairs(8, &pairs).unwrap();
        let es = eig_full(&g.unnormalized_laplacian(), SpectrumKind::LapUnnorm).unwrap();
        let y = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let c = spectral_coefficients(&es, &y).unwrap();
        let high: f64 = c
            .c
            .iter()
            .zip(&es.values)
            .filter(|(_, &l)| l > 1e-12)
            .map(|(c, _)| c * c)
            .sum();
        assert!(high <= 1e-10);
    }

    #[test]
    fn group_bounds_use_floor() {
        assert_eq!(group_bounds(25, 10)[0], (0, 2));
        assert_eq!(group_bounds(25, 10)[9], (22, 25));
        let b = group_bounds(37, 10);
        assert_eq!(b.first().unwrap().0, 0);
        assert_eq!(b.last().unwrap().1, 37);
        assert!(b.windows(2).all(|w| w[0].1 == w[1].0));
    }

    #[test]
    fn band_distance_of_identical_graphs_is_zero() {
        let g = cycle_with_chord(20);
        let es = eig_full(&g.normalized_laplacian(), SpectrumKind::LapSym).unwrap();
        let r = band_distance(&es, &es.clone(), 10).unwrap();
        assert!(r.f.iter().all(|&v| v == 0.0));
        assert!(r.f_norm.iter().all(|&v| v == 0.0));
        assert_eq!(r.to_csv().lines().count(), 11);
        assert!(r.to_csv().starts_with("group,F,F_norm,norm\n"));
    }

    #[test]
    fn band_distance_rejects_mismatch() {
        let a = eig_full(&cycle_with_chord(20).normalized_laplacian(), SpectrumKind::LapSym).unwrap();
        let b = eig_full(&cycle_with_chord(21).normalized_laplacian(), SpectrumKind::LapSym).unwrap();
        assert!(band_distance(&a, &b, 10).is_err());
    }
}
