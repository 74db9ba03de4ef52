//! Undirected weighted graphs with node features, the matrices built from
//! them, homophily, and the stochastic block model generator.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed;
use crate::sparse::CsrMatrix;

/// Undirected edge stored with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

impl Edge {
    pub fn pair(&self) -> (usize, usize) {
        (self.u, self.v)
    }
}

/// Orders an unordered pair as `(min, max)`.
pub fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    features: DMatrix<f64>,
    labels: Option<Vec<usize>>,
}

impl Graph {
    /// Validates and canonicalizes an edge list. Pairs are symmetrized and
    /// deduplicated (the first occurrence of a pair keeps its weight).
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
        features: DMatrix<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if features.nrows() != n {
            return Err(Error::pre(format!(
                "feature matrix has {} rows for {n} nodes",
                features.nrows()
            )));
        }
        if let Some(y) = &labels {
            if y.len() != n {
                return Err(Error::pre(format!("{} labels for {n} nodes", y.len())));
            }
        }
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (i, j, w) in edges {
            for id in [i, j] {
                if id >= n {
                    return Err(Error::Range {
                        id,
                        n,
                        context: format!("edge ({i}, {j})"),
                    });
                }
            }
            if i == j {
                return Err(Error::pre(format!("self-loop on node {i}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::pre(format!(
                    "edge ({i}, {j}) has non-positive weight {w}"
                )));
            }
            let (u, v) = ordered(i, j);
            if seen.insert((u, v)) {
                out.push(Edge { u, v, weight: w });
            }
        }
        out.sort_by_key(Edge::pair);
        Ok(Self {
            n,
            edges: out,
            features,
            labels,
        })
    }

    /// Unit-weight graph without features, mostly for tests and examples.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            n,
            pairs.iter().map(|&(i, j)| (i, j, 1.0)),
            DMatrix::zeros(n, 0),
            None,
        )
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::pre(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_features(mut self, features: DMatrix<f64>) -> Result<Self> {
        if features.nrows() != self.n {
            return Err(Error::pre("feature rows do not match node count"));
        }
        self.features = features;
        Ok(self)
    }

    /// Same nodes, features and labels over a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        Self::new(self.n, edges, self.features.clone(), self.labels.clone())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|y| y.iter().max())
            .map_or(0, |c| c + 1)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let key = ordered(i, j);
        self.edges.binary_search_by_key(&key, Edge::pair).is_ok()
    }

    pub fn edge_weight(&self, i: usize, j: usize) -> Option<f64> {
        let key = ordered(i, j);
        self.edges
            .binary_search_by_key(&key, Edge::pair)
            .ok()
            .map(|k| self.edges[k].weight)
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    /// Weighted degrees.
    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for e in &self.edges {
            d[e.u] += e.weight;
            d[e.v] += e.weight;
        }
        d
    }

    pub fn adjacency(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(2 * self.m());
        for e in &self.edges {
            t.push((e.u, e.v, e.weight));
            t.push((e.v, e.u, e.weight));
        }
        CsrMatrix::from_triplets(self.n, t)
    }

    /// `D^{-1/2}` with the zero-degree convention `0`.
    pub fn inv_sqrt_degrees(&self) -> Vec<f64> {
        self.degrees()
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect()
    }

    pub fn normalized_adjacency(&self) -> SymMatrix {
        let s = self.inv_sqrt_degrees();
        let mut t = Vec::with_capacity(2 * self.m());
        for e in &self.edges {
            let v = e.weight * s[e.u] * s[e.v];
            t.push((e.u, e.v, v));
            t.push((e.v, e.u, v));
        }
        SymMatrix(CsrMatrix::from_triplets(self.n, t))
    }

    /// `L_sym = I − A_sym` on non-isolated nodes; isolated nodes get a zero
    /// diagonal.
    pub fn normalized_laplacian(&self) -> SymMatrix {
        let d = self.degrees();
        let s = self.inv_sqrt_degrees();
        let mut t = Vec::with_capacity(2 * self.m() + self.n);
        for (i, &di) in d.iter().enumerate() {
            if di > 0.0 {
                t.push((i, i, 1.0));
            }
        }
        for e in &self.edges {
            let v = -e.weight * s[e.u] * s[e.v];
            t.push((e.u, e.v, v));
            t.push((e.v, e.u, v));
        }
        SymMatrix(CsrMatrix::from_triplets(self.n, t))
    }

    /// `I − A_sym` everywhere, including isolated nodes. Its eigenpairs map
    /// onto those of `A_sym` through `ω = 1 − λ` without exception.
    pub fn shifted_adjacency(&self) -> SymMatrix {
        let s = self.inv_sqrt_degrees();
        let mut t: Vec<_> = (0..self.n).map(|i| (i, i, 1.0)).collect();
        for e in &self.edges {
            let v = -e.weight * s[e.u] * s[e.v];
            t.push((e.u, e.v, v));
            t.push((e.v, e.u, v));
        }
        SymMatrix(CsrMatrix::from_triplets(self.n, t))
    }

    /// `L = D − A`.
    pub fn unnormalized_laplacian(&self) -> SymMatrix {
        let d = self.degrees();
        let mut t: Vec<_> = d.iter().enumerate().map(|(i, &di)| (i, i, di)).collect();
        for e in &self.edges {
            t.push((e.u, e.v, -e.weight));
            t.push((e.v, e.u, -e.weight));
        }
        SymMatrix(CsrMatrix::from_triplets(self.n, t))
    }

    /// Fraction of edges joining equally labelled endpoints. Edges are
    /// counted, not weighted.
    pub fn homophily(&self) -> Result<f64> {
        let y = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::pre("homophily needs node labels"))?;
        homophily_of(self, y)
    }
}

/// Homophily of `g` under an arbitrary labelling `y`.
pub fn homophily_of(g: &Graph, y: &[usize]) -> Result<f64> {
    if y.len() != g.n() {
        return Err(Error::pre(format!("{} labels for {} nodes", y.len(), g.n())));
    }
    if g.m() == 0 {
        return Err(Error::pre("homophily is undefined on a graph without edges"));
    }
    let intra = g.edges().iter().filter(|e| y[e.u] == y[e.v]).count();
    Ok(intra as f64 / g.m() as f64)
}

/// Symmetric sparse matrix. `get` and `dense` expose the same entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(pub CsrMatrix);

impl SymMatrix {
    pub fn n(&self) -> usize {
        self.0.n()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn dense(&self) -> DMatrix<f64> {
        self.0.to_dense()
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.0
    }

    /// `Σ_ij x_i M_ij x_j`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        (0..self.n())
            .map(|i| x[i] * self.0.row(i).map(|(j, v)| v * x[j]).sum::<f64>())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbmParams {
    pub n: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

/// Balanced stochastic block model. Node `i` belongs to block
/// `i / (n / classes)`. Features are the one-hot block indicator (in the first
/// `classes` columns) plus unit-variance Gaussian noise.
pub fn sbm_generate(p: &SbmParams) -> Result<Graph> {
    if p.classes == 0 || !p.n.is_multiple_of(p.classes) {
        return Err(Error::pre(format!(
            "{} nodes cannot be split into {} equal blocks",
            p.n, p.classes
        )));
    }
    for (name, v) in [("p_in", p.p_in), ("p_out", p.p_out)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::pre(format!("{name} = {v} is not a probability")));
        }
    }
    if p.feature_dim < p.classes {
        return Err(Error::pre(format!(
            "feature dimension {} is smaller than the class count {}",
            p.feature_dim, p.classes
        )));
    }
    let block = p.n / p.classes;
    let labels: Vec<usize> = (0..p.n).map(|i| i / block).collect();

    let mut rng = seed::rng_for(p.seed, &[0x5b3]);
    let mut edges = Vec::new();
    for i in 0..p.n {
        for j in i + 1..p.n {
            let prob = if labels[i] == labels[j] { p.p_in } else { p.p_out };
            if rng.random::<f64>() < prob {
                edges.push((i, j, 1.0));
            }
        }
    }

    let mut frng = seed::rng_for(p.seed, &[0xfea]);
    let mut x = DMatrix::zeros(p.n, p.feature_dim);
    for i in 0..p.n {
        for c in 0..p.feature_dim {
            let noise: f64 = StandardNormal.sample(&mut frng);
            x[(i, c)] = noise;
        }
        x[(i, labels[i])] += 1.0;
    }
    Graph::new(p.n, edges, x, Some(labels))
}
