//! GCN encoder, embedding standardization, the CCA-SSG objective with its
//! analytic gradients, and the contrastive training loop.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, AugmentedView, Augmenter, ViewSource};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::seed;
use crate::sparse::CsrMatrix;

const PARAMS_MAGIC: &[u8; 8] = b"SPAGCN01";
const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w1: DMatrix<f64>,
    /// Present for the two-layer encoder.
    pub w2: Option<DMatrix<f64>>,
}

fn uniform_init(rows: usize, cols: usize, rng: &mut seed::Rng) -> DMatrix<f64> {
    let bound = 1.0 / (rows.max(1) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

impl EncoderParams {
    /// Uniform on `(−1/√fan_in, 1/√fan_in)`.
    pub fn init(input_dim: usize, hidden: usize, layers: usize, seed: u64) -> Result<Self> {
        if !(1..=2).contains(&layers) {
            return Err(Error::Config(format!("encoder depth {layers} is not 1 or 2")));
        }
        if hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        let mut rng = seed::rng_for(seed, &[0x1417]);
        let w1 = uniform_init(input_dim, hidden, &mut rng);
        let w2 = (layers == 2).then(|| uniform_init(hidden, hidden, &mut rng));
        Ok(Self { w1, w2 })
    }

    pub fn layers(&self) -> usize {
        1 + usize::from(self.w2.is_some())
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.w2.iter().flatten()).all(|v| v.is_finite())
    }

    /// Little-endian layout: 8-byte magic `SPAGCN01`, `u32` layer count,
    /// `u64` input dim, `u64` hidden size, then `W1` and (if present) `W2`
    /// as row-major `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PARAMS_MAGIC);
        out.extend_from_slice(&(self.layers() as u32).to_le_bytes());
        out.extend_from_slice(&(self.input_dim() as u64).to_le_bytes());
        out.extend_from_slice(&(self.hidden() as u64).to_le_bytes());
        for w in std::iter::once(&self.w1).chain(self.w2.as_ref()) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out.extend_from_slice(&w[(r, c)].to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Parse {
            path: "params.bin".into(),
            line: 0,
            msg: msg.into(),
        };
        let mut magic = [0u8; 8];
        bytes.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != PARAMS_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        bytes.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
        let layers = u32::from_le_bytes(b4) as usize;
        bytes.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        let d = u64::from_le_bytes(b8) as usize;
        bytes.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        let h = u64::from_le_bytes(b8) as usize;
        if !(1..=2).contains(&layers) {
            return Err(bad("layer count must be 1 or 2"));
        }
        let mut read = |rows: usize, cols: usize| -> Result<DMatrix<f64>> {
            let mut m = DMatrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    bytes.read_exact(&mut b8).map_err(|_| bad("truncated weights"))?;
                    m[(r, c)] = f64::from_le_bytes(b8);
                }
            }
            Ok(m)
        };
        let w1 = read(d, h)?;
        let w2 = if layers == 2 { Some(read(h, h)?) } else { None };
        if !bytes.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { w1, w2 })
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lr: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            lr: 1e-3,
            epochs: 200,
            hidden: 128,
            layers: 2,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.hidden == 0 || !(1..=2).contains(&self.layers) {
            return Err(Error::Config("hidden must be positive and layers 1 or 2".into()));
        }
        Ok(())
    }
}

/// `D̂^{-1/2}(W + I)D̂^{-1/2}` for the weighted topology `W`.
pub fn propagation(topology: &Graph) -> CsrMatrix {
    let n = topology.n();
    let deg: Vec<f64> = topology.degrees().iter().map(|d| d + 1.0).collect();
    let s: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut t = Vec::with_capacity(2 * topology.m() + n);
    for e in topology.edges() {
        let v = e.weight * s[e.u] * s[e.v];
        t.push((e.u, e.v, v));
        t.push((e.v, e.u, v));
    }
    for i in 0..n {
        t.push((i, i, s[i] * s[i]));
    }
    CsrMatrix::from_triplets(n, t)
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
struct Forward {
    p: CsrMatrix,
    px: DMatrix<f64>,
    pre: DMatrix<f64>,
    /// Inverted-dropout multipliers (`0` or `1/(1−p)`), if dropout is on.
    mask: Option<DMatrix<f64>>,
    hidden: DMatrix<f64>,
    out: DMatrix<f64>,
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

fn forward(
    topology: &Graph,
    x: &DMatrix<f64>,
    params: &EncoderParams,
    dropout: f64,
    seed: u64,
) -> Result<Forward> {
    if x.nrows() != topology.n() {
        return Err(Error::pre(format!(
            "{} feature rows for {} nodes",
            x.nrows(),
            topology.n()
        )));
    }
    if x.ncols() != params.input_dim() {
        return Err(Error::pre(format!(
            "feature dim {} does not match encoder input {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    let p = propagation(topology);
    let px = p.mul_dense(x);
    let pre = &px * &params.w1;
    let act = relu(&pre);
    let Some(w2) = &params.w2 else {
        return Ok(Forward {
            p,
            px,
            pre,
            mask: None,
            hidden: act.clone(),
            out: act,
        });
    };
    let (hidden, mask) = if dropout > 0.0 {
        let mut rng = seed::rng_for(seed, &[0xd209]);
        let keep = 1.0 / (1.0 - dropout);
        let mask = DMatrix::from_fn(act.nrows(), act.ncols(), |_, _| {
            if rng.random::<f64>() < dropout {
                0.0
            } else {
                keep
            }
        });
        (act.component_mul(&mask), Some(mask))
    } else {
        (act, None)
    };
    let out = p.mul_dense(&hidden) * w2;
    Ok(Forward {
        p,
        px,
        pre,
        mask,
        hidden,
        out,
    })
}

/// Encoder output for a view. Dropout (two-layer encoder only) is drawn
/// from `seed` and skipped when `dropout == 0`.
pub fn gcn_forward(
    view: &AugmentedView,
    params: &EncoderParams,
    dropout: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    Ok(forward(&view.topology, &view.features, params, dropout, seed)?.out)
}

/// Frozen-encoder embeddings of the unaugmented graph.
pub fn infer(g: &Graph, params: &EncoderParams) -> Result<DMatrix<f64>> {
    Ok(forward(g, g.features(), params, 0.0, 0)?.out)
}

/// Column-wise `(Z − μ)/(σ√n)` with population `σ`; also returns the
/// per-column divisor (`0` for zeroed columns).
fn standardize_with_norms(z: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = z.nrows();
    let mut out = z.clone();
    let mut norms = vec![0.0; z.ncols()];
    for (c, mut col) in out.column_iter_mut().enumerate() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        let sigma = norm / (n as f64).sqrt();
        if sigma < DEGENERATE_STD {
            col.fill(0.0);
        } else {
            col /= norm;
            norms[c] = norm;
        }
    }
    (out, norms)
}

pub fn standardize(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.nrows() < 2 {
        return Err(Error::pre("standardization needs at least two rows"));
    }
    Ok(standardize_with_norms(z).0)
}

fn gram_deviation(z: &DMatrix<f64>) -> DMatrix<f64> {
    let k = z.ncols();
    z.transpose() * z - DMatrix::<f64>::identity(k, k)
}

/// `‖A − B‖_F² + α(‖AᵀA − I‖_F² + ‖BᵀB − I‖_F²)`.
pub fn cca_ssg_loss(za: &DMatrix<f64>, zb: &DMatrix<f64>, alpha: f64) -> Result<f64> {
    if za.shape() != zb.shape() {
        return Err(Error::pre(format!(
            "embedding shapes differ: {:?} vs {:?}",
            za.shape(),
            zb.shape()
        )));
    }
    Ok((za - zb).norm_squared()
        + alpha * (gram_deviation(za).norm_squared() + gram_deviation(zb).norm_squared()))
}

/// `∂loss/∂Z̃_A` and `∂loss/∂Z̃_B`.
fn loss_wrt_standardized(
    za: &DMatrix<f64>,
    zb: &DMatrix<f64>,
    alpha: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let diff = za - zb;
    let ga = &diff * 2.0 + za * gram_deviation(za) * (4.0 * alpha);
    let gb = &diff * -2.0 + zb * gram_deviation(zb) * (4.0 * alpha);
    (ga, gb)
}

/// Pulls a gradient back through the column standardization.
fn standardize_backward(zt: &DMatrix<f64>, norms: &[f64], g: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(g.nrows(), g.ncols());
    for c in 0..g.ncols() {
        if norms[c] == 0.0 {
            continue;
        }
        let zc = zt.column(c);
        let gc = g.column(c);
        let mut col = (gc - zc * zc.dot(&gc)) / norms[c];
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        out.set_column(c, &col);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: DMatrix<f64>,
    pub w2: Option<DMatrix<f64>>,
}

impl Gradients {
    fn zeros_like(p: &EncoderParams) -> Self {
        Self {
            w1: DMatrix::zeros(p.w1.nrows(), p.w1.ncols()),
            w2: p.w2.as_ref().map(|w| DMatrix::zeros(w.nrows(), w.ncols())),
        }
    }
}

fn backward(f: &Forward, params: &EncoderParams, g_out: &DMatrix<f64>, acc: &mut Gradients) {
    let d_pre = match (&params.w2, acc.w2.as_mut()) {
        (Some(w2), Some(acc2)) => {
            let ph = f.p.mul_dense(&f.hidden);
            *acc2 += ph.transpose() * g_out;
            let mut d_hidden = f.p.mul_dense(&(g_out * w2.transpose()));
            if let Some(mask) = &f.mask {
                d_hidden.component_mul_assign(mask);
            }
            d_hidden
        }
        _ => g_out.clone(),
    };
    let d_pre = d_pre.zip_map(&f.pre, |g, s| if s > 0.0 { g } else { 0.0 });
    acc.w1 += f.px.transpose() * d_pre;
}

/// Loss of the two views and its analytic gradient with respect to the
/// encoder weights. `seed` fixes the dropout masks of both views.
pub fn loss_gradients(
    views: (&AugmentedView, &AugmentedView),
    params: &EncoderParams,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(f64, Gradients)> {
    let fa = forward(&views.0.topology, &views.0.features, params, cfg.dropout, seed::derive(seed, &[0xa]))?;
    let fb = forward(&views.1.topology, &views.1.features, params, cfg.dropout, seed::derive(seed, &[0xb]))?;
    if fa.out.nrows() < 2 {
        return Err(Error::pre("training needs at least two nodes"));
    }
    let (za, na) = standardize_with_norms(&fa.out);
    let (zb, nb) = standardize_with_norms(&fb.out);
    let loss = cca_ssg_loss(&za, &zb, cfg.alpha)?;
    let (ga, gb) = loss_wrt_standardized(&za, &zb, cfg.alpha);
    let mut grads = Gradients::zeros_like(params);
    backward(&fa, params, &standardize_backward(&za, &na, &ga), &mut grads);
    backward(&fb, params, &standardize_backward(&zb, &nb, &gb), &mut grads);
    Ok((loss, grads))
}

/// Adaptive-moment optimizer state for one matrix.
#[derive(Debug, Clone)]
struct AdamSlot {
    m: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl AdamSlot {
    fn new(shape: (usize, usize)) -> Self {
        Self {
            m: DMatrix::zeros(shape.0, shape.1),
            v: DMatrix::zeros(shape.0, shape.1),
        }
    }

    fn step(&mut self, w: &mut DMatrix<f64>, g: &DMatrix<f64>, lr: f64, t: i32) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.m = &self.m * B1 + g * (1.0 - B1);
        self.v = &self.v * B2 + g.map(|x| x * x) * (1.0 - B2);
        let c1 = 1.0 - B1.powi(t);
        let c2 = 1.0 - B2.powi(t);
        for ((wi, mi), vi) in w.iter_mut().zip(self.m.iter()).zip(self.v.iter()) {
            *wi -= lr * (mi / c1) / ((vi / c2).sqrt() + EPS);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    t: i32,
    slots: Vec<AdamSlot>,
}

impl Adam {
    pub fn new(params: &EncoderParams, lr: f64) -> Self {
        let mut slots = vec![AdamSlot::new(params.w1.shape())];
        if let Some(w2) = &params.w2 {
            slots.push(AdamSlot::new(w2.shape()));
        }
        Self { lr, t: 0, slots }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grads: &Gradients) {
        self.t += 1;
        self.slots[0].step(&mut params.w1, &grads.w1, self.lr, self.t);
        if let (Some(w2), Some(g2)) = (params.w2.as_mut(), grads.w2.as_ref()) {
            self.slots[1].step(w2, g2, self.lr, self.t);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    /// Embeddings of the unaugmented graph under the final parameters.
    pub embeddings: DMatrix<f64>,
    /// Loss before each update.
    pub losses: Vec<f64>,
}

/// Trains with any view generator.
pub fn train_with(g: &Graph, source: &dyn ViewSource, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = EncoderParams::init(g.features().ncols(), cfg.hidden, cfg.layers, cfg.seed)?;
    let mut opt = Adam::new(&params, cfg.lr);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let epoch_seed = seed::derive(cfg.seed, &[0xe90c, epoch as u64]);
        let (va, vb) = source.views(epoch_seed)?;
        let (loss, grads) = loss_gradients((&va, &vb), &params, cfg, epoch_seed)?;
        if !loss.is_finite() {
            return Err(Error::num(format!("loss became {loss} at epoch {epoch}")));
        }
        losses.push(loss);
        opt.step(&mut params, &grads);
        if !params.is_finite() {
            return Err(Error::num(format!("non-finite weights after epoch {epoch}")));
        }
    }
    let embeddings = infer(g, &params)?;
    Ok(TrainOutcome {
        params,
        embeddings,
        losses,
    })
}

/// Trains on spectral views of `g`.
pub fn train(g: &Graph, aug: &AugmentConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let augmenter = Augmenter::new(g, *aug)?;
    train_with(g, &augmenter, cfg)
}
