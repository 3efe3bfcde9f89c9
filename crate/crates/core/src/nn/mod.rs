//! Feed-forward velocity field, intent embedders and their reverse-mode
//! gradients.
//!
//! Every module is generic over [`Real`] so gradient checks run in `f64`
//! while training runs in `f32`. Forward passes that need a backward pass
//! return a tape; `backward` consumes the tape, which makes "backward without
//! a recorded forward" unrepresentable.

pub mod checkpoint;
mod model;

pub use model::Model;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::types::{IntentClass, ModelConfig};

pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub fn cast<T: Real>(x: f64) -> T {
    T::from(x).unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    /// Makes the whole network affine; used by the distillation oracle.
    Identity,
}

impl Activation {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Silu => x / (T::one() + (-x).exp()),
            Activation::Identity => x,
        }
    }

    fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Silu => {
                let s = T::one() / (T::one() + (-x).exp());
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Identity => T::one(),
        }
    }
}

/// Borrowed view of one parameter tensor.
pub struct NamedTensor<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

pub trait Parameters<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>);

    fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let mut v = Vec::new();
        self.visit("", &mut v);
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut v = Vec::new();
        self.visit_mut("", &mut v);
        v
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn fill_zero(&mut self) {
        for (_, d) in self.tensors_mut() {
            d.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// Same-shaped container with every entry zero; used for gradients.
    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.fill_zero();
        z
    }
}

fn visit_array2<'a, T: Real>(name: String, a: &'a Array2<T>, out: &mut Vec<NamedTensor<'a, T>>) {
    out.push(NamedTensor {
        name,
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("standard layout"),
    });
}

fn random_array2<T: Real>(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Array2<T> {
    Array2::from_shape_fn((rows, cols), |_| {
        let n: f64 = StandardNormal.sample(rng);
        cast(n * std)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `(out, in)`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            weight: random_array2(output, input, 1.0 / (input as f64).sqrt(), rng),
            bias: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &ArrayView2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` (when given) and returns `dL/dx`.
    pub fn backward(&self, x: &ArrayView2<T>, dy: &ArrayView2<T>, grad: Option<&mut Linear<T>>) -> Array2<T> {
        if let Some(g) = grad {
            g.weight += &dy.t().dot(x);
            g.bias += &dy.sum_axis(Axis(0));
        }
        dy.dot(&self.weight)
    }
}

impl<T: Real> Parameters<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        visit_array2(format!("{prefix}weight"), &self.weight, out);
        out.push(NamedTensor {
            name: format!("{prefix}bias"),
            shape: vec![self.bias.len()],
            data: self.bias.as_slice().unwrap(),
        });
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        out.push((format!("{prefix}weight"), self.weight.as_slice_mut().unwrap()));
        out.push((format!("{prefix}bias"), self.bias.as_slice_mut().unwrap()));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
    pub activation: Activation,
}

/// Inputs and pre-activations recorded by [`Mlp::forward_record`].
#[derive(Clone, Debug)]
pub struct MlpTape<T> {
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
}

impl<T: Real> Mlp<T> {
    /// `dims = [in, hidden..., out]`.
    pub fn new(dims: &[usize], activation: Activation, rng: &mut Rng) -> Self {
        let layers = dims.windows(2).map(|d| Linear::new(d[0], d[1], rng)).collect();
        Self { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn zero_last_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.weight.fill(T::zero());
        last.bias.fill(T::zero());
    }

    pub fn forward(&self, x: &ArrayView2<T>) -> Array2<T> {
        let mut h = x.to_owned();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h.view());
            if i + 1 < n {
                let act = self.activation;
                h.mapv_inplace(|v| act.apply(v));
            }
        }
        h
    }

    pub fn forward_record(&self, x: Array2<T>) -> (Array2<T>, MlpTape<T>) {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n.saturating_sub(1));
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h.view());
            inputs.push(h);
            if i + 1 < n {
                let act = self.activation;
                h = z.mapv(|v| act.apply(v));
                pre.push(z);
            } else {
                h = z;
            }
        }
        (h, MlpTape { inputs, pre })
    }

    pub fn backward(&self, tape: &MlpTape<T>, dout: &ArrayView2<T>, mut grad: Option<&mut Mlp<T>>) -> Array2<T> {
        let mut d = dout.to_owned();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                let act = self.activation;
                ndarray::Zip::from(&mut d)
                    .and(&tape.pre[i])
                    .for_each(|g, &z| *g *= act.derivative(z));
            }
            let g = grad.as_deref_mut().map(|g| &mut g.layers[i]);
            d = self.layers[i].backward(&tape.inputs[i].view(), &d.view(), g);
        }
        d
    }
}

impl<T: Real> Parameters<T> for Mlp<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("{prefix}layers.{i}."), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("{prefix}layers.{i}."), out);
        }
    }
}

/// Column ranges of the velocity-net input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputLayout {
    pub chunk: usize,
    pub time: usize,
    pub scene: usize,
    pub memory: usize,
    pub intent: usize,
}

impl InputLayout {
    pub fn total(&self) -> usize {
        self.chunk + self.time + self.scene + self.memory + self.intent
    }

    fn offsets(&self) -> [usize; 5] {
        let a = self.chunk;
        let b = a + self.time;
        let c = b + self.scene;
        let d = c + self.memory;
        [0, a, b, c, d]
    }
}

/// A batch of velocity-net inputs, one row per sample.
#[derive(Clone, Debug)]
pub struct NetBatch<T> {
    pub x: Array2<T>,
    pub t: Array1<T>,
    pub scene: Array2<T>,
    pub memory: Array2<T>,
    pub intent: Array2<T>,
}

/// Gradients of the loss with respect to the net inputs.
#[derive(Clone, Debug)]
pub struct InputGrads<T> {
    pub x: Array2<T>,
    pub scene: Array2<T>,
    pub memory: Array2<T>,
    pub intent: Array2<T>,
}

pub struct NetTape<T> {
    mlp: MlpTape<T>,
}

/// `v(x_t, t; scene, memory, e)`.
///
/// The intent embedding enters as extra input columns of the first layer,
/// i.e. as an additive bias on the first hidden pre-activation, so the
/// conditional and unconditional forwards differ only through that term.
#[derive(Debug)]
pub struct VelocityNet<T> {
    pub mlp: Mlp<T>,
    pub layout: InputLayout,
    pub freqs: Vec<f64>,
    forwards: AtomicUsize,
}

impl<T: Clone> Clone for VelocityNet<T> {
    fn clone(&self) -> Self {
        Self {
            mlp: self.mlp.clone(),
            layout: self.layout,
            freqs: self.freqs.clone(),
            forwards: AtomicUsize::new(0),
        }
    }
}

impl<T: PartialEq> PartialEq for VelocityNet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.mlp == other.mlp && self.layout == other.layout && self.freqs == other.freqs
    }
}

pub fn time_frequencies(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|f| 100f64.powf(f as f64 / (n - 1) as f64))
        .collect()
}

impl<T: Real> VelocityNet<T> {
    pub fn new(cfg: &ModelConfig, activation: Activation, rng: &mut Rng) -> Self {
        let layout = InputLayout {
            chunk: cfg.chunk_dim(),
            time: 2 * cfg.time_freqs,
            scene: cfg.scene_dim,
            memory: cfg.hidden,
            intent: cfg.hidden,
        };
        let w = 4 * cfg.hidden;
        let mlp = Mlp::new(&[layout.total(), w, w, w, cfg.chunk_dim()], activation, rng);
        Self {
            mlp,
            layout,
            freqs: time_frequencies(cfg.time_freqs),
            forwards: AtomicUsize::new(0),
        }
    }

    /// Number of per-sample forward evaluations since the last reset.
    pub fn forward_count(&self) -> usize {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn reset_forward_count(&self) {
        self.forwards.store(0, Ordering::Relaxed);
    }

    fn check(&self, b: &NetBatch<T>) -> Result<()> {
        let n = b.x.nrows();
        let l = self.layout;
        let checks = [
            (l.chunk, b.x.ncols()),
            (l.scene, b.scene.ncols()),
            (l.memory, b.memory.ncols()),
            (l.intent, b.intent.ncols()),
            (n, b.t.len()),
            (n, b.scene.nrows()),
            (n, b.memory.nrows()),
            (n, b.intent.nrows()),
        ];
        for (expected, got) in checks {
            if expected != got {
                return Err(Error::ShapeMismatch { expected, got });
            }
        }
        Ok(())
    }

    fn assemble(&self, b: &NetBatch<T>) -> Array2<T> {
        let n = b.x.nrows();
        let l = self.layout;
        let o = l.offsets();
        let mut input = Array2::zeros((n, l.total()));
        input.slice_mut(s![.., o[0]..o[1]]).assign(&b.x);
        let f = self.freqs.len();
        for (i, &t) in b.t.iter().enumerate() {
            let tf = t.to_f64().unwrap();
            for (j, w) in self.freqs.iter().enumerate() {
                let (sn, cs) = (tf * w).sin_cos();
                input[[i, o[1] + j]] = cast(sn);
                input[[i, o[1] + f + j]] = cast(cs);
            }
        }
        input.slice_mut(s![.., o[2]..o[3]]).assign(&b.scene);
        input.slice_mut(s![.., o[3]..o[4]]).assign(&b.memory);
        input.slice_mut(s![.., o[4]..]).assign(&b.intent);
        input
    }

    pub fn forward(&self, b: &NetBatch<T>) -> Result<Array2<T>> {
        self.check(b)?;
        self.forwards.fetch_add(b.x.nrows(), Ordering::Relaxed);
        Ok(self.mlp.forward(&self.assemble(b).view()))
    }

    pub fn forward_record(&self, b: &NetBatch<T>) -> Result<(Array2<T>, NetTape<T>)> {
        self.check(b)?;
        self.forwards.fetch_add(b.x.nrows(), Ordering::Relaxed);
        let (out, mlp) = self.mlp.forward_record(self.assemble(b));
        Ok((out, NetTape { mlp }))
    }

    /// Parameter gradients go into `grad` when given; input gradients are returned.
    pub fn backward(&self, tape: &NetTape<T>, dout: &ArrayView2<T>, grad: Option<&mut VelocityNet<T>>) -> InputGrads<T> {
        let dx = self.mlp.backward(&tape.mlp, dout, grad.map(|g| &mut g.mlp));
        let o = self.layout.offsets();
        InputGrads {
            x: dx.slice(s![.., o[0]..o[1]]).to_owned(),
            scene: dx.slice(s![.., o[2]..o[3]]).to_owned(),
            memory: dx.slice(s![.., o[3]..o[4]]).to_owned(),
            intent: dx.slice(s![.., o[4]..]).to_owned(),
        }
    }

    /// Single-sample convenience wrapper.
    pub fn forward_one(&self, x: &[T], t: T, scene: &[T], memory: &[T], intent: &[T]) -> Result<Vec<T>> {
        let row = |v: &[T]| Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap();
        let b = NetBatch {
            x: row(x),
            t: Array1::from_elem(1, t),
            scene: row(scene),
            memory: row(memory),
            intent: row(intent),
        };
        Ok(self.forward(&b)?.into_raw_vec_and_offset().0)
    }
}

impl<T: Real> Parameters<T> for VelocityNet<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        self.mlp.visit(prefix, out)
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        self.mlp.visit_mut(prefix, out)
    }
}

fn check_index(k: IntentClass, rows: usize) -> Result<usize> {
    if k.index() < rows {
        Ok(k.index())
    } else {
        Err(Error::IndexOutOfRange(k.index()))
    }
}

fn gather_rows<T: Real>(table: &Array2<T>, ks: &[IntentClass]) -> Result<Array2<T>> {
    let mut out = Array2::zeros((ks.len(), table.ncols()));
    for (i, k) in ks.iter().enumerate() {
        out.row_mut(i).assign(&table.row(check_index(*k, table.nrows())?));
    }
    Ok(out)
}

fn scatter_rows<T: Real>(grad: &mut Array2<T>, ks: &[IntentClass], d: &ArrayView2<T>) {
    for (i, k) in ks.iter().enumerate() {
        let mut row = grad.row_mut(k.index());
        row += &d.row(i);
    }
}

/// `e(k) = mlp(table[k])` over `K + 1` rows; row `K` is the unconditional slot.
#[derive(Clone, Debug, PartialEq)]
pub struct IntentEmbedder<T> {
    pub table: Array2<T>,
    pub mlp: Mlp<T>,
}

pub struct EmbedTape<T> {
    ks: Vec<IntentClass>,
    mlp: MlpTape<T>,
}

impl<T: Real> IntentEmbedder<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let h = cfg.hidden;
        Self {
            table: random_array2(cfg.num_intents + 1, h, 1.0, rng),
            mlp: Mlp::new(&[h, cfg.intent_embed_inner, h], Activation::Silu, rng),
        }
    }

    pub fn embed(&self, k: IntentClass) -> Result<Array1<T>> {
        Ok(self.embed_batch(&[k])?.row(0).to_owned())
    }

    pub fn embed_batch(&self, ks: &[IntentClass]) -> Result<Array2<T>> {
        Ok(self.mlp.forward(&gather_rows(&self.table, ks)?.view()))
    }

    pub fn embed_record(&self, ks: &[IntentClass]) -> Result<(Array2<T>, EmbedTape<T>)> {
        let (out, mlp) = self.mlp.forward_record(gather_rows(&self.table, ks)?);
        Ok((out, EmbedTape { ks: ks.to_vec(), mlp }))
    }

    pub fn backward(&self, tape: &EmbedTape<T>, dout: &ArrayView2<T>, grad: &mut IntentEmbedder<T>) {
        let drows = self.mlp.backward(&tape.mlp, dout, Some(&mut grad.mlp));
        scatter_rows(&mut grad.table, &tape.ks, &drows.view());
    }
}

impl<T: Real> Parameters<T> for IntentEmbedder<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        visit_array2(format!("{prefix}table"), &self.table, out);
        self.mlp.visit(&format!("{prefix}mlp."), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        out.push((format!("{prefix}table"), self.table.as_slice_mut().unwrap()));
        self.mlp.visit_mut(&format!("{prefix}mlp."), out);
    }
}

/// Single-pass student: `e_dist(k) = base[k] + residual(base[k])`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistilledIntentEmbedder<T> {
    pub base: Array2<T>,
    pub residual: Mlp<T>,
}

pub struct DistilledTape<T> {
    ks: Vec<IntentClass>,
    mlp: MlpTape<T>,
}

impl<T: Real> DistilledIntentEmbedder<T> {
    /// Random base rows and a zero residual map.
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let h = cfg.hidden;
        let mut residual = Mlp::new(&[h, 4 * h, h], Activation::Silu, rng);
        residual.zero_last_layer();
        Self {
            base: random_array2(cfg.num_intents + 1, h, 1.0, rng),
            residual,
        }
    }

    pub fn forward(&self, k: IntentClass) -> Result<Array1<T>> {
        Ok(self.forward_batch(&[k])?.row(0).to_owned())
    }

    pub fn forward_batch(&self, ks: &[IntentClass]) -> Result<Array2<T>> {
        let base = gather_rows(&self.base, ks)?;
        let r = self.residual.forward(&base.view());
        Ok(base + r)
    }

    pub fn forward_record(&self, ks: &[IntentClass]) -> Result<(Array2<T>, DistilledTape<T>)> {
        let base = gather_rows(&self.base, ks)?;
        let (r, mlp) = self.residual.forward_record(base.clone());
        Ok((base + r, DistilledTape { ks: ks.to_vec(), mlp }))
    }

    pub fn backward(&self, tape: &DistilledTape<T>, dout: &ArrayView2<T>, grad: &mut DistilledIntentEmbedder<T>) {
        let dbase = self.residual.backward(&tape.mlp, dout, Some(&mut grad.residual)) + dout;
        scatter_rows(&mut grad.base, &tape.ks, &dbase.view());
    }
}

impl<T: Real> Parameters<T> for DistilledIntentEmbedder<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        visit_array2(format!("{prefix}base"), &self.base, out);
        self.residual.visit(&format!("{prefix}residual."), out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        out.push((format!("{prefix}base"), self.base.as_slice_mut().unwrap()));
        self.residual.visit_mut(&format!("{prefix}residual."), out);
    }
}

/// Previous-clip intent memory rows, with row `K` as the "unknown" entry.
/// Stored separately from [`IntentEmbedder`].
#[derive(Clone, Debug, PartialEq)]
pub struct PrevIntentTable<T> {
    pub rows: Array2<T>,
}

impl<T: Real> PrevIntentTable<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        Self {
            rows: random_array2(cfg.num_intents + 1, cfg.hidden, 0.5, rng),
        }
    }

    pub fn unknown(&self) -> ArrayView1<'_, T> {
        self.rows.row(self.rows.nrows() - 1)
    }

    pub fn lookup_batch(&self, ks: &[IntentClass]) -> Result<Array2<T>> {
        gather_rows(&self.rows, ks)
    }

    pub fn backward(ks: &[IntentClass], dout: &ArrayView2<T>, grad: &mut PrevIntentTable<T>) {
        scatter_rows(&mut grad.rows, ks, dout);
    }
}

impl<T: Real> Parameters<T> for PrevIntentTable<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        visit_array2(format!("{prefix}rows"), &self.rows, out);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        out.push((format!("{prefix}rows"), self.rows.as_slice_mut().unwrap()));
    }
}

/// Deterministic child RNG for one named component of a model.
pub(crate) fn component_rng(seed: u64, component: &str) -> Rng {
    rng::seeded(seed, rng::hash_str(component))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            chunk_len: 3,
            hidden: 4,
            scene_dim: 3,
            intent_embed_inner: 5,
            time_freqs: 2,
            memory_tokens: 2,
            memory_capacity: 4,
            ..ModelConfig::default()
        }
    }

    fn batch(cfg: &ModelConfig, n: usize, rng: &mut Rng) -> NetBatch<f64> {
        NetBatch {
            x: random_array2(n, cfg.chunk_dim(), 1.0, rng),
            t: Array1::from_shape_fn(n, |i| 0.1 + 0.8 * i as f64 / n as f64),
            scene: random_array2(n, cfg.scene_dim, 1.0, rng),
            memory: random_array2(n, cfg.hidden, 1.0, rng),
            intent: random_array2(n, cfg.hidden, 1.0, rng),
        }
    }

    #[test]
    fn zero_final_layer_gives_zero_velocity() {
        let cfg = small_cfg();
        let mut r = Rng::seed_from_u64(0);
        let mut net = VelocityNet::<f64>::new(&cfg, Activation::Silu, &mut r);
        net.mlp.zero_last_layer();
        let out = net.forward(&batch(&cfg, 4, &mut r)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_counted() {
        let cfg = small_cfg();
        let mut r = Rng::seed_from_u64(1);
        let net = VelocityNet::<f64>::new(&cfg, Activation::Silu, &mut r);
        let b = batch(&cfg, 3, &mut r);
        let a = net.forward(&b).unwrap();
        let c = net.forward(&b).unwrap();
        assert_eq!(a, c);
        assert_eq!(net.forward_count(), 6);
        net.reset_forward_count();
        assert_eq!(net.forward_count(), 0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let cfg = small_cfg();
        let mut r = Rng::seed_from_u64(1);
        let net = VelocityNet::<f64>::new(&cfg, Activation::Silu, &mut r);
        let mut b = batch(&cfg, 2, &mut r);
        b.intent = Array2::zeros((2, cfg.hidden + 1));
        assert!(matches!(net.forward(&b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn affine_net_is_linear_in_embedding() {
        let cfg = small_cfg();
        let mut r = Rng::seed_from_u64(2);
        let net = VelocityNet::<f64>::new(&cfg, Activation::Identity, &mut r);
        let b = batch(&cfg, 1, &mut r);
        let e1 = random_array2::<f64>(1, cfg.hidden, 1.0, &mut r);
        let e2 = random_array2::<f64>(1, cfg.hidden, 1.0, &mut r);
        let run = |e: &Array2<f64>, x: &Array2<f64>| {
            let mut bb = b.clone();
            bb.intent = e.clone();
            bb.x = x.clone();
            net.forward(&bb).unwrap()
        };
        // Superposition: f(a e1 + (1-a) e2) = a f(e1) + (1-a) f(e2).
        let a = 0.3;
        let mix = &e1 * a + &e2 * (1.0 - a);
        let lhs = run(&mix, &b.x);
        let rhs = run(&e1, &b.x) * a + run(&e2, &b.x) * (1.0 - a);
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            assert!((l - r).abs() < 1e-12);
        }
        // The e-difference does not depend on x.
        let x2 = random_array2::<f64>(1, cfg.chunk_dim(), 1.0, &mut r);
        let d1 = run(&e1, &b.x) - run(&e2, &b.x);
        let d2 = run(&e1, &x2) - run(&e2, &x2);
        for (l, r) in d1.iter().zip(d2.iter()) {
            assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn embedder_shapes_and_determinism() {
        let cfg = small_cfg();
        let mut r = Rng::seed_from_u64(3);
        let emb = IntentEmbedder::<f64>::new(&cfg, &mut r);
        for k in 0..=cfg.num_intents {
            let k = IntentClass::new(k).unwrap();
            assert_eq!(emb.embed(k).unwrap().len(), cfg.hidden);
            assert_eq!(emb.embed(k).unwrap(), emb.embed(k).unwrap());
        }
        assert_ne!(
            emb.embed(IntentClass::CRUISING).unwrap(),
            emb.embed(IntentClass::LANE_KEEPING).unwrap()
        );
        assert_eq!(emb.table.nrows(), cfg.num_intents + 1);
    }

    #[test]
    fn unused_rows_get_zero_gradient() {
        let cfg = small_cfg();
        let mut r = Rng::seed_from_u64(4);
        let emb = IntentEmbedder::<f64>::new(&cfg, &mut r);
        let ks = [IntentClass::TURNING_LEFT, IntentClass::TURNING_LEFT];
        let (out, tape) = emb.embed_record(&ks).unwrap();
        let mut g = emb.zeros_like();
        emb.backward(&tape, &out.view(), &mut g);
        for (i, row) in g.table.rows().into_iter().enumerate() {
            let nz = row.iter().any(|&v| v != 0.0);
            assert_eq!(nz, i == IntentClass::TURNING_LEFT.index(), "row {i}");
        }
    }

    #[test]
    fn zero_adjoint_gives_zero_gradients() {
        let cfg = small_cfg();
        let mut r = Rng::seed_from_u64(5);
        let net = VelocityNet::<f64>::new(&cfg, Activation::Silu, &mut r);
        let b = batch(&cfg, 2, &mut r);
        let (out, tape) = net.forward_record(&b).unwrap();
        let mut g = net.zeros_like();
        let dz = Array2::zeros(out.raw_dim());
        let ig = net.backward(&tape, &dz.view(), Some(&mut g));
        assert!(g.tensors().iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
        assert!(ig.intent.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distilled_zero_residual_returns_base() {
        let cfg = small_cfg();
        let mut r = Rng::seed_from_u64(6);
        let d = DistilledIntentEmbedder::<f64>::new(&cfg, &mut r);
        for k in IntentClass::all() {
            assert_eq!(d.forward(k).unwrap(), d.base.row(k.index()).to_owned());
        }
        assert!(matches!(
            d.forward(IntentClass::new(20).unwrap()).map(|_| ()),
            Ok(())
        ));
    }

    #[test]
    fn out_of_range_index_rejected() {
        let table = Array2::<f64>::zeros((3, 2));
        assert!(gather_rows(&table, &[IntentClass::new(5).unwrap()]).is_err());
    }
}
