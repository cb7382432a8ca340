//! Softmax classification tasks: synthetic Gaussian-blob data, two small
//! differentiable models, exact gradients and Fisher-sampled directions.
//!
//! The per-sample likelihood is `p(y|x) = softmax(f(θ; x))_y`. For a logit
//! vector `f` with probabilities `p`, the score in output space is
//! `e_y − p`, so both the loss gradient and the sampled Fisher direction are
//! back-propagated output vectors:
//!
//! ```text
//! ∇θ L(θ; x, y)      = Jᵀ (p − e_y)
//! ∇θ log p(ŷ|x)      = Jᵀ (e_ŷ − p),   ŷ ~ p
//! d_t                = |B|^{-1/2} Σ_{x∈B} ∇θ log p(ŷ|x)
//! ```

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GingerError, Result};
use crate::kernels::{self, Exec};

/// Samples per work item in batched evaluation.
const SAMPLE_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// `f = W x (+ b)`.
    SoftmaxLinear {
        #[serde(default = "yes")]
        bias: bool,
    },
    /// `f = W₂ tanh(W₁ x + b₁) + b₂`.
    Mlp { hidden: usize },
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Model {
    pub arch: Architecture,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl Model {
    pub fn new(arch: Architecture, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 {
            return Err(GingerError::Parameter("model sizes must be positive".into()));
        }
        if let Architecture::Mlp { hidden: 0 } = arch {
            return Err(GingerError::Parameter("hidden width must be positive".into()));
        }
        Ok(Self {
            arch,
            input_dim,
            num_classes,
        })
    }

    pub fn num_params(&self) -> usize {
        let (n, c) = (self.input_dim, self.num_classes);
        match self.arch {
            Architecture::SoftmaxLinear { bias } => c * n + if bias { c } else { 0 },
            Architecture::Mlp { hidden: h } => h * n + h + c * h + c,
        }
    }

    /// Zeros for the linear model, scaled Gaussian weights for the MLP.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params()];
        if let Architecture::Mlp { hidden: h } = self.arch {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = self.input_dim;
            let s1 = (1.0 / n as f64).sqrt();
            let s2 = (1.0 / h as f64).sqrt();
            for w in &mut params[..h * n] {
                *w = s1 * rng.sample::<f64, _>(StandardNormal);
            }
            let w2 = h * n + h;
            for w in &mut params[w2..w2 + self.num_classes * h] {
                *w = s2 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        params
    }

    pub fn logits(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let (n, c) = (self.input_dim, self.num_classes);
        match self.arch {
            Architecture::SoftmaxLinear { bias } => (0..c)
                .map(|k| {
                    let row = &params[k * n..(k + 1) * n];
                    let b = if bias { params[c * n + k] } else { 0.0 };
                    b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect(),
            Architecture::Mlp { hidden } => {
                let act = self.hidden_activations(params, x, hidden);
                self.mlp_output(params, &act, hidden)
            }
        }
    }

    fn hidden_activations(&self, params: &[f64], x: &[f64], h: usize) -> Vec<f64> {
        let n = self.input_dim;
        (0..h)
            .map(|j| {
                let row = &params[j * n..(j + 1) * n];
                (params[h * n + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh()
            })
            .collect()
    }

    fn mlp_output(&self, params: &[f64], act: &[f64], h: usize) -> Vec<f64> {
        let off = h * self.input_dim + h;
        let c = self.num_classes;
        (0..c)
            .map(|k| {
                let row = &params[off + k * h..off + (k + 1) * h];
                params[off + c * h + k] + row.iter().zip(act).map(|(w, a)| w * a).sum::<f64>()
            })
            .collect()
    }

    pub fn probabilities(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(params, x))
    }

    /// Adds `scale · Jᵀ dlogits` into `grad`.
    pub fn backward(&self, params: &[f64], x: &[f64], dlogits: &[f64], scale: f64, grad: &mut [f64]) {
        let (n, c) = (self.input_dim, self.num_classes);
        match self.arch {
            Architecture::SoftmaxLinear { bias } => {
                for k in 0..c {
                    let g = scale * dlogits[k];
                    for (gw, v) in grad[k * n..(k + 1) * n].iter_mut().zip(x) {
                        *gw += g * v;
                    }
                    if bias {
                        grad[c * n + k] += g;
                    }
                }
            }
            Architecture::Mlp { hidden: h } => {
                let act = self.hidden_activations(params, x, h);
                let off = h * n + h;
                let mut dact = vec![0.0; h];
                for k in 0..c {
                    let g = scale * dlogits[k];
                    let row = &params[off + k * h..off + (k + 1) * h];
                    for j in 0..h {
                        grad[off + k * h + j] += g * act[j];
                        dact[j] += g * row[j];
                    }
                    grad[off + c * h + k] += g;
                }
                for j in 0..h {
                    let dpre = dact[j] * (1.0 - act[j] * act[j]);
                    for (gw, v) in grad[j * n..(j + 1) * n].iter_mut().zip(x) {
                        *gw += dpre * v;
                    }
                    grad[h * n + j] += dpre;
                }
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `−log softmax(logits)_y`, computed stably.
pub fn nll(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[y]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    /// Standard deviation of each blob around its center.
    pub blob_spread: f64,
    pub seed: u64,
}

/// Immutable classification dataset; features row-major `n × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub classes: usize,
    pub seed: u64,
    features: Vec<f64>,
    labels: Vec<u32>,
}

const DATASET_MAGIC: &[u8; 4] = b"GDS1";

impl Dataset {
    pub fn new(dim: usize, classes: usize, seed: u64, features: Vec<f64>, labels: Vec<u32>) -> Result<Self> {
        if labels.is_empty() || dim == 0 || classes == 0 {
            return Err(GingerError::Parameter("dataset must be non-empty".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(GingerError::Dimension {
                what: "dataset features",
                expected: labels.len() * dim,
                got: features.len(),
            });
        }
        if labels.iter().any(|&y| y as usize >= classes) {
            return Err(GingerError::Parameter("label out of range".into()));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(GingerError::NonFinite("dataset features"));
        }
        Ok(Self {
            dim,
            classes,
            seed,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Flat little-endian dump:
    /// `"GDS1" u64:n u64:dim u64:classes u64:seed f64[n·dim]:features u32[n]:labels`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        for v in [self.len() as u64, self.dim as u64, self.classes as u64, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        for x in &self.features {
            w.write_all(&x.to_le_bytes())?;
        }
        for y in &self.labels {
            w.write_all(&y.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(GingerError::Format("bad dataset magic".into()));
        }
        let mut b8 = [0u8; 8];
        let mut header = [0u64; 4];
        for h in &mut header {
            r.read_exact(&mut b8)?;
            *h = u64::from_le_bytes(b8);
        }
        let [n, dim, classes, seed] = header;
        let (n, dim) = (n as usize, dim as usize);
        let count = n
            .checked_mul(dim)
            .ok_or_else(|| GingerError::Format("size overflow".into()))?;
        let mut features = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b8)?;
            features.push(f64::from_le_bytes(b8));
        }
        let mut b4 = [0u8; 4];
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b4)?;
            labels.push(u32::from_le_bytes(b4));
        }
        Self::new(dim, classes as usize, seed, features, labels)
    }
}

/// Gaussian blobs: one center per class drawn from `N(0, 9·I)`, samples at
/// `center + spread·N(0, I)`, labels assigned round-robin.
pub fn make_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.n == 0 || cfg.dim == 0 || cfg.classes == 0 {
        return Err(GingerError::Parameter(format!(
            "synthetic sizes must be positive (n={}, dim={}, classes={})",
            cfg.n, cfg.dim, cfg.classes
        )));
    }
    if !(cfg.blob_spread >= 0.0 && cfg.blob_spread.is_finite()) {
        return Err(GingerError::Parameter(format!("invalid blob spread {}", cfg.blob_spread)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Vec<f64> = (0..cfg.classes * cfg.dim)
        .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut features = Vec::with_capacity(cfg.n * cfg.dim);
    let mut labels = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let y = i % cfg.classes;
        for j in 0..cfg.dim {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(centers[y * cfg.dim + j] + cfg.blob_spread * noise);
        }
        labels.push(y as u32);
    }
    Dataset::new(cfg.dim, cfg.classes, cfg.seed, features, labels)
}

/// Indices into a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch(Vec<usize>);

impl Batch {
    pub fn new(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn full(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Seeded sampler drawing batches by walking reshuffled epochs.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(GingerError::Parameter("batch sampler needs n > 0 and batch_size > 0".into()));
        }
        let mut s = Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
            batch_size: batch_size.min(n),
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        use rand::seq::SliceRandom;
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> Batch {
        if self.pos + self.batch_size > self.order.len() {
            self.reshuffle();
        }
        let b = self.order[self.pos..self.pos + self.batch_size].to_vec();
        self.pos += self.batch_size;
        Batch(b)
    }
}

/// A model bound to a dataset.
#[derive(Clone, Debug)]
pub struct Task {
    pub model: Model,
    pub dataset: Dataset,
    pub exec: Exec,
}

impl Task {
    pub fn new(model: Model, dataset: Dataset) -> Result<Self> {
        if model.input_dim != dataset.dim || model.num_classes != dataset.classes {
            return Err(GingerError::Parameter(format!(
                "model ({}→{}) does not match dataset ({}→{})",
                model.input_dim, model.num_classes, dataset.dim, dataset.classes
            )));
        }
        Ok(Self {
            model,
            dataset,
            exec: Exec::default(),
        })
    }

    pub fn num_params(&self) -> usize {
        self.model.num_params()
    }

    /// Mean negative log-likelihood over `batch`.
    pub fn loss(&self, params: &[f64], batch: &Batch) -> f64 {
        let partial = kernels::map_chunks_of(self.exec, batch.indices(), SAMPLE_CHUNK, |idx| {
            idx.iter()
                .map(|&i| nll(&self.model.logits(params, self.dataset.features(i)), self.dataset.label(i)))
                .sum::<f64>()
        });
        partial.into_iter().sum::<f64>() / batch.len() as f64
    }

    /// Mean negative log-likelihood and its exact gradient.
    pub fn loss_and_grad(&self, params: &[f64], batch: &Batch) -> (f64, Vec<f64>) {
        let d = self.num_params();
        let scale = 1.0 / batch.len() as f64;
        let partial = kernels::map_chunks_of(self.exec, batch.indices(), SAMPLE_CHUNK, |idx| {
            let mut grad = vec![0.0; d];
            let mut loss = 0.0;
            for &i in idx {
                let x = self.dataset.features(i);
                let y = self.dataset.label(i);
                let logits = self.model.logits(params, x);
                loss += nll(&logits, y);
                let mut dl = softmax(&logits);
                dl[y] -= 1.0;
                self.model.backward(params, x, &dl, scale, &mut grad);
            }
            (loss, grad)
        });
        let mut grad = vec![0.0; d];
        let mut loss = 0.0;
        for (l, g) in partial {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        (loss * scale, grad)
    }

    /// Fisher-sampled direction `|B|^{-1/2} Σ_x ∇θ log p(ŷ|x)` with one
    /// `ŷ ~ p_θ(·|x)` per input. With `samples_per_input > 1` the per-input
    /// scores are averaged over that many draws.
    pub fn fisher_direction<R: Rng + ?Sized>(
        &self,
        params: &[f64],
        batch: &Batch,
        rng: &mut R,
        samples_per_input: usize,
    ) -> Vec<f64> {
        let d = self.num_params();
        let s = samples_per_input.max(1);
        let probs: Vec<Vec<f64>> = kernels::map_chunks_of(self.exec, batch.indices(), SAMPLE_CHUNK, |idx| {
            idx.iter()
                .map(|&i| self.model.probabilities(params, self.dataset.features(i)))
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();

        // draw labels sequentially so the result depends only on the rng stream
        let outputs: Vec<Vec<f64>> = probs
            .iter()
            .map(|p| {
                let mut out: Vec<f64> = p.iter().map(|v| -v).collect();
                for _ in 0..s {
                    let y = sample_categorical(p, rng);
                    out[y] += 1.0 / s as f64;
                }
                out
            })
            .collect();

        let scale = 1.0 / (batch.len() as f64).sqrt();
        let positions: Vec<usize> = (0..batch.len()).collect();
        let partial = kernels::map_chunks_of(self.exec, &positions, SAMPLE_CHUNK, |pos| {
            let mut acc = vec![0.0; d];
            for &k in pos {
                let i = batch.indices()[k];
                self.model
                    .backward(params, self.dataset.features(i), &outputs[k], scale, &mut acc);
            }
            acc
        });
        let mut out = vec![0.0; d];
        for g in partial {
            for (a, b) in out.iter_mut().zip(g) {
                *a += b;
            }
        }
        out
    }

    pub fn accuracy(&self, params: &[f64]) -> f64 {
        let correct = (0..self.dataset.len())
            .filter(|&i| {
                let z = self.model.logits(params, self.dataset.features(i));
                let best = (0..z.len()).max_by(|&a, &b| z[a].total_cmp(&z[b])).unwrap_or(0);
                best == self.dataset.label(i)
            })
            .count();
        correct as f64 / self.dataset.len() as f64
    }
}

fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, spread: f64, seed: u64) -> Dataset {
        make_synthetic(&SyntheticConfig {
            n,
            dim: 3,
            classes: 4,
            blob_spread: spread,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn uniform_logits_loss_is_log_classes() {
        let data = blobs(20, 1.0, 0);
        let model = Model::new(Architecture::SoftmaxLinear { bias: true }, 3, 4).unwrap();
        let task = Task::new(model, data).unwrap();
        let params = vec![0.0; task.num_params()];
        let (loss, _) = task.loss_and_grad(&params, &Batch::full(20));
        assert!((loss - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn synthetic_rejects_empty_and_is_deterministic() {
        let bad = SyntheticConfig {
            n: 0,
            dim: 2,
            classes: 2,
            blob_spread: 1.0,
            seed: 0,
        };
        assert!(make_synthetic(&bad).is_err());
        let mut a = Vec::new();
        let mut b = Vec::new();
        blobs(50, 0.5, 9).write_binary(&mut a).unwrap();
        blobs(50, 0.5, 9).write_binary(&mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(Dataset::read_binary(a.as_slice()).unwrap(), blobs(50, 0.5, 9));
    }

    #[test]
    fn single_class_direction_is_zero() {
        let data = make_synthetic(&SyntheticConfig {
            n: 5,
            dim: 2,
            classes: 1,
            blob_spread: 1.0,
            seed: 0,
        })
        .unwrap();
        let model = Model::new(Architecture::SoftmaxLinear { bias: true }, 2, 1).unwrap();
        let task = Task::new(model, data).unwrap();
        let params = vec![0.3; task.num_params()];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = task.fisher_direction(&params, &Batch::full(5), &mut rng, 1);
        assert!(d.iter().all(|&v| v == 0.0));
    }

    /// Always returns the same bits, so every categorical draw is identical.
    struct ConstRng;

    impl rand::RngCore for ConstRng {
        fn next_u32(&mut self) -> u32 {
            0x8000_0000
        }
        fn next_u64(&mut self) -> u64 {
            0x8000_0000_0000_0000
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0x80);
        }
    }

    #[test]
    fn batch_scaling_is_inverse_sqrt() {
        let data = Dataset::new(2, 3, 0, vec![0.5, -1.0], vec![1]).unwrap();
        let model = Model::new(Architecture::SoftmaxLinear { bias: true }, 2, 3).unwrap();
        let task = Task::new(model, data).unwrap();
        let params: Vec<f64> = (0..task.num_params()).map(|i| 0.1 * i as f64 - 0.3).collect();
        let one = task.fisher_direction(&params, &Batch::new(vec![0]), &mut ConstRng, 1);
        let four = task.fisher_direction(&params, &Batch::new(vec![0; 4]), &mut ConstRng, 1);
        assert!(one.iter().any(|&v| v != 0.0));
        // 4 identical scores over √4
        for (a, b) in one.iter().zip(&four) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn sampler_covers_epoch() {
        let mut s = BatchSampler::new(10, 5, 0).unwrap();
        let mut seen: Vec<usize> = s.next_batch().indices().to_vec();
        seen.extend(s.next_batch().indices());
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn task_rejects_mismatched_model() {
        let model = Model::new(Architecture::Mlp { hidden: 4 }, 2, 4).unwrap();
        assert!(Task::new(model, blobs(8, 1.0, 0)).is_err());
        assert!(Model::new(Architecture::Mlp { hidden: 0 }, 2, 4).is_err());
    }
}
