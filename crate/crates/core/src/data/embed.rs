//! Word vectors from a continuous bag-of-words predictor: the mean of the
//! context words' input rows feeds a linear hidden layer, a softmax over the
//! vocabulary predicts the center word, and the input rows become the
//! embedding.

use crate::data::text::Vocab;
use crate::error::{Error, Result};
use crate::head::softmax;
use crate::numerics::{axpy, dot, Matrix, RngStream};
use crate::optim::{adam_step, AdamConfig, AdamState, ParamTables};

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub vocab: Vocab,
    /// One row per vocabulary entry.
    pub vectors: Matrix,
}

impl EmbeddingTable {
    pub fn new(vocab: Vocab, vectors: Matrix) -> Result<Self> {
        if vectors.rows() != vocab.len() {
            return Err(Error::shape("EmbeddingTable", vocab.len(), vectors.rows()));
        }
        if !vectors.is_finite() {
            return Err(Error::Numerical("embedding table has non-finite entries".into()));
        }
        Ok(EmbeddingTable { vocab, vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        self.vectors.row(id)
    }

    /// Id of the row closest to `v` in Euclidean distance.
    pub fn nearest(&self, v: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for r in 0..self.vectors.rows() {
            let d: f64 = self.vectors.row(r).iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (r, d);
            }
        }
        best.0
    }

    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        cosine(self.vector(a), self.vector(b))
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = (dot(a, a) * dot(b, b)).sqrt();
    if n == 0.0 {
        0.0
    } else {
        dot(a, b) / n
    }
}

#[derive(Clone, Debug)]
pub struct EmbeddingConfig {
    /// Context words taken on each side of the center.
    pub window: usize,
    pub dim: usize,
    pub epochs: usize,
    /// Center positions per optimizer step.
    pub batch: usize,
    pub adam: AdamConfig,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            window: 5,
            dim: 100,
            epochs: 5,
            batch: 64,
            adam: AdamConfig::default(),
        }
    }
}

struct Cbow {
    w_in: Matrix,
    w_out: Matrix,
    b_out: Vec<f64>,
}

impl ParamTables for Cbow {
    fn tables(&self) -> Vec<(String, &[f64])> {
        vec![
            ("w_in".into(), self.w_in.as_slice()),
            ("w_out".into(), self.w_out.as_slice()),
            ("b_out".into(), &self.b_out),
        ]
    }
    fn tables_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![
            ("w_in".into(), self.w_in.as_mut_slice()),
            ("w_out".into(), self.w_out.as_mut_slice()),
            ("b_out".into(), &mut self.b_out),
        ]
    }
}

impl Cbow {
    fn zeros(v: usize, d: usize) -> Self {
        Cbow {
            w_in: Matrix::zeros(v, d),
            w_out: Matrix::zeros(v, d),
            b_out: vec![0.0; v],
        }
    }
}

fn context(ids: &[usize], center: usize, window: usize) -> Vec<usize> {
    let lo = center.saturating_sub(window);
    let hi = (center + window + 1).min(ids.len());
    (lo..hi).filter(|&j| j != center).map(|j| ids[j]).collect()
}

/// Trains embeddings on the id stream `ids` over `vocab`.
pub fn train_word_embeddings(
    vocab: &Vocab,
    ids: &[usize],
    cfg: &EmbeddingConfig,
    rng: &mut RngStream,
) -> Result<EmbeddingTable> {
    let v = vocab.len();
    if v < 2 {
        return Err(Error::Data(format!("need at least 2 vocabulary entries, got {v}")));
    }
    if ids.len() < 2 {
        return Err(Error::Data("corpus too short for context windows".into()));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
        return Err(Error::Index { index: bad, len: v });
    }
    if cfg.dim == 0 || cfg.window == 0 || cfg.batch == 0 {
        return Err(Error::Config("embedding dim, window and batch must be positive".into()));
    }
    cfg.adam.validate()?;
    let d = cfg.dim;
    let mut model = Cbow::zeros(v, d);
    for x in model.w_in.as_mut_slice().iter_mut().chain(model.w_out.as_mut_slice()) {
        *x = 0.1 * rng.normal();
    }
    let mut adam = AdamState::new(cfg.adam, &model);
    let mut order: Vec<usize> = (0..ids.len()).collect();
    let mut grads = Cbow::zeros(v, d);
    let mut h = vec![0.0; d];
    let mut dh = vec![0.0; d];

    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch) {
            for t in grads.tables_mut() {
                t.1.fill(0.0);
            }
            let scale = 1.0 / chunk.len() as f64;
            for &center in chunk {
                let ctx = context(ids, center, cfg.window);
                h.fill(0.0);
                for &c in &ctx {
                    axpy(1.0 / ctx.len() as f64, model.w_in.row(c), &mut h);
                }
                let z: Vec<f64> = (0..v)
                    .map(|r| dot(model.w_out.row(r), &h) + model.b_out[r])
                    .collect();
                let mut dz = softmax(&z);
                dz[ids[center]] -= 1.0;
                dh.fill(0.0);
                for (r, &g) in dz.iter().enumerate() {
                    let g = g * scale;
                    axpy(g, model.w_out.row(r), &mut dh);
                    axpy(g, &h, grads.w_out.row_mut(r));
                    grads.b_out[r] += g;
                }
                for &c in &ctx {
                    axpy(1.0 / ctx.len() as f64, &dh, grads.w_in.row_mut(c));
                }
            }
            adam_step(&mut adam, &mut model, &grads)?;
        }
    }
    EmbeddingTable::new(vocab.clone(), model.w_in)
}
