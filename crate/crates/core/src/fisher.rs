//! Diagonal empirical Fisher task embeddings, cosine similarity, top-k
//! retrieval and the pairwise similarity graph.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::experts::ExpertWeights;
use crate::format::{self, Header, EMBEDDING_MAGIC};
use crate::params::ParameterVector;
use crate::tasks::Split;
use crate::train::{value_and_grad, Batch};

pub const DEFAULT_SAMPLE_CAP: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct TaskEmbedding {
    pub task_id: String,
    /// Hash of the expert config the gradients were taken over.
    pub config_hash: String,
    pub values: ParameterVector,
    pub samples: usize,
}

impl TaskEmbedding {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// All-zero embeddings are degenerate: cosine is undefined for them.
    pub fn is_zero(&self) -> bool {
        self.values.0.iter().all(|&v| v == 0.0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::encode(EMBEDDING_MAGIC, &self.header(), &self.values.0)
    }

    fn header(&self) -> Header {
        let mut h = Header::new();
        h.push("task", &self.task_id).push("config_hash", &self.config_hash).push("samples", self.samples);
        h
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        format::write_file(path, EMBEDDING_MAGIC, &self.header(), &self.values.0)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, values) = format::read_file(path, EMBEDDING_MAGIC)?;
        if let Some(i) = values.iter().position(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::format(path, format!("embedding entry {i} is negative or NaN")));
        }
        Ok(Self {
            task_id: h.require("task", path)?.to_string(),
            config_hash: h.require("config_hash", path)?.to_string(),
            values: ParameterVector(values),
            samples: h.parse("samples", path)?,
        })
    }
}

/// A model that can report `grad log P(y | x)` for one sample.
pub trait LogLikelihoodGrad: Sync {
    fn num_params(&self) -> usize;
    fn log_prob_grad(&self, x: &[f64], y: usize) -> Result<Vec<f64>>;
}

/// Backbone with an attached expert; gradients are over expert parameters only.
pub struct ExpertLikelihood<'a> {
    pub backbone: &'a Backbone,
    pub expert: &'a ExpertWeights,
}

impl LogLikelihoodGrad for ExpertLikelihood<'_> {
    fn num_params(&self) -> usize {
        self.expert.len()
    }

    fn log_prob_grad(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        let batch = Batch::new(Tensor::new(vec![1, x.len()], x.to_vec())?, vec![y]);
        // the loss is -log P(y|x)
        let (_, g) = value_and_grad(self.backbone, self.expert, &batch, 0.0)?;
        Ok(g.0.into_iter().map(|v| -v).collect())
    }
}

/// Multinomial logistic regression, `P(y|x) = softmax(x W + b)_y`. The flat
/// weights hold `W` row-major (`dim x classes`) followed by `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxRegression {
    pub dim: usize,
    pub classes: usize,
    pub weights: Vec<f64>,
}

impl SoftmaxRegression {
    pub fn new(dim: usize, classes: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != (dim + 1) * classes {
            return Err(Error::Layout(format!(
                "{dim}x{classes} regression needs {} weights, got {}",
                (dim + 1) * classes,
                weights.len()
            )));
        }
        Ok(Self { dim, classes, weights })
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let c = self.classes;
        let mut z: Vec<f64> = (0..c)
            .map(|k| {
                self.weights[self.dim * c + k] + (0..self.dim).map(|j| x[j] * self.weights[j * c + k]).sum::<f64>()
            })
            .collect();
        crate::autodiff::softmax_in_place(&mut z);
        z
    }
}

impl LogLikelihoodGrad for SoftmaxRegression {
    fn num_params(&self) -> usize {
        self.weights.len()
    }

    fn log_prob_grad(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        if x.len() != self.dim || y >= self.classes {
            return Err(Error::Layout(format!("sample of width {} / label {y} does not fit the model", x.len())));
        }
        let p = self.probs(x);
        let resid: Vec<f64> = (0..self.classes).map(|k| f64::from(u8::from(k == y)) - p[k]).collect();
        let mut g = Vec::with_capacity(self.weights.len());
        for xj in x.iter().chain(std::iter::once(&1.0)) {
            g.extend(resid.iter().map(|r| xj * r));
        }
        Ok(g)
    }
}

/// `F_j = (1/s) sum_i (d log P(y_i|x_i) / d theta_j)^2` over the first
/// `min(len, cap)` samples, using the dataset labels. Contributions are
/// summed in a canonical sample order (by input bits, then label), so
/// reordering the samples does not change a single bit of the result.
pub fn empirical_fisher_diag(model: &dyn LogLikelihoodGrad, split: &Split, cap: usize) -> Result<(Vec<f64>, usize)> {
    if cap == 0 {
        return Err(Error::Config("fisher sample cap must be >= 1".into()));
    }
    if split.is_empty() {
        return Err(Error::Data("cannot compute a Fisher embedding from an empty dataset".into()));
    }
    let s = split.len().min(cap);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| {
        let ka = split.x.row(a).iter().map(|v| v.to_bits());
        let kb = split.x.row(b).iter().map(|v| v.to_bits());
        ka.cmp(kb).then(split.y[a].cmp(&split.y[b]))
    });
    let squares: Vec<Vec<f64>> = order
        .par_iter()
        .map(|&i| {
            let g = model.log_prob_grad(split.x.row(i), split.y[i])?;
            Ok(g.into_iter().map(|v| v * v).collect())
        })
        .collect::<Result<_>>()?;
    let n = model.num_params();
    let mut fisher = vec![0.0; n];
    for sq in &squares {
        for (f, v) in fisher.iter_mut().zip(sq) {
            *f += v;
        }
    }
    let inv = 1.0 / s as f64;
    fisher.iter_mut().for_each(|f| *f *= inv);
    Ok((fisher, s))
}

/// Task embedding of `expert` on `split`. Degenerate (all-zero) results are
/// returned but logged; [`cosine`] rejects them.
pub fn fisher_diag(
    backbone: &Backbone,
    expert: &ExpertWeights,
    task_id: &str,
    split: &Split,
    cap: usize,
) -> Result<TaskEmbedding> {
    expert.check_attachable(backbone.config())?;
    let model = ExpertLikelihood { backbone, expert };
    let (values, samples) = empirical_fisher_diag(&model, split, cap)?;
    let emb = TaskEmbedding {
        task_id: task_id.to_string(),
        config_hash: expert.config.hash(),
        values: ParameterVector(values),
        samples,
    };
    if emb.is_zero() {
        log::warn!("fisher embedding for `{task_id}` is all zeros");
    }
    Ok(emb)
}

/// Cosine similarity, clamped to [-1, 1]. Zero vectors are an error.
pub fn cosine(a: &TaskEmbedding, b: &TaskEmbedding) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Layout(format!(
            "embeddings `{}` ({}) and `{}` ({}) differ in length",
            a.task_id,
            a.len(),
            b.task_id,
            b.len()
        )));
    }
    for e in [a, b] {
        if e.is_zero() {
            return Err(Error::DegenerateEmbedding(e.task_id.clone()));
        }
    }
    let dot = a.values.dot(&b.values);
    let c = dot / (a.values.norm() * b.values.norm());
    Ok(c.clamp(-1.0, 1.0))
}

pub type EmbeddingPool = BTreeMap<String, TaskEmbedding>;

/// Every candidate other than `target`, by descending similarity (ties by id).
pub fn rank_against(target: &TaskEmbedding, pool: &EmbeddingPool) -> Result<Vec<(String, f64)>> {
    let mut scored = pool
        .iter()
        .filter(|(id, _)| **id != target.task_id)
        .map(|(id, e)| Ok((id.clone(), cosine(target, e)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(scored)
}

/// The `k` tasks most similar to `target`. `k` must not exceed pool size - 1.
pub fn top_k(target: &str, pool: &EmbeddingPool, k: usize) -> Result<Vec<(String, f64)>> {
    let emb =
        pool.get(target).ok_or_else(|| Error::Retrieval(format!("target `{target}` has no embedding in the pool")))?;
    let limit = pool.len() - 1;
    if k > limit {
        return Err(Error::Retrieval(format!("k={k} exceeds pool size - 1 = {limit}")));
    }
    let mut ranked = rank_against(emb, pool)?;
    ranked.truncate(k);
    Ok(ranked)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityGraph {
    pub ids: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

/// Full pairwise cosine matrix over a pool with one consistent layout.
pub fn similarity_matrix(pool: &EmbeddingPool) -> Result<SimilarityGraph> {
    let ids: Vec<String> = pool.keys().cloned().collect();
    let embs: Vec<&TaskEmbedding> = pool.values().collect();
    if let Some(first) = embs.first() {
        let offenders: Vec<&str> = embs
            .iter()
            .filter(|e| e.config_hash != first.config_hash || e.len() != first.len())
            .map(|e| e.task_id.as_str())
            .collect();
        if !offenders.is_empty() {
            return Err(Error::Layout(format!(
                "embeddings use layouts different from `{}`: {}",
                first.task_id,
                offenders.join(", ")
            )));
        }
    }
    let n = ids.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        if embs[i].is_zero() {
            return Err(Error::DegenerateEmbedding(ids[i].clone()));
        }
        matrix[i][i] = 1.0;
        for j in i + 1..n {
            let c = cosine(embs[i], embs[j])?;
            matrix[i][j] = c;
            matrix[j][i] = c;
        }
    }
    Ok(SimilarityGraph { ids, matrix })
}

impl SimilarityGraph {
    /// Header row `task,<id>...`, then one row per task.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("task");
        for id in &self.ids {
            s.push(',');
            s.push_str(id);
        }
        s.push('\n');
        for (id, row) in self.ids.iter().zip(&self.matrix) {
            s.push_str(id);
            for v in row {
                let _ = write!(s, ",{v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("similarity csv: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let ids: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
        let mut matrix = Vec::new();
        for (line, id) in lines.zip(&ids) {
            let mut cells = line.split(',');
            if cells.next() != Some(id.as_str()) {
                return Err(bad("row ids do not match header"));
            }
            let row = cells.map(|c| c.parse::<f64>().map_err(|_| bad("bad number"))).collect::<Result<Vec<_>>>()?;
            if row.len() != ids.len() {
                return Err(bad("ragged row"));
            }
            matrix.push(row);
        }
        if matrix.len() != ids.len() {
            return Err(bad("row count differs from header"));
        }
        Ok(Self { ids, matrix })
    }

    /// Long-form `(row, col, value)` cells, row-major; ready for a heatmap.
    pub fn heatmap_cells(&self) -> Vec<(usize, usize, f64)> {
        let n = self.ids.len();
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (i, j, self.matrix[i][j])).collect()
    }

    pub fn to_svg(&self) -> String {
        crate::analysis::svg::heatmap(&self.ids, &self.ids, &self.matrix, (-1.0, 1.0))
    }
}
