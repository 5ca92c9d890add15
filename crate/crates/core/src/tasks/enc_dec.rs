//! Shared encoder with a classification head and a reconstruction head.
//!
//! The objective of sample `j` is the cross-entropy of the classifier and its
//! single constraint is `MSE(I_j, decode(encode(I_j))) - theta <= 0`.

use std::ops::Range;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::idx::{ImageDataset, NUM_CLASSES};
use super::mlp::{ce_grad, ce_loss, gather_rows, mse_grad, mse_loss, Activation, DenseNet, ForwardCache, LayerSpec};
use crate::error::{invalid, Result, SeqPenError};
use crate::par;
use crate::problem::{FiniteSumProblem, GradientWeights, Normalization, ParameterVector, SampleEval};

/// Rows per forward/backward block; blocks run in parallel.
const CHUNK: usize = 64;

#[derive(Debug, Clone)]
pub struct EncDecModel {
    encoder: DenseNet,
    classifier: DenseNet,
    decoder: DenseNet,
}

struct Forward {
    enc_cache: ForwardCache,
    cls_cache: ForwardCache,
    dec_cache: ForwardCache,
}

impl Forward {
    fn probs(&self) -> &Array2<f64> {
        self.cls_cache.output()
    }
    fn recon(&self) -> &Array2<f64> {
        self.dec_cache.output()
    }
}

impl EncDecModel {
    /// `pixels -> hidden -> code` (relu), `code -> classes` (softmax),
    /// `code -> hidden -> pixels` (relu, sigmoid).
    pub fn new(pixels: usize, hidden: usize, code: usize, classes: usize) -> Result<Self> {
        Ok(Self {
            encoder: DenseNet::new(vec![
                LayerSpec::new(pixels, hidden, Activation::Relu),
                LayerSpec::new(hidden, code, Activation::Relu),
            ])?,
            classifier: DenseNet::new(vec![LayerSpec::new(code, classes, Activation::Softmax)])?,
            decoder: DenseNet::new(vec![
                LayerSpec::new(code, hidden, Activation::Relu),
                LayerSpec::new(hidden, pixels, Activation::Sigmoid),
            ])?,
        })
    }

    /// 784-256-20 encoder, 10-way classifier, 20-256-784 decoder.
    pub fn standard() -> Self {
        Self::new(784, 256, 20, NUM_CLASSES).expect("valid widths")
    }

    pub fn param_len(&self) -> usize {
        self.encoder.param_len() + self.classifier.param_len() + self.decoder.param_len()
    }

    pub fn pixels(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn classes(&self) -> usize {
        self.classifier.output_dim()
    }

    pub fn encoder_range(&self) -> Range<usize> {
        0..self.encoder.param_len()
    }

    pub fn classifier_range(&self) -> Range<usize> {
        let start = self.encoder.param_len();
        start..start + self.classifier.param_len()
    }

    pub fn decoder_range(&self) -> Range<usize> {
        let start = self.classifier_range().end;
        start..start + self.decoder.param_len()
    }

    pub fn init_params(&self, seed: u64) -> ParameterVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = self.encoder.init_params(&mut rng);
        params.extend(self.classifier.init_params(&mut rng));
        params.extend(self.decoder.init_params(&mut rng));
        params.into()
    }

    fn forward(&self, x: &[f64], images: ArrayView2<'_, f64>) -> Result<Forward> {
        let (code, enc_cache) = self.encoder.forward(&x[self.encoder_range()], images)?;
        let (_, cls_cache) = self.classifier.forward(&x[self.classifier_range()], code.view())?;
        let (_, dec_cache) = self.decoder.forward(&x[self.decoder_range()], code.view())?;
        Ok(Forward {
            enc_cache,
            cls_cache,
            dec_cache,
        })
    }

    /// Class probabilities and reconstructions for a batch.
    pub fn predict(&self, x: &[f64], images: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if x.len() != self.param_len() {
            return Err(SeqPenError::DimensionMismatch {
                expected: self.param_len(),
                got: x.len(),
            });
        }
        let f = self.forward(x, images)?;
        Ok((f.probs().clone(), f.recon().clone()))
    }
}

/// Table-style summary of a parameter vector on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMetrics {
    pub ce_loss: f64,
    pub accuracy: f64,
    pub mse_loss: f64,
    pub mean_violation: f64,
    pub satisfied_fraction: f64,
    pub per_sample_mse: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EncDecTask {
    model: EncDecModel,
    data: Arc<ImageDataset>,
    theta: f64,
}

pub fn build_enc_dec_task(dataset: Arc<ImageDataset>, theta: f64) -> Result<EncDecTask> {
    EncDecTask::with_model(EncDecModel::standard(), dataset, theta)
}

fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

impl EncDecTask {
    pub fn with_model(model: EncDecModel, data: Arc<ImageDataset>, theta: f64) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(invalid(format!("theta must be positive, got {theta}")));
        }
        if data.is_empty() {
            return Err(SeqPenError::EmptyDataset);
        }
        if data.pixels() != model.pixels() {
            return Err(SeqPenError::DimensionMismatch {
                expected: model.pixels(),
                got: data.pixels(),
            });
        }
        Ok(Self { model, data, theta })
    }

    pub fn model(&self) -> &EncDecModel {
        &self.model
    }

    pub fn dataset(&self) -> &ImageDataset {
        &self.data
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Forward, then backward with per-row weights on the CE and MSE terms.
    /// Returns the row values; adds into `grad`.
    fn block(
        &self,
        x: &[f64],
        rows: &[usize],
        ce_weight: &dyn Fn(usize) -> f64,
        mse_weight: &dyn Fn(usize, f64) -> f64,
        grad: Option<&mut [f64]>,
    ) -> Vec<SampleEval> {
        let images = gather_rows(&self.data.images, rows);
        let fwd = self
            .model
            .forward(x, images.view())
            .expect("parameter length checked by caller");
        let classes = self.model.classes();
        let pixels = self.model.pixels();
        let mut evals = Vec::with_capacity(rows.len());
        let mut d_probs = Array2::<f64>::zeros((rows.len(), classes));
        let mut d_recon = Array2::<f64>::zeros((rows.len(), pixels));
        let (mut any_ce, mut any_mse) = (false, false);
        for (k, &j) in rows.iter().enumerate() {
            let label = self.data.labels[j] as usize;
            let probs = fwd.probs().row(k);
            let probs = probs.as_slice().expect("row-major");
            let img = images.row(k);
            let img = img.as_slice().expect("row-major");
            let rec = fwd.recon().row(k);
            let rec = rec.as_slice().expect("row-major");
            let ce = ce_loss(probs, label);
            let g = mse_loss(img, rec) - self.theta;
            evals.push(SampleEval {
                objective: ce,
                constraints: vec![g],
            });
            if grad.is_none() {
                continue;
            }
            let a = ce_weight(j);
            if a != 0.0 {
                any_ce = true;
                let dp = ce_grad(probs, label);
                d_probs
                    .row_mut(k)
                    .assign(&(ndarray::ArrayView1::from(&dp[..]).mapv(|v| a * v)));
            }
            let c = mse_weight(j, g);
            if c != 0.0 {
                any_mse = true;
                let dr = mse_grad(img, rec);
                for (d, v) in d_recon.row_mut(k).iter_mut().zip(dr) {
                    *d = c * v;
                }
            }
        }
        let Some(grad) = grad else {
            return evals;
        };
        let m = &self.model;
        let code_dim = m.encoder.output_dim();
        let mut d_code = Array2::<f64>::zeros((rows.len(), code_dim));
        if any_ce {
            let r = m.classifier_range();
            d_code += &m
                .classifier
                .backward_into(&x[r.clone()], &fwd.cls_cache, d_probs.view(), &mut grad[r])
                .expect("cache from this forward");
        }
        if any_mse {
            let r = m.decoder_range();
            d_code += &m
                .decoder
                .backward_into(&x[r.clone()], &fwd.dec_cache, d_recon.view(), &mut grad[r])
                .expect("cache from this forward");
        }
        if any_ce || any_mse {
            let r = m.encoder_range();
            m.encoder
                .backward_into(&x[r.clone()], &fwd.enc_cache, d_code.view(), &mut grad[r])
                .expect("cache from this forward");
        }
        evals
    }

    /// Metrics of `x` on an arbitrary dataset with the task's `theta`.
    pub fn metrics(&self, x: &[f64], data: &ImageDataset) -> Result<SplitMetrics> {
        if x.len() != self.model.param_len() {
            return Err(SeqPenError::DimensionMismatch {
                expected: self.model.param_len(),
                got: x.len(),
            });
        }
        if data.is_empty() {
            return Err(SeqPenError::EmptyDataset);
        }
        let n = data.len();
        let blocks = par::try_map_range(n.div_ceil(CHUNK), |b| {
            let lo = b * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let images = data.images.slice(s![lo..hi, ..]);
            let (probs, recon) = self.model.predict(x, images)?;
            let mut out = Vec::with_capacity(hi - lo);
            for k in 0..hi - lo {
                let label = data.labels[lo + k] as usize;
                let p = probs.row(k);
                let ce = ce_loss(p.as_slice().unwrap(), label);
                let correct = argmax(p) == label;
                let img = images.row(k).to_vec();
                let mse = mse_loss(&img, recon.row(k).as_slice().unwrap());
                out.push((ce, correct, mse));
            }
            Ok::<_, SeqPenError>(out)
        })?;
        let rows: Vec<(f64, bool, f64)> = blocks.into_iter().flatten().collect();
        let nf = n as f64;
        let per_sample_mse: Vec<f64> = rows.iter().map(|r| r.2).collect();
        Ok(SplitMetrics {
            ce_loss: rows.iter().map(|r| r.0).sum::<f64>() / nf,
            accuracy: rows.iter().filter(|r| r.1).count() as f64 / nf,
            mse_loss: per_sample_mse.iter().sum::<f64>() / nf,
            mean_violation: per_sample_mse.iter().map(|m| (m - self.theta).max(0.0)).sum::<f64>() / nf,
            satisfied_fraction: per_sample_mse.iter().filter(|&&m| m - self.theta <= 0.0).count() as f64 / nf,
            per_sample_mse,
        })
    }

    fn chunked<T: Send>(&self, indices: &[usize], f: impl Fn(&[usize]) -> T + Sync) -> Vec<T> {
        let chunks: Vec<&[usize]> = indices.chunks(CHUNK).collect();
        par::map_slice(&chunks, |c| f(c))
    }

    fn single_grad(&self, j: usize, x: &[f64], objective: bool) -> Vec<f64> {
        let mut grad = vec![0.0; self.dim()];
        let (a, c) = if objective { (1.0, 0.0) } else { (0.0, 1.0) };
        self.block(x, &[j], &|_| a, &|_, _| c, Some(&mut grad));
        grad
    }
}

impl FiniteSumProblem for EncDecTask {
    fn dim(&self) -> usize {
        self.model.param_len()
    }
    fn num_samples(&self) -> usize {
        self.data.len()
    }
    fn num_constraints(&self) -> usize {
        1
    }
    fn normalization(&self) -> Normalization {
        Normalization::Mean
    }
    fn lower_bound(&self) -> Option<f64> {
        Some(0.0)
    }
    fn sample_objective(&self, j: usize, x: &[f64]) -> f64 {
        self.block(x, &[j], &|_| 0.0, &|_, _| 0.0, None)[0].objective
    }
    fn sample_objective_grad(&self, j: usize, x: &[f64]) -> Vec<f64> {
        self.single_grad(j, x, true)
    }
    fn sample_constraints(&self, j: usize, x: &[f64]) -> Vec<f64> {
        self.block(x, &[j], &|_| 0.0, &|_, _| 0.0, None)
            .swap_remove(0)
            .constraints
    }
    fn sample_constraint_jacobian(&self, j: usize, x: &[f64]) -> Vec<Vec<f64>> {
        vec![self.single_grad(j, x, false)]
    }

    fn evaluate_batch(&self, x: &[f64], indices: &[usize]) -> Vec<SampleEval> {
        self.chunked(indices, |rows| self.block(x, rows, &|_| 0.0, &|_, _| 0.0, None))
            .into_iter()
            .flatten()
            .collect()
    }

    fn accumulate_gradient(
        &self,
        x: &[f64],
        indices: &[usize],
        weights: &GradientWeights<'_>,
        grad: &mut [f64],
    ) -> Vec<SampleEval> {
        let scale = weights.scale;
        let coeff = weights.constraint_coeff;
        let parts = self.chunked(indices, |rows| {
            let mut g = vec![0.0; self.dim()];
            let evals = self.block(x, rows, &|_| scale, &|j, gv| scale * coeff(j, 0, gv), Some(&mut g));
            (evals, g)
        });
        let mut evals = Vec::with_capacity(indices.len());
        for (e, g) in parts {
            for (acc, v) in grad.iter_mut().zip(g) {
                *acc += v;
            }
            evals.extend(e);
        }
        evals
    }
}
