//! Per-parameter importance of a finished local pass.
//!
//! Two estimators are available: the synaptic-intelligence path integral
//! (`SiAccumulator`), which is collected online during training, and the
//! diagonal empirical Fisher (`ewc_estimate`), computed after the pass.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{MlpModel, ParamVector};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEstimate {
    values: ParamVector,
    pub site: usize,
    pub round: usize,
}

impl ImportanceEstimate {
    /// Wrap values after checking they are finite and non-negative.
    pub fn new(values: ParamVector, site: usize, round: usize) -> Result<Self> {
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    context: "importance estimate",
                    index,
                });
            }
            if value < 0.0 {
                return Err(Error::NegativeImportance { index, value });
            }
        }
        Ok(Self {
            values,
            site,
            round,
        })
    }

    pub fn zeros(len: usize, site: usize, round: usize) -> Self {
        Self {
            values: ParamVector::zeros(len),
            site,
            round,
        }
    }

    pub fn values(&self) -> &ParamVector {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Running path integral `ω_i = Σ -g_i Δθ_i` for one local pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SiAccumulator {
    omega: ParamVector,
    theta_start: ParamVector,
    xi: f64,
}

impl SiAccumulator {
    pub fn begin(params: &[f64], xi: f64) -> Result<Self> {
        if !(xi.is_finite() && xi > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "SI damping must be positive, got {xi}"
            )));
        }
        Ok(Self {
            omega: ParamVector::zeros(params.len()),
            theta_start: params.to_vec().into(),
            xi,
        })
    }

    pub fn omega(&self) -> &ParamVector {
        &self.omega
    }

    pub fn theta_start(&self) -> &ParamVector {
        &self.theta_start
    }

    /// Fold in one optimizer step: `task_grad` is the gradient of the task
    /// loss alone and `delta` the change the optimizer actually applied.
    pub fn accumulate(&mut self, task_grad: &[f64], delta: &[f64]) -> Result<()> {
        Error::check_len("SI task gradient", self.omega.len(), task_grad.len())?;
        Error::check_len("SI parameter delta", self.omega.len(), delta.len())?;
        for ((w, g), d) in self.omega.iter_mut().zip(task_grad).zip(delta) {
            *w -= g * d;
        }
        Ok(())
    }

    /// Like `accumulate`, taking the step as `after - before`.
    pub fn accumulate_step(&mut self, task_grad: &[f64], before: &[f64], after: &[f64]) -> Result<()> {
        Error::check_len("SI task gradient", self.omega.len(), task_grad.len())?;
        Error::check_len("SI parameters", self.omega.len(), before.len())?;
        Error::check_len("SI parameters", self.omega.len(), after.len())?;
        for (((w, g), b), a) in self.omega.iter_mut().zip(task_grad).zip(before).zip(after) {
            *w -= g * (a - b);
        }
        Ok(())
    }

    /// `E_i = max(0, ω_i) / ((θ_end,i - θ_start,i)² + ξ)`.
    pub fn finalize(self, params_end: &[f64], site: usize, round: usize) -> Result<ImportanceEstimate> {
        Error::check_len("SI final parameters", self.omega.len(), params_end.len())?;
        let values: Vec<f64> = self
            .omega
            .iter()
            .zip(params_end)
            .zip(self.theta_start.iter())
            .map(|((&w, &end), &start)| {
                let moved = end - start;
                w.max(0.0) / (moved * moved + self.xi)
            })
            .collect();
        ImportanceEstimate::new(values.into(), site, round)
    }
}

/// Diagonal empirical Fisher: mean over samples of the squared per-sample
/// gradient under the true labels.
///
/// At most `max_samples` samples are used; larger datasets are subsampled by
/// a seeded index shuffle.
pub fn ewc_estimate(
    model: &MlpModel,
    data: &LabeledDataset,
    batch_size: usize,
    max_samples: usize,
    rng: &mut Rng,
    site: usize,
    round: usize,
) -> Result<ImportanceEstimate> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("EWC estimate needs training samples"));
    }
    if batch_size == 0 || max_samples == 0 {
        return Err(Error::InvalidArgument(
            "EWC batch size and sample cap must be positive".into(),
        ));
    }
    let mut indices: Vec<usize> = (0..data.len()).collect();
    if indices.len() > max_samples {
        indices.shuffle(rng);
        indices.truncate(max_samples);
        indices.sort_unstable();
    }
    let mut total = ParamVector::zeros(model.param_count());
    for chunk in indices.chunks(batch_size) {
        let batch = data.batch(chunk)?;
        let sq = model.per_sample_sq_grad_sum(&batch)?;
        for (t, s) in total.iter_mut().zip(sq.iter()) {
            *t += s;
        }
    }
    let n = indices.len() as f64;
    total.iter_mut().for_each(|v| *v /= n);
    ImportanceEstimate::new(total, site, round)
}
