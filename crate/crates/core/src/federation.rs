//! Schedulers and evaluation.
//!
//! * CWT: the model visits clients one after another, training on each.
//! * CWC: CWT plus a consolidation penalty anchored at the received model,
//!   with the consolidation matrix updated after every site.
//! * FedAvg: every client trains from the same global model and the server
//!   takes the sample-weighted mean.
//!
//! Serial schedulers evaluate on the global test set after every site (or
//! every local epoch), FedAvg once per round. All randomness comes from
//! substreams keyed by `(seed, round, client, epoch)`, so CWT and CWC consume
//! identical mini-batch orders and a resumed run replays exactly.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::consolidation::ConsolidationState;
use crate::data::{ClientSilo, LabeledDataset};
use crate::error::{Error, Result};
use crate::importance::{ewc_estimate, ImportanceEstimate, SiAccumulator};
use crate::nn::{self, MlpModel, ParamVector};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchedulerKind {
    Cwt,
    Cwc,
    FedAvg,
}

impl SchedulerKind {
    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Cwt => "cwt",
            SchedulerKind::Cwc => "cwc",
            SchedulerKind::FedAvg => "fedavg",
        }
    }

    pub fn is_serial(self) -> bool {
        !matches!(self, SchedulerKind::FedAvg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Estimator {
    /// Path-integral importance with damping `xi`.
    Si { xi: f64 },
    /// Diagonal empirical Fisher over at most `max_samples` training samples.
    Ewc { max_samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationConfig {
    pub sigma: f64,
    pub gamma: f64,
    pub estimator: Estimator,
    pub strict_eq4: bool,
}

impl Default for ConsolidationConfig {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            gamma: 0.5,
            estimator: Estimator::Si { xi: 0.1 },
            strict_eq4: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub num_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub scheduler: SchedulerKind,
    pub optimizer: OptimizerConfig,
    /// Keep optimizer moments when the model moves to the next site
    /// (or, for FedAvg, across rounds per client).
    pub carry_optimizer_state: bool,
    pub consolidation: ConsolidationConfig,
    pub seed: u64,
    pub eval_every_epoch: bool,
    /// Also evaluate every client's local test split at each evaluation.
    pub eval_local: bool,
    pub shuffle_site_order: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_clients: 4,
            rounds: 100,
            local_epochs: 1,
            batch_size: 64,
            scheduler: SchedulerKind::Cwc,
            optimizer: OptimizerConfig::default(),
            carry_optimizer_state: false,
            consolidation: ConsolidationConfig::default(),
            seed: 0,
            eval_every_epoch: false,
            eval_local: false,
            shuffle_site_order: false,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_clients", self.num_clients),
            ("rounds", self.rounds),
            ("local_epochs", self.local_epochs),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
        self.optimizer.validate()?;
        if self.scheduler == SchedulerKind::Cwc {
            let c = &self.consolidation;
            ConsolidationState::new(&[], c.sigma, c.gamma)?;
            match c.estimator {
                Estimator::Si { xi } if !(xi.is_finite() && xi > 0.0) => {
                    return Err(Error::InvalidArgument(format!("SI damping must be positive, got {xi}")))
                }
                Estimator::Ewc { max_samples: 0 } => {
                    return Err(Error::InvalidArgument("EWC sample cap must be positive".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Global,
    /// 1-based client id.
    Local(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Acc,
    Bacc,
    Loss,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Acc => "acc",
            Metric::Bacc => "bacc",
            Metric::Loss => "loss",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub round: usize,
    /// 1-based site just trained; 0 for an aggregated FedAvg model.
    pub site: usize,
    /// Cumulative local training epochs when the evaluation happened.
    pub epoch_global: usize,
    pub split: Split,
    pub metric: Metric,
    pub value: f64,
}

/// Append-only evaluation history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    records: Vec<LogRecord>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: LogRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.epoch_global < last.epoch_global {
                return Err(Error::InvalidArgument(format!(
                    "log epochs must not decrease: {} after {}",
                    record.epoch_global, last.epoch_global
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(epoch_global, value)` of every global-test record of `metric`.
    pub fn global_series(&self, metric: Metric) -> Vec<(usize, f64)> {
        self.global_records(metric)
            .map(|r| (r.epoch_global, r.value))
            .collect()
    }

    pub fn global_records(&self, metric: Metric) -> impl Iterator<Item = &LogRecord> {
        self.records
            .iter()
            .filter(move |r| r.split == Split::Global && r.metric == metric)
    }

    /// Highest global accuracy and the record holding it (earliest on ties).
    pub fn best_global_accuracy(&self) -> Option<&LogRecord> {
        self.global_records(Metric::Acc)
            .fold(None, |best: Option<&LogRecord>, r| match best {
                Some(b) if b.value >= r.value => Some(b),
                _ => Some(r),
            })
    }

    /// First global evaluation reaching `target` accuracy.
    pub fn first_reaching(&self, target: f64) -> Option<&LogRecord> {
        self.global_records(Metric::Acc).find(|r| r.value >= target)
    }

    /// Population standard deviation of global accuracy over the last
    /// `rounds` rounds (every evaluation in those rounds counts).
    pub fn accuracy_std_last_rounds(&self, rounds: usize) -> Option<f64> {
        let last_round = self.global_records(Metric::Acc).map(|r| r.round).max()?;
        let first = last_round.saturating_sub(rounds) + 1;
        let values: Vec<f64> = self
            .global_records(Metric::Acc)
            .filter(|r| r.round >= first)
            .map(|r| r.value)
            .collect();
        Some(population_std(&values))
    }
}

pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Accuracy, balanced accuracy and mean cross-entropy on one dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub acc: f64,
    pub bacc: f64,
    pub loss: f64,
}

const EVAL_CHUNK: usize = 500;

/// Evaluate `model` on every sample of `data`.
pub fn evaluate_model(model: &MlpModel, data: &LabeledDataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("evaluation set"));
    }
    let classes = data.num_classes();
    let mut hits = vec![0usize; classes];
    let mut support = vec![0usize; classes];
    let mut loss_sum = 0.0;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let batch = data.batch(chunk)?;
        let logits = model.forward(&batch.features)?;
        loss_sum += nn::row_losses(&logits, &batch.labels)?.iter().sum::<f64>();
        for (r, &y) in batch.labels.iter().enumerate() {
            support[y] += 1;
            if nn::argmax(logits.row(r)) == y {
                hits[y] += 1;
            }
        }
    }
    Ok(Evaluation {
        acc: hits.iter().sum::<usize>() as f64 / data.len() as f64,
        bacc: balanced_accuracy(&hits, &support),
        loss: loss_sum / data.len() as f64,
    })
}

/// Mean recall over classes that appear in the evaluation set.
pub fn balanced_accuracy(hits: &[usize], support: &[usize]) -> f64 {
    let recalls: Vec<f64> = hits
        .iter()
        .zip(support)
        .filter(|(_, &n)| n > 0)
        .map(|(&h, &n)| h as f64 / n as f64)
        .collect();
    if recalls.is_empty() {
        0.0
    } else {
        recalls.iter().sum::<f64>() / recalls.len() as f64
    }
}

pub fn evaluate(layer_dims: &[usize], params: &ParamVector, data: &LabeledDataset) -> Result<f64> {
    Ok(evaluate_model(&MlpModel::unflatten(layer_dims, params)?, data)?.acc)
}

pub fn evaluate_bacc(layer_dims: &[usize], params: &ParamVector, data: &LabeledDataset) -> Result<f64> {
    Ok(evaluate_model(&MlpModel::unflatten(layer_dims, params)?, data)?.bacc)
}

/// Federation objective: unweighted mean over clients of the mean loss on
/// each client's local test split.
pub fn global_loss(layer_dims: &[usize], params: &ParamVector, silos: &[ClientSilo]) -> Result<f64> {
    if silos.is_empty() {
        return Err(Error::EmptyDataset("no client silos"));
    }
    let model = MlpModel::unflatten(layer_dims, params)?;
    let mut total = 0.0;
    for silo in silos {
        total += evaluate_model(&model, &silo.test)?.loss;
    }
    Ok(total / silos.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LocalStats {
    pub steps: usize,
    pub mean_loss: f64,
}

/// Which importance estimate, if any, local training should produce.
#[derive(Debug, Clone, Copy)]
pub enum ImportanceRequest {
    None,
    Si { xi: f64 },
    Ewc { max_samples: usize },
}

pub struct LocalTrainOutput {
    pub params: ParamVector,
    pub importance: Option<ImportanceEstimate>,
    pub stats: LocalStats,
}

/// Identifies a local pass within the run; keys the mini-batch order.
#[derive(Debug, Clone, Copy)]
pub struct PassId {
    pub seed: u64,
    /// 1-based round.
    pub round: usize,
    /// 0-based client index.
    pub client: usize,
}

/// Train on one client's data for `epochs` epochs of shuffled mini-batches.
///
/// With a consolidation state the penalty gradient is added to every step
/// (its anchor must already hold the incoming parameters). The SI path
/// integral always uses the task gradient alone and the step the optimizer
/// actually applied. `on_epoch` runs after every epoch with the current
/// parameters.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    layer_dims: &[usize],
    mut params: ParamVector,
    train: &LabeledDataset,
    epochs: usize,
    batch_size: usize,
    optimizer: &mut Optimizer,
    consolidation: Option<&ConsolidationState>,
    importance: ImportanceRequest,
    pass: PassId,
    on_epoch: &mut dyn FnMut(usize, &ParamVector) -> Result<()>,
) -> Result<LocalTrainOutput> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("local training split"));
    }
    if epochs == 0 || batch_size == 0 {
        return Err(Error::InvalidArgument(
            "local epochs and batch size must be at least 1".into(),
        ));
    }
    let mut model = MlpModel::unflatten(layer_dims, &params)?;
    let mut si = match importance {
        ImportanceRequest::Si { xi } => Some(SiAccumulator::begin(&params, xi)?),
        _ => None,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut loss_sum = 0.0;
    let mut steps = 0;
    for epoch in 0..epochs {
        let mut rng = substream(
            pass.seed,
            Purpose::Shuffle,
            &[pass.round as u64, pass.client as u64, epoch as u64],
        );
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let batch = train.batch(chunk)?;
            model.load_params(&params)?;
            let (loss, task_grad) = model.backward(&batch)?;
            loss_sum += loss;
            steps += 1;
            let grad = match consolidation {
                Some(state) => {
                    let mut total = task_grad.clone();
                    state.add_penalty_grad(&params, &mut total)?;
                    total
                }
                None => task_grad.clone(),
            };
            match si.as_mut() {
                Some(acc) => {
                    let before = params.clone();
                    optimizer.step(&mut params, &grad)?;
                    acc.accumulate_step(&task_grad, &before, &params)?;
                }
                None => optimizer.step(&mut params, &grad)?,
            }
        }
        on_epoch(epoch, &params)?;
    }
    let importance = match (importance, si) {
        (ImportanceRequest::Si { .. }, Some(acc)) => {
            Some(acc.finalize(&params, pass.client + 1, pass.round)?)
        }
        (ImportanceRequest::Ewc { max_samples }, _) => {
            model.load_params(&params)?;
            let mut rng = substream(
                pass.seed,
                Purpose::EwcSubsample,
                &[pass.round as u64, pass.client as u64],
            );
            Some(ewc_estimate(
                &model,
                train,
                batch_size,
                max_samples,
                &mut rng,
                pass.client + 1,
                pass.round,
            )?)
        }
        _ => None,
    };
    Ok(LocalTrainOutput {
        params,
        importance,
        stats: LocalStats {
            steps,
            mean_loss: if steps > 0 { loss_sum / steps as f64 } else { 0.0 },
        },
    })
}

/// Sample-count-weighted mean of client models, summed in client-id order.
///
/// Computed as `p_first + Σ w_k (p_k - p_first)` so identical inputs come
/// back bit-for-bit.
pub fn aggregate(updates: &[(usize, usize, ParamVector)]) -> Result<ParamVector> {
    let mut sorted: Vec<&(usize, usize, ParamVector)> = updates.iter().collect();
    sorted.sort_by_key(|(client, _, _)| *client);
    let Some(first) = sorted.first() else {
        return Err(Error::EmptyDataset("no client updates to aggregate"));
    };
    let total: usize = sorted.iter().map(|(_, n, _)| n).sum();
    if total == 0 {
        return Err(Error::EmptyDataset("client updates carry no samples"));
    }
    let base = &first.2;
    let mut out = base.clone();
    for (_, n, p) in &sorted[1..] {
        Error::check_len("aggregated parameters", base.len(), p.len())?;
        let w = *n as f64 / total as f64;
        for ((o, &x), &b) in out.iter_mut().zip(p.iter()).zip(base.iter()) {
            *o += w * (x - b);
        }
    }
    Ok(out)
}

/// One evaluation of the global model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteEvaluation {
    pub site: usize,
    pub epoch_global: usize,
    pub global: Evaluation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub round: usize,
    pub evaluations: Vec<SiteEvaluation>,
    pub params: ParamVector,
}

/// Fixed inputs shared by every round of a run.
#[derive(Clone, Copy)]
pub struct RoundContext<'a> {
    pub cfg: &'a FederationConfig,
    pub layer_dims: &'a [usize],
    pub silos: &'a [ClientSilo],
    pub test: &'a LabeledDataset,
}

impl RoundContext<'_> {
    fn check(&self) -> Result<()> {
        self.cfg.validate()?;
        Error::check_len("client silos", self.cfg.num_clients, self.silos.len())
    }

    fn site_order(&self, round: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.silos.len()).collect();
        if self.cfg.shuffle_site_order {
            order.shuffle(&mut substream(self.cfg.seed, Purpose::SiteOrder, &[round as u64]));
        }
        order
    }

    fn record(
        &self,
        log: &mut RunLog,
        evals: &mut Vec<SiteEvaluation>,
        params: &ParamVector,
        round: usize,
        site: usize,
        epoch_global: usize,
    ) -> Result<()> {
        let model = MlpModel::unflatten(self.layer_dims, params)?;
        let global = evaluate_model(&model, self.test)?;
        for (metric, value) in [
            (Metric::Acc, global.acc),
            (Metric::Bacc, global.bacc),
            (Metric::Loss, global.loss),
        ] {
            log.push(LogRecord {
                round,
                site,
                epoch_global,
                split: Split::Global,
                metric,
                value,
            })?;
        }
        if self.cfg.eval_local {
            for silo in self.silos.iter().filter(|s| !s.test.is_empty()) {
                let local = evaluate_model(&model, &silo.test)?;
                for (metric, value) in [(Metric::Acc, local.acc), (Metric::Loss, local.loss)] {
                    log.push(LogRecord {
                        round,
                        site,
                        epoch_global,
                        split: Split::Local(silo.client_id + 1),
                        metric,
                        value,
                    })?;
                }
            }
        }
        evals.push(SiteEvaluation {
            site,
            epoch_global,
            global,
        });
        Ok(())
    }

    /// Serial pass over all sites; shared by CWT and CWC.
    fn serial_round(
        &self,
        mut params: ParamVector,
        round: usize,
        optimizer: &mut Optimizer,
        mut consolidation: Option<&mut ConsolidationState>,
        log: &mut RunLog,
    ) -> Result<RoundResult> {
        let cfg = self.cfg;
        let k = self.silos.len();
        let epochs = cfg.local_epochs;
        let mut evals = Vec::new();
        let order = self.site_order(round);
        for (pos, &client) in order.iter().enumerate() {
            let silo = &self.silos[client];
            let site = client + 1;
            if !cfg.carry_optimizer_state {
                *optimizer = cfg.optimizer.fresh_state(params.len());
            }
            let request = match consolidation {
                Some(_) => match cfg.consolidation.estimator {
                    Estimator::Si { xi } => ImportanceRequest::Si { xi },
                    Estimator::Ewc { max_samples } => ImportanceRequest::Ewc { max_samples },
                },
                None => ImportanceRequest::None,
            };
            if let Some(state) = consolidation.as_deref_mut() {
                state.set_anchor(&params)?;
            }
            let epochs_before = ((round - 1) * k + pos) * epochs;
            let mut on_epoch = |epoch: usize, p: &ParamVector| -> Result<()> {
                if cfg.eval_every_epoch || epoch + 1 == epochs {
                    self.record(log, &mut evals, p, round, site, epochs_before + epoch + 1)?;
                }
                Ok(())
            };
            let out = local_train(
                self.layer_dims,
                params,
                &silo.train,
                epochs,
                cfg.batch_size,
                optimizer,
                consolidation.as_deref(),
                request,
                PassId {
                    seed: cfg.seed,
                    round,
                    client,
                },
                &mut on_epoch,
            )?;
            params = out.params;
            if let (Some(state), Some(estimate)) = (consolidation.as_deref_mut(), out.importance) {
                if pos + 1 < k {
                    state.accumulate_site(&estimate)?;
                } else {
                    state.attenuate_round(&estimate)?;
                }
            }
        }
        Ok(RoundResult {
            round,
            evaluations: evals,
            params,
        })
    }
}

/// Serial round without consolidation.
pub fn cwt_round(
    ctx: &RoundContext<'_>,
    params: ParamVector,
    round: usize,
    optimizer: &mut Optimizer,
    log: &mut RunLog,
) -> Result<RoundResult> {
    ctx.check()?;
    ctx.serial_round(params, round, optimizer, None, log)
}

/// Serial round under the consolidation penalty.
pub fn cwc_round(
    ctx: &RoundContext<'_>,
    params: ParamVector,
    round: usize,
    optimizer: &mut Optimizer,
    state: &mut ConsolidationState,
    log: &mut RunLog,
) -> Result<RoundResult> {
    ctx.check()?;
    Error::check_len("consolidation state", params.len(), state.matrix().len())?;
    ctx.serial_round(params, round, optimizer, Some(state), log)
}

/// Parallel round: every client trains from `params`, then weighted averaging.
pub fn fedavg_round(
    ctx: &RoundContext<'_>,
    params: ParamVector,
    round: usize,
    optimizers: &mut [Optimizer],
    log: &mut RunLog,
) -> Result<RoundResult> {
    ctx.check()?;
    let cfg = ctx.cfg;
    Error::check_len("client optimizers", ctx.silos.len(), optimizers.len())?;
    let mut updates = Vec::with_capacity(ctx.silos.len());
    for (client, (silo, optimizer)) in ctx.silos.iter().zip(optimizers.iter_mut()).enumerate() {
        if !cfg.carry_optimizer_state {
            *optimizer = cfg.optimizer.fresh_state(params.len());
        }
        let out = local_train(
            ctx.layer_dims,
            params.clone(),
            &silo.train,
            cfg.local_epochs,
            cfg.batch_size,
            optimizer,
            None,
            ImportanceRequest::None,
            PassId {
                seed: cfg.seed,
                round,
                client,
            },
            &mut |_, _| Ok(()),
        )?;
        updates.push((client, silo.train.len(), out.params));
    }
    let params = aggregate(&updates)?;
    let mut evals = Vec::with_capacity(1);
    let epoch_global = round * ctx.silos.len() * cfg.local_epochs;
    ctx.record(log, &mut evals, &params, round, 0, epoch_global)?;
    Ok(RoundResult {
        round,
        evaluations: evals,
        params,
    })
}

/// Everything needed to continue a run from the next round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationState {
    /// 1-based round that runs next.
    pub next_round: usize,
    pub params: ParamVector,
    /// One optimizer for serial schedulers, one per client for FedAvg.
    pub optimizers: Vec<Optimizer>,
    pub consolidation: Option<ConsolidationState>,
    pub log: RunLog,
}

/// A run of one scheduler over fixed silos.
pub struct Federation<'a> {
    ctx: RoundContext<'a>,
    state: FederationState,
}

impl<'a> Federation<'a> {
    /// Fresh run with Glorot-initialized parameters from the seed's init stream.
    pub fn new(ctx: RoundContext<'a>) -> Result<Self> {
        ctx.check()?;
        let mut rng = substream(ctx.cfg.seed, Purpose::Init, &[]);
        let params = MlpModel::init(ctx.layer_dims, &mut rng)?.flatten();
        let state = Self::initial_state(&ctx, params)?;
        Ok(Self { ctx, state })
    }

    /// Fresh run starting from the given parameters.
    pub fn with_params(ctx: RoundContext<'a>, params: ParamVector) -> Result<Self> {
        ctx.check()?;
        Error::check_len("initial parameters", nn::param_count(ctx.layer_dims), params.len())?;
        let state = Self::initial_state(&ctx, params)?;
        Ok(Self { ctx, state })
    }

    pub fn resume(ctx: RoundContext<'a>, state: FederationState) -> Result<Self> {
        ctx.check()?;
        let n = nn::param_count(ctx.layer_dims);
        Error::check_len("checkpoint parameters", n, state.params.len())?;
        let expected_opts = if ctx.cfg.scheduler.is_serial() { 1 } else { ctx.silos.len() };
        Error::check_len("checkpoint optimizers", expected_opts, state.optimizers.len())?;
        if (ctx.cfg.scheduler == SchedulerKind::Cwc) != state.consolidation.is_some() {
            return Err(Error::InvalidArgument(
                "checkpoint consolidation state does not match the scheduler".into(),
            ));
        }
        Ok(Self { ctx, state })
    }

    fn initial_state(ctx: &RoundContext<'_>, params: ParamVector) -> Result<FederationState> {
        let cfg = ctx.cfg;
        let n_opts = if cfg.scheduler.is_serial() { 1 } else { ctx.silos.len() };
        let optimizers = (0..n_opts).map(|_| cfg.optimizer.fresh_state(params.len())).collect();
        let consolidation = match cfg.scheduler {
            SchedulerKind::Cwc => Some(
                ConsolidationState::new(&params, cfg.consolidation.sigma, cfg.consolidation.gamma)?
                    .with_strict_eq4(cfg.consolidation.strict_eq4),
            ),
            _ => None,
        };
        Ok(FederationState {
            next_round: 1,
            params,
            optimizers,
            consolidation,
            log: RunLog::new(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.state.next_round > self.ctx.cfg.rounds
    }

    pub fn state(&self) -> &FederationState {
        &self.state
    }

    pub fn into_state(self) -> FederationState {
        self.state
    }

    pub fn log(&self) -> &RunLog {
        &self.state.log
    }

    pub fn params(&self) -> &ParamVector {
        &self.state.params
    }

    pub fn run_round(&mut self) -> Result<RoundResult> {
        if self.is_finished() {
            return Err(Error::InvalidArgument("all rounds already ran".into()));
        }
        let round = self.state.next_round;
        let st = &mut self.state;
        let params = std::mem::take(&mut st.params);
        let result = match self.ctx.cfg.scheduler {
            SchedulerKind::Cwt => cwt_round(&self.ctx, params, round, &mut st.optimizers[0], &mut st.log),
            SchedulerKind::Cwc => {
                let cs = st.consolidation.as_mut().expect("checked at construction");
                cwc_round(&self.ctx, params, round, &mut st.optimizers[0], cs, &mut st.log)
            }
            SchedulerKind::FedAvg => fedavg_round(&self.ctx, params, round, &mut st.optimizers, &mut st.log),
        }?;
        st.params = result.params.clone();
        st.next_round += 1;
        Ok(result)
    }

    /// Run every remaining round.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.run_round()?;
        }
        Ok(())
    }
}
