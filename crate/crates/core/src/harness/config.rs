//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::{PartitionKind, PartitionSpec};
use crate::error::{Error, FormatError, Result};
use crate::federation::{ConsolidationConfig, Estimator, FederationConfig, SchedulerKind};
use crate::optim::{AdamConfig, OptimizerConfig, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    pub fn num_classes(self) -> usize {
        10
    }

    /// Default `(sigma, gamma)` for the consolidation penalty.
    pub fn default_consolidation(self) -> (f64, f64) {
        match self {
            DatasetKind::Mnist => (0.1, 0.5),
            DatasetKind::Cifar10 => (10.0, 0.9),
        }
    }
}

/// Where the global evaluation set comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestSetKind {
    /// Class-balanced holdout carved from the merged train+test pool.
    Holdout,
    /// The dataset's own test split; clients share the training split.
    Official,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    LocalEpochs,
    Sigma,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::LocalEpochs => "local_epochs",
            SweepAxis::Sigma => "sigma",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
    pub target_acc: f64,
    /// Rounds covered by the oscillation statistic.
    pub tail_rounds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    /// Seeded subset of the loaded pool, taken before the holdout.
    pub max_samples: Option<usize>,
    pub test_set: TestSetKind,
    pub holdout_per_class: usize,
    pub local_train_ratio: f64,
    pub partition: PartitionSpec,
    pub hidden: Vec<usize>,
    pub federation: FederationConfig,
    pub output_dir: PathBuf,
    pub svg: bool,
    /// Write a checkpoint every this many rounds; 0 disables.
    pub checkpoint_every: usize,
    pub resume: Option<PathBuf>,
    /// Stop (and checkpoint) after this round.
    pub stop_after: Option<usize>,
    pub sweep: SweepConfig,
}

/// Every key the parser accepts.
pub const KEYS: &[&str] = &[
    "dataset",
    "data_dir",
    "max_samples",
    "test_set",
    "holdout_per_class",
    "local_train_ratio",
    "partition",
    "alpha",
    "classes_per_client",
    "num_clients",
    "hidden",
    "scheduler",
    "rounds",
    "local_epochs",
    "batch_size",
    "optimizer",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "carry_optimizer_state",
    "sigma",
    "gamma",
    "estimator",
    "xi",
    "ewc_max_samples",
    "strict_eq4",
    "seed",
    "eval_every_epoch",
    "eval_local",
    "shuffle_site_order",
    "output_dir",
    "svg",
    "checkpoint_every",
    "resume",
    "stop_after",
    "sweep_axis",
    "sweep_values",
    "target_acc",
    "tail_rounds",
];

/// Split config text into `(line, key, value)` entries.
///
/// Blank lines and `#` comments are skipped; a key may appear only once.
pub fn parse_config_text(text: &str) -> Result<Vec<(usize, String, String)>, FormatError> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(malformed(line_no, "expected `key = value`"));
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(malformed(line_no, format!("invalid key `{key}`")));
        }
        if out.iter().any(|(_, k, _)| k == key) {
            return Err(malformed(line_no, format!("duplicate key `{key}`")));
        }
        out.push((line_no, key.to_string(), value.to_string()));
    }
    Ok(out)
}

fn malformed(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Malformed {
        line,
        message: message.into(),
    }
}

struct Fields {
    map: BTreeMap<String, String>,
}

impl Fields {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("`{key}`: invalid value `{v}`"))),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn flag(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key).as_deref() {
            None => Ok(default),
            Some("true" | "1" | "yes" | "on") => Ok(true),
            Some("false" | "0" | "no" | "off") => Ok(false),
            Some(v) => Err(Error::Config(format!("`{key}`: expected a boolean, got `{v}`"))),
        }
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)]) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => options
                .iter()
                .find(|(name, _)| name.eq_ignore_ascii_case(&v))
                .map(|(_, t)| Some(*t))
                .ok_or_else(|| {
                    let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                    Error::Config(format!("`{key}`: expected one of {}, got `{v}`", names.join("|")))
                }),
        }
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) if v.is_empty() => Ok(Some(Vec::new())),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<T>()
                        .map_err(|_| Error::Config(format!("`{key}`: invalid list entry `{s}`")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }
}

impl ExperimentConfig {
    /// Parse config text, then apply `overrides` (later entries win).
    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let entries = parse_config_text(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut map: BTreeMap<String, String> =
            entries.into_iter().map(|(_, k, v)| (k, v)).collect();
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        Self::from_map(map)
    }

    pub fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        if let Some(unknown) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key `{unknown}`")));
        }
        let mut f = Fields { map };
        let dataset = f
            .choice("dataset", &[("mnist", DatasetKind::Mnist), ("cifar10", DatasetKind::Cifar10)])?
            .unwrap_or(DatasetKind::Mnist);
        let data_dir = f
            .take("data_dir")
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config("`data_dir` is required".into()))?;
        let max_samples = f.parse("max_samples")?;
        let seed = f.or("seed", 0u64)?;
        let num_clients = f.or("num_clients", 4usize)?;
        let kind = match f
            .choice("partition", &[("dirichlet", false), ("disjoint", true)])?
            .unwrap_or(false)
        {
            false => PartitionKind::Dirichlet {
                alpha: f.or("alpha", 0.01)?,
            },
            true => PartitionKind::DisjointConsecutive {
                classes_per_client: f.or("classes_per_client", 2usize)?,
            },
        };
        f.take("alpha");
        f.take("classes_per_client");
        let default_test = match kind {
            PartitionKind::Dirichlet { .. } => TestSetKind::Holdout,
            PartitionKind::DisjointConsecutive { .. } => TestSetKind::Official,
        };
        let test_set = f
            .choice("test_set", &[("holdout", TestSetKind::Holdout), ("official", TestSetKind::Official)])?
            .unwrap_or(default_test);
        let holdout_per_class = f.or("holdout_per_class", 500usize)?;
        let local_train_ratio = f.or("local_train_ratio", 0.9)?;
        let hidden = f.list("hidden")?.unwrap_or_else(|| match dataset {
            DatasetKind::Mnist => vec![256, 256],
            DatasetKind::Cifar10 => vec![1024, 1024],
        });

        let scheduler = f
            .choice(
                "scheduler",
                &[("cwt", SchedulerKind::Cwt), ("cwc", SchedulerKind::Cwc), ("fedavg", SchedulerKind::FedAvg)],
            )?
            .unwrap_or(SchedulerKind::Cwc);
        let lr = f.parse::<f64>("lr")?;
        let optimizer = match f.choice("optimizer", &[("adam", false), ("sgd", true)])?.unwrap_or(false) {
            false => {
                let d = AdamConfig::default();
                OptimizerConfig::Adam(AdamConfig {
                    lr: lr.unwrap_or(d.lr),
                    beta1: f.or("beta1", d.beta1)?,
                    beta2: f.or("beta2", d.beta2)?,
                    eps: f.or("eps", d.eps)?,
                })
            }
            true => {
                for k in ["beta1", "beta2", "eps"] {
                    if f.take(k).is_some() {
                        return Err(Error::Config(format!("`{k}` only applies to the adam optimizer")));
                    }
                }
                OptimizerConfig::Sgd(SgdConfig { lr: lr.unwrap_or(0.01) })
            }
        };
        let (default_sigma, default_gamma) = dataset.default_consolidation();
        let estimator = match f.choice("estimator", &[("si", false), ("ewc", true)])?.unwrap_or(false) {
            false => Estimator::Si { xi: f.or("xi", 0.1)? },
            true => Estimator::Ewc {
                max_samples: f.or("ewc_max_samples", 2000usize)?,
            },
        };
        f.take("xi");
        f.take("ewc_max_samples");
        let consolidation = ConsolidationConfig {
            sigma: f.or("sigma", default_sigma)?,
            gamma: f.or("gamma", default_gamma)?,
            estimator,
            strict_eq4: f.flag("strict_eq4", false)?,
        };
        let federation = FederationConfig {
            num_clients,
            rounds: f.or("rounds", 100usize)?,
            local_epochs: f.or("local_epochs", 1usize)?,
            batch_size: f.or("batch_size", 64usize)?,
            scheduler,
            optimizer,
            carry_optimizer_state: f.flag("carry_optimizer_state", false)?,
            consolidation,
            seed,
            eval_every_epoch: f.flag("eval_every_epoch", false)?,
            eval_local: f.flag("eval_local", false)?,
            shuffle_site_order: f.flag("shuffle_site_order", false)?,
        };
        let output_dir = PathBuf::from(f.take("output_dir").unwrap_or_else(|| "out".into()));
        let svg = f.flag("svg", true)?;
        let checkpoint_every = f.or("checkpoint_every", 0usize)?;
        let resume = f.take("resume").filter(|s| !s.is_empty()).map(PathBuf::from);
        let stop_after = f.parse("stop_after")?;
        let axis = f.choice(
            "sweep_axis",
            &[("local_epochs", SweepAxis::LocalEpochs), ("sigma", SweepAxis::Sigma)],
        )?;
        let sweep = SweepConfig {
            axis,
            values: f.list("sweep_values")?.unwrap_or_default(),
            target_acc: f.or("target_acc", 0.75)?,
            tail_rounds: f.or("tail_rounds", 20usize)?,
        };
        debug_assert!(f.map.is_empty(), "unconsumed keys {:?}", f.map.keys());

        let cfg = Self {
            dataset,
            data_dir,
            max_samples,
            test_set,
            holdout_per_class,
            local_train_ratio,
            partition: PartitionSpec {
                kind,
                num_clients,
                seed,
            },
            hidden,
            federation,
            output_dir,
            svg,
            checkpoint_every,
            resume,
            stop_after,
            sweep,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.partition.validate(self.dataset.num_classes()).map_err(as_config)?;
        self.federation.validate().map_err(as_config)?;
        if !(0.0..=1.0).contains(&self.local_train_ratio) {
            return Err(Error::Config(format!(
                "`local_train_ratio` must lie in [0, 1], got {}",
                self.local_train_ratio
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("`hidden` layer widths must be positive".into()));
        }
        if self.max_samples == Some(0) {
            return Err(Error::Config("`max_samples` must be positive".into()));
        }
        if let Some(stop) = self.stop_after {
            if stop == 0 || stop > self.federation.rounds {
                return Err(Error::Config(format!("`stop_after` must lie in 1..={}", self.federation.rounds)));
            }
        }
        if !(0.0..=1.0).contains(&self.sweep.target_acc) {
            return Err(Error::Config("`target_acc` must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Layer widths of the model for `input_dim` features.
    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(self.dataset.num_classes());
        dims
    }

    /// Canonical `key = value` lines of every setting that affects results.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("dataset", self.dataset.name().into());
        line("data_dir", self.data_dir.display().to_string());
        if let Some(n) = self.max_samples {
            line("max_samples", n.to_string());
        }
        line(
            "test_set",
            match self.test_set {
                TestSetKind::Holdout => "holdout",
                TestSetKind::Official => "official",
            }
            .into(),
        );
        if self.test_set == TestSetKind::Holdout {
            line("holdout_per_class", self.holdout_per_class.to_string());
        }
        line("local_train_ratio", self.local_train_ratio.to_string());
        match self.partition.kind {
            PartitionKind::Dirichlet { alpha } => {
                line("partition", "dirichlet".into());
                line("alpha", alpha.to_string());
            }
            PartitionKind::DisjointConsecutive { classes_per_client } => {
                line("partition", "disjoint".into());
                line("classes_per_client", classes_per_client.to_string());
            }
        }
        line("num_clients", self.partition.num_clients.to_string());
        line(
            "hidden",
            self.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
        );
        let fed = &self.federation;
        line("scheduler", fed.scheduler.name().into());
        line("rounds", fed.rounds.to_string());
        line("local_epochs", fed.local_epochs.to_string());
        line("batch_size", fed.batch_size.to_string());
        match fed.optimizer {
            OptimizerConfig::Adam(a) => {
                line("optimizer", "adam".into());
                line("lr", a.lr.to_string());
                line("beta1", a.beta1.to_string());
                line("beta2", a.beta2.to_string());
                line("eps", a.eps.to_string());
            }
            OptimizerConfig::Sgd(c) => {
                line("optimizer", "sgd".into());
                line("lr", c.lr.to_string());
            }
        }
        line("carry_optimizer_state", fed.carry_optimizer_state.to_string());
        if fed.scheduler == SchedulerKind::Cwc {
            let c = &fed.consolidation;
            line("sigma", c.sigma.to_string());
            line("gamma", c.gamma.to_string());
            match c.estimator {
                Estimator::Si { xi } => {
                    line("estimator", "si".into());
                    line("xi", xi.to_string());
                }
                Estimator::Ewc { max_samples } => {
                    line("estimator", "ewc".into());
                    line("ewc_max_samples", max_samples.to_string());
                }
            }
            line("strict_eq4", c.strict_eq4.to_string());
        }
        line("seed", fed.seed.to_string());
        line("eval_every_epoch", fed.eval_every_epoch.to_string());
        line("eval_local", fed.eval_local.to_string());
        line("shuffle_site_order", fed.shuffle_site_order.to_string());
        s
    }

    /// Copy with one sweep axis set to `value`.
    pub fn with_axis_value(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        match axis {
            SweepAxis::LocalEpochs => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::Config(format!("local_epochs sweep value must be a positive integer, got {value}")));
                }
                cfg.federation.local_epochs = value as usize;
                cfg.federation.eval_every_epoch = true;
            }
            SweepAxis::Sigma => cfg.federation.consolidation.sigma = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn parses_comments_and_blank_lines() {
        let e = parse_config_text("# header\n\nrounds = 3  # trailing\n lr=0.5\n").unwrap();
        assert_eq!(e, vec![(3, "rounds".into(), "3".into()), (4, "lr".into(), "0.5".into())]);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            parse_config_text("rounds 3"),
            Err(FormatError::Malformed { line: 1, .. })
        ));
        assert!(parse_config_text("a = 1\na = 2").is_err());
        assert!(parse_config_text("bad key = 1").is_err());
    }

    #[test]
    fn defaults_follow_dataset() {
        let m = ExperimentConfig::from_text("data_dir = x", &[]).unwrap();
        assert_eq!(m.hidden, vec![256, 256]);
        assert_eq!((m.federation.consolidation.sigma, m.federation.consolidation.gamma), (0.1, 0.5));
        assert_eq!(m.federation.batch_size, 64);
        assert_eq!(m.test_set, TestSetKind::Holdout);
        let c = ExperimentConfig::from_text("data_dir = x\ndataset = cifar10", &[]).unwrap();
        assert_eq!((c.federation.consolidation.sigma, c.federation.consolidation.gamma), (10.0, 0.9));
        assert_eq!(c.layer_dims(3072), vec![3072, 1024, 1024, 10]);
    }

    #[test]
    fn overrides_win_and_unknown_keys_fail() {
        let c = ExperimentConfig::from_text("data_dir = x\nrounds = 5", &ov(&[("rounds", "7")])).unwrap();
        assert_eq!(c.federation.rounds, 7);
        let err = ExperimentConfig::from_text("data_dir = x", &ov(&[("roundz", "7")])).unwrap_err();
        assert!(err.to_string().contains("roundz"));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for (k, v) in [
            ("rounds", "0"),
            ("alpha", "-1"),
            ("gamma", "1.5"),
            ("scheduler", "fedprox"),
            ("svg", "maybe"),
            ("lr", "fast"),
            ("stop_after", "200"),
        ] {
            let r = ExperimentConfig::from_text("data_dir = x", &ov(&[(k, v)]));
            assert!(matches!(r, Err(Error::Config(_))), "{k}={v}: {r:?}");
        }
        assert!(matches!(ExperimentConfig::from_text("rounds = 1", &[]), Err(Error::Config(_))));
        let disjoint = ov(&[("partition", "disjoint"), ("num_clients", "4")]);
        assert!(ExperimentConfig::from_text("data_dir = x", &disjoint).is_err());
    }

    #[test]
    fn disjoint_defaults_to_official_test() {
        let c = ExperimentConfig::from_text(
            "data_dir = x\npartition = disjoint\nnum_clients = 5",
            &[],
        )
        .unwrap();
        assert_eq!(c.test_set, TestSetKind::Official);
        assert_eq!(
            c.partition.kind,
            PartitionKind::DisjointConsecutive { classes_per_client: 2 }
        );
    }

    #[test]
    fn echo_round_trips() {
        let c = ExperimentConfig::from_text(
            "data_dir = d\nscheduler = cwc\nestimator = ewc\nalpha = 0.1\nmax_samples = 2000\nlr = 0.0005",
            &[],
        )
        .unwrap();
        let again = ExperimentConfig::from_text(&c.echo(), &ov(&[("output_dir", "out")])).unwrap();
        assert_eq!(again.echo(), c.echo());
        assert_eq!(again, c);
    }

    #[test]
    fn sweep_axis_forces_per_epoch_evaluation() {
        let c = ExperimentConfig::from_text("data_dir = x", &[]).unwrap();
        let e4 = c.with_axis_value(SweepAxis::LocalEpochs, 4.0).unwrap();
        assert_eq!(e4.federation.local_epochs, 4);
        assert!(e4.federation.eval_every_epoch);
        assert!(c.with_axis_value(SweepAxis::LocalEpochs, 1.5).is_err());
        assert_eq!(c.with_axis_value(SweepAxis::Sigma, 0.0).unwrap().federation.consolidation.sigma, 0.0);
    }
}
