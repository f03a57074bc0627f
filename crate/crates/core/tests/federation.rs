//! Whole-federation behavior on the bundled MNIST fixture.

use cwc_core::federation::{Federation, Metric, RoundContext, RunLog, SchedulerKind};
use cwc_core::harness::{prepare_data, ExperimentConfig, PreparedData};
use cwc_core::ParamVector;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/mnist-5k");

fn config(extra: &[(&str, &str)]) -> ExperimentConfig {
    let base = format!("data_dir = {FIXTURE}\nholdout_per_class = 50\n");
    let overrides: Vec<_> = extra.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    ExperimentConfig::from_text(&base, &overrides).unwrap()
}

fn run(cfg: &ExperimentConfig, data: &PreparedData) -> (ParamVector, RunLog) {
    let ctx = RoundContext {
        cfg: &cfg.federation,
        layer_dims: &data.layer_dims,
        silos: &data.silos,
        test: &data.test,
    };
    let mut fed = Federation::new(ctx).unwrap();
    fed.run().unwrap();
    (fed.params().clone(), fed.log().clone())
}

fn global_acc(log: &RunLog) -> Vec<(usize, f64)> {
    log.global_series(Metric::Acc)
}

#[test]
fn single_client_learns_the_fixture() {
    let cfg = config(&[("num_clients", "1"), ("rounds", "1"), ("local_epochs", "5"), ("scheduler", "cwt")]);
    let data = prepare_data(&cfg).unwrap();
    assert_eq!(data.test.len(), 500);
    let (_, log) = run(&cfg, &data);
    let best = log.best_global_accuracy().unwrap().value;
    assert!(best >= 0.9, "accuracy {best}");
}

#[test]
fn one_client_makes_fedavg_and_cwt_coincide() {
    let base = [("num_clients", "1"), ("rounds", "3"), ("hidden", "32"), ("max_samples", "1500")];
    let with = |s: &'static str| {
        let mut v = base.to_vec();
        v.push(("scheduler", s));
        config(&v)
    };
    let cwt = with("cwt");
    let data = prepare_data(&cwt).unwrap();
    let (p_cwt, log_cwt) = run(&cwt, &data);
    let (p_avg, log_avg) = run(&with("fedavg"), &data);
    assert!(p_cwt.bit_eq(&p_avg));
    assert_eq!(global_acc(&log_cwt), global_acc(&log_avg));
    assert_eq!(cwt.federation.scheduler, SchedulerKind::Cwt);
}

#[test]
fn first_round_of_one_client_cwc_is_plain_training() {
    let base = [("num_clients", "1"), ("rounds", "1"), ("hidden", "32"), ("max_samples", "1500")];
    let mut a = base.to_vec();
    a.push(("scheduler", "cwc"));
    let mut b = base.to_vec();
    b.push(("scheduler", "cwt"));
    let (cwc, cwt) = (config(&a), config(&b));
    let data = prepare_data(&cwc).unwrap();
    assert!(run(&cwc, &data).0.bit_eq(&run(&cwt, &data).0));
}

#[test]
fn consolidation_changes_later_rounds() {
    let base = [("num_clients", "2"), ("rounds", "2"), ("hidden", "32"), ("max_samples", "1500"), ("alpha", "0.1")];
    let mut a = base.to_vec();
    a.push(("scheduler", "cwc"));
    a.push(("sigma", "10"));
    let mut b = base.to_vec();
    b.push(("scheduler", "cwt"));
    let (cwc, cwt) = (config(&a), config(&b));
    let data = prepare_data(&cwc).unwrap();
    let (p_cwc, log_cwc) = run(&cwc, &data);
    let (p_cwt, log_cwt) = run(&cwt, &data);
    assert!(!p_cwc.bit_eq(&p_cwt));
    // The first site of the first round trains with an all-zero matrix.
    assert_eq!(global_acc(&log_cwc)[0], global_acc(&log_cwt)[0]);
}
