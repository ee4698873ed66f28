use hadfl_core::config::{ExperimentConfig, Scheme};
use hadfl_core::runner::run_in_memory;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.t_total = 6;
    cfg.n_train = 4000;
    cfg.n_test = 1000;
    for scheme in [Scheme::DFedAvg, Scheme::Hadfl] {
        cfg.scheme = scheme;
        let out = run_in_memory(&cfg, 1).unwrap();
        println!("== {}", scheme.label());
        for r in out.records.iter().take(6) {
            println!(
                "round {} t={:.4} loss={:.5} acc={:.4} versions={:?} sel={:?} bytes={}",
                r.sync_round, r.virtual_time, r.train_loss, r.test_accuracy, r.versions, r.selected, r.round_bytes
            );
        }
    }
}
