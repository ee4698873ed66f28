use hadfl_core::config::{ExperimentConfig, Scheme};
use hadfl_core::runner::run_in_memory;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.n_train = 2000;
    cfg.n_test = 500;
    cfg.t_total = 40;
    for scheme in [Scheme::Hadfl, Scheme::DFedAvg, Scheme::SyncAllReduce] {
        cfg.scheme = scheme;
        let t0 = std::time::Instant::now();
        match run_in_memory(&cfg, 1) {
            Ok(out) => {
                let last = out.records.last();
                println!(
                    "{:<14} rounds={} vtime={:.3} acc={:?} loss={:?} aborted={} wall={:?}",
                    scheme.label(),
                    out.records.len(),
                    out.virtual_time,
                    last.map(|r| r.test_accuracy),
                    last.map(|r| r.train_loss),
                    out.aborted,
                    t0.elapsed()
                );
            }
            Err(e) => println!("{:<14} ERROR: {e}", scheme.label()),
        }
    }
}
