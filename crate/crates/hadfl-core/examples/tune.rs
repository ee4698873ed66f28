use hadfl_core::compare::time_to_accuracy;
use hadfl_core::config::{ExperimentConfig, Scheme};
use hadfl_core::runner::run_in_memory;

fn main() {
    let combos = [
        (0.02f64, 3.0f64, 0.02f64, 120u64),
        (0.02, 3.0, 0.015, 150),
        (0.03, 3.0, 0.02, 120),
        (0.03, 3.0, 0.03, 120),
    ];
    for (margin, radius, lr, t_total) in combos {
        let mut cfg = ExperimentConfig::default();
        cfg.margin = margin;
        cfg.radius = radius;
        cfg.learning_rate = lr;
        cfg.batch_size = 96;
        cfg.warmup_lr = lr / 5.0;
        cfg.t_total = t_total;
        cfg.seeds = vec![1];
        let t0 = std::time::Instant::now();
        let mut best_sync = 0.0f64;
        let mut outs = vec![];
        for scheme in [Scheme::SyncAllReduce, Scheme::Hadfl, Scheme::DFedAvg] {
            cfg.scheme = scheme;
            let out = run_in_memory(&cfg, 1).unwrap();
            if scheme == Scheme::SyncAllReduce {
                best_sync = out
                    .records
                    .iter()
                    .map(|r| r.test_accuracy)
                    .fold(0.0, f64::max);
            }
            outs.push((scheme, out));
        }
        let target = 0.95 * best_sync;
        let best = |o: &hadfl_core::runner::RunOutput| {
            o.records.iter().map(|r| r.test_accuracy).fold(0.0, f64::max)
        };
        print!(
            "m={margin} r={radius} lr={lr}: target={target:.3} bests=[{}]",
            outs.iter()
                .map(|(s, o)| format!("{}={:.3}", s.label(), best(o)))
                .collect::<Vec<_>>()
                .join(" ")
        );
        let mut times = std::collections::BTreeMap::new();
        for (scheme, out) in &outs {
            let t = time_to_accuracy(&out.records, target);
            times.insert(scheme.label(), t);
            print!("  {}={:?}", scheme.label(), t.map(|t| (t * 100.0).round() / 100.0));
        }
        if let (Some(Some(h)), Some(Some(d))) = (times.get("hadfl"), times.get("dfedavg")) {
            print!("  ratio h/d = {:.3}", h / d);
        }
        println!("  wall={:?}", t0.elapsed());
    }
}
