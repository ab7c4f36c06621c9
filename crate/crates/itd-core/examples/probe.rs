use itd_core::config::RunConfig;
use itd_core::datagen::DeductorConfig;
use itd_core::harness::{build_suite, evaluate_method, EvalModels, Method};
use std::time::Instant;

fn cell(cfg: &RunConfig, seed: u64, n: usize, eps: f64) -> Vec<(Method, f64)> {
    let suite = build_suite(cfg, seed, n, eps);
    let models = EvalModels {
        base: &suite.base,
        io: Some(&suite.io),
        gd: Some(&suite.gd),
    };
    let p = cfg.decode_params();
    let ded = DeductorConfig::noisy(eps);
    Method::ALL
        .iter()
        .map(|&m| {
            let (mean, _) =
                evaluate_method(m, &suite.tasks, &models, &p, &ded, cfg.master_seed, n, eps, seed)
                    .unwrap();
            (m, mean)
        })
        .collect()
}

fn main() {
    let cfg = RunConfig::default_config();
    let start = Instant::now();

    println!("== main comparison (n=5, eps=0.2) ==");
    for seed in 0..3u64 {
        print!("seed {seed}:");
        for (m, v) in cell(&cfg, seed, 5, 0.2) {
            print!("  {m}={v:.3}");
        }
        println!();
    }

    println!("== sample-count trend (eps=0.2) ==");
    for n in [2usize, 5, 8, 20] {
        let mut io_sum = 0.0;
        let mut itd_sum = 0.0;
        for seed in 0..3u64 {
            for (m, v) in cell(&cfg, seed, n, 0.2) {
                match m {
                    Method::ItdIo => io_sum += v,
                    Method::Itd => itd_sum += v,
                    _ => {}
                }
            }
        }
        println!("n={n:2}  itd-io={:.3}  itd={:.3}", io_sum / 3.0, itd_sum / 3.0);
    }

    println!("== deductor trend (n=5) ==");
    for eps in [0.0f64, 0.2, 0.4] {
        let mut hs_sum = 0.0;
        let mut itd_sum = 0.0;
        for seed in 0..3u64 {
            for (m, v) in cell(&cfg, seed, 5, eps) {
                match m {
                    Method::Hs => hs_sum += v,
                    Method::Itd => itd_sum += v,
                    _ => {}
                }
            }
        }
        println!("eps={eps:.1}  hs={:.3}  itd={:.3}", hs_sum / 3.0, itd_sum / 3.0);
    }

    println!("elapsed: {:.1?}", start.elapsed());
}
