//! Runs the direct detection path on a few random sinusoidal images and
//! prints per-image metrics.
//!
//! `cargo run --release -p psd --example synthetic_suite -- [count] [n]`

use psd::bench::synth::random_sinusoidal_spec;
use psd::bench::run_suite;
use psd::scoring::DIRECT_THRESHOLD;
use psd::PsdConfig;

fn main() {
    let mut args = std::env::args().skip(1);
    let count: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(128);
    let specs: Vec<_> = (0..count)
        .map(|seed| random_sinusoidal_spec(n, (25.0, 40.0), 0.01, seed))
        .collect();
    let report = run_suite(&specs, &PsdConfig::default(), DIRECT_THRESHOLD).expect("suite");
    for img in &report.images {
        match &img.metrics {
            Some(m) => println!(
                "{:>10}  BA {:.4}  DICE {:.4}  FOR {:.4}  FNR {:.4}  outer {:>3}  {:.1}s",
                img.label,
                m.balanced_accuracy,
                m.dice,
                m.false_omission_rate,
                m.false_negative_rate,
                img.outer_iterations,
                img.seconds
            ),
            None => println!("{:>10}  failed: {}", img.label, img.error.as_deref().unwrap_or("")),
        }
    }
    if let Some(mean) = report.mean {
        println!(
            "mean        BA {:.4}  DICE {:.4}  FOR {:.4}  FNR {:.4}",
            mean.balanced_accuracy, mean.dice, mean.false_omission_rate, mean.false_negative_rate
        );
    }
}
