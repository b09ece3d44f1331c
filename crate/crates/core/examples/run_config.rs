//! Drives an experiment from a JSON configuration, as `rcm-lab run` does,
//! and prints the fitted exponents and flags of the summary.

use rcm_lab::config::ExperimentConfig;
use rcm_lab::runner::{run, RunOptions};

const CONFIG: &str = r#"{
  "experiment": "semigroup-decay",
  "lattice": {"d": 2, "side": 24},
  "law": {"kind": "iid_lognormal", "s": 0.5},
  "times": {"log": {"start": 2.0, "end": 36.0, "points": 8}},
  "ensemble": {"n_env": 6},
  "seed": 99,
  "params": {"xi": [1.0, 1.0], "order": 2}
}"#;

fn main() -> rcm_lab::Result<()> {
    let cfg = ExperimentConfig::from_json(CONFIG)?;
    let out = std::env::temp_dir().join("rcm-lab-example");
    let outcome = run(
        &cfg,
        &RunOptions {
            out: Some(out),
            ..Default::default()
        },
    )?;
    println!("wrote {}", outcome.dir.display());
    for fit in &outcome.summary.fits {
        if let Some(f) = &fit.fit {
            println!(
                "{}: slope {:.3} (CI upper {:.3}), target {:?}, flagged {}",
                fit.quantity, f.slope, f.ci_high, fit.target, fit.flagged
            );
        }
    }
    for flag in &outcome.summary.flags {
        println!("flag: {flag}");
    }
    Ok(())
}
