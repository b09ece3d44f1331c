//! Decay of the weighted gradient norm and of the semigroup applied to the
//! divergence of the conductances.

use rcm_lab::environment::{EnsembleSpec, EnvironmentLaw};
use rcm_lab::lattice::TorusLattice;
use rcm_lab::parabolic::{semigroup_decay_series, weighted_gradient_norm_series};

fn main() -> rcm_lab::Result<()> {
    let lat = TorusLattice::new(2, 32)?;
    let ens = EnsembleSpec::new(EnvironmentLaw::UniformElliptic { c: 2.0 }, lat, 12, 19);
    let times: Vec<f64> = (0..8)
        .map(|k| 2f64.powf(1.0 + 0.8 * k as f64))
        .filter(|&t| t <= 64.0)
        .collect();

    let mut gradnorm = weighted_gradient_norm_series(&ens, 1.0, &times)?;
    let mut semigroup = semigroup_decay_series(&ens, &[1.0, 0.0], 2, &times)?;
    println!("{:>8} {:>12} {:>12}", "t", "gradnorm", "semigroup");
    for k in 0..times.len() {
        println!(
            "{:>8.2} {:>12.4e} {:>12.4e}",
            times[k], gradnorm.mean[k], semigroup.mean[k]
        );
    }
    let reference = -(2.0 / 4.0 + 0.5);
    for (name, series) in [("gradnorm", &mut gradnorm), ("semigroup", &mut semigroup)] {
        if let Some(fit) = series.fit(None) {
            println!(
                "{name}: slope {:.3} (CI upper {:.3}), reference {reference}",
                fit.slope, fit.ci_high
            );
        }
    }
    Ok(())
}
