//! Gradient and mixed-gradient decay of the Green function against distance.

use rcm_lab::elliptic::{green_decay_profile, green_function};
use rcm_lab::environment::{EnsembleSpec, EnvironmentLaw};
use rcm_lab::lattice::TorusLattice;
use rcm_lab::solver::SolverConfig;
use rcm_lab::stats::loglog_fit;

fn main() -> rcm_lab::Result<()> {
    let lat = TorusLattice::new(2, 48)?;
    let ens = EnsembleSpec::new(EnvironmentLaw::UniformElliptic { c: 4.0 }, lat, 8, 7);
    let cfg = SolverConfig::default();
    let envs = (0..ens.n_env)
        .map(|k| ens.environment(k))
        .collect::<rcm_lab::Result<Vec<_>>>()?;

    let g = green_function(&envs[0], 0, &cfg)?;
    println!("G(0) = {:.5}, sum G = {:.1e}", g.g.get(0), g.g.sum());

    let profile = green_decay_profile(&envs, 2.0, &cfg, false)?;
    println!("{:>4} {:>12} {:>12}", "r", "|grad G|", "|grad grad G|");
    for (k, r) in profile.radii.iter().enumerate() {
        println!(
            "{r:>4} {:>12.4e} {:>12.4e}",
            profile.gradient[k], profile.mixed[k]
        );
    }
    let radii: Vec<f64> = profile.radii.iter().map(|&r| r as f64).collect();
    let grad = loglog_fit(&radii, &profile.gradient)?;
    let mixed = loglog_fit(&radii, &profile.mixed)?;
    println!("gradient slope {:.3} (reference 1 - d = -1)", grad.slope);
    println!("mixed slope    {:.3} (reference -d = -2)", mixed.slope);
    Ok(())
}
