//! Quadratic variation concentration, jump moments against their stationary
//! prediction and the martingale isometry.

use rcm_lab::environment::{EnsembleSpec, EnvironmentLaw};
use rcm_lab::lattice::TorusLattice;
use rcm_lab::solver::SolverConfig;
use rcm_lab::walk::{
    isometry_check, jump_moment_from, qv_concentration_from, WalkEnsemble, WalkSetup,
};

fn main() -> rcm_lab::Result<()> {
    let lat = TorusLattice::new(3, 12)?;
    let ens = EnsembleSpec::new(EnvironmentLaw::UniformElliptic { c: 2.0 }, lat, 20, 31);
    let setup = WalkSetup {
        xi: vec![1.0, 0.0, 0.0],
        times: (0..7).map(|k| 2f64.powi(k)).collect(),
        n_walk: 300,
        random_start: true,
    };
    let ensemble = WalkEnsemble::run(&ens, &setup, &SolverConfig::default())?;

    let mut qv = qv_concentration_from(&ensemble)?;
    for (t, v) in qv.times.iter().zip(&qv.mean) {
        println!("E|<M>_t / t - sigma^2|^2 at t = {t:>3}: {v:.4e}");
    }
    if let Some(fit) = qv.fit(None) {
        println!("slope {:.3}, reference -1/2", fit.slope);
    }
    for n in [2, 4] {
        let r = jump_moment_from(&ensemble, n)?;
        println!(
            "n = {n}: empirical {:.4} vs stationary {:.4} (z = {:.2})",
            r.empirical, r.prediction, r.z
        );
    }
    for c in isometry_check(&ensemble) {
        println!(
            "t = {:>3}: E M^2 = {:.3}, E <M> = {:.3} (z = {:.2})",
            c.t, c.second_moment, c.quadratic_variation, c.z
        );
    }
    Ok(())
}
