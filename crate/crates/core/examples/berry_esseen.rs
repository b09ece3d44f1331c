//! Annealed Kolmogorov distance of `xi . X_t / sqrt(sigma^2 t)` from the
//! standard normal, with the DKW noise floor and the martingale bound.

use rcm_lab::environment::{EnsembleSpec, EnvironmentLaw};
use rcm_lab::lattice::TorusLattice;
use rcm_lab::solver::SolverConfig;
use rcm_lab::walk::{
    haeusler_report, rate_two_dimensional, BeMode, BerryEsseenReport, WalkEnsemble, WalkSetup,
};

fn main() -> rcm_lab::Result<()> {
    let lat = TorusLattice::new(2, 32)?;
    let ens = EnsembleSpec::new(EnvironmentLaw::UniformElliptic { c: 2.0 }, lat, 20, 5);
    let setup = WalkSetup {
        xi: vec![1.0, 0.0],
        times: (0..6).map(|k| 4.0 * 2f64.powi(k)).collect(),
        n_walk: 1000,
        random_start: true,
    };
    let ensemble = WalkEnsemble::run(&ens, &setup, &SolverConfig::default())?;
    println!(
        "sigma^2 = {:.4}, decomposition residual {:.1e}",
        ensemble.sigma_sq,
        ensemble.max_decomposition_residual()
    );

    let report = BerryEsseenReport::from_ensemble(&ensemble, BeMode::Annealed, 0.05)?;
    println!("{:>6} {:>10} {:>10} {:>10}", "t", "KS(X)", "KS(M)", "floor");
    for r in &report.rows {
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>10.4}",
            r.t, r.ks_position, r.ks_martingale, r.floor
        );
    }
    println!(
        "{:?}",
        report.envelope_check(|r| r.ks_position, rate_two_dimensional)
    );
    println!("{:?}", report.monotone_check(|r| r.ks_position));

    for row in haeusler_report(&ensemble, 2)?.rows {
        println!(
            "t = {:>4}: bound {:.4}, KS/bound {:.3}",
            row.t, row.bound, row.ratio
        );
    }
    Ok(())
}
