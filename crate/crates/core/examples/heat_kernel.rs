//! Heat kernel of the variable-speed walk and the on-diagonal decay
//! `sum_y p(t, 0, y)^2 ~ t^{-d/2}` over an ensemble.

use rcm_lab::environment::{EnsembleSpec, EnvironmentLaw};
use rcm_lab::lattice::TorusLattice;
use rcm_lab::parabolic::{heat_kernel, kernel_diagnostics, on_diagonal_series};
use rcm_lab::stats::FitWindow;

fn main() -> rcm_lab::Result<()> {
    let lat = TorusLattice::new(2, 32)?;
    let ens = EnsembleSpec::new(EnvironmentLaw::IidLognormal { s: 0.5 }, lat, 10, 3);

    let env = ens.environment(0)?;
    for snap in heat_kernel(&env, 0, &[0.5, 4.0, 32.0])? {
        let diag = kernel_diagnostics(&snap);
        println!(
            "t = {:>5}: p(t,0,0) = {:.5}, mass = {:.12}, {diag:?}",
            snap.t,
            snap.p.get(0),
            snap.total_mass()
        );
    }

    // The window stops at (L/4)^2 / 2 since the series is p(2t, 0, 0).
    let times: Vec<f64> = (0..10)
        .map(|k| 2.0 * 1.5f64.powi(k))
        .filter(|&t| t <= 32.0)
        .collect();
    let mut series = on_diagonal_series(&ens, &times)?;
    let fit = series.fit(Some(&FitWindow::new(2.0, 32.0)));
    for (t, v) in series.times.iter().zip(&series.mean) {
        println!("{t:>8.2} {v:.5e}");
    }
    if let Some(fit) = fit {
        println!(
            "slope {:.3} in [{:.3}, {:.3}], reference -d/2 = -1",
            fit.slope, fit.ci_low, fit.ci_high
        );
    }
    Ok(())
}
