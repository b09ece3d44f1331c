//! Conductances driven by a gradient interface: sample the heights with
//! Langevin dynamics and map gradients through a Lipschitz `lambda`.

use rcm_lab::elliptic::CorrectorBundle;
use rcm_lab::environment::{
    default_step_size, sample_environment, sample_gl_field, EnvironmentLaw, LambdaMap, Potential,
};
use rcm_lab::lattice::TorusLattice;
use rcm_lab::solver::SolverConfig;

fn main() -> rcm_lab::Result<()> {
    let lat = TorusLattice::new(2, 16)?;
    let potential = Potential::LogCosh {
        stiffness: 1.0,
        anharmonic: 0.5,
    };
    let field = sample_gl_field(
        &lat,
        &potential,
        20_000,
        default_step_size(&lat, &potential),
        12,
    )?;
    println!(
        "heights: mean {:.1e}, max |phi| {:.3}, energy {:.3}",
        field.heights.mean(),
        field.heights.max_abs(),
        field.energy()
    );

    let law = EnvironmentLaw::GlInterface {
        potential,
        lambda: LambdaMap {
            base: 1.0,
            slope: 1.0,
            cap: 2.0,
        },
        n_steps: Some(20_000),
        step_size: None,
    };
    let env = sample_environment(&law, &lat, 12)?;
    let w = env.conductances().values();
    let (lo, hi) = w.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    println!("conductances in [{lo:.3}, {hi:.3}]");
    let bundle = CorrectorBundle::solve(&env, &SolverConfig::default())?;
    println!("omega_hom = {:?}", bundle.omega_hom.energy.rows());
    Ok(())
}
