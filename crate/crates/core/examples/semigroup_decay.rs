use std::f64::consts::PI;

use steepwell::domain::{build_grid, build_well_potential, OmegaSpec, Profile, WellSpec};
use steepwell::evolution::{evolve, EvolutionConfig};
use steepwell::operators::{assemble_a_beta, EnergyParams, SpaceTag, WaveState};

fn main() -> steepwell::Result<()> {
    let grid = build_grid(1, PI, 256)?;
    let omega = OmegaSpec::interval(-PI / 2.0, PI / 2.0);
    let well = WellSpec { omega: omega.clone(), width: 0.1, profile: Profile::Smoothstep };
    let (v, _) = build_well_potential(&grid, &well)?;
    let op = assemble_a_beta(&grid, &v, 100.0)?;
    let u = grid.sample(|x| omega.bump(x));
    let state = WaveState::new(u.clone(), u.iter().map(|x| -0.5 * x).collect(), SpaceTag::Beta(100.0))?;
    let cfg = EvolutionConfig::new(1e-2, 10.0, 100)?;

    println!("gamma  delta   M       monotone  drift      rate");
    for gamma in [0.0, 0.5, 1.0] {
        let params = EnergyParams::with_default_delta(gamma)?;
        let (_, rep) = evolve(&params, &op, &state, &cfg)?;
        println!(
            "{gamma:<6} {:<7.4} {:<7.4} {:<9} {:<10.2e} {:.4}",
            params.delta(),
            rep.envelope,
            rep.delta_monotone,
            rep.max_x1_drift,
            rep.measured_rate
        );
    }
    Ok(())
}
