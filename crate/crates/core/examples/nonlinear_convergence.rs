use std::f64::consts::PI;

use steepwell::domain::{build_grid, build_well_potential, OmegaSpec, Profile, WellSpec};
use steepwell::evolution::STEP_TOL;
use steepwell::operators::{EnergyParams, SpaceTag, WaveState};
use steepwell::semilinear::{
    estimate_nemitski_constant, nonlinear_convergence_study, NonlinearSetup, Nonlinearity, PicardOptions,
};

// u_tt + A u = chi - u^3 with chi_beta = chi_Omega + eta / beta.
fn main() -> steepwell::Result<()> {
    let grid = build_grid(1, PI, 64)?;
    let omega = OmegaSpec::interval(-PI / 2.0, PI / 2.0);
    let well = WellSpec { omega: omega.clone(), width: 1e-3, profile: Profile::Ramp };
    let (v, mask) = build_well_potential(&grid, &well)?;
    let nl = Nonlinearity::cubic(&grid, &v, &mask, -1.0, 0.5, 1.0)?;
    let betas = [10.0, 1e2, 1e3];

    let est = estimate_nemitski_constant(&nl, &grid, &v, betas[0], 1000, 1)?;
    println!("Sobolev ratio {:.4}, Nemitski constant {:.4} ({} samples, worst ratio {:.3})", est.sobolev, est.constant, est.samples, est.worst_ratio);

    let u = mask.restrict(&grid.sample(|x| omega.bump(x)))?;
    let u0 = WaveState::new(u, vec![0.0; mask.len()], SpaceTag::Omega)?;
    let setup = NonlinearSetup {
        params: EnergyParams::new(0.0, 0.0)?,
        dt: 1e-3,
        horizon: 1.0,
        sample_stride: 100,
        nemitski: est.constant,
        picard: PicardOptions::default(),
        step_tol: STEP_TOL,
    };
    let study = nonlinear_convergence_study(&grid, &v, &mask, &betas, &nl, &u0, &setup, None)?;
    let w = &study.omega.windows[0];
    println!("first window: R = {:.4}, tau = {}, {} sweeps", w.constants.r, w.constants.tau, w.sweeps);
    println!("{} windows on the well, worst ratio {:.2e}, worst residual {:.2e}", study.omega.windows.len(), study.max_ratio(), study.max_residual());
    println!("\nbeta    sup dev     a_n         b_n         c_n");
    for ((b, d), g) in study.sup_dev.iter().zip(&study.diagnostics) {
        println!("{b:<7} {d:<11.4e} {:<11.3e} {:<11.3e} {:.3e}", g.a_term, g.b_term, g.c_term);
    }
    Ok(())
}
