use std::f64::consts::PI;

use steepwell::domain::{build_grid, build_well_potential, OmegaSpec, Profile, WellSpec};
use steepwell::solver::resolvent_convergence_study;

// (A_beta + lambda)^{-1} f against the zero-extended (A_Omega + lambda)^{-1} f.
fn main() -> steepwell::Result<()> {
    let grid = build_grid(1, PI, 255)?;
    let omega = OmegaSpec::interval(-PI / 2.0, PI / 2.0);
    let well = WellSpec { omega: omega.clone(), width: 0.05, profile: Profile::Ramp };
    let (v, mask) = build_well_potential(&grid, &well)?;
    let f = mask.restrict(&grid.sample(|x| omega.bump(x)))?;
    let betas = [1.0, 10.0, 1e2, 1e3, 1e4, 1e5];

    let study = resolvent_convergence_study(&grid, &v, &mask, &betas, 1.0, &f, None, 1e-11)?;
    println!("beta      error");
    for (b, e) in &study.errors {
        println!("{b:<9} {e:.4e}");
    }
    println!("strictly decreasing: {}", study.strictly_decreasing);
    println!("beta * error: {:?}", study.rate_products.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>());
    Ok(())
}
