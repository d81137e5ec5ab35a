use std::f64::consts::PI;

use steepwell::domain::{build_grid, build_well_potential, OmegaSpec, Profile, WellSpec};
use steepwell::spectral::{spectral_convergence_study, EigenOptions};

fn main() -> steepwell::Result<()> {
    let grid = build_grid(1, PI, 256)?;
    let well = WellSpec { omega: OmegaSpec::interval(-PI / 2.0, PI / 2.0), width: 1e-3, profile: Profile::Ramp };
    let (v, mask) = build_well_potential(&grid, &well)?;
    let betas = [10.0, 1e2, 1e3, 1e4];
    let study = spectral_convergence_study(&grid, &v, &mask, &betas, 4, &EigenOptions::default(), None)?;

    // continuum Dirichlet values on a length-pi interval are k^2 + 1
    for (k, p) in study.omega_pairs.iter().take(4).enumerate() {
        println!("lambda_{}^Omega = {:.5} (continuum {})", k + 1, p.value, (k + 1).pow(2) + 1);
    }
    println!("\n beta     k  lambda_beta  gap        mass       dist    guarded");
    for r in &study.records {
        println!(
            "{:<8} {}  {:<11.6} {:<10.3e} {:<10.3e} {:.4}  {}",
            r.beta, r.k, r.lambda_beta, r.gap, r.confinement_mass, r.eigfun_dist, r.guarded
        );
    }
    for (b, d) in &study.projection {
        println!("||P_beta u - P_Omega u|| at beta = {b}: {d:.3e}");
    }
    Ok(())
}
