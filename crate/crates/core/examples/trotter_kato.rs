use std::f64::consts::PI;

use steepwell::domain::{build_grid, build_well_potential, OmegaSpec, Profile, WellSpec};
use steepwell::evolution::{trotter_kato_study, EvolutionConfig};
use steepwell::operators::{EnergyParams, SpaceTag, WaveState};

fn main() -> steepwell::Result<()> {
    let grid = build_grid(1, PI, 256)?;
    let omega = OmegaSpec::interval(-PI / 2.0, PI / 2.0);
    let well = WellSpec { omega: omega.clone(), width: 1e-3, profile: Profile::Ramp };
    let (v, mask) = build_well_potential(&grid, &well)?;
    let u = mask.restrict(&grid.sample(|x| omega.bump(x)))?;
    let u0 = WaveState::new(u, vec![0.0; mask.len()], SpaceTag::Omega)?;
    let params = EnergyParams::new(0.0, 0.0)?;
    let cfg = EvolutionConfig::new(1e-3, 2.0, 100)?;
    let betas = [10.0, 1e2, 1e3, 1e4];

    // also perturb the data by V / beta outside the well
    let w = WaveState::new(v.values().to_vec(), vec![0.0; grid.len()], SpaceTag::Beta(1.0))?;
    for (label, pert) in [("exact data", None), ("perturbed data", Some(&w))] {
        let study = trotter_kato_study(&grid, &v, &mask, &betas, &params, &u0, &cfg, pert)?;
        println!("{label}:");
        for (b, d) in &study.sup_dev {
            println!("  beta = {b:<7} sup_t deviation = {d:.4e}");
        }
    }
    Ok(())
}
