use std::f64::consts::PI;

use steepwell::domain::{build_grid, build_well_potential, OmegaSpec, Profile, WellSpec};
use steepwell::identities::{run_identity_suite, SuiteOptions};

fn main() -> steepwell::Result<()> {
    let grid = build_grid(2, PI, 32)?;
    let well = WellSpec {
        omega: OmegaSpec::Ball { center: vec![0.0, 0.0], radius: 1.2 },
        width: 0.4,
        profile: Profile::Smoothstep,
    };
    let (v, mask) = build_well_potential(&grid, &well)?;
    let opts = SuiteOptions { draws: 300, power_draws: 100, minmax_trials: 20, seed: 5, ..SuiteOptions::default() };
    let report = run_identity_suite(&grid, &v, &mask, &opts)?;
    for r in report.rows() {
        println!("{:<16} worst {:.3e}  threshold {:.1e}  {}", r.identity, r.value, r.threshold, if r.passed { "ok" } else { "FAILED" });
    }
    Ok(())
}
