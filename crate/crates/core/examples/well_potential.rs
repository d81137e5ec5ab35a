use std::f64::consts::PI;

use steepwell::domain::{build_grid, build_well_potential, OmegaSpec, Profile, WellSpec};

// Builds the ramp and smoothstep wells around (-pi/2, pi/2) and prints V along the axis.
fn main() -> steepwell::Result<()> {
    let grid = build_grid(1, PI, 40)?;
    for profile in [Profile::Ramp, Profile::Smoothstep] {
        let well = WellSpec {
            omega: OmegaSpec::interval(-PI / 2.0, PI / 2.0),
            width: 0.6,
            profile,
        };
        let (v, mask) = build_well_potential(&grid, &well)?;
        println!("{profile:?}: {} of {} nodes in the well, audit issues: {}", mask.len(), grid.len(), v.audit(&grid).len());
        for i in (0..grid.len()).step_by(4) {
            let x = grid.node(i)[0];
            println!("  x = {x:+.3}  V = {:.4}  V_100 = {:.1}", v.values()[i], v.v_beta(100.0)[i]);
        }
    }

    // a disc in 2D
    let grid = build_grid(2, PI, 32)?;
    let well = WellSpec {
        omega: OmegaSpec::Ball { center: vec![0.0, 0.0], radius: 1.0 },
        width: 0.5,
        profile: Profile::Smoothstep,
    };
    let (_, mask) = build_well_potential(&grid, &well)?;
    println!("disc: {} interior nodes, area ~ {:.3} (pi = {:.3})", mask.len(), mask.len() as f64 * grid.cell_volume(), PI);
    Ok(())
}
