//! The five-state linear model: one-step versus two-step training from
//! uniform weights, showing how the shared transition matrix couples the
//! two trajectories' cross weights.
//!
//! cargo run --release --example linear_lab

use mtplab::linlab::{coupling_grid, coupling_readout, LinearConfig, Mode, A, B, C, D, INIT_GRID, LR_GRID};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = LinearConfig::default();
    for cell in coupling_grid(&LR_GRID, &INIT_GRID, &base)? {
        println!(
            "lr {:<4} init {:<3}  W_B(A->D): 1TP {:+.4} 2TP {:+.4}   W_B(B->C): 1TP {:+.4} 2TP {:+.4}   2TP ahead from step {:?}, lagging steps {}",
            cell.lr,
            cell.init,
            cell.one.world.w_b[D][A],
            cell.two.world.w_b[D][A],
            cell.one.world.w_b[C][B],
            cell.two.world.w_b[C][B],
            cell.strict_from(),
            cell.lagging()
        );
    }

    // the first steps of one run: ties while W_T is uniform, then a lead
    let grid = coupling_grid(&[base.lr], &[0.0], &LinearConfig { steps: 6, ..base.clone() })?;
    let cell = &grid[0];
    for (i, (o, t)) in cell.one.cross.iter().zip(&cell.two.cross).enumerate() {
        println!("step {}: 1TP [{:+.5}, {:+.5}]  2TP [{:+.5}, {:+.5}]", i + 1, o[0], o[1], t[0], t[1]);
    }

    let run = &coupling_grid(&[base.lr], &[0.0], &base)?[0].two;
    assert_eq!(run.world.mode, Mode::TwoStep);
    let readout = coupling_readout(&run.world, base.law, base.chaining);
    println!(
        "2TP cross-logit rate at the end {:+.3e}; integrated over the run {:+.4}; positive at {:.0}% of steps",
        readout.cross_logit_rate,
        run.integrated_coupling(),
        100.0 * run.positive_fraction()
    );
    Ok(())
}
