//! Five-state linear world used to isolate gradient coupling.
//!
//! States `A..E` are the standard basis of ℝ⁵ and the data are the walks
//! `A → C → E` and `B → D → E`. A backbone matrix `W_B` maps a state to
//! next-state logits (`z = W_B h`, so `W_B[t][s]` scores `s → t`). Two-step
//! prediction adds `W_T`, applied to the one-step representation.
#![allow(clippy::needless_range_loop)] // index notation mirrors the math

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATES: usize = 5;
pub const LABELS: [&str; STATES] = ["A", "B", "C", "D", "E"];
pub const A: usize = 0;
pub const B: usize = 1;
pub const C: usize = 2;
pub const D: usize = 3;
pub const E: usize = 4;

/// The two training walks.
pub const TRAJECTORIES: [[usize; 3]; 2] = [[A, C, E], [B, D, E]];

pub type Mat = [[f64; STATES]; STATES];

#[derive(Debug, Error)]
pub enum LinlabError {
    #[error("invalid setting: {0}")]
    Config(String),
    #[error("loss diverged at step {0}")]
    Diverged(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// One-step prediction with `W_B` only.
    #[serde(rename = "1tp")]
    OneStep,
    /// Adds two-step prediction through `W_T`.
    #[serde(rename = "2tp")]
    TwoStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputLaw {
    /// Softmax cross-entropy over the five states.
    #[default]
    CrossEntropy,
    /// Squared error of the logits against the one-hot target.
    Mse,
}

/// What the two-step head reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chaining {
    /// The model's own one-step representation `W_B h_t`.
    #[default]
    Predicted,
    /// The true next state `e_{t+1}`; `W_B` then gets no two-step gradient.
    TeacherForced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearConfig {
    pub mode: Mode,
    pub steps: usize,
    pub lr: f64,
    pub init: f64,
    pub law: OutputLaw,
    pub chaining: Chaining,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig { mode: Mode::TwoStep, steps: 500, lr: 0.1, init: 0.0, law: OutputLaw::CrossEntropy, chaining: Chaining::Predicted }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearWorld {
    pub w_b: Mat,
    /// Present in two-step mode only.
    pub w_t: Option<Mat>,
    pub mode: Mode,
}

impl LinearWorld {
    pub fn new(mode: Mode, init: f64) -> Self {
        LinearWorld { w_b: [[init; STATES]; STATES], w_t: (mode == Mode::TwoStep).then_some([[init; STATES]; STATES]), mode }
    }
}

fn column(m: &Mat, s: usize) -> [f64; STATES] {
    std::array::from_fn(|t| m[t][s])
}

fn apply(m: &Mat, h: &[f64; STATES]) -> [f64; STATES] {
    std::array::from_fn(|t| (0..STATES).map(|s| m[t][s] * h[s]).sum())
}

pub fn softmax(z: &[f64; STATES]) -> [f64; STATES] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: [f64; STATES] = std::array::from_fn(|i| (z[i] - m).exp());
    let s: f64 = e.iter().sum();
    std::array::from_fn(|i| e[i] / s)
}

/// Loss of logits `z` against state `t` and its gradient in `z`.
fn output(law: OutputLaw, z: &[f64; STATES], t: usize) -> (f64, [f64; STATES]) {
    match law {
        OutputLaw::CrossEntropy => {
            let p = softmax(z);
            (-p[t].ln(), std::array::from_fn(|i| p[i] - f64::from(u8::from(i == t))))
        }
        OutputLaw::Mse => {
            let r: [f64; STATES] = std::array::from_fn(|i| z[i] - f64::from(u8::from(i == t)));
            (r.iter().map(|x| x * x).sum(), std::array::from_fn(|i| 2.0 * r[i]))
        }
    }
}

/// Gradients of one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub loss: f64,
    pub w_b: Mat,
    pub w_t: Mat,
}

/// Full-batch loss and gradients. `walks` selects which trajectories
/// contribute; `one_step` / `two_step` select the terms.
pub fn loss_and_grads(
    world: &LinearWorld,
    law: OutputLaw,
    chaining: Chaining,
    walks: &[[usize; 3]],
    one_step: bool,
    two_step: bool,
) -> Grads {
    let mut g = Grads { loss: 0.0, w_b: [[0.0; STATES]; STATES], w_t: [[0.0; STATES]; STATES] };
    for walk in walks {
        if one_step {
            for w in walk.windows(2) {
                let (l, gz) = output(law, &column(&world.w_b, w[0]), w[1]);
                g.loss += l;
                for t in 0..STATES {
                    g.w_b[t][w[0]] += gz[t];
                }
            }
        }
        if let (true, Some(wt)) = (two_step, &world.w_t) {
            let (s, mid, t) = (walk[0], walk[1], walk[2]);
            let u = match chaining {
                Chaining::Predicted => column(&world.w_b, s),
                Chaining::TeacherForced => std::array::from_fn(|i| f64::from(u8::from(i == mid))),
            };
            let (l, gz) = output(law, &apply(wt, &u), t);
            g.loss += l;
            for i in 0..STATES {
                for j in 0..STATES {
                    g.w_t[i][j] += gz[i] * u[j];
                }
            }
            if chaining == Chaining::Predicted {
                for j in 0..STATES {
                    g.w_b[j][s] += (0..STATES).map(|i| wt[i][j] * gz[i]).sum::<f64>();
                }
            }
        }
    }
    g
}

fn total(world: &LinearWorld, cfg: &LinearConfig) -> Grads {
    loss_and_grads(world, cfg.law, cfg.chaining, &TRAJECTORIES, true, cfg.mode == Mode::TwoStep)
}

fn step(world: &mut LinearWorld, g: &Grads, lr: f64) {
    for t in 0..STATES {
        for s in 0..STATES {
            world.w_b[t][s] -= lr * g.w_b[t][s];
            if let Some(wt) = world.w_t.as_mut() {
                wt[t][s] -= lr * g.w_t[t][s];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRun {
    pub config: LinearConfig,
    pub world: LinearWorld,
    /// Loss before each step, then after the last one.
    pub losses: Vec<f64>,
    /// Cross-logit rate of [`coupling_readout`] before each step.
    pub coupling: Vec<f64>,
    /// `[W_B(A→D), W_B(B→C)]` after each step.
    pub cross: Vec<[f64; 2]>,
}

impl LinearRun {
    /// First-order change of the probed cross logit accumulated over the run
    /// from trajectory 1's gradients alone: `Σ lr · rate`.
    pub fn integrated_coupling(&self) -> f64 {
        self.coupling.iter().map(|r| self.config.lr * r).sum()
    }

    /// Fraction of steps at which the cross-logit rate was positive.
    pub fn positive_fraction(&self) -> f64 {
        self.coupling.iter().filter(|&&r| r > 0.0).count() as f64 / self.coupling.len().max(1) as f64
    }
}

/// Full-batch gradient descent from uniform initialization.
pub fn train_linear(cfg: &LinearConfig) -> Result<LinearRun, LinlabError> {
    if cfg.steps == 0 {
        return Err(LinlabError::Config("steps must be at least 1".into()));
    }
    if cfg.lr <= 0.0 || !cfg.lr.is_finite() {
        return Err(LinlabError::Config(format!("learning rate {} must be positive", cfg.lr)));
    }
    let mut world = LinearWorld::new(cfg.mode, cfg.init);
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let mut coupling = Vec::with_capacity(cfg.steps);
    let mut cross = Vec::with_capacity(cfg.steps);
    for i in 0..cfg.steps {
        let g = total(&world, cfg);
        if !g.loss.is_finite() {
            return Err(LinlabError::Diverged(i));
        }
        losses.push(g.loss);
        coupling.push(coupling_readout(&world, cfg.law, cfg.chaining).cross_logit_rate);
        step(&mut world, &g, cfg.lr);
        cross.push([world.w_b[D][A], world.w_b[C][B]]);
    }
    let last = total(&world, cfg).loss;
    if !last.is_finite() {
        return Err(LinlabError::Diverged(cfg.steps));
    }
    losses.push(last);
    Ok(LinearRun { config: cfg.clone(), world, losses, coupling, cross })
}

pub const LR_GRID: [f64; 3] = [0.05, 0.1, 0.2];
pub const INIT_GRID: [f64; 2] = [0.0, 0.1];

/// One `(lr, init)` setting trained in both modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lr: f64,
    pub init: f64,
    pub one: LinearRun,
    pub two: LinearRun,
}

impl GridCell {
    /// Steps at which a two-step cross weight is below its one-step value.
    pub fn lagging(&self) -> usize {
        self.one.cross.iter().zip(&self.two.cross).filter(|(o, t)| t[0] < o[0] || t[1] < o[1]).count()
    }

    /// First step (1-based) from which both two-step cross weights stay
    /// strictly above the one-step ones until the end. The two runs agree
    /// exactly while `W_T` is still uniform, since a uniform `W_T` sends no
    /// gradient back to `W_B`.
    pub fn strict_from(&self) -> Option<usize> {
        let ahead: Vec<bool> = self.one.cross.iter().zip(&self.two.cross).map(|(o, t)| t[0] > o[0] && t[1] > o[1]).collect();
        let tail = ahead.iter().rev().take_while(|&&a| a).count();
        (tail > 0).then(|| ahead.len() - tail + 1)
    }
}

/// Both modes over every `(lr, init)` pair; other settings come from `base`.
pub fn coupling_grid(lrs: &[f64], inits: &[f64], base: &LinearConfig) -> Result<Vec<GridCell>, LinlabError> {
    let mut out = Vec::new();
    for &init in inits {
        for &lr in lrs {
            let one = train_linear(&LinearConfig { lr, init, mode: Mode::OneStep, ..base.clone() })?;
            let two = train_linear(&LinearConfig { lr, init, mode: Mode::TwoStep, ..base.clone() })?;
            out.push(GridCell { lr, init, one, two });
        }
    }
    Ok(out)
}

/// Transition table and the cross-path logit response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReadout {
    /// `table[s][t] = softmax(W_B e_s)[t]`.
    pub table: Mat,
    /// Change of the logit for trajectory 1's target at trajectory 2's start
    /// after one gradient step on trajectory 1 alone, divided by the step.
    pub cross_logit_rate: f64,
    pub probe_lr: f64,
}

/// Step size of the finite cross-update in [`coupling_readout`].
pub const PROBE_LR: f64 = 1e-4;

/// In two-step mode the probed loss is trajectory 1's two-step term and the
/// logit is `z_E(B)` from the two-step head; in one-step mode they are the
/// `A → C` term and `z_C(B)` from `W_B`.
pub fn coupling_readout(world: &LinearWorld, law: OutputLaw, chaining: Chaining) -> CouplingReadout {
    let table: Mat = std::array::from_fn(|s| softmax(&column(&world.w_b, s)));
    let walk = TRAJECTORIES[0];
    let (src, two) = (TRAJECTORIES[1][0], world.mode == Mode::TwoStep);
    let logit = |w: &LinearWorld| match &w.w_t {
        Some(wt) if two => apply(wt, &column(&w.w_b, src))[walk[2]],
        _ => w.w_b[walk[1]][src],
    };
    let g = loss_and_grads(world, law, chaining, &[walk], !two, two);
    let mut after = world.clone();
    step(&mut after, &g, PROBE_LR);
    CouplingReadout { table, cross_logit_rate: (logit(&after) - logit(world)) / PROBE_LR, probe_lr: PROBE_LR }
}

/// Swaps `A ↔ B` and `C ↔ D` on both axes.
pub fn mirror(m: &Mat) -> Mat {
    let p = [B, A, D, C, E];
    std::array::from_fn(|t| std::array::from_fn(|s| m[p[t]][p[s]]))
}

/// Matrix as CSV with state labels (rows are targets, columns sources).
pub fn matrix_csv(m: &Mat) -> String {
    let mut out = String::from("target");
    for l in LABELS {
        let _ = write!(out, ",{l}");
    }
    out.push('\n');
    for (t, row) in m.iter().enumerate() {
        out.push_str(LABELS[t]);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinlabSummary {
    pub runs: Vec<LinearRun>,
    pub readouts: Vec<CouplingReadout>,
}

/// Writes `w_b_<mode>.csv`, `w_t_<mode>.csv` and `summary.json`.
pub fn write_outputs(dir: &Path, summary: &LinlabSummary) -> Result<(), LinlabError> {
    std::fs::create_dir_all(dir)?;
    for run in &summary.runs {
        let tag = match run.world.mode {
            Mode::OneStep => "1tp",
            Mode::TwoStep => "2tp",
        };
        let stem = format!("lr{}_init{}_{tag}", run.config.lr, run.config.init);
        std::fs::write(dir.join(format!("w_b_{stem}.csv")), matrix_csv(&run.world.w_b))?;
        if let Some(wt) = &run.world.w_t {
            std::fs::write(dir.join(format!("w_t_{stem}.csv")), matrix_csv(wt))?;
        }
    }
    let json = serde_json::to_string_pretty(summary).map_err(|e| LinlabError::Config(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: Mode) -> LinearConfig {
        LinearConfig { mode, ..LinearConfig::default() }
    }

    #[test]
    fn zero_init_loss_is_uniform_cross_entropy() {
        let one = train_linear(&LinearConfig { steps: 1, ..cfg(Mode::OneStep) }).unwrap();
        let two = train_linear(&LinearConfig { steps: 1, ..cfg(Mode::TwoStep) }).unwrap();
        let ln5 = 5f64.ln();
        assert!((one.losses[0] - 4.0 * ln5).abs() < 1e-12);
        assert!((two.losses[0] - 6.0 * ln5).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-6;
        for law in [OutputLaw::CrossEntropy, OutputLaw::Mse] {
            for chaining in [Chaining::Predicted, Chaining::TeacherForced] {
                let mut w = LinearWorld::new(Mode::TwoStep, 0.0);
                for t in 0..STATES {
                    for s in 0..STATES {
                        w.w_b[t][s] = ((t * 7 + s * 3) % 11) as f64 / 10.0 - 0.5;
                        w.w_t.as_mut().unwrap()[t][s] = ((t * 5 + s * 2) % 7) as f64 / 7.0 - 0.4;
                    }
                }
                let f = |w: &LinearWorld| loss_and_grads(w, law, chaining, &TRAJECTORIES, true, true);
                let g = f(&w);
                for t in 0..STATES {
                    for s in 0..STATES {
                        let (mut up, mut dn) = (w.clone(), w.clone());
                        up.w_b[t][s] += h;
                        dn.w_b[t][s] -= h;
                        let fd = (f(&up).loss - f(&dn).loss) / (2.0 * h);
                        assert!((fd - g.w_b[t][s]).abs() < 1e-6, "{law:?} {chaining:?} w_b[{t}][{s}]");
                        let (mut up, mut dn) = (w.clone(), w.clone());
                        up.w_t.as_mut().unwrap()[t][s] += h;
                        dn.w_t.as_mut().unwrap()[t][s] -= h;
                        let fd = (f(&up).loss - f(&dn).loss) / (2.0 * h);
                        assert!((fd - g.w_t[t][s]).abs() < 1e-6, "{law:?} {chaining:?} w_t[{t}][{s}]");
                    }
                }
            }
        }
    }

    #[test]
    fn one_step_learns_only_observed_transitions() {
        let r = train_linear(&cfg(Mode::OneStep)).unwrap();
        let w = &r.world.w_b;
        for (s, t) in [(A, C), (C, E), (B, D), (D, E)] {
            let best = (0..STATES).max_by(|&i, &j| w[i][s].total_cmp(&w[j][s])).unwrap();
            assert_eq!(best, t);
            assert!(w[t][s] > 0.0);
        }
        assert!(w[D][A] < 0.0 && w[C][B] < 0.0);
        // E has no outgoing transition, so its column never moves
        assert!(column(w, E).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_step_strengthens_the_unobserved_cross_transitions() {
        for init in [0.0, 0.1] {
            for lr in [0.05, 0.1, 0.2] {
                let one = train_linear(&LinearConfig { lr, init, ..cfg(Mode::OneStep) }).unwrap();
                let two = train_linear(&LinearConfig { lr, init, ..cfg(Mode::TwoStep) }).unwrap();
                assert!(two.world.w_b[D][A] > one.world.w_b[D][A], "lr {lr} init {init}");
                assert!(two.world.w_b[C][B] > one.world.w_b[C][B], "lr {lr} init {init}");
            }
        }
    }

    #[test]
    fn cross_weights_lead_at_every_step() {
        let grid = coupling_grid(&LR_GRID, &INIT_GRID, &LinearConfig::default()).unwrap();
        assert_eq!(grid.len(), 6);
        for c in &grid {
            assert_eq!(c.lagging(), 0, "lr {} init {}", c.lr, c.init);
            // uniform W_T for one step (init 0.1) or two (init 0: W_T = 0 first)
            assert_eq!(c.strict_from(), Some(if c.init == 0.0 { 3 } else { 2 }), "lr {} init {}", c.lr, c.init);
            assert_eq!(c.one.cross[0], c.two.cross[0]);
            assert_eq!(c.two.cross.last().unwrap()[0], c.two.world.w_b[D][A]);
        }
    }

    #[test]
    fn weights_respect_the_exchange_symmetry() {
        for mode in [Mode::OneStep, Mode::TwoStep] {
            let r = train_linear(&LinearConfig { init: 0.1, ..cfg(mode) }).unwrap();
            let m = mirror(&r.world.w_b);
            for t in 0..STATES {
                for s in 0..STATES {
                    assert!((m[t][s] - r.world.w_b[t][s]).abs() < 1e-9);
                }
            }
            let table = coupling_readout(&r.world, OutputLaw::CrossEntropy, Chaining::Predicted).table;
            for s in 0..STATES {
                for t in 0..STATES {
                    let p = [B, A, D, C, E];
                    assert!((table[s][t] - table[p[s]][p[t]]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn small_steps_never_increase_the_loss() {
        for mode in [Mode::OneStep, Mode::TwoStep] {
            let r = train_linear(&LinearConfig { lr: 0.01, steps: 300, init: 0.1, ..cfg(mode) }).unwrap();
            assert!(r.losses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn cross_update_is_positive_only_with_two_step_coupling() {
        for init in [0.0, 0.1] {
            let two = train_linear(&LinearConfig { init, ..cfg(Mode::TwoStep) }).unwrap();
            assert!(two.integrated_coupling() > 0.0);
            let one = train_linear(&LinearConfig { init, ..cfg(Mode::OneStep) }).unwrap();
            assert!(one.coupling.iter().all(|r| r.abs() < 1e-9));
        }
    }

    #[test]
    fn cross_rate_is_the_kernel_through_the_shared_head() {
        // one step on trajectory 1 moves z_E(B) by lr (1 - p_E(A)) <W_B e_A, W_B e_B>
        let r = train_linear(&LinearConfig { steps: 40, init: 0.1, ..cfg(Mode::TwoStep) }).unwrap();
        let w = &r.world;
        let (ua, ub) = (column(&w.w_b, A), column(&w.w_b, B));
        let p = softmax(&apply(w.w_t.as_ref().unwrap(), &ua));
        let want = (1.0 - p[E]) * ua.iter().zip(&ub).map(|(x, y)| x * y).sum::<f64>();
        let got = coupling_readout(w, OutputLaw::CrossEntropy, Chaining::Predicted).cross_logit_rate;
        assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn teacher_forcing_removes_the_backbone_coupling() {
        let tf = LinearConfig { chaining: Chaining::TeacherForced, ..cfg(Mode::TwoStep) };
        let one = train_linear(&cfg(Mode::OneStep)).unwrap();
        let r = train_linear(&tf).unwrap();
        assert_eq!(r.world.w_b, one.world.w_b);
    }

    #[test]
    fn mse_law_shows_the_same_ordering() {
        let mse = |mode| LinearConfig { law: OutputLaw::Mse, lr: 0.05, ..cfg(mode) };
        let one = train_linear(&mse(Mode::OneStep)).unwrap();
        let two = train_linear(&mse(Mode::TwoStep)).unwrap();
        assert!(two.world.w_b[D][A] > one.world.w_b[D][A]);
    }

    #[test]
    fn csv_has_labels() {
        let s = matrix_csv(&[[0.0; STATES]; STATES]);
        assert!(s.starts_with("target,A,B,C,D,E\nA,0,0,0,0,0\n"));
    }
}
