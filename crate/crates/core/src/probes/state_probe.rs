use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{HiddenDump, ProbeError, ProbeReport};
use crate::model::{AdamState, ParamSpec, TrainConfig};
use crate::rng;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateProbeReport {
    pub accuracy: f64,
    /// Accuracy of always predicting the most common training node.
    pub majority: f64,
    pub train_rows: usize,
    pub test_rows: usize,
    pub epochs: usize,
}

impl StateProbeReport {
    pub fn to_reports(&self) -> Vec<ProbeReport> {
        let bern = |p: f64| (p * (1.0 - p) / self.test_rows.max(1) as f64).sqrt();
        vec![
            ProbeReport::new("current_state_accuracy", self.accuracy, self.test_rows, bern(self.accuracy))
                .with_extra("train_rows", self.train_rows as f64)
                .with_config("epochs", self.epochs),
            ProbeReport::new("current_state_majority", self.majority, self.test_rows, bern(self.majority)),
        ]
    }
}

const LR: f64 = 0.05;

/// Multinomial logistic regression from hidden vector to current node,
/// trained full-batch with Adam on trajectories outside the held-out
/// fraction `test_fraction` and scored on the held-out ones.
pub fn current_state_probe(
    dump: &HiddenDump,
    n_nodes: usize,
    test_fraction: f64,
    epochs: usize,
    seed: u64,
) -> Result<StateProbeReport, ProbeError> {
    let d = dump.meta.d;
    let held = |traj: usize| rng::stream(seed, "probe/state_split", &[traj as u64]).random::<f64>() < test_fraction;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, r) in dump.records.iter().enumerate() {
        if held(r.traj) {
            test.push(i)
        } else {
            train.push(i)
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(ProbeError::Starved { metric: "current_state_probe", what: "train/test rows".into() });
    }
    let rows = |idx: &[usize]| -> Result<Tensor<f64>, ProbeError> {
        let data: Vec<f64> = idx.iter().flat_map(|&i| dump.vector(i).iter().copied()).collect();
        Ok(Tensor::new(&[idx.len(), d], data)?)
    };
    let (x_train, x_test) = (rows(&train)?, rows(&test)?);
    let y_train: Vec<usize> = train.iter().map(|&i| dump.records[i].current).collect();
    let mask = vec![true; train.len()];

    let mut params = vec![Tensor::<f64>::zeros(&[d, n_nodes]), Tensor::zeros(&[n_nodes])];
    let specs = [
        ParamSpec { name: "w".into(), shape: vec![d, n_nodes], decay: false },
        ParamSpec { name: "b".into(), shape: vec![n_nodes], decay: false },
    ];
    let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
    let mut adam = AdamState::new(&params);
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let x = tape.constant(x_train.clone());
        let w = tape.param(params[0].clone());
        let b = tape.param(params[1].clone());
        let xw = tape.matmul(x, w)?;
        let z = tape.add(xw, b)?;
        let loss = tape.cross_entropy(z, &y_train, &mask)?;
        let mut g = tape.backward(loss)?;
        let grads = vec![g.take(w), g.take(b)];
        adam.update(&mut params, &specs, &grads, LR, &cfg);
    }

    let (w, b) = (params[0].data(), params[1].data());
    let correct = test
        .iter()
        .enumerate()
        .filter(|&(row, &i)| {
            let x = &x_test.data()[row * d..(row + 1) * d];
            let mut best = (f64::NEG_INFINITY, 0);
            for c in 0..n_nodes {
                let z = b[c] + (0..d).map(|f| x[f] * w[f * n_nodes + c]).sum::<f64>();
                if z > best.0 {
                    best = (z, c);
                }
            }
            best.1 == dump.records[i].current
        })
        .count();
    let mut counts = vec![0usize; n_nodes];
    for &y in &y_train {
        counts[y] += 1;
    }
    let top = (0..n_nodes).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    let majority = test.iter().filter(|&&i| dump.records[i].current == top).count() as f64 / test.len() as f64;
    Ok(StateProbeReport { accuracy: correct as f64 / test.len() as f64, majority, train_rows: train.len(), test_rows: test.len(), epochs })
}
