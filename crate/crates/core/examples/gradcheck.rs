//! Central finite differences against reverse-mode gradients for the three
//! objectives on a small transformer in f64.
//!
//! cargo run --release --example gradcheck

use rand::Rng as _;

use mtplab::model::{objective_grad_check, Batch, ModelBundle, ModelConfig, Objective, TrainConfig};
use mtplab::rng;
use mtplab::tensor::Precision;
use mtplab::trajgen::Vocabulary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::new(5);
    let pad = vocab.pad();
    let batch = Batch::new(&[&[1, 3, 8, 6, 11, 9, pad, pad], &[0, 4, 9, 11, 6, pad, pad, pad]], pad)?;
    for (objective, k) in [(Objective::Ntp, 1), (Objective::Mtp, 4), (Objective::Lse, 4)] {
        let cfg = ModelConfig {
            layers: 2,
            heads: 2,
            d_model: 16,
            block_size: 8,
            vocab_size: vocab.size(),
            horizon: k,
            dropout: 0.0,
            precision: Precision::F64,
        };
        let mut b = ModelBundle::<f64>::init(cfg, vocab, 3)?;
        let mut r = rng::stream(3, "example/perturb", &[]);
        for p in b.params_mut() {
            for x in p.data_mut() {
                *x += r.random_range(-0.05..0.05);
            }
        }
        let rep = objective_grad_check(&b, &batch, &TrainConfig::for_objective(objective), 1e-5)?;
        println!(
            "{objective} K={k}: {} entries, max relative error {:.2e}, max absolute error {:.2e} (param {}, element {})",
            rep.checked, rep.max_rel_err, rep.max_abs_err, rep.worst.0, rep.worst.1
        );
    }
    Ok(())
}
