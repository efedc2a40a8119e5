use super::bundle::{Layout, ModelBundle};
use super::forward::{backbone, head, project, Batch};
use super::{AuxReduction, ModelError, Objective, TrainConfig};
use crate::rng::Rng;
use crate::tensor::{grad_check, GradCheckReport, Scalar, Tape, TensorError, Var};

/// Mean masked cross-entropy of next-token logits `[N, V]`.
pub fn loss_ntp<S: Scalar>(tape: &mut Tape<S>, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var, ModelError> {
    Ok(tape.cross_entropy(logits, targets, mask)?)
}

/// Sum over horizons of mean masked cross-entropy. Horizons whose mask is
/// empty contribute nothing; all of them empty is an error.
pub fn loss_mtp<S: Scalar>(tape: &mut Tape<S>, logits: &[Var], targets: &[Vec<usize>], masks: &[Vec<bool>]) -> Result<Var, ModelError> {
    let mut total: Option<Var> = None;
    for ((&z, t), m) in logits.iter().zip(targets).zip(masks) {
        if !m.iter().any(|&b| b) {
            continue;
        }
        let ce = tape.cross_entropy(z, t, m)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, ce)?,
            None => ce,
        });
    }
    total.ok_or(ModelError::Tensor(TensorError::Empty("loss_mtp")))
}

/// One horizon's consistency inputs: projected states `ĥ_{n,k}` `[N, d]`,
/// the backbone states they should match `[N, d]`, and the `k`-step target
/// tokens whose embeddings anchor them.
pub struct LatentTerm {
    pub projected: Var,
    pub backbone_target: Var,
    pub target_tokens: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub ce: Var,
    pub latent: Option<Var>,
    pub semantic: Option<Var>,
}

/// `total = ce + λ_l·latent + λ_s·semantic`, with
/// `latent = Σ_k mean_n ‖ĥ − h‖²` and `semantic = Σ_k mean_n ‖ĥ − sg(E(u))‖²`
/// (each divided by the width under [`AuxReduction::MeanFeatures`]).
/// The embedding target is always detached; the backbone target only when
/// `detach_latent_target` is set.
#[allow(clippy::too_many_arguments)]
pub fn loss_lse<S: Scalar>(
    tape: &mut Tape<S>,
    ce: Var,
    terms: &[LatentTerm],
    embedding: Var,
    lambda_latent: f64,
    lambda_semantic: f64,
    detach_latent_target: bool,
    reduction: AuxReduction,
) -> Result<LossParts, ModelError> {
    if terms.is_empty() {
        return Err(ModelError::Config("latent consistency needs at least one horizon beyond the first".into()));
    }
    let mut latent: Option<Var> = None;
    let mut semantic: Option<Var> = None;
    let acc = |tape: &mut Tape<S>, slot: &mut Option<Var>, v: Var| -> Result<(), ModelError> {
        *slot = Some(match *slot {
            Some(a) => tape.add(a, v)?,
            None => v,
        });
        Ok(())
    };
    for term in terms {
        let target = if detach_latent_target { tape.detach(term.backbone_target) } else { term.backbone_target };
        let l = tape.mse_rows(term.projected, target)?;
        acc(tape, &mut latent, l)?;
        let e = tape.gather_rows(embedding, &term.target_tokens)?;
        let e = tape.detach(e);
        let s = tape.mse_rows(term.projected, e)?;
        acc(tape, &mut semantic, s)?;
    }
    let (mut latent, mut semantic) = (latent.unwrap(), semantic.unwrap());
    if reduction == AuxReduction::MeanFeatures {
        let d = *tape.shape(terms[0].projected).last().unwrap_or(&1);
        latent = tape.scale(latent, 1.0 / d as f64);
        semantic = tape.scale(semantic, 1.0 / d as f64);
    }
    let wl = tape.scale(latent, lambda_latent);
    let ws = tape.scale(semantic, lambda_semantic);
    let total = tape.add(ce, wl)?;
    let total = tape.add(total, ws)?;
    Ok(LossParts { total, ce, latent: Some(latent), semantic: Some(semantic) })
}

/// Training loss of one batch under `cfg.objective`, computed on the
/// supervised rows only.
pub fn objective_loss<S: Scalar>(
    tape: &mut Tape<S>,
    bundle: &ModelBundle<S>,
    pv: &[Var],
    batch: &Batch,
    cfg: &TrainConfig,
    drop_rng: Option<&mut Rng>,
) -> Result<LossParts, ModelError> {
    objective_loss_anchored(tape, bundle, pv, batch, cfg, drop_rng, None)
}

/// [`objective_loss`] with the semantic anchors read from `anchor` instead
/// of the live embedding table. Gradients are the same either way (the
/// anchors are detached); finite-difference checks pass a frozen copy so the
/// perturbed loss treats the anchors as constants too.
pub fn objective_loss_anchored<S: Scalar>(
    tape: &mut Tape<S>,
    bundle: &ModelBundle<S>,
    pv: &[Var],
    batch: &Batch,
    cfg: &TrainConfig,
    drop_rng: Option<&mut Rng>,
    anchor: Option<Var>,
) -> Result<LossParts, ModelError> {
    let horizon = match cfg.objective {
        Objective::Ntp => 1,
        _ => bundle.config.horizon,
    };
    let bb = backbone(tape, bundle, pv, batch, drop_rng, false)?;
    let d = bundle.config.d_model;
    let flat = tape.reshape(bb.hidden, &[batch.rows * batch.len, d])?;

    let mut logits = Vec::new();
    let mut targets = Vec::new();
    let mut masks = Vec::new();
    let mut terms = Vec::new();
    for k in 1..=horizon {
        let rows = batch.horizon(k);
        if rows.rows.is_empty() {
            continue;
        }
        let states = tape.gather_rows(flat, &rows.rows)?;
        let projected = project(tape, bundle, pv, states, k)?;
        logits.push(head(tape, bundle, pv, projected)?);
        masks.push(vec![true; rows.rows.len()]);
        if k >= 2 && cfg.objective == Objective::Lse {
            let backbone_target = tape.gather_rows(flat, &rows.latent_rows(cfg.latent_target))?;
            terms.push(LatentTerm { projected, backbone_target, target_tokens: rows.targets.clone() });
        }
        targets.push(rows.targets);
    }
    let ce = loss_mtp(tape, &logits, &targets, &masks)?;
    if cfg.objective == Objective::Lse && !terms.is_empty() {
        loss_lse(
            tape,
            ce,
            &terms,
            anchor.unwrap_or(pv[Layout::TOK_EMB]),
            cfg.lambda_latent,
            cfg.lambda_semantic,
            cfg.detach_latent_target,
            cfg.aux_reduction,
        )
    } else {
        Ok(LossParts { total: ce, ce, latent: None, semantic: None })
    }
}

/// Finite-difference check of the full objective gradient with respect to
/// every parameter. The semantic anchors are frozen at the unperturbed
/// embedding table so both sides see them as constants.
pub fn objective_grad_check(bundle: &ModelBundle<f64>, batch: &Batch, cfg: &TrainConfig, h: f64) -> Result<GradCheckReport, ModelError> {
    let frozen = bundle.params()[Layout::TOK_EMB].clone();
    grad_check(bundle.params(), h, |tape, pv| {
        let anchor = tape.constant(frozen.clone());
        objective_loss_anchored(tape, bundle, pv, batch, cfg, None, Some(anchor)).map(|p| p.total)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward::register;
    use crate::model::ModelConfig;
    use crate::tensor::{Precision, Tensor};
    use crate::trajgen::Vocabulary;

    fn cfg(horizon: usize) -> ModelConfig {
        ModelConfig { layers: 2, heads: 2, d_model: 16, block_size: 8, vocab_size: 15, horizon, dropout: 0.0, precision: Precision::F64 }
    }

    fn batch() -> Batch {
        let pad = 14;
        Batch::new(&[&[1, 3, 8, 6, 11, 9, pad, pad], &[0, 4, 9, 11, 6, pad, pad, pad]], pad).unwrap()
    }

    fn train_cfg(objective: Objective) -> TrainConfig {
        TrainConfig::for_objective(objective)
    }

    fn run(bundle: &ModelBundle<f64>, tc: &TrainConfig) -> (f64, f64, Option<f64>, Option<f64>) {
        let mut tape = Tape::new();
        let pv = register(&mut tape, bundle, true);
        let parts = objective_loss(&mut tape, bundle, &pv, &batch(), tc, None).unwrap();
        (tape.item(parts.total), tape.item(parts.ce), parts.latent.map(|v| tape.item(v)), parts.semantic.map(|v| tape.item(v)))
    }

    #[test]
    fn hand_computed_three_token_ntp() {
        let mut tape = Tape::<f64>::new();
        let z = [[1.0, 2.0, 0.5], [0.0, -1.0, 3.0], [2.0, 2.0, 2.0]];
        let logits = tape.constant(Tensor::from_f64(&[3, 3], z.as_flattened()).unwrap());
        let loss = loss_ntp(&mut tape, logits, &[1, 2, 0], &[true, true, false]).unwrap();
        let nll = |row: &[f64; 3], t: usize| row.iter().map(|v| v.exp()).sum::<f64>().ln() - row[t];
        let want = (nll(&z[0], 1) + nll(&z[1], 2)) / 2.0;
        assert!((tape.item(loss) - want).abs() < 1e-14);
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::from_f64(&[1, 4], &[0.0, 20.0, 0.0, 0.0]).unwrap());
        let loss = loss_ntp(&mut tape, logits, &[1], &[true]).unwrap();
        assert!(tape.item(loss) > 0.0 && tape.item(loss) < 1e-8);
    }

    #[test]
    fn mtp_with_one_horizon_is_ntp() {
        let b = ModelBundle::<f64>::init(cfg(1), Vocabulary::new(5), 1).unwrap();
        let ntp = run(&b, &train_cfg(Objective::Ntp));
        let mtp = run(&b, &train_cfg(Objective::Mtp));
        assert_eq!(ntp.0.to_bits(), mtp.0.to_bits());
    }

    #[test]
    fn mtp_matches_per_position_brute_force() {
        let b = ModelBundle::<f64>::init(cfg(3), Vocabulary::new(5), 2).unwrap();
        let batch = batch();
        let out = b.forward(&batch, 3).unwrap();
        let v = 15;
        let mut want = 0.0;
        for k in 1..=3 {
            let mut sum = 0.0;
            let mut count = 0;
            for r in 0..batch.rows {
                for p in 0..batch.len {
                    let t = p + k;
                    if t < 2 || t >= batch.lens[r] {
                        continue;
                    }
                    let row = &out.logits[k - 1].data()[(r * batch.len + p) * v..][..v];
                    let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
                    sum += lse - row[batch.token(r, t)];
                    count += 1;
                }
            }
            if count > 0 {
                want += sum / count as f64;
            }
        }
        let got = run(&b, &train_cfg(Objective::Mtp)).0;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn lse_decomposes_and_degenerates_to_mtp() {
        let b = ModelBundle::<f64>::init(cfg(4), Vocabulary::new(5), 3).unwrap();
        let (total, ce, latent, semantic) = run(&b, &train_cfg(Objective::Lse));
        let (latent, semantic) = (latent.unwrap(), semantic.unwrap());
        assert!(latent > 0.0 && semantic > 0.0);
        assert!((total - ce - 0.1 * latent - 0.1 * semantic).abs() < 1e-9);

        let mut zero = train_cfg(Objective::Lse);
        zero.lambda_latent = 0.0;
        zero.lambda_semantic = 0.0;
        let mtp = run(&b, &train_cfg(Objective::Mtp)).0;
        assert_eq!(run(&b, &zero).0.to_bits(), mtp.to_bits());
    }

    #[test]
    fn matching_states_have_zero_latent_loss() {
        let mut tape = Tape::<f64>::new();
        let h = tape.param(Tensor::from_f64(&[2, 3], &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap());
        let e = tape.param(Tensor::from_f64(&[4, 3], &[0.0; 12]).unwrap());
        let ce = tape.constant(Tensor::scalar(1.0));
        let parts = loss_lse(
            &mut tape,
            ce,
            &[LatentTerm { projected: h, backbone_target: h, target_tokens: vec![0, 3] }],
            e,
            0.1,
            0.1,
            false,
            AuxReduction::SumFeatures,
        )
        .unwrap();
        assert_eq!(tape.item(parts.latent.unwrap()), 0.0);
    }

    #[test]
    fn semantic_anchor_sends_no_gradient_to_the_embedding() {
        let mut tape = Tape::<f64>::new();
        let proj = tape.param(Tensor::from_f64(&[2, 3], &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap());
        let target = tape.param(Tensor::from_f64(&[2, 3], &[0.3, 0.2, 0.1, 0.0, 0.0, 1.0]).unwrap());
        let e = tape.param(Tensor::from_f64(&[4, 3], &[0.5; 12]).unwrap());
        let ce = tape.constant(Tensor::scalar(0.0));
        let parts = loss_lse(
            &mut tape,
            ce,
            &[LatentTerm { projected: proj, backbone_target: target, target_tokens: vec![1, 2] }],
            e,
            0.1,
            0.1,
            false,
            AuxReduction::SumFeatures,
        )
        .unwrap();
        let g = tape.backward(parts.semantic.unwrap()).unwrap();
        assert!(g.get(e).is_none());
        assert!(g.get(proj).is_some());
        let g = tape.backward(parts.latent.unwrap()).unwrap();
        // gradient reaches the backbone-side target unless detached
        assert!(g.get(target).unwrap().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn empty_horizon_mask_contributes_nothing() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_f64(&[1, 2], &[0.0, 0.0]).unwrap());
        let b = tape.constant(Tensor::from_f64(&[1, 2], &[5.0, -5.0]).unwrap());
        let l = loss_mtp(&mut tape, &[a, b], &[vec![0], vec![0]], &[vec![true], vec![false]]).unwrap();
        assert!((tape.item(l) - 2f64.ln()).abs() < 1e-15);
        assert!(loss_mtp(&mut tape, &[b], &[vec![0]], &[vec![false]]).is_err());
    }

    fn model_grad_check(objective: Objective, horizon: usize) -> f64 {
        let b = ModelBundle::<f64>::init(cfg(horizon), Vocabulary::new(5), 11).unwrap();
        // perturb transition layers and norms away from their structured init
        let mut b = b;
        let mut r = crate::rng::stream(5, "test/perturb", &[]);
        for p in b.params_mut() {
            use rand::Rng as _;
            for v in p.data_mut() {
                *v += r.random_range(-0.05..0.05);
            }
        }
        let tc = train_cfg(objective);
        let batch = batch();
        let bundle = &b;
        objective_grad_check(bundle, &batch, &tc, 1e-5).unwrap().max_rel_err
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        assert!(model_grad_check(Objective::Ntp, 1) < 1e-3);
        assert!(model_grad_check(Objective::Mtp, 4) < 1e-3);
        assert!(model_grad_check(Objective::Lse, 4) < 1e-3);
    }
}
