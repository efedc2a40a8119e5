use rand::Rng as _;

use super::bundle::{Layout, ModelBundle};
use super::{LatentTarget, ModelError};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Right-padded token sequences trimmed to the longest unpadded length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub tokens: Vec<usize>,
    pub rows: usize,
    pub len: usize,
    /// Unpadded length of each row.
    pub lens: Vec<usize>,
}

impl Batch {
    /// Each sequence ends at its first `pad` token (or its full length).
    pub fn new(seqs: &[&[usize]], pad: usize) -> Result<Self, ModelError> {
        if seqs.is_empty() {
            return Err(ModelError::Config("empty batch".into()));
        }
        let lens: Vec<usize> = seqs.iter().map(|s| s.iter().position(|&t| t == pad).unwrap_or(s.len())).collect();
        let len = *lens.iter().max().unwrap();
        if len == 0 {
            return Err(ModelError::Config("batch of empty sequences".into()));
        }
        let mut tokens = Vec::with_capacity(seqs.len() * len);
        for (s, &l) in seqs.iter().zip(&lens) {
            tokens.extend_from_slice(&s[..l]);
            tokens.extend(std::iter::repeat_n(pad, len - l));
        }
        Ok(Batch { tokens, rows: seqs.len(), len, lens })
    }

    pub fn token(&self, row: usize, pos: usize) -> usize {
        self.tokens[row * self.len + pos]
    }

    /// Flat `(row, position)` indices whose horizon-`k` target
    /// `tokens[pos + k]` is an increment inside the unpadded sequence, with
    /// the targets themselves.
    pub fn horizon(&self, k: usize) -> HorizonRows {
        let mut out = HorizonRows { k, rows: Vec::new(), targets: Vec::new() };
        for (r, &l) in self.lens.iter().enumerate() {
            for p in 0..l {
                let t = p + k;
                if t >= 2 && t < l {
                    out.rows.push(r * self.len + p);
                    out.targets.push(self.token(r, t));
                }
            }
        }
        out
    }

    /// Full-length mask form of [`Batch::horizon`], one flag per position.
    pub fn horizon_mask(&self, k: usize) -> (Vec<usize>, Vec<bool>) {
        let h = self.horizon(k);
        let mut targets = vec![0; self.rows * self.len];
        let mut mask = vec![false; self.rows * self.len];
        for (&r, &t) in h.rows.iter().zip(&h.targets) {
            targets[r] = t;
            mask[r] = true;
        }
        (targets, mask)
    }
}

/// Positions supervised at one horizon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizonRows {
    pub k: usize,
    /// Flat `row * len + pos` indices.
    pub rows: Vec<usize>,
    pub targets: Vec<usize>,
}

impl HorizonRows {
    /// Flat indices of the backbone states the projected states are pulled
    /// towards.
    pub fn latent_rows(&self, target: LatentTarget) -> Vec<usize> {
        let shift = match target {
            LatentTarget::Aligned => self.k - 1,
            LatentTarget::Shifted => self.k,
        };
        self.rows.iter().map(|&r| r + shift).collect()
    }
}

/// Parameters registered on a tape, in schedule order.
pub fn register<S: Scalar>(tape: &mut Tape<S>, bundle: &ModelBundle<S>, trainable: bool) -> Vec<Var> {
    bundle.params().iter().map(|p| if trainable { tape.param(p.clone()) } else { tape.constant(p.clone()) }).collect()
}

pub struct Backbone {
    /// Final-layer, post-norm states `[B, T, d]`.
    pub hidden: Var,
    /// Attention probabilities `[B, H, T, T]` per layer, when requested.
    pub attention: Vec<Var>,
}

fn dropout<S: Scalar>(tape: &mut Tape<S>, x: Var, p: f64, rng: Option<&mut Rng>) -> Result<Var, ModelError> {
    let Some(rng) = rng else { return Ok(x) };
    if p == 0.0 {
        return Ok(x);
    }
    let keep = S::from_f64(1.0 / (1.0 - p));
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<S> = (0..n).map(|_| if rng.random::<f64>() < p { S::zero() } else { keep }).collect();
    let m = tape.constant(Tensor::new(&shape, mask)?);
    Ok(tape.mul(x, m)?)
}

/// Causal pre-norm Transformer over `batch`.
pub fn backbone<S: Scalar>(
    tape: &mut Tape<S>,
    bundle: &ModelBundle<S>,
    pv: &[Var],
    batch: &Batch,
    mut drop_rng: Option<&mut Rng>,
    keep_attention: bool,
) -> Result<Backbone, ModelError> {
    let cfg = &bundle.config;
    let (b, t, d, h) = (batch.rows, batch.len, cfg.d_model, cfg.heads);
    let dh = cfg.head_dim();
    if t > cfg.block_size {
        return Err(ModelError::Config(format!("sequence length {t} exceeds block size {}", cfg.block_size)));
    }
    if let Some(&bad) = batch.tokens.iter().find(|&&tok| tok >= cfg.vocab_size) {
        return Err(ModelError::Config(format!("token {bad} outside a {}-token vocabulary", cfg.vocab_size)));
    }
    let lay: Layout = bundle.layout();
    let p = cfg.dropout;

    let x = tape.gather_rows(pv[Layout::TOK_EMB], &batch.tokens)?;
    let x = tape.reshape(x, &[b, t, d])?;
    let pos = tape.slice(pv[Layout::POS_EMB], 0, 0, t)?;
    let mut x = tape.add(x, pos)?;
    x = dropout(tape, x, p, drop_rng.as_deref_mut())?;

    let mut attention = Vec::new();
    let scale = 1.0 / (dh as f64).sqrt();
    for l in 0..cfg.layers {
        let w = |i: usize| pv[lay.block(l, i)];
        let a = tape.layer_norm(x, w(0), w(1), 1e-5)?;
        let qkv = tape.matmul(a, w(2))?;
        let qkv = tape.add(qkv, w(3))?;
        let split = |tape: &mut Tape<S>, i: usize, perm: &[usize]| -> Result<Var, ModelError> {
            let s = tape.slice(qkv, 2, i * d, d)?;
            let s = tape.reshape(s, &[b, t, h, dh])?;
            Ok(tape.permute(s, perm)?)
        };
        let q = split(tape, 0, &[0, 2, 1, 3])?;
        let kt = split(tape, 1, &[0, 2, 3, 1])?;
        let v = split(tape, 2, &[0, 2, 1, 3])?;
        let att = tape.matmul(q, kt)?;
        let att = tape.scale(att, scale);
        let att = tape.causal_mask(att)?;
        let att = tape.softmax(att)?;
        if keep_attention {
            attention.push(att);
        }
        let y = tape.matmul(att, v)?;
        let y = tape.permute(y, &[0, 2, 1, 3])?;
        let y = tape.reshape(y, &[b, t, d])?;
        let y = tape.matmul(y, w(4))?;
        let y = tape.add(y, w(5))?;
        let y = dropout(tape, y, p, drop_rng.as_deref_mut())?;
        x = tape.add(x, y)?;

        let m = tape.layer_norm(x, w(6), w(7), 1e-5)?;
        let m = tape.matmul(m, w(8))?;
        let m = tape.add(m, w(9))?;
        let m = tape.gelu(m);
        let m = tape.matmul(m, w(10))?;
        let m = tape.add(m, w(11))?;
        let m = dropout(tape, m, p, drop_rng.as_deref_mut())?;
        x = tape.add(x, m)?;
    }
    let hidden = tape.layer_norm(x, pv[lay.ln_f_gamma()], pv[lay.ln_f_beta()], 1e-5)?;
    Ok(Backbone { hidden, attention })
}

/// `T^(k-1)` applied to states whose last axis is `d`; identity for `k = 1`.
pub fn project<S: Scalar>(tape: &mut Tape<S>, bundle: &ModelBundle<S>, pv: &[Var], states: Var, k: usize) -> Result<Var, ModelError> {
    if k == 1 {
        return Ok(states);
    }
    if k > bundle.config.horizon {
        return Err(ModelError::Config(format!("horizon {k} beyond model horizon {}", bundle.config.horizon)));
    }
    bundle.count_transition_eval();
    let i = bundle.layout().trans(k);
    let y = tape.matmul(states, pv[i])?;
    Ok(tape.add(y, pv[i + 1])?)
}

/// Shared output head.
pub fn head<S: Scalar>(tape: &mut Tape<S>, bundle: &ModelBundle<S>, pv: &[Var], states: Var) -> Result<Var, ModelError> {
    Ok(tape.matmul(states, pv[bundle.layout().head()])?)
}

/// Values of one inference pass.
pub struct ForwardOutput<S> {
    /// `[B, T, d]`, final layer after the final norm.
    pub hidden: Tensor<S>,
    /// `[B, T, V]` for horizons `1..=horizons`.
    pub logits: Vec<Tensor<S>>,
}

impl<S: Scalar> ModelBundle<S> {
    /// Hidden states and logits for horizons `1..=horizons` (no gradients).
    pub fn forward(&self, batch: &Batch, horizons: usize) -> Result<ForwardOutput<S>, ModelError> {
        let mut tape = Tape::new();
        let pv = register(&mut tape, self, false);
        let bb = backbone(&mut tape, self, &pv, batch, None, false)?;
        let mut logits = Vec::with_capacity(horizons);
        for k in 1..=horizons {
            let s = project(&mut tape, self, &pv, bb.hidden, k)?;
            let z = head(&mut tape, self, &pv, s)?;
            logits.push(tape.value(z).clone());
        }
        Ok(ForwardOutput { hidden: tape.value(bb.hidden).clone(), logits })
    }

    /// Attention probabilities `[B, H, T, T]` of every layer.
    pub fn attention(&self, batch: &Batch) -> Result<Vec<Tensor<S>>, ModelError> {
        let mut tape = Tape::new();
        let pv = register(&mut tape, self, false);
        let bb = backbone(&mut tape, self, &pv, batch, None, true)?;
        Ok(bb.attention.iter().map(|&a| tape.value(a).clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tensor::Precision;
    use crate::trajgen::Vocabulary;

    fn bundle(horizon: usize, seed: u64) -> ModelBundle<f64> {
        let cfg = ModelConfig {
            layers: 2,
            heads: 2,
            d_model: 8,
            block_size: 9,
            vocab_size: 18,
            horizon,
            dropout: 0.0,
            precision: Precision::F64,
        };
        ModelBundle::init(cfg, Vocabulary::new(6), seed).unwrap()
    }

    fn batch() -> Batch {
        let pad = 17;
        Batch::new(&[&[1, 4, 9, 7, 12, pad, pad], &[0, 5, 10, 11, 6, 8, pad]], pad).unwrap()
    }

    #[test]
    fn batch_trims_to_longest_row() {
        let b = batch();
        assert_eq!((b.rows, b.len), (2, 6));
        assert_eq!(b.lens, vec![5, 6]);
        let h1 = b.horizon(1);
        // row 0 targets positions 2..=4, row 1 targets 2..=5
        assert_eq!(h1.rows, vec![1, 2, 3, 7, 8, 9, 10]);
        let h4 = b.horizon(4);
        assert_eq!(h4.rows, vec![0, 6, 7]);
        assert_eq!(h4.targets, vec![12, 6, 8]);
        assert_eq!(h4.latent_rows(LatentTarget::Aligned), vec![3, 9, 10]);
        assert!(b.horizon(6).rows.is_empty());
    }

    #[test]
    fn horizon_masks_never_touch_pads() {
        let b = batch();
        for k in 1..=5 {
            let h = b.horizon(k);
            for (&r, &t) in h.rows.iter().zip(&h.targets) {
                assert_ne!(t, 17);
                let (row, pos) = (r / b.len, r % b.len);
                assert!(pos + k < b.lens[row]);
            }
        }
    }

    #[test]
    fn attention_is_causal_and_normalized() {
        let m = bundle(1, 1);
        for att in m.attention(&batch()).unwrap() {
            let t = 6;
            for mat in att.data().chunks(t * t) {
                for i in 0..t {
                    let row = &mat[i * t..(i + 1) * t];
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(row[i + 1..].iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn future_tokens_do_not_affect_earlier_positions() {
        let m = bundle(2, 2);
        let a = batch();
        let mut b = a.clone();
        b.tokens[4] = 13; // row 0, position 4
        let (fa, fb) = (m.forward(&a, 2).unwrap(), m.forward(&b, 2).unwrap());
        let v = 18;
        for k in 0..2 {
            assert_eq!(fa.logits[k].data()[..4 * v], fb.logits[k].data()[..4 * v]);
            assert_ne!(fa.logits[k].data()[4 * v..5 * v], fb.logits[k].data()[4 * v..5 * v]);
            assert_eq!(fa.logits[k].data()[6 * v..], fb.logits[k].data()[6 * v..]);
        }
    }

    #[test]
    fn first_horizon_ignores_transition_layers() {
        let m4 = bundle(4, 5);
        let mut m1 = bundle(1, 5);
        let n1 = m1.params().len();
        for (dst, src) in m1.params_mut().iter_mut().zip(&m4.params()[..n1]) {
            *dst = src.clone();
        }
        let b = batch();
        assert_eq!(m1.forward(&b, 1).unwrap().logits[0], m4.forward(&b, 4).unwrap().logits[0]);
    }

    #[test]
    fn rejects_out_of_range_tokens() {
        let m = bundle(1, 0);
        let b = Batch { tokens: vec![0, 18], rows: 1, len: 2, lens: vec![2] };
        assert!(m.forward(&b, 1).is_err());
    }
}
