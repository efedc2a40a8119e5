//! Central finite-difference gradient checks.
#![allow(clippy::needless_range_loop)] // index notation mirrors the math

use super::{Tape, Tensor, TensorError, Var};

/// Worst disagreement between analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `|a - n| / max(|a|, |n|, 1e-6)`, maximized over all checked entries.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// (parameter index, flat element index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares `backward` against central differences with step `h` for every
/// element of every parameter. `f` builds a scalar loss from the parameters
/// registered on a fresh tape, in order.
pub fn grad_check<F, E>(params: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.item(loss))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport { max_rel_err: 0.0, max_abs_err: 0.0, worst: (0, 0), checked: 0 };
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = grads.get(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; params[pi].numel()]);
        for e in 0..params[pi].numel() {
            let orig = params[pi].data()[e];
            work[pi].data_mut()[e] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[e] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[e];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-6);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (pi, e);
            }
            report.max_abs_err = report.max_abs_err.max(abs);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng as _;

    fn random(shape: &[usize], rng: &mut crate::rng::Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn every_op_passes_on_a_mixed_graph() {
        let mut rng = stream(7, "test/gradcheck", &[]);
        let params = vec![
            random(&[2, 3, 4], &mut rng), // x
            random(&[4, 4], &mut rng),    // w
            random(&[4], &mut rng),       // gamma
            random(&[4], &mut rng),       // beta
            random(&[5, 4], &mut rng),    // embedding
            random(&[4, 6], &mut rng),    // head
            random(&[3, 4], &mut rng),    // target rows
        ];
        let report = grad_check(&params, 1e-5, |t, v| -> Result<Var, TensorError> {
            let (x, w, g, b, emb, head, tgt) = (v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
            let e = t.gather_rows(emb, &[1, 4, 1])?;
            let x = t.add(x, e)?;
            let y = t.layer_norm(x, g, b, 1e-5)?;
            let q = t.matmul(y, w)?;
            let k = t.transpose(y)?;
            let att = t.matmul(q, k)?;
            let att = t.scale(att, 0.5);
            let att = t.causal_mask(att)?;
            let att = t.softmax(att)?;
            let z = t.matmul(att, y)?;
            let z = t.gelu(z);
            let z = t.mul(z, g)?;
            let p = t.permute(z, &[1, 0, 2])?;
            let p = t.slice(p, 0, 1, 2)?;
            let rows = t.reshape(p, &[4, 4])?;
            let logits = t.matmul(rows, head)?;
            let ce = t.cross_entropy(logits, &[0, 5, 2, 3], &[true, true, false, true])?;
            let first = t.slice(z, 0, 0, 1)?;
            let first = t.reshape(first, &[3, 4])?;
            let diff = t.sub(first, tgt)?;
            let mse = t.mse_rows(diff, tgt)?;
            let nrm = t.l2_norm(first)?;
            let nrm = t.mean(nrm)?;
            let s = t.add(ce, mse)?;
            t.add(s, nrm)
        })
        .unwrap();
        assert_eq!(report.checked, 24 + 16 + 4 + 4 + 20 + 24 + 12);
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn batched_matmul_and_sum() {
        let mut rng = stream(8, "test/gradcheck", &[]);
        let params = vec![random(&[2, 3, 4], &mut rng), random(&[2, 4, 5], &mut rng)];
        let report = grad_check(&params, 1e-5, |t, v| -> Result<Var, TensorError> {
            let m = t.matmul(v[0], v[1])?;
            let m2 = t.mul(m, m)?;
            Ok(t.sum(m2))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let params = vec![Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap()];
        let report = grad_check(&params, 1e-5, |t, _| -> Result<Var, TensorError> {
            let c = t.constant(Tensor::from_f64(&[2], &[4.0, -1.0])?);
            Ok(t.sum(c))
        })
        .unwrap();
        assert_eq!(report.max_abs_err, 0.0);
    }

    #[test]
    fn gradients_are_linear_in_the_loss() {
        let mut rng = stream(9, "test/gradcheck", &[]);
        let x = random(&[3, 4], &mut rng);
        let run = |c: f64| {
            let mut t = Tape::new();
            let v = t.param(x.clone());
            let g = t.gelu(v);
            let s = t.sum(g);
            let s = t.scale(s, c);
            t.backward(s).unwrap().get(v).unwrap().to_vec()
        };
        let (g1, g3) = (run(1.0), run(3.0));
        for (a, b) in g1.iter().zip(&g3) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn repeated_passes_are_bit_identical() {
        let mut rng = stream(10, "test/gradcheck", &[]);
        let x = random(&[4, 8], &mut rng);
        let w = random(&[8, 8], &mut rng);
        let run = || {
            let mut t = Tape::new();
            let (a, b) = (t.param(x.clone()), t.param(w.clone()));
            let m = t.matmul(a, b).unwrap();
            let s = t.softmax(m).unwrap();
            let l = t.cross_entropy(s, &[0, 1, 2, 3], &[true; 4]).unwrap();
            let g = t.backward(l).unwrap();
            (t.item(l).to_bits(), g.get(b).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }
}
