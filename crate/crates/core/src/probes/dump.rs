use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::ProbeError;
use crate::model::{Batch, ModelBundle};
use crate::rng;
use crate::tensor::{softmax_in_place, Scalar};
use crate::trajgen::{Source, TrajectoryCorpus};

const DUMP_VERSION: u32 = 1;
const CHUNK: usize = 256;

/// Ground truth around one hidden state. Position `pos` has consumed
/// `tokens[..=pos]`, so the walker stands at `nodes[pos - 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpRecord {
    /// Index into the corpus training split.
    pub traj: usize,
    pub pos: usize,
    pub source: Source,
    pub start: usize,
    pub goal: usize,
    pub current: usize,
    pub next_node: usize,
    pub next_token: usize,
    /// `future_tokens[k - 1] = tokens[pos + k]` while that is an increment.
    pub future_tokens: Vec<usize>,
    /// `future_nodes[k - 1]` is the node reached by `future_tokens[k - 1]`.
    pub future_nodes: Vec<usize>,
}

impl DumpRecord {
    pub fn future_token(&self, k: usize) -> Option<usize> {
        self.future_tokens.get(k.checked_sub(1)?).copied()
    }

    pub fn future_node(&self, k: usize) -> Option<usize> {
        self.future_nodes.get(k.checked_sub(1)?).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub version: u32,
    pub d: usize,
    pub k_eval: usize,
    pub vocab_size: usize,
    pub records: usize,
    pub trajectories: usize,
    pub seed: u64,
    pub has_probs: bool,
    pub graph_hash: String,
    pub corpus_hash: String,
    pub params_hash: String,
}

/// Unit-norm final-layer states with annotations, optionally with the
/// full next-token distribution at each position.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenDump {
    pub meta: DumpMeta,
    pub records: Vec<DumpRecord>,
    /// Row-major `[records, d]`.
    pub vectors: Vec<f64>,
    /// Row-major `[records, vocab_size]` when `meta.has_probs`.
    pub probs: Option<Vec<f64>>,
}

/// Annotations for every position `1 <= p <= L - 2` of the given training
/// trajectories, in trajectory then position order.
pub fn annotate(corpus: &TrajectoryCorpus, trajs: &[usize], k_eval: usize) -> Vec<DumpRecord> {
    let mut out = Vec::new();
    for &t in trajs {
        let tr = &corpus.train[t];
        let len = tr.len_tokens();
        for pos in 1..len.saturating_sub(1) {
            let horizon = (len - 1 - pos).min(k_eval);
            out.push(DumpRecord {
                traj: t,
                pos,
                source: tr.source,
                start: tr.start,
                goal: tr.goal,
                current: tr.nodes[pos - 1],
                next_node: tr.nodes[pos],
                next_token: tr.tokens[pos + 1],
                future_tokens: (1..=horizon).map(|k| tr.tokens[pos + k]).collect(),
                future_nodes: (1..=horizon).map(|k| tr.nodes[pos + k - 1]).collect(),
            });
        }
    }
    out
}

/// Distinct trajectories of `at` in first-appearance order, with each
/// entry's row in that list.
fn traj_rows(at: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
    let mut trajs = Vec::new();
    let mut rows = Vec::with_capacity(at.len());
    let mut seen = std::collections::HashMap::new();
    for &(t, _) in at {
        let i = *seen.entry(t).or_insert_with(|| {
            trajs.push(t);
            trajs.len() - 1
        });
        rows.push(i);
    }
    (trajs, rows)
}

/// Final-layer states (`[at, d]`) and, when asked, next-token distributions
/// (`[at, V]`) at `(training trajectory, position)` pairs.
pub(crate) fn evaluate<S: Scalar>(
    bundle: &ModelBundle<S>,
    corpus: &TrajectoryCorpus,
    at: &[(usize, usize)],
    normalize: bool,
    with_probs: bool,
) -> Result<(Vec<f64>, Option<Vec<f64>>), ProbeError> {
    let d = bundle.config.d_model;
    let v = bundle.vocab.size();
    let (trajs, rows) = traj_rows(at);
    let mut hidden = vec![0.0; at.len() * d];
    let mut probs = with_probs.then(|| vec![0.0; at.len() * v]);
    let mut by_traj: Vec<Vec<usize>> = vec![Vec::new(); trajs.len()];
    for (i, &r) in rows.iter().enumerate() {
        by_traj[r].push(i);
    }
    for (c, chunk) in trajs.chunks(CHUNK).enumerate() {
        let seqs: Vec<&[usize]> = chunk.iter().map(|&t| corpus.train[t].tokens.as_slice()).collect();
        let batch = Batch::new(&seqs, corpus.vocab.pad())?;
        let out = bundle.forward(&batch, usize::from(with_probs))?;
        let h = out.hidden.data();
        for b in 0..chunk.len() {
            for &i in &by_traj[c * CHUNK + b] {
                let flat = b * batch.len + at[i].1;
                let row: Vec<f64> = h[flat * d..(flat + 1) * d].iter().map(|x| x.as_f64()).collect();
                let norm = if normalize { row.iter().map(|x| x * x).sum::<f64>().sqrt() } else { 1.0 };
                for (dst, x) in hidden[i * d..(i + 1) * d].iter_mut().zip(&row) {
                    *dst = if norm > 0.0 { x / norm } else { 0.0 };
                }
                if let Some(p) = probs.as_mut() {
                    let z = &out.logits[0].data()[flat * v..(flat + 1) * v];
                    let dst = &mut p[i * v..(i + 1) * v];
                    for (o, x) in dst.iter_mut().zip(z) {
                        *o = x.as_f64();
                    }
                    softmax_in_place(dst);
                }
            }
        }
    }
    Ok((hidden, probs))
}

pub(crate) fn positions(records: &[DumpRecord]) -> Vec<(usize, usize)> {
    records.iter().map(|r| (r.traj, r.pos)).collect()
}

/// Samples `n_traj` training trajectories without replacement (all of them
/// if fewer exist) and records their unit-norm final-layer states.
pub fn build_dump<S: Scalar>(
    bundle: &ModelBundle<S>,
    corpus: &TrajectoryCorpus,
    n_traj: usize,
    k_eval: usize,
    with_probs: bool,
    seed: u64,
) -> Result<HiddenDump, ProbeError> {
    if bundle.vocab != corpus.vocab {
        return Err(ProbeError::Mismatch("model and corpus vocabularies differ".into()));
    }
    let total = corpus.train.len();
    let take = n_traj.min(total);
    let mut r = rng::stream(seed, "probe/dump", &[]);
    let mut trajs = index::sample(&mut r, total, take).into_vec();
    trajs.sort_unstable();
    let records = annotate(corpus, &trajs, k_eval);
    let (vectors, probs) = evaluate(bundle, corpus, &positions(&records), true, with_probs)?;
    Ok(HiddenDump {
        meta: DumpMeta {
            version: DUMP_VERSION,
            d: bundle.config.d_model,
            k_eval,
            vocab_size: bundle.vocab.size(),
            records: records.len(),
            trajectories: take,
            seed,
            has_probs: with_probs,
            graph_hash: corpus.graph_hash.clone(),
            corpus_hash: corpus.content_hash(),
            params_hash: bundle.params_hash(),
        },
        records,
        vectors,
        probs,
    })
}

impl HiddenDump {
    /// Builds a dump from explicit vectors (normalized here).
    pub fn from_parts(records: Vec<DumpRecord>, d: usize, raw: &[f64], probs: Option<(usize, Vec<f64>)>) -> Result<Self, ProbeError> {
        if raw.len() != records.len() * d {
            return Err(ProbeError::Mismatch(format!("{} values for {} records of width {d}", raw.len(), records.len())));
        }
        let mut vectors = raw.to_vec();
        for row in vectors.chunks_mut(d.max(1)) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        let k_eval = records.iter().map(|r| r.future_tokens.len()).max().unwrap_or(0);
        let trajectories = traj_rows(&positions(&records)).0.len();
        let (vocab_size, probs) = match probs {
            Some((v, p)) if p.len() == records.len() * v => (v, Some(p)),
            Some(_) => return Err(ProbeError::Mismatch("probability block has the wrong size".into())),
            None => (0, None),
        };
        Ok(HiddenDump {
            meta: DumpMeta {
                version: DUMP_VERSION,
                d,
                k_eval,
                vocab_size,
                records: records.len(),
                trajectories,
                seed: 0,
                has_probs: probs.is_some(),
                graph_hash: String::new(),
                corpus_hash: String::new(),
                params_hash: String::new(),
            },
            records,
            vectors,
            probs,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.meta.d..(i + 1) * self.meta.d]
    }

    pub fn probs(&self, i: usize) -> Option<&[f64]> {
        let v = self.meta.vocab_size;
        self.probs.as_ref().map(|p| &p[i * v..(i + 1) * v])
    }

    /// Dot product of two unit vectors.
    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        self.vector(i).iter().zip(self.vector(j)).map(|(a, b)| a * b).sum()
    }

    /// Sidecar path holding the meta line and one JSON record per row.
    pub fn sidecar(bin: &Path) -> PathBuf {
        bin.with_extension("jsonl")
    }

    /// Writes the vectors (then probabilities) as little-endian f64 to `bin`
    /// and the annotations to its `.jsonl` sidecar.
    pub fn save(&self, bin: &Path) -> Result<(), ProbeError> {
        let mut w = BufWriter::new(File::create(bin)?);
        for x in self.vectors.iter().chain(self.probs.iter().flatten()) {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        let mut s = BufWriter::new(File::create(Self::sidecar(bin))?);
        writeln!(s, "{}", json_line(&self.meta)?)?;
        for r in &self.records {
            writeln!(s, "{}", json_line(r)?)?;
        }
        s.flush()?;
        Ok(())
    }

    pub fn load(bin: &Path) -> Result<Self, ProbeError> {
        let fmt = |e: serde_json::Error| ProbeError::Format(e.to_string());
        let side = BufReader::new(File::open(Self::sidecar(bin))?);
        let mut lines = side.lines();
        let first = lines.next().ok_or_else(|| ProbeError::Format("empty dump sidecar".into()))??;
        let meta: DumpMeta = serde_json::from_str(&first).map_err(fmt)?;
        if meta.version != DUMP_VERSION {
            return Err(ProbeError::Format(format!("dump version {} (expected {DUMP_VERSION})", meta.version)));
        }
        let records: Vec<DumpRecord> = lines.map(|l| serde_json::from_str(&l?).map_err(fmt)).collect::<Result<_, ProbeError>>()?;
        if records.len() != meta.records {
            return Err(ProbeError::Format(format!("sidecar has {} records, meta says {}", records.len(), meta.records)));
        }
        let mut bytes = Vec::new();
        File::open(bin)?.read_to_end(&mut bytes)?;
        let n_vec = meta.records * meta.d;
        let n_prob = if meta.has_probs { meta.records * meta.vocab_size } else { 0 };
        if bytes.len() != 8 * (n_vec + n_prob) {
            return Err(ProbeError::Format(format!("dump block has {} bytes, expected {}", bytes.len(), 8 * (n_vec + n_prob))));
        }
        let all: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let (vectors, rest) = all.split_at(n_vec);
        Ok(HiddenDump { meta: meta.clone(), records, vectors: vectors.to_vec(), probs: meta.has_probs.then(|| rest.to_vec()) })
    }
}

fn json_line<T: Serialize>(v: &T) -> Result<String, ProbeError> {
    serde_json::to_string(v).map_err(|e| ProbeError::Format(e.to_string()))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::graphgen::{generate_usg, Graph};
    use crate::model::ModelConfig;
    use crate::trajgen::CorpusParams;

    pub(crate) fn fixture() -> (Graph, TrajectoryCorpus, ModelBundle<f64>) {
        let g = generate_usg(12, 0.3, 3).unwrap();
        let corpus = TrajectoryCorpus::build(&g, &CorpusParams { seed: 3, ..CorpusParams::default() }).unwrap();
        let cfg = ModelConfig { layers: 1, heads: 2, d_model: 8, ..ModelConfig::desk(corpus.block_size, corpus.vocab.size(), 2) };
        let bundle = ModelBundle::init(cfg, corpus.vocab, 5).unwrap();
        (g, corpus, bundle)
    }

    #[test]
    fn annotations_follow_the_walk() {
        let (_, corpus, _) = fixture();
        let recs = annotate(&corpus, &[0, 1, 2], 3);
        for r in &recs {
            let tr = &corpus.train[r.traj];
            assert_eq!(corpus.vocab.decode_offset(r.next_token), Some(r.next_node as i64 - r.current as i64));
            let mut at = r.current;
            for (k, &tok) in r.future_tokens.iter().enumerate() {
                at = (at as i64 + corpus.vocab.decode_offset(tok).unwrap()) as usize;
                assert_eq!(at, r.future_nodes[k]);
            }
            assert_eq!(r.future_nodes.first(), Some(&r.next_node));
            assert_eq!(r.pos == 1, r.current == tr.start);
        }
        let want: usize = [0, 1, 2].iter().map(|&t| corpus.train[t].len_tokens() - 2).sum();
        assert_eq!(recs.len(), want);
    }

    #[test]
    fn vectors_are_unit_and_roundtrip() {
        let (_, corpus, bundle) = fixture();
        let dump = build_dump(&bundle, &corpus, 20, 3, true, 9).unwrap();
        assert_eq!(dump.meta.trajectories, 20);
        for i in 0..dump.len() {
            let n: f64 = dump.vector(i).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-6);
            let p: f64 = dump.probs(i).unwrap().iter().sum();
            assert!((p - 1.0).abs() < 1e-9);
        }
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("h.bin");
        dump.save(&bin).unwrap();
        assert_eq!(HiddenDump::load(&bin).unwrap(), dump);
        let again = build_dump(&bundle, &corpus, 20, 3, true, 9).unwrap();
        assert_eq!(again, dump);
    }

    #[test]
    fn dump_states_match_a_single_sequence_forward() {
        let (_, corpus, bundle) = fixture();
        let dump = build_dump(&bundle, &corpus, 5, 2, false, 1).unwrap();
        let r = &dump.records[3];
        let batch = Batch::new(&[corpus.train[r.traj].tokens.as_slice()], corpus.vocab.pad()).unwrap();
        let h = bundle.forward(&batch, 1).unwrap().hidden;
        let d = bundle.config.d_model;
        let row = &h.data()[r.pos * d..(r.pos + 1) * d];
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, b) in row.iter().zip(dump.vector(3)) {
            assert!((a / n - b).abs() < 1e-12);
        }
    }
}
