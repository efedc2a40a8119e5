use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::paths::{k_shortest, shortest_path, shortest_path_avoiding, Blocked};
use super::{encode, Source, TrajError, Trajectory, Vocabulary};
use crate::graphgen::{reachable_pairs, Graph};
use crate::rng;

/// Path-generation knobs. `k_paths`, `p_detour` and `p_rec` have no
/// published values; the defaults below are this crate's own choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusParams {
    pub k_paths: usize,
    pub p_detour: f64,
    pub p_rec: f64,
    pub train_fraction: f64,
    pub seed: u64,
    pub dedup: bool,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams { k_paths: 3, p_detour: 0.3, p_rec: 0.3, train_fraction: 0.9, seed: 0, dedup: false }
    }
}

impl CorpusParams {
    /// Names of parameters still at their invented defaults.
    pub fn invented_defaults(&self) -> Vec<&'static str> {
        let d = CorpusParams::default();
        let mut out = Vec::new();
        if self.k_paths == d.k_paths {
            out.push("k_paths");
        }
        if self.p_detour == d.p_detour {
            out.push("p_detour");
        }
        if self.p_rec == d.p_rec {
            out.push("p_rec");
        }
        out
    }

    fn validate(&self) -> Result<(), TrajError> {
        if self.k_paths == 0 {
            return Err(TrajError::Parameter("k_paths must be at least 1".into()));
        }
        for (name, p) in [("p_detour", self.p_detour), ("p_rec", self.p_rec)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TrajError::Parameter(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(TrajError::Parameter(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        Ok(())
    }
}

/// Ordered `(source, target)` node pairs.
pub type Pairs = Vec<(usize, usize)>;

/// Source, target, node path and how the path was produced.
pub type RawTrajectory = (usize, usize, Vec<usize>, Source);

/// Deterministic shuffle-and-cut of a pair list: `floor(len * fraction)`
/// train pairs, the rest test. Input order does not matter.
pub fn split_pairs(pairs: &[(usize, usize)], train_fraction: f64, seed: u64) -> Result<(Pairs, Pairs), TrajError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(TrajError::Parameter(format!("train_fraction must lie in (0, 1), got {train_fraction}")));
    }
    let mut unique: Vec<(usize, usize)> = pairs.to_vec();
    unique.sort_unstable();
    unique.dedup();
    if unique.len() < 2 {
        return Err(TrajError::TooFewPairs(unique.len()));
    }
    unique.shuffle(&mut rng::stream(seed, "corpus/split", &[]));
    let cut = ((unique.len() as f64) * train_fraction).floor() as usize;
    let cut = cut.clamp(1, unique.len() - 1);
    let mut test = unique.split_off(cut);
    let mut train = unique;
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Diverse path generation for each training pair: the K shortest paths,
/// optionally a detour around one removed interior node of the shortest
/// path, and optionally a recovery path that first steps to a wrong
/// neighbour and then replans. Returns node paths with their source.
pub fn gen_corpus(g: &Graph, train_pairs: &[(usize, usize)], params: &CorpusParams) -> Result<Vec<RawTrajectory>, TrajError> {
    params.validate()?;
    let mut out = Vec::new();
    for &(s, t) in train_pairs {
        let mut rng = rng::stream(params.seed, "corpus/pair", &[s as u64, t as u64]);
        let ks = k_shortest(g, s, t, params.k_paths);
        let Some(best) = ks.first().cloned() else {
            continue;
        };
        for (i, p) in ks.into_iter().enumerate() {
            out.push((s, t, p, if i == 0 { Source::Shortest } else { Source::Kshort }));
        }

        let take_detour = rng.random::<f64>() < params.p_detour;
        if take_detour && best.len() > 4 {
            let &obstacle = best[1..best.len() - 1].choose(&mut rng).expect("interior is non-empty");
            let mut blocked = Blocked::default();
            blocked.nodes.insert(obstacle);
            if let Some(p) = shortest_path_avoiding(g, s, t, &blocked) {
                out.push((s, t, p, Source::Detour));
            }
        }

        let take_recovery = rng.random::<f64>() < params.p_rec;
        if take_recovery {
            let wrong: Vec<usize> = g.neighbors(s).iter().copied().filter(|&v| v != best[1]).collect();
            if let Some(&w) = wrong.choose(&mut rng) {
                if let Some(rest) = shortest_path(g, w, t) {
                    let mut p = vec![s];
                    p.extend(rest);
                    out.push((s, t, p, Source::Recovery));
                }
            }
        }
    }
    if params.dedup {
        let mut seen = HashSet::new();
        out.retain(|(s, t, p, _)| seen.insert((*s, *t, p.clone())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub vocab: Vocabulary,
    pub vocab_size: usize,
    pub pad_token: usize,
    pub block_size: usize,
    pub max_steps: usize,
    pub params: CorpusParams,
    pub invented_defaults: Vec<String>,
    pub graph_hash: String,
    pub rng_scheme: String,
    pub n_train_trajectories: usize,
    pub train_pairs: Vec<(usize, usize)>,
    pub test_pairs: Vec<(usize, usize)>,
}

/// Tokenized training trajectories plus the held-out pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCorpus {
    pub vocab: Vocabulary,
    pub block_size: usize,
    pub train: Vec<Trajectory>,
    pub train_pairs: Vec<(usize, usize)>,
    pub test_pairs: Vec<(usize, usize)>,
    pub params: CorpusParams,
    pub graph_hash: String,
}

impl TrajectoryCorpus {
    /// Reachable pairs, split, path generation and tokenization in one go.
    pub fn build(g: &Graph, params: &CorpusParams) -> Result<Self, TrajError> {
        params.validate()?;
        let pairs = reachable_pairs(g);
        let (train_pairs, test_pairs) = split_pairs(&pairs, params.train_fraction, params.seed)?;
        let raw = gen_corpus(g, &train_pairs, params)?;
        let max_steps = raw.iter().map(|(_, _, p, _)| p.len() - 1).max().unwrap_or(1);
        let block_size = 2 + max_steps + 1;
        let vocab = Vocabulary::new(g.n());
        let train = raw
            .into_iter()
            .map(|(start, goal, nodes, source)| {
                let tokens = encode(&nodes, &vocab, block_size)?;
                Ok(Trajectory { start, goal, nodes, tokens, source })
            })
            .collect::<Result<Vec<_>, TrajError>>()?;
        Ok(TrajectoryCorpus { vocab, block_size, train, train_pairs, test_pairs, params: params.clone(), graph_hash: g.content_hash() })
    }

    pub fn max_steps(&self) -> usize {
        self.train.iter().map(Trajectory::steps).max().unwrap_or(0)
    }

    pub fn manifest(&self) -> CorpusManifest {
        CorpusManifest {
            version: 1,
            vocab: self.vocab,
            vocab_size: self.vocab.size(),
            pad_token: self.vocab.pad(),
            block_size: self.block_size,
            max_steps: self.max_steps(),
            params: self.params.clone(),
            invented_defaults: self.params.invented_defaults().into_iter().map(String::from).collect(),
            graph_hash: self.graph_hash.clone(),
            rng_scheme: rng::RNG_SCHEME.into(),
            n_train_trajectories: self.train.len(),
            train_pairs: self.train_pairs.clone(),
            test_pairs: self.test_pairs.clone(),
        }
    }

    /// Writes `<stem>.jsonl` and `<stem>.manifest.json`.
    pub fn save(&self, jsonl: &Path) -> Result<(), TrajError> {
        let mut w = BufWriter::new(fs::File::create(jsonl)?);
        for t in &self.train {
            serde_json::to_writer(&mut w, t).map_err(|e| TrajError::Format(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let manifest = serde_json::to_string_pretty(&self.manifest()).map_err(|e| TrajError::Format(e.to_string()))?;
        fs::write(manifest_path(jsonl), manifest)?;
        Ok(())
    }

    pub fn load(jsonl: &Path) -> Result<Self, TrajError> {
        let manifest: CorpusManifest =
            serde_json::from_str(&fs::read_to_string(manifest_path(jsonl))?).map_err(|e| TrajError::Format(format!("manifest: {e}")))?;
        let reader = BufReader::new(fs::File::open(jsonl)?);
        let mut train = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Trajectory = serde_json::from_str(&line).map_err(|e| TrajError::Format(format!("line {}: {e}", i + 1)))?;
            if t.tokens.len() != manifest.block_size {
                return Err(TrajError::Format(format!("line {}: token length differs from block size", i + 1)));
            }
            train.push(t);
        }
        if train.len() != manifest.n_train_trajectories {
            return Err(TrajError::Format("trajectory count differs from manifest".into()));
        }
        Ok(TrajectoryCorpus {
            vocab: manifest.vocab,
            block_size: manifest.block_size,
            train,
            train_pairs: manifest.train_pairs,
            test_pairs: manifest.test_pairs,
            params: manifest.params,
            graph_hash: manifest.graph_hash,
        })
    }

    /// Hash over the manifest and every trajectory line.
    pub fn content_hash(&self) -> String {
        let mut buf = serde_json::to_vec(&self.manifest()).expect("manifest serializes");
        for t in &self.train {
            buf.extend(serde_json::to_vec(t).expect("trajectory serializes"));
        }
        rng::content_hash(&buf)
    }
}

pub fn manifest_path(jsonl: &Path) -> std::path::PathBuf {
    jsonl.with_extension("manifest.json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphgen::{generate_er, generate_usg, GraphKind, GraphParams};
    use crate::trajgen::{decode, is_legal_path};

    #[test]
    fn split_uses_floor_and_is_deterministic() {
        let pairs: Vec<_> = (0..10).map(|i| (i, i + 1)).collect();
        let (tr, te) = split_pairs(&pairs, 0.9, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (9, 1));
        assert_eq!(split_pairs(&pairs, 0.9, 3).unwrap(), (tr.clone(), te.clone()));
        let (h1, h2) = split_pairs(&pairs, 0.5, 3).unwrap();
        assert_eq!((h1.len(), h2.len()), (5, 5));
        assert!(te.iter().all(|p| !tr.contains(p)));
        assert!(matches!(split_pairs(&pairs[..1], 0.5, 0), Err(TrajError::TooFewPairs(1))));
    }

    #[test]
    fn no_augmentation_gives_exactly_the_k_shortest_sets() {
        let g = generate_usg(20, 0.3, 2).unwrap();
        let pairs = reachable_pairs(&g);
        let params = CorpusParams { p_detour: 0.0, p_rec: 0.0, ..Default::default() };
        let out = gen_corpus(&g, &pairs, &params).unwrap();
        let mut expected = Vec::new();
        for &(s, t) in &pairs {
            expected.extend(k_shortest(&g, s, t, 3).into_iter().map(|p| (s, t, p)));
        }
        let got: Vec<_> = out.into_iter().map(|(s, t, p, _)| (s, t, p)).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn chain_graph_yields_no_detours() {
        let edges: Vec<_> = (0..7).map(|i| (i, i + 1)).collect();
        let g = Graph::new(8, edges, None, GraphKind::Er, 0, GraphParams::default()).unwrap();
        let params = CorpusParams { p_detour: 1.0, p_rec: 0.0, ..Default::default() };
        let out = gen_corpus(&g, &reachable_pairs(&g), &params).unwrap();
        assert!(out.iter().all(|(_, _, _, src)| *src != Source::Detour));
    }

    #[test]
    fn every_trajectory_is_legal_and_decodes() {
        for (i, g) in [generate_usg(40, 0.3, 5).unwrap(), generate_er(40, 0.1, false, 5).unwrap()].iter().enumerate() {
            let params = CorpusParams { p_detour: 1.0, p_rec: 1.0, seed: i as u64, ..Default::default() };
            let c = TrajectoryCorpus::build(g, &params).unwrap();
            assert!(c.train.iter().any(|t| t.source == Source::Detour));
            assert!(c.train.iter().any(|t| t.source == Source::Recovery));
            let train: HashSet<_> = c.train_pairs.iter().copied().collect();
            for t in &c.train {
                assert!(is_legal_path(g, &t.nodes, t.goal));
                assert_eq!(decode(&t.tokens, &c.vocab).unwrap(), t.nodes);
                assert!(train.contains(&(t.start, t.goal)));
            }
            assert!(c.test_pairs.iter().all(|p| !train.contains(p)));
        }
    }

    #[test]
    fn save_load_round_trip() {
        let g = generate_usg(15, 0.3, 1).unwrap();
        let c = TrajectoryCorpus::build(&g, &CorpusParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        c.save(&path).unwrap();
        let back = TrajectoryCorpus::load(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.content_hash(), c.content_hash());
    }

    #[test]
    fn dedup_removes_exact_duplicates() {
        let g = generate_usg(20, 0.3, 4).unwrap();
        let pairs = reachable_pairs(&g);
        let params = CorpusParams { p_detour: 1.0, p_rec: 1.0, dedup: true, ..Default::default() };
        let out = gen_corpus(&g, &pairs, &params).unwrap();
        let uniq: HashSet<_> = out.iter().map(|(s, t, p, _)| (*s, *t, p.clone())).collect();
        assert_eq!(uniq.len(), out.len());
    }
}
