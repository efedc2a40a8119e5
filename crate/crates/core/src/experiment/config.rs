use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::graphgen::{generate_er, generate_usg, Graph, GraphKind};
use crate::model::{AuxReduction, ModelConfig, Objective, TrainConfig};
use crate::rng;
use crate::tensor::Precision;
use crate::trajgen::CorpusParams;

/// Named scale of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Reduced grid that fits a single CPU in well under an hour.
    Ci,
    /// 50-node graphs, 4 layers, width 64, 4000 iterations.
    Desk,
    /// 100-node graphs and the published model and schedule.
    Paper,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Ci => "ci",
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ci" => Ok(Preset::Ci),
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(format!("unknown preset '{other}' (expected ci, desk or paper)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub kind: GraphKind,
    pub n: usize,
    /// Edge probability (ER kinds).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Mesh density (USG).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl GraphSpec {
    pub fn usg(n: usize, rho: f64) -> Self {
        GraphSpec { kind: GraphKind::Usg, n, p: None, rho: Some(rho) }
    }

    pub fn er(n: usize, p: f64) -> Self {
        GraphSpec { kind: GraphKind::Er, n, p: Some(p), rho: None }
    }

    /// Directory-safe name such as `usg50`.
    pub fn label(&self) -> String {
        format!("{}{}", self.kind, self.n)
    }

    pub fn build(&self, seed: u64) -> Result<Graph, ExperimentError> {
        let missing = |what: &str| ExperimentError::Config(format!("graph {} needs '{what}'", self.label()));
        Ok(match self.kind {
            GraphKind::Usg => generate_usg(self.n, self.rho.ok_or_else(|| missing("rho"))?, seed)?,
            GraphKind::Er => generate_er(self.n, self.p.ok_or_else(|| missing("p"))?, false, seed)?,
            GraphKind::ErDag => generate_er(self.n, self.p.ok_or_else(|| missing("p"))?, true, seed)?,
        })
    }
}

/// Corpus knobs; the seed comes from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub k_paths: usize,
    pub p_detour: f64,
    pub p_rec: f64,
    pub train_fraction: f64,
    pub dedup: bool,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        let d = CorpusParams::default();
        CorpusSpec { k_paths: d.k_paths, p_detour: d.p_detour, p_rec: d.p_rec, train_fraction: d.train_fraction, dedup: d.dedup }
    }
}

impl CorpusSpec {
    pub fn params(&self, seed: u64) -> CorpusParams {
        CorpusParams {
            k_paths: self.k_paths,
            p_detour: self.p_detour,
            p_rec: self.p_rec,
            train_fraction: self.train_fraction,
            seed,
            dedup: self.dedup,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
}

/// Optimizer and schedule shared by every variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub iters: usize,
    pub batch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup: usize,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Checkpoint cadence for the contractivity trace (0: start and end only).
    pub checkpoint_every: usize,
    pub aux_reduction: AuxReduction,
    pub detach_latent_target: bool,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSpec {
            iters: d.iters,
            batch: d.batch,
            lr_max: d.lr_max,
            lr_min: d.lr_min,
            warmup: d.warmup,
            weight_decay: d.weight_decay,
            grad_clip: d.grad_clip,
            checkpoint_every: 400,
            aux_reduction: d.aux_reduction,
            detach_latent_target: d.detach_latent_target,
        }
    }
}

/// One training objective of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub objective: Objective,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_latent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_semantic: Option<f64>,
    /// Graph labels this variant runs on; empty means all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub graphs: Vec<String>,
}

impl VariantSpec {
    pub fn new(objective: Objective, k: usize) -> Self {
        VariantSpec { objective, k, lambda_latent: None, lambda_semantic: None, graphs: Vec::new() }
    }

    pub fn only(mut self, graphs: &[&str]) -> Self {
        self.graphs = graphs.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn lambdas(&self) -> (f64, f64) {
        let d = TrainConfig::for_objective(self.objective);
        (self.lambda_latent.unwrap_or(d.lambda_latent), self.lambda_semantic.unwrap_or(d.lambda_semantic))
    }

    /// `ntp`, `mtp2`, `lse4`, or `lse4-l0.3-s0` for non-default weights.
    pub fn tag(&self) -> String {
        let mut t = match self.objective {
            Objective::Ntp => "ntp".to_string(),
            o => format!("{o}{}", self.k),
        };
        if self.objective == Objective::Lse && (self.lambda_latent.is_some() || self.lambda_semantic.is_some()) {
            let (l, s) = self.lambdas();
            t.push_str(&format!("-l{l}-s{s}"));
        }
        t
    }

    pub fn runs_on(&self, graph: &str) -> bool {
        self.graphs.is_empty() || self.graphs.iter().any(|g| g == graph)
    }
}

/// Probe sizes. The published study samples 4000 trajectories and 10000 ISP
/// contexts; smaller presets shrink both by the same factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSpec {
    pub dump_trajectories: usize,
    pub pairs: usize,
    pub k_eval: usize,
    pub isp_samples: usize,
    pub isp_window: [usize; 2],
    pub eps: f64,
    pub state_epochs: usize,
    pub state_test_fraction: f64,
    pub contractivity_trajectories: usize,
    pub contractivity_pairs: usize,
    pub contractivity_k: usize,
    pub detour_p: f64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            dump_trajectories: 4000,
            pairs: 4000,
            k_eval: 4,
            isp_samples: 10000,
            isp_window: [2, 4],
            eps: 0.01,
            state_epochs: 200,
            state_test_fraction: 0.2,
            contractivity_trajectories: 500,
            contractivity_pairs: 2000,
            contractivity_k: 2,
            detour_p: 0.1,
        }
    }
}

impl ProbeSpec {
    /// Fraction of the published sample sizes.
    pub fn scale_factor(&self) -> f64 {
        self.dump_trajectories as f64 / 4000.0
    }

    pub fn scaled(factor: f64) -> Self {
        let d = ProbeSpec::default();
        let s = |x: usize| ((x as f64 * factor).round() as usize).max(1);
        ProbeSpec { dump_trajectories: s(d.dump_trajectories), pairs: s(d.pairs), isp_samples: s(d.isp_samples), ..d }
    }
}

/// A complete experiment: worlds, variants, probes and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub master_seed: u64,
    /// Independent replicates; each gets its own graph, corpus and inits.
    pub reps: usize,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Keep every intermediate checkpoint instead of only the final one.
    #[serde(default)]
    pub keep_checkpoints: bool,
    pub graphs: Vec<GraphSpec>,
    #[serde(default)]
    pub corpus: CorpusSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSpec,
    pub variants: Vec<VariantSpec>,
    #[serde(default)]
    pub probes: ProbeSpec,
}

/// Variants needed by the grid criteria: the full MTP ladder on both
/// graphs, LSE at K=4 on both and at K=2 on USG.
fn standard_variants(usg: &str) -> Vec<VariantSpec> {
    vec![
        VariantSpec::new(Objective::Ntp, 1),
        VariantSpec::new(Objective::Mtp, 2),
        VariantSpec::new(Objective::Mtp, 3),
        VariantSpec::new(Objective::Mtp, 4),
        VariantSpec::new(Objective::Lse, 2).only(&[usg]),
        VariantSpec::new(Objective::Lse, 4),
    ]
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => RunConfig {
                name: "desk".into(),
                master_seed: 0,
                reps: 3,
                precision: Precision::F32,
                out_dir: None,
                keep_checkpoints: false,
                graphs: vec![GraphSpec::usg(50, 0.3), GraphSpec::er(50, 0.08)],
                corpus: CorpusSpec::default(),
                model: ModelSpec { layers: 4, heads: 4, d_model: 64 },
                train: TrainSpec { iters: 4000, batch: 128, checkpoint_every: 400, ..TrainSpec::default() },
                variants: standard_variants("usg50"),
                probes: ProbeSpec::default(),
            },
            Preset::Ci => RunConfig {
                name: "ci".into(),
                model: ModelSpec { layers: 2, heads: 2, d_model: 48 },
                train: TrainSpec {
                    iters: 1500,
                    batch: 32,
                    lr_max: 2e-3,
                    lr_min: 2e-4,
                    warmup: 150,
                    checkpoint_every: 150,
                    ..TrainSpec::default()
                },
                probes: ProbeSpec { contractivity_trajectories: 300, ..ProbeSpec::scaled(0.25) },
                ..Self::preset(Preset::Desk)
            },
            Preset::Paper => RunConfig {
                name: "paper".into(),
                precision: Precision::F64,
                graphs: vec![GraphSpec::usg(100, 0.3), GraphSpec::er(100, 0.04)],
                model: ModelSpec { layers: 6, heads: 6, d_model: 120 },
                train: TrainSpec { iters: 20000, batch: 1024, checkpoint_every: 2000, ..TrainSpec::default() },
                variants: {
                    let mut v = standard_variants("usg100");
                    v[4].graphs.clear();
                    v.insert(5, VariantSpec::new(Objective::Lse, 3));
                    v
                },
                ..Self::preset(Preset::Desk)
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|_| ExperimentError::MissingInput(path.to_path_buf()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.graphs.is_empty() || self.variants.is_empty() {
            return bad("need at least one graph and one variant".into());
        }
        let mut labels: Vec<String> = self.graphs.iter().map(GraphSpec::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("graph labels must be distinct".into());
        }
        let mut tags: Vec<String> = self.variants.iter().map(VariantSpec::tag).collect();
        tags.sort();
        if tags.windows(2).any(|w| w[0] == w[1]) {
            return bad("variant tags must be distinct".into());
        }
        for v in &self.variants {
            if let Some(g) = v.graphs.iter().find(|g| !labels.contains(g)) {
                return bad(format!("variant {} names unknown graph '{g}'", v.tag()));
            }
            // borrow the model and training checks with a placeholder block size
            let mc = self.model_config(v, 8, 4);
            mc.validate().map_err(|e| ExperimentError::Config(format!("variant {}: {e}", v.tag())))?;
            self.train_config(v, 0).validate(&mc).map_err(|e| ExperimentError::Config(format!("variant {}: {e}", v.tag())))?;
        }
        let p = &self.probes;
        if p.k_eval < 2 || p.isp_window[0] < 2 || p.isp_window[1] < p.isp_window[0] {
            return bad("probes need k_eval >= 2 and an ISP window 2 <= lo <= hi".into());
        }
        if p.contractivity_k < 2 {
            return bad("contractivity_k must be at least 2".into());
        }
        Ok(())
    }

    pub fn model_config(&self, v: &VariantSpec, block_size: usize, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            layers: self.model.layers,
            heads: self.model.heads,
            d_model: self.model.d_model,
            block_size,
            vocab_size,
            horizon: v.k,
            dropout: 0.0,
            precision: self.precision,
        }
    }

    pub fn train_config(&self, v: &VariantSpec, seed: u64) -> TrainConfig {
        let t = &self.train;
        let (lambda_latent, lambda_semantic) = v.lambdas();
        TrainConfig {
            iters: t.iters,
            batch: t.batch,
            lr_max: t.lr_max,
            lr_min: t.lr_min,
            warmup: t.warmup,
            weight_decay: t.weight_decay,
            grad_clip: t.grad_clip,
            checkpoint_every: t.checkpoint_every,
            aux_reduction: t.aux_reduction,
            detach_latent_target: t.detach_latent_target,
            lambda_latent,
            lambda_semantic,
            objective: v.objective,
            seed,
            ..TrainConfig::default()
        }
    }

    /// Seed of the graph of replicate `rep`.
    pub fn graph_seed(&self, graph: &GraphSpec, rep: usize) -> u64 {
        rng::derive_seed(self.master_seed, &format!("graph/{}", graph.label()), &[rep as u64])
    }

    pub fn corpus_seed(&self, graph: &GraphSpec, rep: usize) -> u64 {
        rng::derive_seed(self.master_seed, &format!("corpus/{}", graph.label()), &[rep as u64])
    }

    /// Initialization and batch-order seed of one variant.
    pub fn variant_seed(&self, graph: &GraphSpec, rep: usize, v: &VariantSpec) -> u64 {
        rng::derive_seed(self.master_seed, &format!("variant/{}/{}", graph.label(), v.tag()), &[rep as u64])
    }

    /// Probe seed; shared across variants so every model is scored on the
    /// same trajectories and pairs.
    pub fn probe_seed(&self, graph: &GraphSpec, rep: usize) -> u64 {
        rng::derive_seed(self.master_seed, &format!("probe/{}", graph.label()), &[rep as u64])
    }

    /// Hash of everything that determines results (the output directory
    /// excluded).
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        rng::content_hash(serde_json::to_string(&c).expect("run config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for p in [Preset::Ci, Preset::Desk, Preset::Paper] {
            let cfg = RunConfig::preset(p);
            cfg.validate().unwrap();
            let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.content_hash(), cfg.content_hash());
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = RunConfig::preset(Preset::Ci).to_toml();
        text.push_str("\n[extra]\nfoo = 1\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn tags_and_seeds() {
        let cfg = RunConfig::preset(Preset::Desk);
        let tags: Vec<String> = cfg.variants.iter().map(VariantSpec::tag).collect();
        assert_eq!(tags, ["ntp", "mtp2", "mtp3", "mtp4", "lse2", "lse4"]);
        let custom = VariantSpec { lambda_latent: Some(0.3), lambda_semantic: Some(0.0), ..VariantSpec::new(Objective::Lse, 2) };
        assert_eq!(custom.tag(), "lse2-l0.3-s0");
        let (g, v) = (&cfg.graphs[0], &cfg.variants[0]);
        assert_ne!(cfg.variant_seed(g, 0, v), cfg.variant_seed(g, 1, v));
        assert_ne!(cfg.variant_seed(g, 0, v), cfg.variant_seed(g, 0, &cfg.variants[1]));
        assert_eq!(cfg.probe_seed(g, 2), cfg.probe_seed(g, 2));
        assert!(!cfg.variants[4].runs_on("er50"));
    }

    #[test]
    fn bad_variant_is_a_config_error() {
        let mut cfg = RunConfig::preset(Preset::Ci);
        cfg.variants.push(VariantSpec::new(Objective::Ntp, 3));
        assert!(matches!(cfg.validate(), Err(ExperimentError::Config(_))));
    }
}
