use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pipeline::{VariantProbes, PROBES_FILE};
use super::reference::{published_belief, published_gain, published_isp, published_nav};
use super::ExperimentError;
use crate::graphgen::GraphKind;
use crate::model::Objective;

/// Reads every `<world>/<variant>/probes.json` under `root`, checking that
/// all variants of a world saw the same graph and corpus.
pub fn load_results(root: &Path) -> Result<Vec<VariantProbes>, ExperimentError> {
    if !root.is_dir() {
        return Err(ExperimentError::MissingInput(root.to_path_buf()));
    }
    let mut files = Vec::new();
    for world in fs::read_dir(root)? {
        let world = world?.path();
        if !world.is_dir() {
            continue;
        }
        for variant in fs::read_dir(&world)? {
            let f = variant?.path().join(PROBES_FILE);
            if f.is_file() {
                files.push(f);
            }
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(ExperimentError::MissingInput(root.join(format!("*/*/{PROBES_FILE}"))));
    }
    let results: Vec<VariantProbes> = files.iter().map(|f| VariantProbes::load(f)).collect::<Result<_, _>>()?;
    let mut worlds: BTreeMap<(String, usize), (&str, &str)> = BTreeMap::new();
    for r in &results {
        let seen = worlds.entry((r.graph.clone(), r.rep)).or_insert((&r.graph_hash, &r.corpus_hash));
        if *seen != (r.graph_hash.as_str(), r.corpus_hash.as_str()) {
            return Err(ExperimentError::HashMismatch(format!(
                "{}-s{} {}: graph/corpus hash differs from the other variants of this world",
                r.graph, r.rep, r.variant
            )));
        }
    }
    Ok(results)
}

/// Mean and spread of one metric over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub graph: String,
    pub variant: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation over replicates (0 for a single one).
    pub std: f64,
    pub seeds: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Index over results: `(graph, variant) -> rep -> record`.
struct Grid<'a> {
    cells: BTreeMap<(String, String), BTreeMap<usize, &'a VariantProbes>>,
    graphs: Vec<(String, GraphKind)>,
}

impl<'a> Grid<'a> {
    fn new(results: &'a [VariantProbes]) -> Self {
        let mut cells: BTreeMap<(String, String), BTreeMap<usize, &VariantProbes>> = BTreeMap::new();
        let mut graphs = Vec::new();
        for r in results {
            cells.entry((r.graph.clone(), r.variant.clone())).or_default().insert(r.rep, r);
            if !graphs.iter().any(|(g, _)| g == &r.graph) {
                graphs.push((r.graph.clone(), r.graph_kind));
            }
        }
        graphs.sort_by(|a, b| a.0.cmp(&b.0));
        Grid { cells, graphs }
    }

    fn per_rep(&self, graph: &str, variant: &str, metric: &str) -> BTreeMap<usize, f64> {
        self.cells
            .get(&(graph.to_string(), variant.to_string()))
            .map(|reps| reps.iter().filter_map(|(&rep, r)| r.value(metric).map(|v| (rep, v))).collect())
            .unwrap_or_default()
    }

    fn mean(&self, graph: &str, variant: &str, metric: &str) -> Option<f64> {
        let xs: Vec<f64> = self.per_rep(graph, variant, metric).into_values().collect();
        (!xs.is_empty()).then(|| mean_std(&xs).0)
    }

    fn variants(&self, graph: &str) -> Vec<&'a VariantProbes> {
        let mut v: Vec<&VariantProbes> =
            self.cells.iter().filter(|((g, _), _)| g == graph).filter_map(|(_, reps)| reps.values().next().copied()).collect();
        v.sort_by_key(|r| (r.objective as u8, r.k, r.variant.clone()));
        v
    }

    fn has(&self, graph: &str, variant: &str) -> bool {
        self.cells.contains_key(&(graph.to_string(), variant.to_string()))
    }

    /// Replicates where `pred(a, b)` holds, over replicates having both.
    fn paired(&self, graph: &str, a: (&str, &str), b: (&str, &str), pred: impl Fn(f64, f64) -> bool) -> (usize, usize) {
        let (xa, xb) = (self.per_rep(graph, a.0, a.1), self.per_rep(graph, b.0, b.1));
        let both: Vec<(f64, f64)> = xa.iter().filter_map(|(rep, &x)| xb.get(rep).map(|&y| (x, y))).collect();
        (both.iter().filter(|&&(x, y)| pred(x, y)).count(), both.len())
    }
}

/// At least two thirds of the replicates (two of three).
fn most(hits: usize, n: usize) -> bool {
    n > 0 && 3 * hits >= 2 * n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub scope: String,
    /// `None` when the grid lacks the variants the check needs.
    pub pass: Option<bool>,
    pub detail: String,
}

impl CriterionResult {
    pub fn status(&self) -> &'static str {
        match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "N/A",
        }
    }
}

fn crit(id: u32, name: &str, scope: &str, pass: Option<bool>, detail: String) -> CriterionResult {
    CriterionResult { id, name: name.into(), scope: scope.into(), pass, detail }
}

fn missing(grid: &Grid, graph: &str, needed: &[&str]) -> Option<String> {
    let absent: Vec<&str> = needed.iter().copied().filter(|v| !grid.has(graph, v)).collect();
    (!absent.is_empty()).then(|| format!("not evaluable: missing {}", absent.join(", ")))
}

fn structure_gain_criterion(grid: &Grid) -> CriterionResult {
    let graphs: Vec<&str> = grid.graphs.iter().filter(|(_, k)| *k != GraphKind::ErDag).map(|(g, _)| g.as_str()).collect();
    let scope = graphs.join("+");
    let needed = ["ntp", "mtp2", "mtp3", "mtp4"];
    if let Some(m) = graphs.iter().find_map(|g| missing(grid, g, &needed)) {
        return crit(4, "structure gain ordering", &scope, None, m);
    }
    let mut ok = true;
    let mut detail = String::new();
    for g in &graphs {
        for k in [2, 3] {
            let metric = format!("structure_gain_k{k}");
            let (h, n) = grid.paired(g, (&format!("mtp{k}"), &metric), ("ntp", &metric), |a, b| a > b);
            ok &= most(h, n);
            let _ = write!(detail, "{g} k={k}: mtp{k}>ntp {h}/{n}; ");
        }
    }
    let (mut cells, mut diag) = (0, 0);
    for g in &graphs {
        let reps: BTreeSet<usize> = grid.per_rep(g, "mtp2", "structure_gain_k2").into_keys().collect();
        for rep in reps {
            cells += 1;
            let holds = (2..=4).all(|k| {
                let metric = format!("structure_gain_k{k}");
                let gains: Vec<(usize, Option<f64>)> =
                    (2..=4).map(|kt| (kt, grid.per_rep(g, &format!("mtp{kt}"), &metric).get(&rep).copied())).collect();
                gains.iter().all(|(_, v)| v.is_some())
                    && gains.iter().max_by(|a, b| a.1.unwrap().total_cmp(&b.1.unwrap())).map(|x| x.0) == Some(k)
            });
            diag += usize::from(holds);
        }
    }
    ok &= 2 * diag > cells;
    let _ = write!(detail, "diagonal (K=k best at every eval k) in {diag}/{cells} seed x graph cells");
    crit(4, "structure gain ordering", &scope, Some(ok), detail)
}

fn belief_criterion(grid: &Grid, graph: &str) -> CriterionResult {
    let name = "belief compression ordering";
    if let Some(m) = missing(grid, graph, &["ntp", "mtp4"]) {
        return crit(5, name, graph, None, m);
    }
    let mut ok = true;
    let mut detail = String::new();
    for v in grid.variants(graph) {
        let (a, b, c) = (
            grid.mean(graph, &v.variant, "belief_G=P="),
            grid.mean(graph, &v.variant, "belief_G=P!="),
            grid.mean(graph, &v.variant, "belief_baseline"),
        );
        match (a, b, c) {
            (Some(a), Some(b), Some(c)) => {
                let holds = a > b && b > c;
                ok &= holds;
                if !holds {
                    let _ = write!(detail, "{}: {a:.3}/{b:.3}/{c:.3} out of order; ", v.variant);
                }
            }
            _ => {
                ok = false;
                let _ = write!(detail, "{}: belief metrics missing; ", v.variant);
            }
        }
    }
    let (h, n) = grid.paired(graph, ("mtp4", "belief_G=P="), ("ntp", "belief_G=P="), |a, b| a > b);
    ok &= most(h, n);
    let _ = write!(detail, "G=P= > G=P!= > baseline checked on seed means; mtp4 G=P= > ntp {h}/{n}");
    crit(5, name, graph, Some(ok), detail)
}

fn isp_criterion(grid: &Grid, graph: &str) -> CriterionResult {
    let name = "ISP trade-off";
    if let Some(m) = missing(grid, graph, &["ntp", "mtp4", "lse4"]) {
        return crit(6, name, graph, None, m);
    }
    let (h1, n1) = grid.paired(graph, ("mtp4", "isp"), ("ntp", "isp"), |a, b| a > b);
    let (h2, n2) = grid.paired(graph, ("lse4", "isp"), ("mtp4", "isp"), |a, b| a < b);
    let (ll, lm) = (grid.mean(graph, "lse4", "legal_prob"), grid.mean(graph, "mtp4", "legal_prob"));
    let legal = matches!((ll, lm), (Some(a), Some(b)) if a >= b);
    let ok = most(h1, n1) && most(h2, n2) && legal;
    let detail =
        format!("isp mtp4>ntp {h1}/{n1}; isp lse4<mtp4 {h2}/{n2}; legal lse4 {} vs mtp4 {} (seed means)", fmt_opt(ll), fmt_opt(lm));
    crit(6, name, graph, Some(ok), detail)
}

fn nav_criterion(grid: &Grid, results: &[VariantProbes]) -> CriterionResult {
    let name = "navigation quality";
    let mut partition = true;
    let mut checked = 0;
    for r in results {
        for prefix in ["nav", "detour"] {
            let counts: Vec<Option<&crate::probes::ProbeReport>> =
                ["success", "disconnection", "wrong_target"].iter().map(|m| r.report(&format!("{prefix}_{m}"))).collect();
            if counts.iter().all(Option::is_some) {
                checked += 1;
                let n = counts[0].unwrap().n;
                let total: f64 = counts.iter().map(|c| c.unwrap().extra.get("count").copied().unwrap_or(f64::NAN)).sum();
                partition &= total == n as f64 && counts.iter().all(|c| c.unwrap().n == n);
            }
        }
    }
    let Some((usg, _)) = grid.graphs.iter().find(|(_, k)| *k == GraphKind::Usg) else {
        return crit(7, name, "usg", None, "not evaluable: no USG graph".into());
    };
    if let Some(m) = missing(grid, usg, &["ntp", "mtp2", "lse2"]) {
        return crit(7, name, usg, None, m);
    }
    let ntp = grid.mean(usg, "ntp", "nav_success").unwrap_or(f64::NAN);
    let (h, n) = grid.paired(usg, ("lse2", "nav_success"), ("mtp2", "nav_success"), |a, b| a >= b);
    let ok = ntp >= 0.85 && partition && checked > 0 && most(h, n);
    let detail = format!(
        "ntp success {ntp:.4} (>= 0.85); outcome counts partition in {} of {checked} evaluations; lse2>=mtp2 success {h}/{n}",
        if partition { "all" } else { "NOT all" }
    );
    crit(7, name, usg, Some(ok), detail)
}

fn contractivity_criterion(grid: &Grid, graph: &str) -> CriterionResult {
    let name = "contractivity trace";
    if let Some(m) = missing(grid, graph, &["ntp", "mtp2"]) {
        return crit(8, name, graph, None, m);
    }
    let metric = "contractivity_ratio_k2";
    let (h, n) = grid.paired(graph, ("mtp2", metric), ("ntp", metric), |a, b| a < b);
    let detail = format!(
        "final/initial distance mtp2 {} vs ntp {} (seed means); mtp2<ntp {h}/{n}",
        fmt_opt(grid.mean(graph, "mtp2", metric)),
        fmt_opt(grid.mean(graph, "ntp", metric))
    );
    crit(8, name, graph, Some(most(h, n)), detail)
}

/// The grid-level acceptance checks (structure gain, belief compression,
/// ISP, navigation, contractivity) on a set of results.
pub fn evaluate_criteria(results: &[VariantProbes]) -> Vec<CriterionResult> {
    let grid = Grid::new(results);
    let graphs: Vec<String> = grid.graphs.iter().map(|(g, _)| g.clone()).collect();
    let mut out = vec![structure_gain_criterion(&grid)];
    out.extend(graphs.iter().map(|g| belief_criterion(&grid, g)));
    out.extend(graphs.iter().map(|g| isp_criterion(&grid, g)));
    out.push(nav_criterion(&grid, results));
    out.extend(graphs.iter().map(|g| contractivity_criterion(&grid, g)));
    out
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.4}"))
}

fn fmt_cell(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v}"))
}

fn model_name(o: Objective) -> &'static str {
    match o {
        Objective::Ntp => "NTP",
        Objective::Mtp => "MTP",
        Objective::Lse => "LSE-MTP",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub criteria: Vec<CriterionResult>,
    pub files: Vec<PathBuf>,
}

impl ReportSummary {
    /// Every evaluable criterion passed and at least one was evaluable.
    pub fn all_pass(&self) -> bool {
        self.criteria.iter().any(|c| c.pass.is_some()) && self.criteria.iter().all(|c| c.pass != Some(false))
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn write_csv(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| ExperimentError::Format(e.to_string()))?;
        w.write_record(&self.header).map_err(|e| ExperimentError::Format(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| ExperimentError::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    fn aligned(&self) -> String {
        let widths: Vec<usize> =
            (0..self.header.len()).map(|c| self.rows.iter().map(|r| r[c].len()).chain([self.header[c].len()]).max().unwrap_or(0)).collect();
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (c, w) in cells.iter().zip(&widths) {
                let _ = write!(s, "{c:<w$}  ");
            }
            s.trim_end().to_string() + "\n"
        };
        let mut out = line(&self.header);
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }
}

/// Formats a measured cell as `mean±std`, rounded for reading.
fn short(grid: &Grid, g: &str, v: &str, metric: &str) -> String {
    let xs: Vec<f64> = grid.per_rep(g, v, metric).into_values().collect();
    if xs.is_empty() {
        return "-".into();
    }
    let (m, s) = mean_std(&xs);
    if m.abs() < 1e-2 && m != 0.0 {
        format!("{m:.2e}±{s:.1e}")
    } else {
        format!("{m:.3}±{s:.3}")
    }
}

/// Joins results into published-table-shaped CSV files plus an aligned-text
/// summary and the acceptance checks, written under `out`.
pub fn write_report(results: &[VariantProbes], out: &Path) -> Result<ReportSummary, ExperimentError> {
    fs::create_dir_all(out)?;
    let grid = Grid::new(results);
    let mut files = Vec::new();
    let mut text = String::new();
    let mut emit = |name: &str, title: &str, csv: &Table, human: &Table, files: &mut Vec<PathBuf>| -> Result<(), ExperimentError> {
        let path = out.join(name);
        csv.write_csv(&path)?;
        files.push(path);
        let _ = writeln!(text, "== {title} ==\n{}", human.aligned());
        Ok(())
    };

    // structure gain per variant
    let mut t1 = Table::new(&[
        "graph",
        "model",
        "K",
        "seeds",
        "k2_sim_f",
        "k2_gain",
        "k3_sim_f",
        "k3_gain",
        "k4_sim_f",
        "k4_gain",
        "ref_k2_sim_f",
        "ref_k2_gain",
        "ref_k3_sim_f",
        "ref_k3_gain",
        "ref_k4_sim_f",
        "ref_k4_gain",
        "reference",
    ]);
    let mut h1 = Table::new(&["graph", "model", "K", "gain k=2", "gain k=3", "gain k=4", "published k=2/3/4"]);
    for (g, kind) in &grid.graphs {
        for v in grid.variants(g) {
            let seeds = grid.per_rep(g, &v.variant, "structure_gain_k2").len();
            let mut row = vec![g.clone(), model_name(v.objective).into(), v.k.to_string(), seeds.to_string()];
            let mut hrow = vec![g.clone(), model_name(v.objective).into(), v.k.to_string()];
            for k in 2..=4 {
                let metric = format!("structure_gain_k{k}");
                let sims: Vec<f64> = grid
                    .cells
                    .get(&(g.clone(), v.variant.clone()))
                    .map(|reps| reps.values().filter_map(|r| r.report(&metric).and_then(|p| p.extra.get("sim_f").copied())).collect())
                    .unwrap_or_default();
                row.push(if sims.is_empty() { String::new() } else { mean_std(&sims).0.to_string() });
                row.push(fmt_cell(grid.mean(g, &v.variant, &metric)));
                hrow.push(short(&grid, g, &v.variant, &metric));
            }
            let reference = published_gain(*kind, v.objective, v.k);
            for k in 0..3 {
                row.push(reference.map_or(String::new(), |r| r[k].0.to_string()));
                row.push(reference.map_or(String::new(), |r| r[k].1.to_string()));
            }
            row.push(if reference.is_some() { "published reference, 100-node graphs".into() } else { String::new() });
            hrow.push(reference.map_or("-".into(), |r| format!("{}/{}/{}", r[0].1, r[1].1, r[2].1)));
            t1.rows.push(row);
            h1.rows.push(hrow);
        }
    }
    emit("structure_gain.csv", "Structure gain (measured mean±sd over seeds; published values labeled)", &t1, &h1, &mut files)?;

    // belief compression
    let labels = ["belief_G=P=", "belief_G=P!=", "belief_G!=P=", "belief_baseline"];
    let mut t2 = Table::new(&[
        "graph",
        "model",
        "K",
        "seeds",
        "G=P=",
        "G=P!=",
        "G!=P=",
        "baseline",
        "ref_G=P=",
        "ref_G=P!=",
        "ref_G!=P=",
        "ref_baseline",
        "reference",
    ]);
    let mut h2 = Table::new(&["graph", "model", "K", "G=P=", "G=P!=", "G!=P=", "baseline", "published"]);
    for (g, kind) in &grid.graphs {
        for v in grid.variants(g) {
            let seeds = grid.per_rep(g, &v.variant, labels[0]).len();
            let mut row = vec![g.clone(), model_name(v.objective).into(), v.k.to_string(), seeds.to_string()];
            let mut hrow = vec![g.clone(), model_name(v.objective).into(), v.k.to_string()];
            for m in labels {
                row.push(fmt_cell(grid.mean(g, &v.variant, m)));
                hrow.push(short(&grid, g, &v.variant, m));
            }
            let reference = published_belief(*kind, v.objective, v.k);
            for i in 0..4 {
                row.push(reference.map_or(String::new(), |r| r[i].to_string()));
            }
            row.push(if reference.is_some() { "published reference, 100-node graphs".into() } else { String::new() });
            hrow.push(reference.map_or("-".into(), |r| format!("{}/{}/{}/{}", r[0], r[1], r[2], r[3])));
            t2.rows.push(row);
            h2.rows.push(hrow);
        }
    }
    emit("belief.csv", "Belief compression", &t2, &h2, &mut files)?;

    // shortcut probability and legal mass
    let mut t3 = Table::new(&[
        "graph",
        "model",
        "K",
        "seeds",
        "isp",
        "legal_prob",
        "isp_above_ntp",
        "isp_below_mtp",
        "legal_not_below_mtp",
        "ref_isp",
        "ref_legal_prob",
        "reference",
    ]);
    let mut h3 = Table::new(&["graph", "model", "K", "ISP", "legal prob", "ISP>NTP", "ISP<MTP", "legal>=MTP", "published"]);
    for (g, kind) in &grid.graphs {
        for v in grid.variants(g) {
            let seeds = grid.per_rep(g, &v.variant, "isp").len();
            let mtp = format!("mtp{}", v.k);
            let above = (v.objective == Objective::Mtp && grid.has(g, "ntp")).then(|| {
                let (h, n) = grid.paired(g, (&v.variant, "isp"), ("ntp", "isp"), |a, b| a > b);
                format!("{h}/{n}")
            });
            let (below, legal) = if v.objective == Objective::Lse && grid.has(g, &mtp) {
                let (h, n) = grid.paired(g, (&v.variant, "isp"), (&mtp, "isp"), |a, b| a < b);
                let l = match (grid.mean(g, &v.variant, "legal_prob"), grid.mean(g, &mtp, "legal_prob")) {
                    (Some(a), Some(b)) => (a >= b).to_string(),
                    _ => String::new(),
                };
                (Some(format!("{h}/{n}")), Some(l))
            } else {
                (None, None)
            };
            let reference = published_isp(*kind, v.objective, v.k);
            t3.rows.push(vec![
                g.clone(),
                model_name(v.objective).into(),
                v.k.to_string(),
                seeds.to_string(),
                fmt_cell(grid.mean(g, &v.variant, "isp")),
                fmt_cell(grid.mean(g, &v.variant, "legal_prob")),
                above.clone().unwrap_or_default(),
                below.clone().unwrap_or_default(),
                legal.clone().unwrap_or_default(),
                reference.map_or(String::new(), |r| r.0.to_string()),
                reference.map_or(String::new(), |r| r.1.to_string()),
                if reference.is_some() { "published reference, 100-node graphs".into() } else { String::new() },
            ]);
            h3.rows.push(vec![
                g.clone(),
                model_name(v.objective).into(),
                v.k.to_string(),
                short(&grid, g, &v.variant, "isp"),
                short(&grid, g, &v.variant, "legal_prob"),
                above.unwrap_or("-".into()),
                below.unwrap_or("-".into()),
                legal.unwrap_or("-".into()),
                reference.map_or("-".into(), |r| format!("{:.2e}/{}", r.0, r.1)),
            ]);
        }
    }
    emit("isp.csv", "Illegal shortcut probability", &t3, &h3, &mut files)?;

    // navigation outcomes
    let nav = ["nav_success", "nav_disconnection", "nav_wrong_target", "detour_success"];
    let mut t5 = Table::new(&[
        "graph",
        "model",
        "K",
        "lambda_latent",
        "lambda_semantic",
        "seeds",
        "success",
        "disconnection",
        "wrong_target",
        "detour_success",
        "ref_success",
        "ref_disconnection",
        "ref_wrong_target",
        "reference",
    ]);
    let mut h5 = Table::new(&["graph", "model", "K", "success", "disconnection", "wrong target", "detour success", "published"]);
    for (g, kind) in &grid.graphs {
        for v in grid.variants(g) {
            let seeds = grid.per_rep(g, &v.variant, nav[0]).len();
            let default_lambdas = v.objective != Objective::Lse || (v.lambda_latent == 0.1 && v.lambda_semantic == 0.1);
            let reference = published_nav(*kind, v.objective, v.k).filter(|_| default_lambdas);
            let mut row = vec![
                g.clone(),
                model_name(v.objective).into(),
                v.k.to_string(),
                v.lambda_latent.to_string(),
                v.lambda_semantic.to_string(),
                seeds.to_string(),
            ];
            let mut hrow = vec![g.clone(), model_name(v.objective).into(), v.k.to_string()];
            for m in nav {
                row.push(fmt_cell(grid.mean(g, &v.variant, m)));
                hrow.push(short(&grid, g, &v.variant, m));
            }
            row.push(reference.map_or(String::new(), |r| r.0.to_string()));
            row.push(reference.map_or(String::new(), |r| r.1.to_string()));
            row.push(reference.map_or(String::new(), |r| r.2.to_string()));
            row.push(if reference.is_some() { "published reference, 100-node graphs".into() } else { String::new() });
            hrow.push(reference.map_or("-".into(), |r| format!("{}/{}/{}", r.0, r.1, r.2)));
            t5.rows.push(row);
            h5.rows.push(hrow);
        }
    }
    emit("navigation.csv", "Navigation", &t5, &h5, &mut files)?;

    // every metric, long form
    let mut all = Table::new(&["graph", "variant", "metric", "mean", "std", "seeds"]);
    let mut aggregates = Vec::new();
    for ((g, v), reps) in &grid.cells {
        let metrics: BTreeSet<&str> = reps.values().flat_map(|r| r.reports.iter().map(|p| p.metric.as_str())).collect();
        for m in metrics {
            let xs: Vec<f64> = grid.per_rep(g, v, m).into_values().collect();
            let (mean, std) = mean_std(&xs);
            aggregates.push(Aggregate { graph: g.clone(), variant: v.clone(), metric: m.into(), mean, std, seeds: xs.len() });
            all.rows.push(vec![g.clone(), v.clone(), m.into(), mean.to_string(), std.to_string(), xs.len().to_string()]);
        }
    }
    let path = out.join("metrics.csv");
    all.write_csv(&path)?;
    files.push(path);
    let path = out.join("aggregates.json");
    fs::write(&path, serde_json::to_string_pretty(&aggregates).map_err(|e| ExperimentError::Format(e.to_string()))?)?;
    files.push(path);

    // contractivity series for plotting
    let mut series = Table::new(&["graph", "rep", "variant", "iter", "distance"]);
    for r in results {
        if let Some(t) = &r.contractivity {
            for (it, d) in t.iters.iter().zip(&t.distance) {
                series.rows.push(vec![r.graph.clone(), r.rep.to_string(), r.variant.clone(), it.to_string(), d.to_string()]);
            }
        }
    }
    let path = out.join("contractivity.csv");
    series.write_csv(&path)?;
    files.push(path);

    let criteria = evaluate_criteria(results);
    let mut acc = Table::new(&["id", "name", "scope", "status", "detail"]);
    for c in &criteria {
        acc.rows.push(vec![c.id.to_string(), c.name.clone(), c.scope.clone(), c.status().into(), c.detail.clone()]);
    }
    let path = out.join("acceptance.csv");
    acc.write_csv(&path)?;
    files.push(path);
    let _ = writeln!(text, "== Acceptance (grid criteria) ==");
    for c in &criteria {
        let _ = writeln!(text, "[{}] {} {} ({}): {}", c.status(), c.id, c.name, c.scope, c.detail);
    }
    let hashes: BTreeSet<&str> = results.iter().map(|r| r.config_hash.as_str()).collect();
    let _ = writeln!(text, "\nresults: {} variant runs; config hash {}", results.len(), hashes.into_iter().collect::<Vec<_>>().join(", "));
    let path = out.join("summary.txt");
    fs::write(&path, &text)?;
    files.push(path);
    Ok(ReportSummary { criteria, files })
}
