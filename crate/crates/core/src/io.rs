//! File formats: study configuration (TOML in, JSON echo), edge and node
//! lists, node-keyed CSV tables, and study result tables.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::graph::Network;
use crate::study::{
    InclusionRow, InclusionSummary, ReplicateResult, Scenario, ScenarioSummary, SensitivityRow, StrategyEstimate,
    StudyConfig, StudyResults,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
}

impl IoError {
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_))
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        Self::Parse { path: path.display().to_string(), line, message: message.into() }
    }

    fn csv(path: &Path, e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line() as usize);
        Self::parse(path, line, e.to_string())
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| IoError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(|e| IoError::io(path, e))
}

/// Formats to 6 significant digits, then prints the shortest decimal that
/// reads back as the rounded value (scientific outside `[1e-4, 1e15)`).
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    let mag = rounded.abs();
    if rounded != 0.0 && !(1e-4..1e15).contains(&mag) {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

/// Full-precision (17 significant digit) scientific notation.
pub fn full(x: f64) -> String {
    format!("{x:.16e}")
}

// ---------------------------------------------------------------- config

pub fn parse_study_config(text: &str) -> Result<StudyConfig, IoError> {
    let cfg: StudyConfig = toml::from_str(text).map_err(|e| IoError::Config(e.to_string()))?;
    cfg.validate().map_err(|e| IoError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn load_study_config(path: &Path) -> Result<StudyConfig, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_study_config(&text).map_err(|e| match e {
        IoError::Config(m) => IoError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| IoError::Data(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| IoError::io(path, e))
}

// ------------------------------------------------------- edges and nodes

/// Writes `cluster_id<TAB>u<TAB>v` lines with 1-based node ids.
pub fn write_edges<W: Write>(mut w: W, nets: &[Network]) -> std::io::Result<()> {
    writeln!(w, "# cluster_id\tu\tv")?;
    for g in nets {
        for (u, v) in g.edges() {
            writeln!(w, "{}\t{}\t{}", g.cluster_id(), u + 1, v + 1)?;
        }
    }
    w.flush()
}

/// Writes `cluster_id<TAB>node_id[<TAB>block]` lines declaring every node.
pub fn write_nodes<W: Write>(mut w: W, nets: &[Network]) -> std::io::Result<()> {
    writeln!(w, "# cluster_id\tnode_id\tblock")?;
    for g in nets {
        for j in 0..g.node_count() {
            match g.blocks() {
                Some(b) => writeln!(w, "{}\t{}\t{}", g.cluster_id(), j + 1, b[j])?,
                None => writeln!(w, "{}\t{}", g.cluster_id(), j + 1)?,
            }
        }
    }
    w.flush()
}

pub fn write_networks(dir: &Path, nets: &[Network]) -> Result<(), IoError> {
    let edges = dir.join("edges.tsv");
    write_edges(create(&edges)?, nets).map_err(|e| IoError::io(&edges, e))?;
    let nodes = dir.join("nodes.tsv");
    write_nodes(create(&nodes)?, nets).map_err(|e| IoError::io(&nodes, e))
}

fn data_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>, IoError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        out.push((i + 1, body.split('\t').map(|s| s.trim().to_string()).collect()));
    }
    Ok(out)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, what: &str, s: &str) -> Result<T, IoError> {
    s.parse().map_err(|_| IoError::parse(path, line, format!("invalid {what} {s:?}")))
}

/// Reads networks from an edge list and its node file. Clusters are ordered
/// by id; node ids in each cluster must be exactly `1..=n`.
pub fn read_networks(edges_path: &Path, nodes_path: &Path) -> Result<Vec<Network>, IoError> {
    let mut nodes: BTreeMap<u32, BTreeMap<usize, Option<u16>>> = BTreeMap::new();
    for (line, f) in data_lines(nodes_path)? {
        if f.len() != 2 && f.len() != 3 {
            return Err(IoError::parse(nodes_path, line, format!("expected 2 or 3 fields, found {}", f.len())));
        }
        let c: u32 = parse_field(nodes_path, line, "cluster id", &f[0])?;
        let j: usize = parse_field(nodes_path, line, "node id", &f[1])?;
        if j == 0 {
            return Err(IoError::parse(nodes_path, line, "node ids are 1-based"));
        }
        let b = match f.get(2) {
            Some(s) => Some(parse_field::<u16>(nodes_path, line, "block", s)?),
            None => None,
        };
        if nodes.entry(c).or_default().insert(j, b).is_some() {
            return Err(IoError::parse(nodes_path, line, format!("duplicate node {j} in cluster {c}")));
        }
    }
    let mut sizes = HashMap::new();
    for (c, m) in &nodes {
        let n = m.len();
        if let Some((&max, _)) = m.last_key_value() {
            if max != n {
                return Err(IoError::Data(format!(
                    "{}: cluster {c} node ids must be 1..={n}, found id {max}",
                    nodes_path.display()
                )));
            }
        }
        let labelled = m.values().filter(|b| b.is_some()).count();
        if labelled != 0 && labelled != n {
            return Err(IoError::Data(format!(
                "{}: cluster {c} has block labels on {labelled} of {n} nodes",
                nodes_path.display()
            )));
        }
        sizes.insert(*c, n);
    }
    let mut edges: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (line, f) in data_lines(edges_path)? {
        if f.len() != 3 {
            return Err(IoError::parse(edges_path, line, format!("expected 3 fields, found {}", f.len())));
        }
        let c: u32 = parse_field(edges_path, line, "cluster id", &f[0])?;
        let u: usize = parse_field(edges_path, line, "node id", &f[1])?;
        let v: usize = parse_field(edges_path, line, "node id", &f[2])?;
        let n = *sizes
            .get(&c)
            .ok_or_else(|| IoError::parse(edges_path, line, format!("cluster {c} not declared in node file")))?;
        for x in [u, v] {
            if x == 0 || x > n {
                return Err(IoError::parse(edges_path, line, format!("node {x} not declared in cluster {c}")));
            }
        }
        if u == v {
            return Err(IoError::parse(edges_path, line, format!("self-loop on node {u}")));
        }
        if !seen.insert((c, u.min(v), u.max(v))) {
            return Err(IoError::parse(edges_path, line, format!("duplicate edge ({u}, {v}) in cluster {c}")));
        }
        edges.entry(c).or_default().push((u - 1, v - 1));
    }
    nodes
        .into_iter()
        .map(|(c, m)| {
            let n = m.len();
            let blocks: Option<Vec<u16>> = m.values().copied().collect();
            Network::new(c, n, edges.remove(&c).unwrap_or_default(), blocks)
                .map_err(|e| IoError::Data(format!("cluster {c}: {e}")))
        })
        .collect()
}

// ------------------------------------------------------ node-keyed tables

/// Named numeric columns of equal length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|c| self.columns[c].as_slice())
    }

    pub fn push(&mut self, name: &str, values: Vec<f64>) {
        self.names.push(name.into());
        self.columns.push(values);
    }
}

/// How rows of a node-keyed CSV map onto network nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKey {
    /// One row per node, keyed by `node_id`.
    Node,
    /// Individual rows keyed by `household_id`, collapsed per household by
    /// taking the maximum (any member) of every column.
    Household,
}

/// Reads a CSV with `cluster_id` and `node_id` (or `household_id`) columns
/// into a table aligned with `nets` (clusters stacked in order). Every node
/// must be covered; unknown nodes are errors.
pub fn read_node_table(path: &Path, nets: &[Network]) -> Result<Table, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let header: Vec<String> = rdr.headers().map_err(|e| IoError::csv(path, e))?.iter().map(String::from).collect();
    let find = |n: &str| header.iter().position(|h| h == n);
    let c_col = find("cluster_id").ok_or_else(|| IoError::parse(path, 1, "missing cluster_id column"))?;
    let (key, k_col) = match (find("household_id"), find("node_id")) {
        (Some(h), _) => (RowKey::Household, h),
        (None, Some(n)) => (RowKey::Node, n),
        (None, None) => return Err(IoError::parse(path, 1, "missing node_id or household_id column")),
    };
    let skip = [Some(c_col), Some(k_col), find("node_id"), find("person_id")];
    let value_cols: Vec<usize> = (0..header.len()).filter(|c| !skip.contains(&Some(*c))).collect();
    let mut offsets = HashMap::new();
    let mut total = 0;
    for g in nets {
        offsets.insert(g.cluster_id(), (total, g.node_count()));
        total += g.node_count();
    }
    let mut table = Table::default();
    for &c in &value_cols {
        table.push(&header[c], vec![f64::NAN; total]);
    }
    let mut filled = vec![false; total];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IoError::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let c: u32 = parse_field(path, line, "cluster id", &rec[c_col])?;
        let j: usize = parse_field(path, line, "node id", &rec[k_col])?;
        let &(off, n) =
            offsets.get(&c).ok_or_else(|| IoError::parse(path, line, format!("unknown cluster {c}")))?;
        if j == 0 || j > n {
            return Err(IoError::parse(path, line, format!("node {j} not declared in cluster {c}")));
        }
        let row = off + j - 1;
        if filled[row] && key == RowKey::Node {
            return Err(IoError::parse(path, line, format!("duplicate row for node {j} in cluster {c}")));
        }
        for (k, &col) in value_cols.iter().enumerate() {
            let v: f64 = parse_field(path, line, &header[col], &rec[col])?;
            let slot = &mut table.columns[k][row];
            *slot = if filled[row] { slot.max(v) } else { v };
        }
        filled[row] = true;
    }
    if let Some(row) = filled.iter().position(|f| !f) {
        let (c, j) = locate(nets, row);
        return Err(IoError::Data(format!("{}: no row for node {j} in cluster {c}", path.display())));
    }
    Ok(table)
}

fn locate(nets: &[Network], mut row: usize) -> (u32, usize) {
    for g in nets {
        if row < g.node_count() {
            return (g.cluster_id(), row + 1);
        }
        row -= g.node_count();
    }
    (0, 0)
}

/// Writes a node-keyed table with `cluster_id,node_id` key columns.
pub fn write_node_table<W: Write>(w: W, nets: &[Network], table: &Table) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["cluster_id".to_string(), "node_id".to_string()];
    header.extend(table.names.iter().cloned());
    wtr.write_record(&header)?;
    let mut row = 0;
    for g in nets {
        for j in 0..g.node_count() {
            let mut rec = vec![g.cluster_id().to_string(), (j + 1).to_string()];
            rec.extend(table.columns.iter().map(|c| c[row].to_string()));
            wtr.write_record(&rec)?;
            row += 1;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a cluster-keyed CSV (`cluster_id` plus numeric columns) aligned
/// with `nets`.
pub fn read_cluster_table(path: &Path, nets: &[Network]) -> Result<Table, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let header: Vec<String> = rdr.headers().map_err(|e| IoError::csv(path, e))?.iter().map(String::from).collect();
    let c_col = header
        .iter()
        .position(|h| h == "cluster_id")
        .ok_or_else(|| IoError::parse(path, 1, "missing cluster_id column"))?;
    let index: HashMap<u32, usize> = nets.iter().enumerate().map(|(i, g)| (g.cluster_id(), i)).collect();
    let value_cols: Vec<usize> = (0..header.len()).filter(|&c| c != c_col).collect();
    let mut table = Table::default();
    for &c in &value_cols {
        table.push(&header[c], vec![f64::NAN; nets.len()]);
    }
    let mut filled = vec![false; nets.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IoError::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let c: u32 = parse_field(path, line, "cluster id", &rec[c_col])?;
        let &i = index.get(&c).ok_or_else(|| IoError::parse(path, line, format!("unknown cluster {c}")))?;
        if std::mem::replace(&mut filled[i], true) {
            return Err(IoError::parse(path, line, format!("duplicate row for cluster {c}")));
        }
        for (k, &col) in value_cols.iter().enumerate() {
            table.columns[k][i] = parse_field(path, line, &header[col], &rec[col])?;
        }
    }
    if let Some(i) = filled.iter().position(|f| !f) {
        return Err(IoError::Data(format!("{}: no row for cluster {}", path.display(), nets[i].cluster_id())));
    }
    Ok(table)
}

pub fn write_cluster_table<W: Write>(w: W, nets: &[Network], table: &Table) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["cluster_id".to_string()];
    header.extend(table.names.iter().cloned());
    wtr.write_record(&header)?;
    for (i, g) in nets.iter().enumerate() {
        let mut rec = vec![g.cluster_id().to_string()];
        rec.extend(table.columns.iter().map(|c| c[i].to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads binary outcomes from the `y` column of a node-keyed CSV.
pub fn read_outcomes(path: &Path, nets: &[Network]) -> Result<Vec<Vec<bool>>, IoError> {
    let table = read_node_table(path, nets)?;
    let y = table.column("y").ok_or_else(|| IoError::parse(path, 1, "missing y column"))?;
    if let Some(row) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        let (c, j) = locate(nets, row);
        return Err(IoError::Data(format!(
            "{}: non-binary outcome {} for node {j} in cluster {c}",
            path.display(),
            y[row]
        )));
    }
    Ok(split_by_cluster(nets, y).into_iter().map(|v| v.iter().map(|&x| x == 1.0).collect()).collect())
}

pub fn write_outcomes<W: Write>(w: W, nets: &[Network], outcomes: &[Vec<bool>]) -> Result<(), csv::Error> {
    let y = outcomes.iter().flatten().map(|&b| f64::from(u8::from(b))).collect();
    write_node_table(w, nets, &Table { names: vec!["y".into()], columns: vec![y] })
}

/// Splits a stacked node column into per-cluster slices.
pub fn split_by_cluster<'a>(nets: &[Network], values: &'a [f64]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(nets.len());
    let mut off = 0;
    for g in nets {
        out.push(&values[off..off + g.node_count()]);
        off += g.node_count();
    }
    out
}

/// X1..X12 for every cluster, stacked in network order.
pub fn features_table(
    nets: &[Network],
    baseline: &[Vec<usize>],
    cfg: &crate::features::FeatureConfig,
) -> Result<Table, crate::features::FeatureError> {
    let mut table = Table::default();
    for (g, b) in nets.iter().zip(baseline) {
        let f = crate::features::compute_features(g, b, cfg)?;
        if table.names.is_empty() {
            table.names = f.names.clone();
            table.columns = vec![Vec::new(); f.names.len()];
        }
        for (c, col) in table.columns.iter_mut().enumerate() {
            col.extend((0..f.rows()).map(|r| f.get(r, c)));
        }
    }
    Ok(table)
}

// ------------------------------------------------------------ study output

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |e| IoError::Data(format!("{}: {e}", path.display()))
}

pub const METRICS_HEADER: [&str; 14] = [
    "scenario",
    "strategy",
    "beta_star",
    "replicates",
    "failed",
    "partial",
    "bias",
    "est_se",
    "emp_se",
    "rmse",
    "improvement",
    "power",
    "coverage",
    "attempts",
];

/// One row per (scenario, strategy) at 6 significant digits.
pub fn write_metrics<W: Write>(w: W, summaries: &[ScenarioSummary], attempts: &BTreeMap<Scenario, usize>) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(METRICS_HEADER)?;
    for s in summaries {
        for m in &s.metrics {
            wtr.write_record([
                s.scenario.id(),
                m.strategy.clone(),
                sig6(s.beta_star),
                s.usable.to_string(),
                s.failed.to_string(),
                s.partial.to_string(),
                sig6(m.bias),
                sig6(m.est_se),
                sig6(m.emp_se),
                sig6(m.rmse),
                sig6(m.improvement),
                sig6(m.power),
                sig6(m.coverage),
                attempts.get(&s.scenario).copied().unwrap_or(0).to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Total draw attempts per scenario.
pub fn attempts_by_scenario(replicates: &[ReplicateResult]) -> BTreeMap<Scenario, usize> {
    let mut out = BTreeMap::new();
    for r in replicates {
        *out.entry(r.scenario).or_default() += r.attempts;
    }
    out
}

pub const ESTIMATES_HEADER: [&str; 9] =
    ["scenario", "replicate", "attempts", "strategy", "estimate", "std_error", "om_unexposed", "om_exposed", "error"];

const NO_MODEL: &str = "NA";

fn join_selected(v: &[String]) -> String {
    v.join(";")
}

/// Per-replicate log at full precision; failed replicates get one row with
/// an empty strategy.
pub fn write_estimates<W: Write>(w: W, replicates: &[ReplicateResult]) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(ESTIMATES_HEADER)?;
    for r in replicates {
        let head = [r.scenario.id(), r.replicate.to_string(), r.attempts.to_string()];
        match &r.outcome {
            Ok(list) => {
                for e in list {
                    let (om0, om1) = match &e.om_selected {
                        Some([a, b]) => (join_selected(a), join_selected(b)),
                        None => (NO_MODEL.into(), NO_MODEL.into()),
                    };
                    let mut rec = head.to_vec();
                    rec.extend([
                        e.strategy.clone(),
                        full(e.estimate),
                        full(e.std_error),
                        om0,
                        om1,
                        e.error.clone().unwrap_or_default(),
                    ]);
                    wtr.write_record(&rec)?;
                }
            }
            Err(msg) => {
                let mut rec = head.to_vec();
                rec.extend([String::new(), full(f64::NAN), full(f64::NAN), NO_MODEL.into(), NO_MODEL.into(), msg.clone()]);
                wtr.write_record(&rec)?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a log written by [`write_estimates`].
pub fn read_estimates(path: &Path) -> Result<Vec<ReplicateResult>, IoError> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let header: Vec<String> = rdr.headers().map_err(|e| IoError::csv(path, e))?.iter().map(String::from).collect();
    if header != ESTIMATES_HEADER {
        return Err(IoError::parse(path, 1, format!("expected header {}", ESTIMATES_HEADER.join(","))));
    }
    let mut out: Vec<ReplicateResult> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IoError::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let scenario = Scenario::parse(&rec[0]).map_err(|e| IoError::parse(path, line, e.to_string()))?;
        let replicate: usize = parse_field(path, line, "replicate", &rec[1])?;
        let attempts: usize = parse_field(path, line, "attempts", &rec[2])?;
        let same = out.last().is_some_and(|r| r.scenario == scenario && r.replicate == replicate);
        if rec[3].is_empty() {
            if same {
                return Err(IoError::parse(path, line, "failed-replicate row follows strategy rows"));
            }
            out.push(ReplicateResult { scenario, replicate, attempts, outcome: Err(rec[8].to_string()) });
            continue;
        }
        let om_selected = if &rec[6] == NO_MODEL {
            None
        } else {
            let split = |s: &str| if s.is_empty() { Vec::new() } else { s.split(';').map(String::from).collect() };
            Some([split(&rec[6]), split(&rec[7])])
        };
        let est = StrategyEstimate {
            strategy: rec[3].to_string(),
            estimate: parse_field(path, line, "estimate", &rec[4])?,
            std_error: parse_field(path, line, "std_error", &rec[5])?,
            om_selected,
            error: (!rec[8].is_empty()).then(|| rec[8].to_string()),
        };
        if !same {
            out.push(ReplicateResult { scenario, replicate, attempts, outcome: Ok(Vec::new()) });
        }
        match &mut out.last_mut().expect("pushed").outcome {
            Ok(list) => list.push(est),
            Err(_) => return Err(IoError::parse(path, line, "strategy row follows failed-replicate row")),
        }
    }
    Ok(out)
}

pub fn write_inclusion<W: Write>(w: W, rows: &[InclusionRow]) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["scenario", "strategy", "arm", "covariate", "frequency"])?;
    for r in rows {
        wtr.write_record([&r.scenario, &r.strategy, &r.arm, &r.covariate, &sig6(r.frequency)])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_inclusion_summary<W: Write>(w: W, rows: &[InclusionSummary]) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["strategy", "arm", "covariate", "min", "q25", "median", "q75", "max"])?;
    for r in rows {
        wtr.write_record([
            r.strategy.clone(),
            r.arm.clone(),
            r.covariate.clone(),
            sig6(r.min),
            sig6(r.q25),
            sig6(r.median),
            sig6(r.q75),
            sig6(r.max),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_sensitivity<W: Write>(w: W, rows: &[SensitivityRow]) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["strategy", "term", "estimate", "std_error"])?;
    for r in rows {
        wtr.write_record([r.strategy.clone(), r.term.clone(), sig6(r.estimate), sig6(r.std_error)])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes every study artifact into `dir`: `metrics.csv`, `estimates.csv`,
/// `inclusion.csv`, `inclusion_summary.csv`, `sensitivity.csv` (only when
/// all 64 scenarios ran) and `resolved_config.json`.
pub fn write_study_outputs(dir: &Path, cfg: &StudyConfig, results: &StudyResults) -> Result<(), IoError> {
    write_json(&dir.join("resolved_config.json"), cfg)?;
    let p = dir.join("estimates.csv");
    write_estimates(create(&p)?, &results.replicates).map_err(csv_err(&p))?;
    let p = dir.join("metrics.csv");
    write_metrics(create(&p)?, &results.summaries, &attempts_by_scenario(&results.replicates)).map_err(csv_err(&p))?;
    let p = dir.join("inclusion.csv");
    write_inclusion(create(&p)?, &results.inclusion).map_err(csv_err(&p))?;
    let p = dir.join("inclusion_summary.csv");
    write_inclusion_summary(create(&p)?, &crate::study::summarize_inclusion(&results.inclusion))
        .map_err(csv_err(&p))?;
    if let Some(rows) = &results.sensitivity {
        let p = dir.join("sensitivity.csv");
        write_sensitivity(create(&p)?, rows).map_err(csv_err(&p))?;
    }
    Ok(())
}

/// Recomputes `metrics.csv` content from an estimates log.
pub fn metrics_from_log(path: &Path, oracle: &str, baseline: &str) -> Result<String, IoError> {
    let replicates = read_estimates(path)?;
    let attempts = attempts_by_scenario(&replicates);
    let results = crate::study::summarize(replicates, oracle, baseline).map_err(|e| IoError::Data(e.to_string()))?;
    let mut buf = Vec::new();
    write_metrics(&mut buf, &results.summaries, &attempts).map_err(|e| IoError::Data(e.to_string()))?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_formats() {
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(1234567.0), "1234570");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(-2.5e-7), "-2.5e-7");
        assert_eq!(sig6(1.728521234e-172), "1.72852e-172");
        assert_eq!(sig6(0.000123), "0.000123");
        assert_eq!(sig6(f64::NAN), "NaN");
    }

    #[test]
    fn full_precision_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.718281828459045e-12, 6.02214076e23] {
            assert_eq!(full(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn config_defaults_and_errors() {
        let cfg = parse_study_config("replicates = 10\nscenarios = [\"000001\", \"111110\"]\n").unwrap();
        assert_eq!(cfg.replicates, 10);
        assert_eq!(cfg.scenarios.resolve().len(), 2);
        let all = parse_study_config("scenarios = \"all\"").unwrap();
        assert_eq!(all.scenarios.resolve().len(), 64);
        assert!(parse_study_config("replicates = 1").unwrap_err().is_config());
        assert!(parse_study_config("scenarios = [\"0000012\"]").unwrap_err().is_config());
        assert!(parse_study_config("bogus_key = 3").unwrap_err().is_config());
    }

    #[test]
    fn config_strategies_parse() {
        let text = r#"
            baseline_strategy = "None"
            [[strategies]]
            name = "None"
            type = "gee"
            [[strategies]]
            name = "X9"
            type = "dr"
            om = { type = "fixed", covariates = ["X9"] }
            ps = { type = "fixed", covariates = ["confounder"] }
        "#;
        let cfg = parse_study_config(text).unwrap();
        assert_eq!(cfg.strategies.len(), 2);
        assert_eq!(cfg.strategies[1].name, "X9");
        let echoed = serde_json::to_string(&cfg).unwrap();
        let back: StudyConfig = serde_json::from_str(&echoed).unwrap();
        assert_eq!(back, cfg);
    }
}
