//! `netgee` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use netgee::contagion;
use netgee::empirical::{
    self, analyze_empirical, empirical_strategies, load_empirical, prepare, run_strategies, AnalyzeOptions,
    EmpiricalReport, ExposureRule, SyntheticSpec, BASELINE_COLUMN, CLUSTERS_FILE, COVARIATES_FILE, OUTCOMES_FILE,
};
use netgee::estimate::{NamedStrategy, Strategy};
use netgee::io::{self, IoError, Table};
use netgee::netgen::generate_cluster_set;
use netgee::rng;
use netgee::study::{self, Scenario, ScenarioSelection, StudyConfig, StudyError};

#[derive(Parser, Debug)]
#[command(name = "netgee", version, about = "Clustered network contagion simulation and doubly-robust GEE")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "NETGEE_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Format of standard output and of error reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate one scenario's cluster networks (edges.tsv, nodes.tsv).
    Netgen {
        #[arg(long, default_value = "000000")]
        scenario: String,
    },
    /// Run one contagion realization on a network directory.
    Contagion {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "000000")]
        scenario: String,
    },
    /// Compute per-node network features (features.csv).
    Features {
        #[arg(long)]
        input: PathBuf,
    },
    /// Estimate the exposure effect on one dataset with chosen strategies.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        exposure: ExposureArgs,
        /// Strategy names; defaults to the configured study strategies.
        #[arg(long = "strategy")]
        strategies: Vec<String>,
    },
    /// Run the simulation study grid.
    Study {
        /// Replicates per scenario (overrides the configuration).
        #[arg(long)]
        replicates: Option<usize>,
        /// Comma-separated scenario bit strings, or "all".
        #[arg(long)]
        scenarios: Option<String>,
    },
    /// Four-strategy analysis of an observational dataset.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        exposure: ExposureArgs,
        /// Comma-separated sociodemographic covariates.
        #[arg(long, value_delimiter = ',')]
        sociodemographic: Option<Vec<String>>,
    },
    /// Write example datasets.
    Fixtures {
        #[arg(long, value_enum, default_value_t = FixtureKind::Toy)]
        kind: FixtureKind,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        beta_a: Option<f64>,
        #[arg(long)]
        confounding: Option<f64>,
        #[arg(long)]
        size_min: Option<usize>,
        #[arg(long)]
        size_max: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct ExposureArgs {
    /// Expose clusters whose mean of this node column is in the top quartile.
    #[arg(long, conflicts_with = "exposure_column")]
    quartile: Option<String>,
    /// 0/1 exposure column (cluster table or cluster-constant node column).
    #[arg(long)]
    exposure_column: Option<String>,
}

impl ExposureArgs {
    fn rule(&self, default: ExposureRule) -> ExposureRule {
        match (&self.quartile, &self.exposure_column) {
            (Some(c), _) => ExposureRule::Quartile { column: c.clone() },
            (None, Some(c)) => ExposureRule::Explicit { column: c.clone() },
            (None, None) => default,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FixtureKind {
    Toy,
    Synthetic,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Data(_) => "data",
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Data(m) => m,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        if e.is_config() {
            Self::Config(e.to_string())
        } else {
            Self::Data(e.to_string())
        }
    }
}

impl From<StudyError> for CliError {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Config(_) | StudyError::BadScenario(_) | StudyError::ThreadPool(_) => {
                Self::Config(e.to_string())
            }
            other => Self::Data(other.to_string()),
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn scenario(id: &str) -> Result<Scenario, CliError> {
    Scenario::parse(id).map_err(CliError::from)
}

fn study_config(g: &Global) -> Result<StudyConfig, CliError> {
    let mut cfg = match &g.config {
        Some(p) => io::load_study_config(p)?,
        None => StudyConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.master_seed = s;
    }
    if g.threads.is_some() {
        cfg.threads = g.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit<T: Serialize>(format: Format, rows: &[T], csv_text: impl FnOnce() -> String) -> Result<(), CliError> {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(rows).map_err(data)?),
        Format::Csv => print!("{}", csv_text()),
    }
    Ok(())
}

fn csv_string<E: std::fmt::Display>(f: impl FnOnce(&mut Vec<u8>) -> Result<(), E>) -> Result<String, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(data)?;
    String::from_utf8(buf).map_err(data)
}

fn write_report(g: &Global, report: &EmpiricalReport) -> Result<(), CliError> {
    let effects = report.effect_rows();
    let p = g.out.join("effects.csv");
    empirical::write_effect_report(io::create(&p)?, &effects).map_err(data)?;
    let p = g.out.join("models.csv");
    empirical::write_model_report(io::create(&p)?, &report.model_rows()).map_err(data)?;
    for s in &report.strategies {
        if let Err(e) = &s.result {
            eprintln!("warning: {}: {e}", s.name);
        }
    }
    let text = csv_string(|b| empirical::write_effect_report(b, &effects))?;
    emit(g.format, &effects, || text)
}

#[derive(Serialize)]
struct NetgenEcho<'a> {
    command: &'static str,
    scenario: String,
    seed: u64,
    settings: &'a netgee::study::SimulationSettings,
}

fn cmd_netgen(g: &Global, id: &str) -> Result<(), CliError> {
    let cfg = study_config(g)?;
    let s = scenario(id)?;
    let spec = cfg.settings.cluster_spec(&s);
    let nets = generate_cluster_set(&spec, cfg.master_seed).map_err(data)?;
    io::write_networks(&g.out, &nets)?;
    io::write_json(
        &g.out.join("resolved_config.json"),
        &NetgenEcho { command: "netgen", scenario: s.id(), seed: cfg.master_seed, settings: &cfg.settings },
    )?;
    let rows: Vec<serde_json::Value> = nets
        .iter()
        .map(|n| serde_json::json!({"cluster_id": n.cluster_id(), "nodes": n.node_count(), "edges": n.edge_count()}))
        .collect();
    emit(g.format, &rows, || {
        let mut t = String::from("cluster_id,nodes,edges\n");
        for n in &nets {
            t += &format!("{},{},{}\n", n.cluster_id(), n.node_count(), n.edge_count());
        }
        t
    })
}

fn load_nets(dir: &Path) -> Result<Vec<netgee::Network>, CliError> {
    Ok(io::read_networks(&dir.join(empirical::EDGES_FILE), &dir.join(empirical::NODES_FILE))?)
}

fn cmd_contagion(g: &Global, input: &Path, id: &str) -> Result<(), CliError> {
    let cfg = study_config(g)?;
    let s = scenario(id)?;
    let nets = load_nets(input)?;
    let ccfg = cfg.settings.contagion_config(&s);
    let mut r = rng::stream(cfg.master_seed, &[1]);
    let run = contagion::simulate(&nets, &ccfg, cfg.settings.exposure_mode, &mut r).map_err(data)?;
    let baseline: Vec<f64> = run.state.baseline.as_ref().expect("baseline reached").iter().flatten().map(|&b| f64::from(u8::from(b))).collect();
    io::write_networks(&g.out, &nets)?;
    let p = g.out.join(COVARIATES_FILE);
    io::write_node_table(io::create(&p)?, &nets, &Table { names: vec![BASELINE_COLUMN.into()], columns: vec![baseline] })
        .map_err(data)?;
    let p = g.out.join(OUTCOMES_FILE);
    io::write_outcomes(io::create(&p)?, &nets, &run.outcomes).map_err(data)?;
    let exposure: Vec<f64> =
        run.state.exposure.as_ref().expect("assigned").iter().map(|&a| f64::from(u8::from(a))).collect();
    let mut clusters = Table::default();
    clusters.push("exposed", exposure);
    clusters.push(empirical::PROPENSITY_COLUMN, run.propensity.clone());
    clusters.push(study::CONFOUNDER, run.confounder.clone());
    let p = g.out.join(CLUSTERS_FILE);
    io::write_cluster_table(io::create(&p)?, &nets, &clusters).map_err(data)?;
    io::write_json(
        &g.out.join("resolved_config.json"),
        &serde_json::json!({"command": "contagion", "scenario": s.id(), "seed": cfg.master_seed,
            "contagion": ccfg, "exposure_mode": cfg.settings.exposure_mode}),
    )?;
    let rows: Vec<serde_json::Value> = nets
        .iter()
        .enumerate()
        .map(|(i, n)| {
            serde_json::json!({"cluster_id": n.cluster_id(), "exposed": clusters.columns[0][i] == 1.0,
                "propensity": run.propensity[i], "prevalence": run.outcomes[i].iter().filter(|&&y| y).count() as f64 / n.node_count().max(1) as f64})
        })
        .collect();
    emit(g.format, &rows, || {
        let mut t = String::from("cluster_id,exposed,propensity,prevalence\n");
        for row in &rows {
            t += &format!(
                "{},{},{},{}\n",
                row["cluster_id"],
                u8::from(row["exposed"].as_bool().unwrap_or(false)),
                io::sig6(row["propensity"].as_f64().unwrap_or(f64::NAN)),
                io::sig6(row["prevalence"].as_f64().unwrap_or(f64::NAN))
            );
        }
        t
    })
}

fn cmd_features(g: &Global, input: &Path) -> Result<(), CliError> {
    let cfg = study_config(g)?;
    let nets = load_nets(input)?;
    let cov_path = input.join(COVARIATES_FILE);
    let baseline: Vec<Vec<usize>> = if cov_path.is_file() {
        let t = io::read_node_table(&cov_path, &nets)?;
        match t.column(BASELINE_COLUMN) {
            Some(col) => io::split_by_cluster(&nets, col)
                .into_iter()
                .map(|v| v.iter().enumerate().filter(|(_, &x)| x == 1.0).map(|(j, _)| j).collect())
                .collect(),
            None => vec![Vec::new(); nets.len()],
        }
    } else {
        vec![Vec::new(); nets.len()]
    };
    let table = io::features_table(&nets, &baseline, &cfg.settings.features).map_err(data)?;
    let p = g.out.join("features.csv");
    io::write_node_table(io::create(&p)?, &nets, &table).map_err(data)?;
    io::write_json(
        &g.out.join("resolved_config.json"),
        &serde_json::json!({"command": "features", "features": cfg.settings.features}),
    )?;
    let summary: Vec<serde_json::Value> = vec![serde_json::json!({"nodes": table.rows(), "file": p})];
    emit(g.format, &summary, || format!("nodes,file\n{},{}\n", table.rows(), p.display()))
}

fn cmd_estimate(g: &Global, input: &Path, exposure: &ExposureArgs, names: &[String]) -> Result<(), CliError> {
    let cfg = study_config(g)?;
    let ds = load_empirical(input)?;
    let rule = exposure.rule(ExposureRule::Explicit { column: "exposed".into() });
    let prep = prepare(&ds, &rule, &cfg.settings.features)?;
    let mut available = cfg.all_strategies();
    available.push(NamedStrategy::new("Crude", Strategy::Crude));
    available.extend(empirical_strategies(&prep.network_covariates, &prep.other_covariates));
    let chosen: Vec<NamedStrategy> = if names.is_empty() {
        let mut v = cfg.strategies.clone();
        if prep.frame.known_ps.is_some() {
            v.push(cfg.oracle.clone());
        }
        v
    } else {
        names
            .iter()
            .map(|n| {
                available.iter().find(|s| &s.name == n).cloned().ok_or_else(|| {
                    let known: Vec<&str> = available.iter().map(|s| s.name.as_str()).collect();
                    CliError::Config(format!("unknown strategy {n:?}; known: {}", known.join(", ")))
                })
            })
            .collect::<Result<_, _>>()?
    };
    let report = EmpiricalReport {
        clusters: prep.frame.clusters(),
        exposed: prep.frame.exposure.iter().filter(|&&a| a).count(),
        nodes: prep.frame.nodes(),
        strategies: run_strategies(&prep.frame, &chosen, &cfg.estimation),
    };
    io::write_json(
        &g.out.join("resolved_config.json"),
        &serde_json::json!({"command": "estimate", "exposure": rule, "strategies": chosen,
            "estimation": cfg.estimation, "features": cfg.settings.features}),
    )?;
    write_report(g, &report)
}

fn cmd_study(g: &Global, replicates: Option<usize>, scenarios: Option<&str>) -> Result<(), CliError> {
    let mut cfg = study_config(g)?;
    if let Some(r) = replicates {
        cfg.replicates = r;
    }
    if let Some(list) = scenarios {
        cfg.scenarios = if list.trim() == "all" {
            ScenarioSelection::All(study::AllMarker::All)
        } else {
            ScenarioSelection::List(list.split(',').map(|s| scenario(s.trim())).collect::<Result<_, _>>()?)
        };
    }
    cfg.validate()?;
    let results = study::run_study(&cfg)?;
    io::write_study_outputs(&g.out, &cfg, &results)?;
    let failed = results.replicates.iter().filter(|r| r.outcome.is_err()).count();
    let rows: Vec<serde_json::Value> = results
        .summaries
        .iter()
        .map(|s| serde_json::json!({"scenario": s.scenario.id(), "beta_star": s.beta_star, "replicates": s.usable,
            "failed": s.failed, "partial": s.partial}))
        .collect();
    if failed > 0 {
        eprintln!("warning: {failed} replicates failed after {} attempts", cfg.max_attempts);
    }
    emit(g.format, &rows, || {
        let mut t = String::from("scenario,beta_star,replicates,failed,partial\n");
        for s in &results.summaries {
            t += &format!("{},{},{},{},{}\n", s.scenario, io::sig6(s.beta_star), s.usable, s.failed, s.partial);
        }
        t
    })
}

fn cmd_analyze(
    g: &Global,
    input: &Path,
    exposure: &ExposureArgs,
    sociodemographic: Option<Vec<String>>,
) -> Result<(), CliError> {
    let mut opts: AnalyzeOptions = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => AnalyzeOptions::default(),
    };
    if sociodemographic.is_some() {
        opts.sociodemographic = sociodemographic;
    }
    let ds = load_empirical(input)?;
    let rule = exposure.rule(ExposureRule::Quartile { column: "leader".into() });
    let report = analyze_empirical(&ds, &rule, &opts)?;
    io::write_json(
        &g.out.join("resolved_config.json"),
        &serde_json::json!({"command": "analyze", "exposure": rule, "options": opts}),
    )?;
    write_report(g, &report)
}

fn cmd_fixtures(
    g: &Global,
    kind: FixtureKind,
    clusters: Option<usize>,
    beta_a: Option<f64>,
    confounding: Option<f64>,
    size: (Option<usize>, Option<usize>),
) -> Result<(), CliError> {
    match kind {
        FixtureKind::Toy => {
            empirical::write_empirical(&g.out, &empirical::toy_dataset())?;
            io::write_json(&g.out.join("resolved_config.json"), &serde_json::json!({"command": "fixtures", "kind": kind}))?;
        }
        FixtureKind::Synthetic => {
            let d = SyntheticSpec::default();
            let spec = SyntheticSpec {
                clusters: clusters.unwrap_or(d.clusters),
                size_range: (size.0.unwrap_or(d.size_range.0), size.1.unwrap_or(d.size_range.1)),
                beta_a: beta_a.unwrap_or(d.beta_a),
                confounding: confounding.unwrap_or(d.confounding),
                seed: g.seed.unwrap_or(d.seed),
                ..d
            };
            let (ds, exposure) = empirical::synthetic_dataset(&spec)?;
            empirical::write_empirical(&g.out, &ds)?;
            io::write_json(
                &g.out.join("resolved_config.json"),
                &serde_json::json!({"command": "fixtures", "kind": kind, "synthetic": spec,
                    "exposure": ExposureRule::Quartile { column: "leader".into() },
                    "exposed_clusters": exposure.iter().filter(|&&a| a).count()}),
            )?;
        }
    }
    let rows = vec![serde_json::json!({"kind": kind, "out": g.out})];
    emit(g.format, &rows, || format!("kind,out\n{kind:?},{}\n", g.out.display()))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    if g.threads == Some(0) {
        return Err(CliError::Config("--threads must be positive".into()));
    }
    std::fs::create_dir_all(&g.out).map_err(|e| CliError::Data(format!("{}: {e}", g.out.display())))?;
    match &cli.command {
        Command::Netgen { scenario } => cmd_netgen(g, scenario),
        Command::Contagion { input, scenario } => cmd_contagion(g, input, scenario),
        Command::Features { input } => cmd_features(g, input),
        Command::Estimate { input, exposure, strategies } => cmd_estimate(g, input, exposure, strategies),
        Command::Study { replicates, scenarios } => cmd_study(g, *replicates, scenarios.as_deref()),
        Command::Analyze { input, exposure, sociodemographic } => {
            cmd_analyze(g, input, exposure, sociodemographic.clone())
        }
        Command::Fixtures { kind, clusters, beta_a, confounding, size_min, size_max } => {
            cmd_fixtures(g, *kind, *clusters, *beta_a, *confounding, (*size_min, *size_max))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match cli.global.format {
                Format::Json => eprintln!(
                    "{}",
                    serde_json::json!({"error": {"kind": e.kind(), "message": e.message()}, "exit_code": e.code()})
                ),
                Format::Csv => eprintln!("error: {}", e.message()),
            }
            ExitCode::from(e.code())
        }
    }
}
