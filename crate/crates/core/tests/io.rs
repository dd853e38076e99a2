mod common;

use std::fs;
use std::path::Path;

use netgee::features::{compute_features, FeatureConfig, FEATURE_NAMES};
use netgee::io::{
    features_table, full, metrics_from_log, parse_study_config, read_cluster_table, read_estimates, read_networks,
    read_node_table, read_outcomes, sig6, write_cluster_table, write_estimates, write_networks, write_node_table,
    write_outcomes, write_study_outputs, IoError, Table,
};
use netgee::study::{run_study, Scenario, ScenarioSelection, StudyConfig};
use netgee::Network;
use proptest::prelude::*;
use tempfile::tempdir;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn nets_strategy() -> impl Strategy<Value = Vec<Network>> {
    (1usize..4, any::<bool>(), any::<u64>()).prop_map(|(m, blocks, seed)| {
        let mut r = netgee::rng::stream(seed, &[]);
        (0..m)
            .map(|i| {
                use rand::Rng;
                let n = r.random_range(1..12);
                let edges = common::random_graph(n, 0.3, &mut r);
                let b = blocks.then(|| (0..n).map(|_| r.random_range(1..=8)).collect());
                Network::new(i as u32 * 3 + 1, n, edges, b).unwrap()
            })
            .collect()
    })
}

fn small_nets() -> Vec<Network> {
    vec![
        Network::new(1, 3, [(0, 1), (1, 2)], None).unwrap(),
        Network::new(2, 2, [(0, 1)], None).unwrap(),
    ]
}

#[test]
fn number_formats() {
    assert_eq!(sig6(0.123456789), "0.123457");
    assert_eq!(sig6(-2.0), "-2");
    assert_eq!(sig6(1234567.0), "1234570");
    assert_eq!(sig6(0.0), "0");
    assert_eq!(sig6(1.5e-7), "1.5e-7");
    assert_eq!(sig6(f64::NAN), "NaN");
    let x = 0.1 + 0.2;
    assert_eq!(full(x).parse::<f64>().unwrap(), x);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn networks_round_trip(nets in nets_strategy()) {
        let dir = tempdir().unwrap();
        write_networks(dir.path(), &nets).unwrap();
        let back = read_networks(&dir.path().join("edges.tsv"), &dir.path().join("nodes.tsv")).unwrap();
        prop_assert_eq!(back, nets);
    }

    #[test]
    fn tables_round_trip(nets in nets_strategy(), seed in any::<u64>()) {
        use rand::Rng;
        let mut r = netgee::rng::stream(seed, &[]);
        let n: usize = nets.iter().map(Network::node_count).sum();
        let mut node = Table::default();
        node.push("a", (0..n).map(|_| r.random::<f64>() * 1e3 - 500.0).collect());
        node.push("b", (0..n).map(|_| r.random_range(-1e-9..1e9)).collect());
        let mut cluster = Table::default();
        cluster.push("c", (0..nets.len()).map(|_| r.random::<f64>()).collect());
        let outcomes: Vec<Vec<bool>> = nets.iter().map(|g| (0..g.node_count()).map(|_| r.random()).collect()).collect();

        let dir = tempdir().unwrap();
        let (np, cp, op) = (dir.path().join("n.csv"), dir.path().join("c.csv"), dir.path().join("o.csv"));
        write_node_table(fs::File::create(&np).unwrap(), &nets, &node).unwrap();
        write_cluster_table(fs::File::create(&cp).unwrap(), &nets, &cluster).unwrap();
        write_outcomes(fs::File::create(&op).unwrap(), &nets, &outcomes).unwrap();
        prop_assert_eq!(read_node_table(&np, &nets).unwrap(), node);
        prop_assert_eq!(read_cluster_table(&cp, &nets).unwrap(), cluster);
        prop_assert_eq!(read_outcomes(&op, &nets).unwrap(), outcomes);
    }
}

#[test]
fn network_file_errors_name_file_and_line() {
    let dir = tempdir().unwrap();
    let nodes = write(dir.path(), "nodes.tsv", "# header\n1\t1\n1\t2\n1\t3\n");
    let cases = [
        ("1\t1\t4\n", "edges.tsv:1:"),
        ("1\t1\t2\n1\t2\t2\n", "edges.tsv:2:"),
        ("1\t1\t2\n# c\n1\t2\t1\n", "edges.tsv:3:"),
        ("2\t1\t2\n", "edges.tsv:1:"),
        ("1\t1\n", "edges.tsv:1:"),
    ];
    for (text, where_) in cases {
        let edges = write(dir.path(), "edges.tsv", text);
        let err = read_networks(&edges, &nodes).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, IoError::Parse { .. }), "{msg}");
        assert!(msg.contains("edges.tsv") && msg.contains(where_), "{text:?}: {msg}");
    }
    let gap = write(dir.path(), "gap.tsv", "1\t1\n1\t3\n");
    let edges = write(dir.path(), "edges.tsv", "");
    assert!(read_networks(&edges, &gap).unwrap_err().to_string().contains("gap.tsv"));
    let mixed = write(dir.path(), "mixed.tsv", "1\t1\t1\n1\t2\n");
    assert!(read_networks(&edges, &mixed).is_err());
    let missing = read_networks(&edges, &dir.path().join("absent.tsv")).unwrap_err();
    assert!(missing.to_string().contains("absent.tsv"));
}

#[test]
fn table_errors() {
    let dir = tempdir().unwrap();
    let nets = small_nets();
    let unknown = write(dir.path(), "u.csv", "cluster_id,node_id,x\n1,1,0\n1,2,0\n1,3,0\n2,1,0\n2,2,0\n3,1,0\n");
    assert!(read_node_table(&unknown, &nets).unwrap_err().to_string().contains("unknown cluster 3"));
    let gap = write(dir.path(), "g.csv", "cluster_id,node_id,x\n1,1,0\n1,2,0\n1,3,0\n2,1,0\n");
    assert!(read_node_table(&gap, &nets).unwrap_err().to_string().contains("node 2 in cluster 2"));
    let dup = write(dir.path(), "d.csv", "cluster_id,node_id,x\n1,1,0\n1,1,0\n");
    assert!(read_node_table(&dup, &nets).unwrap_err().to_string().contains("duplicate"));
    let bad = write(dir.path(), "b.csv", "cluster_id,node_id,x\n1,1,abc\n");
    assert!(matches!(read_node_table(&bad, &nets), Err(IoError::Parse { line: 2, .. })));
    let y = write(dir.path(), "y.csv", "cluster_id,node_id,y\n1,1,0\n1,2,2\n1,3,1\n2,1,0\n2,2,1\n");
    let err = read_outcomes(&y, &nets).unwrap_err().to_string();
    assert!(err.contains("y.csv") && err.contains("binary"), "{err}");
}

#[test]
fn household_rows_collapse_by_maximum() {
    let dir = tempdir().unwrap();
    let nets = small_nets();
    let text = "cluster_id,household_id,person_id,leader,age\n\
                1,1,1,0,30\n1,1,2,1,25\n1,2,3,0,40\n1,3,4,0,20\n1,3,5,0,50\n\
                2,1,6,1,33\n2,2,7,0,44\n2,2,8,0,22\n";
    let p = write(dir.path(), "h.csv", text);
    let t = read_node_table(&p, &nets).unwrap();
    assert_eq!(t.names, vec!["leader", "age"]);
    assert_eq!(t.column("leader").unwrap(), &[1.0, 0.0, 0.0, 1.0, 0.0]);
    assert_eq!(t.column("age").unwrap(), &[30.0, 40.0, 50.0, 33.0, 44.0]);
}

#[test]
fn features_table_matches_in_memory_features() {
    let nets = small_nets();
    let baseline = vec![vec![1], vec![]];
    let t = features_table(&nets, &baseline, &FeatureConfig::default()).unwrap();
    assert_eq!(t.names, FEATURE_NAMES.to_vec());
    let f0 = compute_features(&nets[0], &[1], &FeatureConfig::default()).unwrap();
    for (c, name) in FEATURE_NAMES.iter().enumerate() {
        assert_eq!(&t.column(name).unwrap()[..3], f0.column(name).unwrap().as_slice(), "{c}");
    }
}

#[test]
fn config_parsing() {
    let cfg = parse_study_config("replicates = 3\nscenarios = [\"000001\"]\n[settings]\nsteps = 4\n").unwrap();
    assert_eq!(cfg.replicates, 3);
    assert_eq!(cfg.settings.steps, 4);
    assert_eq!(cfg.settings.clusters, 48);
    assert!(parse_study_config("replicates = 3\nbogus = 1\n").unwrap_err().is_config());
    assert!(parse_study_config("scenarios = [\"0000012\"]\n").unwrap_err().is_config());
    assert!(parse_study_config("baseline_strategy = \"Nope\"\n").unwrap_err().is_config());
}

#[test]
fn study_log_round_trips_and_reproduces_metrics() {
    let cfg = StudyConfig {
        replicates: 4,
        master_seed: 99,
        scenarios: ScenarioSelection::List(vec![Scenario::parse("100001").unwrap(), Scenario::parse("111111").unwrap()]),
        ..StudyConfig::default()
    };
    let res = run_study(&cfg).unwrap();
    let dir = tempdir().unwrap();
    write_study_outputs(dir.path(), &cfg, &res).unwrap();
    for f in ["estimates.csv", "metrics.csv", "inclusion.csv", "inclusion_summary.csv", "resolved_config.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let log = dir.path().join("estimates.csv");
    let back = read_estimates(&log).unwrap();
    let mut again = Vec::new();
    write_estimates(&mut again, &back).unwrap();
    assert_eq!(again, fs::read(&log).unwrap());
    if res.replicates.iter().all(|r| r.outcome.as_ref().is_ok_and(|v| v.iter().all(|e| e.ok()))) {
        assert_eq!(back, res.replicates);
    }
    let recomputed = metrics_from_log(&log, &cfg.oracle.name, &cfg.baseline_strategy).unwrap();
    assert_eq!(recomputed, fs::read_to_string(dir.path().join("metrics.csv")).unwrap());

    let echoed: StudyConfig =
        serde_json::from_str(&fs::read_to_string(dir.path().join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(echoed, cfg);
}
