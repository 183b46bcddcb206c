use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use enorm::io::{load_network, save_network};
use enorm::model::mlp;
use enorm::Layer;

fn enorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_enorm")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(dir: &Path, name: &str, widths: &[usize], seed: u64) -> PathBuf {
    let path = dir.join(name);
    let net = mlp(widths, true, &mut enorm::rng(seed)).unwrap();
    save_network(&net, &path).unwrap();
    path
}

fn report_rows(path: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("cycle,lp_norm,max_dev"));
    lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn check_passes_on_balanced_copy_and_fails_on_perturbed() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixture(dir.path(), "a.enorm", &[5, 7, 6, 3], 1);
    let b = dir.path().join("b.enorm");
    let out = enorm(&["balance", "--net", s(&a), "--out", s(&b)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = enorm(&["check", "--net-a", s(&a), "--net-b", s(&b), "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));

    let mut net = load_network(&b).unwrap();
    if let Layer::Linear(l) = &mut net.layers[0] {
        l.weight.data_mut()[0] += 1e-3;
    }
    let c = dir.path().join("c.enorm");
    save_network(&net, &c).unwrap();
    let out = enorm(&["check", "--net-a", s(&a), "--net-b", s(&c), "--seed", "4"]);
    assert_eq!(code(&out), 1);

    let other = fixture(dir.path(), "d.enorm", &[5, 4, 3], 2);
    let out = enorm(&["check", "--net-a", s(&a), "--net-b", s(&other)]);
    assert_eq!(code(&out), 1);
}

#[test]
fn dead_neuron_is_a_usage_level_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dead.enorm");
    let mut net = mlp(&[3, 4, 2], false, &mut enorm::rng(0)).unwrap();
    if let Layer::Linear(l) = &mut net.layers[0] {
        for r in 0..3 {
            l.weight.set(r, 2, 0.0);
        }
    }
    save_network(&net, &path).unwrap();
    let out = enorm(&["balance", "--net", s(&path), "--out", s(&dir.path().join("x.enorm"))]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("disconnected neuron 2"), "{err}");
    assert!(!dir.path().join("x.enorm").exists());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&enorm(&[])), 2);
    assert_eq!(code(&enorm(&["balance"])), 2);
    assert_eq!(code(&enorm(&["balance", "--net", "x", "--out", "y", "--uniform-c", "1.2", "--adaptive"])), 2);
    assert_eq!(code(&enorm(&["--help"])), 0);
    let out = enorm(&["inspect", "--net", "/nonexistent/net.enorm"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn balance_twice_is_already_converged() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixture(dir.path(), "a.enorm", &[6, 8, 8, 8, 2], 3);
    let (b, c) = (dir.path().join("b.enorm"), dir.path().join("c.enorm"));
    let (r1, r2) = (dir.path().join("r1.csv"), dir.path().join("r2.csv"));
    let tol = "1e-9";
    let out = enorm(&["balance", "--net", s(&a), "--out", s(&b), "--report", s(&r1), "--tol", tol, "--cycles", "500"]);
    assert_eq!(code(&out), 0);
    let out = enorm(&["balance", "--net", s(&b), "--out", s(&c), "--report", s(&r2), "--tol", tol]);
    assert_eq!(code(&out), 0);

    let first = report_rows(&r1);
    assert!(first.len() > 1);
    assert!(first.last().unwrap()[2] < 1e-9);
    let second = report_rows(&r2);
    assert_eq!(second.len(), 1);
    assert_eq!(second[0][0], 1.0);
    assert!(second[0][2] < 1e-9, "{:?}", second[0]);
    let last_norm = first.last().unwrap()[1];
    assert!((second[0][1] - last_norm).abs() <= 1e-12 * last_norm);
}

#[test]
fn asymmetric_flags_change_the_result() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixture(dir.path(), "a.enorm", &[4, 5, 5, 2], 5);
    let plain = dir.path().join("p.enorm");
    let uni = dir.path().join("u.enorm");
    let adaptive = dir.path().join("a2.enorm");
    assert_eq!(code(&enorm(&["balance", "--net", s(&a), "--out", s(&plain)])), 0);
    assert_eq!(code(&enorm(&["balance", "--net", s(&a), "--out", s(&uni), "--uniform-c", "1.2"])), 0);
    assert_eq!(code(&enorm(&["balance", "--net", s(&a), "--out", s(&adaptive), "--adaptive"])), 0);
    let p = load_network(&plain).unwrap();
    let u = load_network(&uni).unwrap();
    assert_ne!(p, u);
    for other in [&uni, &adaptive] {
        let out = enorm(&["check", "--net-a", s(&plain), "--net-b", s(other)]);
        assert_eq!(code(&out), 0);
    }
}

#[test]
fn canon_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixture(dir.path(), "a.enorm", &[3, 3, 3, 2], 6);
    let out = enorm(&["canon", "--net", s(&a), "--rescalings", "5", "--seed", "1", "--tol", "1e-6"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    // Too few cycles to get anywhere near the balanced point.
    let out = enorm(&["canon", "--net", s(&a), "--rescalings", "5", "--seed", "1", "--tol", "1e-12", "--max-cycles", "1"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn inspect_counts_resnet18c_elements() {
    let out = enorm(&["inspect", "--arch", "resnet18c", "--count-elements"]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let n: usize = stdout
        .lines()
        .find_map(|l| l.strip_prefix("normalized_elements: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((11_000_000..=13_000_000).contains(&n), "{n}");
    assert!(stdout.contains("global_l2_norm: "));
}

#[test]
fn inspect_writes_energy_profile() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixture(dir.path(), "a.enorm", &[3, 4, 2], 7);
    let csv = dir.path().join("e.csv");
    assert_eq!(code(&enorm(&["inspect", "--net", s(&a), "--energy", s(&csv)])), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("layer,label,neuron,norm\n"));
    assert_eq!(text.lines().count(), 1 + 4 + 2);
}

fn write_config(dir: &Path, cycles: usize) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        format!(
            r#"
learning_rate = 0.02
momentum = 0.9
batch_size = 20
epochs = 3
seed = 11
enorm_cycles_per_step = {cycles}
dataset = "synthetic"
samples = 100
teacher = [6, 10, 1]
architecture = [6, 12, 8, 1]
"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn train_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1);
    let (o1, o2) = (dir.path().join("run1"), dir.path().join("run2"));
    for o in [&o1, &o2] {
        let out = enorm(&["train", "--config", s(&cfg), "--out", s(o)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["network.enorm", "metrics.csv", "epochs.csv", "energy.csv"] {
        let a = std::fs::read(o1.join(f)).unwrap();
        let b = std::fs::read(o2.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let metrics = std::fs::read_to_string(o1.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3 * 5);
    let energy = std::fs::read_to_string(o1.join("energy.csv")).unwrap();
    let epochs: std::collections::BTreeSet<&str> =
        energy.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs.into_iter().collect::<Vec<_>>(), ["0", "1", "2", "3"]);
}

#[test]
fn balance_report_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixture(dir.path(), "a.enorm", &[5, 9, 9, 2], 8);
    let mut reports = Vec::new();
    for i in 0..2 {
        let r = dir.path().join(format!("r{i}.csv"));
        let o = dir.path().join(format!("o{i}.enorm"));
        assert_eq!(code(&enorm(&["balance", "--net", s(&a), "--out", s(&o), "--report", s(&r)])), 0);
        reports.push((std::fs::read(&r).unwrap(), std::fs::read(&o).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "learning_rate = 0.1\nbogus = 3\n").unwrap();
    let out = enorm(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));
}

#[test]
fn generate_appendix_network() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("deep.enorm");
    let out = enorm(&["generate", "--arch", "appendix-a", "--depth", "4", "--width", "10", "--out", s(&out_path)]);
    assert_eq!(code(&out), 0);
    let net = load_network(&out_path).unwrap();
    assert_eq!(net.num_params(), 4 * 100);
}
