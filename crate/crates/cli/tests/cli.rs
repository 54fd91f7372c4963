use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 5
trials = 2
m_grid = [16, 48, 128]
algorithms = ["struct-dht", "dht"]
link = "identity"

[signal]
n = 64
s = 4
b = 2

[solver]
eta_prime = 0.6
init = "zero"
"#;

const PERIODIC: &str = r#"
seed = 3
trials = 1
m_grid = [256]
algorithms = ["mf-struct-dht"]
link = "sin"

[signal]
n = 64
s = 4
b = 2
k = 4

[solver]
eta_prime = 0.6
init = "zero"

[grid]
refine = true
"#;

fn structdemix(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_structdemix"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.toml"), config).unwrap();
    dir
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn experiment_writes_all_outputs_and_is_thread_invariant() {
    let dir = setup(SMALL);
    let one = structdemix(
        dir.path(),
        &[
            "experiment",
            "--config",
            "config.toml",
            "--out",
            "a",
            "--threads",
            "1",
        ],
    );
    assert!(
        one.status.success(),
        "{}",
        String::from_utf8_lossy(&one.stderr)
    );
    for f in ["results.csv", "sweep.json", "success.svg", "error.svg"] {
        assert!(dir.path().join("a").join(f).exists(), "missing {f}");
    }
    let two = structdemix(
        dir.path(),
        &[
            "experiment",
            "--config",
            "config.toml",
            "--out",
            "b",
            "--threads",
            "3",
        ],
    );
    assert!(two.status.success());
    let a = fs::read(dir.path().join("a/results.csv")).unwrap();
    let b = fs::read(dir.path().join("b/results.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "algorithm,m,trial,normalized_error,success,iterations,wall_time_seconds"
    );
    assert_eq!(text.lines().count(), 2 * 3 * 2 + 1);
    assert!(stdout(&one).contains("struct-dht"));
}

#[test]
fn seed_and_algorithm_flags_override_the_config() {
    let dir = setup(SMALL);
    let args = |out: &'static str, seed: &'static str| {
        [
            "experiment",
            "--config",
            "config.toml",
            "--out",
            out,
            "--seed",
            seed,
            "--algorithm",
            "dht",
        ]
    };
    assert!(structdemix(dir.path(), &args("a", "11")).status.success());
    assert!(structdemix(dir.path(), &args("b", "12")).status.success());
    let a = fs::read_to_string(dir.path().join("a/results.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("b/results.csv")).unwrap();
    assert_ne!(a, b);
    assert!(a.lines().skip(1).all(|l| l.starts_with("dht,")));
}

#[test]
fn generate_solve_and_analyze_round_trip() {
    let dir = setup(SMALL);
    let gen = structdemix(
        dir.path(),
        &[
            "generate",
            "--config",
            "config.toml",
            "--m",
            "128",
            "--out",
            "inst",
        ],
    );
    assert!(
        gen.status.success(),
        "{}",
        String::from_utf8_lossy(&gen.stderr)
    );
    let inst = dir.path().join("inst/instance.json");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&inst).unwrap()).unwrap();
    assert_eq!(v["config"]["m"], 128);
    assert_eq!(v["link_name"], "identity");

    let solve = structdemix(
        dir.path(),
        &[
            "solve",
            "--instance",
            "inst/instance.json",
            "--algorithm",
            "struct-dht",
            "--config",
            "config.toml",
            "--out",
            "res",
        ],
    );
    assert!(
        solve.status.success(),
        "{}",
        String::from_utf8_lossy(&solve.stderr)
    );
    let r: serde_json::Value = serde_json::from_str(&stdout(&solve)).unwrap();
    assert!(r["normalized_error"].as_f64().unwrap() < 1e-4, "{r}");
    assert_eq!(r["beta_hat"].as_array().unwrap().len(), 64);
    let trace = fs::read_to_string(dir.path().join("res/trace.csv")).unwrap();
    assert!(trace.starts_with("iter,"));

    let analyze = structdemix(
        dir.path(),
        &[
            "analyze",
            "--instance",
            "inst/instance.json",
            "--trials",
            "4",
        ],
    );
    assert!(
        analyze.status.success(),
        "{}",
        String::from_utf8_lossy(&analyze.stderr)
    );
    let a: serde_json::Value = serde_json::from_str(&stdout(&analyze)).unwrap();
    for key in [
        "level",
        "m_hat",
        "M_hat",
        "window",
        "condition_ok",
        "rho_at_default_step",
    ] {
        assert!(a.get(key).is_some(), "missing {key}");
    }
    assert_eq!(a["level"], 24);
    assert!(a["M_hat"].as_f64().unwrap() >= a["m_hat"].as_f64().unwrap());
}

#[test]
fn periodic_instances_go_through_the_matched_filter() {
    let dir = setup(PERIODIC);
    let gen = structdemix(
        dir.path(),
        &["generate", "--config", "config.toml", "--out", "."],
    );
    assert!(
        gen.status.success(),
        "{}",
        String::from_utf8_lossy(&gen.stderr)
    );
    let solve = structdemix(
        dir.path(),
        &[
            "solve",
            "--instance",
            "instance.json",
            "--algorithm",
            "mf-struct-dht",
            "--config",
            "config.toml",
        ],
    );
    assert!(
        solve.status.success(),
        "{}",
        String::from_utf8_lossy(&solve.stderr)
    );
    let r: serde_json::Value = serde_json::from_str(&stdout(&solve)).unwrap();
    assert!(r["normalized_error"].as_f64().unwrap().is_finite());

    let wrong = structdemix(
        dir.path(),
        &[
            "solve",
            "--instance",
            "instance.json",
            "--algorithm",
            "dht",
            "--config",
            "config.toml",
        ],
    );
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn plot_renders_from_csv() {
    let dir = setup(SMALL);
    assert!(structdemix(
        dir.path(),
        &["experiment", "--config", "config.toml", "--out", "."]
    )
    .status
    .success());
    let first = fs::read(dir.path().join("success.svg")).unwrap();
    fs::remove_file(dir.path().join("success.svg")).unwrap();
    let plot = structdemix(dir.path(), &["plot", "--csv", "results.csv", "--out", "."]);
    assert!(
        plot.status.success(),
        "{}",
        String::from_utf8_lossy(&plot.stderr)
    );
    assert_eq!(fs::read(dir.path().join("success.svg")).unwrap(), first);

    fs::write(
        dir.path().join("empty.csv"),
        "algorithm,m,trial,normalized_error,success,iterations,wall_time_seconds\n",
    )
    .unwrap();
    let empty = structdemix(dir.path(), &["plot", "--csv", "empty.csv"]);
    assert_eq!(empty.status.code(), Some(2));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = setup(SMALL);
    let missing = structdemix(
        dir.path(),
        &["solve", "--instance", "nope.json", "--algorithm", "dht"],
    );
    assert_eq!(missing.status.code(), Some(3));

    fs::write(dir.path().join("bad.toml"), "seed = 1\n").unwrap();
    let bad = structdemix(dir.path(), &["experiment", "--config", "bad.toml"]);
    assert_eq!(bad.status.code(), Some(2));

    let unknown = format!("{SMALL}\nbogus = 1\n");
    fs::write(dir.path().join("unknown.toml"), unknown).unwrap();
    let bad = structdemix(dir.path(), &["experiment", "--config", "unknown.toml"]);
    assert_eq!(bad.status.code(), Some(2));

    let link = structdemix(
        dir.path(),
        &["experiment", "--config", "config.toml", "--link", "cubic"],
    );
    assert_eq!(link.status.code(), Some(2));
    let periodic = structdemix(
        dir.path(),
        &["experiment", "--config", "config.toml", "--link", "sin"],
    );
    assert_eq!(periodic.status.code(), Some(2));

    let gen = structdemix(
        dir.path(),
        &[
            "generate",
            "--config",
            "config.toml",
            "--m",
            "48",
            "--out",
            ".",
        ],
    );
    assert!(gen.status.success());
    let zero_level = structdemix(
        dir.path(),
        &["analyze", "--instance", "instance.json", "--level", "0"],
    );
    assert_eq!(zero_level.status.code(), Some(2));

    let divergent = SMALL.replace("eta_prime = 0.6", "eta_prime = 1e9\nmax_iters = 200");
    fs::write(dir.path().join("divergent.toml"), divergent).unwrap();
    let blowup = structdemix(
        dir.path(),
        &[
            "solve",
            "--instance",
            "instance.json",
            "--algorithm",
            "struct-dht",
            "--config",
            "divergent.toml",
        ],
    );
    assert_eq!(
        blowup.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&blowup.stderr)
    );

    assert_eq!(
        structdemix(dir.path(), &["frobnicate"]).status.code(),
        Some(2)
    );
    assert_eq!(structdemix(dir.path(), &["--help"]).status.code(), Some(0));
}
