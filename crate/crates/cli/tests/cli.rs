use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn optorc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optorc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn synth(dir: &Path) {
    let o = optorc(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--subjects",
        "2",
        "--repetitions",
        "2",
        "--min-frames",
        "24",
        "--max-frames",
        "26",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_and_data_errors_have_distinct_exit_codes() {
    assert_eq!(code(&optorc(&["no-such-command"])), 1);
    assert_eq!(code(&optorc(&["pca", "fit", "--k", "10"])), 1);
    assert_eq!(code(&optorc(&["--help"])), 0);

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let o = optorc(&[
        "extract-hog",
        "--manifest",
        missing.to_str().unwrap(),
        "--out",
        dir.path().join("f.feat").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let o = optorc(&["describe", dir.path().to_str().unwrap()]);
    assert_ne!(code(&o), 0);
}

#[test]
fn stepwise_commands_and_pipeline_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    synth(&data);
    let manifest = data.join("manifest.json");
    let m = manifest.to_str().unwrap();
    let p = |name: &str| d.join(name).to_string_lossy().into_owned();

    let o = optorc(&["extract-hog", "--manifest", m, "--out", &p("small.feat"), "--cell", "16", "--bins", "6"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("[9, 6, 4, 6]"), "{}", stdout(&o));

    let steps: [&[&str]; 5] = [
        &["extract-hog", "--manifest", m, "--out", &p("hog.feat")],
        &["pca", "fit", "--in", &p("hog.feat"), "--k", "20", "--out", &p("pca.model"), "--manifest", m],
        &["pca", "transform", "--model", &p("pca.model"), "--in", &p("hog.feat"), "--out", &p("red.feat")],
        &["reservoir", "run", "--spec", &p("spec.toml"), "--features", &p("red.feat"), "--manifest", m, "--out", &p("states.feat")],
        &["train", "--states", &p("states.feat"), "--manifest", m, "--out", &p("readout.model")],
    ];
    fs::write(
        d.join("spec.toml"),
        "variant = \"intensity\"\nn = 48\nk = 20\nalpha = 0.8\nbeta = 0.05\ngamma = 0.1\nrho = 0.05\nseed = 3\n",
    )
    .unwrap();
    for args in steps {
        let o = optorc(args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = optorc(&[
        "evaluate",
        "--model",
        &p("readout.model"),
        "--states",
        &p("states.feat"),
        "--manifest",
        m,
        "--out",
        &p("eval"),
    ]);
    assert_eq!(code(&o), 0);
    let stepwise = fs::read_to_string(d.join("eval/score.txt")).unwrap();

    fs::write(
        d.join("run.toml"),
        "manifest = \"data/manifest.json\"\nout_dir = \"run\"\n[pca]\nk = 20\n\
         [reservoir]\nvariant = \"intensity\"\nn = 48\nalpha = 0.8\nbeta = 0.05\ngamma = 0.1\nrho = 0.05\nseed = 3\n",
    )
    .unwrap();
    let o = optorc(&["pipeline", "run", "--config", &p("run.toml")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(d.join("run/results/score.txt")).unwrap(), stepwise);

    let o = optorc(&["describe", &p("run")]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("6 stages"), "{}", stdout(&o));

    let grid = "variant = \"intensity\"\nn = 48\nalpha = [0.4, 0.8]\nbeta = [0.05]\ngamma = [0.1]\nrho = [0.05]\nseeds = [3]\n";
    fs::write(d.join("grid.toml"), grid).unwrap();
    let args = [
        "--out-dir",
        &p("grid"),
        "gridsearch",
        "--grid",
        &p("grid.toml"),
        "--manifest",
        m,
        "--features",
        &p("red.feat"),
    ];
    assert_eq!(code(&optorc(&args)), 0);
    let log = fs::read_to_string(d.join("grid/results.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let mut resumed = args.to_vec();
    resumed.push("--resume");
    assert_eq!(code(&optorc(&resumed)), 0);
    assert_eq!(fs::read_to_string(d.join("grid/results.csv")).unwrap(), log);
    let o = optorc(&["describe", &p("grid")]);
    assert!(stdout(&o).contains("grid cardinality 2"), "{}", stdout(&o));
}
