use std::fs;
use std::process::Command;

fn dqs() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dqs"))
}

const TINY: &[&str] = &[
    "--population",
    "8",
    "--m",
    "2",
    "--k",
    "2",
    "--n_grad",
    "2",
    "--policy_hidden",
    "8",
    "--actor_hidden",
    "8",
    "--critic_hidden",
    "8",
    "--discriminator_hidden",
    "8",
    "--batch_size",
    "8",
    "--num_eval",
    "16",
    "--n_cells",
    "16",
];

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = dqs()
        .args(["run", "--seed", "3", "--out_dir"])
        .arg(&out)
        .args(TINY)
        .status()
        .unwrap();
    assert!(status.success());
    for f in [
        "metrics.csv",
        "species_stats.csv",
        "reward_audit.csv",
        "archive.csv",
        "archive.json",
        "config.toml",
        "run_info.txt",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("generation,eval_count,qd_score,max_fitness,coverage,mean_population_fitness,species_separation,discriminator_loss,critic_loss,wall_seconds\n"));
    assert_eq!(metrics.lines().count(), 3);
    let info = fs::read_to_string(out.join("run_info.txt")).unwrap();
    assert!(info.contains("mode = sequential"));

    let dumped = dqs()
        .args(["dump-archive", "--input"])
        .arg(out.join("archive.json"))
        .output()
        .unwrap();
    assert!(dumped.status.success());
    assert_eq!(
        String::from_utf8(dumped.stdout).unwrap(),
        fs::read_to_string(out.join("archive.csv")).unwrap()
    );
}

#[test]
fn seed_and_out_dir_are_required() {
    let out = dqs()
        .args(["run", "--out_dir", "/tmp/never"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = dqs().args(["baseline", "--seed", "1"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn invalid_config_names_key_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad");
    let result = dqs()
        .args(["run", "--seed", "0", "--population", "63", "--out_dir"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(!result.status.success());
    let err = String::from_utf8(result.stderr).unwrap();
    assert!(
        err.contains("population") && err.contains("divisible"),
        "{err}"
    );
    assert!(!out.exists());
}

#[test]
fn flags_override_file_and_unknown_keys_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "lambda = 0.5\npopulation = 8\nm = 2\nk = 2\n").unwrap();
    let out = dir.path().join("o");
    let status = dqs()
        .args(["run", "--seed", "1", "--lambda", "0", "--config"])
        .arg(&cfg)
        .arg("--out_dir")
        .arg(&out)
        .args(&TINY[6..])
        .status()
        .unwrap();
    assert!(status.success());
    let echo = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echo.contains("lambda = 0.0"), "{echo}");
    assert!(echo.contains("population = 8"), "{echo}");

    fs::write(&cfg, "lamda = 0.5\n").unwrap();
    let result = dqs()
        .args(["run", "--seed", "1", "--config"])
        .arg(&cfg)
        .arg("--out_dir")
        .arg(dir.path().join("p"))
        .output()
        .unwrap();
    assert!(!result.status.success());
    assert!(String::from_utf8(result.stderr).unwrap().contains("lamda"));
}

#[test]
fn baseline_and_centroids_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfile = dir.path().join("c.csv");
    let status = dqs()
        .args(["centroids", "--n_cells", "16", "--seed", "2", "--output"])
        .arg(&cfile)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(fs::read_to_string(&cfile).unwrap().lines().count(), 17);

    let out = dir.path().join("b");
    let status = dqs()
        .args([
            "baseline",
            "--seed",
            "0",
            "--env",
            "planar_arm",
            "--centroids_file",
        ])
        .arg(&cfile)
        .arg("--out_dir")
        .arg(&out)
        .args(TINY)
        .status()
        .unwrap();
    assert!(status.success());
    let echo = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echo.contains("algorithm = \"map_elites_baseline\""));
}
