use std::fs;
use std::process::{Command, Output};

fn scss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scss")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = scss(&["sweep-mse", "--frobnicate", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn bad_values_are_usage_errors() {
    for args in [
        vec!["sweep-mse", "--trials", "many"],
        vec!["sweep-mse", "--sir", "0:-6:6"],
        vec!["sweep-mse", "--methods", "LMMSE,ORACLE"],
        vec!["sweep-ber", "--block-len", "100"],
        vec!["sync-eval", "--rule", "psi"],
        vec!["gen", "--n", "64"],
        vec!["sweep-mse", "--workers", "0"],
    ] {
        let o = scss(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("error:"));
    }
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.scss");
    let o = scss(&["sync-eval", "--dataset", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("mse.csv");
    fs::write(
        &cfg,
        format!(
            "# small run\nsir = -6,0\nsnr = 20\nn = 32\ntrials = 4\nseed = 11\nmethods = LMMSE,MMSE\nout = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let o = scss(&["sweep-mse", "--config", cfg.to_str().unwrap(), "--sir", "-3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let csv = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "sir_db,snr_db,n,method,metric,value,stderr,trials");
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        assert!(r.starts_with("-3,20,32,"), "{r}");
        assert!(r.ends_with(",4"));
    }
    assert!(csv.lines().next().unwrap().starts_with("# scss sweep-mse"));
    assert!(csv.contains("seed=11"));

    fs::write(&cfg, "colour = blue\n").unwrap();
    let o = scss(&["sweep-mse", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn repeated_invocations_are_identical() {
    let args = ["sweep-mse", "--sir", "-12:0:6", "--n", "40", "--trials", "6", "--seed", "5"];
    let a = scss(&args);
    let b = scss(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let c = scss(&["sweep-mse", "--sir", "-12:0:6", "--n", "40", "--trials", "6", "--seed", "6"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn gen_then_sync_eval() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.scss");
    let o = scss(&[
        "gen", "--n", "320", "--trials", "10", "--sir", "-3", "--snr", "inf", "--seed", "2", "--out",
        ds.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = scss(&["sync-eval", "--dataset", ds.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let acc = out.lines().find(|l| l.contains(",accuracy,")).unwrap();
    assert!(acc.contains(",MAP,"));
}
