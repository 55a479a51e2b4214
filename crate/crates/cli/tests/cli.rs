use std::path::Path;
use std::process::Command;

use silt_varlab::config::{Experiment, ExperimentConfig};
use silt_varlab::output::{compare, read_manifest, results_csv};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_silt-varlab"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn invalid_config_exits_nonzero_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "experiment = x-variation\nn_rep = 4\nn_sequence = 64,100\n");
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn run_writes_traceable_outputs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let cfg = write(
        dir.path(),
        "ltm.cfg",
        "experiment = local-time-moments\nn_rep = 300\nn_steps = 256\nidentity_rep = 20\n",
    );
    for (out, threads) in [(&out_a, "1"), (&out_b, "2")] {
        let o = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(out).args(["--threads", threads]).output().unwrap();
        assert!(o.status.code() == Some(0) || o.status.code() == Some(1), "{o:?}");
    }
    let csv_a = std::fs::read(out_a.join("results.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(out_b.join("results.csv")).unwrap());
    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.starts_with("experiment,replicate,n,statistic,value\n"));
    assert_eq!(text.lines().filter(|l| l.contains(",L0,")).count(), 300);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("summary.json")).unwrap()).unwrap();
    let stats = summary["statistics"].as_object().unwrap();
    assert!(stats.contains_key("mean_L0") && stats.contains_key("mean_sq_integral"));
    for (k, v) in stats {
        let line = format!(",all,{},{k},{}", v["n"], v["value"].as_f64().unwrap());
        assert!(text.contains(&line), "{k} missing from results.csv");
    }

    let m = read_manifest(&out_a).unwrap();
    assert_eq!(m.experiment, Experiment::LocalTimeMoments);
    assert_eq!(m.config.n_rep, Some(300));
    assert!(m.assertions.contains_key("mean_L0_within_2pct"));
    let rerun = silt_varlab::execute(&ExperimentConfig { out_dir: String::new(), ..m.config.clone() }).unwrap();
    assert_eq!(rerun.0.summary, m.summary);
}

#[test]
fn compare_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let base = "experiment = estimate-k\nk_rep = 300\nn_rep = 300\nrw_n_steps = 256\nx_max = 10\n";
    let cfg = write(dir.path(), "k.cfg", base);
    for (seed, name) in [("1", "s1"), ("2", "s2")] {
        bin().args(["run", "--config"]).arg(&cfg).args(["--seed", seed, "--out"]).arg(dir.path().join(name)).output().unwrap();
    }
    let a = read_manifest(&dir.path().join("s1")).unwrap();
    let b = read_manifest(&dir.path().join("s2")).unwrap();
    assert!(compare(&a, &a).unwrap().diffs.iter().all(|d| d.z == 0.0));
    let r = compare(&a, &b).unwrap();
    assert!(r.max_abs_z() <= 3.0, "{:?}", r.diffs);
    assert_eq!(a.summary.len(), 11);

    let o = bin().arg("compare").arg(dir.path().join("s1")).arg(dir.path().join("s2")).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("k_rw_inner_power"));

    let lemmas = dir.path().join("lemmas");
    let o = bin().args(["verify-lemmas", "--quick", "--out"]).arg(&lemmas).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let o = bin().arg("compare").arg(dir.path().join("s1")).arg(&lemmas).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("usage error"));
}

#[test]
fn aggregate_rows_follow_replicate_rows() {
    let cfg = ExperimentConfig::parse("experiment = x-variation\nn_rep = 6\nn_sequence = 16,32\nk_reference = 0.3\n").unwrap();
    let (m, out) = silt_varlab::execute(&cfg).unwrap();
    let csv = results_csv(m.experiment, &out);
    let reps: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    let first_all = reps.iter().position(|r| *r == "all").unwrap();
    assert!(reps[first_all..].iter().all(|r| *r == "all"));
    let idx: Vec<usize> = reps[..first_all].iter().map(|r| r.parse().unwrap()).collect();
    assert!(idx.windows(2).all(|w| w[0] <= w[1]));
}
