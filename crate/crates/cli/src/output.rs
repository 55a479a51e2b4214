//! Result rows, run manifest, and manifest comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig};

/// One `results.csv` row; `replicate = None` marks an aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub replicate: Option<usize>,
    pub n: usize,
    pub statistic: String,
    pub value: f64,
}

impl Row {
    pub fn new(replicate: usize, n: usize, statistic: &str, value: f64) -> Self {
        Self { replicate: Some(replicate), n, statistic: statistic.to_string(), value }
    }
}

/// Summary statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    /// Resolution the statistic refers to (the `n` column of its CSV row).
    pub n: usize,
    pub n_rep: usize,
}

/// Pass/fail flag; advisory flags do not affect the exit status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub pass: bool,
    pub advisory: bool,
    pub detail: String,
}

/// Replicate that produced an error or a non-finite value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplicate {
    pub replicate: usize,
    pub message: String,
}

/// Everything an experiment produces.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub rows: Vec<Row>,
    pub summary: BTreeMap<String, Stat>,
    pub assertions: BTreeMap<String, Assertion>,
    pub failed_replicates: Vec<FailedReplicate>,
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl ExperimentOutput {
    pub fn stat(&mut self, name: &str, value: f64, stderr: Option<f64>, n: usize, n_rep: usize) {
        self.summary.insert(name.to_string(), Stat { value, stderr, n, n_rep });
    }

    pub fn assert(&mut self, name: &str, pass: bool, detail: String) {
        self.assertions.insert(name.to_string(), Assertion { pass, advisory: false, detail });
    }

    pub fn advise(&mut self, name: &str, pass: bool, detail: String) {
        self.assertions.insert(name.to_string(), Assertion { pass, advisory: true, detail });
    }

    pub fn note(&mut self, name: &str, value: impl Serialize) {
        self.notes.insert(name.to_string(), serde_json::to_value(value).expect("note serializes"));
    }

    /// All non-advisory assertions pass and no replicate failed.
    pub fn all_pass(&self) -> bool {
        self.failed_replicates.is_empty() && self.assertions.values().all(|a| a.pass || a.advisory)
    }
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: Experiment,
    pub version: String,
    pub config: ExperimentConfig,
    pub threads: usize,
    pub wall_time_seconds: f64,
    pub summary: BTreeMap<String, Stat>,
    pub assertions: BTreeMap<String, Assertion>,
    pub failed_replicates: Vec<FailedReplicate>,
    pub notes: BTreeMap<String, serde_json::Value>,
    pub all_pass: bool,
}

/// `results.csv` text: replicate rows sorted by `(replicate, n)`, then aggregates.
pub fn results_csv(experiment: Experiment, out: &ExperimentOutput) -> String {
    let mut rows: Vec<&Row> = out.rows.iter().collect();
    rows.sort_by_key(|r| (r.replicate.is_none(), r.replicate, r.n));
    let mut s = String::from("experiment,replicate,n,statistic,value\n");
    let name = experiment.name();
    for r in rows {
        let rep = r.replicate.map(|v| v.to_string()).unwrap_or_else(|| "all".into());
        writeln!(s, "{name},{rep},{},{},{}", r.n, r.statistic, r.value).expect("string write");
    }
    for (k, st) in &out.summary {
        writeln!(s, "{name},all,{},{k},{}", st.n, st.value).expect("string write");
        if let Some(se) = st.stderr {
            writeln!(s, "{name},all,{},{k}_stderr,{se}", st.n).expect("string write");
        }
    }
    s
}

/// Writes `results.csv`, `summary.json` and `manifest.json` into `dir`.
pub fn write_outputs(dir: &Path, manifest: &RunManifest, out: &ExperimentOutput) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.csv"), results_csv(manifest.experiment, out))?;
    let summary = serde_json::json!({ "experiment": manifest.experiment, "statistics": out.summary });
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

/// Reads a manifest from a file or from `manifest.json` inside a directory.
pub fn read_manifest(path: &Path) -> Result<RunManifest, String> {
    let file: PathBuf = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", file.display()))
}

/// Difference of one statistic in units of combined standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatDiff {
    pub statistic: String,
    pub a: f64,
    pub b: f64,
    pub combined_stderr: f64,
    /// `(a - b)/combined_stderr`; 0 for equal values, infinite when unequal without error bars.
    pub z: f64,
}

/// Per-statistic comparison of two manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub experiment: Experiment,
    pub diffs: Vec<StatDiff>,
    /// Statistics present in only one manifest.
    pub unmatched: Vec<String>,
}

impl CompareReport {
    pub fn max_abs_z(&self) -> f64 {
        self.diffs.iter().map(|d| d.z.abs()).fold(0.0, f64::max)
    }
}

/// Compares manifests of the same experiment; mismatched experiments are a usage error.
pub fn compare(a: &RunManifest, b: &RunManifest) -> Result<CompareReport, String> {
    if a.experiment != b.experiment {
        return Err(format!(
            "cannot compare a {} manifest with a {} manifest",
            a.experiment.name(),
            b.experiment.name()
        ));
    }
    let mut diffs = Vec::new();
    let mut unmatched = Vec::new();
    for (k, sa) in &a.summary {
        let Some(sb) = b.summary.get(k) else {
            unmatched.push(k.clone());
            continue;
        };
        let se = (sa.stderr.unwrap_or(0.0).powi(2) + sb.stderr.unwrap_or(0.0).powi(2)).sqrt();
        let d = sa.value - sb.value;
        let z = if d == 0.0 || (sa.value.is_nan() && sb.value.is_nan()) {
            0.0
        } else if se > 0.0 {
            d / se
        } else {
            f64::INFINITY.copysign(d)
        };
        diffs.push(StatDiff { statistic: k.clone(), a: sa.value, b: sb.value, combined_stderr: se, z });
    }
    unmatched.extend(b.summary.keys().filter(|k| !a.summary.contains_key(*k)).cloned());
    Ok(CompareReport { experiment: a.experiment, diffs, unmatched })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(e: Experiment, v: f64) -> RunManifest {
        let mut out = ExperimentOutput::default();
        out.stat("m", v, Some(0.1), 8, 10);
        out.stat("exact", 1.0, None, 8, 1);
        RunManifest {
            experiment: e,
            version: "0".into(),
            config: ExperimentConfig::new(e),
            threads: 1,
            wall_time_seconds: 0.0,
            summary: out.summary,
            assertions: BTreeMap::new(),
            failed_replicates: vec![],
            notes: BTreeMap::new(),
            all_pass: true,
        }
    }

    #[test]
    fn compare_self_and_mismatch() {
        let a = manifest(Experiment::EstimateK, 1.0);
        let r = compare(&a, &a).unwrap();
        assert!(r.diffs.iter().all(|d| d.z == 0.0));
        let b = manifest(Experiment::EstimateK, 1.2);
        let r = compare(&a, &b).unwrap();
        let m = r.diffs.iter().find(|d| d.statistic == "m").unwrap();
        assert!((m.z + 0.2 / 0.02f64.sqrt()).abs() < 1e-12);
        assert!(compare(&a, &manifest(Experiment::XVariation, 1.0)).is_err());
    }

    #[test]
    fn csv_sorted_with_aggregates_last() {
        let mut out = ExperimentOutput::default();
        out.rows.push(Row::new(1, 4, "s", 1.0));
        out.rows.push(Row::new(0, 8, "s", 2.0));
        out.rows.push(Row::new(0, 4, "s", 3.0));
        out.stat("mean_s", 2.0, Some(0.5), 4, 2);
        let csv = results_csv(Experiment::XVariation, &out);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "experiment,replicate,n,statistic,value");
        assert_eq!(lines[1], "x-variation,0,4,s,3");
        assert_eq!(lines[2], "x-variation,0,8,s,2");
        assert_eq!(lines[3], "x-variation,1,4,s,1");
        assert_eq!(lines[4], "x-variation,all,4,mean_s,2");
        assert_eq!(lines[5], "x-variation,all,4,mean_s_stderr,0.5");
    }
}
