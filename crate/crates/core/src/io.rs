//! Configuration loading, CSV emission, run manifests and the command drivers.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{
    check_lemma1, check_remark6iii, check_weak_replacement, corollary24_suite, mc_time_avg_square, scan_key_result,
    ExperimentConfig, InequalityReport, KeyRow, ReplacementRow,
};
use crate::kmc::two_point_function;
use crate::resolvent::{kv_divergence_scan, quadratic_form_sym_resolvent};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";

/// Reads and validates an experiment configuration.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Fixed 17-significant-digit float formatting for every CSV cell.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header plus rows of already formatted cells.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

macro_rules! row {
    ($($e:expr),* $(,)?) => { vec![$(Cell::cell(&$e)),*] };
}

trait Cell {
    fn cell(&self) -> String;
}

impl Cell for f64 {
    fn cell(&self) -> String {
        fmt_f64(*self)
    }
}

macro_rules! int_cell {
    ($($t:ty),*) => {$(impl Cell for $t { fn cell(&self) -> String { self.to_string() } })*};
}
int_cell!(usize, u64, u32, u8, i64, bool);

impl Cell for String {
    fn cell(&self) -> String {
        self.clone()
    }
}

impl Cell for &str {
    fn cell(&self) -> String {
        (*self).to_string()
    }
}

/// Verification suites known to `verify`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Lemma1,
    Remark6iii,
    Corollary24,
    Keyresult,
    Replacement,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Lemma1,
        Suite::Remark6iii,
        Suite::Corollary24,
        Suite::Keyresult,
        Suite::Replacement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lemma1 => "lemma1",
            Suite::Remark6iii => "remark6iii",
            Suite::Corollary24 => "corollary24",
            Suite::Keyresult => "keyresult",
            Suite::Replacement => "replacement",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|x| x.name()).collect();
            Error::Config(format!("unknown suite `{s}`; available: {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", content = "suite", rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Resolvent,
    Verify(Suite),
}

/// SHA-256 of one emitted file, path relative to the output directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: Command,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub replicas: usize,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
    pub outputs: Vec<OutputDigest>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Pass flag plus the manifest of one finished command.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub pass: bool,
    pub manifest: RunManifest,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

struct Emitted {
    pass: bool,
    files: Vec<(String, Vec<u8>)>,
}

impl Emitted {
    fn new(pass: bool) -> Self {
        Self {
            pass,
            files: Vec::new(),
        }
    }

    fn csv(&mut self, name: &str, t: &Table) -> Result<()> {
        self.files.push((name.to_string(), t.to_csv()?));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
        Ok(())
    }
}

/// Runs `cmd`, writes its files and `manifest.json` into `out`.
pub fn run_command(cmd: Command, cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Utc::now();
    let emitted = match cmd {
        Command::Simulate => cmd_simulate(cfg, workers)?,
        Command::Resolvent => cmd_resolvent(cfg)?,
        Command::Verify(suite) => cmd_verify(suite, cfg, workers)?,
    };
    fs::create_dir_all(out)?;
    let mut outputs = Vec::new();
    for (name, bytes) in &emitted.files {
        fs::write(out.join(name), bytes)?;
        outputs.push(OutputDigest {
            file: name.clone(),
            sha256: sha256_hex(bytes),
        });
    }
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        command: cmd,
        config: cfg.clone(),
        seed: cfg.seed,
        replicas: cfg.replicas,
        started,
        finished: Utc::now(),
        outputs,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(out.join(MANIFEST_FILE), bytes)?;
    Ok(RunOutcome {
        pass: emitted.pass,
        manifest,
    })
}

/// Outcome of re-running a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerunReport {
    pub identical: bool,
    pub mismatched: Vec<String>,
    pub out_dir: PathBuf,
}

/// Re-executes the command recorded in `manifest` into `out` and compares digests.
pub fn rerun(manifest: &RunManifest, out: &Path, workers: usize) -> Result<RerunReport> {
    let fresh = run_command(manifest.command, &manifest.config, out, workers)?;
    let mismatched: Vec<String> = manifest
        .outputs
        .iter()
        .filter(|o| !fresh.manifest.outputs.contains(o))
        .map(|o| o.file.clone())
        .chain(
            fresh
                .manifest
                .outputs
                .iter()
                .filter(|o| !manifest.outputs.iter().any(|m| m.file == o.file))
                .map(|o| o.file.clone()),
        )
        .collect();
    Ok(RerunReport {
        identical: mismatched.is_empty(),
        mismatched,
        out_dir: out.to_path_buf(),
    })
}

fn cmd_simulate(cfg: &ExperimentConfig, workers: usize) -> Result<Emitted> {
    let params = cfg.params()?;
    let m = cfg.ring_size();
    let mut two = Table::new(&["t", "x", "mean", "se", "replicas"]);
    let mut k = 0u64;
    for &t in &cfg.scan.times {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Config(format!(
                "scan.times entries must be finite and >= 0, got {t}"
            )));
        }
        for &x in &cfg.scan.distances {
            let e = two_point_function(m, &params, x, t, cfg.replicas, cfg.seed.wrapping_add(k), workers)?;
            k += 1;
            two.push(row![t, x, e.mean, e.se, e.n]);
        }
    }
    let v = cfg.observable()?;
    let mc = mc_time_avg_square(&v, cfg, workers)?;
    let e = mc.estimate(0);
    let mut tas = Table::new(&[
        "observable",
        "M",
        "T",
        "lambda",
        "mean",
        "se",
        "replicas",
        "frozen",
        "events",
    ]);
    tas.push(row![
        v.meta.label.clone(),
        m,
        cfg.horizon,
        cfg.profile.lambda(),
        e.mean,
        e.se,
        e.n,
        mc.frozen,
        mc.events
    ]);
    let mut raw = Table::new(&["replica", "integral"]);
    for (r, x) in mc.samples[0].iter().enumerate() {
        raw.push(row![r, *x]);
    }
    let mut em = Emitted::new(true);
    em.csv("two_point.csv", &two)?;
    em.csv("time_avg_square.csv", &tas)?;
    em.csv("samples.csv", &raw)?;
    Ok(em)
}

fn cmd_resolvent(cfg: &ExperimentConfig) -> Result<Emitted> {
    let v = cfg.observable()?;
    let mut t = Table::new(&[
        "alpha",
        "M",
        "value",
        "degree0",
        "degree2",
        "iterations",
        "residual",
        "condition_bound",
    ]);
    for &alpha in &cfg.scan.alphas {
        let r = quadratic_form_sym_resolvent(&v, alpha)?;
        t.push(row![
            r.alpha,
            r.m,
            r.value,
            r.degree0,
            r.degree2,
            r.iterations,
            r.residual,
            r.condition_bound
        ]);
    }
    let mut em = Emitted::new(true);
    em.csv("resolvent.csv", &t)?;
    if !cfg.scan.kv_ms.is_empty() {
        let rows = kv_divergence_scan(
            |m| {
                let mut c = cfg.clone();
                c.m = Some(m);
                c.observable()
            },
            &cfg.scan.kv_ms,
        )?;
        let mut kv = Table::new(&["alpha", "M", "value", "iterations", "residual"]);
        for r in rows {
            kv.push(row![r.alpha, r.m, r.value, r.iterations, r.residual]);
        }
        em.csv("kv_scan.csv", &kv)?;
    }
    Ok(em)
}

#[derive(Serialize)]
struct Summary<'a, T: Serialize> {
    suite: &'a str,
    pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    trends: Option<Vec<Trend>>,
    rows: &'a [T],
}

/// A monotonicity statement checked on a column of results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub description: String,
    pub holds: bool,
}

fn inequality_table(reports: &[InequalityReport]) -> Table {
    let mut t = Table::new(&["label", "lhs", "lhs_se", "rhs", "slack", "pass", "replicas", "frozen"]);
    for r in reports {
        t.push(row![
            r.label.clone(),
            r.lhs,
            r.lhs_se,
            r.rhs,
            r.slack,
            r.pass,
            r.replicas,
            r.frozen
        ]);
    }
    t
}

fn samples_table(reports: &[InequalityReport]) -> Table {
    let mut t = Table::new(&["report", "replica", "integral"]);
    for (k, r) in reports.iter().enumerate() {
        for (j, x) in r.samples.iter().enumerate() {
            t.push(row![k, j, *x]);
        }
    }
    t
}

/// Trend checks on resolvent scan rows: values fall as `N` grows for
/// `i ∈ {1, 3}` and as `ε` shrinks for `i = 2`.
pub fn key_trends(rows: &[KeyRow]) -> Vec<Trend> {
    let mut out = Vec::new();
    let mut keys: Vec<(u8, u64)> = Vec::new();
    for r in rows {
        let k = if r.i == 2 {
            (r.i, u64::from(r.n))
        } else {
            (r.i, r.eps.to_bits())
        };
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (i, key) in keys {
        let mut sel: Vec<&KeyRow> = rows
            .iter()
            .filter(|r| {
                r.i == i
                    && if i == 2 {
                        u64::from(r.n) == key
                    } else {
                        r.eps.to_bits() == key
                    }
            })
            .collect();
        if sel.len() < 2 {
            continue;
        }
        let description = if i == 2 {
            sel.sort_by(|a, b| b.eps.total_cmp(&a.eps));
            format!("i=2, N={key}: decreasing as eps decreases")
        } else {
            sel.sort_by_key(|r| r.n);
            format!("i={i}, eps={}: decreasing in N", f64::from_bits(key))
        };
        let holds = sel.windows(2).all(|w| w[1].value < w[0].value);
        out.push(Trend { description, holds });
    }
    out
}

/// Trend checks on replacement rows: the statistic falls significantly as `ε`
/// shrinks at each `N`.
pub fn replacement_trends(rows: &[ReplacementRow]) -> Vec<Trend> {
    let mut ns: Vec<u32> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut out = Vec::new();
    for n in ns {
        let mut sel: Vec<&ReplacementRow> = rows.iter().filter(|r| r.n == n).collect();
        if sel.len() < 2 {
            continue;
        }
        sel.sort_by(|a, b| b.eps.total_cmp(&a.eps));
        let holds = sel.windows(2).all(|w| {
            crate::harness::significantly_greater(w[0].statistic, w[0].statistic_se, w[1].statistic, w[1].statistic_se)
        });
        out.push(Trend {
            description: format!("N={n}: statistic decreases beyond 2 combined s.e. as eps decreases"),
            holds,
        });
    }
    out
}

fn cmd_verify(suite: Suite, cfg: &ExperimentConfig, workers: usize) -> Result<Emitted> {
    let name = suite.name();
    match suite {
        Suite::Lemma1 | Suite::Remark6iii => {
            let rep = if suite == Suite::Lemma1 {
                check_lemma1(cfg, cfg.scan.lhs, workers)?
            } else {
                check_remark6iii(cfg, workers)?
            };
            let reports = [rep];
            let pass = reports.iter().all(|r| r.pass);
            let mut em = Emitted::new(pass);
            em.csv(&format!("{name}.csv"), &inequality_table(&reports))?;
            em.csv(&format!("{name}_samples.csv"), &samples_table(&reports))?;
            em.json(
                SUMMARY_FILE,
                &Summary {
                    suite: name,
                    pass,
                    trends: None,
                    rows: &reports,
                },
            )?;
            Ok(em)
        }
        Suite::Corollary24 => {
            let s = &cfg.scan;
            let rows = corollary24_suite(cfg.ring_size(), &s.gammas, &s.epss, &s.alphas, s.vectors, cfg.seed)?;
            let pass = rows.iter().all(|r| r.violations == 0);
            let mut t = Table::new(&[
                "M",
                "eps",
                "gamma_tilde",
                "alpha",
                "vectors",
                "violations",
                "max_excess",
            ]);
            for r in &rows {
                t.push(row![
                    r.m,
                    r.eps,
                    r.gamma_tilde,
                    r.alpha,
                    r.vectors,
                    r.violations,
                    r.max_excess
                ]);
            }
            let mut em = Emitted::new(pass);
            em.csv("corollary24.csv", &t)?;
            em.json(
                SUMMARY_FILE,
                &Summary {
                    suite: name,
                    pass,
                    trends: None,
                    rows: &rows,
                },
            )?;
            Ok(em)
        }
        Suite::Keyresult => {
            let g = cfg.test_function()?;
            let grid: Vec<(f64, u32)> = cfg.scan.grid.iter().map(|p| (p.eps, p.n)).collect();
            let mut rows = Vec::new();
            for &i in &cfg.scan.fluctuations {
                rows.extend(scan_key_result(&g, &grid, i, cfg.horizon, cfg.l_macro, workers)?);
            }
            let trends = key_trends(&rows);
            let pass = trends.iter().all(|t| t.holds);
            let mut t = Table::new(&["i", "eps", "N", "M", "value", "iterations", "residual"]);
            for r in &rows {
                t.push(row![r.i, r.eps, r.n, r.m, r.value, r.iterations, r.residual]);
            }
            let mut em = Emitted::new(pass);
            em.csv("keyresult.csv", &t)?;
            em.json(
                SUMMARY_FILE,
                &Summary {
                    suite: name,
                    pass,
                    trends: Some(trends),
                    rows: &rows,
                },
            )?;
            Ok(em)
        }
        Suite::Replacement => {
            let g = cfg.test_function()?;
            let grid: Vec<(u32, f64)> = cfg.scan.grid.iter().map(|p| (p.n, p.eps)).collect();
            let rows = check_weak_replacement(&g, &grid, cfg, workers)?;
            let trends = replacement_trends(&rows);
            let pass = rows.iter().all(|r| r.cauchy_schwarz_holds() && r.bounds_hold());
            let mut t = Table::new(&[
                "N",
                "eps",
                "M",
                "replicas",
                "statistic",
                "statistic_se",
                "part1",
                "part1_se",
                "part2",
                "part2_se",
                "part3",
                "part3_se",
                "part4",
                "part4_se",
                "cs_bound",
                "cs_bound_se",
                "bound1",
                "bound2",
                "bound3",
                "bound4",
                "frozen",
            ]);
            for r in &rows {
                t.push(row![
                    r.n,
                    r.eps,
                    r.m,
                    r.replicas,
                    r.statistic,
                    r.statistic_se,
                    r.parts[0],
                    r.parts_se[0],
                    r.parts[1],
                    r.parts_se[1],
                    r.parts[2],
                    r.parts_se[2],
                    r.parts[3],
                    r.parts_se[3],
                    r.cs_bound,
                    r.cs_bound_se,
                    r.resolvent_bounds[0],
                    r.resolvent_bounds[1],
                    r.resolvent_bounds[2],
                    r.v4_bound,
                    r.frozen
                ]);
            }
            let mut em = Emitted::new(pass);
            em.csv("replacement.csv", &t)?;
            em.json(
                SUMMARY_FILE,
                &Summary {
                    suite: name,
                    pass,
                    trends: Some(trends),
                    rows: &rows,
                },
            )?;
            Ok(em)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{"eps": 0.5, "gamma_tilde": 1.0, "T": 1.0, "M": 8, "replicas": 200, "seed": 3,
        "scan": {"times": [0.0, 0.5], "distances": [0, 1]}}"#;

    #[test]
    fn float_format_is_fixed() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn missing_field_names_it() {
        let err = parse_config(r#"{"gamma_tilde": 1.0, "T": 1.0, "replicas": 10}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("`eps`"), "{err}");
    }

    #[test]
    fn unknown_field_rejected() {
        let err =
            parse_config(r#"{"eps": 0.5, "gamma_tilde": 1.0, "T": 1.0, "replicas": 10, "bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn range_violation_rejected() {
        let err = parse_config(r#"{"eps": 1.0, "gamma_tilde": 1.5, "T": 1.0, "replicas": 10}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = parse_config(r#"{"eps": 0.5, "gamma_tilde": 1.0, "T": 1.0, "replicas": 0}"#).unwrap_err();
        assert!(err.to_string().contains("replicas"), "{err}");
    }

    #[test]
    fn unknown_suite_lists_names() {
        let err = "lemma2".parse::<Suite>().unwrap_err().to_string();
        for s in Suite::ALL {
            assert!(err.contains(s.name()));
        }
        assert_eq!("keyresult".parse::<Suite>().unwrap(), Suite::Keyresult);
    }

    #[test]
    fn simulate_is_deterministic_and_worker_independent() {
        let cfg = parse_config(SMALL).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_command(Command::Simulate, &cfg, a.path(), 1).unwrap();
        let rb = run_command(Command::Simulate, &cfg, b.path(), 3).unwrap();
        assert!(ra.pass);
        assert_eq!(ra.manifest.outputs, rb.manifest.outputs);
        for o in &ra.manifest.outputs {
            let bytes = fs::read(a.path().join(&o.file)).unwrap();
            assert_eq!(sha256_hex(&bytes), o.sha256);
        }
    }

    #[test]
    fn constant_observable_single_row() {
        let cfg = parse_config(
            r#"{"eps": 0.5, "gamma_tilde": 0.0, "T": 1.0, "M": 16, "replicas": 1,
                "observable": {"kind": "constant", "value": 3.0}, "scan": {"alphas": [2.0]}}"#,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        run_command(Command::Resolvent, &cfg, dir.path(), 1).unwrap();
        let text = fs::read_to_string(dir.path().join("resolvent.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(
            lines[1].starts_with("2.0000000000000000e0,16,4.5000000000000000e0,"),
            "{}",
            lines[1]
        );
    }

    #[test]
    fn rerun_reproduces_digests() {
        let cfg = parse_config(SMALL).unwrap();
        let a = tempfile::tempdir().unwrap();
        let out = run_command(Command::Verify(Suite::Lemma1), &cfg, a.path(), 1).unwrap();
        assert!(out.pass);
        let m = RunManifest::load(&a.path().join(MANIFEST_FILE)).unwrap();
        let b = tempfile::tempdir().unwrap();
        let rep = rerun(&m, b.path(), 2).unwrap();
        assert!(rep.identical, "{:?}", rep.mismatched);
    }
}
