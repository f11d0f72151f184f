// SPDX-License-Identifier: Apache-2.0

//! Drivers behind the `upftel` binary: run, size, sweep and replay.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use upf_telemetry::analysis::{pareto_flags, read_external_scores, DetectorKind};
use upf_telemetry::baselines::Mode;
use upf_telemetry::error::{PipelineError, ScenarioError};
use upf_telemetry::pipeline::{evaluate_external, run, MetricsRow, RunOptions, RunOutput};
use upf_telemetry::report;
use upf_telemetry::sim::{presets, ScenarioSpec};
use upf_telemetry::sizing::{
    collision_floor, drift_width_scaling, required_depth, required_width, simultaneous_success,
    sparse_threshold, Detectability, FlowBaseline,
};

/// Environment variable holding the sweep worker count.
pub const WORKERS_ENV: &str = "UPFTEL_WORKERS";
pub const PRESET_PREFIX: &str = "preset:";
pub const DEFAULT_PRESET_SEED: u64 = 1;

/// Files every run writes, in addition to `manifest.toml`.
pub const RUN_FILES: [&str; 8] = [
    "scenario.toml",
    "records.txt",
    "features.csv",
    "outcomes.csv",
    "costs.csv",
    "labels.csv",
    "metrics.csv",
    "metrics.txt",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Scenario(s) => s.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Sweep axes; an empty axis keeps the scenario's own value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub width: Vec<usize>,
    pub depth: Vec<usize>,
    pub rho: Vec<f64>,
    pub delta_ns: Vec<u64>,
}

impl SweepGrid {
    /// Parses `w=256,512;d=2,3;rho=0.01;delta=20000`.
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let mut g = SweepGrid::default();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("grid axis {part:?} is not name=values")))?;
            let vals: Vec<&str> = v
                .split(',')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .collect();
            let bad = |x: &str| CliError::Usage(format!("grid axis {k}: bad value {x:?}"));
            match k.trim() {
                "w" | "width" => {
                    g.width = vals
                        .iter()
                        .map(|x| x.parse().map_err(|_| bad(x)))
                        .collect::<Result<_, _>>()?
                }
                "d" | "depth" => {
                    g.depth = vals
                        .iter()
                        .map(|x| x.parse().map_err(|_| bad(x)))
                        .collect::<Result<_, _>>()?
                }
                "rho" => {
                    g.rho = vals
                        .iter()
                        .map(|x| x.parse().map_err(|_| bad(x)))
                        .collect::<Result<_, _>>()?
                }
                "delta" | "delta_ns" => {
                    g.delta_ns = vals
                        .iter()
                        .map(|x| x.parse().map_err(|_| bad(x)))
                        .collect::<Result<_, _>>()?
                }
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown grid axis {other:?} (w, d, rho, delta)"
                    )))
                }
            }
        }
        Ok(g)
    }

    pub fn is_empty(&self) -> bool {
        self.width.is_empty()
            && self.depth.is_empty()
            && self.rho.is_empty()
            && self.delta_ns.is_empty()
    }
}

/// Everything needed to reproduce a run byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// A scenario file path, or `preset:NAME`.
    pub scenario: String,
    pub seed: Option<u64>,
    pub modes: Vec<Mode>,
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "SweepGrid::is_empty")]
    pub grid: SweepGrid,
    #[serde(default = "yes")]
    pub records: bool,
    /// Optional `window,teid,qfi,score` file from an external scorer.
    pub scores: Option<PathBuf>,
    #[serde(default = "sketch")]
    pub scores_mode: Mode,
}

fn yes() -> bool {
    true
}

fn sketch() -> Mode {
    Mode::Sketch
}

impl RunManifest {
    pub fn new(scenario: impl Into<String>, out: impl Into<PathBuf>) -> Self {
        Self {
            scenario: scenario.into(),
            seed: None,
            modes: Mode::ALL.to_vec(),
            out: out.into(),
            grid: SweepGrid::default(),
            records: true,
            scores: None,
            scores_mode: Mode::Sketch,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        toml::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

pub fn parse_modes(s: &str) -> Result<Vec<Mode>, CliError> {
    let modes: Vec<Mode> = s
        .split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(|m| {
            Mode::parse(m)
                .ok_or_else(|| CliError::Usage(format!("unknown mode {m:?} (pm, sketch, dsmp)")))
        })
        .collect::<Result<_, _>>()?;
    if modes.is_empty() {
        return Err(CliError::Usage("no telemetry mode selected".into()));
    }
    Ok(modes)
}

/// Loads a scenario file or preset and applies the seed override.
pub fn resolve_scenario(scenario: &str, seed: Option<u64>) -> Result<ScenarioSpec, CliError> {
    let mut spec = if let Some(name) = scenario.strip_prefix(PRESET_PREFIX) {
        presets::preset(name, seed.unwrap_or(DEFAULT_PRESET_SEED)).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown preset {name:?}; available: {}",
                presets::PRESETS.join(", ")
            ))
        })?
    } else {
        let path = Path::new(scenario);
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        ScenarioSpec::from_toml_str(&text)?
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).map_err(io_at(&path))?))
}

/// Result of one run as written to disk.
#[derive(Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub output: RunOutput,
    pub metrics: Vec<MetricsRow>,
}

pub fn cmd_run(manifest: &RunManifest) -> Result<RunSummary, CliError> {
    let spec = resolve_scenario(&manifest.scenario, manifest.seed)?;
    let dir = manifest.out.clone();
    fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    fs::write(dir.join("manifest.toml"), manifest.to_toml())?;
    fs::write(dir.join("scenario.toml"), spec.to_toml_string())?;
    let opts = RunOptions {
        modes: manifest.modes.clone(),
    };
    let output = if manifest.records {
        let mut w = create(&dir, "records.txt")?;
        let out = run(&spec, &opts, Some(&mut w))?;
        w.flush()?;
        out
    } else {
        let _ = fs::remove_file(dir.join("records.txt"));
        run(&spec, &opts, None::<&mut std::io::Sink>)?
    };
    let mut metrics = output.metrics.clone();
    let mut outcomes = output.unit_outcomes.clone();
    if let Some(path) = &manifest.scores {
        let f = File::open(path).map_err(io_at(path))?;
        let scores = read_external_scores(BufReader::new(f))
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        let (rows, ext) = evaluate_external(&spec, &output, manifest.scores_mode, &scores);
        metrics.extend(rows);
        outcomes.extend(ext);
    }
    let bins = spec.telemetry.binning.bins;
    report::write_features(&mut create(&dir, "features.csv")?, &output.features, bins)?;
    report::write_outcomes(&mut create(&dir, "outcomes.csv")?, &outcomes)?;
    report::write_costs(&mut create(&dir, "costs.csv")?, &output.costs)?;
    report::write_labels(&mut create(&dir, "labels.csv")?, &output.labels)?;
    report::write_metrics_csv(&mut create(&dir, "metrics.csv")?, &metrics)?;
    report::write_metrics_txt(
        &mut create(&dir, "metrics.txt")?,
        &spec.name,
        &output,
        &metrics,
    )?;
    Ok(RunSummary {
        dir,
        output,
        metrics,
    })
}

/// Re-run a finished run directory into `out` and list files that differ.
pub fn cmd_replay(run_dir: &Path, out: &Path) -> Result<Vec<String>, CliError> {
    let mut manifest = RunManifest::load(&run_dir.join("manifest.toml"))?;
    let resolved = run_dir.join("scenario.toml");
    if resolved.exists() {
        manifest.scenario = resolved.to_string_lossy().into_owned();
    }
    manifest.out = out.to_path_buf();
    cmd_run(&manifest)?;
    let mut differ = Vec::new();
    for name in RUN_FILES {
        let (a, b) = (run_dir.join(name), out.join(name));
        match (fs::read(&a), fs::read(&b)) {
            (Ok(x), Ok(y)) if x == y => {}
            (Err(_), Err(_)) => {}
            _ => differ.push(name.to_string()),
        }
    }
    Ok(differ)
}

/// The single AUPRC a run reports for a mode: the macro row when several
/// kinds are scheduled, otherwise the one linear detector.
pub fn headline_auprc(rows: &[MetricsRow], mode: Mode) -> Option<f64> {
    let of_mode: Vec<&MetricsRow> = rows.iter().filter(|r| r.mode == mode).collect();
    if let Some(r) = of_mode
        .iter()
        .find(|r| r.detector == Some(DetectorKind::LinearMacro))
    {
        return r.auprc;
    }
    let linear: Vec<&&MetricsRow> = of_mode
        .iter()
        .filter(|r| matches!(r.detector, Some(DetectorKind::Linear(_))))
        .collect();
    match linear.as_slice() {
        [one] => one.auprc,
        _ => None,
    }
}

/// One configuration in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mode: Mode,
    pub width: Option<usize>,
    pub depth: Option<usize>,
    pub rho: Option<f64>,
    pub delta_ns: Option<u64>,
    pub auprc: Option<f64>,
    pub bytes_per_window: f64,
    pub export_mbps: f64,
    pub pareto: bool,
}

fn axis<T: Clone>(v: &[T], default: T) -> Vec<T> {
    if v.is_empty() {
        vec![default]
    } else {
        v.to_vec()
    }
}

fn worker_pool() -> Result<rayon::ThreadPool, CliError> {
    let n = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("{WORKERS_ENV}={v:?} is not a count")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

/// Sketch configurations span width x depth x rho; postcard configurations
/// span delta; counters add one row. Rows on the cost/AUPRC frontier are flagged.
pub fn cmd_sweep(manifest: &RunManifest) -> Result<Vec<SweepRow>, CliError> {
    use rayon::prelude::*;
    let base = resolve_scenario(&manifest.scenario, manifest.seed)?;
    let t = &base.telemetry;
    let g = &manifest.grid;
    let mut jobs: Vec<(Mode, ScenarioSpec, SweepRow)> = Vec::new();
    let blank = |mode| SweepRow {
        mode,
        width: None,
        depth: None,
        rho: None,
        delta_ns: None,
        auprc: None,
        bytes_per_window: 0.0,
        export_mbps: 0.0,
        pareto: false,
    };
    if manifest.modes.contains(&Mode::Sketch) {
        for &w in &axis(&g.width, t.width) {
            for &d in &axis(&g.depth, t.depth) {
                for &rho in &axis(&g.rho, t.binning.rho) {
                    let mut s = base.clone();
                    s.telemetry.width = w;
                    s.telemetry.depth = d;
                    s.telemetry.binning.rho = rho;
                    s.validate()?;
                    jobs.push((
                        Mode::Sketch,
                        s,
                        SweepRow {
                            width: Some(w),
                            depth: Some(d),
                            rho: Some(rho),
                            ..blank(Mode::Sketch)
                        },
                    ));
                }
            }
        }
    }
    if manifest.modes.contains(&Mode::Dsmp) {
        for &delta in &axis(&g.delta_ns, t.dsmp_delta_ns) {
            let mut s = base.clone();
            s.telemetry.dsmp_delta_ns = delta;
            s.validate()?;
            jobs.push((
                Mode::Dsmp,
                s,
                SweepRow {
                    delta_ns: Some(delta),
                    ..blank(Mode::Dsmp)
                },
            ));
        }
    }
    if manifest.modes.contains(&Mode::Pm) {
        jobs.push((Mode::Pm, base.clone(), blank(Mode::Pm)));
    }
    let pool = worker_pool()?;
    let results: Vec<Result<SweepRow, CliError>> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(mode, spec, mut row)| {
                let out = run(
                    &spec,
                    &RunOptions { modes: vec![mode] },
                    None::<&mut std::io::Sink>,
                )?;
                row.auprc = headline_auprc(&out.metrics, mode);
                let any = out.metrics.iter().find(|r| r.mode == mode);
                row.bytes_per_window = any.map_or(0.0, |r| r.export_bytes_per_window);
                row.export_mbps = any.map_or(0.0, |r| r.export_mbps);
                Ok(row)
            })
            .collect()
    });
    let mut rows: Vec<SweepRow> = results.into_iter().collect::<Result<_, _>>()?;
    let flags = pareto_flags(
        &rows
            .iter()
            .map(|r| (r.export_mbps, r.auprc))
            .collect::<Vec<_>>(),
    );
    for (r, f) in rows.iter_mut().zip(flags) {
        r.pareto = f;
    }
    fs::create_dir_all(&manifest.out).map_err(io_at(&manifest.out))?;
    fs::write(manifest.out.join("manifest.toml"), manifest.to_toml())?;
    let mut w = create(&manifest.out, "sweep.csv")?;
    w.write_all(sweep_csv(&rows).as_bytes())?;
    w.flush()?;
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let na = |v: Option<String>| v.unwrap_or_else(|| "NA".into());
    let mut s = String::from(
        "mode,width,depth,rho,delta_ns,auprc,export_bytes_per_window,export_mbps,pareto\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.6},{:.6},{}",
            r.mode,
            na(r.width.map(|v| v.to_string())),
            na(r.depth.map(|v| v.to_string())),
            na(r.rho.map(|v| v.to_string())),
            na(r.delta_ns.map(|v| v.to_string())),
            na(r.auprc.map(|v| format!("{v:.6}"))),
            r.bytes_per_window,
            r.export_mbps,
            u8::from(r.pareto)
        );
    }
    s
}

/// A class of anomalies sharing a spillover fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub name: String,
    pub beta: f64,
}

/// A flow with known baseline masses, for the full detectability condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub name: String,
    pub x_k: f64,
    pub x_k_t: f64,
    pub n_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeParams {
    pub n_t_max: f64,
    pub beta_max: f64,
    pub delta_t_min: f64,
    pub k_bins: usize,
    pub zeta: f64,
    /// Deployed width and depth the report compares against.
    pub width: usize,
    pub depth: usize,
    pub rho: f64,
    /// Occupancy after drift, for the width scaling line.
    pub rho_drift: f64,
    #[serde(rename = "class")]
    pub classes: Vec<ClassParams>,
    #[serde(rename = "flow")]
    pub flows: Vec<FlowParams>,
}

impl Default for SizeParams {
    fn default() -> Self {
        let classes = ["microburst", "congestion", "contention", "policy_abuse"]
            .into_iter()
            .map(|n| ClassParams {
                name: n.into(),
                beta: 0.3,
            })
            .collect();
        Self {
            n_t_max: 1e4,
            beta_max: 0.3,
            delta_t_min: 80.0,
            k_bins: 3,
            zeta: 0.05,
            width: 512,
            depth: 3,
            rho: 0.01,
            rho_drift: 0.02,
            classes,
            flows: Vec::new(),
        }
    }
}

impl SizeParams {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        toml::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }
}

/// Values the sizing report prints, kept for callers that check them.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeReport {
    pub required_width: usize,
    pub required_depth: usize,
    pub collision_floor: f64,
    pub class_thresholds: Vec<(String, Option<f64>)>,
    pub drift_width: usize,
    pub text: String,
}

pub fn cmd_size(p: &SizeParams) -> Result<SizeReport, CliError> {
    let invalid = |e: upf_telemetry::error::ConfigError| CliError::Invalid(e.to_string());
    if p.width < 2 || p.depth < 1 {
        return Err(CliError::Invalid(
            "width must be at least 2 and depth at least 1".into(),
        ));
    }
    if !(p.rho > 0.0 && p.rho_drift > 0.0) {
        return Err(CliError::Invalid(
            "rho and rho_drift must be positive".into(),
        ));
    }
    if let Some(c) = p
        .classes
        .iter()
        .find(|c| !(0.0..1.0).contains(&c.beta) || c.beta > p.beta_max)
    {
        return Err(CliError::Invalid(format!(
            "class {}: beta {} must lie in [0, beta_max = {}]",
            c.name, c.beta, p.beta_max
        )));
    }
    let w_req = required_width(p.n_t_max, p.beta_max, p.delta_t_min).map_err(invalid)?;
    let d_req = required_depth(p.k_bins, p.zeta).map_err(invalid)?;
    let eps = std::f64::consts::E / p.width as f64;
    let floor = collision_floor(p.width, p.n_t_max);
    let class_thresholds: Vec<(String, Option<f64>)> = p
        .classes
        .iter()
        .map(|c| {
            (
                c.name.clone(),
                sparse_threshold(eps, p.n_t_max, c.beta).threshold(),
            )
        })
        .collect();
    let drift_width = drift_width_scaling(p.width, p.rho, p.rho_drift);

    let mut t = String::new();
    let _ = writeln!(t, "sizing report");
    let _ = writeln!(
        t,
        "  inputs: N_T max {} pkts, beta max {}, smallest lift {} pkts, K = {} diagnostic bins, zeta = {}",
        p.n_t_max, p.beta_max, p.delta_t_min, p.k_bins, p.zeta
    );
    let margin = p.width as i64 - w_req as i64;
    let _ = writeln!(
        t,
        "  required width:  {w_req} (deployed w = {}: margin {margin} columns, {:+.1}%)",
        p.width,
        100.0 * margin as f64 / w_req as f64
    );
    let _ = writeln!(
        t,
        "  required depth:  {d_req} (K + 1 = {} bounds within zeta = {})",
        p.k_bins + 1,
        p.zeta
    );
    let _ = writeln!(t, "  collision floor: {floor:.2} pkts at w = {}", p.width);
    let _ = writeln!(
        t,
        "  detectability thresholds (sparse regime, w = {}):",
        p.width
    );
    for (name, th) in &class_thresholds {
        let beta = p
            .classes
            .iter()
            .find(|c| &c.name == name)
            .map_or(0.0, |c| c.beta);
        match th {
            Some(v) => {
                let _ = writeln!(t, "    {name:<14} beta {beta:.2}: {v:.2} pkts");
            }
            None => {
                let _ = writeln!(t, "    {name:<14} beta {beta:.2}: not detectable");
            }
        }
    }
    for f in &p.flows {
        let base = FlowBaseline::new(f.x_k, f.x_k_t, p.n_t_max, f.n_prime);
        let line = match upf_telemetry::sizing::detectability_threshold(&base, eps, p.beta_max) {
            Detectability::Threshold(v) => format!("{v:.2} pkts"),
            Detectability::NotDetectable => "not detectable".into(),
        };
        let _ = writeln!(
            t,
            "    flow {:<9} full condition at beta max: {line}",
            f.name
        );
    }
    let _ = writeln!(
        t,
        "  drift: rho {} -> {} needs width {drift_width}",
        p.rho, p.rho_drift
    );
    let at_deployed = simultaneous_success(p.k_bins, p.depth);
    let _ = writeln!(
        t,
        "  depth note: at d = {} the union bound holds all {} bounds with probability >= {:.1}%; a 99% guarantee needs d = {}",
        p.depth,
        p.k_bins + 1,
        100.0 * at_deployed,
        required_depth(p.k_bins, 0.01).map_err(invalid)?
    );
    Ok(SizeReport {
        required_width: w_req,
        required_depth: d_req,
        collision_floor: floor,
        class_thresholds,
        drift_width,
        text: t,
    })
}
