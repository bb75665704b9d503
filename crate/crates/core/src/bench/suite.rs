use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::calibration::CalibrationProfile;
use super::catalog::register_for;
use super::chart::{line_chart, Series};
use super::overhead::overhead;
use super::BenchError;
use crate::engines::{run, Engine, EngineError, RunOptions};
use crate::runtime::{Millis, Payload, SimConfig};
use crate::workflow::{fan_out, seq, Node};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Sequence,
    Parallel,
    StatePassing,
    LargePayload,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Sequence,
        Scenario::Parallel,
        Scenario::StatePassing,
        Scenario::LargePayload,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Sequence => "sequence",
            Scenario::Parallel => "parallel",
            Scenario::StatePassing => "state_passing",
            Scenario::LargePayload => "large_payload",
        }
    }

    fn csv_file(self) -> &'static str {
        match self {
            Scenario::Sequence => "sequences.csv",
            Scenario::Parallel => "parallel.csv",
            Scenario::StatePassing => "state_passing.csv",
            Scenario::LargePayload => "large_payload.csv",
        }
    }
}

/// Overheads of repeated runs of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadSample {
    pub engine: Engine,
    pub scenario: Scenario,
    pub n: u32,
    pub payload_bytes: u64,
    pub repetitions: usize,
    pub overhead_ms: Vec<Millis>,
    pub mean_ms: f64,
    pub stdev_ms: f64,
    /// Why the configuration could not run (an engine limit), if so.
    pub unavailable: Option<String>,
}

impl OverheadSample {
    fn new(
        engine: Engine,
        scenario: Scenario,
        n: u32,
        payload_bytes: u64,
        overhead_ms: Vec<Millis>,
    ) -> Self {
        let k = overhead_ms.len() as f64;
        let mean = overhead_ms.iter().map(|&x| x as f64).sum::<f64>() / k.max(1.0);
        let var = if overhead_ms.len() > 1 {
            overhead_ms
                .iter()
                .map(|&x| (x as f64 - mean).powi(2))
                .sum::<f64>()
                / (k - 1.0)
        } else {
            0.0
        };
        Self {
            engine,
            scenario,
            n,
            payload_bytes,
            repetitions: overhead_ms.len(),
            overhead_ms,
            mean_ms: mean,
            stdev_ms: var.sqrt(),
            unavailable: None,
        }
    }

    fn unavailable(
        engine: Engine,
        scenario: Scenario,
        n: u32,
        payload_bytes: u64,
        why: String,
    ) -> Self {
        Self {
            unavailable: Some(why),
            ..Self::new(engine, scenario, n, payload_bytes, Vec::new())
        }
    }

    pub fn is_available(&self) -> bool {
        self.unavailable.is_none()
    }
}

/// Engine limits that the experiments report as "not available" rather than
/// as failures.
fn is_limit(e: &EngineError) -> bool {
    matches!(
        e,
        EngineError::TooManyActions { .. }
            | EngineError::ParallelUnsupported(_)
            | EngineError::StateTooLarge { .. }
            | EngineError::UnsupportedSpec(_)
    )
}

struct Job<'a> {
    engine: Engine,
    scenario: Scenario,
    n: u32,
    spec: Node,
    payload: u64,
    profile: &'a CalibrationProfile,
    reps: usize,
    config: SimConfig,
}

fn measure(job: &Job<'_>) -> Result<OverheadSample, BenchError> {
    let mut samples = Vec::with_capacity(job.reps);
    for rep in 0..job.reps {
        let config = SimConfig {
            seed: job.config.seed.wrapping_add(rep as u64),
            ..job.config.clone()
        };
        let mut sim = job.profile.simulation(job.engine, config)?;
        register_for(&mut sim, &job.spec)?;
        let input = if job.payload == 0 {
            Payload::empty()
        } else {
            Payload::filler(job.payload)
        };
        match run(
            &mut sim,
            job.engine,
            &job.spec,
            input,
            &RunOptions::default(),
        ) {
            Ok(result) => samples.push(overhead(&result)?),
            Err(e) if is_limit(&e) => {
                return Ok(OverheadSample::unavailable(
                    job.engine,
                    job.scenario,
                    job.n,
                    job.payload,
                    e.to_string(),
                ))
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(OverheadSample::new(
        job.engine,
        job.scenario,
        job.n,
        job.payload,
        samples,
    ))
}

fn job<'a>(
    engine: Engine,
    scenario: Scenario,
    n: u32,
    payload: u64,
    profile: &'a CalibrationProfile,
    reps: usize,
    config: &SimConfig,
) -> Result<Job<'a>, BenchError> {
    let spec = match scenario {
        Scenario::Parallel => fan_out(n, "sleep20"),
        _ => seq(n, "sleepAction"),
    }
    .map_err(|e| BenchError::Config(e.to_string()))?;
    Ok(Job {
        engine,
        scenario,
        n,
        spec,
        payload,
        profile,
        reps,
        config: config.clone(),
    })
}

/// `reps` runs of `seq(n, sleepAction)` with an empty payload.
pub fn bench_sequence(
    engine: Engine,
    n: u32,
    profile: &CalibrationProfile,
    reps: usize,
    config: &SimConfig,
) -> Result<OverheadSample, BenchError> {
    measure(&job(
        engine,
        Scenario::Sequence,
        n,
        0,
        profile,
        reps,
        config,
    )?)
}

/// `reps` runs of `fan_out(n, sleep20)`.
pub fn bench_parallel(
    engine: Engine,
    n: u32,
    profile: &CalibrationProfile,
    reps: usize,
    config: &SimConfig,
) -> Result<OverheadSample, BenchError> {
    if !profile.profile_for(engine)?.supports_parallel {
        return Err(EngineError::ParallelUnsupported(engine).into());
    }
    measure(&job(
        engine,
        Scenario::Parallel,
        n,
        0,
        profile,
        reps,
        config,
    )?)
}

/// A 5-step sequence without and with a payload of `payload_bytes`.
pub fn bench_state(
    engine: Engine,
    profile: &CalibrationProfile,
    payload_bytes: u64,
    reps: usize,
    config: &SimConfig,
) -> Result<(OverheadSample, OverheadSample), BenchError> {
    let without = measure(&job(
        engine,
        Scenario::StatePassing,
        5,
        0,
        profile,
        reps,
        config,
    )?)?;
    let with = measure(&job(
        engine,
        Scenario::StatePassing,
        5,
        payload_bytes,
        profile,
        reps,
        config,
    )?)?;
    if let Some(why) = &with.unavailable {
        if let Some(limit) = profile.profile_for(engine)?.max_state_bytes {
            if payload_bytes > limit {
                return Err(EngineError::StateTooLarge {
                    size: payload_bytes,
                    limit,
                }
                .into());
            }
        }
        return Err(BenchError::Config(why.clone()));
    }
    Ok((without, with))
}

/// A 5-step sequence carrying a large payload.
pub fn bench_large_payload(
    engine: Engine,
    profile: &CalibrationProfile,
    payload_bytes: u64,
    reps: usize,
    config: &SimConfig,
) -> Result<OverheadSample, BenchError> {
    measure(&job(
        engine,
        Scenario::LargePayload,
        5,
        payload_bytes,
        profile,
        reps,
        config,
    )?)
}

fn default_scenarios() -> Vec<Scenario> {
    Scenario::ALL.to_vec()
}

fn default_engines() -> Vec<String> {
    ["asf", "composer", "sequences", "adf", "suspend"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn default_sizes() -> Vec<u32> {
    vec![5, 10, 20, 40, 80]
}

fn default_reps() -> usize {
    10
}

fn default_state_bytes() -> u64 {
    32_768
}

fn default_large_bytes() -> u64 {
    512_000
}

/// The `[suite]` section of a suite config file. Engine names map to
/// profiles through the optional `[suite.profiles]` table (shipped profile
/// name or path to a profile file); unlisted engines use their shipped
/// profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<Scenario>,
    #[serde(default = "default_engines")]
    pub engines: Vec<String>,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub jitter_ms: Millis,
    #[serde(default = "default_sizes")]
    pub sequence_sizes: Vec<u32>,
    #[serde(default = "default_sizes")]
    pub parallel_sizes: Vec<u32>,
    #[serde(default = "default_state_bytes")]
    pub state_payload_bytes: u64,
    #[serde(default = "default_large_bytes")]
    pub large_payload_bytes: u64,
    #[serde(default)]
    pub profiles: BTreeMap<String, String>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    suite: SuiteConfig,
}

impl SuiteConfig {
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        let file: SuiteFile =
            toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        file.suite.validate()?;
        Ok(file.suite)
    }

    pub fn engines(&self) -> Result<Vec<Engine>, BenchError> {
        self.engines
            .iter()
            .map(|e| e.parse::<Engine>().map_err(BenchError::Config))
            .collect()
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        self.engines()?;
        if self.repetitions == 0 {
            return Err(BenchError::Config("repetitions must be at least 1".into()));
        }
        for k in self.profiles.keys() {
            k.parse::<Engine>().map_err(BenchError::Config)?;
        }
        Ok(())
    }

    /// Profile for `engine`, relative paths resolved against `base`.
    fn profile(&self, engine: Engine, base: &Path) -> Result<CalibrationProfile, BenchError> {
        match self.profiles.get(engine.cli_name()) {
            None => Ok(CalibrationProfile::default_for(engine)),
            Some(name) if CalibrationProfile::builtin_names().any(|n| n == name) => {
                CalibrationProfile::builtin(name)
            }
            Some(path) => CalibrationProfile::parse(&fs::read_to_string(base.join(path))?),
        }
    }
}

/// Whether suite scenarios run on a thread pool or one after another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    #[default]
    Parallel,
    Sequential,
}

#[derive(Debug, Default)]
pub struct SuiteReport {
    pub samples: Vec<OverheadSample>,
    /// Scenario key and message for every configuration that failed.
    pub errors: Vec<(String, String)>,
    pub files: Vec<PathBuf>,
}

impl SuiteReport {
    pub fn summary(&self) -> String {
        let mut out = String::from("engine     scenario       n   payload  mean_ms    stdev_ms\n");
        for s in &self.samples {
            let _ = match &s.unavailable {
                None => writeln!(
                    out,
                    "{:<10} {:<14} {:<3} {:<8} {:<10.1} {:.1}",
                    s.engine.cli_name(),
                    s.scenario.name(),
                    s.n,
                    s.payload_bytes,
                    s.mean_ms,
                    s.stdev_ms
                ),
                Some(_) => writeln!(
                    out,
                    "{:<10} {:<14} {:<3} {:<8} N/A",
                    s.engine.cli_name(),
                    s.scenario.name(),
                    s.n,
                    s.payload_bytes
                ),
            };
        }
        for (key, msg) in &self.errors {
            let _ = writeln!(out, "error {key}: {msg}");
        }
        out
    }
}

fn execute(jobs: &[Job<'_>], mode: ExecMode) -> Vec<Result<OverheadSample, String>> {
    let one = |j: &Job<'_>| measure(j).map_err(|e| e.to_string());
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel {
        use rayon::prelude::*;
        return jobs.par_iter().map(one).collect();
    }
    let _ = mode;
    jobs.iter().map(one).collect()
}

/// Runs every configured scenario and writes one CSV per scenario plus the
/// sequence and parallel charts into `out_dir`. A failing configuration is
/// recorded in the report and the rest of the suite still runs.
pub fn run_suite(
    config: &SuiteConfig,
    base_dir: &Path,
    out_dir: &Path,
    mode: ExecMode,
) -> Result<SuiteReport, BenchError> {
    config.validate()?;
    let engines = config.engines()?;
    let profiles: Vec<(Engine, CalibrationProfile)> = engines
        .iter()
        .map(|&e| Ok((e, config.profile(e, base_dir)?)))
        .collect::<Result<_, BenchError>>()?;
    let sim_config = SimConfig {
        seed: config.seed,
        jitter_ms: config.jitter_ms,
        ..SimConfig::default()
    };
    let reps = config.repetitions;
    let mut jobs = Vec::new();
    for &scenario in &config.scenarios {
        for (engine, profile) in &profiles {
            let engine = *engine;
            match scenario {
                Scenario::Sequence => {
                    for &n in &config.sequence_sizes {
                        jobs.push(job(engine, scenario, n, 0, profile, reps, &sim_config)?);
                    }
                }
                Scenario::Parallel => {
                    if !profile.profile_for(engine)?.supports_parallel {
                        continue;
                    }
                    for &n in &config.parallel_sizes {
                        jobs.push(job(engine, scenario, n, 0, profile, reps, &sim_config)?);
                    }
                }
                Scenario::StatePassing => {
                    for payload in [0, config.state_payload_bytes] {
                        jobs.push(job(
                            engine,
                            scenario,
                            5,
                            payload,
                            profile,
                            reps,
                            &sim_config,
                        )?);
                    }
                }
                Scenario::LargePayload => {
                    jobs.push(job(
                        engine,
                        scenario,
                        5,
                        config.large_payload_bytes,
                        profile,
                        reps,
                        &sim_config,
                    )?);
                }
            }
        }
    }

    let mut report = SuiteReport::default();
    for (j, r) in jobs.iter().zip(execute(&jobs, mode)) {
        match r {
            Ok(s) => report.samples.push(s),
            Err(msg) => report.errors.push((
                format!(
                    "{}/{}/n={}/payload={}",
                    j.engine,
                    j.scenario.name(),
                    j.n,
                    j.payload
                ),
                msg,
            )),
        }
    }

    fs::create_dir_all(out_dir)?;
    for &scenario in &config.scenarios {
        let path = out_dir.join(scenario.csv_file());
        write_csv(
            &path,
            report.samples.iter().filter(|s| s.scenario == scenario),
        )?;
        report.files.push(path);
    }
    for (scenario, file, title) in [
        (
            Scenario::Sequence,
            "fig_sequences.svg",
            "Overhead of sequential compositions",
        ),
        (
            Scenario::Parallel,
            "fig_parallel.svg",
            "Overhead of parallel compositions",
        ),
    ] {
        if !config.scenarios.contains(&scenario) {
            continue;
        }
        let series = chart_series(&report.samples, scenario);
        let path = out_dir.join(file);
        fs::write(&path, line_chart(title, "n", "overhead (ms)", &series))?;
        report.files.push(path);
    }
    Ok(report)
}

fn chart_series(samples: &[OverheadSample], scenario: Scenario) -> Vec<Series> {
    let mut by_engine: BTreeMap<Engine, Vec<(f64, f64)>> = BTreeMap::new();
    for s in samples
        .iter()
        .filter(|s| s.scenario == scenario && s.is_available())
    {
        by_engine
            .entry(s.engine)
            .or_default()
            .push((f64::from(s.n), s.mean_ms));
    }
    by_engine
        .into_iter()
        .map(|(engine, points)| Series {
            label: engine.cli_name().to_string(),
            points,
        })
        .collect()
}

fn write_csv<'a>(
    path: &Path,
    samples: impl Iterator<Item = &'a OverheadSample>,
) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "engine",
        "scenario",
        "n",
        "payload_bytes",
        "rep",
        "overhead_ms",
    ])?;
    for s in samples {
        let head = [
            s.engine.cli_name().to_string(),
            s.scenario.name().to_string(),
            s.n.to_string(),
            s.payload_bytes.to_string(),
        ];
        if s.unavailable.is_some() {
            w.write_record(
                head.iter()
                    .cloned()
                    .chain(["".to_string(), "NA".to_string()]),
            )?;
            continue;
        }
        for (rep, v) in s.overhead_ms.iter().enumerate() {
            w.write_record(head.iter().cloned().chain([rep.to_string(), v.to_string()]))?;
        }
    }
    w.flush()?;
    Ok(())
}
