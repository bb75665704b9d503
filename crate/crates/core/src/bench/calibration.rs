//! Calibration profiles: a latency model plus engine profile overrides.
//!
//! File format (TOML):
//!
//! ```toml
//! name = "asf"
//! provenance = "..."
//! invoke_latency_ms = 3
//! queue_latency_ms = 3
//! log_write_ms = 12
//! per_kb_transfer_ms = 0.19
//! active_ack_bypass = true
//!
//! [profile]
//! engine = "asf"
//! instance_start_ms = 15
//! ```

use crate::engines::{Engine, EngineProfile, Profiles};
use crate::runtime::{LatencyModel, SimConfig, Simulation};

use super::BenchError;

const SHIPPED: [(&str, &str); 6] = [
    ("asf", include_str!("../../profiles/asf.cfg")),
    ("composer", include_str!("../../profiles/composer.cfg")),
    ("ibmseq", include_str!("../../profiles/ibmseq.cfg")),
    ("adf", include_str!("../../profiles/adf.cfg")),
    ("suspend", include_str!("../../profiles/suspend.cfg")),
    ("zero", include_str!("../../profiles/zero.cfg")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProfile {
    pub name: String,
    /// Engine the overrides are meant for; `None` applies them to any engine.
    pub engine: Option<Engine>,
    pub latency: LatencyModel,
    pub overrides: toml::Table,
    pub provenance: String,
}

impl CalibrationProfile {
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        let take_str = |t: &mut toml::Table, k: &str| -> Result<Option<String>, BenchError> {
            match t.remove(k) {
                None => Ok(None),
                Some(toml::Value::String(s)) => Ok(Some(s)),
                Some(_) => Err(BenchError::Config(format!("`{k}` must be a string"))),
            }
        };
        let name = take_str(&mut table, "name")?.unwrap_or_else(|| "custom".into());
        let provenance = take_str(&mut table, "provenance")?.unwrap_or_default();
        let mut overrides = match table.remove("profile") {
            None => toml::Table::new(),
            Some(toml::Value::Table(t)) => t,
            Some(_) => return Err(BenchError::Config("`profile` must be a section".into())),
        };
        let engine = take_str(&mut overrides, "engine")?
            .map(|s| s.parse::<Engine>().map_err(BenchError::Config))
            .transpose()?;
        let latency = LatencyModel::from_toml_value(toml::Value::Table(table))
            .map_err(|e| BenchError::Config(e.to_string()))?;
        let profile = Self {
            name,
            engine,
            latency,
            overrides,
            provenance,
        };
        // Surface bad override keys at load time.
        for e in Engine::ALL {
            if profile.engine.is_none_or(|p| p == e) {
                profile.profile_for(e)?;
            }
        }
        Ok(profile)
    }

    /// A shipped profile by name: asf, composer, ibmseq, adf, suspend, zero.
    pub fn builtin(name: &str) -> Result<Self, BenchError> {
        let (_, text) = SHIPPED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| BenchError::Config(format!("no shipped profile named `{name}`")))?;
        Self::parse(text)
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        SHIPPED.iter().map(|(n, _)| *n)
    }

    /// The shipped profile calibrated for `engine`.
    pub fn default_for(engine: Engine) -> Self {
        let name = match engine {
            Engine::ClientScheduler => "asf",
            Engine::ReactiveConductor => "composer",
            Engine::Sequences => "ibmseq",
            Engine::EventSourcing => "adf",
            Engine::Suspend | Engine::Inline => "suspend",
        };
        Self::builtin(name).expect("shipped profiles parse")
    }

    /// Engine profile after applying this profile's overrides, when they
    /// are meant for `engine`.
    pub fn profile_for(&self, engine: Engine) -> Result<EngineProfile, BenchError> {
        let base = EngineProfile::default_for(engine);
        if self.engine.is_some_and(|e| e != engine) {
            return Ok(base);
        }
        base.with_overrides(&self.overrides)
            .map_err(BenchError::Config)
    }

    /// A fresh simulation using this profile's latencies and overrides.
    pub fn simulation(&self, engine: Engine, config: SimConfig) -> Result<Simulation, BenchError> {
        let mut sim = Simulation::with_config(self.latency.clone(), config);
        let mut profiles = Profiles::default();
        profiles.set(self.profile_for(engine)?);
        *sim.profiles_mut() = profiles;
        Ok(sim)
    }
}
