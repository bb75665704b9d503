use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::runtime::Millis;

/// The orchestration engines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Engine {
    /// External scheduler logging every transition (`asf`).
    ClientScheduler,
    /// Conductor function run between tasks (`composer`).
    ReactiveConductor,
    /// Static chain without conductor (`sequences`).
    Sequences,
    /// Durable orchestration driven by history replay (`adf`).
    EventSourcing,
    /// Orchestrator function using the suspend API (`suspend`).
    Suspend,
    /// Orchestrator function that blocks on its children (`inline`).
    Inline,
}

impl Engine {
    pub const ALL: [Engine; 6] = [
        Engine::ClientScheduler,
        Engine::ReactiveConductor,
        Engine::Sequences,
        Engine::EventSourcing,
        Engine::Suspend,
        Engine::Inline,
    ];

    pub fn cli_name(self) -> &'static str {
        match self {
            Engine::ClientScheduler => "asf",
            Engine::ReactiveConductor => "composer",
            Engine::Sequences => "sequences",
            Engine::EventSourcing => "adf",
            Engine::Suspend => "suspend",
            Engine::Inline => "inline",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Engine::ALL
            .into_iter()
            .find(|e| e.cli_name() == s || format!("{e:?}") == s)
            .ok_or_else(|| {
                format!("unknown engine `{s}` (expected asf, composer, sequences, adf, suspend or inline)")
            })
    }
}

/// How the client scheduler dispatches the branches of a parallel state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DispatchMode {
    /// Branch log reads go through the scheduler one at a time.
    #[default]
    Serial,
    Concurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateLimit {
    pub per_second: f64,
    pub burst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineProfile {
    pub name: Engine,
    /// `None` means unbounded.
    pub max_state_bytes: Option<u64>,
    pub max_actions: Option<u64>,
    pub supports_parallel: bool,
    pub composition_is_function: bool,
    pub transition_rate_limit: Option<RateLimit>,
    pub compression_threshold_bytes: Option<u64>,
    pub compression_ratio: f64,
    /// Duration of one orchestrator episode (conductor run, replay step or
    /// suspend-orchestrator slice), excluding replay work.
    pub orchestrator_exec_ms: Millis,
    /// Delay between an orchestration being requested and its first step.
    pub instance_start_ms: Millis,
    /// Replay work per history event, paid on every episode after the first
    /// unless extended sessions are on.
    pub replay_ms_per_event: f64,
    /// Fan-in bookkeeping per already-completed sibling when a parallel
    /// branch result is recorded.
    pub join_ms_per_entry: f64,
    pub parallel_dispatch: DispatchMode,
}

impl EngineProfile {
    pub fn default_for(engine: Engine) -> Self {
        let base = EngineProfile {
            name: engine,
            max_state_bytes: None,
            max_actions: None,
            supports_parallel: true,
            composition_is_function: true,
            transition_rate_limit: None,
            compression_threshold_bytes: None,
            compression_ratio: 0.5,
            orchestrator_exec_ms: 0,
            instance_start_ms: 0,
            replay_ms_per_event: 0.0,
            join_ms_per_entry: 0.0,
            parallel_dispatch: DispatchMode::Serial,
        };
        match engine {
            Engine::ClientScheduler => EngineProfile {
                max_state_bytes: Some(32_768),
                composition_is_function: false,
                transition_rate_limit: Some(RateLimit {
                    per_second: 1000.0,
                    burst: 5000.0,
                }),
                ..base
            },
            Engine::ReactiveConductor => EngineProfile {
                max_state_bytes: Some(5_242_880),
                max_actions: Some(50),
                supports_parallel: false,
                ..base
            },
            Engine::Sequences => EngineProfile {
                max_state_bytes: Some(5_242_880),
                max_actions: Some(50),
                supports_parallel: false,
                ..base
            },
            Engine::EventSourcing => EngineProfile {
                compression_threshold_bytes: Some(61_440),
                ..base
            },
            Engine::Suspend | Engine::Inline => base,
        }
    }

    /// Whether the orchestrator record is billed for all the time it is
    /// running rather than for discrete episodes.
    pub fn bills_continuously(&self) -> bool {
        matches!(self.name, Engine::Suspend | Engine::Inline)
    }

    /// Applies `key = value` overrides from a config table on top of `self`.
    pub fn with_overrides(&self, table: &toml::Table) -> Result<Self, String> {
        let mut merged = toml::Table::try_from(self).map_err(|e| e.to_string())?;
        for (k, v) in table {
            merged.insert(k.clone(), v.clone());
        }
        let out: EngineProfile = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| e.to_string())?;
        if out.name != self.name {
            return Err(format!("profile override changes engine to {}", out.name));
        }
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_nonneg(self.replay_ms_per_event) || !finite_nonneg(self.join_ms_per_entry) {
            return Err("per-event costs must be finite and non-negative".into());
        }
        if !(self.compression_ratio > 0.0 && self.compression_ratio <= 1.0) {
            return Err("compression_ratio must be in (0, 1]".into());
        }
        if let Some(r) = self.transition_rate_limit {
            if !(r.per_second > 0.0 && r.burst >= 1.0) {
                return Err("transition_rate_limit needs a positive rate and burst".into());
            }
        }
        Ok(())
    }
}

/// One profile per engine.
#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    profiles: Vec<EngineProfile>,
}

impl Default for Profiles {
    fn default() -> Self {
        Self {
            profiles: Engine::ALL
                .into_iter()
                .map(EngineProfile::default_for)
                .collect(),
        }
    }
}

impl Profiles {
    fn index(engine: Engine) -> usize {
        Engine::ALL
            .iter()
            .position(|e| *e == engine)
            .expect("every engine is listed")
    }

    pub fn get(&self, engine: Engine) -> &EngineProfile {
        &self.profiles[Self::index(engine)]
    }

    pub fn set(&mut self, profile: EngineProfile) {
        let i = Self::index(profile.name);
        self.profiles[i] = profile;
    }
}

/// Continuous-refill token bucket.
#[derive(Debug, Clone)]
pub(crate) struct TokenBucket {
    limit: RateLimit,
    tokens: f64,
    last: Millis,
}

impl TokenBucket {
    pub fn new(limit: RateLimit, now: Millis) -> Self {
        Self {
            limit,
            tokens: limit.burst,
            last: now,
        }
    }

    /// Takes `n` tokens at `now`; false if the bucket cannot cover them.
    pub fn take(&mut self, n: u64, now: Millis) -> bool {
        let elapsed = now.saturating_sub(self.last) as f64;
        self.tokens =
            (self.tokens + elapsed * self.limit.per_second / 1000.0).min(self.limit.burst);
        self.last = now;
        if self.tokens + 1e-9 >= n as f64 {
            self.tokens -= n as f64;
            true
        } else {
            false
        }
    }
}
