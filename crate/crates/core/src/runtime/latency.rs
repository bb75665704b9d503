use serde::{Deserialize, Serialize};

use super::clock::Millis;
use super::RuntimeError;

/// Extra delay applied to any transfer at or above a size threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayloadCliff {
    pub threshold_bytes: u64,
    pub delay_ms: Millis,
}

/// Platform latency parameters, all in virtual milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    /// Dispatch of one function invocation.
    pub invoke_latency_ms: Millis,
    /// Event-bus delivery.
    pub queue_latency_ms: Millis,
    /// Persisting one state transition or history event.
    pub log_write_ms: Millis,
    /// Serialization cost per KiB of payload moved through the platform.
    pub per_kb_transfer_ms: f64,
    /// Result delivery skips the log write and pays only the queue latency.
    pub active_ack_bypass: bool,
    pub large_payload_cliff: Option<PayloadCliff>,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self::zero()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatLatency {
    #[serde(default)]
    invoke_latency_ms: Millis,
    #[serde(default)]
    queue_latency_ms: Millis,
    #[serde(default)]
    log_write_ms: Millis,
    #[serde(default)]
    per_kb_transfer_ms: f64,
    #[serde(default = "default_true")]
    active_ack_bypass: bool,
    cliff_threshold_bytes: Option<u64>,
    cliff_delay_ms: Option<Millis>,
}

fn default_true() -> bool {
    true
}

impl LatencyModel {
    pub fn zero() -> Self {
        Self {
            invoke_latency_ms: 0,
            queue_latency_ms: 0,
            log_write_ms: 0,
            per_kb_transfer_ms: 0.0,
            active_ack_bypass: true,
            large_payload_cliff: None,
        }
    }

    /// Parses `key = value` lines (TOML syntax; bare `key=value` also works).
    ///
    /// Recognized keys: `invoke_latency_ms`, `queue_latency_ms`,
    /// `log_write_ms`, `per_kb_transfer_ms`, `active_ack_bypass`,
    /// `cliff_threshold_bytes`, `cliff_delay_ms`.
    pub fn from_config_str(text: &str) -> Result<Self, RuntimeError> {
        let flat: FlatLatency =
            toml::from_str(text).map_err(|e| RuntimeError::Config(e.to_string()))?;
        Self::from_table(flat)
    }

    pub(crate) fn from_toml_value(value: toml::Value) -> Result<Self, RuntimeError> {
        let flat: FlatLatency = value
            .try_into()
            .map_err(|e: toml::de::Error| RuntimeError::Config(e.to_string()))?;
        Self::from_table(flat)
    }

    fn from_table(flat: FlatLatency) -> Result<Self, RuntimeError> {
        let cliff = match (flat.cliff_threshold_bytes, flat.cliff_delay_ms) {
            (Some(threshold_bytes), Some(delay_ms)) => Some(PayloadCliff {
                threshold_bytes,
                delay_ms,
            }),
            (None, None) => None,
            _ => {
                return Err(RuntimeError::Config(
                    "cliff_threshold_bytes and cliff_delay_ms must be set together".into(),
                ))
            }
        };
        let model = Self {
            invoke_latency_ms: flat.invoke_latency_ms,
            queue_latency_ms: flat.queue_latency_ms,
            log_write_ms: flat.log_write_ms,
            per_kb_transfer_ms: flat.per_kb_transfer_ms,
            active_ack_bypass: flat.active_ack_bypass,
            large_payload_cliff: cliff,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        if !(self.per_kb_transfer_ms.is_finite() && self.per_kb_transfer_ms >= 0.0) {
            return Err(RuntimeError::Config(
                "per_kb_transfer_ms must be a finite non-negative number".into(),
            ));
        }
        Ok(())
    }

    /// Writes the model back out in the same key=value form it is read from.
    pub fn to_config_string(&self) -> String {
        let mut out = format!(
            "invoke_latency_ms = {}\nqueue_latency_ms = {}\nlog_write_ms = {}\nper_kb_transfer_ms = {:?}\nactive_ack_bypass = {}\n",
            self.invoke_latency_ms,
            self.queue_latency_ms,
            self.log_write_ms,
            self.per_kb_transfer_ms,
            self.active_ack_bypass
        );
        if let Some(c) = self.large_payload_cliff {
            out.push_str(&format!(
                "cliff_threshold_bytes = {}\ncliff_delay_ms = {}\n",
                c.threshold_bytes, c.delay_ms
            ));
        }
        out
    }

    /// Cost of moving `bytes` of payload through the platform once.
    pub fn transfer_ms(&self, bytes: u64) -> Millis {
        let linear = (self.per_kb_transfer_ms * bytes as f64 / 1024.0).round() as Millis;
        let cliff = match self.large_payload_cliff {
            Some(c) if bytes >= c.threshold_bytes => c.delay_ms,
            _ => 0,
        };
        linear + cliff
    }

    pub fn dispatch_ms(&self, bytes: u64) -> Millis {
        self.invoke_latency_ms + self.transfer_ms(bytes)
    }

    /// Delay between a function finishing and its result event firing.
    pub fn delivery_ms(&self, bytes: u64) -> Millis {
        let log = if self.active_ack_bypass {
            0
        } else {
            self.log_write_ms
        };
        self.queue_latency_ms + log + self.transfer_ms(bytes)
    }

    pub fn log_op_ms(&self, bytes: u64) -> Millis {
        self.log_write_ms + self.transfer_ms(bytes)
    }
}
