use serde::{Deserialize, Serialize};

use crate::engines::WorkflowResult;
use crate::runtime::{InvocationRecord, Millis};

const MS_PER_SECOND: f64 = 1000.0;
const BYTES_PER_GB: f64 = 1_073_741_824.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PricingModel {
    pub per_transition_usd: f64,
    pub per_gb_second_usd: f64,
    /// Charged on stored (post-compression) history bytes for one month.
    pub storage_per_gb_month_usd: f64,
    pub memory_gb: f64,
    /// Each record's billed time is rounded up to a multiple of this.
    /// 1 bills exact milliseconds.
    pub rounding_ms: Millis,
}

impl Default for PricingModel {
    fn default() -> Self {
        Self {
            per_transition_usd: 0.000025,
            per_gb_second_usd: 0.0000166667,
            storage_per_gb_month_usd: 0.023,
            memory_gb: 0.125,
            rounding_ms: 1,
        }
    }
}

impl PricingModel {
    pub fn validate(&self) -> Result<(), String> {
        let prices = [
            ("per_transition_usd", self.per_transition_usd),
            ("per_gb_second_usd", self.per_gb_second_usd),
            ("storage_per_gb_month_usd", self.storage_per_gb_month_usd),
            ("memory_gb", self.memory_gb),
        ];
        for (name, v) in prices {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be a finite non-negative number"));
            }
        }
        if self.rounding_ms == 0 {
            return Err("rounding_ms must be at least 1".into());
        }
        Ok(())
    }

    fn round(&self, ms: Millis) -> Millis {
        ms.div_ceil(self.rounding_ms) * self.rounding_ms
    }
}

/// Billed quantities are integers, so reports of disjoint traces add up
/// exactly; the USD amounts are derived from them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BillingReport {
    pub transitions: u64,
    pub function_ms: Millis,
    pub orchestrator_ms: Millis,
    pub storage_bytes: u64,
    pub transition_usd: f64,
    pub duration_usd: f64,
    pub storage_usd: f64,
    pub total_usd: f64,
}

impl BillingReport {
    fn priced(
        transitions: u64,
        function_ms: Millis,
        orchestrator_ms: Millis,
        storage_bytes: u64,
        pricing: &PricingModel,
    ) -> Self {
        let transition_usd = transitions as f64 * pricing.per_transition_usd;
        let gb_seconds = (function_ms + orchestrator_ms) as f64 / MS_PER_SECOND * pricing.memory_gb;
        let duration_usd = gb_seconds * pricing.per_gb_second_usd;
        let storage_usd = storage_bytes as f64 / BYTES_PER_GB * pricing.storage_per_gb_month_usd;
        Self {
            transitions,
            function_ms,
            orchestrator_ms,
            storage_bytes,
            transition_usd,
            duration_usd,
            storage_usd,
            total_usd: transition_usd + duration_usd + storage_usd,
        }
    }

    pub fn billed_ms(&self) -> Millis {
        self.function_ms + self.orchestrator_ms
    }

    /// Combined report of two disjoint runs, repriced with `pricing`.
    pub fn combine(&self, other: &BillingReport, pricing: &PricingModel) -> BillingReport {
        Self::priced(
            self.transitions + other.transitions,
            self.function_ms + other.function_ms,
            self.orchestrator_ms + other.orchestrator_ms,
            self.storage_bytes + other.storage_bytes,
            pricing,
        )
    }
}

/// Bills a set of records plus separately counted transitions and stored
/// history bytes.
pub fn bill_trace(
    trace: &[InvocationRecord],
    transitions: u64,
    storage_bytes: u64,
    pricing: &PricingModel,
) -> BillingReport {
    let (mut function_ms, mut orchestrator_ms) = (0, 0);
    for r in trace {
        let ms = pricing.round(r.billed_ms());
        if r.is_orchestrator() {
            orchestrator_ms += ms;
        } else {
            function_ms += ms;
        }
    }
    BillingReport::priced(
        transitions,
        function_ms,
        orchestrator_ms,
        storage_bytes,
        pricing,
    )
}

pub fn compute_billing(result: &WorkflowResult, pricing: &PricingModel) -> BillingReport {
    bill_trace(
        &result.trace,
        result.transitions,
        result.history_stored_bytes,
        pricing,
    )
}
