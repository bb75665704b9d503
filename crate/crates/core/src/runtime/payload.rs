use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Data passed between functions.
///
/// Payloads are JSON values. Size is measured as the length of the compact
/// JSON encoding, except that `null` counts as the empty payload (0 bytes).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Payload(pub Value);

impl Payload {
    pub fn empty() -> Self {
        Payload(Value::Null)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_null()
    }

    pub fn size_bytes(&self) -> u64 {
        if self.0.is_null() {
            0
        } else {
            serde_json::to_vec(&self.0)
                .map(|v| v.len() as u64)
                .unwrap_or(0)
        }
    }

    /// A string payload whose encoded size is exactly `bytes`.
    ///
    /// Sizes 1 and 2 cannot be expressed as a JSON string; they fall back to
    /// a one-digit number and `""` respectively.
    pub fn filler(bytes: u64) -> Self {
        match bytes {
            0 => Payload::empty(),
            1 => Payload(Value::from(0)),
            n => Payload(Value::String("x".repeat(n as usize - 2))),
        }
    }

    pub fn field(&self, name: &str) -> Option<&Value> {
        self.0.as_object().and_then(|o| o.get(name))
    }
}

impl From<Value> for Payload {
    fn from(v: Value) -> Self {
        Payload(v)
    }
}
