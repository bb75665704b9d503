//! Billing meter and serverless-trilemma verification.

mod billing;
mod trilemma;

pub use billing::{bill_trace, compute_billing, BillingReport, PricingModel};
pub use trilemma::{
    check_substitution, check_substitution_with, detect_double_billing, verify_trilemma,
    verify_trilemma_with, DoubleBilling, Finding, TrilemmaVerdict, DEFAULT_EPSILON_MS,
};
