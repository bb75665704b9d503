//! Function names resolved by convention, so workflow files need no
//! separate function definitions.
//!
//! | name            | behavior                          |
//! |-----------------|-----------------------------------|
//! | `sleepAction`   | sleep 1 s, return the input       |
//! | `sleep20`       | sleep 20 s, return the input      |
//! | `sleep:<ms>`    | sleep `<ms>`, return the input    |
//! | `echo`          | return the input                  |
//! | `fail`          | fail immediately                  |
//! | `inc:<field>`   | add 1 to a numeric field          |
//!
//! ARN-like names (`arn:aws:lambda:...:function:sleepAction`) resolve by
//! their last `:`-separated segment when the full name is not a pattern.

use crate::runtime::{FunctionDef, RuntimeError, ScriptStep, Simulation};
use crate::workflow::Node;

pub fn resolve_function(name: &str) -> Option<FunctionDef> {
    let def = |behavior_name: &str| -> Option<FunctionDef> {
        let mut def = match behavior_name {
            "sleepAction" => FunctionDef::sleep(name, 1000),
            "sleep20" => FunctionDef::sleep(name, 20_000),
            "echo" => FunctionDef::echo(name),
            "fail" => FunctionDef::scripted(
                name,
                vec![ScriptStep::Fail {
                    message: "fail".into(),
                }],
            ),
            other => {
                if let Some(ms) = other.strip_prefix("sleep:") {
                    FunctionDef::sleep(name, ms.parse().ok()?)
                } else {
                    let field = other.strip_prefix("inc:")?;
                    FunctionDef::scripted(
                        name,
                        vec![ScriptStep::Increment {
                            field: field.to_string(),
                            by: 1,
                        }],
                    )
                }
            }
        };
        def.name = name.to_string();
        Some(def)
    };
    def(name).or_else(|| def(name.rsplit(':').next()?))
}

/// Registers every function `spec` refers to that is not registered yet.
pub fn register_for(sim: &mut Simulation, spec: &Node) -> Result<(), RuntimeError> {
    for name in spec.function_names().keys() {
        if sim.registry().contains(name) {
            continue;
        }
        let def =
            resolve_function(name).ok_or_else(|| RuntimeError::UnknownFunction(name.clone()))?;
        sim.register_function(def)?;
    }
    Ok(())
}
