use serde::{Deserialize, Serialize};

/// A non-fatal diagnostic produced somewhere in the pipeline.
///
/// Warnings are carried along with results instead of being logged so that
/// every one of them can surface in the final report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    /// Where it came from, e.g. `"dynamics.integrate"`.
    pub context: String,
    pub message: String,
}

impl Warning {
    pub fn new(context: impl Into<String>, message: impl Into<String>) -> Self {
        Warning {
            context: context.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.context, self.message)
    }
}
