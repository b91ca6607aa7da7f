use std::fmt;
use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

use crate::{aggregate, explain, report, train};

/// Bad flags, config values or environment; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub train: Option<train::TrainArgs>,
    pub predict: Option<explain::PredictArgs>,
    pub explain: Option<explain::ExplainArgs>,
    pub aggregate: Option<aggregate::AggregateArgs>,
    pub report: Option<report::ReportArgs>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// A value every run needs, from either the command line or the config file.
pub fn required<T>(value: Option<T>, flag: &str) -> Result<T, UsageError> {
    value.ok_or_else(|| UsageError(format!("--{flag} is required (on the command line or in the config file)")))
}

/// Implements `merge`, which fills every flag left unset on the command line
/// from the matching config-file key.
macro_rules! flags_over_file {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $ty {
            pub fn merge(self, file: Option<Self>) -> Self {
                let Some(file) = file else { return self };
                Self { $($field: self.$field.or(file.$field)),* }
            }
        }
    };
}
pub(crate) use flags_over_file;
