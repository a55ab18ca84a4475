use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Clinical condition of a subject or atlas.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Neurotypical,
    SpinaBifida,
    /// Any other pathology.
    Other,
}

impl FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "neurotypical" => Ok(Condition::Neurotypical),
            "spina_bifida" => Ok(Condition::SpinaBifida),
            "other" => Ok(Condition::Other),
            _ => Err(Error::Validation(format!("unknown condition {s:?}"))),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Neurotypical => "neurotypical",
            Condition::SpinaBifida => "spina_bifida",
            Condition::Other => "other",
        })
    }
}
