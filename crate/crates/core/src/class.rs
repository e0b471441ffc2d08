use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The three analysis classes, in canonical index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventClass {
    #[serde(rename = "nue_cc")]
    NuECC,
    #[serde(rename = "numu_cc")]
    NuMuCC,
    #[serde(rename = "nc")]
    NC,
}

pub const NUM_CLASSES: usize = 3;

impl EventClass {
    pub const ALL: [EventClass; NUM_CLASSES] = [EventClass::NuECC, EventClass::NuMuCC, EventClass::NC];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Short identifier used in files and on the command line.
    pub fn key(self) -> &'static str {
        match self {
            EventClass::NuECC => "nue_cc",
            EventClass::NuMuCC => "numu_cc",
            EventClass::NC => "nc",
        }
    }

    /// Human-readable label.
    pub fn label(self) -> &'static str {
        match self {
            EventClass::NuECC => "νe CC",
            EventClass::NuMuCC => "νμ CC",
            EventClass::NC => "NC",
        }
    }
}

impl fmt::Display for EventClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown event class `{0}` (expected nue_cc, numu_cc or nc)")]
pub struct ParseClassError(pub String);

impl FromStr for EventClass {
    type Err = ParseClassError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nue_cc" | "nuecc" | "nue" => Ok(EventClass::NuECC),
            "numu_cc" | "numucc" | "numu" => Ok(EventClass::NuMuCC),
            "nc" => Ok(EventClass::NC),
            _ => Err(ParseClassError(s.to_string())),
        }
    }
}
