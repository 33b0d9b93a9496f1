use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::EvalError;

/// Train:test ratio over whole windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitRatio {
    R73,
    R82,
    R91,
}

impl SplitRatio {
    pub const ALL: [SplitRatio; 3] = [SplitRatio::R73, SplitRatio::R82, SplitRatio::R91];

    pub fn train_tenths(self) -> usize {
        match self {
            SplitRatio::R73 => 7,
            SplitRatio::R82 => 8,
            SplitRatio::R91 => 9,
        }
    }

    /// `floor(N * train_fraction)`, computed exactly in integers.
    pub fn train_count(self, windows: usize) -> usize {
        windows * self.train_tenths() / 10
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.train_tenths();
        write!(f, "{}:{}", t, 10 - t)
    }
}

impl FromStr for SplitRatio {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SplitRatio::ALL
            .into_iter()
            .find(|r| r.to_string() == s.trim())
            .ok_or_else(|| EvalError::UnknownSplit(s.to_owned()))
    }
}

impl Serialize for SplitRatio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SplitRatio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// First `floor(N * train_fraction)` windows train, the rest test. No shuffling.
pub fn split_windows<T>(windows: &[T], ratio: SplitRatio) -> Result<(&[T], &[T]), EvalError> {
    if windows.len() < 2 {
        return Err(EvalError::TooFewWindows(windows.len()));
    }
    Ok(windows.split_at(ratio.train_count(windows.len())))
}
