//! Component switches and auxiliary loss weights.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Which parts of the method are active.
///
/// `mvp` selects the panoramic reference set; with it off the model still
/// receives the single view rendered from the reference frame's orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct Toggles {
    pub mvp: bool,
    pub ipli: bool,
    pub mvfb: bool,
    pub scc: bool,
    pub ch: bool,
    pub dh: bool,
    pub tco: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles { mvp: true, ipli: true, mvfb: true, scc: true, ch: true, dh: true, tco: true }
    }
}

impl Toggles {
    pub fn all_off() -> Self {
        Toggles { mvp: false, ipli: false, mvfb: false, scc: false, ch: false, dh: false, tco: false }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.mvp || self.ipli || self.mvfb,
            "mvp needs at least one reference path (ipli or mvfb)"
        );
        ensure!(!self.scc || self.mvfb, "scc weights the feature bank and needs mvfb");
        Ok(())
    }

    /// Compact label such as `mvp+ipli+mvfb+scc+ch+dh+tco`.
    pub fn label(&self) -> String {
        let names = [
            ("mvp", self.mvp),
            ("ipli", self.ipli),
            ("mvfb", self.mvfb),
            ("scc", self.scc),
            ("ch", self.ch),
            ("dh", self.dh),
            ("tco", self.tco),
        ];
        let on: Vec<&str> = names.iter().filter(|(_, b)| *b).map(|(n, _)| *n).collect();
        if on.is_empty() {
            "none".into()
        } else {
            on.join("+")
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_s: f64,
    pub lambda_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_d: 1e-3, lambda_s: 1e-3, lambda_t: 5e-2 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_label() {
        Toggles::default().validate().unwrap();
        Toggles::all_off().validate().unwrap();
        assert_eq!(Toggles::all_off().label(), "none");
        assert_eq!(Toggles { tco: false, ..Default::default() }.label(), "mvp+ipli+mvfb+scc+ch+dh");
    }

    #[test]
    fn inconsistent_sets_are_rejected() {
        assert!(Toggles { ipli: false, mvfb: false, scc: false, ..Default::default() }.validate().is_err());
        assert!(Toggles { mvfb: false, ..Default::default() }.validate().is_err());
    }
}
