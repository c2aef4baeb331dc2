//! Built-in operating conditions.
//!
//! `C1`..`C11` perturb the nominal converter (360 V, 680 µF, 10 mH, 15 Ω,
//! 15 A) by per-parameter multipliers and set an absolute sampling period;
//! they are the expert-data conditions. `S1`..`S16` are absolute operating
//! points used for the feature-set study and the THD comparison.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::SystemParams;

/// Base values the `C*` multipliers apply to.
pub const TRAINING_BASE: TrainingBase = TrainingBase {
    vdc: 360.0,
    c: 680e-6,
    l: 10e-3,
    r: 15.0,
    iref_amp: 15.0,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingBase {
    pub vdc: f64,
    pub c: f64,
    pub l: f64,
    pub r: f64,
    pub iref_amp: f64,
}

/// One row of the training-condition table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingCondition {
    pub name: &'static str,
    pub vdc: f64,
    pub c: f64,
    pub l: f64,
    pub r: f64,
    pub iref_amp: f64,
    /// Absolute sampling period in microseconds.
    pub ts_us: f64,
}

const fn tc(name: &'static str, vdc: f64, c: f64, l: f64, r: f64, iref_amp: f64, ts_us: f64) -> TrainingCondition {
    TrainingCondition { name, vdc, c, l, r, iref_amp, ts_us }
}

pub const TRAINING_CONDITIONS: [TrainingCondition; 11] = [
    tc("C1", 0.95, 0.95, 1.00, 0.80, 0.95, 30.0),
    tc("C2", 0.90, 0.85, 0.95, 0.70, 0.90, 10.0),
    tc("C3", 1.25, 0.90, 1.20, 1.10, 1.15, 50.0),
    tc("C4", 1.10, 1.05, 1.50, 1.23, 1.05, 60.0),
    tc("C5", 1.00, 1.10, 1.05, 1.40, 0.75, 15.0),
    tc("C6", 1.00, 0.98, 0.75, 1.30, 0.65, 18.0),
    tc("C7", 1.15, 1.20, 0.80, 1.17, 0.55, 50.0),
    tc("C8", 1.00, 1.07, 0.88, 0.77, 0.85, 30.0),
    tc("C9", 1.00, 1.00, 0.98, 0.87, 0.50, 40.0),
    tc("C10", 1.00, 1.00, 0.90, 0.10, 2.00, 5.0),
    tc("C11", 1.00, 1.00, 0.90, 0.10, 2.00, 15.0),
];

/// One column of the operating-point table. The capacitance is the
/// nominal 680 µF throughout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub name: &'static str,
    pub vdc: f64,
    pub ts_us: f64,
    pub r: f64,
    pub l_mh: f64,
    pub iref_amp: f64,
}

const fn op(name: &'static str, vdc: f64, ts_us: f64, r: f64, l_mh: f64, iref_amp: f64) -> OperatingPoint {
    OperatingPoint { name, vdc, ts_us, r, l_mh, iref_amp }
}

pub const OPERATING_POINTS: [OperatingPoint; 16] = [
    op("S1", 360.0, 30.0, 10.0, 5.0, 17.0),
    op("S2", 360.0, 30.0, 15.0, 10.0, 12.0),
    op("S3", 360.0, 30.0, 25.0, 12.0, 5.0),
    op("S4", 342.0, 20.0, 7.5, 8.0, 12.0),
    op("S5", 378.0, 20.0, 15.0, 4.5, 10.0),
    op("S6", 360.0, 45.0, 15.0, 9.0, 4.0),
    op("S7", 360.0, 45.0, 8.0, 10.0, 5.0),
    op("S8", 350.0, 50.0, 9.0, 9.5, 6.0),
    op("S9", 340.0, 50.0, 11.0, 5.0, 6.0),
    op("S10", 360.0, 50.0, 10.0, 5.5, 4.35),
    op("S11", 360.0, 20.0, 10.0, 5.0, 12.0),
    op("S12", 340.0, 25.0, 10.0, 5.0, 10.0),
    op("S13", 350.0, 20.0, 12.0, 7.0, 8.0),
    op("S14", 360.0, 20.0, 7.0, 5.0, 15.0),
    op("S15", 350.0, 25.0, 9.0, 5.0, 12.0),
    op("S16", 350.0, 40.0, 9.0, 5.0, 12.0),
];

/// Operating points shown in the THD bar comparison.
pub const THD_BAR_SCENARIOS: [&str; 12] = [
    "S1", "S2", "S4", "S5", "S6", "S7", "S9", "S11", "S13", "S14", "S15", "S16",
];

/// Default simulated time per condition.
pub const DEFAULT_DURATION: f64 = 0.3;
/// Default start-up interval excluded from datasets (one 50 Hz cycle).
pub const DEFAULT_DISCARD: f64 = 0.02;

/// A fully resolved simulation condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: String,
    pub params: SystemParams,
    pub duration: f64,
    /// Leading interval excluded from datasets.
    pub discard: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(id: impl Into<String>, params: SystemParams) -> Self {
        Self {
            id: id.into(),
            params,
            duration: DEFAULT_DURATION,
            discard: DEFAULT_DISCARD,
            seed: 0,
        }
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    pub fn with_discard(mut self, discard: f64) -> Self {
        self.discard = discard;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "scenario {}: duration must be >= 0, got {}",
                self.id, self.duration
            )));
        }
        if !(self.discard.is_finite() && self.discard >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "scenario {}: discard must be >= 0, got {}",
                self.id, self.discard
            )));
        }
        Ok(())
    }
}

/// The nominal converter with a 10 A reference.
pub fn nominal() -> ScenarioConfig {
    ScenarioConfig::new("nominal", SystemParams::default())
}

impl TrainingCondition {
    pub fn params(&self) -> SystemParams {
        let b = TRAINING_BASE;
        SystemParams {
            vdc: b.vdc * self.vdc,
            r: b.r * self.r,
            l: b.l * self.l,
            c1: b.c * self.c,
            c2: b.c * self.c,
            ts: self.ts_us * 1e-6,
            iref_amp: b.iref_amp * self.iref_amp,
            ..SystemParams::default()
        }
    }

    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig::new(self.name, self.params())
    }
}

impl OperatingPoint {
    pub fn params(&self) -> SystemParams {
        SystemParams {
            vdc: self.vdc,
            r: self.r,
            l: self.l_mh * 1e-3,
            ts: self.ts_us * 1e-6,
            iref_amp: self.iref_amp,
            ..SystemParams::default()
        }
    }

    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig::new(self.name, self.params())
    }
}

/// Resolves a built-in name: `nominal`, `C1`..`C11` or `S1`..`S16`.
pub fn builtin(name: &str) -> Result<ScenarioConfig> {
    if name.eq_ignore_ascii_case("nominal") {
        return Ok(nominal());
    }
    TRAINING_CONDITIONS
        .iter()
        .find(|c| c.name.eq_ignore_ascii_case(name))
        .map(TrainingCondition::scenario)
        .or_else(|| {
            OPERATING_POINTS
                .iter()
                .find(|s| s.name.eq_ignore_ascii_case(name))
                .map(OperatingPoint::scenario)
        })
        .ok_or_else(|| Error::UnknownScenario(name.to_string()))
}

/// Expands a selector such as `C1..C11`, `S2,S4`, `C3` or `all-c`.
pub fn select(selector: &str) -> Result<Vec<ScenarioConfig>> {
    let mut out = Vec::new();
    for part in selector.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (pa, na) = split_name(a)?;
            let (pb, nb) = split_name(b)?;
            if !pa.eq_ignore_ascii_case(pb) || na > nb {
                return Err(Error::UnknownScenario(part.to_string()));
            }
            for n in na..=nb {
                out.push(builtin(&format!("{}{n}", pa.to_ascii_uppercase()))?);
            }
        } else if part.eq_ignore_ascii_case("all-c") {
            out.extend(TRAINING_CONDITIONS.iter().map(TrainingCondition::scenario));
        } else if part.eq_ignore_ascii_case("all-s") {
            out.extend(OPERATING_POINTS.iter().map(OperatingPoint::scenario));
        } else {
            out.push(builtin(part)?);
        }
    }
    Ok(out)
}

fn split_name(name: &str) -> Result<(&str, u32)> {
    let digits = name.trim_start_matches(|c: char| c.is_ascii_alphabetic());
    let prefix = &name[..name.len() - digits.len()];
    let n = digits
        .parse()
        .map_err(|_| Error::UnknownScenario(name.to_string()))?;
    Ok((prefix, n))
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioFile {
    scenario: Vec<ScenarioConfig>,
}

/// Loads scenarios from a TOML file of `[[scenario]]` tables.
pub fn load_file(path: impl AsRef<Path>) -> Result<Vec<ScenarioConfig>> {
    let text = std::fs::read_to_string(path)?;
    let file: ScenarioFile = toml::from_str(&text)?;
    for s in &file.scenario {
        s.validate()?;
    }
    Ok(file.scenario)
}

pub fn save_file(path: impl AsRef<Path>, scenarios: &[ScenarioConfig]) -> Result<()> {
    let text = toml::to_string(&ScenarioFile {
        scenario: scenarios.to_vec(),
    })?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Training-condition table as CSV text, in the table's column order.
pub fn training_conditions_csv() -> String {
    let mut s = String::from("condition,vdc,c,l,r,i_ref,ts_us\n");
    for c in &TRAINING_CONDITIONS {
        s.push_str(&format!(
            "{},{:.2},{:.2},{:.2},{:.2},{:.2},{}\n",
            c.name, c.vdc, c.c, c.l, c.r, c.iref_amp, c.ts_us
        ));
    }
    s
}

/// Operating-point table as CSV text, one row per point.
pub fn operating_points_csv() -> String {
    let mut s = String::from("scenario,vdc,ts_us,r,l_mh,i_ref\n");
    for p in &OPERATING_POINTS {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.name, p.vdc, p.ts_us, p.r, p.l_mh, p.iref_amp
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multipliers_resolve() {
        let c1 = builtin("C1").unwrap().params;
        assert!((c1.vdc - 342.0).abs() < 1e-12);
        assert!((c1.c1 - 646e-6).abs() < 1e-15);
        assert!((c1.l - 10e-3).abs() < 1e-15);
        assert!((c1.r - 12.0).abs() < 1e-12);
        assert!((c1.iref_amp - 14.25).abs() < 1e-12);
        assert!((c1.ts - 30e-6).abs() < 1e-18);
    }

    #[test]
    fn every_builtin_is_valid() {
        for s in select("C1..C11,S1..S16,nominal").unwrap() {
            s.validate().unwrap();
        }
    }

    #[test]
    fn selectors() {
        assert_eq!(select("C1..C11").unwrap().len(), 11);
        assert_eq!(select("S2, S4").unwrap().len(), 2);
        assert_eq!(select("all-s").unwrap().len(), 16);
        assert!(select("C1..S3").is_err());
        assert!(select("X9").is_err());
        assert!(select("C12").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        let scenarios = select("C2,S16").unwrap();
        save_file(&path, &scenarios).unwrap();
        assert_eq!(load_file(&path).unwrap(), scenarios);
    }
}
