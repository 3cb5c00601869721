//! Gait presets and the JSON catalog they are stored in.
//!
//! A catalog file is a JSON array with one object per preset (a single
//! object is also accepted). Angles are strings, either decimal radians or
//! rational multiples of pi such as `"1/2 pi"`, `"-pi"`, `"3/4pi"`; plain
//! JSON numbers are read as radians.
//!
//! ```json
//! [{
//!   "name": "single_roll",
//!   "description": "optional free text",
//!   "period": 1.1,
//!   "inter_delay": [],
//!   "modules": [{
//!     "theta_des": ["1/2 pi", "1/2 pi", "1/2 pi", "1/2 pi"],
//!     "amplitude": ["1/2 pi", "-1/2 pi", "-1/2 pi", "1/2 pi", "1/2 pi"],
//!     "offset": ["0", "0", "0", "0", "0"]
//!   }]
//! }]
//! ```

use serde::de::{self, Deserializer};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

use crate::angle::{format_angle, parse_angle, JOINT_LIMIT, TWO_PI};
use crate::cpg::{OscillatorNetworkParams, DEFAULT_AMPLITUDE_RATE, DEFAULT_MU};
use crate::error::{Error, Result};
use crate::hierarchy::{Injection, SystemConfig, DEFAULT_GAMMA};

/// Actuated joints per module.
pub const JOINTS: usize = 5;

const BUILTIN: &str = include_str!("../data/gaits.json");

mod angles {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&format_angle(*x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
        Vec::<Raw>::deserialize(d)?
            .into_iter()
            .map(|raw| match raw {
                Raw::Num(x) => Ok(x),
                Raw::Text(t) => parse_angle(&t).map_err(de::Error::custom),
            })
            .collect()
    }
}

/// Per-module part of a gait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleGait {
    #[serde(with = "angles")]
    pub theta_des: Vec<f64>,
    #[serde(with = "angles", alias = "R")]
    pub amplitude: Vec<f64>,
    #[serde(with = "angles", alias = "C")]
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitPreset {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    /// Gait period, s.
    pub period: f64,
    /// Desired delays between consecutive modules, length `m - 1`.
    #[serde(with = "angles", alias = "Theta_des")]
    pub inter_delay: Vec<f64>,
    pub modules: Vec<ModuleGait>,
}

/// One failed check from [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Zero-based module index, `None` for preset-wide problems.
    pub module: Option<usize>,
    /// Zero-based joint index.
    pub joint: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.module, self.joint) {
            (Some(m), Some(j)) => write!(f, "module {} joint {}: {}", m + 1, j + 1, self.message),
            (Some(m), None) => write!(f, "module {}: {}", m + 1, self.message),
            _ => f.write_str(&self.message),
        }
    }
}

/// Gains that presets leave open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub mu: f64,
    pub a: f64,
    pub mu_high: f64,
    pub gamma: f64,
    pub injection: Injection,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            mu: DEFAULT_MU,
            a: DEFAULT_AMPLITUDE_RATE,
            mu_high: DEFAULT_MU,
            gamma: DEFAULT_GAMMA,
            injection: Injection::default(),
        }
    }
}

impl GaitPreset {
    pub fn m(&self) -> usize {
        self.modules.len()
    }

    pub fn omega(&self) -> f64 {
        TWO_PI / self.period
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }

    pub fn scale_period(&self, period: f64) -> Result<GaitPreset> {
        scale_period(self, period)
    }

    /// Copy with the inter-module delays replaced.
    pub fn with_inter_delay(&self, inter_delay: &[f64]) -> Result<GaitPreset> {
        if inter_delay.len() != self.inter_delay.len() {
            return Err(Error::InvalidDimension(format!(
                "preset `{}` takes {} inter-module delays, got {}",
                self.name,
                self.inter_delay.len(),
                inter_delay.len()
            )));
        }
        Ok(GaitPreset { inter_delay: inter_delay.to_vec(), ..self.clone() })
    }

    pub fn to_system_config(&self, gains: &Gains) -> Result<SystemConfig> {
        if let Some(v) = self.validate().first() {
            return Err(Error::InvalidParameter(format!("preset `{}`: {v}", self.name)));
        }
        let modules = self
            .modules
            .iter()
            .map(|g| {
                OscillatorNetworkParams::from_period(&g.theta_des, &g.amplitude, &g.offset, self.period)?
                    .with_mu(gains.mu)?
                    .with_amplitude_rate(gains.a)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = SystemConfig::new(modules, &self.inter_delay)?;
        cfg.mu_high = vec![gains.mu_high; cfg.m() - 1];
        cfg.gamma = gains.gamma;
        cfg.injection = gains.injection;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Dimension and joint-limit checks. An empty list means the preset is usable.
pub fn validate(preset: &GaitPreset) -> Vec<Violation> {
    let mut out = Vec::new();
    let global = |message: String| Violation { module: None, joint: None, message };
    if !(preset.period > 0.0 && preset.period.is_finite()) {
        out.push(global(format!("period must be > 0, got {}", preset.period)));
    }
    if preset.modules.is_empty() {
        out.push(global("preset has no modules".into()));
    }
    if preset.inter_delay.len() + 1 != preset.modules.len().max(1) {
        out.push(global(format!(
            "expected {} inter-module delays, got {}",
            preset.modules.len().saturating_sub(1),
            preset.inter_delay.len()
        )));
    }
    for (j, g) in preset.modules.iter().enumerate() {
        for (what, len, want) in [
            ("theta_des", g.theta_des.len(), JOINTS - 1),
            ("amplitude", g.amplitude.len(), JOINTS),
            ("offset", g.offset.len(), JOINTS),
        ] {
            if len != want {
                out.push(Violation {
                    module: Some(j),
                    joint: None,
                    message: format!("{what} has length {len}, expected {want}"),
                });
            }
        }
        for (k, (r, c)) in g.amplitude.iter().zip(&g.offset).enumerate() {
            let reach = r.abs() + c.abs();
            if reach > JOINT_LIMIT + 1e-12 {
                out.push(Violation {
                    module: Some(j),
                    joint: Some(k),
                    message: format!("|R| + |C| = {reach:.6} exceeds 3pi/4 ({JOINT_LIMIT:.6})"),
                });
            }
        }
    }
    out
}

pub fn scale_period(preset: &GaitPreset, period: f64) -> Result<GaitPreset> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::InvalidParameter(format!("period must be > 0, got {period}")));
    }
    Ok(GaitPreset { period, ..preset.clone() })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Catalog {
    pub presets: Vec<GaitPreset>,
}

impl Catalog {
    /// The catalog shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("built-in gait catalog parses")
    }

    /// Parse a catalog. Blank input is an empty catalog.
    pub fn from_json(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        if trimmed.is_empty() {
            return Ok(Self::default());
        }
        let to_err = |e: serde_json::Error| Error::Catalog {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        };
        let presets = if trimmed.starts_with('{') {
            vec![serde_json::from_str::<GaitPreset>(text).map_err(to_err)?]
        } else {
            serde_json::from_str::<Vec<GaitPreset>>(text).map_err(to_err)?
        };
        Ok(Self { presets })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.presets).expect("presets serialize");
        s.push('\n');
        s
    }

    pub fn names(&self) -> Vec<String> {
        self.presets.iter().map(|p| p.name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&GaitPreset> {
        self.presets
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::PresetNotFound { name: name.into(), catalog: self.names() })
    }
}

/// Look up a preset in the built-in catalog.
pub fn get_preset(name: &str) -> Result<GaitPreset> {
    Catalog::builtin().get(name).cloned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const H: f64 = PI / 2.0;
    const Q: f64 = PI / 4.0;

    fn module(p: &GaitPreset, j: usize) -> &ModuleGait {
        &p.modules[j]
    }

    #[test]
    fn single_module_presets() {
        let roll = get_preset("single_roll").unwrap();
        assert_eq!(roll.m(), 1);
        assert_eq!(roll.period, 1.1);
        assert!(roll.inter_delay.is_empty());
        assert_eq!(module(&roll, 0).theta_des, vec![H, H, H, H]);
        assert_eq!(module(&roll, 0).amplitude, vec![H, -H, -H, H, H]);
        assert_eq!(module(&roll, 0).offset, vec![0.0; 5]);

        let turn = get_preset("single_turn").unwrap();
        assert_eq!(module(&turn, 0).theta_des, vec![H, -H, H, -H]);
        assert_eq!(module(&turn, 0).amplitude, vec![H, -H, -H, H, H]);
        assert_eq!(module(&turn, 0).offset, vec![0.0; 5]);
        assert_eq!(turn.period, 1.1);
    }

    #[test]
    fn snake_presets() {
        let crawl = get_preset("snake_crawl").unwrap();
        assert_eq!(crawl.m(), 2);
        assert_eq!(crawl.period, 2.0);
        assert_eq!(crawl.inter_delay, vec![0.0]);
        for g in &crawl.modules {
            assert_eq!(g.theta_des, vec![H, H, -H, -H]);
            assert_eq!(g.amplitude, vec![0.0, Q, 0.0, Q, 0.0]);
            assert_eq!(g.offset, vec![H, 0.0, 0.0, 0.0, -H]);
        }
        let turn = get_preset("snake_turn").unwrap();
        for g in &turn.modules {
            assert_eq!(g.theta_des, vec![H, H, -H, -H]);
            assert_eq!(g.amplitude, vec![-Q, Q, -Q, Q, -Q]);
            assert_eq!(g.offset, vec![0.0; 5]);
        }
        assert_eq!(turn.period, 2.0);
    }

    #[test]
    fn biped_presets() {
        let walk = get_preset("biped_walk").unwrap();
        assert_eq!(walk.inter_delay, vec![H]);
        assert_eq!(walk.period, 1.4);
        for g in &walk.modules {
            assert_eq!(g.theta_des, vec![PI, 0.0, -PI, 0.0]);
        }
        assert_eq!(module(&walk, 0).amplitude, vec![0.0, PI / 3.0, PI / 12.0, 0.0, 0.0]);
        assert_eq!(module(&walk, 0).offset, vec![H, 0.0, 0.0, -H, -H]);
        assert_eq!(module(&walk, 1).amplitude, vec![0.0, PI / 3.0, -PI / 12.0, 0.0, 0.0]);
        assert_eq!(module(&walk, 1).offset, vec![-H, 0.0, 0.0, -H, H]);

        let turn = get_preset("biped_turn").unwrap();
        assert_eq!(module(&turn, 0), module(&walk, 0));
        assert_eq!(module(&turn, 1).amplitude, vec![0.0, PI / 30.0, -PI / 120.0, 0.0, 0.0]);
        assert_eq!(module(&turn, 1).offset, module(&walk, 1).offset);
        assert_eq!(turn.inter_delay, vec![H]);
    }

    #[test]
    fn unknown_preset_lists_catalog() {
        match get_preset("quadruped") {
            Err(Error::PresetNotFound { name, catalog }) => {
                assert_eq!(name, "quadruped");
                assert_eq!(catalog.len(), 6);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shipped_presets_validate() {
        for p in &Catalog::builtin().presets {
            assert!(p.validate().is_empty(), "{}: {:?}", p.name, p.validate());
            assert!(p.to_system_config(&Gains::default()).is_ok());
        }
    }

    #[test]
    fn over_limit_joint_is_reported() {
        let mut p = get_preset("single_roll").unwrap();
        p.modules[0].amplitude = vec![PI, 0.0, 0.0, 0.0, 0.0];
        let v = p.validate();
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].module, v[0].joint), (Some(0), Some(0)));
        assert!(v[0].to_string().starts_with("module 1 joint 1"));
        assert!(p.to_system_config(&Gains::default()).is_err());
    }

    #[test]
    fn dimension_problems_are_reported() {
        let mut p = get_preset("snake_crawl").unwrap();
        p.modules[1].offset.pop();
        p.inter_delay.clear();
        p.period = -1.0;
        assert_eq!(p.validate().len(), 3);
    }

    #[test]
    fn period_scaling() {
        let roll = get_preset("single_roll").unwrap();
        assert_eq!(scale_period(&roll, 1.1).unwrap(), roll);
        let slow = roll.scale_period(2.2).unwrap();
        assert!((slow.omega() - roll.omega() / 2.0).abs() < 1e-15);
        assert!(scale_period(&roll, 0.0).is_err());
        assert!(scale_period(&roll, -1.0).is_err());
    }

    #[test]
    fn catalog_round_trip_is_bit_exact() {
        let cat = Catalog::builtin();
        assert_eq!(Catalog::from_json(&cat.to_json()).unwrap(), cat);
        assert!(cat.to_json().contains("\"-1/12 pi\""));
    }

    #[test]
    fn parse_errors_carry_location() {
        assert_eq!(Catalog::from_json("  \n").unwrap().presets.len(), 0);
        assert_eq!(Catalog::from_json("[]").unwrap().presets.len(), 0);
        match Catalog::from_json("[\n  {\"name\": 3}\n]") {
            Err(Error::Catalog { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let bad_angle = BUILTIN.replacen("1/2 pi", "1/2 pie", 1);
        assert!(matches!(Catalog::from_json(&bad_angle), Err(Error::Catalog { .. })));
        let single = serde_json::to_string(&get_preset("single_turn").unwrap()).unwrap();
        assert_eq!(Catalog::from_json(&single).unwrap().names(), vec!["single_turn"]);
    }

    #[test]
    fn numeric_angles_and_aliases_are_accepted() {
        let text = r#"{"name":"x","period":1,"Theta_des":[],
            "modules":[{"theta_des":[0.5,0,0,0],"R":[0,0,0,0,0],"C":["pi",0,0,0,0]}]}"#;
        let cat = Catalog::from_json(text).unwrap();
        assert_eq!(cat.presets[0].modules[0].theta_des[0], 0.5);
        assert_eq!(cat.presets[0].modules[0].offset[0], PI);
        assert!(!cat.presets[0].validate().is_empty());
    }
}
