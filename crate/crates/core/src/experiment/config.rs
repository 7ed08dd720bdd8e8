use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::calibration::CalibOptions;
use crate::model::ModelVariant;
use crate::scoring::{LossSpec, STANDARD_LEVELS};
use crate::timeseries::{DateRange, FlowUnit, PeriodSplit};

/// Environment variable overriding `data_dir`.
pub const DATA_ROOT_ENV: &str = "QHYDRO_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum BasinSelection {
    #[default]
    All,
    List(Vec<String>),
}

impl Serialize for BasinSelection {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            BasinSelection::All => s.serialize_str("all"),
            BasinSelection::List(ids) => ids.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for BasinSelection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct SelectionVisitor;

        impl<'de> Visitor<'de> for SelectionVisitor {
            type Value = BasinSelection;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("\"all\" or a list of basin ids")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                if v == "all" {
                    Ok(BasinSelection::All)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
                let mut ids = Vec::new();
                while let Some(id) = seq.next_element::<String>()? {
                    ids.push(id);
                }
                Ok(BasinSelection::List(ids))
            }
        }

        d.deserialize_any(SelectionVisitor)
    }
}

/// Inclusive `[start, end]` date pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodConfig {
    #[serde(deserialize_with = "date_pair")]
    pub warmup: [NaiveDate; 2],
    #[serde(deserialize_with = "date_pair")]
    pub calibration: [NaiveDate; 2],
    #[serde(deserialize_with = "date_pair")]
    pub validation: [NaiveDate; 2],
}

/// Accepts TOML date literals as well as quoted ISO dates.
fn date_pair<'de, D: Deserializer<'de>>(d: D) -> Result<[NaiveDate; 2], D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Toml(toml::value::Datetime),
    }
    let [a, b] = <[Raw; 2]>::deserialize(d)?;
    let parse = |r: Raw| {
        let text = match r {
            Raw::Text(s) => s,
            Raw::Toml(dt) => dt.to_string(),
        };
        NaiveDate::parse_from_str(&text, "%Y-%m-%d").map_err(|_| de::Error::custom(format!("not a date: {text}")))
    };
    Ok([parse(a)?, parse(b)?])
}

impl Default for PeriodConfig {
    fn default() -> Self {
        let p = PeriodSplit::camels_protocol();
        Self {
            warmup: [p.warmup.start, p.warmup.end],
            calibration: [p.calibration.start, p.calibration.end],
            validation: [p.validation.start, p.validation.end],
        }
    }
}

impl PeriodConfig {
    pub fn to_split(&self) -> Result<PeriodSplit, ExperimentError> {
        let range = |r: [NaiveDate; 2]| DateRange::new(r[0], r[1]);
        let build = || PeriodSplit::new(range(self.warmup)?, range(self.calibration)?, range(self.validation)?);
        build().map_err(|e| ExperimentError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    /// `basin_id,lat_deg,area_km2`; defaults to `<data_dir>/basins.csv`.
    pub metadata_file: Option<PathBuf>,
    pub basins: BasinSelection,
    pub flow_unit: FlowUnit,
    pub periods: PeriodConfig,
    pub variants: Vec<ModelVariant>,
    pub levels: Vec<f64>,
    pub include_squared_error: bool,
    pub benchmark: ModelVariant,
    pub output_dir: PathBuf,
    pub parallelism: usize,
    pub seed: u64,
    pub calibration: CalibOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            metadata_file: None,
            basins: BasinSelection::All,
            flow_unit: FlowUnit::Cfs,
            periods: PeriodConfig::default(),
            variants: ModelVariant::ALL.to_vec(),
            levels: STANDARD_LEVELS.to_vec(),
            include_squared_error: true,
            benchmark: ModelVariant::Gr4j,
            output_dir: PathBuf::from("run"),
            parallelism: 1,
            seed: 0,
            calibration: CalibOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Reads a config file. Relative paths are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.output_dir);
        if let Some(m) = self.metadata_file.as_mut() {
            fix(m);
        }
    }

    pub fn apply_env_overrides(&mut self) {
        if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
            if !root.is_empty() {
                self.data_dir = PathBuf::from(root);
            }
        }
    }

    pub fn to_toml(&self) -> Result<String, ExperimentError> {
        toml::to_string(self).map_err(|e| ExperimentError::Runtime(e.to_string()))
    }

    pub fn metadata_path(&self) -> PathBuf {
        self.metadata_file
            .clone()
            .unwrap_or_else(|| self.data_dir.join("basins.csv"))
    }

    pub fn split(&self) -> Result<PeriodSplit, ExperimentError> {
        self.periods.to_split()
    }

    /// Quantile levels in order, then squared error if enabled.
    pub fn loss_specs(&self) -> Vec<LossSpec> {
        let mut specs: Vec<LossSpec> = self
            .levels
            .iter()
            .filter_map(|&a| LossSpec::quantile(a).ok())
            .collect();
        if self.include_squared_error {
            specs.push(LossSpec::SquaredError);
        }
        specs
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: String| Err(ExperimentError::Config(m));
        if self.variants.is_empty() {
            return fail("at least one model variant is required".into());
        }
        let mut seen = Vec::new();
        for v in &self.variants {
            if seen.contains(v) {
                return fail(format!("variant {v} listed twice"));
            }
            seen.push(*v);
        }
        if !self.variants.contains(&self.benchmark) {
            return fail(format!("benchmark {} is not among the variants", self.benchmark));
        }
        if let Some(a) = self.levels.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return fail(format!("quantile level {a} outside (0, 1)"));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return fail("quantile levels must be strictly increasing".into());
        }
        if self.loss_specs().is_empty() {
            return fail("no loss functions selected".into());
        }
        if let BasinSelection::List(ids) = &self.basins {
            if ids.is_empty() {
                return fail("basin list is empty".into());
            }
        }
        if self.parallelism == 0 {
            return fail("parallelism must be at least 1".into());
        }
        self.calibration
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.split()?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the config and the library
    /// version; identical configs give identical hashes.
    pub fn manifest_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialises");
        let mut h = Sha256::new();
        h.update(canonical.as_bytes());
        h.update(b"\n");
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_protocol() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.loss_specs().len(), 8);
        assert_eq!(cfg.variants.len() * cfg.loss_specs().len(), 24);
        assert_eq!(cfg.split().unwrap(), PeriodSplit::camels_protocol());
    }

    #[test]
    fn parses_toml() {
        let text = r#"
            data_dir = "camels"
            basins = ["01013500", "01022500"]
            flow_unit = "mm_day"
            variants = ["GR4J", "GR6J"]
            levels = [0.1, 0.9]
            benchmark = "GR4J"
            parallelism = 4

            [periods]
            warmup = [1990-01-01, 1990-12-31]
            calibration = [1991-01-01, 1995-12-31]
            validation = [1996-01-01, 2000-12-31]

            [calibration]
            design_size = 3
            stop_step = 0.01
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.basins, BasinSelection::List(vec!["01013500".into(), "01022500".into()]));
        assert_eq!(cfg.flow_unit, FlowUnit::MmDay);
        assert_eq!(cfg.calibration.design_size, 3);
        assert_eq!(cfg.calibration.initial_step, 0.64);
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.manifest_hash(), cfg.manifest_hash());
    }

    #[test]
    fn rejects_invalid_configs() {
        let bad = |f: fn(&mut ExperimentConfig)| {
            let mut c = ExperimentConfig::default();
            f(&mut c);
            assert!(matches!(c.validate(), Err(ExperimentError::Config(_))));
        };
        bad(|c| c.levels = vec![0.5, 0.1]);
        bad(|c| c.levels = vec![0.0, 0.5]);
        bad(|c| c.variants = vec![ModelVariant::Gr5j]);
        bad(|c| c.variants.clear());
        bad(|c| c.parallelism = 0);
        bad(|c| c.calibration.shrink = 1.5);
        bad(|c| c.periods.warmup[1] = c.periods.warmup[0]);
        bad(|c| {
            c.levels.clear();
            c.include_squared_error = false;
        });
        assert!(ExperimentConfig::from_toml("basins = \"some\"").is_err());
        assert!(ExperimentConfig::from_toml("unknown_key = 1").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 7;
        assert_ne!(a.manifest_hash(), b.manifest_hash());
        assert_eq!(a.manifest_hash().len(), 64);
    }
}
