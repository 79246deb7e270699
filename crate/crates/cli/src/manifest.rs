//! Experiment manifests: where the field files are, what was applied, and
//! which nodes form the sensor.
//!
//! ```json
//! {
//!   "reference_point": { "value": [1000, 0, 0], "unit": "mm" },
//!   "experiments": [
//!     {
//!       "field_file": "fx.csv",
//!       "wrench": {
//!         "force": { "value": [1000, 0, 0], "unit": "N" },
//!         "torque": { "value": [0, 0, 0], "unit": "N*m" }
//!       },
//!       "sensor": { "shape": "cube", "edge": 10, "center": [0, 0, 0] }
//!     }
//!   ],
//!   "options": { "estimator": "lin", "outlier_fraction": 0.1 }
//! }
//! ```

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use stiffid_core::pipeline::IdentifyOptions;
use stiffid_core::stats::OutlierRanking;
use stiffid_core::{AngleExtraction, Error, Estimator, Result, SensorRegion, Wrench};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quantity {
    pub value: [f64; 3],
    pub unit: String,
}

impl Quantity {
    pub fn new(value: [f64; 3], unit: &str) -> Self {
        Self {
            value,
            unit: unit.into(),
        }
    }

    fn scaled(&self, table: &[(&str, f64)], what: &str) -> Result<Vector3<f64>> {
        let unit = self.unit.trim();
        let scale = table
            .iter()
            .find(|(name, _)| *name == unit)
            .map(|(_, s)| *s)
            .ok_or_else(|| {
                let allowed: Vec<_> = table.iter().map(|(n, _)| *n).collect();
                Error::InvalidUnits(format!("{what} unit '{unit}', expected one of {}", allowed.join(", ")))
            })?;
        Ok(Vector3::from(self.value) * scale)
    }

    /// In mm.
    pub fn length(&self) -> Result<Vector3<f64>> {
        self.scaled(&[("mm", 1.0), ("m", 1000.0)], "length")
    }

    /// In N.
    pub fn force(&self) -> Result<Vector3<f64>> {
        self.scaled(&[("N", 1.0)], "force")
    }

    /// In N·mm.
    pub fn torque(&self) -> Result<Vector3<f64>> {
        self.scaled(
            &[
                ("N*mm", 1.0),
                ("N·mm", 1.0),
                ("N.mm", 1.0),
                ("N*m", 1000.0),
                ("N·m", 1000.0),
                ("N.m", 1000.0),
            ],
            "torque",
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestWrench {
    pub force: Quantity,
    pub torque: Quantity,
}

impl ManifestWrench {
    pub fn to_wrench(&self) -> Result<Wrench> {
        Wrench::new(self.force.force()?, self.torque.torque()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestExperiment {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Relative paths are taken from the manifest's directory.
    pub field_file: PathBuf,
    pub wrench: ManifestWrench,
    /// All nodes are used when absent. Coordinates are relative to the
    /// reference point, in mm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor: Option<SensorRegion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Lin,
    Svd,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles: Option<AngleExtraction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlier_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlier_ranking: Option<OutlierRanking>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_passes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_multiplier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetrize: Option<bool>,
}

impl ManifestOptions {
    /// Fields set in `other` win.
    pub fn overridden_by(&self, other: &ManifestOptions) -> ManifestOptions {
        ManifestOptions {
            estimator: other.estimator.or(self.estimator),
            angles: other.angles.or(self.angles),
            outlier_fraction: other.outlier_fraction.or(self.outlier_fraction),
            outlier_ranking: other.outlier_ranking.or(self.outlier_ranking),
            filter_passes: other.filter_passes.or(self.filter_passes),
            confidence_multiplier: other.confidence_multiplier.or(self.confidence_multiplier),
            symmetrize: other.symmetrize.or(self.symmetrize),
        }
    }

    pub fn resolve(&self) -> Result<IdentifyOptions> {
        let d = IdentifyOptions::default();
        let estimator = match (self.estimator, self.angles) {
            (Some(EstimatorKind::Svd), angles) => Estimator::Svd(angles.unwrap_or_default()),
            (Some(EstimatorKind::Lin), _) => Estimator::Lin,
            (None, Some(angles)) => Estimator::Svd(angles),
            (None, None) => d.estimator,
        };
        let multiplier = self.confidence_multiplier.unwrap_or(d.confidence_multiplier);
        if !(multiplier > 0.0 && multiplier.is_finite()) {
            return Err(Error::InvalidOption(format!(
                "confidence multiplier {multiplier} must be positive"
            )));
        }
        let fraction = self.outlier_fraction.unwrap_or(d.outlier_fraction);
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidFraction(fraction));
        }
        Ok(IdentifyOptions {
            estimator,
            outlier_fraction: fraction,
            outlier_ranking: self.outlier_ranking.unwrap_or(d.outlier_ranking),
            filter_passes: self.filter_passes.unwrap_or(d.filter_passes),
            confidence_multiplier: multiplier,
            symmetrize: self.symmetrize.unwrap_or(d.symmetrize),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub reference_point: Quantity,
    pub experiments: Vec<ManifestExperiment>,
    #[serde(default)]
    pub options: ManifestOptions,
}

impl Manifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn field_path(&self, base: &Path, index: usize) -> PathBuf {
        let f = &self.experiments[index].field_file;
        if f.is_absolute() {
            f.clone()
        } else {
            base.join(f)
        }
    }

    pub fn experiment_name(&self, index: usize) -> String {
        let e = &self.experiments[index];
        e.name
            .clone()
            .unwrap_or_else(|| e.field_file.display().to_string())
    }
}
