//! Dataset manifests: ordered class names with per-class labeled quotas.
//!
//! Stored as a small TOML key-value file:
//!
//! ```toml
//! name = "indian_pines"
//! bands = 200
//! classes = ["Alfalfa", "Corn-notill"]
//! quotas = [30, 30]
//! notes = "water absorption bands removed upstream"
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of labeled pixels drawn per class.
pub const FULL_QUOTA: usize = 30;
/// Quota for classes with fewer than [`FULL_QUOTA`] annotated pixels.
pub const REDUCED_QUOTA: usize = 15;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    #[serde(default)]
    pub bands: Option<usize>,
    pub classes: Vec<String>,
    pub quotas: Vec<usize>,
    #[serde(default)]
    pub notes: String,
}

/// 30 labeled pixels per class, or 15 when fewer than 30 are annotated.
pub fn protocol_quota(annotated: usize) -> usize {
    if annotated < FULL_QUOTA {
        REDUCED_QUOTA
    } else {
        FULL_QUOTA
    }
}

impl DatasetManifest {
    /// Manifest with quotas derived from per-class annotated pixel counts.
    pub fn from_class_counts(
        name: impl Into<String>,
        bands: Option<usize>,
        classes: &[(&str, usize)],
    ) -> Self {
        Self {
            name: name.into(),
            bands,
            classes: classes.iter().map(|(n, _)| (*n).to_string()).collect(),
            quotas: classes.iter().map(|&(_, c)| protocol_quota(c)).collect(),
            notes: String::new(),
        }
    }

    /// Every class gets the same quota.
    pub fn uniform(name: impl Into<String>, classes: Vec<String>, quota: usize) -> Self {
        let quotas = vec![quota; classes.len()];
        Self {
            name: name.into(),
            bands: None,
            classes,
            quotas,
            notes: String::new(),
        }
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Quota for 1-based class id `class`.
    pub fn quota(&self, class: u16) -> usize {
        self.quotas[usize::from(class) - 1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("manifest lists no classes".into()));
        }
        if self.classes.len() != self.quotas.len() {
            return Err(Error::Config(format!(
                "manifest has {} classes but {} quotas",
                self.classes.len(),
                self.quotas.len()
            )));
        }
        if self.classes.len() > usize::from(u16::MAX) {
            return Err(Error::Config("too many classes".into()));
        }
        if let Some(i) = self.quotas.iter().position(|&q| q == 0) {
            return Err(Error::Config(format!("class {} has a zero quota", self.classes[i])));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Built-in manifests for the four public benchmark scenes. Class counts are
/// the totals of labeled and unlabeled pixels per class.
pub mod presets {
    use super::DatasetManifest;

    pub fn indian_pines() -> DatasetManifest {
        DatasetManifest::from_class_counts(
            "indian_pines",
            Some(200),
            &[
                ("Alfalfa", 46),
                ("Corn-notill", 1428),
                ("Corn-mintill", 830),
                ("Corn", 237),
                ("Grass-pasture", 483),
                ("Grass-trees", 730),
                ("Grass-pasture-mowed", 28),
                ("Hay-windrowed", 478),
                ("Oats", 20),
                ("Soybean-notill", 972),
                ("Soybean-mintill", 2455),
                ("Soybean-clean", 593),
                ("Wheat", 205),
                ("Woods", 1265),
                ("Buildings-grass-trees-drives", 386),
                ("Stone-steel-towers", 93),
            ],
        )
    }

    pub fn salinas() -> DatasetManifest {
        DatasetManifest::from_class_counts(
            "salinas",
            Some(204),
            &[
                ("Broccoli green weeds 1", 2009),
                ("Broccoli green weeds 2", 3726),
                ("Fallow", 1976),
                ("Fallow rough plow", 1394),
                ("Fallow smooth", 2678),
                ("Stubble", 3959),
                ("Celery", 3579),
                ("Grapes untrained", 11271),
                ("Soil vineyard develop", 6203),
                ("Corn senesced green weeds", 3278),
                ("Lettuce romaines, 4 wk", 1068),
                ("Lettuce romaines, 5 wk", 1927),
                ("Lettuce romaines, 6 wk", 916),
                ("Lettuce romaines, 7 wk", 1070),
                ("Vineyard untrained", 7268),
                ("Vineyard vertical trellis", 1807),
            ],
        )
    }

    pub fn pavia_university() -> DatasetManifest {
        DatasetManifest::from_class_counts(
            "pavia_university",
            Some(103),
            &[
                ("Asphalt", 6631),
                ("Meadows", 18649),
                ("Gravel", 2099),
                ("Trees", 3064),
                ("Painted metal sheets", 1345),
                ("Bare soil", 5029),
                ("Bitumen", 1330),
                ("Self-blocking bricks", 3682),
                ("Shadows", 947),
            ],
        )
    }

    pub fn houston() -> DatasetManifest {
        DatasetManifest::from_class_counts(
            "houston",
            Some(144),
            &[
                ("Healthy grass", 1374),
                ("Stressed grass", 1454),
                ("Synthetic grass", 760),
                ("Trees", 1264),
                ("Soil", 1298),
                ("Water", 325),
                ("Residential", 1476),
                ("Commercial", 1354),
                ("Road", 1554),
                ("Highway", 1424),
                ("Railway", 1513),
                ("Parking Lot 1", 1429),
                ("Parking Lot 2", 570),
                ("Tennis Court", 481),
                ("Running Track", 758),
            ],
        )
    }

    pub fn by_name(name: &str) -> Option<DatasetManifest> {
        match name {
            "indian_pines" => Some(indian_pines()),
            "salinas" => Some(salinas()),
            "pavia_university" => Some(pavia_university()),
            "houston" => Some(houston()),
            _ => None,
        }
    }
}
