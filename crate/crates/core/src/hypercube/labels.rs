use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LabelMap, IGNORE};
use crate::error::{bail, Result};

/// Source annotation classes, IDs `1..=10` in this order.
pub const SOURCE_CLASSES: [&str; 10] = [
    "Road",
    "Road Marks",
    "Vegetation",
    "Painted Metal",
    "Sky",
    "Concrete",
    "Pedestrian",
    "Water",
    "Unpainted Metal",
    "Glass",
];

pub(crate) const ROAD: u8 = 1;
pub(crate) const ROAD_MARKS: u8 = 2;
pub(crate) const VEGETATION: u8 = 3;
pub(crate) const SKY: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    ThreeClass,
    FiveClass,
}

impl FromStr for SchemeName {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "three_class" | "3" => Ok(Self::ThreeClass),
            "five_class" | "5" => Ok(Self::FiveClass),
            other => bail!(Config, "unknown class scheme {other:?}"),
        }
    }
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ThreeClass => "three_class",
            Self::FiveClass => "five_class",
        })
    }
}

/// Mapping from the 10 source classes onto a training class set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassScheme {
    pub name: SchemeName,
    /// `mapping[id - 1]` is the target of source class `id`.
    pub mapping: [u8; 10],
    pub class_names: Vec<&'static str>,
}

impl ClassScheme {
    pub fn new(name: SchemeName) -> Self {
        match name {
            SchemeName::ThreeClass => Self::three_class(),
            SchemeName::FiveClass => Self::five_class(),
        }
    }

    /// Road, Road Marks, and everything else as No Drivable.
    pub fn three_class() -> Self {
        let mut mapping = [2u8; 10];
        mapping[(ROAD - 1) as usize] = 0;
        mapping[(ROAD_MARKS - 1) as usize] = 1;
        Self {
            name: SchemeName::ThreeClass,
            mapping,
            class_names: vec!["Road", "Road Marks", "No Drivable"],
        }
    }

    /// Road, Road Marks, Vegetation, Sky, Other.
    pub fn five_class() -> Self {
        let mut mapping = [4u8; 10];
        mapping[(ROAD - 1) as usize] = 0;
        mapping[(ROAD_MARKS - 1) as usize] = 1;
        mapping[(VEGETATION - 1) as usize] = 2;
        mapping[(SKY - 1) as usize] = 3;
        Self {
            name: SchemeName::FiveClass,
            mapping,
            class_names: vec!["Road", "Road Marks", "Vegetation", "Sky", "Other"],
        }
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn map_source(&self, source: u8) -> Result<u8> {
        match source {
            IGNORE => Ok(IGNORE),
            1..=10 => Ok(self.mapping[source as usize - 1]),
            other => bail!(Data, "source label {other} outside 1..=10"),
        }
    }
}

/// Maps a source-ID label map (1..=10, 255) onto `scheme` target IDs.
pub fn remap_labels(labels: &LabelMap, scheme: &ClassScheme) -> Result<LabelMap> {
    let mapped = labels
        .labels()
        .iter()
        .map(|&l| scheme.map_source(l))
        .collect::<Result<Vec<_>>>()?;
    LabelMap::new(labels.height(), labels.width(), mapped)
}
