use std::fmt;
use std::str::FromStr;

use super::DatasetError;

/// Classification task: respiratory cycle anomalies or patient disease.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    /// Four-way cycle classification.
    Anomaly,
    /// Three-way disease classification of whole recordings.
    Disease,
}

impl Task {
    pub fn token(self) -> &'static str {
        match self {
            Task::Anomaly => "task1",
            Task::Disease => "task2",
        }
    }

    pub fn num_classes(self) -> usize {
        self.class_names().len()
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::Anomaly => &["Normal", "Crackle", "Wheeze", "Both"],
            Task::Disease => &["Chronic", "NonChronic", "Healthy"],
        }
    }

    /// Index of the class counted by specificity.
    pub fn normal_class(self) -> usize {
        match self {
            Task::Anomaly => CycleLabel::Normal.index(),
            Task::Disease => DiseaseLabel::Healthy.index(),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Task {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "task1" | "1" | "anomaly" => Ok(Task::Anomaly),
            "task2" | "2" | "disease" => Ok(Task::Disease),
            other => Err(DatasetError::Format(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CycleLabel {
    Normal,
    Crackle,
    Wheeze,
    Both,
}

impl CycleLabel {
    pub const ALL: [CycleLabel; 4] = [CycleLabel::Normal, CycleLabel::Crackle, CycleLabel::Wheeze, CycleLabel::Both];

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn cycle_label(crackle: bool, wheeze: bool) -> CycleLabel {
    match (crackle, wheeze) {
        (false, false) => CycleLabel::Normal,
        (true, false) => CycleLabel::Crackle,
        (false, true) => CycleLabel::Wheeze,
        (true, true) => CycleLabel::Both,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiseaseLabel {
    Chronic,
    NonChronic,
    Healthy,
}

impl DiseaseLabel {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Diagnoses recognized at ingest.
pub const DIAGNOSES: [&str; 8] = ["COPD", "Bronchiectasis", "Asthma", "URTI", "LRTI", "Pneumonia", "Bronchiolitis", "Healthy"];

pub fn disease_label(diagnosis: &str) -> Result<DiseaseLabel, DatasetError> {
    match diagnosis.trim() {
        "COPD" | "Bronchiectasis" | "Asthma" => Ok(DiseaseLabel::Chronic),
        "URTI" | "LRTI" | "Pneumonia" | "Bronchiolitis" => Ok(DiseaseLabel::NonChronic),
        "Healthy" => Ok(DiseaseLabel::Healthy),
        other => Err(DatasetError::UnknownDiagnosis(other.to_string())),
    }
}
