//! ICBHI-style metadata ingest: filenames, cycle annotations, diagnoses and
//! the official split.

mod labels;
mod manifest;
mod records;
mod wav;

use std::path::PathBuf;

pub use labels::{cycle_label, disease_label, CycleLabel, DiseaseLabel, Task, DIAGNOSES};
pub use manifest::{
    build_manifest, parse_diagnosis_file, parse_split_file, ExampleRef, IngestReport, Manifest, Recording, RecordingMeta, Split, MANIFEST_HEADER,
};
pub use records::{parse_annotation_file, parse_recording_filename, render_annotations, CycleAnnotation, FilenameParts};
pub use wav::{read_wav, write_wav};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("malformed recording name `{0}`")]
    MalformedName(String),
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: cycle offset {offset_s} not after onset {onset_s}")]
    NonMonotoneCycle { line: usize, onset_s: f64, offset_s: f64 },
    #[error("unknown diagnosis `{0}`")]
    UnknownDiagnosis(String),
    #[error("patient {0} appears in both train and test")]
    SplitLeak(u32),
    #[error("recording `{0}` has no annotation file")]
    MissingAnnotation(String),
    #[error("recording `{0}` is not listed in the split file")]
    MissingSplitEntry(String),
    #[error("recording `{0}` listed twice")]
    DuplicateRecording(String),
    #[error("{0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Wav { path: PathBuf, source: hound::Error },
}
