use std::fmt::Write as _;

use super::DatasetError;

/// Fields encoded in a recording filename stem,
/// `patient_index_location_mode_equipment`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilenameParts {
    pub patient_id: u32,
    pub recording_index: String,
    pub chest_location: String,
    pub acquisition_mode: String,
    pub equipment: String,
}

pub fn parse_recording_filename(stem: &str) -> Result<FilenameParts, DatasetError> {
    let fields: Vec<&str> = stem.split('_').collect();
    let malformed = || DatasetError::MalformedName(stem.to_string());
    if fields.len() != 5 || fields.iter().any(|f| f.is_empty()) {
        return Err(malformed());
    }
    let patient_id = fields[0].parse::<u32>().map_err(|_| malformed())?;
    Ok(FilenameParts {
        patient_id,
        recording_index: fields[1].to_string(),
        chest_location: fields[2].to_string(),
        acquisition_mode: fields[3].to_string(),
        equipment: fields[4].to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleAnnotation {
    pub onset_s: f64,
    pub offset_s: f64,
    pub crackle: bool,
    pub wheeze: bool,
}

impl CycleAnnotation {
    pub fn duration_s(&self) -> f64 {
        self.offset_s - self.onset_s
    }
}

fn parse_flag(s: &str) -> Option<bool> {
    match s {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

/// One cycle per nonempty line: `onset offset crackle wheeze`.
pub fn parse_annotation_file(text: &str) -> Result<Vec<CycleAnnotation>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |reason: &str| DatasetError::MalformedLine { line: line_no, reason: reason.to_string() };
        if fields.len() != 4 {
            return Err(bad(&format!("expected 4 fields, found {}", fields.len())));
        }
        let time = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
        let (onset_s, offset_s) = match (time(fields[0]), time(fields[1])) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(bad("non-numeric time")),
        };
        let (crackle, wheeze) = match (parse_flag(fields[2]), parse_flag(fields[3])) {
            (Some(c), Some(w)) => (c, w),
            _ => return Err(bad("flags must be 0 or 1")),
        };
        if onset_s < 0.0 {
            return Err(bad("negative onset"));
        }
        if offset_s <= onset_s {
            return Err(DatasetError::NonMonotoneCycle { line: line_no, onset_s, offset_s });
        }
        out.push(CycleAnnotation { onset_s, offset_s, crackle, wheeze });
    }
    Ok(out)
}

/// Inverse of [`parse_annotation_file`]; times use shortest round-trip
/// formatting.
pub fn render_annotations(cycles: &[CycleAnnotation]) -> String {
    let mut s = String::new();
    for c in cycles {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", c.onset_s, c.offset_s, u8::from(c.crackle), u8::from(c.wheeze));
    }
    s
}
