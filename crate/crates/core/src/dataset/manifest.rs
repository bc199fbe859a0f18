//! Recording index with labels and the train/test split.
//!
//! Text format, tab-separated, one record per line after the header:
//!
//! ```text
//! #respnet-manifest v1
//! R  key  patient  location  mode  equipment  rate  split  diagnosis  audio_path
//! C  key  onset  offset  crackle  wheeze
//! ```
//!
//! `C` lines follow their recording's `R` line in cycle order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::labels::{cycle_label, disease_label, DiseaseLabel, Task};
use super::records::{parse_annotation_file, parse_recording_filename, CycleAnnotation};
use super::DatasetError;

pub const MANIFEST_HEADER: &str = "#respnet-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn token(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(DatasetError::Format(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingMeta {
    pub patient_id: u32,
    pub recording_key: String,
    pub chest_location: String,
    pub acquisition_mode: String,
    pub equipment: String,
    pub audio_path: PathBuf,
    pub sample_rate_native: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub meta: RecordingMeta,
    pub split: Split,
    pub diagnosis: String,
    pub disease: DiseaseLabel,
    pub cycles: Vec<CycleAnnotation>,
}

/// A labeled unit of work: a whole recording (disease task) or one of its
/// cycles (anomaly task).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExampleRef {
    pub recording: usize,
    pub cycle: Option<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    recordings: Vec<Recording>,
}

/// Counts reported by [`build_manifest`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub recordings: usize,
    pub cycles: usize,
    pub train_patients: usize,
    pub test_patients: usize,
    /// Recordings skipped because their patient has no diagnosis entry.
    pub missing_diagnosis: Vec<String>,
    /// Split entries whose audio is absent from the data directory.
    pub unmatched_split_entries: usize,
}

/// `recording_key<TAB>train|test` per line; blank lines and `#` comments
/// are ignored.
pub fn parse_split_file(text: &str) -> Result<HashMap<String, Split>, DatasetError> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(DatasetError::MalformedLine { line: i + 1, reason: "split entry needs 2 fields".into() });
        }
        let split = fields[1].parse().map_err(|_| DatasetError::MalformedLine { line: i + 1, reason: format!("bad split `{}`", fields[1]) })?;
        out.insert(fields[0].to_string(), split);
    }
    Ok(out)
}

/// `patient_id<TAB>diagnosis` per line.
pub fn parse_diagnosis_file(text: &str) -> Result<HashMap<u32, String>, DatasetError> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |r: &str| DatasetError::MalformedLine { line: i + 1, reason: r.to_string() };
        if fields.len() != 2 {
            return Err(bad("diagnosis entry needs 2 fields"));
        }
        let pid = fields[0].parse::<u32>().map_err(|_| bad("non-numeric patient id"))?;
        disease_label(fields[1])?;
        out.insert(pid, fields[1].to_string());
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e })
}

/// Scans `data_dir` for `<key>.wav` + `<key>.txt` pairs and joins them with
/// the split and diagnosis tables.
pub fn build_manifest(data_dir: &Path, split_file: &Path, diagnosis_file: &Path) -> Result<(Manifest, IngestReport), DatasetError> {
    let splits = parse_split_file(&read_text(split_file)?)?;
    let diagnoses = parse_diagnosis_file(&read_text(diagnosis_file)?)?;
    let mut wavs: Vec<PathBuf> = fs::read_dir(data_dir)
        .map_err(|e| DatasetError::Io { path: data_dir.to_path_buf(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    wavs.sort();

    let mut report = IngestReport::default();
    let mut recordings = Vec::new();
    let mut seen_keys = HashSet::new();
    for wav in wavs {
        let key = wav.file_stem().and_then(|s| s.to_str()).ok_or_else(|| DatasetError::MalformedName(wav.display().to_string()))?;
        let parts = parse_recording_filename(key)?;
        let ann = wav.with_extension("txt");
        if !ann.is_file() {
            return Err(DatasetError::MissingAnnotation(key.to_string()));
        }
        let split = *splits.get(key).ok_or_else(|| DatasetError::MissingSplitEntry(key.to_string()))?;
        let Some(diagnosis) = diagnoses.get(&parts.patient_id) else {
            report.missing_diagnosis.push(key.to_string());
            continue;
        };
        let cycles = parse_annotation_file(&read_text(&ann)?)?;
        let spec = hound::WavReader::open(&wav).map_err(|e| DatasetError::Wav { path: wav.clone(), source: e })?.spec();
        seen_keys.insert(key.to_string());
        recordings.push(Recording {
            meta: RecordingMeta {
                patient_id: parts.patient_id,
                recording_key: key.to_string(),
                chest_location: parts.chest_location,
                acquisition_mode: parts.acquisition_mode,
                equipment: parts.equipment,
                audio_path: wav.clone(),
                sample_rate_native: spec.sample_rate,
            },
            split,
            diagnosis: diagnosis.clone(),
            disease: disease_label(diagnosis)?,
            cycles,
        });
    }
    report.unmatched_split_entries = splits.keys().filter(|k| !seen_keys.contains(*k)).count();
    let manifest = Manifest::new(recordings)?;
    report.recordings = manifest.len();
    report.cycles = manifest.recordings.iter().map(|r| r.cycles.len()).sum();
    let (train, test) = manifest.patients();
    report.train_patients = train.len();
    report.test_patients = test.len();
    Ok((manifest, report))
}

impl Manifest {
    /// Validates key uniqueness and patient independence of the split.
    pub fn new(recordings: Vec<Recording>) -> Result<Self, DatasetError> {
        let mut keys = HashSet::new();
        let mut side: HashMap<u32, Split> = HashMap::new();
        for r in &recordings {
            if !keys.insert(r.meta.recording_key.as_str()) {
                return Err(DatasetError::DuplicateRecording(r.meta.recording_key.clone()));
            }
            match side.insert(r.meta.patient_id, r.split) {
                Some(prev) if prev != r.split => return Err(DatasetError::SplitLeak(r.meta.patient_id)),
                _ => {}
            }
        }
        Ok(Self { recordings })
    }

    pub fn recordings(&self) -> &[Recording] {
        &self.recordings
    }

    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }

    pub fn find(&self, key: &str) -> Option<&Recording> {
        self.recordings.iter().find(|r| r.meta.recording_key == key)
    }

    /// Sorted patient ids on each side.
    pub fn patients(&self) -> (Vec<u32>, Vec<u32>) {
        let mut by: BTreeMap<u32, Split> = BTreeMap::new();
        for r in &self.recordings {
            by.insert(r.meta.patient_id, r.split);
        }
        let pick = |s| by.iter().filter(|(_, v)| **v == s).map(|(k, _)| *k).collect();
        (pick(Split::Train), pick(Split::Test))
    }

    pub fn examples(&self, task: Task, split: Split) -> Vec<ExampleRef> {
        let mut out = Vec::new();
        for (ri, r) in self.recordings.iter().enumerate().filter(|(_, r)| r.split == split) {
            match task {
                Task::Disease => out.push(ExampleRef { recording: ri, cycle: None, label: r.disease.index() }),
                Task::Anomaly => out.extend(r.cycles.iter().enumerate().map(|(ci, c)| ExampleRef {
                    recording: ri,
                    cycle: Some(ci),
                    label: cycle_label(c.crackle, c.wheeze).index(),
                })),
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for r in &self.recordings {
            let m = &r.meta;
            let _ = writeln!(
                s,
                "R\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                m.recording_key,
                m.patient_id,
                m.chest_location,
                m.acquisition_mode,
                m.equipment,
                m.sample_rate_native,
                r.split.token(),
                r.diagnosis,
                m.audio_path.display()
            );
            for c in &r.cycles {
                let _ = writeln!(s, "C\t{}\t{}\t{}\t{}\t{}", m.recording_key, c.onset_s, c.offset_s, u8::from(c.crackle), u8::from(c.wheeze));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, DatasetError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
            _ => return Err(DatasetError::Format(format!("missing `{MANIFEST_HEADER}` header"))),
        }
        let mut recordings: Vec<Recording> = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = |r: &str| DatasetError::MalformedLine { line: i + 1, reason: r.to_string() };
            match f[0] {
                "R" if f.len() == 10 => {
                    let diagnosis = f[8].to_string();
                    recordings.push(Recording {
                        meta: RecordingMeta {
                            recording_key: f[1].to_string(),
                            patient_id: f[2].parse().map_err(|_| bad("patient id"))?,
                            chest_location: f[3].to_string(),
                            acquisition_mode: f[4].to_string(),
                            equipment: f[5].to_string(),
                            sample_rate_native: f[6].parse().map_err(|_| bad("sample rate"))?,
                            audio_path: PathBuf::from(f[9]),
                        },
                        split: f[7].parse().map_err(|_| bad("split"))?,
                        disease: disease_label(&diagnosis)?,
                        diagnosis,
                        cycles: Vec::new(),
                    });
                }
                "C" if f.len() == 6 => {
                    let rec = recordings.last_mut().filter(|r| r.meta.recording_key == f[1]).ok_or_else(|| bad("cycle before its recording"))?;
                    let mut parsed = parse_annotation_file(&f[2..].join("\t")).map_err(|_| bad("cycle fields"))?;
                    rec.cycles.push(parsed.pop().ok_or_else(|| bad("cycle fields"))?);
                }
                _ => return Err(bad("unknown record")),
            }
        }
        Self::new(recordings)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let tmp = path.with_extension("tmp");
        let io = |e| DatasetError::Io { path: path.to_path_buf(), source: e };
        fs::write(&tmp, self.to_text()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_text(&read_text(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::write_wav;
    use crate::dsp::AudioClip;

    fn fixture(dir: &Path, recs: &[(&str, &str)], diag: &str) {
        let mut split = String::new();
        for (key, side) in recs {
            let clip = AudioClip::new(vec![0.0; 400], 4000, key, None).unwrap();
            write_wav(&dir.join(format!("{key}.wav")), &clip).unwrap();
            fs::write(dir.join(format!("{key}.txt")), "0.0\t0.05\t0\t0\n0.05\t0.1\t1\t0\n").unwrap();
            split += &format!("{key}\t{side}\n");
        }
        fs::write(dir.join("split.txt"), split).unwrap();
        fs::write(dir.join("diag.txt"), diag).unwrap();
    }

    const FOUR: [(&str, &str); 4] = [
        ("101_1b1_Al_sc_Meditron", "train"),
        ("101_2b1_Pl_sc_Meditron", "train"),
        ("102_1b1_Ar_mc_AKGC417L", "test"),
        ("102_1b1_Tc_mc_AKGC417L", "test"),
    ];

    fn build(dir: &Path) -> Result<(Manifest, IngestReport), DatasetError> {
        build_manifest(dir, &dir.join("split.txt"), &dir.join("diag.txt"))
    }

    #[test]
    fn two_patients_split_two_two() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), &FOUR, "101\tCOPD\n102\tHealthy\n");
        let (m, rep) = build(dir.path()).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m.examples(Task::Disease, Split::Train).len(), 2);
        assert_eq!(m.examples(Task::Disease, Split::Test).len(), 2);
        assert_eq!(m.examples(Task::Anomaly, Split::Train).len(), 4);
        assert_eq!((rep.train_patients, rep.test_patients, rep.cycles), (1, 1, 8));
        let (train, test) = m.patients();
        assert!(train.iter().all(|p| !test.contains(p)));
        assert_eq!(m.recordings()[0].meta.sample_rate_native, 4000);
        assert_eq!(Manifest::from_text(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn patient_on_both_sides_leaks() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = FOUR;
        recs[1].1 = "test";
        fixture(dir.path(), &recs, "101\tCOPD\n102\tHealthy\n");
        assert!(matches!(build(dir.path()), Err(DatasetError::SplitLeak(101))));
    }

    #[test]
    fn missing_annotation_and_split_entry() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), &FOUR, "101\tCOPD\n102\tHealthy\n");
        fs::remove_file(dir.path().join("102_1b1_Ar_mc_AKGC417L.txt")).unwrap();
        assert!(matches!(build(dir.path()), Err(DatasetError::MissingAnnotation(k)) if k == "102_1b1_Ar_mc_AKGC417L"));

        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), &FOUR, "101\tCOPD\n102\tHealthy\n");
        fs::write(dir.path().join("split.txt"), "101_1b1_Al_sc_Meditron\ttrain\n").unwrap();
        assert!(matches!(build(dir.path()), Err(DatasetError::MissingSplitEntry(_))));
    }

    #[test]
    fn missing_diagnosis_is_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), &FOUR, "101\tURTI\n");
        let (m, rep) = build(dir.path()).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(rep.missing_diagnosis.len(), 2);
        assert_eq!(m.recordings()[0].disease, DiseaseLabel::NonChronic);
    }

    #[test]
    fn unknown_diagnosis_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), &FOUR, "101\tFlu\n102\tHealthy\n");
        assert!(matches!(build(dir.path()), Err(DatasetError::UnknownDiagnosis(_))));
    }

    #[test]
    fn manifest_text_requires_header() {
        assert!(matches!(Manifest::from_text("R\tx"), Err(DatasetError::Format(_))));
        assert_eq!(Manifest::from_text(MANIFEST_HEADER).unwrap().len(), 0);
    }
}
