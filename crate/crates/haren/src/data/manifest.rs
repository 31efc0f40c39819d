//! Line-delimited corpus manifest.
//!
//! One record per line, tab-separated:
//! `subject_id  label(0/1)  feature_path  split  duration_seconds`
//! with `-` standing in for an absent split tag or duration.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::ClassLabel;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub label: ClassLabel,
    pub path: PathBuf,
    pub split: Option<String>,
    pub duration: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert((e.subject_id.clone(), e.path.clone())) {
                return Err(Error::data(format!(
                    "duplicate manifest record for subject {} and file {}",
                    e.subject_id,
                    e.path.display()
                )));
            }
        }
        Ok(Manifest { entries })
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 {
                return Err(Error::data(format!(
                    "{}:{}: expected at least 3 tab-separated fields, got {}",
                    path.display(),
                    lineno + 1,
                    fields.len()
                )));
            }
            let label_raw: u8 = fields[1].parse().map_err(|_| {
                Error::data(format!(
                    "{}:{}: label must be 0 or 1, got {:?}",
                    path.display(),
                    lineno + 1,
                    fields[1]
                ))
            })?;
            let split = fields
                .get(3)
                .filter(|s| !s.is_empty() && **s != "-")
                .map(|s| s.to_string());
            let duration = match fields.get(4).filter(|s| !s.is_empty() && **s != "-") {
                Some(s) => Some(s.parse().map_err(|_| {
                    Error::data(format!(
                        "{}:{}: bad duration {:?}",
                        path.display(),
                        lineno + 1,
                        s
                    ))
                })?),
                None => None,
            };
            entries.push(ManifestEntry {
                subject_id: fields[0].to_string(),
                label: ClassLabel::from_u8(label_raw)?,
                path: PathBuf::from(fields[2]),
                split,
                duration,
            });
        }
        Manifest::new(entries)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for e in &self.entries {
            writeln!(
                f,
                "{}\t{}\t{}\t{}\t{}",
                e.subject_id,
                e.label.as_u8(),
                e.path.display(),
                e.split.as_deref().unwrap_or("-"),
                e.duration.map_or("-".to_string(), |d| format!("{d}")),
            )?;
        }
        Ok(())
    }

    /// Distinct subjects with their labels, in first-appearance order.
    pub fn subjects(&self) -> Vec<(String, ClassLabel)> {
        let mut out: Vec<(String, ClassLabel)> = Vec::new();
        for e in &self.entries {
            if !out.iter().any(|(s, _)| s == &e.subject_id) {
                out.push((e.subject_id.clone(), e.label));
            }
        }
        out
    }

    /// Entry indices whose split tag equals `split`.
    pub fn split_indices(&self, split: &str) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split.as_deref() == Some(split))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn has_both_classes(&self) -> bool {
        let mut c = false;
        let mut d = false;
        for e in &self.entries {
            match e.label {
                ClassLabel::Control => c = true,
                ClassLabel::Depressed => d = true,
            }
        }
        c && d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(subject: &str, label: u8, path: &str) -> ManifestEntry {
        ManifestEntry {
            subject_id: subject.to_string(),
            label: ClassLabel::from_u8(label).unwrap(),
            path: PathBuf::from(path),
            split: None,
            duration: None,
        }
    }

    #[test]
    fn round_trip_with_optional_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.tsv");
        let mut e1 = entry("s1", 0, "f1.hrnf");
        e1.split = Some("train".into());
        e1.duration = Some(9.5);
        let e2 = entry("s2", 1, "f2.hrnf");
        let m = Manifest::new(vec![e1.clone(), e2.clone()]).unwrap();
        m.write_to(&p).unwrap();
        let back = Manifest::read_from(&p).unwrap();
        assert_eq!(back.entries, vec![e1, e2]);
        assert!(back.has_both_classes());
        assert_eq!(back.split_indices("train"), vec![0]);
    }

    #[test]
    fn duplicate_subject_file_pairs_are_rejected() {
        let e = entry("s1", 0, "f1.hrnf");
        assert!(Manifest::new(vec![e.clone(), e]).is_err());
        // Same subject with different files is fine.
        let a = entry("s1", 0, "f1.hrnf");
        let b = entry("s1", 0, "f2.hrnf");
        assert!(Manifest::new(vec![a, b]).is_ok());
    }

    #[test]
    fn bad_labels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        std::fs::write(&p, "s1\t2\tf.hrnf\t-\t-\n").unwrap();
        assert!(Manifest::read_from(&p).is_err());
    }

    #[test]
    fn subjects_are_deduplicated_in_order() {
        let m = Manifest::new(vec![
            entry("b", 1, "f1"),
            entry("a", 0, "f2"),
            entry("b", 1, "f3"),
        ])
        .unwrap();
        let subs = m.subjects();
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[0].0, "b");
        assert_eq!(subs[1].0, "a");
    }
}
