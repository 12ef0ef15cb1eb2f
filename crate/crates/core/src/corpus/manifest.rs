//! JSON Lines manifest: one header line, then one record per line.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::build::ImageMode;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// One aligned (point cloud, image, caption) record. Paths are relative to
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub id: String,
    #[serde(rename = "class")]
    pub class_name: String,
    pub pc_path: String,
    pub image_path: String,
    pub caption: String,
    #[serde(default)]
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub classes: Vec<String>,
    #[serde(default)]
    pub unseen: Vec<String>,
    pub image_mode: ImageMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<Triplet>,
    /// Directory record paths are resolved against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn classes(&self) -> &[String] {
        &self.header.classes
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.header.classes.iter().position(|c| c == name)
    }

    pub fn is_unseen(&self, class_name: &str) -> bool {
        self.header.unseen.iter().any(|c| c == class_name)
    }

    pub fn seen_classes(&self) -> Vec<String> {
        self.header.classes.iter().filter(|c| !self.is_unseen(c)).cloned().collect()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Record indices in `split` whose class is in `classes`.
    pub fn select(&self, split: Split, classes: &[String]) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split && classes.contains(&r.class_name))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.select(Split::Train, &self.header.classes)
    }

    pub fn validate(&self) -> Result<()> {
        let classes: BTreeSet<&str> = self.header.classes.iter().map(String::as_str).collect();
        if classes.len() != self.header.classes.len() {
            return Err(Error::config("manifest class list has duplicates"));
        }
        if let Some(u) = self.header.unseen.iter().find(|u| !classes.contains(u.as_str())) {
            return Err(Error::config(format!("unseen class `{u}` is not in the class list")));
        }
        let mut ids = BTreeSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::config(format!("duplicate record id `{}`", r.id)));
            }
            if !classes.contains(r.class_name.as_str()) {
                return Err(Error::config(format!("record `{}` has unknown class `{}`", r.id, r.class_name)));
            }
            if r.split == Split::Train && self.is_unseen(&r.class_name) {
                return Err(Error::config(format!("unseen-class record `{}` in the training split", r.id)));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, root: PathBuf) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| Error::format(0, "empty manifest"))?;
        let header: ManifestHeader = serde_json::from_str(head)?;
        let mut records = Vec::new();
        for (n, line) in lines {
            let r: Triplet = serde_json::from_str(line)
                .map_err(|e| Error::config(format!("manifest line {}: {e}", n + 1)))?;
            records.push(r);
        }
        let m = Self { header, records, root };
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }
}
