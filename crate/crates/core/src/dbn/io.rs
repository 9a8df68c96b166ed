use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{DbnModel, Demonstration};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct ModelDocRef<'a> {
    schema_version: u32,
    #[serde(flatten)]
    model: &'a DbnModel,
}

#[derive(Deserialize)]
struct ModelDoc {
    schema_version: u32,
    #[serde(flatten)]
    model: DbnModel,
}

impl DbnModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocRef {
            schema_version: MODEL_SCHEMA_VERSION,
            model: self,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(s)?;
        if doc.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: MODEL_SCHEMA_VERSION,
                found: doc.schema_version,
            });
        }
        doc.model.validate()?;
        Ok(doc.model)
    }
}

pub fn save_model(model: &DbnModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DbnModel> {
    let path = path.as_ref();
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DbnModel::from_json(&s)
}

/// One demonstration per line; each keyframe is 15 numbers (7 action, 8 goal).
pub fn write_demos_jsonl(demos: &[Demonstration], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in demos {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_demos_jsonl(path: impl AsRef<Path>) -> Result<Vec<Demonstration>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbn::{Keyframe, GOAL_DIM};
    use crate::stats::MvGaussian;

    fn model() -> DbnModel {
        let emit_a = (0..2)
            .map(|i| MvGaussian::isotropic(&[i as f64, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 0.1).unwrap())
            .collect();
        let emit_g = (0..3)
            .map(|i| MvGaussian::isotropic(&[i as f64; GOAL_DIM], 0.2).unwrap())
            .collect();
        DbnModel::uniform(emit_a, emit_g).unwrap()
    }

    #[test]
    fn model_document_round_trip() {
        let m = model();
        let s = m.to_json().unwrap();
        assert!(s.contains("\"schema_version\": 1"));
        assert!(s.contains("\"trans_a\""));
        assert_eq!(DbnModel::from_json(&s).unwrap(), m);
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let s = model()
            .to_json()
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(matches!(
            DbnModel::from_json(&s),
            Err(Error::SchemaVersion { found: 9, .. })
        ));
    }

    #[test]
    fn demos_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        let kf = |x: f64| Keyframe {
            action: [x, 0.1, 0.2, 1.0, 0.0, 0.0, 0.0],
            goal: [x; GOAL_DIM],
        };
        let demos = vec![
            Demonstration::new(vec![kf(0.0), kf(1.0)]).unwrap(),
            Demonstration::new(vec![kf(2.0), kf(3.0), kf(4.0)]).unwrap(),
        ];
        write_demos_jsonl(&demos, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("[[0.0,0.1,0.2,1.0"));
        assert_eq!(read_demos_jsonl(&path).unwrap(), demos);
    }
}
