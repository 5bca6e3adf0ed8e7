//! Dataset file format and file-system helpers.
//!
//! ```text
//! AFFORDANCE-DATASET v1 schema=<joint schema hash> featurizer_seed=<u64>
//! {"id":0,"scene_id":...}
//! {"id":1,...}
//! ```
//!
//! One JSON object per line after the header. Field order and float
//! formatting are fixed by the serializer, so reading and re-writing a file
//! reproduces it byte for byte.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::AffordanceRecord;
use crate::error::{Error, Result};
use crate::pose::schema_hash;

const MAGIC: &str = "AFFORDANCE-DATASET";
const VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub featurizer_seed: u64,
    pub records: Vec<AffordanceRecord>,
}

impl Dataset {
    pub fn new(featurizer_seed: u64) -> Self {
        Self {
            featurizer_seed,
            records: Vec::new(),
        }
    }

    pub fn get(&self, id: u64) -> Option<&AffordanceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn get_mut(&mut self, id: u64) -> Option<&mut AffordanceRecord> {
        self.records.iter_mut().find(|r| r.id == id)
    }

    pub fn next_id(&self) -> u64 {
        self.records.iter().map(|r| r.id + 1).max().unwrap_or(0)
    }

    /// Orders records by (scene id, record id).
    pub fn sort(&mut self) {
        self.records.sort_by(|a, b| a.scene_id.cmp(&b.scene_id).then(a.id.cmp(&b.id)));
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{MAGIC} {VERSION} schema={} featurizer_seed={}\n",
            schema_hash(),
            self.featurizer_seed
        );
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses dataset text; `path` is only used in error messages.
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| Error::format(path, 1, "missing header"))?;
        let featurizer_seed = parse_header(header).map_err(|m| Error::format(path, 1, m))?;
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                return Err(Error::format(path, n, "blank line"));
            }
            let r: AffordanceRecord = serde_json::from_str(line).map_err(|e| Error::format(path, n, e.to_string()))?;
            if !seen.insert(r.id) {
                return Err(Error::format(path, n, format!("duplicate record id {}", r.id)));
            }
            records.push(r);
        }
        Ok(Self {
            featurizer_seed,
            records,
        })
    }
}

fn parse_header(line: &str) -> std::result::Result<u64, String> {
    let mut parts = line.split(' ');
    if parts.next() != Some(MAGIC) {
        return Err("not an affordance dataset".into());
    }
    match parts.next() {
        Some(VERSION) => {}
        Some(v) => return Err(format!("unsupported version {v}")),
        None => return Err("missing version".into()),
    }
    let schema = parts
        .next()
        .and_then(|p| p.strip_prefix("schema="))
        .ok_or("missing schema field")?;
    if schema != schema_hash() {
        return Err(format!("joint schema {schema} does not match {}", schema_hash()));
    }
    let seed = parts
        .next()
        .and_then(|p| p.strip_prefix("featurizer_seed="))
        .ok_or("missing featurizer_seed field")?;
    let seed = seed.parse().map_err(|_| format!("bad featurizer seed {seed:?}"))?;
    if parts.next().is_some() {
        return Err("trailing header fields".into());
    }
    Ok(seed)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_text(&text, path)
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, dataset.to_text().as_bytes())
}

/// Writes through a temporary sibling, fsyncs, then renames over `path`, so
/// readers see either the old or the new file, never a partial one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = dir.join(tmp_name);
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        if let Ok(d) = File::open(&dir) {
            let _ = d.sync_all();
        }
        Ok(())
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Exclusive writer lock: a `<path>.lock` file created with `create_new`,
/// removed on drop.
#[derive(Debug)]
pub struct WriteLock {
    path: PathBuf,
}

impl WriteLock {
    pub fn acquire(dataset: &Path) -> Result<Self> {
        let mut s = dataset.as_os_str().to_owned();
        s.push(".lock");
        let path = PathBuf::from(s);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dataset.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for WriteLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Source, Status};
    use crate::features::CropFeatures;
    use crate::pose::{Point, Pose, JOINT_COUNT};

    fn record(id: u64) -> AffordanceRecord {
        let pose = Pose::new((0..JOINT_COUNT).map(|i| Point::new(0.1 * id as f64 + i as f64, 3.0 * i as f64 / 7.0)).collect()).unwrap();
        let mut r = AffordanceRecord::hypothesis(id, "scene-a", "show", "scenes/a.png", [96, 72], pose, Source::Global);
        if id % 2 == 0 {
            r.class_id = Some(3);
            r.status = Status::Accepted;
            r.features = Some(CropFeatures {
                full: vec![0.1; 4],
                half: vec![-0.2; 4],
                whole: vec![1.0 / 3.0; 4],
            });
        }
        r
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let d = Dataset::new(9);
        let text = d.to_text();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(Dataset::from_text(&text, Path::new("x")).unwrap(), d);
    }

    #[test]
    fn file_round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut d = Dataset::new(5);
        d.records = (0..20).map(record).collect();
        write_dataset(&d, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_text().as_bytes(), &bytes[..]);
    }

    #[test]
    fn errors_cite_line_numbers() {
        let mut d = Dataset::new(5);
        d.records = (0..20).map(record).collect();
        let mut lines: Vec<String> = d.to_text().lines().map(String::from).collect();
        lines[16] = lines[16].replace("\"pose\"", "\"pse\"");
        let err = Dataset::from_text(&lines.join("\n"), Path::new("d")).unwrap_err();
        assert!(matches!(err, Error::Format { line: 17, .. }), "{err}");

        let mut lines: Vec<String> = d.to_text().lines().map(String::from).collect();
        lines[5] = lines[2].clone();
        let err = Dataset::from_text(&lines.join("\n"), Path::new("d")).unwrap_err();
        assert!(matches!(err, Error::Format { line: 6, .. }), "{err}");

        for bad in ["", "NOPE v1", "AFFORDANCE-DATASET v2 schema=x featurizer_seed=1"] {
            assert!(matches!(Dataset::from_text(bad, Path::new("d")), Err(Error::Format { line: 1, .. })));
        }
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let lock = WriteLock::acquire(&path).unwrap();
        assert!(matches!(WriteLock::acquire(&path), Err(Error::Locked(_))));
        drop(lock);
        WriteLock::acquire(&path).unwrap();
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
