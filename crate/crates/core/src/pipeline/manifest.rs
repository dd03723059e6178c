use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub speaker: String,
    /// Seconds, always > 0.
    pub duration: f64,
    pub transcript: String,
}

/// Corpus listing, one record per line: `path<TAB>speaker<TAB>duration<TAB>transcript`.
///
/// Blank lines and lines starting with `#` are ignored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            check_record(r, i + 1)?;
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.splitn(4, '\t').collect();
            if fields.len() != 4 {
                return Err(Error::Parse { line: line_no, msg: format!("expected 4 tab-separated fields, found {}", fields.len()) });
            }
            let duration: f64 = fields[2].trim().parse().map_err(|_| Error::Parse { line: line_no, msg: format!("bad duration {:?}", fields[2]) })?;
            let r = ManifestRecord { path: PathBuf::from(fields[0]), speaker: fields[1].to_string(), duration, transcript: fields[3].to_string() };
            check_record(&r, line_no)?;
            records.push(r);
        }
        Ok(Self { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.path.display(), r.speaker, r.duration, r.transcript);
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Audio path of `r`, resolved against `base` when relative.
    pub fn resolve(base: &Path, r: &ManifestRecord) -> PathBuf {
        if r.path.is_absolute() {
            r.path.clone()
        } else {
            base.join(&r.path)
        }
    }

    /// Checks that every audio file exists relative to `base`.
    pub fn validate_paths(&self, base: &Path) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let p = Self::resolve(base, r);
            if !p.is_file() {
                return Err(Error::Parse { line: i + 1, msg: format!("audio file {} not found", p.display()) });
            }
        }
        Ok(())
    }
}

fn check_record(r: &ManifestRecord, line: usize) -> Result<()> {
    if !(r.duration.is_finite() && r.duration > 0.0) {
        return Err(Error::Parse { line, msg: format!("duration must be positive, got {}", r.duration) });
    }
    if r.path.as_os_str().is_empty() {
        return Err(Error::Parse { line, msg: "empty audio path".into() });
    }
    if r.transcript.contains('\n') || r.speaker.contains('\t') {
        return Err(Error::Parse { line, msg: "field contains a separator".into() });
    }
    Ok(())
}
