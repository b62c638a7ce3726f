use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PairedSequence, Split};
use crate::tensor_io::{read_tensor, tensor_paths, write_tensor};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const MANIFEST_VERSION: u32 = 1;

/// One JSON line of the manifest. `path` is a tensor stem relative to the
/// manifest directory; audio and video live at `<path>.audio.*` and
/// `<path>.video.*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub format_version: u32,
    pub id: String,
    pub path: String,
    #[serde(rename = "T")]
    pub frames: usize,
    pub split: Split,
    pub transcript: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub format_version: u32,
}

fn stems(base: &Path) -> (PathBuf, PathBuf) {
    let mut a = base.as_os_str().to_owned();
    a.push(".audio");
    let mut v = base.as_os_str().to_owned();
    v.push(".video");
    (PathBuf::from(a), PathBuf::from(v))
}

pub fn write_sequence(base: &Path, seq: &PairedSequence) -> Result<()> {
    let (a, v) = stems(base);
    write_tensor(&a, &seq.audio)?;
    write_tensor(&v, &seq.video)
}

impl Manifest {
    pub fn new(root: PathBuf, entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Argument(format!("duplicate id {} in manifest", e.id)));
            }
        }
        Ok(Self {
            root,
            entries,
            format_version: MANIFEST_VERSION,
        })
    }

    pub fn path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn save(&self) -> Result<()> {
        let path = self.path();
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for e in &self.entries {
            let line = serde_json::to_string(e)?;
            writeln!(f, "{line}").map_err(|err| Error::io(&path, err))?;
        }
        Ok(())
    }

    /// Load `manifest.jsonl` from a directory (or the file itself), checking
    /// id uniqueness and that every referenced tensor exists.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let f = fs::File::open(&file).map_err(|e| Error::io(&file, e))?;
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&file, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line)
                .map_err(|e| Error::format(&file, format!("line {}: {e}", n + 1)))?;
            if entry.format_version != MANIFEST_VERSION {
                return Err(Error::format(
                    &file,
                    format!("line {}: unsupported format_version {}", n + 1, entry.format_version),
                ));
            }
            entries.push(entry);
        }
        let manifest = Manifest::new(root, entries)?;
        for e in &manifest.entries {
            let (a, v) = stems(&manifest.root.join(&e.path));
            for stem in [a, v] {
                let (bin, json) = tensor_paths(&stem);
                if !bin.is_file() || !json.is_file() {
                    return Err(Error::format(&file, format!("entry {} points at missing {}", e.id, bin.display())));
                }
            }
        }
        Ok(manifest)
    }

    pub fn entry(&self, id: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::Lookup(format!("no sequence with id {id:?}")))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn ids(&self, split: Split) -> Vec<String> {
        self.split(split).map(|e| e.id.clone()).collect()
    }

    /// Load every sequence of a split, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<PairedSequence>> {
        self.split(split).map(|e| load_sequence(self, &e.id)).collect()
    }
}

/// Load one sequence; shape or length disagreements are reported as format
/// errors naming the offending file.
pub fn load_sequence(manifest: &Manifest, id: &str) -> Result<PairedSequence> {
    let entry = manifest.entry(id)?;
    let (a, v) = stems(&manifest.root.join(&entry.path));
    let audio = read_tensor(&a)?;
    let video = read_tensor(&v)?;
    if audio.shape.len() != 2 || audio.len() != entry.frames {
        return Err(Error::format(
            tensor_paths(&a).0,
            format!("audio shape {:?} disagrees with T={}", audio.shape, entry.frames),
        ));
    }
    if video.shape.len() != 3 || video.len() != entry.frames {
        return Err(Error::format(
            tensor_paths(&v).0,
            format!("video shape {:?} disagrees with T={}", video.shape, entry.frames),
        ));
    }
    Ok(PairedSequence {
        id: entry.id.clone(),
        audio,
        video,
        transcript: entry.transcript.clone(),
        split: entry.split,
    })
}
