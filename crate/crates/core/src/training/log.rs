use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{Error, Result};

/// JSON-lines sink; a null log drops every record.
#[derive(Debug, Default)]
pub struct RunLog {
    out: Option<(PathBuf, BufWriter<File>)>,
}

impl RunLog {
    pub fn null() -> Self {
        Self { out: None }
    }

    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: Some((path.to_path_buf(), BufWriter::new(f))),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        if let Some((path, w)) = &mut self.out {
            serde_json::to_writer(&mut *w, record)?;
            w.write_all(b"\n").map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some((path, w)) = &mut self.out {
            w.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }
}

impl Drop for RunLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}
