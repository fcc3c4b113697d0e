//! Staged output: files are written to a scratch directory and only moved
//! into place, with a hashed manifest, once the whole run has succeeded.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

pub struct Staging {
    out: PathBuf,
    dir: PathBuf,
    created_out: bool,
    files: Vec<String>,
}

impl Staging {
    pub fn new(out: &Path) -> Result<Self> {
        let created_out = !out.exists();
        fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
        let dir = out.join(format!(".staging-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir(&dir)?;
        Ok(Self {
            out: out.to_path_buf(),
            dir,
            created_out,
            files: Vec::new(),
        })
    }

    /// Opens `name` for writing inside the staging area.
    pub fn create(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        let path = self.dir.join(name);
        let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    pub fn write_with<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
    {
        let mut w = self.create(name)?;
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    /// Moves every staged file into the output directory and writes the
    /// manifest last.
    pub fn commit(self, config: serde_json::Value, duration_seconds: f64) -> Result<Manifest> {
        let mut files = Vec::new();
        for name in &self.files {
            let dest = self.out.join(name);
            fs::rename(self.dir.join(name), &dest).with_context(|| format!("moving {name} into place"))?;
            files.push(FileEntry::hash(&self.out, name)?);
        }
        fs::remove_dir(&self.dir)?;
        let manifest = Manifest {
            version: maxent_hjb::VERSION.to_string(),
            config,
            duration_seconds,
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.out.join(MANIFEST), text)?;
        Ok(manifest)
    }

    /// Removes everything this run produced.
    pub fn abandon(self) {
        let _ = fs::remove_dir_all(&self.dir);
        if self.created_out {
            let _ = fs::remove_dir(&self.out);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileEntry {
    fn hash(dir: &Path, name: &str) -> Result<Self> {
        let data = fs::read(dir.join(name))?;
        Ok(Self {
            path: name.to_string(),
            bytes: data.len() as u64,
            sha256: hex::encode(Sha256::digest(&data)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: serde_json::Value,
    pub duration_seconds: f64,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Re-hashes every listed file.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for entry in &self.files {
            let now = FileEntry::hash(dir, &entry.path).with_context(|| format!("reading {}", entry.path))?;
            if &now != entry {
                bail!("{} does not match its manifest entry", entry.path);
            }
        }
        Ok(())
    }
}
