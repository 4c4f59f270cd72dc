use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use emcomm_core::numcore::Checkpoint;
use emcomm_core::training::{AnnotationRecord, MetricsRow, RunManifest};

use crate::config::usage;

/// Layout: `manifest.json`, `metrics.csv`, `checkpoints/`,
/// `annotations.jsonl`, `human_eval.jsonl`.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Creates a fresh run directory; an existing path is refused.
    pub fn create(path: &Path) -> Result<Self> {
        if path.exists() {
            return Err(usage(format!("{} already exists; refusing to overwrite", path.display())));
        }
        fs::create_dir_all(path.join("checkpoints")).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn open(path: &Path) -> Result<Self> {
        if !path.join("manifest.json").is_file() {
            return Err(usage(format!("{} is not a run directory", path.display())));
        }
        Ok(Self { path: path.to_path_buf() })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_manifest(&self, m: &RunManifest) -> Result<()> {
        fs::write(self.file("manifest.json"), serde_json::to_string_pretty(m)?)?;
        Ok(())
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        let text = fs::read_to_string(self.file("manifest.json"))?;
        Ok(serde_json::from_str(&text).context("parsing manifest.json")?)
    }

    pub fn start_metrics(&self) -> Result<()> {
        let mut f = File::create(self.file("metrics.csv"))?;
        writeln!(f, "{}", MetricsRow::CSV_HEADER)?;
        Ok(())
    }

    /// One row per call, written with a single `write` and flushed.
    pub fn append_metrics(&self, row: &MetricsRow) -> Result<()> {
        let mut f = OpenOptions::new().append(true).open(self.file("metrics.csv"))?;
        f.write_all(format!("{}\n", row.to_csv()).as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn append_annotations(&self, records: &[AnnotationRecord]) -> Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.file("annotations.jsonl"))?;
        for r in records {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
        Ok(())
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.path.join("checkpoints").join(format!("{name}.json"))
    }

    pub fn round_name(round: usize) -> String {
        format!("round_{round:07}")
    }

    pub fn save_checkpoint(&self, name: &str, ckpt: &Checkpoint) -> Result<()> {
        ckpt.save(&self.checkpoint_path(name))?;
        Ok(())
    }

    /// The checkpoint for `round`, or the latest round checkpoint.
    pub fn load_checkpoint(&self, round: Option<usize>) -> Result<(String, Checkpoint)> {
        let name = match round {
            Some(r) => Self::round_name(r),
            None => {
                let mut names: Vec<String> = fs::read_dir(self.path.join("checkpoints"))?
                    .filter_map(|e| e.ok())
                    .filter_map(|e| e.file_name().into_string().ok())
                    .filter_map(|n| n.strip_suffix(".json").map(str::to_string))
                    .filter(|n| n.starts_with("round_"))
                    .collect();
                names.sort();
                names
                    .pop()
                    .ok_or_else(|| usage(format!("{} has no round checkpoints", self.path.display())))?
            }
        };
        let path = self.checkpoint_path(&name);
        if !path.is_file() {
            return Err(usage(format!("no checkpoint {}", path.display())));
        }
        Ok((name, Checkpoint::load(&path)?))
    }
}
