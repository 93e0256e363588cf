//! Per-stage manifests: which configuration produced which files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, IoContext, Result};

pub const FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Started,
    Completed,
    Failed,
}

/// Named group of seeded runs, e.g. one arm of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub label: String,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    /// Digest of the whole experiment configuration.
    pub config_hash: String,
    /// Digest of the inputs this stage depends on.
    pub stage_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub status: Status,
    pub started_unix: u64,
    pub ended_unix: Option<u64>,
    pub error: Option<String>,
    /// Paths relative to the manifest's directory.
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<RunEntry>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("harness".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("corpus_format".to_string(), "1".to_string()),
        ("checkpoint_format".to_string(), "1".to_string()),
    ])
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).at(&path)?;
        serde_json::from_str(&text).map(Some).map_err(|e| HarnessError::Stale {
            path,
            reason: format!("unreadable manifest: {e}"),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n").at(&path)
    }

    /// The completed manifest of an upstream stage whose inputs hash to
    /// `expected`.
    pub fn require(dir: &Path, stage: &'static str, expected: &str) -> Result<Self> {
        let missing = || HarnessError::MissingArtifact {
            path: dir.to_path_buf(),
            stage,
        };
        let m = Self::load(dir)?.ok_or_else(missing)?;
        if m.status != Status::Completed {
            return Err(missing());
        }
        if m.stage_hash != expected {
            return Err(HarnessError::Stale {
                path: dir.to_path_buf(),
                reason: format!("produced by a different configuration; rerun `{stage}`"),
            });
        }
        Ok(m)
    }
}

/// Outcome of preparing a stage directory.
pub enum Begin {
    /// A completed run with the same inputs exists.
    Reused(RunManifest),
    Fresh(StageRun),
}

/// A stage in progress; files are registered as they are produced.
pub struct StageRun {
    dir: PathBuf,
    manifest: RunManifest,
}

impl StageRun {
    /// Reuses a completed run with the same stage hash, overwrites it when
    /// `force` is set or it never completed, and refuses to mix outputs of
    /// a different configuration otherwise.
    pub fn begin(dir: &Path, stage: &str, stage_hash: String, config_hash: String, seed: u64, force: bool) -> Result<Begin> {
        if let Some(old) = RunManifest::load(dir)? {
            let intact = old.files.iter().all(|f| dir.join(f).exists());
            if !force && old.stage_hash == stage_hash && old.status == Status::Completed && intact {
                return Ok(Begin::Reused(old));
            }
            if !force && old.stage_hash != stage_hash && old.status == Status::Completed {
                return Err(HarnessError::Stale {
                    path: dir.to_path_buf(),
                    reason: "holds outputs of a different configuration; pass --force to overwrite".into(),
                });
            }
            for f in &old.files {
                let p = dir.join(f);
                match std::fs::remove_file(&p) {
                    Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e).at(p),
                    _ => {}
                }
            }
        }
        std::fs::create_dir_all(dir).at(dir)?;
        let manifest = RunManifest {
            stage: stage.to_string(),
            config_hash,
            stage_hash,
            seed,
            versions: versions(),
            status: Status::Started,
            started_unix: now(),
            ended_unix: None,
            error: None,
            files: Vec::new(),
            runs: Vec::new(),
        };
        manifest.save(dir)?;
        Ok(Begin::Fresh(Self {
            dir: dir.to_path_buf(),
            manifest,
        }))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Registers `rel` as an output and returns its full path.
    pub fn file(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).at(parent)?;
        }
        if !self.manifest.files.iter().any(|f| f == rel) {
            self.manifest.files.push(rel.to_string());
        }
        Ok(path)
    }

    pub fn add_run(&mut self, label: &str, seeds: Vec<u64>) {
        self.manifest.runs.push(RunEntry {
            label: label.to_string(),
            seeds,
        });
    }

    fn close(mut self, status: Status, error: Option<String>) -> Result<RunManifest> {
        self.manifest.status = status;
        self.manifest.error = error;
        self.manifest.ended_unix = Some(now());
        self.manifest.save(&self.dir)?;
        Ok(self.manifest)
    }

    /// Runs `body`, then marks the manifest completed or failed.
    pub fn run<T>(mut self, body: impl FnOnce(&mut Self) -> Result<T>) -> Result<(T, RunManifest)> {
        match body(&mut self) {
            Ok(v) => Ok((v, self.close(Status::Completed, None)?)),
            Err(e) => {
                self.close(Status::Failed, Some(e.to_string()))?;
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fresh(dir: &Path, hash: &str, force: bool) -> Result<Begin> {
        StageRun::begin(dir, "demo", hash.into(), "cfg".into(), 0, force)
    }

    fn complete(dir: &Path, hash: &str) {
        let Begin::Fresh(run) = fresh(dir, hash, true).unwrap() else { panic!("expected fresh") };
        run.run(|s| {
            std::fs::write(s.file("out.txt")?, hash).unwrap();
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn reuse_overwrite_and_refusal() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("stage");
        complete(&dir, "a");
        assert!(matches!(fresh(&dir, "a", false).unwrap(), Begin::Reused(_)));
        assert!(matches!(fresh(&dir, "b", false), Err(HarnessError::Stale { .. })));
        assert!(RunManifest::require(&dir, "demo", "a").is_ok());
        assert!(matches!(RunManifest::require(&dir, "demo", "b"), Err(HarnessError::Stale { .. })));
        complete(&dir, "b");
        let m = RunManifest::load(&dir).unwrap().unwrap();
        assert_eq!(m.files, vec!["out.txt"]);
        assert_eq!(std::fs::read_to_string(dir.join("out.txt")).unwrap(), "b");
        assert!(matches!(
            RunManifest::require(&tmp.path().join("nowhere"), "demo", "a"),
            Err(HarnessError::MissingArtifact { .. })
        ));
    }

    #[test]
    fn failures_are_recorded() {
        let tmp = tempfile::tempdir().unwrap();
        let Begin::Fresh(run) = fresh(tmp.path(), "a", false).unwrap() else { panic!() };
        let err = run.run(|_| -> Result<()> { Err(HarnessError::Config("boom".into())) });
        assert!(err.is_err());
        let m = RunManifest::load(tmp.path()).unwrap().unwrap();
        assert_eq!(m.status, Status::Failed);
        assert!(m.error.unwrap().contains("boom"));
        assert!(matches!(fresh(tmp.path(), "b", false).unwrap(), Begin::Fresh(_)));
    }
}
