use std::fs;
use std::path::{Path, PathBuf};

use super::{atomic_write, read_checkpoint, write_checkpoint};
use crate::error::{Error, Result};
use crate::numkit::ModelCheckpoint;

pub const DONE_MARKER: &str = "DONE";
const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

/// Where an interrupted run picks up.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResumePoint {
    pub last_done: Option<String>,
    /// `None` when every planned stage is complete.
    pub next: Option<String>,
}

/// An experiment root with one subdirectory per stage. A stage counts as
/// complete only once its `DONE` marker exists; the marker is written last.
#[derive(Clone, Debug)]
pub struct ExperimentDir {
    root: PathBuf,
}

impl ExperimentDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(ExperimentDir { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(Error::io(
                &root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "experiment directory does not exist"),
            ));
        }
        Ok(ExperimentDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    pub fn checkpoint_path(&self, stage: &str) -> PathBuf {
        self.stage_dir(stage).join(CHECKPOINT_FILE)
    }

    pub fn is_done(&self, stage: &str) -> bool {
        self.stage_dir(stage).join(DONE_MARKER).is_file()
    }

    /// Marks `stage` complete. The marker records the stage's checkpoint id
    /// when there is one.
    pub fn mark_done(&self, stage: &str, checkpoint_id: Option<&str>) -> Result<()> {
        let body = checkpoint_id.map(|id| format!("{id}\n")).unwrap_or_default();
        atomic_write(&self.stage_dir(stage).join(DONE_MARKER), body.as_bytes())
    }

    pub fn save_checkpoint(&self, stage: &str, ckpt: &ModelCheckpoint) -> Result<()> {
        write_checkpoint(&self.checkpoint_path(stage), ckpt)
    }

    /// Checkpoint of a completed stage. `producer` names the command that
    /// creates the stage, for the error message.
    pub fn load_checkpoint(&self, stage: &str, producer: &str) -> Result<ModelCheckpoint> {
        if !self.is_done(stage) {
            return Err(Error::MissingStage {
                stage: stage.into(),
                producer: producer.into(),
            });
        }
        let path = self.checkpoint_path(stage);
        if !path.is_file() {
            return Err(Error::Inconsistent(format!(
                "{stage} is marked done but has no checkpoint"
            )));
        }
        read_checkpoint(&path)
    }

    /// Finds the first incomplete stage of `plan`. Fails when a completed
    /// stage lacks its checkpoint or follows an incomplete one.
    pub fn resume_scan(&self, plan: &[String]) -> Result<ResumePoint> {
        let mut last_done = None;
        let mut next = None;
        for stage in plan {
            let done = self.is_done(stage);
            if done && !self.checkpoint_path(stage).is_file() {
                return Err(Error::Inconsistent(format!(
                    "{stage} is marked done but has no checkpoint"
                )));
            }
            match (&next, done) {
                (None, true) => last_done = Some(stage.clone()),
                (None, false) => next = Some(stage.clone()),
                (Some(gap), true) => {
                    return Err(Error::Inconsistent(format!("{stage} is marked done but {gap} is not")));
                }
                (Some(_), false) => {}
            }
        }
        Ok(ResumePoint { last_done, next })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(n: usize) -> Vec<String> {
        let mut p = vec!["pretrain".to_string(), "finetune".to_string()];
        p.extend((1..=n).map(|i| format!("dust-{i}")));
        p
    }

    fn fake_done(exp: &ExperimentDir, stage: &str) {
        atomic_write(&exp.checkpoint_path(stage), b"x").unwrap();
        exp.mark_done(stage, None).unwrap();
    }

    #[test]
    fn fresh_directory_starts_with_pretraining() {
        let dir = tempfile::tempdir().unwrap();
        let exp = ExperimentDir::create(dir.path()).unwrap();
        let r = exp.resume_scan(&plan(3)).unwrap();
        assert_eq!(r.last_done, None);
        assert_eq!(r.next.as_deref(), Some("pretrain"));
    }

    #[test]
    fn resumes_after_last_done_stage() {
        let dir = tempfile::tempdir().unwrap();
        let exp = ExperimentDir::create(dir.path()).unwrap();
        for s in ["pretrain", "finetune", "dust-1", "dust-2"] {
            fake_done(&exp, s);
        }
        let r = exp.resume_scan(&plan(5)).unwrap();
        assert_eq!(r.last_done.as_deref(), Some("dust-2"));
        assert_eq!(r.next.as_deref(), Some("dust-3"));
        assert_eq!(exp.resume_scan(&plan(2)).unwrap().next, None);
    }

    #[test]
    fn done_without_checkpoint_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let exp = ExperimentDir::create(dir.path()).unwrap();
        fake_done(&exp, "pretrain");
        exp.mark_done("finetune", None).unwrap();
        assert!(matches!(exp.resume_scan(&plan(1)), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn gap_in_completed_stages_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let exp = ExperimentDir::create(dir.path()).unwrap();
        fake_done(&exp, "pretrain");
        fake_done(&exp, "dust-1");
        assert!(matches!(exp.resume_scan(&plan(1)), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn missing_stage_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let exp = ExperimentDir::create(dir.path()).unwrap();
        let err = exp.load_checkpoint("finetune", "finetune").unwrap_err();
        assert!(err.to_string().contains("dust finetune"));
    }
}
