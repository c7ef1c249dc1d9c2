//! Run directories: one per config hash and seed, guarded by a lock file.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const LOCK_FILE: &str = ".lock";

pub struct RunDir {
    root: PathBuf,
    force: bool,
}

impl RunDir {
    /// Creates the directory, takes the lock and records the resolved config.
    pub fn open(cfg: &ExperimentConfig, force: bool) -> Result<Self, CliError> {
        let root = cfg.run_dir();
        for sub in ["data", "checkpoints", "logs", "translations", "reports"] {
            fs::create_dir_all(root.join(sub))?;
        }
        let lock = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => writeln!(f, "{}", std::process::id())?,
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(CliError::Runtime(format!(
                    "{} is locked by another run (delete {} if that run is gone)",
                    root.display(),
                    lock.display()
                )))
            }
            Err(e) => return Err(e.into()),
        }
        let dir = Self { root, force };
        fs::write(dir.path("config.txt"), cfg.to_text())?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Asks before replacing existing outputs. Without a terminal, `--force` is required.
    pub fn confirm_overwrite(&self, outputs: &[PathBuf]) -> Result<(), CliError> {
        let existing: Vec<&PathBuf> = outputs.iter().filter(|p| p.exists()).collect();
        if existing.is_empty() || self.force {
            return Ok(());
        }
        let names: Vec<String> = existing.iter().map(|p| p.display().to_string()).collect();
        if !io::stdin().is_terminal() {
            return Err(CliError::Runtime(format!(
                "outputs already exist: {}; rerun with --force to replace them",
                names.join(", ")
            )));
        }
        eprint!("overwrite {}? [y/N] ", names.join(", "));
        io::stderr().flush()?;
        let mut answer = String::new();
        io::stdin().lock().read_line(&mut answer)?;
        if matches!(answer.trim(), "y" | "Y" | "yes") {
            Ok(())
        } else {
            Err(CliError::Runtime("not overwriting existing outputs".into()))
        }
    }

    /// Writes `logs/<stage>.inputs`: the library version and a digest of every input file.
    pub fn record_inputs(&self, stage: &str, inputs: &[PathBuf]) -> Result<(), CliError> {
        let mut text = format!("biagree {}\n", env!("CARGO_PKG_VERSION"));
        for p in inputs {
            let digest = hex::encode(Sha256::digest(fs::read(p)?));
            let rel = p.strip_prefix(&self.root).unwrap_or(p);
            text.push_str(&format!("{}\tsha256:{digest}\n", rel.display()));
        }
        fs::write(self.path(&format!("logs/{stage}.inputs")), text)?;
        Ok(())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK_FILE));
    }
}

pub fn write_lines(path: &Path, lines: &[String]) -> Result<(), CliError> {
    let mut f = io::BufWriter::new(File::create(path)?);
    for l in lines {
        writeln!(f, "{l}")?;
    }
    f.flush()?;
    Ok(())
}
