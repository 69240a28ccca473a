//! Backend that shells out to an LLVM `opt`-style tool, one pass per call.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use super::EnvError;
use crate::ir::{instruction_count, parse_ir};

pub const OPT_PATH_ENV: &str = "PASS_PILOT_OPT";

/// Resolves the optimizer executable: explicit path, then the
/// `PASS_PILOT_OPT` environment variable, then `opt` on PATH.
pub fn resolve_opt_path(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Ok(p) = std::env::var(OPT_PATH_ENV) {
        if !p.is_empty() {
            return PathBuf::from(p);
        }
    }
    PathBuf::from("opt")
}

type OzCache = Arc<Mutex<HashMap<[u8; 32], u64>>>;

pub struct RealBackend {
    opt_path: PathBuf,
    work_dir: tempfile::TempDir,
    oz_cache: OzCache,
}

impl RealBackend {
    pub fn new(explicit_path: Option<&Path>) -> Result<Self, EnvError> {
        Self::with_cache(explicit_path, Arc::new(Mutex::new(HashMap::new())))
    }

    /// Backends for parallel workers share one `-Oz` cache.
    pub fn with_cache(explicit_path: Option<&Path>, oz_cache: OzCache) -> Result<Self, EnvError> {
        let opt_path = resolve_opt_path(explicit_path);
        let work_dir = tempfile::tempdir()
            .map_err(|e| EnvError::Backend(format!("cannot create work dir: {e}")))?;
        Ok(RealBackend {
            opt_path,
            work_dir,
            oz_cache,
        })
    }

    pub fn shared_cache(&self) -> OzCache {
        Arc::clone(&self.oz_cache)
    }

    pub fn opt_path(&self) -> &Path {
        &self.opt_path
    }

    /// Runs the tool as `opt <flags> -S in.ll -o out.ll` and returns the
    /// output IR text.
    pub fn run_passes(&self, ir_text: &str, flags: &[&str]) -> Result<String, EnvError> {
        let in_path = self.work_dir.path().join("in.ll");
        let out_path = self.work_dir.path().join("out.ll");
        std::fs::write(&in_path, ir_text)
            .map_err(|e| EnvError::Backend(format!("write temp input: {e}")))?;
        let output = Command::new(&self.opt_path)
            .args(flags)
            .arg("-S")
            .arg(&in_path)
            .arg("-o")
            .arg(&out_path)
            .output()
            .map_err(|e| {
                EnvError::Backend(format!(
                    "cannot run optimizer {}: {e}",
                    self.opt_path.display()
                ))
            })?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            let first = stderr.lines().next().unwrap_or("no stderr");
            return Err(EnvError::Backend(format!(
                "optimizer exited with {}: {first}",
                output.status
            )));
        }
        std::fs::read_to_string(&out_path)
            .map_err(|e| EnvError::Backend(format!("read temp output: {e}")))
    }

    /// Instruction count after the tool's `-Oz` pipeline, cached by input
    /// content hash.
    pub fn oz_count(&self, ir_text: &str) -> Result<u64, EnvError> {
        let key: [u8; 32] = Sha256::digest(ir_text.as_bytes()).into();
        if let Some(&count) = self.oz_cache.lock().unwrap().get(&key) {
            return Ok(count);
        }
        let out = self.run_passes(ir_text, &["-Oz"])?;
        let module = parse_ir(&out)?;
        let count = instruction_count(&module);
        self.oz_cache.lock().unwrap().insert(key, count);
        Ok(count)
    }
}
