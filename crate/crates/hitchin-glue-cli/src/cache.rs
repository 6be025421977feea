//! JSON solution cache keyed by `(K, solver-config hash)`.
//!
//! Entries are full solution records; a hit requires the stored schema
//! version and configuration to survive re-validation, so stale or
//! tampered files degrade to a miss with a warning instead of an error.

use std::path::{Path, PathBuf};

use hitchin_glue::{SolutionRecord, SolverConfig, TodaSolution};
use sha2::{Digest, Sha256};

/// Cache directory for this run: the HITCHIN_GLUE_CACHE environment
/// variable wins, then the `--cache` flag, then `.hitchin-glue-cache`;
/// `--no-cache` disables caching entirely.
pub fn resolve_dir(flag: Option<PathBuf>, no_cache: bool) -> Option<PathBuf> {
    if no_cache {
        return None;
    }
    if let Some(dir) = std::env::var_os("HITCHIN_GLUE_CACHE") {
        return Some(PathBuf::from(dir));
    }
    Some(flag.unwrap_or_else(|| PathBuf::from(".hitchin-glue-cache")))
}

/// Hex digest of the canonical configuration serialization, truncated to
/// 16 characters; the cache key and filename component.
pub fn config_hash(config: &SolverConfig) -> String {
    let json = serde_json::to_string(config).expect("solver config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn solution_path(dir: &Path, k: usize, hash: &str) -> PathBuf {
    dir.join(format!("toda_K{k}_{hash}.json"))
}

/// Cached solution for `(k, config)`, if a valid entry exists. Unparsable
/// or mismatched entries are reported on stderr and treated as misses.
pub fn lookup(dir: &Path, k: usize, config: &SolverConfig) -> Option<TodaSolution> {
    let path = solution_path(dir, k, &config_hash(config));
    let bytes = std::fs::read(&path).ok()?;
    let sol = serde_json::from_slice::<SolutionRecord>(&bytes)
        .ok()
        .and_then(|rec| TodaSolution::from_record(rec).ok());
    match sol {
        Some(sol) if sol.k() == k && sol.config() == config => Some(sol),
        _ => {
            eprintln!(
                "warning: discarding corrupt cache entry {}",
                path.display()
            );
            None
        }
    }
}

/// Stores a solution under its own `(K, config)` key, atomically.
pub fn store(dir: &Path, sol: &TodaSolution) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = solution_path(dir, sol.k(), &config_hash(sol.config()));
    let json = serde_json::to_vec_pretty(&sol.to_record()).expect("record serializes");
    atomic_write(&path, &json)?;
    Ok(path)
}

/// Write-temp-then-rename, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp.{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
