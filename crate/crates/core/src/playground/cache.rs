//! Three-tier cognitive cache: cross-run wisdom (prefetched at start),
//! per-round knowledge, and the run's own distilled wisdom.
//!
//! Layout under the cache root:
//!
//! ```text
//! wisdom/000001-wisdom.txt              cross-run, one file per promoting run
//! runs/<run_id>/rounds/000003-round.txt one file per promoted round
//! runs/<run_id>/wisdom.txt              this run's wisdom
//! ```

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read cache record {path}: {reason}")]
    CacheReadError { path: PathBuf, reason: String },
    #[error("run wisdom already promoted for this run")]
    DoubleRunPromotion,
    #[error("round {0} already promoted")]
    DuplicateRound(u32),
    #[error("round index must be at least 1")]
    InvalidRound,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Default)]
struct State {
    rounds: Vec<u32>,
    run_promoted: bool,
}

#[derive(Debug)]
pub struct CognitiveCache {
    root: PathBuf,
    run_id: String,
    state: Mutex<State>,
}

fn write_new(path: &Path, text: &str) -> Result<(), CacheError> {
    let mut file = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(io_err(path))?;
    file.write_all(text.as_bytes()).map_err(io_err(path))?;
    file.sync_all().map_err(io_err(path))
}

fn read_record(path: &Path) -> Result<String, CacheError> {
    let bytes = std::fs::read(path).map_err(|e| CacheError::CacheReadError {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    String::from_utf8(bytes).map_err(|e| CacheError::CacheReadError {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// `(sequence, path)` of files in `dir` named `<digits>-<suffix>`, ascending.
fn numbered(dir: &Path, suffix: &str) -> Result<Vec<(u64, PathBuf)>, CacheError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(seq) = name.strip_suffix(suffix).and_then(|s| s.strip_suffix('-')) else {
            continue;
        };
        if let Ok(n) = seq.parse::<u64>() {
            out.push((n, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

impl CognitiveCache {
    pub fn open(root: impl Into<PathBuf>, run_id: impl Into<String>) -> Result<Self, CacheError> {
        let cache = Self {
            root: root.into(),
            run_id: run_id.into(),
            state: Mutex::default(),
        };
        for dir in [cache.wisdom_dir(), cache.rounds_dir()] {
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(cache)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    fn wisdom_dir(&self) -> PathBuf {
        self.root.join("wisdom")
    }

    fn run_dir(&self) -> PathBuf {
        self.root.join("runs").join(&self.run_id)
    }

    fn rounds_dir(&self) -> PathBuf {
        self.run_dir().join("rounds")
    }

    /// Wisdom promoted by earlier runs, newest first. The task is accepted
    /// for interface symmetry; every record is returned.
    pub fn prefetch(&self, _task: &str) -> Result<Vec<String>, CacheError> {
        let mut records = numbered(&self.wisdom_dir(), "wisdom.txt")?;
        records.reverse();
        records.iter().map(|(_, p)| read_record(p)).collect()
    }

    pub fn promote_round(&self, round: u32, findings: &str) -> Result<PathBuf, CacheError> {
        if round == 0 {
            return Err(CacheError::InvalidRound);
        }
        let mut state = self.state.lock().expect("cache lock");
        if state.rounds.contains(&round) {
            return Err(CacheError::DuplicateRound(round));
        }
        let path = self.rounds_dir().join(format!("{round:06}-round.txt"));
        write_new(&path, findings)?;
        state.rounds.push(round);
        Ok(path)
    }

    /// `(round, findings)` records of this run in round order.
    pub fn round_records(&self) -> Result<Vec<(u32, String)>, CacheError> {
        numbered(&self.rounds_dir(), "round.txt")?
            .into_iter()
            .map(|(n, p)| Ok((n as u32, read_record(&p)?)))
            .collect()
    }

    /// Writes the run's wisdom and publishes it to the cross-run store.
    pub fn promote_run(&self, wisdom: &str) -> Result<PathBuf, CacheError> {
        let mut state = self.state.lock().expect("cache lock");
        let own = self.run_dir().join("wisdom.txt");
        if state.run_promoted || own.exists() {
            return Err(CacheError::DoubleRunPromotion);
        }
        write_new(&own, wisdom)?;
        state.run_promoted = true;

        let dir = self.wisdom_dir();
        let mut seq = numbered(&dir, "wisdom.txt")?.last().map(|(n, _)| n + 1).unwrap_or(1);
        loop {
            let path = dir.join(format!("{seq:06}-wisdom.txt"));
            match write_new(&path, wisdom) {
                Ok(()) => {
                    if let Ok(d) = File::open(&dir) {
                        let _ = d.sync_all();
                    }
                    return Ok(path);
                }
                Err(CacheError::Io { source, .. }) if source.kind() == std::io::ErrorKind::AlreadyExists => seq += 1,
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_and_double_promotion() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CognitiveCache::open(dir.path(), "r1").unwrap();
        assert!(cache.prefetch("t").unwrap().is_empty());
        for r in 1..=3 {
            cache.promote_round(r, &format!("finding {r}")).unwrap();
        }
        let rounds: Vec<u32> = cache.round_records().unwrap().into_iter().map(|(r, _)| r).collect();
        assert_eq!(rounds, [1, 2, 3]);
        assert!(matches!(
            cache.promote_round(2, "x"),
            Err(CacheError::DuplicateRound(2))
        ));
        assert!(matches!(cache.promote_round(0, "x"), Err(CacheError::InvalidRound)));
        cache.promote_run("W1").unwrap();
        assert!(matches!(cache.promote_run("W1"), Err(CacheError::DoubleRunPromotion)));
    }

    #[test]
    fn prefetch_newest_first() {
        let dir = tempfile::tempdir().unwrap();
        for (run, w) in [("a", "W1"), ("b", "W2")] {
            CognitiveCache::open(dir.path(), run).unwrap().promote_run(w).unwrap();
        }
        let next = CognitiveCache::open(dir.path(), "c").unwrap();
        assert_eq!(next.prefetch("t").unwrap(), ["W2", "W1"]);
    }

    #[test]
    fn corrupt_record_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CognitiveCache::open(dir.path(), "r").unwrap();
        let bad = dir.path().join("wisdom").join("000001-wisdom.txt");
        std::fs::write(&bad, [0xff, 0xfe, 0x00]).unwrap();
        match cache.prefetch("t") {
            Err(CacheError::CacheReadError { path, .. }) => assert_eq!(path, bad),
            other => panic!("{other:?}"),
        }
    }
}
