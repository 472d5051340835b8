use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Output directory with the fixed layout every command writes into.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> CliResult<RunDir> {
        std::fs::create_dir_all(root).map_err(|e| CliError::Data(format!("{}: {e}", root.display())))?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    pub fn ensure(&self, rel: impl AsRef<Path>) -> CliResult<PathBuf> {
        let p = self.path(rel);
        std::fs::create_dir_all(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        Ok(p)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// SHA-256 over length-prefixed parts, hex encoded.
pub fn content_hash<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// True when `dir/cache.key` holds `key` and every listed output exists.
pub fn cache_hit(dir: &Path, key: &str, outputs: &[&str]) -> bool {
    std::fs::read_to_string(dir.join("cache.key")).is_ok_and(|k| k.trim() == key) && outputs.iter().all(|o| dir.join(o).exists())
}

pub fn store_key(dir: &Path, key: &str) -> CliResult<()> {
    write_text(&dir.join("cache.key"), &format!("{key}\n"))
}

/// Maps `f` over `items` on up to `jobs` threads; results keep input order.
pub fn parallel_map<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("worker panicked").into_iter().map(|r| r.expect("every slot filled")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct Failure {
    pub protein_id: String,
    pub stage: String,
    pub reason: String,
}

/// Writes `failures.json` into `dir`, empty list included.
pub fn write_failures(dir: &Path, failures: &[Failure]) -> CliResult<()> {
    for f in failures {
        log::warn!("{} failed during {}: {}", f.protein_id, f.stage, f.reason);
    }
    write_json(&dir.join("failures.json"), failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u64> = (0..97).collect();
        let one = parallel_map(1, &items, |i, v| (i as u64) * 1000 + v * v);
        let four = parallel_map(4, &items, |i, v| (i as u64) * 1000 + v * v);
        assert_eq!(one, four);
        assert!(parallel_map(3, &Vec::<u8>::new(), |_, v| *v).is_empty());
    }

    #[test]
    fn hash_separates_parts() {
        let a = content_hash([b"ab".as_slice(), b"c".as_slice()]);
        let b = content_hash([b"a".as_slice(), b"bc".as_slice()]);
        assert_ne!(a, b);
        assert_eq!(a.len(), 64);
        assert_eq!(a, content_hash([b"ab".as_slice(), b"c".as_slice()]));
    }
}
