//! Project directory: content-addressed artifact manifest, atomic writes,
//! staleness tracking and the single-writer lock.
//!
//! Layout:
//!
//! ```text
//! <root>/qda.toml          configuration
//! <root>/manifest.tsv      one line per artifact, sorted by name
//! <root>/artifacts/        artifact files
//! <root>/input/            analyst-provided inputs
//! <root>/.qda.lock         present while a writer holds the project
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use log::debug;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const ARTIFACT_DIR: &str = "artifacts";
pub const INPUT_DIR: &str = "input";
pub const LOCK_FILE: &str = ".qda.lock";
const MANIFEST_HEADER: &str = "# name\tfile\tsha256\tstage\tdict_version\tinputs";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    /// Path relative to the project root.
    pub file: String,
    pub sha256: String,
    pub stage: String,
    pub dict_version: Option<u64>,
    /// Input artifact name → its hash when this artifact was produced.
    pub inputs: BTreeMap<String, String>,
}

impl ManifestEntry {
    fn to_line(&self) -> String {
        let inputs: Vec<String> = self.inputs.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.name,
            self.file,
            self.sha256,
            self.stage,
            self.dict_version.map_or_else(|| "-".to_string(), |v| v.to_string()),
            if inputs.is_empty() { "-".to_string() } else { inputs.join(";") }
        )
    }

    fn from_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::parse("manifest", format!("expected 6 fields: `{line}`")));
        }
        let dict_version = match f[4] {
            "-" => None,
            v => Some(v.parse().map_err(|_| Error::parse("manifest", format!("bad version `{v}`")))?),
        };
        let mut inputs = BTreeMap::new();
        if f[5] != "-" {
            for item in f[5].split(';') {
                let (k, v) = item
                    .split_once('=')
                    .ok_or_else(|| Error::parse("manifest", format!("bad input `{item}`")))?;
                inputs.insert(k.to_string(), v.to_string());
            }
        }
        Ok(ManifestEntry {
            name: f[0].to_string(),
            file: f[1].to_string(),
            sha256: f[2].to_string(),
            stage: f[3].to_string(),
            dict_version,
            inputs,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for e in self.entries.values() {
            let _ = writeln!(s, "{}", e.to_line());
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for line in text.lines().filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let e = ManifestEntry::from_line(line)?;
            m.entries.insert(e.name.clone(), e);
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Freshness {
    Fresh,
    Stale,
    Missing,
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic_from(path, &mut &bytes[..]).map(|_| ())
}

/// Streams `reader` into `path` atomically and returns the content hash.
/// On any error the temporary file is removed and `path` is untouched.
pub fn write_atomic_from(path: &Path, reader: &mut dyn Read) -> Result<String> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));
    let result = (|| -> io::Result<String> {
        let mut f = File::create(&tmp)?;
        let mut hasher = Sha256::new();
        let mut buf = [0u8; 64 * 1024];
        loop {
            let n = reader.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            f.write_all(&buf[..n])?;
        }
        f.sync_all()?;
        Ok(hex::encode(hasher.finalize()))
    })();
    match result {
        Ok(hash) => {
            fs::rename(&tmp, path)?;
            Ok(hash)
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e.into())
        }
    }
}

fn check_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(format!("invalid artifact name `{name}`")))
    }
}

#[derive(Debug)]
pub struct Project {
    root: PathBuf,
    manifest: Manifest,
}

impl Project {
    /// Creates the directory skeleton (idempotent) and opens the project.
    pub fn init(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join(ARTIFACT_DIR))?;
        fs::create_dir_all(root.join(INPUT_DIR))?;
        let manifest = root.join(MANIFEST_FILE);
        if !manifest.exists() {
            write_atomic(&manifest, Manifest::default().to_text().as_bytes())?;
        }
        Self::open(root)
    }

    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(Error::NotFound(format!("no project at {}", root.display())));
            }
            Err(e) => return Err(e.into()),
        };
        Ok(Project {
            root: root.to_path_buf(),
            manifest: Manifest::parse(&text)?,
        })
    }

    /// Re-reads the manifest from disk.
    pub fn reload(&mut self) -> Result<()> {
        *self = Self::open(&self.root)?;
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn entry(&self, name: &str) -> Option<&ManifestEntry> {
        self.manifest.entries.get(name)
    }

    pub fn hash(&self, name: &str) -> Option<&str> {
        self.entry(name).map(|e| e.sha256.as_str())
    }

    pub fn artifact_path(&self, name: &str) -> PathBuf {
        self.root.join(ARTIFACT_DIR).join(name)
    }

    pub fn input_path(&self) -> PathBuf {
        self.root.join(INPUT_DIR)
    }

    fn input_hashes(&self, inputs: &[&str]) -> Result<BTreeMap<String, String>> {
        inputs
            .iter()
            .map(|i| {
                self.hash(i)
                    .map(|h| (i.to_string(), h.to_string()))
                    .ok_or_else(|| Error::NotFound(format!("input artifact `{i}`")))
            })
            .collect()
    }

    fn commit(&mut self, entry: ManifestEntry) -> Result<ManifestEntry> {
        let mut next = self.manifest.clone();
        next.entries.insert(entry.name.clone(), entry.clone());
        write_atomic(&self.root.join(MANIFEST_FILE), next.to_text().as_bytes())?;
        self.manifest = next;
        Ok(entry)
    }

    /// Saves an artifact produced by `stage` from the named inputs. Artifacts
    /// downstream of this one become stale when the hash changes.
    pub fn save_artifact(
        &mut self,
        name: &str,
        content: &[u8],
        stage: &str,
        inputs: &[&str],
        dict_version: Option<u64>,
    ) -> Result<ManifestEntry> {
        self.save_artifact_from(name, &mut &content[..], stage, inputs, dict_version)
    }

    pub fn save_artifact_from(
        &mut self,
        name: &str,
        reader: &mut dyn Read,
        stage: &str,
        inputs: &[&str],
        dict_version: Option<u64>,
    ) -> Result<ManifestEntry> {
        check_name(name)?;
        let input_hashes = self.input_hashes(inputs)?;
        let sha256 = write_atomic_from(&self.artifact_path(name), reader)?;
        debug!("saved {name} ({sha256})");
        self.commit(ManifestEntry {
            name: name.to_string(),
            file: format!("{ARTIFACT_DIR}/{name}"),
            sha256,
            stage: stage.to_string(),
            dict_version,
            inputs: input_hashes,
        })
    }

    /// Rewrites an existing artifact in place, keeping its stage and recorded
    /// inputs. Used for analyst edits that must not make the artifact itself
    /// stale while still invalidating everything downstream of it.
    pub fn update_artifact(&mut self, name: &str, content: &[u8], dict_version: Option<u64>) -> Result<ManifestEntry> {
        let mut entry = self
            .entry(name)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("artifact `{name}`")))?;
        entry.sha256 = write_atomic_from(&self.root.join(&entry.file), &mut &content[..])?;
        if dict_version.is_some() {
            entry.dict_version = dict_version;
        }
        self.commit(entry)
    }

    /// Records an external input (file or directory digest) under `name`.
    pub fn record_source(&mut self, name: &str, file: &str, sha256: &str) -> Result<ManifestEntry> {
        check_name(name)?;
        if let Some(e) = self.entry(name) {
            if e.sha256 == sha256 && e.file == file {
                return Ok(e.clone());
            }
        }
        self.commit(ManifestEntry {
            name: name.to_string(),
            file: file.to_string(),
            sha256: sha256.to_string(),
            stage: "source".to_string(),
            dict_version: None,
            inputs: BTreeMap::new(),
        })
    }

    pub fn remove_entry(&mut self, name: &str) -> Result<()> {
        if self.manifest.entries.contains_key(name) {
            let mut next = self.manifest.clone();
            next.entries.remove(name);
            write_atomic(&self.root.join(MANIFEST_FILE), next.to_text().as_bytes())?;
            self.manifest = next;
        }
        Ok(())
    }

    /// Byte-exact artifact content after hash verification. Stale artifacts
    /// are refused unless `allow_stale`.
    pub fn load_artifact(&self, name: &str, allow_stale: bool) -> Result<Vec<u8>> {
        let entry = self
            .entry(name)
            .ok_or_else(|| Error::NotFound(format!("artifact `{name}`")))?;
        let bytes = match fs::read(self.root.join(&entry.file)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(Error::NotFound(format!("artifact file `{}`", entry.file)));
            }
            Err(e) => return Err(e.into()),
        };
        let actual = sha256_hex(&bytes);
        if actual != entry.sha256 {
            return Err(Error::Corrupt {
                name: name.to_string(),
                expected: entry.sha256.clone(),
                actual,
            });
        }
        if !allow_stale && self.freshness(name) == Freshness::Stale {
            return Err(Error::Stale(format!("artifact `{name}` is stale; rerun stage `{}`", entry.stage)));
        }
        Ok(bytes)
    }

    pub fn load_text(&self, name: &str, allow_stale: bool) -> Result<String> {
        String::from_utf8(self.load_artifact(name, allow_stale)?)
            .map_err(|_| Error::parse("artifact", format!("`{name}` is not UTF-8")))
    }

    /// An artifact is stale when an input is missing, has a different hash
    /// than recorded, or is itself stale.
    pub fn freshness(&self, name: &str) -> Freshness {
        let mut memo = HashMap::new();
        self.freshness_inner(name, &mut Vec::new(), &mut memo)
    }

    fn freshness_inner<'a>(
        &'a self,
        name: &'a str,
        path: &mut Vec<&'a str>,
        memo: &mut HashMap<&'a str, Freshness>,
    ) -> Freshness {
        if let Some(&f) = memo.get(name) {
            return f;
        }
        let Some(entry) = self.entry(name) else {
            return Freshness::Missing;
        };
        if path.contains(&name) {
            // a cycle cannot be produced through save_artifact; treat as stale
            return Freshness::Stale;
        }
        path.push(name);
        let stale = entry.inputs.iter().any(|(input, hash)| {
            self.hash(input) != Some(hash.as_str()) || self.freshness_inner(input, path, memo) != Freshness::Fresh
        });
        path.pop();
        let f = if stale { Freshness::Stale } else { Freshness::Fresh };
        memo.insert(name, f);
        f
    }

    pub fn stale_artifacts(&self) -> Vec<String> {
        self.manifest
            .entries
            .keys()
            .filter(|n| self.freshness(n) == Freshness::Stale)
            .cloned()
            .collect()
    }

    /// Checks every artifact file against its recorded hash.
    pub fn verify(&self) -> Vec<Error> {
        self.manifest
            .entries
            .values()
            .filter(|e| e.stage != "source")
            .filter_map(|e| self.load_artifact(&e.name, true).err())
            .collect()
    }

    pub fn lock(&self) -> Result<ProjectLock> {
        ProjectLock::acquire(&self.root)
    }
}

/// Exclusive writer lock; released on drop.
#[derive(Debug)]
pub struct ProjectLock {
    path: PathBuf,
}

impl ProjectLock {
    pub fn acquire(root: &Path) -> Result<Self> {
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(ProjectLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for ProjectLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Digest over every regular file under `dir` (relative path and content),
/// in path order. A missing directory hashes like an empty one.
pub fn hash_dir(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let bytes = fs::read(dir.join(&rel))?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(Sha256::digest(&bytes));
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(base: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e.into()),
    };
    for entry in entries {
        let entry = entry?;
        let path = entry.path();
        if entry.file_type()?.is_dir() {
            collect_files(base, &path, out)?;
        } else {
            let rel = path.strip_prefix(base).expect("under base").to_string_lossy().replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct FailingReader {
        sent: usize,
    }

    impl Read for FailingReader {
        fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
            if self.sent >= 10 {
                return Err(io::Error::other("disk pulled"));
            }
            let n = buf.len().min(5);
            buf[..n].fill(b'x');
            self.sent += n;
            Ok(n)
        }
    }

    fn project() -> (tempfile::TempDir, Project) {
        let dir = tempfile::tempdir().unwrap();
        let p = Project::init(dir.path()).unwrap();
        (dir, p)
    }

    #[test]
    fn round_trip_and_reopen() {
        let (dir, mut p) = project();
        p.save_artifact("a.csv", b"x,y\n1,2\n", "tdm", &[], None).unwrap();
        assert_eq!(p.load_artifact("a.csv", false).unwrap(), b"x,y\n1,2\n");
        let q = Project::open(dir.path()).unwrap();
        assert_eq!(q.manifest(), p.manifest());
        assert!(matches!(p.load_artifact("nope", false), Err(Error::NotFound(_))));
    }

    #[test]
    fn staleness_propagates_transitively() {
        let (_d, mut p) = project();
        p.save_artifact("dict", b"v1", "vocab", &[], Some(1)).unwrap();
        p.save_artifact("tdm", b"m", "tdm", &["dict"], Some(1)).unwrap();
        p.save_artifact("graph", b"g", "graph", &["tdm"], None).unwrap();
        assert_eq!(p.freshness("graph"), Freshness::Fresh);

        p.save_artifact("dict", b"v1", "vocab", &[], Some(1)).unwrap();
        assert_eq!(p.freshness("tdm"), Freshness::Fresh);

        p.save_artifact("dict", b"v2", "vocab", &[], Some(2)).unwrap();
        assert_eq!(p.freshness("tdm"), Freshness::Stale);
        assert_eq!(p.freshness("graph"), Freshness::Stale);
        assert!(matches!(p.load_artifact("tdm", false), Err(Error::Stale(_))));
        assert!(p.load_artifact("tdm", true).is_ok());
        assert_eq!(p.stale_artifacts(), vec!["graph", "tdm"]);
    }

    #[test]
    fn interrupted_write_keeps_previous_version() {
        let (_d, mut p) = project();
        p.save_artifact("a", b"old", "s", &[], None).unwrap();
        let before = p.manifest().clone();
        let err = p.save_artifact_from("a", &mut FailingReader { sent: 0 }, "s", &[], None);
        assert!(matches!(err, Err(Error::Storage(_))));
        assert_eq!(p.manifest(), &before);
        assert_eq!(p.load_artifact("a", false).unwrap(), b"old");
        let leftovers: Vec<_> = fs::read_dir(p.root().join(ARTIFACT_DIR)).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn tampering_is_detected() {
        let (_d, mut p) = project();
        p.save_artifact("a", b"hello", "s", &[], None).unwrap();
        let path = p.artifact_path("a");
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(p.load_artifact("a", true), Err(Error::Corrupt { .. })));
        assert_eq!(p.verify().len(), 1);
    }

    #[test]
    fn lock_is_exclusive() {
        let (_d, p) = project();
        let held = p.lock().unwrap();
        assert!(matches!(p.lock(), Err(Error::Locked(_))));
        drop(held);
        assert!(p.lock().is_ok());
    }

    #[test]
    fn names_are_checked() {
        let (_d, mut p) = project();
        assert!(p.save_artifact("../x", b"", "s", &[], None).is_err());
        assert!(p.save_artifact("a\tb", b"", "s", &[], None).is_err());
        assert!(matches!(p.save_artifact("b", b"", "s", &["missing"], None), Err(Error::NotFound(_))));
    }

    #[test]
    fn dir_hash_tracks_content() {
        let d = tempfile::tempdir().unwrap();
        let empty = hash_dir(&d.path().join("none")).unwrap();
        assert_eq!(empty, hash_dir(d.path()).unwrap());
        fs::write(d.path().join("a.txt"), "1").unwrap();
        let h1 = hash_dir(d.path()).unwrap();
        fs::write(d.path().join("a.txt"), "2").unwrap();
        assert_ne!(h1, hash_dir(d.path()).unwrap());
    }
}
