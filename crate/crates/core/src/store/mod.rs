//! Encrypted append-only local store.
//!
//! Layout under the data directory (owner-only permissions):
//!
//! * `records.log`: sealed [`StoredRecord`] frames, see [`envelope`].
//! * `labels.map`: sealed `(handle, label)` pairs.
//! * `key`: the 32-byte record key. Deleting it makes every frame unreadable.

pub mod envelope;
mod summary;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chacha20poly1305::XChaCha20Poly1305;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{LabelHandle, Millis};
use crate::recall::LabelResolver;
use envelope::{Frame, Key};
pub use summary::{iso_week_of, summarize as summarize_records, DaySummary, TopContext, WeeklySummary};

pub const RECORDS_FILE: &str = "records.log";
pub const LABELS_FILE: &str = "labels.map";
pub const KEY_FILE: &str = "key";
const PURGE_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Event,
    StateChange,
    Nudge,
    Response,
    Cue,
    Summary,
    /// Serialized model parameters.
    Model,
    /// User preferences (they can hold goal text, so they stay sealed too).
    Preferences,
}

impl RecordKind {
    const ALL: [RecordKind; 8] = [
        RecordKind::Event,
        RecordKind::StateChange,
        RecordKind::Nudge,
        RecordKind::Response,
        RecordKind::Cue,
        RecordKind::Summary,
        RecordKind::Model,
        RecordKind::Preferences,
    ];

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub seq: u64,
    pub t: Millis,
    pub kind: RecordKind,
    pub body: serde_json::Value,
}

impl StoredRecord {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32);
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        out.push(self.kind.code());
        serde_json::to_writer(&mut out, &self.body).expect("JSON values always serialize");
        out
    }

    fn decode(p: &[u8]) -> Option<Self> {
        if p.len() < 17 {
            return None;
        }
        Some(StoredRecord {
            seq: u64::from_le_bytes(p[..8].try_into().ok()?),
            t: i64::from_le_bytes(p[8..16].try_into().ok()?),
            kind: RecordKind::from_code(p[16])?,
            body: serde_json::from_slice(&p[17..]).ok()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Corruption {
    /// A complete frame that failed authentication; skipped.
    Record { offset: u64 },
    /// Torn bytes at the end of the log; scanning stops there.
    Tail { offset: u64, bytes: u64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanResult {
    pub records: Vec<StoredRecord>,
    pub corrupt: Vec<Corruption>,
}

impl ScanResult {
    pub fn tail_reports(&self) -> usize {
        self.corrupt
            .iter()
            .filter(|c| matches!(c, Corruption::Tail { .. }))
            .count()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PurgeReport {
    pub removed: Vec<PathBuf>,
    pub records_erased: u64,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("key file missing but encrypted data exists in {0}")]
    KeyMissing(PathBuf),
    #[error("key file {0} is malformed")]
    BadKey(PathBuf),
    #[error("record at offset {offset} failed authentication")]
    CorruptRecord { offset: u64 },
    #[error("disk full")]
    DiskFull,
    #[error("purge token does not match the latest purge request")]
    BadToken,
    #[error("purge left residue: {0:?}")]
    PartialPurge(Vec<PathBuf>),
    #[error("invalid ISO week {0:?}")]
    BadWeek(String),
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        // ENOSPC / EDQUOT
        if matches!(e.raw_os_error(), Some(28) | Some(122)) {
            StoreError::DiskFull
        } else {
            StoreError::Io(e)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeySource {
    /// Use `<dir>/key`, generating it if the store is empty.
    LoadOrGenerate,
    /// Require `<dir>/key` to exist.
    Existing,
    /// Use this key and persist it to `<dir>/key`.
    Provided(Key),
}

pub struct Store {
    dir: PathBuf,
    cipher: Option<XChaCha20Poly1305>,
    log: Option<File>,
    labels: HashMap<LabelHandle, Vec<u8>>,
    next_seq: u64,
    fsync: bool,
    purge_token: Option<String>,
    recovered: Option<Corruption>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("dir", &self.dir)
            .field("next_seq", &self.next_seq)
            .field("labels", &self.labels.len())
            .finish_non_exhaustive()
    }
}

#[cfg(unix)]
fn restrict(path: &Path, mode: u32) -> io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(path, fs::Permissions::from_mode(mode))
}

#[cfg(not(unix))]
fn restrict(_: &Path, _: u32) -> io::Result<()> {
    Ok(())
}

fn write_key(path: &Path, key: &Key) -> io::Result<()> {
    let mut opts = OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(path)?;
    f.write_all(key)?;
    f.sync_all()?;
    restrict(path, 0o600)
}

fn file_nonempty(path: &Path) -> bool {
    fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false)
}

impl Store {
    /// Opens (creating if needed) the store at `dir`. A torn tail left by a
    /// crash is cut off so later appends stay aligned; see [`Store::recovered`].
    pub fn open(dir: impl AsRef<Path>, source: KeySource) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        restrict(&dir, 0o700)?;
        let key_path = dir.join(KEY_FILE);
        let has_data = file_nonempty(&dir.join(RECORDS_FILE)) || file_nonempty(&dir.join(LABELS_FILE));
        let key = match source {
            KeySource::Provided(k) => {
                write_key(&key_path, &k)?;
                Some(k)
            }
            KeySource::Existing | KeySource::LoadOrGenerate => match fs::read(&key_path) {
                Ok(bytes) => Some(
                    bytes
                        .as_slice()
                        .try_into()
                        .map_err(|_| StoreError::BadKey(key_path.clone()))?,
                ),
                Err(e) if e.kind() == io::ErrorKind::NotFound => {
                    if source == KeySource::Existing || has_data {
                        return Err(StoreError::KeyMissing(key_path));
                    }
                    None
                }
                Err(e) => return Err(e.into()),
            },
        };
        let mut store = Store {
            dir,
            cipher: key.as_ref().map(envelope::cipher),
            log: None,
            labels: HashMap::new(),
            next_seq: 1,
            fsync: false,
            purge_token: None,
            recovered: None,
        };
        if store.cipher.is_some() {
            store.recover()?;
            store.load_labels()?;
        }
        Ok(store)
    }

    /// Flush every append to stable storage before returning.
    pub fn set_fsync(&mut self, on: bool) {
        self.fsync = on;
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Tail corruption removed by [`Store::open`], if any.
    pub fn recovered(&self) -> Option<Corruption> {
        self.recovered
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    fn records_path(&self) -> PathBuf {
        self.dir.join(RECORDS_FILE)
    }

    fn recover(&mut self) -> Result<(), StoreError> {
        let path = self.records_path();
        let buf = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let scan = self.scan_bytes(&buf, Millis::MIN, Millis::MAX);
        self.next_seq = scan.records.iter().map(|r| r.seq).max().map_or(1, |s| s + 1);
        if let Some(&Corruption::Tail { offset, bytes }) = scan.corrupt.last() {
            self.recovered = Some(Corruption::Tail { offset, bytes });
            OpenOptions::new().write(true).open(&path)?.set_len(offset)?;
        }
        Ok(())
    }

    fn load_labels(&mut self) -> Result<(), StoreError> {
        let buf = match fs::read(self.dir.join(LABELS_FILE)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let cipher = self.cipher.as_ref().expect("key loaded");
        let mut off = 0;
        while let Frame::Ok { plaintext, end } = envelope::next_frame(cipher, &buf, off) {
            if plaintext.len() >= 8 {
                let h = u64::from_le_bytes(plaintext[..8].try_into().expect("8 bytes"));
                self.labels.insert(LabelHandle(h), buf[off..end].to_vec());
            }
            off = end;
        }
        Ok(())
    }

    fn cipher(&mut self) -> Result<&XChaCha20Poly1305, StoreError> {
        if self.cipher.is_none() {
            let key = envelope::random_key();
            write_key(&self.dir.join(KEY_FILE), &key)?;
            self.cipher = Some(envelope::cipher(&key));
        }
        Ok(self.cipher.as_ref().expect("just set"))
    }

    fn append_file(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let path = self.dir.join(name);
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        restrict(&path, 0o600)?;
        f.write_all(bytes)?;
        if self.fsync {
            f.sync_data()?;
        }
        Ok(())
    }

    /// Appends one record; the frame is written with a single call so a
    /// crash leaves it either complete or as a torn tail.
    pub fn append(&mut self, t: Millis, kind: RecordKind, body: serde_json::Value) -> Result<u64, StoreError> {
        let rec = StoredRecord {
            seq: self.next_seq,
            t,
            kind,
            body,
        };
        let sealed = envelope::seal(self.cipher()?, &rec.encode());
        if self.log.is_none() {
            let path = self.records_path();
            let f = OpenOptions::new().create(true).append(true).open(&path)?;
            restrict(&path, 0o600)?;
            self.log = Some(f);
        }
        let log = self.log.as_mut().expect("just opened");
        log.write_all(&sealed)?;
        if self.fsync {
            log.sync_data()?;
        }
        self.next_seq += 1;
        Ok(rec.seq)
    }

    /// Stores `label` under `handle` unless already present.
    pub fn register_label(&mut self, handle: LabelHandle, label: &str) -> Result<(), StoreError> {
        if self.labels.contains_key(&handle) {
            return Ok(());
        }
        let mut plain = handle.0.to_le_bytes().to_vec();
        plain.extend_from_slice(label.as_bytes());
        let sealed = envelope::seal(self.cipher()?, &plain);
        self.append_file(LABELS_FILE, &sealed)?;
        self.labels.insert(handle, sealed);
        Ok(())
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    fn scan_bytes(&self, buf: &[u8], from: Millis, to: Millis) -> ScanResult {
        let mut out = ScanResult::default();
        let Some(cipher) = self.cipher.as_ref() else {
            return out;
        };
        let mut off = 0;
        loop {
            match envelope::next_frame(cipher, buf, off) {
                Frame::End => break,
                Frame::Tail => {
                    out.corrupt.push(Corruption::Tail {
                        offset: off as u64,
                        bytes: (buf.len() - off) as u64,
                    });
                    break;
                }
                Frame::Corrupt { end } => {
                    out.corrupt.push(Corruption::Record { offset: off as u64 });
                    off = end;
                }
                Frame::Ok { plaintext, end } => {
                    match StoredRecord::decode(&plaintext) {
                        Some(r) if (from..to).contains(&r.t) => out.records.push(r),
                        Some(_) => {}
                        None => out.corrupt.push(Corruption::Record { offset: off as u64 }),
                    }
                    off = end;
                }
            }
        }
        out
    }

    /// Decrypts records with `from <= t < to`, in seq order, reporting
    /// (and skipping) anything that fails authentication.
    pub fn scan(&self, from: Millis, to: Millis) -> Result<ScanResult, StoreError> {
        match fs::read(self.records_path()) {
            Ok(buf) => Ok(self.scan_bytes(&buf, from, to)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(ScanResult::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn scan_all(&self) -> Result<ScanResult, StoreError> {
        self.scan(Millis::MIN, Millis::MAX)
    }

    /// First step of the two-step purge: issues a single-use token. Any
    /// newer request invalidates older tokens.
    pub fn purge_request(&mut self) -> String {
        let mut raw = [0u8; 16];
        rand::rng().fill_bytes(&mut raw);
        let token = hex::encode(raw);
        self.purge_token = Some(token.clone());
        token
    }

    /// Crypto-erases the store: the key is overwritten and every file
    /// deleted. Later appends start again at seq 1 under a fresh key.
    pub fn purge(&mut self, token: &str) -> Result<PurgeReport, StoreError> {
        match &self.purge_token {
            Some(t) if t == token => {}
            _ => return Err(StoreError::BadToken),
        }
        self.purge_token = None;
        let records_erased = self.next_seq - 1;
        self.log = None;
        self.cipher = None;
        self.labels.clear();
        self.next_seq = 1;
        self.recovered = None;

        let key_path = self.dir.join(KEY_FILE);
        if key_path.exists() {
            // Best effort: the old key bytes should not survive in the file's blocks.
            let _ = write_key(&key_path, &[0u8; 32]);
        }
        let paths = [key_path, self.records_path(), self.dir.join(LABELS_FILE)];
        let mut removed = Vec::new();
        for _ in 0..PURGE_ATTEMPTS {
            for p in &paths {
                if p.exists() && fs::remove_file(p).is_ok() {
                    removed.push(p.clone());
                }
            }
            if paths.iter().all(|p| !p.exists()) {
                return Ok(PurgeReport {
                    removed,
                    records_erased,
                });
            }
        }
        Err(StoreError::PartialPurge(
            paths.into_iter().filter(|p| p.exists()).collect(),
        ))
    }

    /// Aggregates the ISO week `week` (`"YYYY-Www"`), splitting days at
    /// local midnight.
    pub fn weekly_summary(
        &self,
        week: &str,
        utc_offset_minutes: i32,
        labels: Option<&dyn LabelResolver>,
    ) -> Result<WeeklySummary, StoreError> {
        let records = self.scan_all()?.records;
        summary::summarize(&records, week, utc_offset_minutes, labels)
    }
}

impl LabelResolver for Store {
    fn resolve(&self, handle: LabelHandle) -> Option<String> {
        let sealed = self.labels.get(&handle)?;
        match envelope::next_frame(self.cipher.as_ref()?, sealed, 0) {
            Frame::Ok { plaintext, .. } => String::from_utf8(plaintext[8..].to_vec()).ok(),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn open(dir: &Path) -> Store {
        Store::open(dir, KeySource::LoadOrGenerate).unwrap()
    }

    #[test]
    fn append_scan_roundtrip() {
        let d = tempfile::tempdir().unwrap();
        let mut s = open(d.path());
        assert!(s.scan_all().unwrap().records.is_empty());
        let a = s.append(10, RecordKind::Event, json!({"kind": "app_focus"})).unwrap();
        let b = s.append(20, RecordKind::StateChange, json!({"label": "drift"})).unwrap();
        assert_eq!((a, b), (1, 2));
        let got = s.scan_all().unwrap();
        assert!(got.corrupt.is_empty());
        assert_eq!(got.records.len(), 2);
        assert_eq!(got.records[1].body, json!({"label": "drift"}));
        assert_eq!(s.scan(15, 100).unwrap().records.len(), 1);

        drop(s);
        let mut s = open(d.path());
        assert_eq!(s.append(30, RecordKind::Cue, json!(null)).unwrap(), 3);
    }

    #[test]
    fn key_handling() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(
            Store::open(d.path(), KeySource::Existing),
            Err(StoreError::KeyMissing(_))
        ));
        let mut s = open(d.path());
        s.append(1, RecordKind::Event, json!(1)).unwrap();
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            let mode = fs::metadata(d.path().join(KEY_FILE)).unwrap().permissions().mode();
            assert_eq!(mode & 0o777, 0o600);
        }
        fs::remove_file(d.path().join(KEY_FILE)).unwrap();
        assert!(matches!(
            Store::open(d.path(), KeySource::LoadOrGenerate),
            Err(StoreError::KeyMissing(_))
        ));
        // A different key reads nothing back and reports every record.
        let s = Store::open(d.path(), KeySource::Provided([9; 32])).unwrap();
        let scan = s.scan_all().unwrap();
        assert!(scan.records.is_empty());
        assert_eq!(scan.corrupt, vec![Corruption::Record { offset: 0 }]);
    }

    #[test]
    fn truncated_tail_is_reported_and_recovered() {
        let d = tempfile::tempdir().unwrap();
        let mut s = open(d.path());
        for i in 0..5 {
            s.append(i, RecordKind::Event, json!({"i": i})).unwrap();
        }
        drop(s);
        let path = d.path().join(RECORDS_FILE);
        let len = fs::metadata(&path).unwrap().len();
        OpenOptions::new().write(true).open(&path).unwrap().set_len(len - 7).unwrap();

        let s = open(d.path());
        assert!(matches!(s.recovered(), Some(Corruption::Tail { .. })));
        let scan = s.scan_all().unwrap();
        assert_eq!(scan.records.len(), 4);
        assert!(scan.corrupt.is_empty());
        assert_eq!(s.next_seq(), 5);
    }

    #[test]
    fn flipped_byte_is_skipped_and_reported() {
        let d = tempfile::tempdir().unwrap();
        let mut s = open(d.path());
        for i in 0..3 {
            s.append(i, RecordKind::Event, json!({"i": i})).unwrap();
        }
        let path = d.path().join(RECORDS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[40] ^= 1; // inside the first frame's ciphertext
        fs::write(&path, bytes).unwrap();
        let scan = s.scan_all().unwrap();
        assert_eq!(scan.records.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(scan.corrupt, vec![Corruption::Record { offset: 0 }]);
    }

    #[test]
    fn labels_are_opaque_at_rest() {
        let d = tempfile::tempdir().unwrap();
        let mut s = open(d.path());
        s.register_label(LabelHandle(42), "quarterly-report-sentinel").unwrap();
        s.register_label(LabelHandle(42), "ignored duplicate").unwrap();
        assert_eq!(s.resolve(LabelHandle(42)).as_deref(), Some("quarterly-report-sentinel"));
        assert_eq!(s.resolve(LabelHandle(7)), None);
        for entry in fs::read_dir(d.path()).unwrap() {
            let bytes = fs::read(entry.unwrap().path()).unwrap();
            assert!(!bytes.windows(9).any(|w| w == b"quarterly"));
        }
        drop(s);
        let s = open(d.path());
        assert_eq!(s.label_count(), 1);
        assert_eq!(s.resolve(LabelHandle(42)).as_deref(), Some("quarterly-report-sentinel"));
    }

    #[test]
    fn purge_lifecycle() {
        let d = tempfile::tempdir().unwrap();
        let mut s = open(d.path());
        s.append(1, RecordKind::Event, json!(1)).unwrap();
        s.register_label(LabelHandle(1), "x").unwrap();
        assert!(matches!(s.purge("nope"), Err(StoreError::BadToken)));
        let stale = s.purge_request();
        let token = s.purge_request();
        assert!(matches!(s.purge(&stale), Err(StoreError::BadToken)));
        assert_eq!(s.scan_all().unwrap().records.len(), 1);

        let report = s.purge(&token).unwrap();
        assert_eq!(report.records_erased, 1);
        assert!(matches!(s.purge(&token), Err(StoreError::BadToken)));
        assert!(fs::read_dir(d.path()).unwrap().next().is_none());
        assert!(s.scan_all().unwrap().records.is_empty());
        assert_eq!(s.resolve(LabelHandle(1)), None);

        // Second purge of an empty store succeeds.
        let t = s.purge_request();
        assert!(s.purge(&t).is_ok());

        assert_eq!(s.append(5, RecordKind::Event, json!(2)).unwrap(), 1);
        assert!(d.path().join(KEY_FILE).exists());
    }
}
