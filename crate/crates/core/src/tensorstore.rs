//! Checkpoint persistence in the MRGC container format.
//!
//! Layout (all integers little-endian):
//!
//! | bytes            | content                                             |
//! |------------------|-----------------------------------------------------|
//! | 0..4             | magic `b"MRGC"`                                     |
//! | 4..8             | format version, `u32` = 1                           |
//! | 8..16            | header length `H`, `u64`                            |
//! | 16..16+H         | UTF-8 JSON: name -> `{"shape", "offset", "len"}`    |
//! | 16+H..           | payload: concatenated `f32` data                    |
//!
//! Offsets are byte offsets relative to the payload start and are 4-byte
//! aligned; `len` counts elements. Trailing zero bytes after the last tensor
//! are tolerated on read.
//!
//! [`CheckpointReader`] parses only the header and loads tensors one at a time,
//! which is what the merge path uses to keep memory bounded.

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 4] = b"MRGC";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE_LEN: u64 = 16;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid tensor {name:?}: {reason}")]
    InvalidTensor { name: String, reason: String },
    #[error("bad magic bytes {found:?}, expected \"MRGC\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("tensor {0:?} not present in checkpoint")]
    MissingTensor(String),
    #[error("invalid pool: {0}")]
    InvalidPool(String),
}

impl StoreError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, StoreError>;

/// A single named array of `f32` values in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        Tensor { shape, data }
    }

    /// Rank-1 tensor wrapping `data`.
    pub fn vector(data: Vec<f32>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn numel(&self) -> usize {
        shape_numel(&self.shape)
    }

    fn check(&self, name: &str) -> Result<()> {
        check_shape(name, &self.shape)?;
        if self.data.len() != self.numel() {
            return Err(StoreError::InvalidTensor {
                name: name.to_string(),
                reason: format!(
                    "data length {} does not match shape {:?} (product {})",
                    self.data.len(),
                    self.shape,
                    self.numel()
                ),
            });
        }
        Ok(())
    }
}

fn shape_numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(name: &str, shape: &[usize]) -> Result<()> {
    if name.is_empty() {
        return Err(StoreError::InvalidTensor {
            name: String::new(),
            reason: "tensor names must be non-empty".into(),
        });
    }
    if shape.contains(&0) {
        return Err(StoreError::InvalidTensor {
            name: name.to_string(),
            reason: format!("shape {shape:?} has a zero dimension"),
        });
    }
    Ok(())
}

/// A checkpoint: an ordered collection of uniquely named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorMap {
    pub id: String,
    tensors: IndexMap<String, Tensor>,
}

impl TensorMap {
    pub fn new(id: impl Into<String>) -> Self {
        TensorMap {
            id: id.into(),
            tensors: IndexMap::new(),
        }
    }

    /// Appends a tensor, validating its shape against its data.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        tensor.check(&name)?;
        if self.tensors.contains_key(&name) {
            return Err(StoreError::InvalidTensor {
                name,
                reason: "duplicate tensor name".into(),
            });
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, tensor: Tensor) -> Result<Self> {
        self.insert(name, tensor)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn schema(&self) -> Schema {
        Schema(
            self.tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.shape.clone()))
                .collect(),
        )
    }

    /// Bit-level equality: same tensor order, shapes and `f32` bit patterns.
    /// Unlike `==` this treats identical NaN payloads as equal.
    pub fn bit_eq(&self, other: &TensorMap) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(other.tensors.iter())
                .all(|((na, ta), (nb, tb))| {
                    na == nb
                        && ta.shape == tb.shape
                        && ta.data.len() == tb.data.len()
                        && ta
                            .data
                            .iter()
                            .zip(&tb.data)
                            .all(|(a, b)| a.to_bits() == b.to_bits())
                })
    }

    /// Re-checks every tensor invariant. Tensors built through [`TensorMap::insert`]
    /// always pass; this guards maps assembled by hand through `from_parts`.
    pub fn validate(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            t.check(name)?;
        }
        Ok(())
    }

    /// Builds a map without validation. Call [`TensorMap::validate`] before use.
    pub fn from_parts(id: impl Into<String>, tensors: IndexMap<String, Tensor>) -> Self {
        TensorMap {
            id: id.into(),
            tensors,
        }
    }
}

/// Ordered (tensor-name, shape) pairs shared by all checkpoints of a pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema(pub IndexMap<String, Vec<usize>>);

impl Schema {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeaderEntry {
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

/// Serializes a checkpoint to MRGC bytes.
pub fn encode_checkpoint(ckpt: &TensorMap) -> Result<Vec<u8>> {
    ckpt.validate()?;
    let mut header: IndexMap<&str, HeaderEntry> = IndexMap::new();
    let mut offset = 0u64;
    for (name, t) in ckpt.iter() {
        let len = t.data.len() as u64;
        header.insert(
            name,
            HeaderEntry {
                shape: t.shape.clone(),
                offset,
                len,
            },
        );
        offset += 4 * len;
    }
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| StoreError::CorruptHeader(format!("serializing header: {e}")))?;

    let mut out = Vec::with_capacity(PREAMBLE_LEN as usize + header_bytes.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, t) in ckpt.iter() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &TensorMap) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    let file = File::create(path).map_err(|e| StoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| StoreError::io(path, e))?;
    w.flush().map_err(|e| StoreError::io(path, e))?;
    Ok(())
}

/// Reads a whole checkpoint. The checkpoint id is the file stem.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<TensorMap> {
    let path = path.as_ref();
    let mut reader = CheckpointReader::open(path)?;
    reader.read_all()
}

/// Decodes MRGC bytes held in memory.
pub fn decode_checkpoint(id: &str, bytes: &[u8]) -> Result<TensorMap> {
    let mut reader = CheckpointReader::from_source(
        Box::new(std::io::Cursor::new(bytes.to_vec())),
        bytes.len() as u64,
        PathBuf::from(id),
    )?;
    let mut map = reader.read_all()?;
    map.id = id.to_string();
    Ok(map)
}

trait ReadSeek: Read + Seek + Send {}
impl<T: Read + Seek + Send> ReadSeek for T {}

/// Header-parsed handle on a checkpoint file that loads tensors on demand.
pub struct CheckpointReader {
    path: PathBuf,
    src: Box<dyn ReadSeek>,
    entries: IndexMap<String, HeaderEntry>,
    payload_start: u64,
}

impl std::fmt::Debug for CheckpointReader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CheckpointReader")
            .field("path", &self.path)
            .field("tensors", &self.entries.len())
            .finish()
    }
}

impl CheckpointReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| StoreError::io(path, e))?;
        let file_len = file.metadata().map_err(|e| StoreError::io(path, e))?.len();
        Self::from_source(Box::new(file), file_len, path.to_path_buf())
    }

    fn from_source(mut src: Box<dyn ReadSeek>, file_len: u64, path: PathBuf) -> Result<Self> {
        let io = |e| StoreError::io(&path, e);
        if file_len < PREAMBLE_LEN {
            if file_len >= 4 {
                let mut magic = [0u8; 4];
                src.read_exact(&mut magic).map_err(io)?;
                if &magic != MAGIC {
                    return Err(StoreError::BadMagic { found: magic });
                }
            }
            return Err(StoreError::TruncatedPayload(format!(
                "file is {file_len} bytes, shorter than the {PREAMBLE_LEN}-byte preamble"
            )));
        }
        let mut pre = [0u8; PREAMBLE_LEN as usize];
        src.read_exact(&mut pre).map_err(io)?;
        let magic: [u8; 4] = pre[0..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(StoreError::BadMagic { found: magic });
        }
        let version = u32::from_le_bytes(pre[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let header_len = u64::from_le_bytes(pre[8..16].try_into().unwrap());
        let payload_start = PREAMBLE_LEN
            .checked_add(header_len)
            .ok_or_else(|| StoreError::CorruptHeader("header length overflows".into()))?;
        if payload_start > file_len {
            return Err(StoreError::TruncatedPayload(format!(
                "header declares {header_len} bytes but only {} remain",
                file_len - PREAMBLE_LEN
            )));
        }
        let mut header = vec![0u8; header_len as usize];
        src.read_exact(&mut header).map_err(io)?;
        let entries: IndexMap<String, HeaderEntry> = serde_json::from_slice(&header)
            .map_err(|e| StoreError::CorruptHeader(format!("header JSON: {e}")))?;

        let payload_len = file_len - payload_start;
        let mut end_of_data = 0u64;
        for (name, e) in &entries {
            check_shape(name, &e.shape).map_err(|err| StoreError::CorruptHeader(err.to_string()))?;
            if shape_numel(&e.shape) as u64 != e.len {
                return Err(StoreError::CorruptHeader(format!(
                    "tensor {name:?}: len {} does not match shape {:?}",
                    e.len, e.shape
                )));
            }
            if e.offset % 4 != 0 {
                return Err(StoreError::CorruptHeader(format!(
                    "tensor {name:?}: offset {} is not 4-byte aligned",
                    e.offset
                )));
            }
            let end = e
                .len
                .checked_mul(4)
                .and_then(|b| b.checked_add(e.offset))
                .ok_or_else(|| StoreError::CorruptHeader(format!("tensor {name:?}: offset overflow")))?;
            if end > payload_len {
                return Err(StoreError::CorruptHeader(format!(
                    "tensor {name:?}: data ends at byte {end} past payload length {payload_len}"
                )));
            }
            end_of_data = end_of_data.max(end);
        }

        // Only zero padding may follow the last tensor.
        if end_of_data < payload_len {
            src.seek(SeekFrom::Start(payload_start + end_of_data)).map_err(io)?;
            let mut rest = Vec::new();
            src.read_to_end(&mut rest).map_err(io)?;
            if rest.iter().any(|&b| b != 0) {
                return Err(StoreError::CorruptHeader(format!(
                    "{} unaccounted non-zero trailing bytes",
                    rest.len()
                )));
            }
        }

        Ok(CheckpointReader {
            path,
            src,
            entries,
            payload_start,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn schema(&self) -> Schema {
        Schema(
            self.entries
                .iter()
                .map(|(k, e)| (k.clone(), e.shape.clone()))
                .collect(),
        )
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Loads a single tensor from disk.
    pub fn read_tensor(&mut self, name: &str) -> Result<Tensor> {
        let entry = self
            .entries
            .get(name)
            .ok_or_else(|| StoreError::MissingTensor(name.to_string()))?
            .clone();
        let path = self.path.clone();
        self.src
            .seek(SeekFrom::Start(self.payload_start + entry.offset))
            .map_err(|e| StoreError::io(&path, e))?;
        let mut bytes = vec![0u8; entry.len as usize * 4];
        self.src.read_exact(&mut bytes).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                StoreError::TruncatedPayload(format!("tensor {name:?} cut short"))
            }
            _ => StoreError::io(&path, e),
        })?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Tensor {
            shape: entry.shape,
            data,
        })
    }

    pub fn read_all(&mut self) -> Result<TensorMap> {
        let id = self
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let names: Vec<String> = self.entries.keys().cloned().collect();
        let mut map = TensorMap::new(id);
        for name in names {
            let t = self.read_tensor(&name)?;
            map.tensors.insert(name, t);
        }
        Ok(map)
    }
}

/// Where a pool entry's tensors live.
#[derive(Debug, Clone)]
pub enum CheckpointSource {
    File(PathBuf),
    Memory(Arc<TensorMap>),
}

#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub label: String,
    pub source: CheckpointSource,
}

/// Ordered set of checkpoints `θ_1..θ_N`. Index `i` (0-based here) identifies
/// the same checkpoint in every weight vector.
#[derive(Debug, Clone, Default)]
pub struct CheckpointPool {
    entries: Vec<PoolEntry>,
}

/// Manifest written next to pool checkpoints so that ordering survives a
/// directory listing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub label: String,
    pub file: String,
}

pub const MANIFEST_FILE: &str = "pool.json";

impl CheckpointPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<PoolEntry>) -> Self {
        CheckpointPool { entries }
    }

    pub fn from_memory(ckpts: Vec<TensorMap>) -> Self {
        CheckpointPool {
            entries: ckpts
                .into_iter()
                .map(|c| PoolEntry {
                    label: c.id.clone(),
                    source: CheckpointSource::Memory(Arc::new(c)),
                })
                .collect(),
        }
    }

    pub fn push_file(&mut self, label: impl Into<String>, path: impl Into<PathBuf>) {
        self.entries.push(PoolEntry {
            label: label.into(),
            source: CheckpointSource::File(path.into()),
        });
    }

    pub fn push_memory(&mut self, ckpt: TensorMap) {
        self.entries.push(PoolEntry {
            label: ckpt.id.clone(),
            source: CheckpointSource::Memory(Arc::new(ckpt)),
        });
    }

    /// Opens a pool directory. Uses `pool.json` for ordering when present,
    /// otherwise every `*.mrgc` file sorted by file name.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = dir.join(MANIFEST_FILE);
        let mut pool = CheckpointPool::new();
        if manifest.exists() {
            let text = std::fs::read_to_string(&manifest).map_err(|e| StoreError::io(&manifest, e))?;
            let m: PoolManifest = serde_json::from_str(&text)
                .map_err(|e| StoreError::InvalidPool(format!("{}: {e}", manifest.display())))?;
            for e in m.entries {
                pool.push_file(e.label, dir.join(e.file));
            }
        } else {
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| StoreError::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "mrgc"))
                .collect();
            files.sort();
            for f in files {
                let label = f.file_stem().unwrap().to_string_lossy().into_owned();
                pool.push_file(label, f);
            }
        }
        if pool.is_empty() {
            return Err(StoreError::InvalidPool(format!(
                "no checkpoints found in {}",
                dir.display()
            )));
        }
        Ok(pool)
    }

    /// Writes every checkpoint into `dir` as `NN_label.mrgc` plus a manifest.
    pub fn save_to_dir(&self, dir: impl AsRef<Path>) -> Result<CheckpointPool> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
        let mut manifest = PoolManifest { entries: vec![] };
        let mut saved = CheckpointPool::new();
        for i in 0..self.len() {
            let ckpt = self.load(i)?;
            let file = format!("{:02}_{}.mrgc", i + 1, sanitize(&self.entries[i].label));
            let path = dir.join(&file);
            write_checkpoint(&path, &ckpt)?;
            manifest.entries.push(ManifestEntry {
                label: self.entries[i].label.clone(),
                file,
            });
            saved.push_file(self.entries[i].label.clone(), path);
        }
        let mpath = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&mpath, text).map_err(|e| StoreError::io(&mpath, e))?;
        Ok(saved)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.label.clone()).collect()
    }

    /// Sub-pool with the given entries, in the given order.
    pub fn subset(&self, indices: &[usize]) -> CheckpointPool {
        CheckpointPool {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }

    pub fn entry_schema(&self, i: usize) -> Result<Schema> {
        match &self.entries[i].source {
            CheckpointSource::File(p) => Ok(CheckpointReader::open(p)?.schema()),
            CheckpointSource::Memory(m) => Ok(m.schema()),
        }
    }

    /// Schema of the first entry, which every other entry must match.
    pub fn schema(&self) -> Result<Schema> {
        if self.is_empty() {
            return Err(StoreError::InvalidPool("pool is empty".into()));
        }
        self.entry_schema(0)
    }

    /// Loads the whole checkpoint at index `i`.
    pub fn load(&self, i: usize) -> Result<TensorMap> {
        match &self.entries[i].source {
            CheckpointSource::File(p) => {
                let mut m = read_checkpoint(p)?;
                m.id = self.entries[i].label.clone();
                Ok(m)
            }
            CheckpointSource::Memory(m) => Ok((**m).clone()),
        }
    }

    /// Opens lazy per-tensor access to every entry.
    pub fn open_sources(&self) -> Result<Vec<TensorSource>> {
        self.entries
            .iter()
            .map(|e| match &e.source {
                CheckpointSource::File(p) => Ok(TensorSource::File(Box::new(CheckpointReader::open(p)?))),
                CheckpointSource::Memory(m) => Ok(TensorSource::Memory(Arc::clone(m))),
            })
            .collect()
    }

    /// SHA-256 over the MRGC bytes of every entry, in pool order. In-memory
    /// entries are hashed through their canonical encoding so a pool hashes the
    /// same before and after [`CheckpointPool::save_to_dir`].
    pub fn content_hash(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for e in &self.entries {
            let bytes = match &e.source {
                CheckpointSource::File(p) => std::fs::read(p).map_err(|err| StoreError::io(p, err))?,
                CheckpointSource::Memory(m) => encode_checkpoint(m)?,
            };
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Per-entry tensor access used while merging.
pub enum TensorSource {
    File(Box<CheckpointReader>),
    Memory(Arc<TensorMap>),
}

impl TensorSource {
    pub fn tensor(&mut self, name: &str) -> Result<std::borrow::Cow<'_, Tensor>> {
        match self {
            TensorSource::File(r) => Ok(std::borrow::Cow::Owned(r.read_tensor(name)?)),
            TensorSource::Memory(m) => m
                .get(name)
                .map(std::borrow::Cow::Borrowed)
                .ok_or_else(|| StoreError::MissingTensor(name.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MismatchKind {
    MissingTensor,
    ExtraTensor,
    ShapeMismatch,
    Unreadable(String),
}

/// First schema violation found in a pool. `entry` is 0-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemaMismatch {
    pub entry: usize,
    pub label: String,
    pub tensor: Option<String>,
    pub expected: Option<Vec<usize>>,
    pub found: Option<Vec<usize>>,
    pub kind: MismatchKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemaReport {
    pub entry_ok: Vec<bool>,
    pub first_mismatch: Option<SchemaMismatch>,
}

impl SchemaReport {
    pub fn passed(&self) -> bool {
        self.first_mismatch.is_none() && self.entry_ok.iter().all(|&b| b)
    }
}

/// Checks every entry against the schema of entry 0.
pub fn validate_pool(pool: &CheckpointPool) -> SchemaReport {
    let mut report = SchemaReport {
        entry_ok: Vec::with_capacity(pool.len()),
        first_mismatch: None,
    };
    if pool.is_empty() {
        return report;
    }
    let record = |report: &mut SchemaReport, m: SchemaMismatch| {
        if report.first_mismatch.is_none() {
            report.first_mismatch = Some(m);
        }
    };
    let reference = match pool.entry_schema(0) {
        Ok(s) => s,
        Err(e) => {
            report.entry_ok = vec![false; pool.len()];
            record(
                &mut report,
                SchemaMismatch {
                    entry: 0,
                    label: pool.entries[0].label.clone(),
                    tensor: None,
                    expected: None,
                    found: None,
                    kind: MismatchKind::Unreadable(e.to_string()),
                },
            );
            return report;
        }
    };
    report.entry_ok.push(true);
    for i in 1..pool.len() {
        let label = pool.entries[i].label.clone();
        let schema = match pool.entry_schema(i) {
            Ok(s) => s,
            Err(e) => {
                report.entry_ok.push(false);
                record(
                    &mut report,
                    SchemaMismatch {
                        entry: i,
                        label,
                        tensor: None,
                        expected: None,
                        found: None,
                        kind: MismatchKind::Unreadable(e.to_string()),
                    },
                );
                continue;
            }
        };
        let mut mismatch = None;
        for (name, shape) in &reference.0 {
            match schema.0.get(name) {
                None => {
                    mismatch = Some(SchemaMismatch {
                        entry: i,
                        label: label.clone(),
                        tensor: Some(name.clone()),
                        expected: Some(shape.clone()),
                        found: None,
                        kind: MismatchKind::MissingTensor,
                    });
                    break;
                }
                Some(found) if found != shape => {
                    mismatch = Some(SchemaMismatch {
                        entry: i,
                        label: label.clone(),
                        tensor: Some(name.clone()),
                        expected: Some(shape.clone()),
                        found: Some(found.clone()),
                        kind: MismatchKind::ShapeMismatch,
                    });
                    break;
                }
                _ => {}
            }
        }
        if mismatch.is_none() {
            if let Some((name, shape)) = schema.0.iter().find(|(n, _)| !reference.0.contains_key(*n)) {
                mismatch = Some(SchemaMismatch {
                    entry: i,
                    label: label.clone(),
                    tensor: Some(name.clone()),
                    expected: None,
                    found: Some(shape.clone()),
                    kind: MismatchKind::ExtraTensor,
                });
            }
        }
        report.entry_ok.push(mismatch.is_none());
        if let Some(m) = mismatch {
            record(&mut report, m);
        }
    }
    report
}
