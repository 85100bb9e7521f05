//! Named-tensor checkpoint files in the single-file safetensors layout.
//!
//! Layout: an unsigned 64-bit little-endian header length, a JSON header
//! mapping tensor name to `{data_offsets, dtype, shape}` (keys sorted, padded
//! with spaces to a multiple of 8 bytes), then the payload region. Offsets are
//! `[begin, end)` relative to the start of the payload region.
//!
//! Readers never load the whole payload: [`Checkpoint::read_tensor`] does a
//! positional read of a single tensor, so independent reads can run from
//! several threads against one open file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use half::{bf16, f16};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const METADATA_KEY: &str = "__metadata__";
const MAX_HEADER_LEN: u64 = 100 * 1024 * 1024;

/// Element type of a stored tensor. Integer and f64 tensors are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "F32")]
    F32,
    #[serde(rename = "F16")]
    F16,
    #[serde(rename = "BF16")]
    BF16,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 | Dtype::BF16 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "F32",
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "F32" => Ok(Dtype::F32),
            "F16" => Ok(Dtype::F16),
            "BF16" => Ok(Dtype::BF16),
            other => Err(Error::Format(format!("unsupported dtype {other}"))),
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// One named tensor with its raw little-endian payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl TensorEntry {
    pub fn new(
        name: impl Into<String>,
        dtype: Dtype,
        shape: Vec<usize>,
        data: Vec<u8>,
    ) -> Result<Self> {
        let entry = Self {
            name: name.into(),
            dtype,
            shape,
            data,
        };
        entry.check_len()?;
        Ok(entry)
    }

    /// Encode `values` into `dtype` with round-to-nearest-even.
    pub fn from_f32(
        name: impl Into<String>,
        dtype: Dtype,
        shape: Vec<usize>,
        values: &[f32],
    ) -> Result<Self> {
        let name = name.into();
        if values.len() != element_count(&shape) {
            return Err(Error::ShapeError {
                detail: format!("{} values for shape {:?}", values.len(), shape),
                name,
            });
        }
        Ok(Self {
            data: encode_f32(values, dtype),
            name,
            dtype,
            shape,
        })
    }

    pub fn numel(&self) -> usize {
        element_count(&self.shape)
    }

    pub fn byte_len(&self) -> usize {
        self.numel() * self.dtype.width()
    }

    pub(crate) fn check_len(&self) -> Result<()> {
        let expected = self.byte_len();
        if self.data.len() != expected {
            return Err(Error::ShapeError {
                name: self.name.clone(),
                detail: format!(
                    "shape {:?} at {} needs {} bytes, got {}",
                    self.shape,
                    self.dtype,
                    expected,
                    self.data.len()
                ),
            });
        }
        Ok(())
    }

    pub fn to_f32(&self) -> Vec<f32> {
        decode_f32(&self.data, self.dtype)
    }
}

pub fn decode_f32(bytes: &[u8], dtype: Dtype) -> Vec<f32> {
    match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        Dtype::F16 => bytes
            .chunks_exact(2)
            .map(|b| f16::from_le_bytes([b[0], b[1]]).to_f32())
            .collect(),
        Dtype::BF16 => bytes
            .chunks_exact(2)
            .map(|b| bf16::from_le_bytes([b[0], b[1]]).to_f32())
            .collect(),
    }
}

pub fn encode_f32(values: &[f32], dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.width());
    match dtype {
        Dtype::F32 => values
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::F16 => values
            .iter()
            .for_each(|v| out.extend_from_slice(&f16::from_f32(*v).to_le_bytes())),
        Dtype::BF16 => values
            .iter()
            .for_each(|v| out.extend_from_slice(&bf16::from_f32(*v).to_le_bytes())),
    }
    out
}

/// Sum of squares accumulated in f64.
pub fn tensor_norm_sq(entry: &TensorEntry) -> Result<f64> {
    entry.check_len()?;
    Ok(sum_sq(&entry.to_f32()))
}

pub(crate) fn sum_sq(values: &[f32]) -> f64 {
    values.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
}

/// Directory entry for one tensor in a checkpoint file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TensorInfo {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// `[begin, end)` relative to the start of the payload region.
    pub data_offsets: (u64, u64),
}

impl TensorInfo {
    pub fn numel(&self) -> usize {
        element_count(&self.shape)
    }

    pub fn byte_len(&self) -> u64 {
        self.data_offsets.1 - self.data_offsets.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckpointManifest {
    /// Sorted by name.
    pub entries: Vec<TensorInfo>,
    pub metadata: BTreeMap<String, String>,
    pub source_path: PathBuf,
    /// Absolute file offset of the payload region.
    #[serde(skip)]
    pub payload_start: u64,
}

impl CheckpointManifest {
    pub fn get(&self, name: &str) -> Option<&TensorInfo> {
        self.entries
            .binary_search_by(|e| e.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_elements(&self) -> u64 {
        self.entries.iter().map(|e| e.numel() as u64).sum()
    }

    pub fn max_tensor_bytes(&self) -> u64 {
        self.entries.iter().map(TensorInfo::byte_len).max().unwrap_or(0)
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    data_offsets: [u64; 2],
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum HeaderValue<'a> {
    Metadata(&'a BTreeMap<String, String>),
    Tensor(HeaderEntry),
}

/// Open checkpoint: manifest plus a file handle for on-demand tensor reads.
#[derive(Debug)]
pub struct Checkpoint {
    manifest: CheckpointManifest,
    file: File,
}

impl Checkpoint {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let manifest = parse_header(&mut file, file_len, path)?;
        Ok(Self { manifest, file })
    }

    pub fn manifest(&self) -> &CheckpointManifest {
        &self.manifest
    }

    pub fn into_manifest(self) -> CheckpointManifest {
        self.manifest
    }

    pub fn read_tensor(&self, name: &str) -> Result<TensorEntry> {
        let info = self
            .manifest
            .get(name)
            .ok_or_else(|| Error::Format(format!("no tensor named `{name}`")))?;
        self.read_info(info)
    }

    pub fn read_info(&self, info: &TensorInfo) -> Result<TensorEntry> {
        let mut data = vec![0u8; info.byte_len() as usize];
        read_exact_at(
            &self.file,
            &mut data,
            self.manifest.payload_start + info.data_offsets.0,
        )
        .map_err(|e| Error::io(&self.manifest.source_path, e))?;
        Ok(TensorEntry {
            name: info.name.clone(),
            dtype: info.dtype,
            shape: info.shape.clone(),
            data,
        })
    }
}

#[cfg(unix)]
fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)
}

#[cfg(windows)]
fn read_exact_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset) {
            Ok(0) => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Read and validate the header of a checkpoint file.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointManifest> {
    Checkpoint::open(path).map(Checkpoint::into_manifest)
}

fn parse_header(file: &mut File, file_len: u64, path: &Path) -> Result<CheckpointManifest> {
    let mut len_bytes = [0u8; 8];
    if file_len < 8 {
        return Err(Error::Format("file shorter than the header length prefix".into()));
    }
    file.read_exact(&mut len_bytes)
        .map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes);
    if header_len > MAX_HEADER_LEN || header_len > file_len - 8 {
        return Err(Error::Format(format!(
            "header length {header_len} exceeds file size {file_len}"
        )));
    }
    let mut header = vec![0u8; header_len as usize];
    file.read_exact(&mut header)
        .map_err(|e| Error::io(path, e))?;
    let header: serde_json::Map<String, serde_json::Value> = serde_json::from_slice(&header)
        .map_err(|e| Error::Format(format!("header is not a JSON object: {e}")))?;

    let payload_start = 8 + header_len;
    let payload_len = file_len - payload_start;
    let mut metadata = BTreeMap::new();
    let mut entries = Vec::with_capacity(header.len());
    for (name, value) in header {
        if name == METADATA_KEY {
            metadata = serde_json::from_value(value)
                .map_err(|e| Error::Format(format!("bad __metadata__: {e}")))?;
            continue;
        }
        let raw: HeaderEntry = serde_json::from_value(value)
            .map_err(|e| Error::Format(format!("bad entry for `{name}`: {e}")))?;
        let dtype = Dtype::parse(&raw.dtype)?;
        let [begin, end] = raw.data_offsets;
        if end < begin || end > payload_len {
            return Err(Error::CorruptCheckpoint(format!(
                "`{name}` range [{begin}, {end}) outside payload of {payload_len} bytes"
            )));
        }
        let expected = element_count(&raw.shape) as u64 * dtype.width() as u64;
        if end - begin != expected {
            return Err(Error::CorruptCheckpoint(format!(
                "`{name}` spans {} bytes but shape {:?} at {dtype} needs {expected}",
                end - begin,
                raw.shape
            )));
        }
        entries.push(TensorInfo {
            name,
            dtype,
            shape: raw.shape,
            data_offsets: (begin, end),
        });
    }

    let mut by_offset: Vec<&TensorInfo> = entries.iter().filter(|e| e.byte_len() > 0).collect();
    by_offset.sort_by_key(|e| e.data_offsets);
    for pair in by_offset.windows(2) {
        if pair[1].data_offsets.0 < pair[0].data_offsets.1 {
            return Err(Error::CorruptCheckpoint(format!(
                "`{}` and `{}` overlap",
                pair[0].name, pair[1].name
            )));
        }
    }

    entries.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(CheckpointManifest {
        entries,
        metadata,
        source_path: path.to_path_buf(),
        payload_start,
    })
}

/// Planned tensor for [`CheckpointWriter`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorLayout {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

impl From<&TensorInfo> for TensorLayout {
    fn from(info: &TensorInfo) -> Self {
        Self {
            name: info.name.clone(),
            dtype: info.dtype,
            shape: info.shape.clone(),
        }
    }
}

impl From<&TensorEntry> for TensorLayout {
    fn from(entry: &TensorEntry) -> Self {
        Self {
            name: entry.name.clone(),
            dtype: entry.dtype,
            shape: entry.shape.clone(),
        }
    }
}

/// Streaming writer: the header is written up front from the planned layouts,
/// then payloads are appended one tensor at a time in name order.
pub struct CheckpointWriter {
    out: BufWriter<File>,
    manifest: CheckpointManifest,
    next: usize,
}

impl CheckpointWriter {
    pub fn create(
        path: impl AsRef<Path>,
        layouts: Vec<TensorLayout>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let mut layouts = layouts;
        layouts.sort_by(|a, b| a.name.cmp(&b.name));
        let mut seen = BTreeSet::new();
        for l in &layouts {
            if l.name == METADATA_KEY {
                return Err(Error::Format(format!("`{METADATA_KEY}` is reserved")));
            }
            if !seen.insert(l.name.as_str()) {
                return Err(Error::DuplicateTensor(l.name.clone()));
            }
        }

        let mut offset = 0u64;
        let entries: Vec<TensorInfo> = layouts
            .into_iter()
            .map(|l| {
                let len = (element_count(&l.shape) * l.dtype.width()) as u64;
                let info = TensorInfo {
                    name: l.name,
                    dtype: l.dtype,
                    shape: l.shape,
                    data_offsets: (offset, offset + len),
                };
                offset += len;
                info
            })
            .collect();

        let header = encode_header(&entries, &metadata)?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(&(header.len() as u64).to_le_bytes())
            .and_then(|_| out.write_all(&header))
            .map_err(|e| Error::io(path, e))?;

        Ok(Self {
            out,
            manifest: CheckpointManifest {
                entries,
                metadata,
                source_path: path.to_path_buf(),
                payload_start: 8 + header.len() as u64,
            },
            next: 0,
        })
    }

    /// The layout the writer expects next, if any remain.
    pub fn next_layout(&self) -> Option<&TensorInfo> {
        self.manifest.entries.get(self.next)
    }

    pub fn write_tensor(&mut self, entry: &TensorEntry) -> Result<()> {
        let Some(expected) = self.manifest.entries.get(self.next) else {
            return Err(Error::Format(format!(
                "`{}` written after all planned tensors",
                entry.name
            )));
        };
        if expected.name != entry.name {
            return Err(Error::Format(format!(
                "expected `{}` next, got `{}`",
                expected.name, entry.name
            )));
        }
        if expected.dtype != entry.dtype || expected.shape != entry.shape {
            return Err(Error::ShapeError {
                name: entry.name.clone(),
                detail: format!(
                    "planned {:?} {}, got {:?} {}",
                    expected.shape, expected.dtype, entry.shape, entry.dtype
                ),
            });
        }
        entry.check_len()?;
        self.out
            .write_all(&entry.data)
            .map_err(|e| Error::io(&self.manifest.source_path, e))?;
        self.next += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<CheckpointManifest> {
        if let Some(missing) = self.manifest.entries.get(self.next) {
            return Err(Error::Format(format!(
                "checkpoint closed before `{}` was written",
                missing.name
            )));
        }
        let path = self.manifest.source_path.clone();
        self.out.flush().map_err(|e| Error::io(&path, e))?;
        self.out
            .get_ref()
            .sync_all()
            .map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

fn encode_header(entries: &[TensorInfo], metadata: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let mut map: BTreeMap<&str, HeaderValue<'_>> = BTreeMap::new();
    if !metadata.is_empty() {
        map.insert(METADATA_KEY, HeaderValue::Metadata(metadata));
    }
    for e in entries {
        map.insert(
            &e.name,
            HeaderValue::Tensor(HeaderEntry {
                data_offsets: [e.data_offsets.0, e.data_offsets.1],
                dtype: e.dtype.as_str().to_string(),
                shape: e.shape.clone(),
            }),
        );
    }
    let mut header = serde_json::to_vec(&map)?;
    while header.len() % 8 != 0 {
        header.push(b' ');
    }
    Ok(header)
}

/// Write `entries` in lexicographic name order.
pub fn write_checkpoint(
    entries: impl IntoIterator<Item = TensorEntry>,
    path: impl AsRef<Path>,
) -> Result<CheckpointManifest> {
    write_checkpoint_with_metadata(entries, BTreeMap::new(), path)
}

pub fn write_checkpoint_with_metadata(
    entries: impl IntoIterator<Item = TensorEntry>,
    metadata: BTreeMap<String, String>,
    path: impl AsRef<Path>,
) -> Result<CheckpointManifest> {
    let mut entries: Vec<TensorEntry> = entries.into_iter().collect();
    for e in &entries {
        e.check_len()?;
    }
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    let layouts = entries.iter().map(TensorLayout::from).collect();
    let mut writer = CheckpointWriter::create(path, layouts, metadata)?;
    for e in &entries {
        writer.write_tensor(e)?;
    }
    writer.finish()
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    use sha2::{Digest, Sha256};
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f32_entry(name: &str, values: &[f32]) -> TensorEntry {
        TensorEntry::from_f32(name, Dtype::F32, vec![values.len()], values).unwrap()
    }

    fn write_raw(path: &Path, header: &str, payload: &[u8]) {
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(payload);
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn single_tensor_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.safetensors");
        write_checkpoint([f32_entry("a", &[1.0, 2.0])], &path).unwrap();
        let manifest = read_checkpoint(&path).unwrap();
        assert_eq!(manifest.len(), 1);
        assert_eq!(manifest.entries[0].byte_len(), 8);
        assert_eq!(manifest.entries[0].shape, vec![2]);
    }

    #[test]
    fn entries_are_written_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ab.safetensors");
        write_checkpoint([f32_entry("b", &[2.0]), f32_entry("a", &[1.0])], &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = String::from_utf8_lossy(&bytes[8..]);
        assert!(header.find("\"a\"").unwrap() < header.find("\"b\"").unwrap());
        let ckpt = Checkpoint::open(&path).unwrap();
        assert_eq!(ckpt.manifest().entries[0].data_offsets, (0, 4));
        assert_eq!(ckpt.read_tensor("b").unwrap().to_f32(), vec![2.0]);
    }

    #[test]
    fn header_is_padded_and_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let meta = BTreeMap::from([("format".to_string(), "pt".to_string())]);
        write_checkpoint_with_metadata([f32_entry("x", &[1.0])], meta, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        assert_eq!(len % 8, 0);
        let header = std::str::from_utf8(&bytes[8..8 + len]).unwrap().trim_end();
        assert_eq!(
            header,
            r#"{"__metadata__":{"format":"pt"},"x":{"data_offsets":[0,4],"dtype":"F32","shape":[1]}}"#
        );
        assert_eq!(read_checkpoint(&path).unwrap().metadata["format"], "pt");
    }

    #[test]
    fn shape_and_length_must_agree() {
        let err = TensorEntry::new("w", Dtype::F32, vec![2, 3], vec![0; 20]).unwrap_err();
        assert_eq!(err.name(), "ShapeError");

        let dir = tempfile::tempdir().unwrap();
        let bad = TensorEntry {
            name: "w".into(),
            dtype: Dtype::F32,
            shape: vec![2, 3],
            data: vec![0; 20],
        };
        let err = write_checkpoint([bad], dir.path().join("w.safetensors")).unwrap_err();
        assert_eq!(err.name(), "ShapeError");
    }

    #[test]
    fn duplicate_names_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_checkpoint(
            [f32_entry("a", &[1.0]), f32_entry("a", &[2.0])],
            dir.path().join("d.safetensors"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateTensor(n) if n == "a"));
    }

    #[test]
    fn overlapping_ranges_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.safetensors");
        // Hand-edited offsets: b starts inside a.
        let header = r#"{"a":{"data_offsets":[0,8],"dtype":"F32","shape":[2]},"b":{"data_offsets":[4,12],"dtype":"F32","shape":[2]}}"#;
        write_raw(&path, header, &[0u8; 12]);
        let err = read_checkpoint(&path).unwrap_err();
        assert_eq!(err.name(), "CorruptCheckpoint");
    }

    #[test]
    fn out_of_bounds_range_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oob.safetensors");
        let header = r#"{"a":{"data_offsets":[0,8],"dtype":"F32","shape":[2]}}"#;
        write_raw(&path, header, &[0u8; 4]);
        assert_eq!(read_checkpoint(&path).unwrap_err().name(), "CorruptCheckpoint");
    }

    #[test]
    fn malformed_headers_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.safetensors");

        write_raw(&path, "not json", &[]);
        assert_eq!(read_checkpoint(&path).unwrap_err().name(), "FormatError");

        std::fs::write(&path, [1u8, 2, 3]).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap_err().name(), "FormatError");

        let mut bytes = 1_000u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{}");
        std::fs::write(&path, bytes).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap_err().name(), "FormatError");
    }

    #[test]
    fn integer_dtypes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.safetensors");
        let header = r#"{"a":{"data_offsets":[0,8],"dtype":"I64","shape":[1]}}"#;
        write_raw(&path, header, &[0u8; 8]);
        let err = read_checkpoint(&path).unwrap_err();
        assert_eq!(err.name(), "FormatError");
        assert!(err.to_string().contains("I64"));
    }

    #[test]
    fn norm_sq_examples() {
        assert_eq!(tensor_norm_sq(&f32_entry("t", &[3.0, 4.0])).unwrap(), 25.0);
        assert_eq!(tensor_norm_sq(&f32_entry("z", &[0.0; 16])).unwrap(), 0.0);
    }

    #[test]
    fn bf16_norm_matches_scalar_reference() {
        let values = vec![0.1f32; 10_000];
        let entry = TensorEntry::from_f32("b", Dtype::BF16, vec![10_000], &values).unwrap();
        // Reference: decode each element on its own and accumulate naively.
        let mut reference = 0.0f64;
        for chunk in entry.data.chunks_exact(2) {
            let v = f64::from(bf16::from_bits(u16::from_le_bytes([chunk[0], chunk[1]])).to_f32());
            reference += v * v;
        }
        let got = tensor_norm_sq(&entry).unwrap();
        assert!(((got - reference) / reference).abs() < 1e-2);
        // bf16(0.1) = 0.10009765625
        assert!((reference - 10_000.0 * 0.100_097_656_25f64.powi(2)).abs() < 1e-6);
    }

    #[test]
    fn half_precision_encoding_rounds_to_nearest_even() {
        // 1 + 2^-8 sits exactly between two bf16 values; ties go to the even mantissa (1.0).
        let v = 1.0f32 + 2f32.powi(-8);
        let bytes = encode_f32(&[v], Dtype::BF16);
        assert_eq!(decode_f32(&bytes, Dtype::BF16), vec![1.0]);
        let v = 1.0f32 + 3.0 * 2f32.powi(-8);
        let bytes = encode_f32(&[v], Dtype::BF16);
        assert_eq!(decode_f32(&bytes, Dtype::BF16), vec![1.0 + 2f32.powi(-6)]);
    }

    #[test]
    fn streaming_writer_enforces_plan() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.safetensors");
        let a = f32_entry("a", &[1.0]);
        let b = f32_entry("b", &[2.0, 3.0]);
        let layouts = vec![TensorLayout::from(&b), TensorLayout::from(&a)];
        let mut w = CheckpointWriter::create(&path, layouts.clone(), BTreeMap::new()).unwrap();
        assert_eq!(w.next_layout().unwrap().name, "a");
        assert!(w.write_tensor(&b).is_err());
        w.write_tensor(&a).unwrap();
        assert!(w.finish().is_err());

        let mut w = CheckpointWriter::create(&path, layouts, BTreeMap::new()).unwrap();
        w.write_tensor(&a).unwrap();
        w.write_tensor(&b).unwrap();
        let written = w.finish().unwrap();
        assert_eq!(written, read_checkpoint(&path).unwrap());
    }

    #[test]
    fn empty_and_zero_sized_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.safetensors");
        let empty = TensorEntry::new("e", Dtype::F16, vec![0, 4], vec![]).unwrap();
        let scalar = TensorEntry::from_f32("s", Dtype::F32, vec![], &[7.0]).unwrap();
        write_checkpoint([empty.clone(), scalar.clone()], &path).unwrap();
        let ckpt = Checkpoint::open(&path).unwrap();
        assert_eq!(ckpt.read_tensor("e").unwrap(), empty);
        assert_eq!(ckpt.read_tensor("s").unwrap(), scalar);
    }
}
