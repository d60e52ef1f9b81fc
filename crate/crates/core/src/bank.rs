//! Galleries and the on-disk feature bank.
//!
//! A bank is two files sharing a basename:
//!
//! ```text
//! bank.bin            binary tensor block (little-endian)
//!   0..4    magic "DIML"
//!   4..6    u16 format version (1)
//!   6..8    reserved, zero
//!   8..12   u32 record count N
//!   12..14  u16 grid_h
//!   14..16  u16 grid_w
//!   16..20  u32 dim
//!   20..    N * grid_h * grid_w * dim f32, cell-major
//! bank.manifest.json  [{"id": "...", "label": 3}, ...] in record order
//! ```
//!
//! Payload values are stored as `f32`; a round trip is bit-exact for maps
//! whose values are `f32`-representable.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::fmap::FeatureMap;

pub const MAGIC: [u8; 4] = *b"DIML";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected \"DIML\"")]
    BadMagic,

    #[error("unsupported format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u16),

    #[error("truncated bank: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("{0} unexpected trailing bytes after the last record")]
    TrailingBytes(usize),

    #[error("manifest lists {manifest} items but the tensor block holds {records} records")]
    CountMismatch { manifest: usize, records: usize },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("invalid gallery: {0}")]
    InvalidGallery(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryItem {
    pub id: String,
    pub label: u32,
    pub fmap: FeatureMap,
}

impl GalleryItem {
    pub fn new(id: impl Into<String>, label: u32, fmap: FeatureMap) -> Self {
        Self {
            id: id.into(),
            label,
            fmap,
        }
    }
}

/// A nonempty, shape-homogeneous set of labelled feature maps with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    items: Vec<GalleryItem>,
}

impl Gallery {
    pub fn new(items: Vec<GalleryItem>) -> Result<Self> {
        let Some(first) = items.first() else {
            return Err(BankError::InvalidGallery("gallery is empty".into()).into());
        };
        let shape = first.fmap.shape();
        let mut seen = HashSet::with_capacity(items.len());
        for item in &items {
            if item.fmap.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "item {:?} has shape {:?}, gallery shape is {:?}",
                    item.id,
                    item.fmap.shape(),
                    shape
                )));
            }
            if !seen.insert(item.id.as_str()) {
                return Err(BankError::InvalidGallery(format!("duplicate id {:?}", item.id)).into());
            }
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[GalleryItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `(grid_h, grid_w, dim)` shared by every item.
    pub fn shape(&self) -> (usize, usize, usize) {
        self.items[0].fmap.shape()
    }

    pub fn get(&self, id: &str) -> Option<&GalleryItem> {
        self.items.iter().find(|it| it.id == id)
    }

    pub fn labels(&self) -> HashMap<String, u32> {
        self.items.iter().map(|it| (it.id.clone(), it.label)).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    label: u32,
}

/// Sidecar manifest path for a bank: `x.bin` -> `x.manifest.json`.
pub fn manifest_path(bank: &Path) -> PathBuf {
    bank.with_extension("manifest.json")
}

/// Serializes a gallery into the tensor block and the manifest JSON text.
pub fn encode_bank(gallery: &Gallery) -> std::result::Result<(Vec<u8>, String), BankError> {
    let (h, w, dim) = gallery.shape();
    let too_big = |what: &str| BankError::InvalidGallery(format!("{what} does not fit the header field"));
    let h16 = u16::try_from(h).map_err(|_| too_big("grid_h"))?;
    let w16 = u16::try_from(w).map_err(|_| too_big("grid_w"))?;
    let dim32 = u32::try_from(dim).map_err(|_| too_big("dim"))?;
    let n32 = u32::try_from(gallery.len()).map_err(|_| too_big("record count"))?;

    let mut bytes = Vec::with_capacity(HEADER_LEN + gallery.len() * h * w * dim * 4);
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&[0, 0]);
    bytes.extend_from_slice(&n32.to_le_bytes());
    bytes.extend_from_slice(&h16.to_le_bytes());
    bytes.extend_from_slice(&w16.to_le_bytes());
    bytes.extend_from_slice(&dim32.to_le_bytes());
    for item in gallery.items() {
        for &v in item.fmap.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }

    let manifest: Vec<ManifestEntry> = gallery
        .items()
        .iter()
        .map(|it| ManifestEntry {
            id: it.id.clone(),
            label: it.label,
        })
        .collect();
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| BankError::Manifest(e.to_string()))?;
    Ok((bytes, json))
}

/// Parses a tensor block plus manifest text back into a gallery.
pub fn decode_bank(bytes: &[u8], manifest_json: &str) -> Result<Gallery> {
    if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
        return Err(BankError::BadMagic.into());
    }
    if bytes.len() < HEADER_LEN {
        return Err(BankError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        }
        .into());
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);

    let version = u16_at(4);
    if version != FORMAT_VERSION {
        return Err(BankError::UnsupportedVersion(version).into());
    }
    let n = u32_at(8) as usize;
    let h = u16_at(12) as usize;
    let w = u16_at(14) as usize;
    let dim = u32_at(16) as usize;
    if h == 0 || w == 0 || dim == 0 {
        return Err(BankError::InvalidGallery(format!("header declares empty maps ({h}x{w}x{dim})")).into());
    }

    let record_len = h * w * dim;
    let expected = HEADER_LEN + n * record_len * 4;
    if bytes.len() < expected {
        return Err(BankError::Truncated {
            expected,
            actual: bytes.len(),
        }
        .into());
    }
    if bytes.len() > expected {
        return Err(BankError::TrailingBytes(bytes.len() - expected).into());
    }

    let manifest: Vec<ManifestEntry> =
        serde_json::from_str(manifest_json).map_err(|e| BankError::Manifest(e.to_string()))?;
    if manifest.len() != n {
        return Err(BankError::CountMismatch {
            manifest: manifest.len(),
            records: n,
        }
        .into());
    }

    let payload = &bytes[HEADER_LEN..];
    let items = manifest
        .into_iter()
        .zip(payload.chunks_exact(record_len * 4))
        .map(|(entry, record)| {
            let data = record
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            let fmap = FeatureMap::new(h, w, dim, data)
                .map_err(|e| BankError::InvalidGallery(format!("record {:?}: {e}", entry.id)))?;
            Ok(GalleryItem::new(entry.id, entry.label, fmap))
        })
        .collect::<Result<Vec<_>>>()?;
    Gallery::new(items)
}

pub fn read_feature_bank(path: impl AsRef<Path>) -> Result<Gallery> {
    let path = path.as_ref();
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| BankError::Io { path: p, source }
    };
    let bytes = fs::read(path).map_err(io(path))?;
    let mpath = manifest_path(path);
    let manifest = fs::read_to_string(&mpath).map_err(io(&mpath))?;
    decode_bank(&bytes, &manifest)
}

pub fn write_feature_bank(gallery: &Gallery, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (bytes, manifest) = encode_bank(gallery)?;
    fs::write(path, bytes).map_err(|source| BankError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mpath = manifest_path(path);
    fs::write(&mpath, manifest).map_err(|source| BankError::Io { path: mpath, source })?;
    Ok(())
}
