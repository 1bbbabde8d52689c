//! On-disk embedding matrices ("feature packs").
//!
//! A pack is a pair of files sharing a base path:
//!
//! * `<base>.idx.json`: `{"format_version", "kind", "dim", "rows", "crc32",
//!   "ids", "zero_ids"}`. `ids` lists the row order; `zero_ids` lists samples
//!   known to have no content (blank image, empty field) and therefore no row.
//! * `<base>.f32`: `rows × dim` little-endian IEEE-754 single-precision floats,
//!   row-major, with its CRC-32 stored in the index.
//!
//! One pack exists per modality: the visual embedding and five text fields.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PackError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid index: {source}")]
    Index {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported pack format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("data checksum mismatch: index says {expected:08x}, data hashes to {found:08x}")]
    Checksum { expected: u32, found: u32 },
    #[error("data file holds {found} bytes, expected {expected}")]
    Truncated { expected: usize, found: usize },
    #[error("duplicate sample id {0:?} in pack")]
    DuplicateId(String),
    #[error("no features for sample {id:?} in {kind} pack")]
    MissingFeature { kind: PackKind, id: String },
    #[error("row of length {got} does not match pack dim {dim}")]
    RowLength { dim: usize, got: usize },
    #[error("pack {kind} has dim {got}, expected {expected}")]
    Dim {
        kind: PackKind,
        expected: usize,
        got: usize,
    },
}

/// Text fields in the fixed order the model stacks them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextField {
    Category,
    Title,
    Tags,
    Description,
    UserId,
}

impl TextField {
    pub const ALL: [TextField; 5] = [
        TextField::Category,
        TextField::Title,
        TextField::Tags,
        TextField::Description,
        TextField::UserId,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TextField::Category => "category",
            TextField::Title => "title",
            TextField::Tags => "tags",
            TextField::Description => "description",
            TextField::UserId => "user_id",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PackKind {
    Visual,
    Text(TextField),
}

impl PackKind {
    pub fn all() -> Vec<PackKind> {
        std::iter::once(PackKind::Visual)
            .chain(TextField::ALL.into_iter().map(PackKind::Text))
            .collect()
    }

    /// File base name inside a pack directory.
    pub fn basename(self) -> String {
        match self {
            PackKind::Visual => "visual".into(),
            PackKind::Text(f) => format!("text_{}", f.name()),
        }
    }

    pub fn from_basename(name: &str) -> Option<PackKind> {
        PackKind::all().into_iter().find(|k| k.basename() == name)
    }
}

impl std::fmt::Display for PackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.basename())
    }
}

impl Serialize for PackKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.basename())
    }
}

impl<'de> Deserialize<'de> for PackKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PackKind::from_basename(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown pack kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Absent ids read as the zero vector.
    #[default]
    ZeroFill,
    Strict,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format_version: u32,
    kind: PackKind,
    dim: usize,
    rows: usize,
    crc32: u32,
    ids: Vec<String>,
    #[serde(default)]
    zero_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePack {
    kind: PackKind,
    dim: usize,
    ids: Vec<String>,
    zero_ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PackError + '_ {
    move |source| PackError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn index_path(base: &Path) -> PathBuf {
    with_suffix(base, ".idx.json")
}

pub fn data_path(base: &Path) -> PathBuf {
    with_suffix(base, ".f32")
}

impl FeaturePack {
    pub fn new(kind: PackKind, dim: usize) -> Self {
        FeaturePack {
            kind,
            dim,
            ids: Vec::new(),
            zero_ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn kind(&self) -> PackKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn zero_ids(&self) -> &[String] {
        &self.zero_ids
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    fn check_new_id(&self, id: &str) -> Result<(), PackError> {
        if self.index.contains_key(id) || self.zero_ids.iter().any(|z| z == id) {
            return Err(PackError::DuplicateId(id.to_string()));
        }
        Ok(())
    }

    pub fn push(&mut self, id: impl Into<String>, row: &[f32]) -> Result<(), PackError> {
        let id = id.into();
        if row.len() != self.dim {
            return Err(PackError::RowLength {
                dim: self.dim,
                got: row.len(),
            });
        }
        self.check_new_id(&id)?;
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(row);
        Ok(())
    }

    /// Marks `id` as present but blank; it reads back as zeros under any policy.
    pub fn push_zero(&mut self, id: impl Into<String>) -> Result<(), PackError> {
        let id = id.into();
        self.check_new_id(&id)?;
        self.zero_ids.push(id);
        Ok(())
    }

    pub fn row(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&r| &self.data[r * self.dim..(r + 1) * self.dim])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id) || self.zero_ids.iter().any(|z| z == id)
    }

    /// Row for `id`, promoted to double precision.
    pub fn lookup(&self, id: &str, policy: MissingPolicy) -> Result<Vec<f64>, PackError> {
        if let Some(row) = self.row(id) {
            return Ok(row.iter().map(|&x| x as f64).collect());
        }
        if policy == MissingPolicy::ZeroFill || self.zero_ids.iter().any(|z| z == id) {
            return Ok(vec![0.0; self.dim]);
        }
        Err(PackError::MissingFeature {
            kind: self.kind,
            id: id.to_string(),
        })
    }

    fn data_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for x in &self.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        bytes
    }

    pub fn write(&self, base: &Path) -> Result<(), PackError> {
        let bytes = self.data_bytes();
        let index = IndexFile {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            dim: self.dim,
            rows: self.ids.len(),
            crc32: crc32fast::hash(&bytes),
            ids: self.ids.clone(),
            zero_ids: self.zero_ids.clone(),
        };
        let json = serde_json::to_vec_pretty(&index).expect("index serializes");
        let dp = data_path(base);
        fs::write(&dp, &bytes).map_err(io_err(&dp))?;
        let ip = index_path(base);
        fs::write(&ip, json).map_err(io_err(&ip))?;
        Ok(())
    }

    pub fn read(base: &Path) -> Result<Self, PackError> {
        let ip = index_path(base);
        let raw = fs::read(&ip).map_err(io_err(&ip))?;
        let index: IndexFile = serde_json::from_slice(&raw).map_err(|source| PackError::Index {
            path: ip.clone(),
            source,
        })?;
        if index.format_version != FORMAT_VERSION {
            return Err(PackError::Version {
                found: index.format_version,
            });
        }
        let dp = data_path(base);
        let bytes = fs::read(&dp).map_err(io_err(&dp))?;
        let expected = 4 * index.ids.len() * index.dim;
        if bytes.len() != expected || index.rows != index.ids.len() {
            return Err(PackError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        let found = crc32fast::hash(&bytes);
        if found != index.crc32 {
            return Err(PackError::Checksum {
                expected: index.crc32,
                found,
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut seen = HashSet::new();
        for id in index.ids.iter().chain(&index.zero_ids) {
            if !seen.insert(id.as_str()) {
                return Err(PackError::DuplicateId(id.clone()));
            }
        }
        let lookup = index
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(FeaturePack {
            kind: index.kind,
            dim: index.dim,
            ids: index.ids,
            zero_ids: index.zero_ids,
            data,
            index: lookup,
        })
    }
}

/// The six packs one dataset needs: visual plus the five text fields.
#[derive(Clone, Debug, PartialEq)]
pub struct PackSet {
    pub visual: FeaturePack,
    /// Ordered as [`TextField::ALL`].
    pub text: Vec<FeaturePack>,
}

impl PackSet {
    pub fn new(visual_dim: usize, text_dim: usize) -> Self {
        PackSet {
            visual: FeaturePack::new(PackKind::Visual, visual_dim),
            text: TextField::ALL
                .into_iter()
                .map(|f| FeaturePack::new(PackKind::Text(f), text_dim))
                .collect(),
        }
    }

    pub fn visual_dim(&self) -> usize {
        self.visual.dim()
    }

    pub fn text_dim(&self) -> usize {
        self.text[0].dim()
    }

    pub fn text_pack(&self, field: TextField) -> &FeaturePack {
        &self.text[TextField::ALL.iter().position(|&f| f == field).expect("known field")]
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), PackError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for p in std::iter::once(&self.visual).chain(&self.text) {
            p.write(&dir.join(p.kind().basename()))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, PackError> {
        let visual = FeaturePack::read(&dir.join(PackKind::Visual.basename()))?;
        let mut text = Vec::with_capacity(5);
        for f in TextField::ALL {
            let kind = PackKind::Text(f);
            let p = FeaturePack::read(&dir.join(kind.basename()))?;
            if p.kind() != kind {
                return Err(PackError::Index {
                    path: index_path(&dir.join(kind.basename())),
                    source: serde::de::Error::custom(format!("file declares kind {}", p.kind())),
                });
            }
            text.push(p);
        }
        let dim = text[0].dim();
        if let Some(bad) = text.iter().find(|p| p.dim() != dim) {
            return Err(PackError::Dim {
                kind: bad.kind(),
                expected: dim,
                got: bad.dim(),
            });
        }
        Ok(PackSet { visual, text })
    }
}
