//! Binary persistence for [`EmbeddingIndex`].
//!
//! ```text
//! magic      b"VQIX"
//! version    u16 LE
//! dim        u32 LE
//! count      u64 LE
//! count x {  video_id_len u16, video_id bytes, kind u8 (0 frame, 1 transcript),
//!            ordinal u32, dim x f32 LE }
//! crc32      u32 LE over every preceding byte
//! ```

use std::io::Write;
use std::path::Path;

use thiserror::Error;
use vidqa_core::embedding::{EmbeddingError, IndexedItem};
use vidqa_core::{EmbeddingIndex, EmbeddingVector, ItemKind};

pub const MAGIC: &[u8; 4] = b"VQIX";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum IndexFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt index file: {0}")]
    CorruptIndexFile(String),
    #[error("index file version {found}, this build reads {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("index contents: {0}")]
    Embedding(#[from] EmbeddingError),
}

fn kind_byte(kind: ItemKind) -> u8 {
    match kind {
        ItemKind::Frame => 0,
        ItemKind::Transcript => 1,
    }
}

pub fn encode(index: &EmbeddingIndex) -> Vec<u8> {
    let items: Vec<IndexedItem> = index.items().collect();
    let mut out = Vec::with_capacity(18 + items.len() * (16 + index.dim() * 4) + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(index.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(items.len() as u64).to_le_bytes());
    for item in &items {
        out.extend_from_slice(&(item.video_id.len() as u16).to_le_bytes());
        out.extend_from_slice(item.video_id.as_bytes());
        out.push(kind_byte(item.kind));
        out.extend_from_slice(&(item.ordinal as u32).to_le_bytes());
        for v in item.vector.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexFileError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            IndexFileError::CorruptIndexFile(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], IndexFileError> {
        Ok(self.take(N)?.try_into().expect("take returns N bytes"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingIndex, IndexFileError> {
    if bytes.len() < 4 + 2 + 4 + 8 + 4 {
        return Err(IndexFileError::CorruptIndexFile(format!("only {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(IndexFileError::CorruptIndexFile("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(IndexFileError::VersionMismatch { found: version, expected: VERSION });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(IndexFileError::CorruptIndexFile(format!("checksum {stored:08x}, computed {actual:08x}")));
    }
    let mut r = Reader { buf: body, pos: 6 };
    let dim = u32::from_le_bytes(r.array()?) as usize;
    let count = u64::from_le_bytes(r.array()?);
    let mut index = EmbeddingIndex::new(dim)?;
    for _ in 0..count {
        let len = u16::from_le_bytes(r.array()?) as usize;
        let video_id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| IndexFileError::CorruptIndexFile("video id is not UTF-8".into()))?
            .to_string();
        let kind = match r.array::<1>()?[0] {
            0 => ItemKind::Frame,
            1 => ItemKind::Transcript,
            k => return Err(IndexFileError::CorruptIndexFile(format!("unknown item kind {k}"))),
        };
        let ordinal = u32::from_le_bytes(r.array()?) as usize;
        let values = r.take(dim * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        index.insert(IndexedItem { video_id, kind, ordinal, vector: EmbeddingVector::new(values)? })?;
    }
    if r.pos != body.len() {
        return Err(IndexFileError::CorruptIndexFile(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(index)
}

/// Writes through a temporary file and renames it into place.
pub fn save(index: &EmbeddingIndex, path: &Path) -> Result<(), IndexFileError> {
    let io = |source| IndexFileError::Io { path: path.display().to_string(), source };
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(&encode(index)).map_err(io)?;
    f.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load(path: &Path) -> Result<EmbeddingIndex, IndexFileError> {
    let bytes = std::fs::read(path).map_err(|source| IndexFileError::Io { path: path.display().to_string(), source })?;
    decode(&bytes)
}
