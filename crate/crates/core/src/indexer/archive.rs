//! Single-file index archive.
//!
//! Layout: magic, `u32` LE version, then tagged sections
//! `[tag: 4 bytes][len: u64 LE][payload]`, then a SHA-256 digest of every
//! preceding byte. Structured sections are JSON; vector sections are raw
//! little-endian `f64`. Writing the same index twice yields identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CoreferenceTable, Entity, Index, IndexStats, KnowledgeGraph, Triple};
use crate::corpus::{Document, SimpleTokenizer, Tokenizer};
use crate::embedding::{EmbeddingIndex, Vector};
use crate::error::{Error, Result};

pub const ARCHIVE_VERSION: u32 = 1;

const MAGIC: &[u8; 8] = b"PTRKIDX\n";
const DIGEST_LEN: usize = 32;
const SECTION_TAGS: [&[u8; 4]; 8] = [
    b"META", b"DOCS", b"ENTS", b"TRPL", b"ADJC", b"CORF", b"EVEC", b"DVEC",
];

#[derive(Serialize, Deserialize)]
struct Meta {
    embedder_id: String,
    stats: IndexStats,
}

fn encode_vectors(index: &EmbeddingIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    out.extend_from_slice(&(index.dim() as u32).to_le_bytes());
    out.push(u8::from(index.is_normalized()));
    for (key, v) in index.keys().iter().zip(index.vectors()) {
        out.extend_from_slice(&(key.len() as u32).to_le_bytes());
        out.extend_from_slice(key.as_bytes());
        for c in v.as_slice() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader {
            bytes,
            pos: 0,
            what,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptArchive(format!("{} truncated", self.what)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?)
            .map_err(|_| Error::CorruptArchive(format!("{} length overflows", self.what)))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn decode_vectors(bytes: &[u8], what: &'static str) -> Result<EmbeddingIndex> {
    let mut r = Reader::new(bytes, what);
    let count = r.len()?;
    let dim = r.u32()? as usize;
    let normalized = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::CorruptArchive(format!("{what}: bad flag {other}"))),
    };
    let mut keys = Vec::new();
    let mut vectors = Vec::new();
    for _ in 0..count {
        let klen = r.u32()? as usize;
        let key = std::str::from_utf8(r.take(klen)?)
            .map_err(|_| Error::CorruptArchive(format!("{what}: key is not UTF-8")))?;
        let raw = r.take(
            dim.checked_mul(8)
                .ok_or_else(|| Error::CorruptArchive(format!("{what}: dimension overflows")))?,
        )?;
        let comps = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        keys.push(key.to_string());
        vectors
            .push(Vector::new(comps).map_err(|e| Error::CorruptArchive(format!("{what}: {e}")))?);
    }
    if !r.done() {
        return Err(Error::CorruptArchive(format!("{what}: trailing bytes")));
    }
    EmbeddingIndex::from_stored(keys, vectors, normalized, dim)
        .map_err(|e| Error::CorruptArchive(format!("{what}: {e}")))
}

/// Serializes `index` to bytes.
pub fn encode_index(index: &Index) -> Result<Vec<u8>> {
    let meta = Meta {
        embedder_id: index.embedder_id.clone(),
        stats: index.stats,
    };
    let sections: [Vec<u8>; 8] = [
        serde_json::to_vec(&meta)?,
        serde_json::to_vec(&index.documents)?,
        serde_json::to_vec(&index.kg.entities)?,
        serde_json::to_vec(&index.kg.triples)?,
        serde_json::to_vec(&index.kg.adjacency)?,
        serde_json::to_vec(&index.coref)?,
        encode_vectors(&index.entity_vectors),
        encode_vectors(&index.doc_vectors),
    ];
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    for (tag, payload) in SECTION_TAGS.iter().zip(&sections) {
        out.extend_from_slice(*tag);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(payload);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn json<T: for<'de> Deserialize<'de>>(bytes: &[u8], tag: &[u8; 4]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| {
        Error::CorruptArchive(format!("{} section: {e}", String::from_utf8_lossy(tag)))
    })
}

/// Parses bytes produced by [`encode_index`]. The version is checked before
/// anything else so a newer archive reports a version error, not corruption.
pub fn decode_index(bytes: &[u8]) -> Result<Index> {
    let mut header = Reader::new(bytes, "header");
    if header.take(MAGIC.len())? != MAGIC {
        return Err(Error::CorruptArchive("not an index archive".into()));
    }
    let found = header.u32()?;
    if found != ARCHIVE_VERSION {
        return Err(Error::VersionMismatch {
            found,
            expected: ARCHIVE_VERSION,
        });
    }
    if bytes.len() < header.pos + DIGEST_LEN {
        return Err(Error::CorruptArchive("archive truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptArchive(
            "checksum mismatch (truncated or modified)".into(),
        ));
    }

    let mut r = Reader::new(body, "archive");
    r.pos = header.pos;
    let mut payloads: BTreeMap<[u8; 4], &[u8]> = BTreeMap::new();
    while !r.done() {
        let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        let len = r.len()?;
        payloads.insert(tag, r.take(len)?);
    }
    let section = |tag: &[u8; 4]| {
        payloads.get(tag).copied().ok_or_else(|| {
            Error::CorruptArchive(format!("missing {} section", String::from_utf8_lossy(tag)))
        })
    };

    let meta: Meta = json(section(b"META")?, b"META")?;
    let mut documents: Vec<Document> = json(section(b"DOCS")?, b"DOCS")?;
    for doc in &mut documents {
        doc.token_count = SimpleTokenizer.count(&doc.text);
    }
    let kg = KnowledgeGraph {
        entities: json::<BTreeMap<String, Entity>>(section(b"ENTS")?, b"ENTS")?,
        triples: json::<Vec<Triple>>(section(b"TRPL")?, b"TRPL")?,
        adjacency: json(section(b"ADJC")?, b"ADJC")?,
    };
    kg.check_closure()?;
    let coref: CoreferenceTable = json(section(b"CORF")?, b"CORF")?;
    let entity_vectors = decode_vectors(section(b"EVEC")?, "entity vectors")?;
    let doc_vectors = decode_vectors(section(b"DVEC")?, "document vectors")?;
    if entity_vectors.len() != kg.entities.len()
        || kg.entities.keys().any(|k| entity_vectors.get(k).is_none())
    {
        return Err(Error::CorruptArchive(
            "entity vectors do not match entities".into(),
        ));
    }
    if doc_vectors.len() != documents.len()
        || documents
            .iter()
            .any(|d| doc_vectors.get(&d.doc_id).is_none())
    {
        return Err(Error::CorruptArchive(
            "document vectors do not match documents".into(),
        ));
    }
    Ok(Index {
        documents,
        kg,
        coref,
        entity_vectors,
        doc_vectors,
        embedder_id: meta.embedder_id,
        stats: meta.stats,
    })
}

pub fn save_index(index: &Index, path: &Path) -> Result<()> {
    let bytes = encode_index(index)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    file.sync_all().map_err(|e| Error::io(path, e))
}

pub fn load_index(path: &Path) -> Result<Index> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_index(&bytes)
}
