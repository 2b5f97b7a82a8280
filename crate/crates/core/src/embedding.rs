//! Dense vectors keyed by `(instance id, channel)` and the cosine primitive
//! every retriever is built on.
//!
//! Two on-disk encodings are supported and both round-trip bit-exactly:
//!
//! * binary: `RAREMB01`, u32 record count, then per record u16 id length +
//!   id, u16 channel length + channel, u32 dim, dim × f32 (all little-endian);
//! * JSONL: `{"id":…, "channel":…, "vec":[…]}` per line.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::EmbeddingError;
use crate::label::RelationLabel;

pub const MAGIC: &[u8; 8] = b"RAREMB01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    Sentence,
    E1,
    E2,
    Relation,
    PureRelation,
    FtSentence,
    FtE1,
    FtE2,
}

impl Channel {
    pub const ALL: [Channel; 8] = [
        Channel::Sentence,
        Channel::E1,
        Channel::E2,
        Channel::Relation,
        Channel::PureRelation,
        Channel::FtSentence,
        Channel::FtE1,
        Channel::FtE2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Sentence => "sentence",
            Channel::E1 => "e1",
            Channel::E2 => "e2",
            Channel::Relation => "relation",
            Channel::PureRelation => "pure_relation",
            Channel::FtSentence => "ft_sentence",
            Channel::FtE1 => "ft_e1",
            Channel::FtE2 => "ft_e2",
        }
    }

    /// The fine-tuned counterpart of a base channel.
    pub fn finetuned(self) -> Option<Channel> {
        match self {
            Channel::Sentence => Some(Channel::FtSentence),
            Channel::E1 => Some(Channel::FtE1),
            Channel::E2 => Some(Channel::FtE2),
            _ => None,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = EmbeddingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| EmbeddingError::UnknownChannel(s.to_string()))
    }
}

/// Store id under which a label's verbalization embedding lives.
pub fn relation_key(label: RelationLabel) -> String {
    format!("label:{}", label.code())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        EmbeddingVector(values)
    }

    pub fn from_f64(values: &[f64]) -> Self {
        EmbeddingVector(values.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl From<Vec<f32>> for EmbeddingVector {
    fn from(values: Vec<f32>) -> Self {
        EmbeddingVector(values)
    }
}

/// Cosine similarity accumulated in f64 and clamped to [-1, 1].
///
/// Zero-norm inputs are an error, never a similarity of 0.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::IncompatibleDims { left: u.len(), right: v.len() });
    }
    let mut dot = 0.0f64;
    let mut uu = 0.0f64;
    let mut vv = 0.0f64;
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok((dot / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

/// Same as [`cosine`] over f64 slices.
pub fn cosine_f64(u: &[f64], v: &[f64]) -> Result<f64, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::IncompatibleDims { left: u.len(), right: v.len() });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let uu: f64 = u.iter().map(|a| a * a).sum();
    let vv: f64 = v.iter().map(|b| b * b).sum();
    if uu == 0.0 || vv == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok((dot / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    id: String,
    channel: String,
    vec: Vec<f32>,
}

/// Immutable-after-load vector store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    entries: BTreeMap<String, BTreeMap<Channel, EmbeddingVector>>,
    channel_dims: BTreeMap<Channel, usize>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one vector, enforcing uniqueness, finiteness and per-channel dim.
    pub fn insert(
        &mut self,
        id: impl Into<String>,
        channel: Channel,
        vector: EmbeddingVector,
    ) -> Result<(), EmbeddingError> {
        let id = id.into();
        if vector.dim() == 0 {
            return Err(EmbeddingError::Empty { id, channel: channel.to_string() });
        }
        if let Some(position) = vector.values().iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { id, channel: channel.to_string(), position });
        }
        if let Some(&expected) = self.channel_dims.get(&channel) {
            if expected != vector.dim() {
                return Err(EmbeddingError::DimMismatch {
                    channel: channel.to_string(),
                    id,
                    expected,
                    found: vector.dim(),
                });
            }
        }
        let slot = self.entries.entry(id.clone()).or_default();
        if slot.contains_key(&channel) {
            return Err(EmbeddingError::Duplicate { id, channel: channel.to_string() });
        }
        self.channel_dims.insert(channel, vector.dim());
        slot.insert(channel, vector);
        Ok(())
    }

    pub fn get(&self, id: &str, channel: Channel) -> Option<&EmbeddingVector> {
        self.entries.get(id).and_then(|c| c.get(&channel))
    }

    /// Like [`get`](Self::get) but returns an error naming the missing key.
    pub fn require(&self, id: &str, channel: Channel) -> Result<&EmbeddingVector, EmbeddingError> {
        self.get(id, channel).ok_or_else(|| EmbeddingError::Missing {
            id: id.to_string(),
            channel: channel.to_string(),
            hint: String::new(),
        })
    }

    pub fn channel_dims(&self) -> &BTreeMap<Channel, usize> {
        &self.channel_dims
    }

    pub fn has_channel(&self, channel: Channel) -> bool {
        self.channel_dims.contains_key(&channel)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All records in (id, channel) order.
    pub fn records(&self) -> impl Iterator<Item = (&str, Channel, &EmbeddingVector)> {
        self.entries.iter().flat_map(|(id, chans)| chans.iter().map(move |(c, v)| (id.as_str(), *c, v)))
    }

    /// Copies every record of `other` into this store.
    pub fn merge(&mut self, other: &EmbeddingStore) -> Result<(), EmbeddingError> {
        for (id, channel, vector) in other.records() {
            self.insert(id, channel, vector.clone())?;
        }
        Ok(())
    }

    /// Cosine between two ids on one channel.
    pub fn cosine(&self, a: &str, b: &str, channel: Channel) -> Result<f64, EmbeddingError> {
        cosine(self.require(a, channel)?.values(), self.require(b, channel)?.values())
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (id, channel, vector) in self.records() {
            let name = channel.name();
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(vector.dim() as u32).to_le_bytes());
            for v in vector.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        let mut cursor = ByteCursor { bytes, pos: 0 };
        if cursor.take(8, 0, "magic").ok() != Some(&MAGIC[..]) {
            return Err(EmbeddingError::BadMagic);
        }
        let count = cursor.u32(0, "record count")? as usize;
        let mut store = EmbeddingStore::new();
        for index in 0..count {
            let id_len = cursor.u16(index, "id length")? as usize;
            let id = cursor.utf8(id_len, index, "id")?;
            let ch_len = cursor.u16(index, "channel length")? as usize;
            let channel: Channel = cursor.utf8(ch_len, index, "channel")?.parse()?;
            let dim = cursor.u32(index, "dim")? as usize;
            let raw = cursor.take(dim * 4, index, "vector")?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            store.insert(id, channel, EmbeddingVector(values))?;
        }
        if cursor.pos != bytes.len() {
            return Err(EmbeddingError::Malformed {
                index: count,
                message: format!("{} trailing bytes after last record", bytes.len() - cursor.pos),
            });
        }
        Ok(store)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, channel, vector) in self.records() {
            let record =
                JsonRecord { id: id.to_string(), channel: channel.name().to_string(), vec: vector.values().to_vec() };
            out.push_str(&serde_json::to_string(&record).expect("finite floats serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self, EmbeddingError> {
        let mut store = EmbeddingStore::new();
        for (index, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| EmbeddingError::Malformed { index, message: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: JsonRecord =
                serde_json::from_str(&line).map_err(|e| EmbeddingError::Malformed { index, message: e.to_string() })?;
            let channel: Channel = record.channel.parse()?;
            store.insert(record.id, channel, EmbeddingVector(record.vec))?;
        }
        Ok(store)
    }

    /// Loads either encoding, sniffing the magic bytes.
    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let io = |source| EmbeddingError::Io { path: path.to_path_buf(), source };
        let mut bytes = Vec::new();
        std::fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
        if bytes.starts_with(MAGIC) {
            Self::from_binary(&bytes)
        } else if bytes.len() >= MAGIC.len() && bytes.starts_with(b"RAREMB") {
            Err(EmbeddingError::BadMagic)
        } else if bytes.first().map_or(true, |&b| b == b'{' || b.is_ascii_whitespace()) {
            Self::from_jsonl(bytes.as_slice())
        } else {
            Err(EmbeddingError::BadMagic)
        }
    }

    /// Writes JSONL when the path ends in `.jsonl`, binary otherwise.
    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let bytes = if path.extension().is_some_and(|e| e == "jsonl") {
            self.to_jsonl().into_bytes()
        } else {
            self.to_binary()
        };
        let io = |source| EmbeddingError::Io { path: path.to_path_buf(), source };
        let mut file = std::fs::File::create(path).map_err(io)?;
        file.write_all(&bytes).map_err(io)
    }
}

/// Loads a store from `path`.
pub fn load_store(path: &Path) -> Result<EmbeddingStore, EmbeddingError> {
    EmbeddingStore::load(path)
}

/// Writes a store to `path`.
pub fn write_store(store: &EmbeddingStore, path: &Path) -> Result<(), EmbeddingError> {
    store.save(path)
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize, index: usize, what: &str) -> Result<&'a [u8], EmbeddingError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            EmbeddingError::Truncated { index, message: format!("need {n} bytes for {what} at offset {}", self.pos) }
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self, index: usize, what: &str) -> Result<u16, EmbeddingError> {
        let b = self.take(2, index, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, index: usize, what: &str) -> Result<u32, EmbeddingError> {
        let b = self.take(4, index, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn utf8(&mut self, n: usize, index: usize, what: &str) -> Result<String, EmbeddingError> {
        let b = self.take(n, index, what)?;
        String::from_utf8(b.to_vec()).map_err(|e| EmbeddingError::Malformed { index, message: format!("{what}: {e}") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_record_store() -> EmbeddingStore {
        let mut store = EmbeddingStore::new();
        store.insert("a", Channel::Sentence, vec![1.0, 0.0, 0.5, -2.0].into()).unwrap();
        store.insert("b", Channel::Sentence, vec![0.25, 1.0, 0.0, 3.0].into()).unwrap();
        store
    }

    #[test]
    fn cosine_reference_values() {
        assert_eq!(cosine(&[0.3, -1.2, 4.0], &[0.3, -1.2, 4.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c - 0.974_631_8).abs() < 1e-6, "{c}");
        assert!((c - 32.0 / (14f64.sqrt() * 77f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(EmbeddingError::ZeroNorm)));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(EmbeddingError::IncompatibleDims { .. })));
    }

    #[test]
    fn store_tracks_channel_dims() {
        let store = two_record_store();
        assert_eq!(store.channel_dims().get(&Channel::Sentence), Some(&4));
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn store_rejects_bad_records() {
        let mut store = two_record_store();
        assert!(matches!(
            store.insert("c", Channel::Sentence, vec![1.0; 5].into()),
            Err(EmbeddingError::DimMismatch { .. })
        ));
        assert!(matches!(
            store.insert("a", Channel::Sentence, vec![1.0; 4].into()),
            Err(EmbeddingError::Duplicate { .. })
        ));
        assert!(matches!(
            store.insert("d", Channel::E1, vec![1.0, f32::NAN].into()),
            Err(EmbeddingError::NonFinite { position: 1, .. })
        ));
    }

    #[test]
    fn binary_format_layout() {
        let mut store = EmbeddingStore::new();
        store.insert("ab", Channel::E1, vec![1.5].into()).unwrap();
        let bytes = store.to_binary();
        let mut expected = b"RAREMB01".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"e1");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1.5f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn binary_decoding_errors() {
        let bytes = two_record_store().to_binary();
        assert!(matches!(EmbeddingStore::from_binary(b"RAREMB02\0\0\0\0"), Err(EmbeddingError::BadMagic)));
        assert!(matches!(
            EmbeddingStore::from_binary(&bytes[..bytes.len() - 3]),
            Err(EmbeddingError::Truncated { index: 1, .. })
        ));
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(EmbeddingStore::from_binary(&nan), Err(EmbeddingError::NonFinite { .. })));
    }

    #[test]
    fn load_sniffs_both_encodings() {
        let dir = tempfile::tempdir().unwrap();
        let store = two_record_store();
        let bin = dir.path().join("s.rarb");
        let jsonl = dir.path().join("s.jsonl");
        store.save(&bin).unwrap();
        store.save(&jsonl).unwrap();
        assert_eq!(load_store(&bin).unwrap(), store);
        assert_eq!(load_store(&jsonl).unwrap(), store);
        // Re-serializing the loaded file reproduces the bytes.
        write_store(&load_store(&bin).unwrap(), &dir.path().join("again.rarb")).unwrap();
        assert_eq!(std::fs::read(&bin).unwrap(), std::fs::read(dir.path().join("again.rarb")).unwrap());
    }

    fn arb_store() -> impl Strategy<Value = EmbeddingStore> {
        (1usize..6, proptest::collection::vec(any::<u32>(), 1..40)).prop_map(|(dim, seeds)| {
            let mut store = EmbeddingStore::new();
            for (i, chunk) in seeds.chunks(dim).enumerate() {
                let values: Vec<f32> = (0..dim)
                    .map(|j| {
                        let bits = chunk.get(j).copied().unwrap_or(0x3f80_0000);
                        let v = f32::from_bits(bits);
                        if v.is_finite() {
                            v
                        } else {
                            1.0
                        }
                    })
                    .collect();
                store.insert(format!("id{i}"), Channel::ALL[i % 8], values.into()).unwrap_or(());
            }
            store
        })
    }

    proptest! {
        #[test]
        fn both_encodings_round_trip_bit_exactly(store in arb_store()) {
            let bin = EmbeddingStore::from_binary(&store.to_binary()).unwrap();
            let json = EmbeddingStore::from_jsonl(store.to_jsonl().as_bytes()).unwrap();
            for (id, ch, v) in store.records() {
                let bits: Vec<u32> = v.values().iter().map(|x| x.to_bits()).collect();
                let from_bin: Vec<u32> = bin.require(id, ch).unwrap().values().iter().map(|x| x.to_bits()).collect();
                let from_json: Vec<u32> = json.require(id, ch).unwrap().values().iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(&bits, &from_bin);
                prop_assert_eq!(&bits, &from_json);
            }
            prop_assert_eq!(bin.to_binary(), store.to_binary());
        }

        #[test]
        fn cosine_is_symmetric_and_scale_free(
            u in proptest::collection::vec(-10.0f32..10.0, 8),
            v in proptest::collection::vec(-10.0f32..10.0, 8),
        ) {
            prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
            let c = cosine(&u, &v).unwrap();
            prop_assert_eq!(c.to_bits(), cosine(&v, &u).unwrap().to_bits());
            prop_assert!((-1.0..=1.0).contains(&c));
            for scale in [0.5f32, 2.0, 10.0] {
                let scaled: Vec<f32> = u.iter().map(|x| x * scale).collect();
                prop_assert!((cosine(&scaled, &v).unwrap() - c).abs() < 1e-6);
            }
        }
    }
}
