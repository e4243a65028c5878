//! Elements and the total order used by every selection and merge.

use smallvec::SmallVec;
use std::cmp::Ordering;

pub type Key = u64;

/// Key of padding elements. Generated inputs never use it, so padding sorts
/// after all real data and can be stripped by key.
pub const SENTINEL_KEY: Key = u64::MAX;

pub type Payload = SmallVec<[u8; 8]>;

/// Fixed-size record: 8 key bytes plus `elem_size - 8` payload bytes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Element {
    pub key: Key,
    pub payload: Payload,
}

impl Element {
    pub fn new(key: Key, payload: &[u8]) -> Self {
        Element {
            key,
            payload: SmallVec::from_slice(payload),
        }
    }

    /// Element with `key` whose payload holds `tag` little-endian, truncated
    /// or zero-extended to `payload_len` bytes.
    pub fn tagged(key: Key, tag: u64, payload_len: usize) -> Self {
        let bytes = tag.to_le_bytes();
        let mut payload: Payload = SmallVec::with_capacity(payload_len);
        for i in 0..payload_len {
            payload.push(if i < 8 { bytes[i] } else { 0 });
        }
        Element { key, payload }
    }

    pub fn sentinel(payload_len: usize) -> Self {
        Element {
            key: SENTINEL_KEY,
            payload: SmallVec::from_elem(0, payload_len),
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.key == SENTINEL_KEY
    }

    pub fn serialized_len(&self) -> usize {
        8 + self.payload.len()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.key.to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    pub fn read_from(bytes: &[u8]) -> Self {
        let mut k = [0u8; 8];
        k.copy_from_slice(&bytes[..8]);
        Element {
            key: u64::from_le_bytes(k),
            payload: SmallVec::from_slice(&bytes[8..]),
        }
    }
}

/// Key plus origin. Unique within one selection or merge instance, which
/// makes the order total even with duplicate keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ElementRef {
    pub key: Key,
    pub run: u32,
    pub pos: u64,
}

impl ElementRef {
    pub fn new(key: Key, run: usize, pos: u64) -> Self {
        ElementRef {
            key,
            run: run as u32,
            pos,
        }
    }
}

/// Lexicographic on `(key, run, pos)`.
pub fn compare(a: &ElementRef, b: &ElementRef) -> Ordering {
    a.cmp(b)
}

/// Strict variant of [`compare`].
pub fn less(a: &ElementRef, b: &ElementRef) -> bool {
    compare(a, b) == Ordering::Less
}
