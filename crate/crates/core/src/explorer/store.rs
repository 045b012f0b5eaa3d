//! Visited-state stores.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};

use dashmap::DashMap;
use serde::{Deserialize, Serialize};

/// Default bitstate size: 2^24 bits.
pub const DEFAULT_BITS: u64 = 1 << 24;
pub const DEFAULT_HASHES: u32 = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum StoreKind {
    /// Exact membership.
    #[default]
    Exact,
    /// `bits` must be a power of two.
    Bitstate { bits: u64, hashes: u32 },
    /// No deduplication; every path is explored.
    None,
}

impl StoreKind {
    pub fn bitstate() -> Self {
        StoreKind::Bitstate {
            bits: DEFAULT_BITS,
            hashes: DEFAULT_HASHES,
        }
    }
}

/// Shared visited set. Safe for concurrent insert-and-test; a racing
/// duplicate insert may report "unseen" twice, which only costs work.
pub enum StateStore {
    /// Canonical bytes to the smallest depth they were reached at.
    Exact(DashMap<Vec<u8>, u32>),
    Bitstate {
        words: Vec<AtomicU64>,
        mask: u64,
        hashes: u32,
        inserted: AtomicU64,
    },
    None(AtomicU64),
}

fn hash_with(bytes: &[u8], salt: u8) -> u64 {
    let mut h = DefaultHasher::new();
    salt.hash(&mut h);
    bytes.hash(&mut h);
    h.finish()
}

impl StateStore {
    /// Panics if a bitstate size is not a power of two or is below 64.
    pub fn new(kind: StoreKind) -> Self {
        match kind {
            StoreKind::Exact => StateStore::Exact(DashMap::new()),
            StoreKind::Bitstate { bits, hashes } => {
                assert!(
                    bits.is_power_of_two() && bits >= 64,
                    "bitstate size must be a power of two of at least 64"
                );
                assert!(hashes >= 1, "at least one hash function");
                StateStore::Bitstate {
                    words: (0..bits / 64).map(|_| AtomicU64::new(0)).collect(),
                    mask: bits - 1,
                    hashes,
                    inserted: AtomicU64::new(0),
                }
            }
            StoreKind::None => StateStore::None(AtomicU64::new(0)),
        }
    }

    /// Records a state; returns whether it had been seen before.
    pub fn insert(&self, bytes: &[u8]) -> bool {
        self.insert_at(bytes, 0)
    }

    /// Like [`insert`](Self::insert), but in the exact store a state counts
    /// as seen only if it was reached at `depth` or shallower, so a state
    /// first met deep in the search is revisited with a larger budget.
    pub fn insert_at(&self, bytes: &[u8], depth: u32) -> bool {
        match self {
            StateStore::Exact(map) => match map.entry(bytes.to_vec()) {
                dashmap::Entry::Occupied(mut e) => {
                    if *e.get() <= depth {
                        true
                    } else {
                        e.insert(depth);
                        false
                    }
                }
                dashmap::Entry::Vacant(e) => {
                    e.insert(depth);
                    false
                }
            },
            StateStore::Bitstate {
                words,
                mask,
                hashes,
                inserted,
            } => {
                let h1 = hash_with(bytes, 0);
                let h2 = hash_with(bytes, 1) | 1;
                let mut seen = true;
                for i in 0..*hashes as u64 {
                    let bit = h1.wrapping_add(i.wrapping_mul(h2)) & mask;
                    let m = 1u64 << (bit % 64);
                    let prev = words[(bit / 64) as usize].fetch_or(m, Ordering::Relaxed);
                    seen &= prev & m != 0;
                }
                if !seen {
                    inserted.fetch_add(1, Ordering::Relaxed);
                }
                seen
            }
            StateStore::None(n) => {
                n.fetch_add(1, Ordering::Relaxed);
                false
            }
        }
    }

    /// Distinct states recorded (for bitstate, inserts reported unseen).
    pub fn len(&self) -> u64 {
        match self {
            StateStore::Exact(m) => m.len() as u64,
            StateStore::Bitstate { inserted, .. } => inserted.load(Ordering::Relaxed),
            StateStore::None(n) => n.load(Ordering::Relaxed),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_then_seen_in_every_mode() {
        for kind in [StoreKind::Exact, StoreKind::bitstate()] {
            let s = StateStore::new(kind);
            assert!(!s.insert(b"abc"));
            assert!(s.insert(b"abc"));
            assert!(!s.insert(b"abd"));
            assert_eq!(s.len(), 2);
        }
        let none = StateStore::new(StoreKind::None);
        assert!(!none.insert(b"x"));
        assert!(!none.insert(b"x"));
    }

    #[test]
    fn exact_store_tracks_minimum_depth() {
        let s = StateStore::new(StoreKind::Exact);
        assert!(!s.insert_at(b"s", 3));
        assert!(s.insert_at(b"s", 4));
        assert!(!s.insert_at(b"s", 1));
        assert!(s.insert_at(b"s", 3));
    }

    #[test]
    #[should_panic(expected = "power of two")]
    fn bitstate_size_must_be_power_of_two() {
        StateStore::new(StoreKind::Bitstate {
            bits: 1000,
            hashes: 3,
        });
    }
}
