//! The message digest structure (`DS`): a hash-indexed bitstring over the
//! packets a node currently stores, plus per-message timestamps for expiry.
//!
//! A packet's id is the SHA-256 of its full wire bytes; the id's first 16
//! bits, reduced mod the table size, select one bit in the table. Neighbors
//! exchange the timestamp-free [`CompactDigest`] and request the bit indices
//! they are missing. Collisions are tolerated rather than resolved: a lookup
//! returns every stored packet at that index and requesters deduplicate by
//! id. The false-negative cost of that choice follows the birthday bound
//! k²/(2·table_size) at k stored messages.

use std::collections::BTreeMap;

/// Default bit-table size: a 512-byte compact digest, small enough to ride in
/// a handful of link-layer fragments at typical message loads.
pub const DEFAULT_TABLE_SIZE: usize = 4096;

/// Collision-resistant id of a packet: SHA-256 over the full packet bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MessageId([u8; 32]);

impl MessageId {
    pub fn of_packet(packet: &[u8]) -> Self {
        use sha2::Digest as _;
        Self(sha2::Sha256::digest(packet).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// First 8 bytes as a big-endian integer; the log's compact message id.
    pub fn short(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().unwrap())
    }

    /// Table slot for this id: first 16 bits mod `table_size`. Stable across
    /// versions; changing it is a protocol break.
    pub fn bit_index(&self, table_size: usize) -> u16 {
        (u16::from_be_bytes([self.0[0], self.0[1]]) as usize % table_size) as u16
    }
}

impl std::fmt::Debug for MessageId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MessageId({:016x})", self.short())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DigestError {
    /// Differing table sizes mean the peers speak different protocol versions.
    #[error("digest table size mismatch: theirs {theirs}, mine {mine}")]
    TableSizeMismatch { theirs: usize, mine: usize },
    #[error("table size {0} must be a positive multiple of 8, at most 65536")]
    BadTableSize(usize),
}

#[derive(Clone)]
struct Entry {
    packet: Vec<u8>,
    first_seen_ms: u64,
}

/// A node's full digest: bit table plus stored packets with first-seen times.
#[derive(Clone)]
pub struct Digest {
    table_size: usize,
    bits: Vec<u8>,
    entries: BTreeMap<MessageId, Entry>,
}

impl Digest {
    pub fn new(table_size: usize) -> Result<Self, DigestError> {
        if table_size == 0 || table_size % 8 != 0 || table_size > 1 << 16 {
            return Err(DigestError::BadTableSize(table_size));
        }
        Ok(Self {
            table_size,
            bits: vec![0u8; table_size / 8],
            entries: BTreeMap::new(),
        })
    }

    pub fn table_size(&self) -> usize {
        self.table_size
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records a packet. Idempotent: re-adding keeps the original timestamp.
    pub fn add(&mut self, packet: &[u8], now_ms: u64) -> MessageId {
        let id = MessageId::of_packet(packet);
        self.entries.entry(id).or_insert_with(|| Entry {
            packet: packet.to_vec(),
            first_seen_ms: now_ms,
        });
        set_bit(&mut self.bits, id.bit_index(self.table_size));
        id
    }

    pub fn contains(&self, id: &MessageId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn first_seen(&self, id: &MessageId) -> Option<u64> {
        self.entries.get(id).map(|e| e.first_seen_ms)
    }

    /// The timestamp-free form that goes on the wire.
    pub fn compact(&self) -> CompactDigest {
        CompactDigest {
            table_size: self.table_size,
            bits: self.bits.clone(),
        }
    }

    /// Every stored packet whose id hashes to `index`, in id order. Unset or
    /// out-of-range indices — including maliciously crafted ones — give an
    /// empty list.
    pub fn lookup_by_index(&self, index: u16) -> Vec<(MessageId, &[u8])> {
        if index as usize >= self.table_size || !get_bit(&self.bits, index) {
            return Vec::new();
        }
        self.entries
            .iter()
            .filter(|(id, _)| id.bit_index(self.table_size) == index)
            .map(|(id, e)| (*id, e.packet.as_slice()))
            .collect()
    }

    /// Drops entries older than `time_to_keep_ms`. A bit stays set iff some
    /// surviving entry still hashes to it.
    pub fn expire_before(&mut self, now_ms: u64, time_to_keep_ms: u64) {
        let cutoff = now_ms.saturating_sub(time_to_keep_ms);
        self.entries.retain(|_, e| e.first_seen_ms >= cutoff);
        self.bits.fill(0);
        let table_size = self.table_size;
        let slots: Vec<u16> = self.entries.keys().map(|id| id.bit_index(table_size)).collect();
        for index in slots {
            set_bit(&mut self.bits, index);
        }
    }

    /// Forgets everything (distancing): entries and bits, table size kept.
    pub fn wipe(&mut self) {
        self.entries.clear();
        self.bits.fill(0);
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = &MessageId> {
        self.entries.keys()
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Digest(table={}, entries={}, bits={})",
            self.table_size,
            self.entries.len(),
            self.popcount()
        )
    }
}

/// Bit indices set in `theirs` but not in `mine`, ascending: the positions the
/// local node should request.
pub fn diff(theirs: &CompactDigest, mine: &Digest) -> Result<Vec<u16>, DigestError> {
    if theirs.table_size != mine.table_size {
        return Err(DigestError::TableSizeMismatch {
            theirs: theirs.table_size,
            mine: mine.table_size,
        });
    }
    let mut missing = Vec::new();
    for (byte_idx, (t, m)) in theirs.bits.iter().zip(mine.bits.iter()).enumerate() {
        let wanted = t & !m;
        if wanted == 0 {
            continue;
        }
        for bit in 0..8 {
            if wanted & (0x80 >> bit) != 0 {
                missing.push((byte_idx * 8 + bit) as u16);
            }
        }
    }
    Ok(missing)
}

/// Bit table only — no timestamps, no packets. This is what DIGEST traffic
/// carries.
#[derive(Clone, PartialEq, Eq)]
pub struct CompactDigest {
    table_size: usize,
    bits: Vec<u8>,
}

impl CompactDigest {
    pub fn table_size(&self) -> usize {
        self.table_size
    }

    pub fn bit(&self, index: u16) -> bool {
        (index as usize) < self.table_size && get_bit(&self.bits, index)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Wire form: 2-byte big-endian byte-length of the table, then the raw
    /// bit array, most significant bit first.
    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + self.bits.len());
        out.extend_from_slice(&(self.bits.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.bits);
        out
    }

    pub fn from_wire(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < 2 {
            return None;
        }
        let byte_len = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
        if byte_len == 0 || byte_len > 8192 || bytes.len() != 2 + byte_len {
            return None;
        }
        Some(Self {
            table_size: byte_len * 8,
            bits: bytes[2..].to_vec(),
        })
    }

    pub fn wire_size(table_size: usize) -> usize {
        2 + table_size / 8
    }
}

impl std::fmt::Debug for CompactDigest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let pop: usize = self.bits.iter().map(|b| b.count_ones() as usize).sum();
        write!(f, "CompactDigest(table={}, bits={})", self.table_size, pop)
    }
}

fn set_bit(bits: &mut [u8], index: u16) {
    bits[index as usize / 8] |= 0x80 >> (index % 8);
}

fn get_bit(bits: &[u8], index: u16) -> bool {
    bits[index as usize / 8] & (0x80 >> (index % 8)) != 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_packet(rng: &mut impl RngCore) -> Vec<u8> {
        let mut p = vec![0u8; 255];
        rng.fill_bytes(&mut p);
        p
    }

    #[test]
    fn add_then_contains() {
        let mut d = Digest::new(DEFAULT_TABLE_SIZE).unwrap();
        let pkt = [7u8; 255];
        let id = d.add(&pkt, 1000);
        assert!(d.contains(&id));
        assert!(d.compact().bit(id.bit_index(DEFAULT_TABLE_SIZE)));
    }

    #[test]
    fn re_add_keeps_original_timestamp() {
        let mut d = Digest::new(DEFAULT_TABLE_SIZE).unwrap();
        let pkt = [7u8; 255];
        let id = d.add(&pkt, 1000);
        d.add(&pkt, 9000);
        assert_eq!(d.len(), 1);
        assert_eq!(d.first_seen(&id), Some(1000));
    }

    #[test]
    fn popcount_tracks_collisions_exactly() {
        // Oracle: enumerate every id's slot by hand and count distinct slots.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut d = Digest::new(DEFAULT_TABLE_SIZE).unwrap();
        let mut slots = std::collections::BTreeSet::new();
        for _ in 0..100 {
            let pkt = random_packet(&mut rng);
            let id = d.add(&pkt, 0);
            slots.insert(id.bit_index(DEFAULT_TABLE_SIZE));
        }
        assert_eq!(d.len(), 100);
        assert!(d.popcount() <= 100);
        assert_eq!(d.popcount(), slots.len());
    }

    #[test]
    fn compact_copies_bits_verbatim() {
        let mut d = Digest::new(DEFAULT_TABLE_SIZE).unwrap();
        assert!(d.compact().bits().iter().all(|&b| b == 0));
        d.add(&[1u8; 255], 0);
        assert_eq!(d.compact().bits(), d.bits());
    }

    #[test]
    fn self_diff_is_empty() {
        let mut d = Digest::new(DEFAULT_TABLE_SIZE).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            d.add(&random_packet(&mut rng), 0);
        }
        assert!(diff(&d.compact(), &d).unwrap().is_empty());
    }

    #[test]
    fn single_missing_bit_reported() {
        let mut theirs = Digest::new(DEFAULT_TABLE_SIZE).unwrap();
        let mine = Digest::new(DEFAULT_TABLE_SIZE).unwrap();
        // Craft a packet landing on bit 5 by brute force.
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        loop {
            let pkt = random_packet(&mut rng);
            if MessageId::of_packet(&pkt).bit_index(DEFAULT_TABLE_SIZE) == 5 {
                theirs.add(&pkt, 0);
                break;
            }
        }
        assert_eq!(diff(&theirs.compact(), &mine).unwrap(), vec![5]);
    }

    #[test]
    fn diff_matches_per_index_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut a = Digest::new(DEFAULT_TABLE_SIZE).unwrap();
        let mut b = Digest::new(DEFAULT_TABLE_SIZE).unwrap();
        for _ in 0..200 {
            a.add(&random_packet(&mut rng), 0);
            b.add(&random_packet(&mut rng), 0);
        }
        let got = diff(&a.compact(), &b).unwrap();
        // Oracle: loop every index, compare bit by bit.
        let ac = a.compact();
        let bc = b.compact();
        let expect: Vec<u16> = (0..DEFAULT_TABLE_SIZE as u16)
            .filter(|&i| ac.bit(i) && !bc.bit(i))
            .collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn diff_rejects_size_mismatch() {
        let a = Digest::new(1024).unwrap();
        let b = Digest::new(DEFAULT_TABLE_SIZE).unwrap();
        assert_eq!(
            diff(&a.compact(), &b),
            Err(DigestError::TableSizeMismatch { theirs: 1024, mine: 4096 })
        );
    }

    #[test]
    fn lookup_unset_and_out_of_range() {
        let mut d = Digest::new(16).unwrap();
        assert!(d.lookup_by_index(3).is_empty());
        d.add(&[9u8; 255], 0);
        assert!(d.lookup_by_index(9999).is_empty());
    }

    #[test]
    fn lookup_returns_single_packet() {
        let mut d = Digest::new(DEFAULT_TABLE_SIZE).unwrap();
        let pkt = [42u8; 255];
        let id = d.add(&pkt, 0);
        let got = d.lookup_by_index(id.bit_index(DEFAULT_TABLE_SIZE));
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].1, &pkt[..]);
    }

    /// Brute-force search for two packets colliding at table size 16.
    fn collision_pair(rng: &mut impl RngCore) -> (Vec<u8>, Vec<u8>, u16) {
        let first = random_packet(rng);
        let slot = MessageId::of_packet(&first).bit_index(16);
        loop {
            let second = random_packet(rng);
            if second != first && MessageId::of_packet(&second).bit_index(16) == slot {
                return (first, second, slot);
            }
        }
    }

    #[test]
    fn lookup_returns_all_colliders() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let (p1, p2, slot) = collision_pair(&mut rng);
        let mut d = Digest::new(16).unwrap();
        d.add(&p1, 0);
        d.add(&p2, 0);
        let got = d.lookup_by_index(slot);
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn expire_noop_when_young() {
        let mut d = Digest::new(DEFAULT_TABLE_SIZE).unwrap();
        d.add(&[1u8; 255], 5_000);
        d.expire_before(10_000, 300_000);
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn expire_all_clears_bits() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let mut d = Digest::new(DEFAULT_TABLE_SIZE).unwrap();
        for _ in 0..20 {
            d.add(&random_packet(&mut rng), 0);
        }
        d.expire_before(400_000, 300_000);
        assert!(d.is_empty());
        assert_eq!(d.popcount(), 0);
    }

    #[test]
    fn expire_keeps_bit_for_surviving_collider() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let (p1, p2, slot) = collision_pair(&mut rng);
        let mut d = Digest::new(16).unwrap();
        d.add(&p1, 0); // will expire
        d.add(&p2, 250_000); // survives
        d.expire_before(400_000, 300_000);
        assert_eq!(d.len(), 1);
        assert_eq!(d.lookup_by_index(slot).len(), 1);
        assert!(d.compact().bit(slot));
    }

    #[test]
    fn bits_rebuilt_from_survivors_after_expiry() {
        // Soundness: recompute the table from surviving entries.
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mut d = Digest::new(256).unwrap();
        for i in 0..300u64 {
            d.add(&random_packet(&mut rng), i * 1000);
        }
        d.expire_before(300_000, 150_000);
        let mut expect = vec![0u8; 256 / 8];
        for id in d.ids() {
            set_bit(&mut expect, id.bit_index(256));
        }
        assert_eq!(d.bits(), &expect[..]);
    }

    #[test]
    fn false_negative_rate_within_2x_of_birthday_bound() {
        // Known limitation: two nodes holding different colliding messages
        // never learn about the overlap. The expected number of colliding
        // pairs at k messages is about k^2 / (2 * table), measured here.
        let k = 100usize;
        let table = DEFAULT_TABLE_SIZE;
        let bound = (k * k) as f64 / (2.0 * table as f64);
        let trials = 400;
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let mut total_pairs = 0usize;
        for _ in 0..trials {
            let mut by_slot: BTreeMap<u16, usize> = BTreeMap::new();
            for _ in 0..k {
                let id = MessageId::of_packet(&random_packet(&mut rng));
                *by_slot.entry(id.bit_index(table)).or_default() += 1;
            }
            total_pairs += by_slot.values().map(|&c| c * (c - 1) / 2).sum::<usize>();
        }
        let measured = total_pairs as f64 / trials as f64;
        assert!(
            measured < 2.0 * bound && measured > bound / 2.0,
            "measured {measured:.3} vs bound {bound:.3}"
        );
    }

    #[test]
    fn wire_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let mut d = Digest::new(DEFAULT_TABLE_SIZE).unwrap();
        for _ in 0..64 {
            d.add(&random_packet(&mut rng), 0);
        }
        let c = d.compact();
        let wire = c.to_wire();
        assert_eq!(wire.len(), CompactDigest::wire_size(DEFAULT_TABLE_SIZE));
        assert_eq!(CompactDigest::from_wire(&wire).unwrap(), c);
        assert!(CompactDigest::from_wire(&wire[..wire.len() - 1]).is_none());
    }

    #[test]
    fn diffs_never_overlap() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        for _ in 0..20 {
            let mut a = Digest::new(512).unwrap();
            let mut b = Digest::new(512).unwrap();
            for _ in 0..rng.gen_range(0..80) {
                a.add(&random_packet(&mut rng), 0);
            }
            for _ in 0..rng.gen_range(0..80) {
                b.add(&random_packet(&mut rng), 0);
            }
            let ab: std::collections::BTreeSet<u16> =
                diff(&a.compact(), &b).unwrap().into_iter().collect();
            let ba: std::collections::BTreeSet<u16> =
                diff(&b.compact(), &a).unwrap().into_iter().collect();
            assert!(ab.is_disjoint(&ba));
        }
    }
}
