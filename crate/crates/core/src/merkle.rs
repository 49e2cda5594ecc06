//! Merkle trees over SHA-256 digests with self-contained inclusion proofs.
//!
//! Leaves and internal nodes are domain separated (`0x00` and `0x01` prefix
//! bytes). Whenever a level holds an odd number of nodes (more than one), the
//! last node is duplicated before pairing. A single-leaf tree has the leaf as
//! its root and height zero.
//!
//! Proofs carry an explicit side flag per sibling, so a [`MerkleProof`] can be
//! stored and checked later without access to the tree.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const LEAF_PREFIX: u8 = 0x00;
pub const NODE_PREFIX: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MerkleError {
    #[error("cannot hash an empty leaf")]
    EmptyLeaf,
    #[error("cannot build a tree without leaves")]
    NoLeaves,
    #[error("leaf index {index} out of range for {len} leaves")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("digest must be 32 bytes, got {0}")]
    BadLength(usize),
    #[error("invalid hex digest: {0}")]
    BadHex(String),
}

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const LEN: usize = 32;

    pub fn from_slice(bytes: &[u8]) -> Result<Self, MerkleError> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| MerkleError::BadLength(bytes.len()))?;
        Ok(Digest(arr))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, MerkleError> {
        let bytes = hex::decode(s).map_err(|e| MerkleError::BadHex(e.to_string()))?;
        Self::from_slice(&bytes)
    }

    /// Plain SHA-256 with no domain prefix.
    pub fn sha256(data: &[u8]) -> Self {
        Digest(Sha256::digest(data).into())
    }

    /// Returns a copy with bit `bit` (0 = MSB of byte 0) inverted.
    pub fn with_bit_flipped(mut self, bit: usize) -> Self {
        self.0[bit / 8] ^= 0x80 >> (bit % 8);
        self
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = MerkleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_hex(s)
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Leaf hash: `SHA-256(0x00 || data)`.
pub fn hash_leaf(data: &[u8]) -> Result<Digest, MerkleError> {
    if data.is_empty() {
        return Err(MerkleError::EmptyLeaf);
    }
    let mut h = Sha256::new();
    h.update([LEAF_PREFIX]);
    h.update(data);
    Ok(Digest(h.finalize().into()))
}

/// Internal node hash: `SHA-256(0x01 || left || right)`. Not commutative.
pub fn hash_internal(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([NODE_PREFIX]);
    h.update(left.0);
    h.update(right.0);
    Digest(h.finalize().into())
}

/// Which side of the running hash a sibling sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

impl Side {
    pub fn flipped(self) -> Self {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathNode {
    pub digest: Digest,
    pub side: Side,
}

/// Inclusion proof for one leaf.
///
/// Serializes to `{"leaf_index":..,"path":[{"digest":..,"side":"L"|"R"}..],"root":..}`
/// with lowercase hex digests. That layout is persisted in ledger rows, so the
/// field order here must not change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleProof {
    pub leaf_index: u64,
    pub path: Vec<PathNode>,
    pub root: Digest,
}

impl MerkleProof {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("proof serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleTree {
    leaves: Vec<Digest>,
    /// `levels[0]` is the (padded) leaf level, the last level is `[root]`.
    levels: Vec<Vec<Digest>>,
    root: Digest,
}

impl MerkleTree {
    pub fn build(leaves: &[Digest]) -> Result<Self, MerkleError> {
        build_tree(leaves)
    }

    pub fn root(&self) -> Digest {
        self.root
    }

    /// The original, unpadded leaves.
    pub fn leaves(&self) -> &[Digest] {
        &self.leaves
    }

    pub fn levels(&self) -> &[Vec<Digest>] {
        &self.levels
    }

    /// Number of levels above the leaves.
    pub fn height(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn proof(&self, index: usize) -> Result<MerkleProof, MerkleError> {
        gen_proof(self, index)
    }
}

fn pad_odd(level: &mut Vec<Digest>) {
    if level.len() > 1 && level.len() % 2 == 1 {
        let last = *level.last().expect("non-empty level");
        level.push(last);
    }
}

pub fn build_tree(leaves: &[Digest]) -> Result<MerkleTree, MerkleError> {
    if leaves.is_empty() {
        return Err(MerkleError::NoLeaves);
    }
    let mut current = leaves.to_vec();
    pad_odd(&mut current);
    let mut levels = Vec::new();
    while current.len() > 1 {
        let mut next: Vec<Digest> = current.chunks_exact(2).map(|p| hash_internal(&p[0], &p[1])).collect();
        pad_odd(&mut next);
        levels.push(current);
        current = next;
    }
    let root = current[0];
    levels.push(current);
    Ok(MerkleTree { leaves: leaves.to_vec(), levels, root })
}

pub fn gen_proof(tree: &MerkleTree, index: usize) -> Result<MerkleProof, MerkleError> {
    if index >= tree.leaves.len() {
        return Err(MerkleError::IndexOutOfRange { index, len: tree.leaves.len() });
    }
    let mut path = Vec::with_capacity(tree.height());
    let mut i = index;
    for level in &tree.levels[..tree.height()] {
        let node = if i % 2 == 0 {
            PathNode { digest: level[i + 1], side: Side::Right }
        } else {
            PathNode { digest: level[i - 1], side: Side::Left }
        };
        path.push(node);
        i /= 2;
    }
    Ok(MerkleProof { leaf_index: index as u64, path, root: tree.root })
}

/// Recomputes the root from `leaf` and the proof's path.
pub fn fold_path(leaf: &Digest, path: &[PathNode]) -> Digest {
    path.iter().fold(*leaf, |acc, node| match node.side {
        Side::Left => hash_internal(&node.digest, &acc),
        Side::Right => hash_internal(&acc, &node.digest),
    })
}

/// Simplified verification: needs only the leaf, the proof, and a trusted root.
///
/// The proof's own root copy must also agree with `expected_root`, so a
/// tampered proof record never verifies. Side flags must be consistent with
/// `leaf_index`.
pub fn verify_proof(leaf: &Digest, proof: &MerkleProof, expected_root: &Digest) -> bool {
    if proof.path.len() >= 64 || proof.root != *expected_root {
        return false;
    }
    let sides_match_index = proof.path.iter().enumerate().all(|(level, node)| {
        let is_right_child = (proof.leaf_index >> level) & 1 == 1;
        (node.side == Side::Left) == is_right_child
    });
    if !sides_match_index || proof.leaf_index >> proof.path.len() != 0 {
        return false;
    }
    fold_path(leaf, &proof.path) == *expected_root
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(i: usize) -> Digest {
        hash_leaf(format!("leaf-{i}").as_bytes()).unwrap()
    }

    #[test]
    fn leaf_hash_matches_reference_sha256() {
        // sha256(0x00 || "abc") from an independent implementation (Python hashlib).
        let expected = "609f6e36d2405585188d5cfd761f407c7cc46a7d3f314c88270469dde315fcd1";
        assert_eq!(hash_leaf(b"abc").unwrap().to_hex(), expected);
    }

    #[test]
    fn empty_leaf_rejected() {
        assert_eq!(hash_leaf(b""), Err(MerkleError::EmptyLeaf));
        assert_eq!(build_tree(&[]).unwrap_err(), MerkleError::NoLeaves);
    }

    #[test]
    fn internal_hash_is_ordered() {
        let (a, b) = (leaf(1), leaf(2));
        assert_ne!(hash_internal(&a, &b), hash_internal(&b, &a));
        assert_eq!(hash_internal(&a, &a), hash_internal(&a, &a));
    }

    #[test]
    fn single_leaf_tree() {
        let t = build_tree(&[leaf(0)]).unwrap();
        assert_eq!(t.root(), leaf(0));
        assert_eq!(t.height(), 0);
        let p = t.proof(0).unwrap();
        assert!(p.path.is_empty());
        assert!(verify_proof(&leaf(0), &p, &t.root()));
    }

    #[test]
    fn index_out_of_range() {
        let t = build_tree(&[leaf(0), leaf(1), leaf(2)]).unwrap();
        // index 3 exists only as padding
        assert_eq!(t.proof(3).unwrap_err(), MerkleError::IndexOutOfRange { index: 3, len: 3 });
    }

    #[test]
    fn odd_levels_duplicate_last_node() {
        let leaves: Vec<_> = (0..5).map(leaf).collect();
        let t = build_tree(&leaves).unwrap();
        assert_eq!(t.levels()[0].len(), 6);
        assert_eq!(t.levels()[0][5], leaves[4]);
        assert_eq!(t.levels()[1].len(), 4);
        assert_eq!(t.levels()[1][3], t.levels()[1][2]);
        assert_eq!(t.levels()[2].len(), 2);
        assert_eq!(t.levels()[3], vec![t.root()]);
    }

    #[test]
    fn four_leaf_worked_example() {
        let tx: Vec<Digest> = (1..=4).map(|i| hash_leaf(format!("Tran#{i}").as_bytes()).unwrap()).collect();
        let h12 = hash_internal(&tx[0], &tx[1]);
        let h34 = hash_internal(&tx[2], &tx[3]);
        let t = build_tree(&tx).unwrap();
        assert_eq!(t.root(), hash_internal(&h12, &h34));
        // Frozen from Python hashlib with the same prefixes.
        assert_eq!(t.root().to_hex(), "a30ba5c53af17cbc8f500a212b3c76eb501e64eb38d93b95b06a5110fec6a428");
        let p = t.proof(3).unwrap();
        assert_eq!(
            p.path,
            vec![PathNode { digest: tx[2], side: Side::Left }, PathNode { digest: h12, side: Side::Left }]
        );
        assert!(verify_proof(&tx[3], &p, &t.root()));
    }

    #[test]
    fn proof_json_layout_is_stable() {
        let t = build_tree(&[Digest([0u8; 32]), Digest([0xab; 32])]).unwrap();
        let p = t.proof(1).unwrap();
        let json = p.to_json();
        let expected = format!(
            "{{\"leaf_index\":1,\"path\":[{{\"digest\":\"{}\",\"side\":\"L\"}}],\"root\":\"{}\"}}",
            "00".repeat(32),
            t.root().to_hex()
        );
        assert_eq!(json, expected);
        assert_eq!(MerkleProof::from_json(&json).unwrap(), p);
    }

    #[test]
    fn digest_parsing_rejects_bad_lengths() {
        assert_eq!(Digest::from_slice(&[0u8; 31]), Err(MerkleError::BadLength(31)));
        assert!(Digest::from_hex("zz").is_err());
        assert!(Digest::from_hex(&"00".repeat(33)).is_err());
    }
}
