//! Deterministic stand-ins for the hash, signature, threshold-signature and
//! VRF primitives.
//!
//! None of this is real cryptography. Every tag is `sha256(domain ∥ key ∥ m)`,
//! which keeps the three properties the protocol leans on:
//!
//! * signing is a pure function of `(key, message)`, so the VRF value
//!   `|R - hash(sig)|` is well defined;
//! * every valid `t`-subset of shares combines to the *same* threshold
//!   signature, so all nodes derive the same next CRS;
//! * verification fails for a foreign key or an altered message.
//!
//! Public keys carry the material needed to re-derive the tag. Protocol code
//! treats them as opaque tokens.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::NodeId;

/// A 256-bit digest, ordered as a big-endian unsigned integer.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);
    pub const MAX: Digest = Digest([0xffu8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Builds a digest holding a small integer, mostly for tests.
    pub fn from_u64(v: u64) -> Digest {
        let mut out = [0u8; 32];
        out[24..].copy_from_slice(&v.to_be_bytes());
        Digest(out)
    }

    /// `self mod m` treating the digest as a 256-bit big-endian integer.
    pub fn mod_u64(&self, m: u64) -> u64 {
        assert!(m > 0, "modulus must be positive");
        let m = m as u128;
        self.0
            .iter()
            .fold(0u128, |acc, &b| ((acc << 8) | b as u128) % m) as u64
    }

    /// `|self - other|` on `[0, 2^256)`, no wraparound.
    pub fn abs_diff(&self, other: &Digest) -> Digest {
        let (hi, lo) = match self.cmp(other) {
            Ordering::Less => (other, self),
            _ => (self, other),
        };
        let mut out = [0u8; 32];
        let mut borrow = 0i16;
        for i in (0..32).rev() {
            let mut d = hi.0[i] as i16 - lo.0[i] as i16 - borrow;
            if d < 0 {
                d += 256;
                borrow = 1;
            } else {
                borrow = 0;
            }
            out[i] = d as u8;
        }
        debug_assert_eq!(borrow, 0);
        Digest(out)
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        if s.len() != 64 {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let pair = std::str::from_utf8(chunk).ok()?;
            out[i] = u8::from_str_radix(pair, 16).ok()?;
        }
        Some(Digest(out))
    }

    /// Short prefix for logs.
    pub fn short(&self) -> String {
        self.to_hex()[..12].to_string()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn hash(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Hashes the concatenation of `parts` without allocating the joined buffer.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

// Domain tags, one per message kind.
pub(crate) mod domain {
    pub const SECRET_KEY: &[u8] = b"lattice/secret-key";
    pub const SIGN: &[u8] = b"lattice/sign";
    pub const SHARE_KEY: &[u8] = b"lattice/share-key";
    pub const SHARE_SIGN: &[u8] = b"lattice/share-sign";
    pub const GROUP_KEY: &[u8] = b"lattice/group-key";
    pub const THRESHOLD_SIGN: &[u8] = b"lattice/threshold-sign";
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SecretKey(Digest);

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

/// Identity token. Carries the verification material of the test double;
/// callers must not rely on its contents.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct PublicKey {
    pub node: NodeId,
    verifier: Digest,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

impl KeyPair {
    /// Derives the key pair of `node` from the scenario seed.
    pub fn derive(seed: u64, node: NodeId) -> KeyPair {
        let sk = hash_parts(&[domain::SECRET_KEY, &seed.to_be_bytes(), &node.0.to_be_bytes()]);
        KeyPair {
            public: PublicKey { node, verifier: sk },
            secret: SecretKey(sk),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Signature {
    pub signer: NodeId,
    pub message_digest: Digest,
    pub tag: Digest,
}

pub fn sign(keys: &KeyPair, message: &[u8]) -> Signature {
    let message_digest = hash(message);
    Signature {
        signer: keys.public.node,
        message_digest,
        tag: sign_tag(&keys.secret, &message_digest),
    }
}

fn sign_tag(sk: &SecretKey, message_digest: &Digest) -> Digest {
    hash_parts(&[domain::SIGN, &sk.0 .0, &message_digest.0])
}

pub fn verify(pk: &PublicKey, message: &[u8], sig: &Signature) -> bool {
    let message_digest = hash(message);
    sig.signer == pk.node
        && sig.message_digest == message_digest
        && sig.tag == sign_tag(&SecretKey(pk.verifier), &message_digest)
}

/// `|crs - hash(sig.tag)|` as a 256-bit unsigned integer.
pub fn vrf_distance(crs: &Digest, sig: &Signature) -> Digest {
    crs.abs_diff(&hash(&sig.tag.0))
}

/// Identifies a signing committee (one notary set or CRS set of one epoch).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct GroupId(pub Digest);

impl GroupId {
    pub fn notary(epoch: u64, chain: u32) -> GroupId {
        GroupId(hash_parts(&[b"group/notary", &epoch.to_be_bytes(), &chain.to_be_bytes()]))
    }

    pub fn crs(epoch: u64) -> GroupId {
        GroupId(hash_parts(&[b"group/crs", &epoch.to_be_bytes()]))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShareSecret(Digest);

impl fmt::Debug for ShareSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ShareSecret(..)")
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct VerificationKey {
    pub share_index: u32,
    verifier: Digest,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct ShareSignature {
    pub share_index: u32,
    pub message_digest: Digest,
    pub tag: Digest,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct ThresholdSignature {
    pub group_id: GroupId,
    pub message_digest: Digest,
    pub tag: Digest,
}

/// Public half of a threshold group, enough to verify shares and combined
/// signatures.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct GroupPublicKey {
    pub group_id: GroupId,
    pub threshold: usize,
    verification_keys: Vec<VerificationKey>,
    master: Digest,
}

/// Output of the trusted seeded setup for one committee.
#[derive(Clone, Debug)]
pub struct ThresholdGroup {
    pub public: GroupPublicKey,
    shares: Vec<ShareSecret>,
}

impl ThresholdGroup {
    /// Derives a `(size, threshold)` group from `(seed, group_id)`.
    pub fn setup(seed: u64, group_id: GroupId, size: usize, threshold: usize) -> ThresholdGroup {
        assert!(threshold >= 1 && threshold <= size.max(1), "invalid threshold {threshold}/{size}");
        let master = hash_parts(&[domain::GROUP_KEY, &seed.to_be_bytes(), &group_id.0 .0]);
        let shares: Vec<ShareSecret> = (0..size as u32)
            .map(|i| ShareSecret(hash_parts(&[domain::SHARE_KEY, &master.0, &i.to_be_bytes()])))
            .collect();
        let verification_keys = shares
            .iter()
            .enumerate()
            .map(|(i, s)| VerificationKey { share_index: i as u32, verifier: s.0 })
            .collect();
        ThresholdGroup {
            public: GroupPublicKey { group_id, threshold, verification_keys, master },
            shares,
        }
    }

    pub fn share_secret(&self, index: usize) -> ShareSecret {
        self.shares[index]
    }
}

impl GroupPublicKey {
    pub fn size(&self) -> usize {
        self.verification_keys.len()
    }

    pub fn verification_key(&self, index: u32) -> Option<&VerificationKey> {
        self.verification_keys.get(index as usize)
    }
}

fn share_tag(secret: &Digest, message_digest: &Digest) -> Digest {
    hash_parts(&[domain::SHARE_SIGN, &secret.0, &message_digest.0])
}

pub fn share_sign(index: u32, secret: &ShareSecret, message: &[u8]) -> ShareSignature {
    let message_digest = hash(message);
    ShareSignature {
        share_index: index,
        message_digest,
        tag: share_tag(&secret.0, &message_digest),
    }
}

pub fn verify_share(vk: &VerificationKey, message: &[u8], share: &ShareSignature) -> bool {
    let message_digest = hash(message);
    share.share_index == vk.share_index
        && share.message_digest == message_digest
        && share.tag == share_tag(&vk.verifier, &message_digest)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ThresholdError {
    #[error("need {needed} distinct valid shares, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("share {index} does not verify")]
    InvalidShare { index: u32 },
}

fn threshold_tag(master: &Digest, message_digest: &Digest) -> Digest {
    hash_parts(&[domain::THRESHOLD_SIGN, &master.0, &message_digest.0])
}

/// Combines at least `t` shares into the group signature. The result depends
/// only on `(group, message)`, never on which shares were used.
pub fn combine(
    group: &GroupPublicKey,
    message: &[u8],
    shares: &[ShareSignature],
    t: usize,
) -> Result<ThresholdSignature, ThresholdError> {
    let mut seen = BTreeSet::new();
    for share in shares {
        let valid = group
            .verification_key(share.share_index)
            .is_some_and(|vk| verify_share(vk, message, share));
        if !valid {
            return Err(ThresholdError::InvalidShare { index: share.share_index });
        }
        seen.insert(share.share_index);
    }
    if seen.len() < t {
        return Err(ThresholdError::InsufficientShares { needed: t, got: seen.len() });
    }
    let message_digest = hash(message);
    Ok(ThresholdSignature {
        group_id: group.group_id,
        message_digest,
        tag: threshold_tag(&group.master, &message_digest),
    })
}

pub fn verify_threshold(group: &GroupPublicKey, message: &[u8], sig: &ThresholdSignature) -> bool {
    let message_digest = hash(message);
    sig.group_id == group.group_id
        && sig.message_digest == message_digest
        && sig.tag == threshold_tag(&group.master, &message_digest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(t: usize) -> ThresholdGroup {
        ThresholdGroup::setup(7, GroupId::crs(0), 4, t)
    }

    #[test]
    fn hash_is_deterministic_and_distinguishes_inputs() {
        assert_eq!(hash(b"abc"), hash(b"abc"));
        assert_ne!(hash(b""), hash(b"a"));
        // sha256("") is the well-known e3b0c442... value.
        assert!(hash(b"").to_hex().starts_with("e3b0c442"));
    }

    #[test]
    fn sign_round_trip_and_foreign_key() {
        let q = KeyPair::derive(1, NodeId(1));
        let r = KeyPair::derive(1, NodeId(2));
        let sig = sign(&q, b"status");
        assert!(verify(&q.public, b"status", &sig));
        assert!(!verify(&r.public, b"status", &sig));
        assert!(!verify(&q.public, b"statuz", &sig));
        assert_eq!(sig, sign(&q, b"status"));
    }

    #[test]
    fn keys_replay_from_seed() {
        assert_eq!(KeyPair::derive(9, NodeId(3)), KeyPair::derive(9, NodeId(3)));
        assert_ne!(KeyPair::derive(9, NodeId(3)), KeyPair::derive(10, NodeId(3)));
    }

    #[test]
    fn shares_verify_per_member() {
        let g = group(2);
        let s0 = share_sign(0, &g.share_secret(0), b"m");
        let s1 = share_sign(1, &g.share_secret(1), b"m");
        assert!(verify_share(g.public.verification_key(0).unwrap(), b"m", &s0));
        assert!(!verify_share(g.public.verification_key(0).unwrap(), b"x", &s0));
        assert!(!verify_share(g.public.verification_key(1).unwrap(), b"m", &s0));
        assert_ne!(s0.tag, s1.tag);
    }

    #[test]
    fn combine_is_unique_across_subsets() {
        let g = group(2);
        let sh: Vec<_> = (0..4).map(|i| share_sign(i, &g.share_secret(i as usize), b"m")).collect();
        let a = combine(&g.public, b"m", &sh[1..3], 2).unwrap();
        let b = combine(&g.public, b"m", &sh[2..4], 2).unwrap();
        assert_eq!(a, b);
        assert!(verify_threshold(&g.public, b"m", &a));
        assert!(!verify_threshold(&g.public, b"n", &a));
    }

    #[test]
    fn combine_errors() {
        let g = group(2);
        let s0 = share_sign(0, &g.share_secret(0), b"m");
        assert_eq!(
            combine(&g.public, b"m", &[s0], 2),
            Err(ThresholdError::InsufficientShares { needed: 2, got: 1 })
        );
        // duplicates count once
        assert!(matches!(
            combine(&g.public, b"m", &[s0, s0], 2),
            Err(ThresholdError::InsufficientShares { .. })
        ));
        let bad = share_sign(1, &g.share_secret(1), b"other");
        assert_eq!(
            combine(&g.public, b"m", &[s0, bad], 2),
            Err(ThresholdError::InvalidShare { index: 1 })
        );
    }

    #[test]
    fn vrf_distance_cases() {
        let keys = KeyPair::derive(3, NodeId(0));
        let sig = sign(&keys, b"x");
        let h = hash(&sig.tag.0);
        assert_eq!(vrf_distance(&h, &sig), Digest::ZERO);
        assert_eq!(Digest::from_u64(5).abs_diff(&Digest::from_u64(3)), Digest::from_u64(2));
        assert_eq!(Digest::from_u64(3).abs_diff(&Digest::from_u64(5)), Digest::from_u64(2));
    }

    #[test]
    fn abs_diff_borrows_across_bytes() {
        let a = Digest::from_u64(0x1_0000);
        let b = Digest::from_u64(0xffff);
        assert_eq!(a.abs_diff(&b), Digest::from_u64(1));
        assert_eq!(Digest::MAX.abs_diff(&Digest::ZERO), Digest::MAX);
    }

    #[test]
    fn mod_u64_matches_small_values() {
        assert_eq!(Digest::from_u64(7).mod_u64(3), 1);
        assert_eq!(Digest::from_u64(12345).mod_u64(1), 0);
        // 2^256 - 1 mod 3 == 0 since 2^256 ≡ 1 (mod 3)
        assert_eq!(Digest::MAX.mod_u64(3), 0);
    }

    #[test]
    fn hex_round_trip() {
        let d = hash(b"q");
        assert_eq!(Digest::from_hex(&d.to_hex()), Some(d));
        assert_eq!(Digest::from_hex("zz"), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn digest() -> impl Strategy<Value = Digest> {
            any::<[u8; 32]>().prop_map(Digest)
        }

        proptest! {
            #[test]
            fn distance_is_symmetric(a in digest(), b in digest()) {
                prop_assert_eq!(a.abs_diff(&b), b.abs_diff(&a));
                prop_assert_eq!(a.abs_diff(&a), Digest::ZERO);
            }

            #[test]
            fn distance_matches_u128_when_small(a in any::<u64>(), b in any::<u64>()) {
                let d = Digest::from_u64(a).abs_diff(&Digest::from_u64(b));
                prop_assert_eq!(d, Digest::from_u64(a.abs_diff(b)));
            }
        }
    }
}
