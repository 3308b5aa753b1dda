//! Simulation-grade authentication.
//!
//! Signatures are keyed pseudorandom tags issued from a trusted setup table.
//! Tags can only be produced through [`SigningKey`], which stands in for the
//! unforgeability of a real scheme inside a closed simulation. The API mirrors
//! sign/verify so an asymmetric scheme can be dropped in later.
//!
//! # Canonical encoding
//!
//! Everything that is hashed or signed goes through [`CanonicalEncoder`]:
//!
//! * a domain label first: `u8` length followed by the ASCII label;
//! * integers as fixed-width big-endian (`u8`, `u32`, `u64`);
//! * `f64` as the big-endian bytes of `to_bits()`;
//! * operator ids as `u32`;
//! * byte strings as a `u32` length prefix followed by the bytes.
//!
//! There are no delimiters; the length prefixes make the encoding
//! prefix-free. This layout is frozen because ledger digests cover it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{derive_seed, OperatorId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthError {
    #[error("unknown signer {0}")]
    UnknownSigner(OperatorId),
    #[error("signer {0} appears twice in the chain")]
    DuplicateSigner(OperatorId),
    #[error("tag {position} does not verify for signer {signer}")]
    BadTag { position: usize, signer: OperatorId },
    #[error("malformed signed message: {0}")]
    Malformed(&'static str),
    #[error("certificate has {valid} valid distinct signers, needs {required}")]
    InsufficientQuorum { valid: usize, required: usize },
    #[error("malformed canonical payload")]
    Decode,
}

/// SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest32(pub [u8; 32]);

impl Digest32 {
    pub fn of(bytes: &[u8]) -> Self {
        Digest32(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Digest32(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest32({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Builds canonical byte strings. See the module docs for the layout.
#[derive(Debug, Clone)]
pub struct CanonicalEncoder {
    buf: Vec<u8>,
}

impl CanonicalEncoder {
    pub fn new(domain: &str) -> Self {
        assert!(domain.len() < 256, "domain label too long");
        let mut buf = Vec::with_capacity(64);
        buf.push(domain.len() as u8);
        buf.extend_from_slice(domain.as_bytes());
        CanonicalEncoder { buf }
    }

    pub fn u8(mut self, v: u8) -> Self {
        self.buf.push(v);
        self
    }

    pub fn u32(mut self, v: u32) -> Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn f64(self, v: f64) -> Self {
        self.u64(v.to_bits())
    }

    pub fn operator(self, id: OperatorId) -> Self {
        self.u32(id.0)
    }

    pub fn bytes(mut self, data: &[u8]) -> Self {
        self.buf
            .extend_from_slice(&(data.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(data);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Reads back what [`CanonicalEncoder`] wrote.
#[derive(Debug)]
pub struct CanonicalDecoder<'a> {
    rest: &'a [u8],
}

impl<'a> CanonicalDecoder<'a> {
    /// Fails unless `data` starts with the given domain label.
    pub fn new(data: &'a [u8], domain: &str) -> Result<Self, AuthError> {
        let mut dec = CanonicalDecoder { rest: data };
        let len = dec.u8()? as usize;
        if dec.take(len)? != domain.as_bytes() {
            return Err(AuthError::Decode);
        }
        Ok(dec)
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8], AuthError> {
        if self.rest.len() < len {
            return Err(AuthError::Decode);
        }
        let (head, tail) = self.rest.split_at(len);
        self.rest = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8, AuthError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, AuthError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, AuthError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, AuthError> {
        self.u64().map(f64::from_bits)
    }

    pub fn operator(&mut self) -> Result<OperatorId, AuthError> {
        self.u32().map(OperatorId)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], AuthError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    /// Fails if trailing bytes remain.
    pub fn end(self) -> Result<(), AuthError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(AuthError::Decode)
        }
    }
}

/// Authentication tag. Only [`SigningKey`] can create one.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Tag([u8; 32]);

impl Tag {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Rebuilds a tag read back from an exported record. A parsed tag is
    /// only as good as [`KeyRegistry`] verification says it is.
    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Tag(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tag({})", &self.to_hex()[..12])
    }
}

fn mac(secret: &[u8; 32], message: &[u8]) -> [u8; 32] {
    // Nested hashing so the tag is not open to length extension.
    let inner = Sha256::new()
        .chain_update(secret)
        .chain_update(message)
        .finalize();
    Sha256::new()
        .chain_update(secret)
        .chain_update(inner)
        .finalize()
        .into()
}

fn chain_message(payload: &[u8], chain: &[OperatorId]) -> Vec<u8> {
    let mut enc = CanonicalEncoder::new("sig")
        .bytes(payload)
        .u32(chain.len() as u32);
    for id in chain {
        enc = enc.operator(*id);
    }
    enc.finish()
}

/// Private signing key of one operator.
#[derive(Clone)]
pub struct SigningKey {
    id: OperatorId,
    secret: [u8; 32],
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKey")
            .field("id", &self.id)
            .finish_non_exhaustive()
    }
}

impl SigningKey {
    pub fn id(&self) -> OperatorId {
        self.id
    }

    /// Tag over `payload` as the sole signer.
    pub fn sign(&self, payload: &[u8]) -> Tag {
        self.sign_in_chain(payload, &[self.id])
    }

    /// Tag over `payload` and the signer chain up to and including this key.
    fn sign_in_chain(&self, payload: &[u8], chain: &[OperatorId]) -> Tag {
        debug_assert_eq!(chain.last(), Some(&self.id));
        Tag(mac(&self.secret, &chain_message(payload, chain)))
    }
}

/// Trusted setup table: one key per operator `1..=N`.
#[derive(Debug, Clone)]
pub struct KeyRegistry {
    setup_seed: u64,
    secrets: Vec<[u8; 32]>,
}

impl KeyRegistry {
    pub fn new(n: usize, setup_seed: u64) -> Self {
        let secrets = (0..n)
            .map(|i| {
                let mut hasher = Sha256::new();
                hasher.update(b"registry-key");
                hasher.update(derive_seed(setup_seed, "registry", i as u64).to_be_bytes());
                hasher.finalize().into()
            })
            .collect();
        KeyRegistry {
            setup_seed,
            secrets,
        }
    }

    pub fn n(&self) -> usize {
        self.secrets.len()
    }

    pub fn setup_seed(&self) -> u64 {
        self.setup_seed
    }

    fn secret(&self, id: OperatorId) -> Result<&[u8; 32], AuthError> {
        if id.0 == 0 {
            return Err(AuthError::UnknownSigner(id));
        }
        self.secrets
            .get(id.index())
            .ok_or(AuthError::UnknownSigner(id))
    }

    pub fn signing_key(&self, id: OperatorId) -> Result<SigningKey, AuthError> {
        Ok(SigningKey {
            id,
            secret: *self.secret(id)?,
        })
    }

    /// Checks a single-signer tag produced by [`SigningKey::sign`].
    pub fn verify_tag(
        &self,
        signer: OperatorId,
        payload: &[u8],
        tag: &Tag,
    ) -> Result<(), AuthError> {
        let expected = mac(self.secret(signer)?, &chain_message(payload, &[signer]));
        if expected == tag.0 {
            Ok(())
        } else {
            Err(AuthError::BadTag {
                position: 0,
                signer,
            })
        }
    }

    pub fn verify(&self, msg: &SignedMessage) -> Result<(), AuthError> {
        if msg.signer_chain.is_empty() {
            return Err(AuthError::Malformed("empty signer chain"));
        }
        if msg.signer_chain.len() != msg.tags.len() {
            return Err(AuthError::Malformed("tag count differs from chain length"));
        }
        let mut seen = BTreeSet::new();
        for (position, (signer, tag)) in msg.signer_chain.iter().zip(&msg.tags).enumerate() {
            if !seen.insert(*signer) {
                return Err(AuthError::DuplicateSigner(*signer));
            }
            let expected = mac(
                self.secret(*signer)?,
                &chain_message(&msg.payload, &msg.signer_chain[..=position]),
            );
            if expected != tag.0 {
                return Err(AuthError::BadTag {
                    position,
                    signer: *signer,
                });
            }
        }
        Ok(())
    }

    pub fn is_valid(&self, msg: &SignedMessage) -> bool {
        self.verify(msg).is_ok()
    }
}

/// Payload plus an ordered chain of signers; tag `k` covers the payload and
/// the first `k + 1` chain entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignedMessage {
    pub payload: Vec<u8>,
    pub signer_chain: Vec<OperatorId>,
    pub tags: Vec<Tag>,
}

impl SignedMessage {
    pub fn new(key: &SigningKey, payload: Vec<u8>) -> Self {
        let tag = key.sign(&payload);
        SignedMessage {
            payload,
            signer_chain: vec![key.id],
            tags: vec![tag],
        }
    }

    /// Appends `key`'s signature for relaying.
    pub fn countersign(&self, key: &SigningKey) -> Result<SignedMessage, AuthError> {
        if self.signer_chain.contains(&key.id) {
            return Err(AuthError::DuplicateSigner(key.id));
        }
        let mut next = self.clone();
        next.signer_chain.push(key.id);
        let tag = key.sign_in_chain(&next.payload, &next.signer_chain);
        next.tags.push(tag);
        Ok(next)
    }

    pub fn origin(&self) -> Option<OperatorId> {
        self.signer_chain.first().copied()
    }

    pub fn last_signer(&self) -> Option<OperatorId> {
        self.signer_chain.last().copied()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = CanonicalEncoder::new("signed")
            .bytes(&self.payload)
            .u32(self.signer_chain.len() as u32);
        for (id, tag) in self.signer_chain.iter().zip(&self.tags) {
            enc = enc.operator(*id).bytes(&tag.0);
        }
        enc.finish()
    }
}

/// Byte string signed by each vote of a certificate over `digest`.
pub fn vote_payload(digest: &Digest32) -> Vec<u8> {
    CanonicalEncoder::new("qc-vote").bytes(&digest.0).finish()
}

/// At least `2f + 1` distinct operator signatures over one digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuorumCertificate {
    pub digest: Digest32,
    pub votes: BTreeMap<OperatorId, Tag>,
}

impl QuorumCertificate {
    pub fn new(digest: Digest32) -> Self {
        QuorumCertificate {
            digest,
            votes: BTreeMap::new(),
        }
    }

    pub fn vote(key: &SigningKey, digest: &Digest32) -> Tag {
        key.sign(&vote_payload(digest))
    }

    pub fn add_vote(&mut self, signer: OperatorId, tag: Tag) {
        self.votes.insert(signer, tag);
    }

    pub fn signers(&self) -> impl Iterator<Item = OperatorId> + '_ {
        self.votes.keys().copied()
    }

    /// Number of distinct signers whose tag verifies.
    pub fn valid_signers(&self, registry: &KeyRegistry) -> usize {
        let payload = vote_payload(&self.digest);
        self.votes
            .iter()
            .filter(|(id, tag)| registry.verify_tag(**id, &payload, tag).is_ok())
            .count()
    }

    pub fn verify(&self, registry: &KeyRegistry, required: usize) -> Result<(), AuthError> {
        let valid = self.valid_signers(registry);
        if valid >= required {
            Ok(())
        } else {
            Err(AuthError::InsufficientQuorum { valid, required })
        }
    }
}

/// Common random bit source, a pseudorandom function of
/// `(shared seed, instance, iteration)`.
///
/// With `commonness = 1.0` every operator sees the same bit. Lower values
/// make the draw private to each operator with probability `1 - commonness`,
/// for adversarial-coin experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommonCoin {
    pub seed: u64,
    pub commonness: f64,
}

impl CommonCoin {
    pub fn new(seed: u64) -> Self {
        CommonCoin {
            seed,
            commonness: 1.0,
        }
    }

    pub fn with_commonness(seed: u64, commonness: f64) -> Self {
        CommonCoin {
            seed,
            commonness: commonness.clamp(0.0, 1.0),
        }
    }

    fn prf(&self, label: &str, instance: u64, iteration: u64, who: u32) -> [u8; 32] {
        let bytes = CanonicalEncoder::new(label)
            .u64(self.seed)
            .u64(instance)
            .u64(iteration)
            .u32(who)
            .finish();
        Sha256::digest(bytes).into()
    }

    /// The shared bit for `(instance, iteration)`.
    pub fn flip(&self, instance: u64, iteration: u64) -> bool {
        self.prf("coin", instance, iteration, 0)[0] & 1 == 1
    }

    /// The bit operator `who` observes.
    pub fn flip_for(&self, who: OperatorId, instance: u64, iteration: u64) -> bool {
        if self.commonness >= 1.0 {
            return self.flip(instance, iteration);
        }
        let draw = self.prf("coin-common", instance, iteration, 0);
        let u = u64::from_be_bytes(draw[..8].try_into().unwrap()) as f64 / u64::MAX as f64;
        if u < self.commonness {
            self.flip(instance, iteration)
        } else {
            self.prf("coin-private", instance, iteration, who.0)[0] & 1 == 1
        }
    }
}
