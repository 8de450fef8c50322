//! Additive and polynomial (Shamir) secret sharing over `Z_p`.
//!
//! Party ids double as Shamir evaluation points, so party `i` holds `q(i)`.
//! Interactive pieces (joint random sharing of zero, additive-to-polynomial
//! conversion) are written as small per-party state machines; the party
//! network drives them with real messages.

use std::collections::BTreeMap;
use std::fmt;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldElement, FieldError, FieldParams};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SharingError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("invalid sharing parameters: {0}")]
    InvalidParams(String),
    #[error("need at least {needed} shares, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("duplicate share from party {0}")]
    DuplicateParty(PartyId),
    #[error("missing share from party {0}")]
    MissingParty(PartyId),
    #[error("share owner {0} is outside 1..={1}")]
    UnknownParty(PartyId, usize),
    #[error("shares belong to different secrets ({0} vs {1})")]
    MixedSecrets(SecretId, SecretId),
    #[error("malformed share encoding: {0}")]
    Malformed(String),
}

/// Identity of a computing party; also its Shamir evaluation point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartyId(u16);

impl PartyId {
    pub fn new(id: u16) -> Result<Self, SharingError> {
        if id == 0 {
            return Err(SharingError::InvalidParams(
                "party ids start at 1 (0 is the secret's evaluation point)".into(),
            ));
        }
        Ok(Self(id))
    }

    pub fn get(&self) -> u16 {
        self.0
    }

    pub fn index(&self) -> usize {
        self.0 as usize - 1
    }

    /// Parties `1..=n`.
    pub fn all(n: usize) -> impl Iterator<Item = PartyId> {
        (1..=n as u16).map(PartyId)
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

/// Opaque identifier of a shared value, assigned by the exercise planner.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SecretId(pub String);

impl SecretId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SecretId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SecretId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for SecretId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SharingParams {
    n: usize,
    t: usize,
    field: FieldParams,
}

impl SharingParams {
    /// `n >= 3`, `1 <= t <= (n-1)/2` and `n < p`.
    pub fn new(n: usize, t: usize, field: FieldParams) -> Result<Self, SharingError> {
        if n < 3 {
            return Err(SharingError::InvalidParams(format!(
                "need at least 3 parties, got {n}"
            )));
        }
        if t == 0 || 2 * t + 1 > n {
            return Err(SharingError::InvalidParams(format!(
                "degree {t} must satisfy 1 <= t <= (n-1)/2 for n = {n}"
            )));
        }
        if n as u128 >= field.modulus() || n > u16::MAX as usize - 1 {
            return Err(SharingError::InvalidParams(format!(
                "{n} parties do not fit below the modulus"
            )));
        }
        Ok(Self { n, t, field })
    }

    /// Uses the largest degree that still allows degree reduction: `(n-1)/2`.
    pub fn with_default_degree(n: usize, field: FieldParams) -> Result<Self, SharingError> {
        Self::new(n, n.saturating_sub(1) / 2, field)
    }

    pub fn parties(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.t
    }

    pub fn field(&self) -> FieldParams {
        self.field
    }

    pub fn party_ids(&self) -> impl Iterator<Item = PartyId> {
        PartyId::all(self.n)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdditiveShare {
    pub owner: PartyId,
    pub value: FieldElement,
    pub secret_id: SecretId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolynomialShare {
    pub owner: PartyId,
    pub value: FieldElement,
    pub secret_id: SecretId,
}

/// Share wire layout: u16 BE id length, UTF-8 id, u16 BE owner, 16-byte LE value.
fn encode_share(secret_id: &SecretId, owner: PartyId, value: FieldElement) -> Vec<u8> {
    let id = secret_id.0.as_bytes();
    let mut out = Vec::with_capacity(2 + id.len() + 2 + 16);
    out.extend_from_slice(&(id.len() as u16).to_be_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&owner.0.to_be_bytes());
    out.extend_from_slice(&value.to_le_bytes());
    out
}

fn decode_share(
    bytes: &[u8],
    field: FieldParams,
) -> Result<(SecretId, PartyId, FieldElement), SharingError> {
    let malformed = |m: &str| SharingError::Malformed(m.to_string());
    if bytes.len() < 2 {
        return Err(malformed("truncated id length"));
    }
    let len = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
    if bytes.len() != 2 + len + 2 + 16 {
        return Err(malformed("length does not match layout"));
    }
    let id = std::str::from_utf8(&bytes[2..2 + len]).map_err(|_| malformed("id is not UTF-8"))?;
    let owner = PartyId::new(u16::from_be_bytes([bytes[2 + len], bytes[3 + len]]))?;
    let mut raw = [0u8; 16];
    raw.copy_from_slice(&bytes[4 + len..]);
    Ok((SecretId::new(id), owner, field.from_le_bytes(raw)?))
}

impl AdditiveShare {
    pub fn encode(&self) -> Vec<u8> {
        encode_share(&self.secret_id, self.owner, self.value)
    }

    pub fn decode(bytes: &[u8], field: FieldParams) -> Result<Self, SharingError> {
        let (secret_id, owner, value) = decode_share(bytes, field)?;
        Ok(Self {
            owner,
            value,
            secret_id,
        })
    }
}

impl PolynomialShare {
    pub fn encode(&self) -> Vec<u8> {
        encode_share(&self.secret_id, self.owner, self.value)
    }

    pub fn decode(bytes: &[u8], field: FieldParams) -> Result<Self, SharingError> {
        let (secret_id, owner, value) = decode_share(bytes, field)?;
        Ok(Self {
            owner,
            value,
            secret_id,
        })
    }
}

/// Splits `x` into `n` additive shares; the first `n-1` are uniform.
pub fn additive_share<R: RngCore + CryptoRng + ?Sized>(
    x: FieldElement,
    n: usize,
    secret_id: &SecretId,
    rng: &mut R,
) -> Result<Vec<AdditiveShare>, SharingError> {
    if n < 2 {
        return Err(SharingError::InvalidParams(format!(
            "additive sharing needs at least 2 parties, got {n}"
        )));
    }
    let field = x.params();
    let mut shares = Vec::with_capacity(n);
    let mut acc = field.zero();
    for owner in PartyId::all(n - 1) {
        let value = field.sample_uniform(rng)?;
        acc += value;
        shares.push(AdditiveShare {
            owner,
            value,
            secret_id: secret_id.clone(),
        });
    }
    shares.push(AdditiveShare {
        owner: PartyId(n as u16),
        value: x - acc,
        secret_id: secret_id.clone(),
    });
    Ok(shares)
}

fn check_owners<'a>(
    owners: impl Iterator<Item = (PartyId, &'a SecretId)>,
    bound: usize,
) -> Result<Vec<PartyId>, SharingError> {
    let mut seen = BTreeMap::new();
    let mut first: Option<&SecretId> = None;
    for (owner, id) in owners {
        if owner.get() as usize > bound {
            return Err(SharingError::UnknownParty(owner, bound));
        }
        match first {
            None => first = Some(id),
            Some(f) if f != id => return Err(SharingError::MixedSecrets(f.clone(), id.clone())),
            _ => {}
        }
        if seen.insert(owner, ()).is_some() {
            return Err(SharingError::DuplicateParty(owner));
        }
    }
    Ok(seen.into_keys().collect())
}

/// Sums exactly one share per party `1..=n`.
pub fn reconstruct_additive(
    shares: &[AdditiveShare],
    n: usize,
) -> Result<FieldElement, SharingError> {
    let owners = check_owners(shares.iter().map(|s| (s.owner, &s.secret_id)), n)?;
    if let Some(missing) = PartyId::all(n).find(|p| !owners.contains(p)) {
        return Err(SharingError::MissingParty(missing));
    }
    Ok(shares.iter().map(|s| s.value).sum())
}

/// Dealer side of the joint random sharing of zero: one additive share of 0 per party.
pub fn jrsz<R: RngCore + CryptoRng + ?Sized>(
    params: &SharingParams,
    secret_id: &SecretId,
    rng: &mut R,
) -> Result<Vec<AdditiveShare>, SharingError> {
    additive_share(params.field().zero(), params.parties(), secret_id, rng)
}

/// Evaluates `coefficients[0] + coefficients[1] x + ...` by Horner's rule.
pub fn eval_polynomial(coefficients: &[FieldElement], x: FieldElement) -> FieldElement {
    coefficients
        .iter()
        .rev()
        .fold(x.params().zero(), |acc, &c| acc * x + c)
}

/// Random degree-`t` polynomial with constant term `x`.
pub fn random_polynomial<R: RngCore + CryptoRng + ?Sized>(
    x: FieldElement,
    t: usize,
    rng: &mut R,
) -> Result<Vec<FieldElement>, SharingError> {
    let field = x.params();
    let mut coefficients = Vec::with_capacity(t + 1);
    coefficients.push(x);
    for _ in 0..t {
        coefficients.push(field.sample_uniform(rng)?);
    }
    Ok(coefficients)
}

/// Shares of a fixed polynomial for parties `1..=n`.
pub fn shamir_share_with_coefficients(
    coefficients: &[FieldElement],
    params: &SharingParams,
    secret_id: &SecretId,
) -> Vec<PolynomialShare> {
    let field = params.field();
    params
        .party_ids()
        .map(|owner| PolynomialShare {
            owner,
            value: eval_polynomial(coefficients, field.element(owner.get() as u128)),
            secret_id: secret_id.clone(),
        })
        .collect()
}

pub fn shamir_share<R: RngCore + CryptoRng + ?Sized>(
    x: FieldElement,
    params: &SharingParams,
    secret_id: &SecretId,
    rng: &mut R,
) -> Result<Vec<PolynomialShare>, SharingError> {
    let coefficients = random_polynomial(x, params.degree(), rng)?;
    Ok(shamir_share_with_coefficients(
        &coefficients,
        params,
        secret_id,
    ))
}

/// Lagrange coefficients that map values at `points` to the value at 0.
pub fn lagrange_at_zero(
    points: &[PartyId],
    field: FieldParams,
) -> Result<Vec<FieldElement>, SharingError> {
    points
        .iter()
        .map(|&i| {
            let xi = field.element(i.get() as u128);
            let mut num = field.one();
            let mut den = field.one();
            for &j in points.iter().filter(|&&j| j != i) {
                let xj = field.element(j.get() as u128);
                num *= xj;
                den *= xj - xi;
            }
            Ok(num * den.inv()?)
        })
        .collect()
}

/// Constant term of the polynomial through the given shares.
///
/// Requires at least `t + 1` shares from distinct parties.
pub fn lagrange_reconstruct(
    shares: &[PolynomialShare],
    params: &SharingParams,
) -> Result<FieldElement, SharingError> {
    let owners = check_owners(
        shares.iter().map(|s| (s.owner, &s.secret_id)),
        params.parties(),
    )?;
    if owners.len() < params.degree() + 1 {
        return Err(SharingError::InsufficientShares {
            needed: params.degree() + 1,
            got: owners.len(),
        });
    }
    let points: Vec<PartyId> = shares.iter().map(|s| s.owner).collect();
    let lambdas = lagrange_at_zero(&points, params.field())?;
    Ok(shares.iter().zip(lambdas).map(|(s, l)| s.value * l).sum())
}

/// Per-party state of the additive-to-polynomial share conversion.
///
/// Each party Shamir-shares its own additive share to everybody and sums the
/// `n` sub-shares it receives; by additivity the sums are polynomial shares of
/// the original secret.
#[derive(Debug)]
pub struct Sq2pq {
    me: PartyId,
    params: SharingParams,
    secret_id: SecretId,
    received: BTreeMap<PartyId, FieldElement>,
}

impl Sq2pq {
    /// Starts the conversion and returns the sub-share destined for each party
    /// (including the one this party keeps for itself).
    pub fn start<R: RngCore + CryptoRng + ?Sized>(
        mine: &AdditiveShare,
        params: SharingParams,
        rng: &mut R,
    ) -> Result<(Self, Vec<PolynomialShare>), SharingError> {
        let outgoing = shamir_share(mine.value, &params, &mine.secret_id, rng)?;
        let mut state = Self {
            me: mine.owner,
            params,
            secret_id: mine.secret_id.clone(),
            received: BTreeMap::new(),
        };
        let own = outgoing[mine.owner.index()].value;
        state.received.insert(mine.owner, own);
        Ok((state, outgoing))
    }

    /// Records the sub-share `value` that `from` sent to this party.
    pub fn receive(&mut self, from: PartyId, value: FieldElement) -> Result<(), SharingError> {
        if from.get() as usize > self.params.parties() {
            return Err(SharingError::UnknownParty(from, self.params.parties()));
        }
        if self.received.insert(from, value).is_some() {
            return Err(SharingError::DuplicateParty(from));
        }
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.received.len() == self.params.parties()
    }

    pub fn finish(self) -> Result<PolynomialShare, SharingError> {
        if let Some(missing) = self
            .params
            .party_ids()
            .find(|p| !self.received.contains_key(p))
        {
            return Err(SharingError::MissingParty(missing));
        }
        Ok(PolynomialShare {
            owner: self.me,
            value: self.received.into_values().sum(),
            secret_id: self.secret_id,
        })
    }
}

/// Runs the conversion for all parties at once, delivering sub-shares in memory.
pub fn sq2pq_all<R: RngCore + CryptoRng + ?Sized>(
    additive: &[AdditiveShare],
    params: SharingParams,
    rng: &mut R,
) -> Result<Vec<PolynomialShare>, SharingError> {
    reconstruct_check_len(additive.len(), params.parties())?;
    if let Some((i, s)) = additive
        .iter()
        .enumerate()
        .find(|(i, s)| s.owner.index() != *i)
    {
        return Err(SharingError::Malformed(format!(
            "share {i} belongs to {} (expected party order)",
            s.owner
        )));
    }
    let mut states = Vec::with_capacity(additive.len());
    let mut outgoing = Vec::with_capacity(additive.len());
    for share in additive {
        let (state, out) = Sq2pq::start(share, params, rng)?;
        states.push(state);
        outgoing.push(out);
    }
    for (sender_idx, out) in outgoing.iter().enumerate() {
        let sender = additive[sender_idx].owner;
        for sub in out.iter().filter(|s| s.owner != sender) {
            states[sub.owner.index()].receive(sender, sub.value)?;
        }
    }
    states.into_iter().map(Sq2pq::finish).collect()
}

fn reconstruct_check_len(got: usize, n: usize) -> Result<(), SharingError> {
    if got != n {
        return Err(SharingError::InsufficientShares { needed: n, got });
    }
    Ok(())
}
