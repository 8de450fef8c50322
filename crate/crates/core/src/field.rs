//! Arithmetic in the prime field `Z_p` for moduli of up to 128 bits.
//!
//! Every share, mask and protocol message lives in this field. Values are kept
//! in canonical form (`0 <= value < p`) at all times, so two elements compare
//! equal exactly when their wire encodings do.
//!
//! Products of two 128-bit residues need up to 256 bits. Moduli below `2^64`
//! take a native `u128` path; larger moduli form the full 256-bit product and
//! reduce it in chunks sized to the free high bits of the modulus.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width in bytes of a field element on the wire and in files.
pub const ELEMENT_BYTES: usize = 16;

/// The modulus used in the experiments this crate was built around (a 74-bit prime).
pub const DEFAULT_PRIME: u128 = 13_558_774_610_046_711_780_701;

/// `2^20 + 7`, a small prime convenient for worked examples.
pub const SMALL_PRIME: u128 = 1_048_583;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("modulus {0} is not prime")]
    NotPrime(u128),
    #[error("modulus mismatch: {left} vs {right}")]
    ModulusMismatch { left: u128, right: u128 },
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("value {value} is not a canonical residue modulo {modulus}")]
    NonCanonical { value: u128, modulus: u128 },
    #[error("sampling bound must be at least 1")]
    EmptyRange,
    #[error("randomness source failed: {0}")]
    Randomness(String),
}

/// Public description of the field: the prime modulus.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u128", into = "u128")]
pub struct FieldParams {
    p: u128,
}

impl FieldParams {
    /// Builds field parameters after checking that `p` is prime.
    pub fn new(p: u128) -> Result<Self, FieldError> {
        if !is_prime(p) {
            return Err(FieldError::NotPrime(p));
        }
        Ok(Self { p })
    }

    pub fn modulus(&self) -> u128 {
        self.p
    }

    /// Number of significant bits in the modulus.
    pub fn bits(&self) -> u32 {
        128 - self.p.leading_zeros()
    }

    /// Reduces an arbitrary integer into the field.
    pub fn element(&self, value: u128) -> FieldElement {
        FieldElement {
            value: value % self.p,
            params: *self,
        }
    }

    /// Embeds a signed integer, mapping negatives to `p - |x|`.
    pub fn from_i128(&self, value: i128) -> FieldElement {
        let magnitude = self.element(value.unsigned_abs());
        if value < 0 {
            -magnitude
        } else {
            magnitude
        }
    }

    /// Accepts only canonical residues.
    pub fn canonical(&self, value: u128) -> Result<FieldElement, FieldError> {
        if value >= self.p {
            return Err(FieldError::NonCanonical {
                value,
                modulus: self.p,
            });
        }
        Ok(FieldElement {
            value,
            params: *self,
        })
    }

    pub fn zero(&self) -> FieldElement {
        self.element(0)
    }

    pub fn one(&self) -> FieldElement {
        self.element(1)
    }

    pub fn from_le_bytes(&self, bytes: [u8; ELEMENT_BYTES]) -> Result<FieldElement, FieldError> {
        self.canonical(u128::from_le_bytes(bytes))
    }

    /// Draws a uniform element by rejection sampling on `bits()`-wide candidates.
    pub fn sample_uniform<R: RngCore + CryptoRng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<FieldElement, FieldError> {
        let value = sample_bounded(self.p, rng)?;
        Ok(FieldElement {
            value,
            params: *self,
        })
    }

    /// Uniform element of `Z_p \ {0}`.
    pub fn sample_nonzero<R: RngCore + CryptoRng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<FieldElement, FieldError> {
        loop {
            let x = self.sample_uniform(rng)?;
            if !x.is_zero() {
                return Ok(x);
            }
        }
    }
}

impl TryFrom<u128> for FieldParams {
    type Error = FieldError;

    fn try_from(p: u128) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<FieldParams> for u128 {
    fn from(params: FieldParams) -> u128 {
        params.p
    }
}

impl fmt::Debug for FieldParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Z_{}", self.p)
    }
}

/// Uniform integer in `[0, bound)`.
pub fn sample_bounded<R: RngCore + CryptoRng + ?Sized>(
    bound: u128,
    rng: &mut R,
) -> Result<u128, FieldError> {
    if bound == 0 {
        return Err(FieldError::EmptyRange);
    }
    if bound == 1 {
        return Ok(0);
    }
    let bits = 128 - (bound - 1).leading_zeros();
    let mask = if bits == 128 {
        u128::MAX
    } else {
        (1u128 << bits) - 1
    };
    loop {
        let mut buf = [0u8; 16];
        rng.try_fill_bytes(&mut buf)
            .map_err(|e| FieldError::Randomness(e.to_string()))?;
        let candidate = u128::from_le_bytes(buf) & mask;
        if candidate < bound {
            return Ok(candidate);
        }
    }
}

/// A canonical residue together with the modulus it belongs to.
///
/// The arithmetic operators panic when the operands come from different
/// fields; use the `try_*` methods where the moduli are not known to agree.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldElement {
    value: u128,
    params: FieldParams,
}

impl FieldElement {
    pub fn value(&self) -> u128 {
        self.value
    }

    pub fn params(&self) -> FieldParams {
        self.params
    }

    pub fn is_zero(&self) -> bool {
        self.value == 0
    }

    pub fn to_le_bytes(&self) -> [u8; ELEMENT_BYTES] {
        self.value.to_le_bytes()
    }

    fn check(&self, other: &Self) -> Result<u128, FieldError> {
        if self.params != other.params {
            return Err(FieldError::ModulusMismatch {
                left: self.params.p,
                right: other.params.p,
            });
        }
        Ok(self.params.p)
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, FieldError> {
        let p = self.check(other)?;
        Ok(self.with(add_mod(self.value, other.value, p)))
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, FieldError> {
        let p = self.check(other)?;
        Ok(self.with(sub_mod(self.value, other.value, p)))
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, FieldError> {
        let p = self.check(other)?;
        Ok(self.with(mul_mod(self.value, other.value, p)))
    }

    pub fn pow(&self, mut exponent: u128) -> Self {
        let p = self.params.p;
        let mut base = self.value;
        let mut acc = 1 % p;
        while exponent > 0 {
            if exponent & 1 == 1 {
                acc = mul_mod(acc, base, p);
            }
            base = mul_mod(base, base, p);
            exponent >>= 1;
        }
        self.with(acc)
    }

    /// Multiplicative inverse via Fermat's little theorem.
    pub fn inv(&self) -> Result<Self, FieldError> {
        if self.is_zero() {
            return Err(FieldError::ZeroInverse);
        }
        Ok(self.pow(self.params.p - 2))
    }

    fn with(&self, value: u128) -> Self {
        Self {
            value,
            params: self.params,
        }
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl Add for FieldElement {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.try_add(&rhs)
            .expect("field operands from different moduli")
    }
}

impl Sub for FieldElement {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.try_sub(&rhs)
            .expect("field operands from different moduli")
    }
}

impl Mul for FieldElement {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.try_mul(&rhs)
            .expect("field operands from different moduli")
    }
}

impl Neg for FieldElement {
    type Output = Self;
    fn neg(self) -> Self {
        self.with(sub_mod(0, self.value, self.params.p))
    }
}

impl AddAssign for FieldElement {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for FieldElement {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl MulAssign for FieldElement {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl std::iter::Sum for FieldElement {
    fn sum<I: Iterator<Item = Self>>(mut iter: I) -> Self {
        let first = iter
            .next()
            .expect("sum of an empty sequence of field elements");
        iter.fold(first, |acc, x| acc + x)
    }
}

fn add_mod(a: u128, b: u128, p: u128) -> u128 {
    let (sum, overflow) = a.overflowing_add(b);
    if overflow || sum >= p {
        sum.wrapping_sub(p)
    } else {
        sum
    }
}

fn sub_mod(a: u128, b: u128, p: u128) -> u128 {
    if a >= b {
        a - b
    } else {
        a.wrapping_sub(b).wrapping_add(p)
    }
}

/// Full 128x128 -> 256 bit product as (high, low).
fn widening_mul(a: u128, b: u128) -> (u128, u128) {
    const MASK: u128 = u64::MAX as u128;
    let (a_hi, a_lo) = (a >> 64, a & MASK);
    let (b_hi, b_lo) = (b >> 64, b & MASK);
    let ll = a_lo * b_lo;
    let lh = a_lo * b_hi;
    let hl = a_hi * b_lo;
    let hh = a_hi * b_hi;
    let mid = (ll >> 64) + (lh & MASK) + (hl & MASK);
    let low = (ll & MASK) | (mid << 64);
    let high = hh + (lh >> 64) + (hl >> 64) + (mid >> 64);
    (high, low)
}

pub(crate) fn mul_mod(a: u128, b: u128, p: u128) -> u128 {
    if p <= u64::MAX as u128 {
        return (a * b) % p;
    }
    let (high, low) = widening_mul(a, b);
    let spare = p.leading_zeros();
    let mut r = high % p;
    if spare == 0 {
        // Top bit of p is set: shift in one bit at a time and fold the carry.
        for i in (0..128).rev() {
            let carry = r >> 127;
            r = (r << 1) | ((low >> i) & 1);
            if carry == 1 || r >= p {
                r = r.wrapping_sub(p);
            }
        }
        return r;
    }
    let mut remaining = 128u32;
    while remaining > 0 {
        let k = spare.min(remaining);
        remaining -= k;
        let chunk = (low >> remaining) & ((1u128 << k) - 1);
        r = ((r << k) | chunk) % p;
    }
    r
}

fn pow_mod(mut base: u128, mut exponent: u128, p: u128) -> u128 {
    let mut acc = 1 % p;
    base %= p;
    while exponent > 0 {
        if exponent & 1 == 1 {
            acc = mul_mod(acc, base, p);
        }
        base = mul_mod(base, base, p);
        exponent >>= 1;
    }
    acc
}

/// Bases for which Miller-Rabin is deterministic below 3.3 * 10^24.
const MR_BASES: [u128; 13] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41];
/// Extra bases applied above that bound.
const MR_EXTRA_BASES: [u128; 11] = [43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89];
const MR_DETERMINISTIC_BOUND: u128 = 3_317_044_064_679_887_385_961_981;

/// Miller-Rabin primality test, deterministic for `n < 3.3 * 10^24`.
pub fn is_prime(n: u128) -> bool {
    if n < 2 {
        return false;
    }
    for &small in MR_BASES.iter().chain(MR_EXTRA_BASES.iter()) {
        if n == small {
            return true;
        }
        if n.is_multiple_of(small) {
            return false;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    let witness = |a: u128| -> bool {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            return false;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                return false;
            }
        }
        true
    };
    if MR_BASES.iter().any(|&a| witness(a)) {
        return false;
    }
    if n >= MR_DETERMINISTIC_BOUND && MR_EXTRA_BASES.iter().any(|&a| witness(a)) {
        return false;
    }
    true
}
