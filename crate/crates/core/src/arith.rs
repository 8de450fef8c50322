//! Secure arithmetic on polynomial shares.
//!
//! Addition is local. Multiplication multiplies local shares and reshares the
//! degree-`2t` product. Division by a public integer uses two designated
//! parties: Alice deals a statistical mask `r` together with `r mod d`, Bob
//! sees only `u + r` and deals its residue `(u + r) mod d`. The parties then
//! hold shares of a multiple of `d` within `d` of `u` and multiply by the
//! field inverse of `d`.
//!
//! The reciprocal of a shared integer is approximated with the Newton step
//! `u <- u (2S - u b) / S`, which converges to `S / b` from below. A warm-up
//! phase at a coarse scale starts from `u = 1`; the result is rescaled and a
//! precision phase runs at scale `d * e`.

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{sample_bounded, FieldElement, FieldError, FieldParams};
use crate::net::exercise::Planner;
use crate::sharing::{
    lagrange_at_zero, lagrange_reconstruct, shamir_share, PartyId, PolynomialShare, SecretId,
    SharingError, SharingParams,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArithError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error("invalid fixed-point parameters: {0}")]
    InvalidParams(String),
    #[error("invalid session: {0}")]
    InvalidSession(String),
    #[error("masked value {masked} would wrap modulo {modulus}")]
    MaskOverflow { masked: u128, modulus: u128 },
}

fn ceil_log2(x: u128) -> u32 {
    if x <= 1 {
        0
    } else {
        128 - (x - 1).leading_zeros()
    }
}

/// Public scaling and precision parameters of the fixed-point protocols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointParams {
    /// Scale factor `d` embedding `[0, 1]` into `[0, d]`.
    pub scale: u128,
    /// Precision factor `e` (a power of two).
    pub precision: u128,
    /// Statistical security parameter of the division mask, in bits.
    pub rho: u32,
    pub warmup_iters: u32,
    pub precision_iters: u32,
    /// Precision parameter `t` of the convergence analysis.
    pub t_prec: u32,
    /// Bound `k` on the public-division error used in `16 (k + 1) / e`.
    pub k_err: u32,
    /// Public upper bound on divisors passed to the reciprocal.
    pub divisor_bound: u128,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        Self {
            scale: 256,
            precision: 1 << 16,
            rho: 40,
            warmup_iters: 16,
            precision_iters: 16,
            t_prec: 5,
            k_err: 1,
            divisor_bound: 256,
        }
    }
}

impl FixedPointParams {
    /// Defaults with scale `d` (the divisor bound follows the scale).
    pub fn with_scale(scale: u128) -> Self {
        Self {
            scale,
            divisor_bound: scale,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ArithError> {
        let bad = |m: String| Err(ArithError::InvalidParams(m));
        if self.scale < 2 {
            return bad(format!("scale d = {} must be at least 2", self.scale));
        }
        if self.precision < 2 || !self.precision.is_power_of_two() {
            return bad(format!(
                "precision e = {} must be a power of two >= 2",
                self.precision
            ));
        }
        if self.rho == 0 || self.rho > 120 {
            return bad(format!("rho = {} out of range", self.rho));
        }
        if self.divisor_bound == 0 {
            return bad("divisor bound must be positive".into());
        }
        let (warm_scale, _) = self.warmup_scale()?;
        if self.warmup_iters < ceil_log2(warm_scale) {
            return bad(format!(
                "{} warm-up iterations cannot reach scale {warm_scale} (need {})",
                self.warmup_iters,
                ceil_log2(warm_scale)
            ));
        }
        if self.precision_iters < ceil_log2(self.precision) {
            return bad(format!(
                "{} precision iterations are fewer than log2(e) = {}",
                self.precision_iters,
                ceil_log2(self.precision)
            ));
        }
        let threshold = (5.0 + ((self.k_err + 1) as f64).ln()).log2();
        if (self.t_prec as f64) <= threshold {
            return bad(format!(
                "t = {} must exceed log2(5 + ln(k + 1)) = {threshold:.3}",
                self.t_prec
            ));
        }
        self.output_scale()?;
        Ok(())
    }

    /// `d * e`, the scale of the reciprocal's output.
    pub fn output_scale(&self) -> Result<u128, ArithError> {
        self.scale
            .checked_mul(self.precision)
            .ok_or_else(|| ArithError::InvalidParams("d * e overflows".into()))
    }

    /// Warm-up scale `d * 2^s` (smallest with `d * 2^s >= divisor_bound`) and
    /// the factor `e / 2^s` that lifts the warm-up result to scale `d * e`.
    pub fn warmup_scale(&self) -> Result<(u128, u128), ArithError> {
        let mut shift = 0u32;
        while self.scale << shift < self.divisor_bound {
            shift += 1;
            if 1u128 << shift > self.precision {
                return Err(ArithError::InvalidParams(format!(
                    "divisor bound {} needs a warm-up scale beyond d * e",
                    self.divisor_bound
                )));
            }
        }
        Ok((self.scale << shift, self.precision >> shift))
    }

    /// Relative error bound `16 (k + 1) / e` of the reciprocal.
    pub fn relative_error_bound(&self) -> f64 {
        16.0 * (self.k_err as f64 + 1.0) / self.precision as f64
    }

    /// Per-edge tolerance of learned scaled weights: `max(2, ceil(16 (k+1) d / e))`.
    pub fn learning_tolerance(&self) -> u128 {
        let num = 16 * (self.k_err as u128 + 1) * self.scale;
        num.div_ceil(self.precision).max(2)
    }

    /// Largest value ever passed to a public division by the protocols here.
    pub fn max_masked_value(&self) -> Result<u128, ArithError> {
        let out = self.output_scale()?;
        out.checked_mul(out)
            .and_then(|sq| sq.checked_mul(4))
            .ok_or_else(|| ArithError::InvalidParams("(d * e)^2 overflows".into()))
    }

    /// `p > 2^rho + max_masked_value` and `p > d * e`.
    pub fn check_field(&self, field: FieldParams) -> Result<(), ArithError> {
        let masked = self
            .max_masked_value()?
            .checked_add(1u128 << self.rho)
            .ok_or_else(|| ArithError::InvalidParams("mask bound overflows".into()))?;
        if masked >= field.modulus() || self.output_scale()? >= field.modulus() {
            return Err(ArithError::MaskOverflow {
                masked,
                modulus: field.modulus(),
            });
        }
        Ok(())
    }
}

/// Public description of one protocol run shared by every party.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProtocolSession {
    pub session_id: u64,
    pub sharing: SharingParams,
    pub fixed: FixedPointParams,
    pub alice: PartyId,
    pub bob: PartyId,
}

impl ProtocolSession {
    /// Alice is party 1 and Bob party 2.
    pub fn new(
        session_id: u64,
        sharing: SharingParams,
        fixed: FixedPointParams,
    ) -> Result<Self, ArithError> {
        let alice = PartyId::new(1)?;
        let bob = PartyId::new(2)?;
        Self::with_roles(session_id, sharing, fixed, alice, bob)
    }

    pub fn with_roles(
        session_id: u64,
        sharing: SharingParams,
        fixed: FixedPointParams,
        alice: PartyId,
        bob: PartyId,
    ) -> Result<Self, ArithError> {
        if alice == bob {
            return Err(ArithError::InvalidSession(
                "alice and bob must be different parties".into(),
            ));
        }
        for role in [alice, bob] {
            if role.get() as usize > sharing.parties() {
                return Err(ArithError::InvalidSession(format!(
                    "{role} is not a member of a {}-party session",
                    sharing.parties()
                )));
            }
        }
        fixed.validate()?;
        Ok(Self {
            session_id,
            sharing,
            fixed,
            alice,
            bob,
        })
    }

    pub fn field(&self) -> FieldParams {
        self.sharing.field()
    }

    /// Checks that the masked divisions of the exact protocols cannot wrap.
    pub fn check_exact_arithmetic(&self) -> Result<(), ArithError> {
        self.fixed.check_field(self.field())
    }
}

// ---------------------------------------------------------------------------
// Per-party steps of multiplication and public division.

/// Sub-shares of the local product `a * b`, one per party (index `i` for party `i+1`).
pub fn mul_reshare_start<R: RngCore + CryptoRng + ?Sized>(
    a: FieldElement,
    b: FieldElement,
    params: &SharingParams,
    rng: &mut R,
) -> Result<Vec<FieldElement>, ArithError> {
    let shares = shamir_share(a * b, params, &SecretId::new(""), rng)?;
    Ok(shares.into_iter().map(|s| s.value).collect())
}

/// Public recombination weights for points `1..=n` evaluated at 0.
pub fn recombination_vector(params: &SharingParams) -> Result<Vec<FieldElement>, ArithError> {
    let points: Vec<PartyId> = params.party_ids().collect();
    Ok(lagrange_at_zero(&points, params.field())?)
}

/// Combines the sub-shares received from parties `1..=n` (in order).
pub fn mul_reshare_finish(received: &[FieldElement], lambdas: &[FieldElement]) -> FieldElement {
    received.iter().zip(lambdas).map(|(&s, &l)| s * l).sum()
}

/// Alice's mask: `r` uniform on `[0, 2^rho)` and `q = r mod d`.
pub fn division_mask<R: RngCore + CryptoRng + ?Sized>(
    divisor: u128,
    rho: u32,
    rng: &mut R,
) -> Result<(u128, u128), ArithError> {
    let r = sample_bounded(1u128 << rho, rng)?;
    Ok((r, r % divisor))
}

/// Bob's residue `w = z mod d` of the revealed masked value.
pub fn division_residue(z: FieldElement, divisor: u128) -> u128 {
    z.value() % divisor
}

/// Final local step: `(u + q - w) * d^{-1}`.
pub fn division_finish(
    u: FieldElement,
    q: FieldElement,
    w: FieldElement,
    divisor_inverse: FieldElement,
) -> FieldElement {
    (u + q - w) * divisor_inverse
}

/// The leak condition of the reveal step: `z` outside `[d, 2^rho)`.
pub fn reveal_leaks(z: u128, divisor: u128, rho: u32) -> bool {
    z < divisor || z >= 1u128 << rho
}

/// Runs the division for all parties in memory with a chosen mask `r`.
///
/// `u` holds one share per party in party order.
pub fn div_by_public_with_mask<R: RngCore + CryptoRng + ?Sized>(
    u: &[PolynomialShare],
    divisor: u128,
    r: u128,
    params: &SharingParams,
    rng: &mut R,
) -> Result<Vec<PolynomialShare>, ArithError> {
    let field = params.field();
    let id = SecretId::new("div");
    let r_shares = shamir_share(field.element(r), params, &id, rng)?;
    let q_shares = shamir_share(field.element(r % divisor), params, &id, rng)?;
    let z_shares: Vec<PolynomialShare> = u
        .iter()
        .zip(&r_shares)
        .map(|(x, m)| PolynomialShare {
            value: x.value + m.value,
            ..x.clone()
        })
        .collect();
    let z = lagrange_reconstruct(&z_shares, params)?;
    let w_shares = shamir_share(
        field.element(division_residue(z, divisor)),
        params,
        &id,
        rng,
    )?;
    let inv = field.element(divisor).inv()?;
    Ok(u.iter()
        .zip(q_shares.iter().zip(&w_shares))
        .map(|(x, (q, w))| PolynomialShare {
            value: division_finish(x.value, q.value, w.value, inv),
            ..x.clone()
        })
        .collect())
}

/// Integer trace of the division for a given mask; `None` when `u + r` wraps.
pub fn div_by_public_trace(u: u128, divisor: u128, r: u128, modulus: u128) -> Option<u128> {
    let z = u.checked_add(r).filter(|&z| z < modulus)?;
    let q = r % divisor;
    let w = z % divisor;
    Some((u + q - w) / divisor)
}

/// `round(scale * num / (den * parties))` with halves rounded up; `None` if `den` is zero.
pub fn rounded_fraction(num: u128, den: u128, scale: u128, parties: u64) -> Option<u128> {
    let q = den.checked_mul(parties as u128).filter(|&q| q > 0)?;
    Some((2 * scale * num + q) / (2 * q))
}

// ---------------------------------------------------------------------------
// Protocol compositions on the exercise planner.

/// One Newton step `u <- (u (2S - u b)) / S` on shares.
pub fn newton_step(plan: &mut Planner, u: &SecretId, b: &SecretId, scale: u128) -> SecretId {
    let ub = plan.mul(u, b);
    let correction = plan.linear(&[(-1, &ub)], 2 * scale as i128);
    let widened = plan.mul(u, &correction);
    plan.div_public(&widened, scale)
}

/// Warm-up from `u = 1` towards `scale / b`.
pub fn plan_warm_up(plan: &mut Planner, b: &SecretId, scale: u128, iterations: u32) -> SecretId {
    let mut u = plan.constant(1);
    for _ in 0..iterations {
        u = newton_step(plan, &u, b, scale);
    }
    u
}

/// Shares of approximately `d * e / b` for a shared `1 <= b <= divisor_bound`.
pub fn plan_approx_inverse(
    plan: &mut Planner,
    b: &SecretId,
    fp: &FixedPointParams,
) -> Result<SecretId, ArithError> {
    let (warm_scale, lift) = fp.warmup_scale()?;
    let out_scale = fp.output_scale()?;
    let warm = plan_warm_up(plan, b, warm_scale, fp.warmup_iters);
    let mut u = plan.scale(&warm, lift as i128);
    for _ in 0..fp.precision_iters {
        u = newton_step(plan, &u, b, out_scale);
    }
    Ok(u)
}

/// Shares of approximately `d * a / b`.
pub fn plan_secure_divide(
    plan: &mut Planner,
    a: &SecretId,
    b: &SecretId,
    fp: &FixedPointParams,
) -> Result<SecretId, ArithError> {
    let inverse = plan_approx_inverse(plan, b, fp)?;
    Ok(plan_scaled_quotient(plan, a, &inverse, fp))
}

/// `a * inverse / e` for a precomputed reciprocal share.
pub fn plan_scaled_quotient(
    plan: &mut Planner,
    a: &SecretId,
    inverse: &SecretId,
    fp: &FixedPointParams,
) -> SecretId {
    let product = plan.mul(a, inverse);
    plan.div_public(&product, fp.precision)
}

/// Truncation by a public factor is a public division.
pub fn plan_truncate(plan: &mut Planner, x: &SecretId, factor: u128) -> SecretId {
    plan.div_public(x, factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{DEFAULT_PRIME, SMALL_PRIME};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn defaults_validate() {
        let fp = FixedPointParams::default();
        fp.validate().unwrap();
        assert_eq!(fp.warmup_scale().unwrap(), (256, 1 << 16));
        assert_eq!(fp.learning_tolerance(), 2);
        fp.check_field(FieldParams::new(DEFAULT_PRIME).unwrap())
            .unwrap();
        assert!(fp
            .check_field(FieldParams::new(SMALL_PRIME).unwrap())
            .is_err());
    }

    #[test]
    fn invalid_parameters() {
        let bad = [
            FixedPointParams {
                scale: 1,
                ..Default::default()
            },
            FixedPointParams {
                precision: 3,
                ..Default::default()
            },
            FixedPointParams {
                warmup_iters: 7,
                ..Default::default()
            },
            FixedPointParams {
                precision_iters: 15,
                ..Default::default()
            },
            FixedPointParams {
                t_prec: 2,
                ..Default::default()
            },
            FixedPointParams {
                divisor_bound: 1 << 30,
                ..Default::default()
            },
        ];
        for fp in bad {
            assert!(fp.validate().is_err(), "{fp:?}");
        }
    }

    #[test]
    fn warm_up_scale_grows_with_divisor_bound() {
        let fp = FixedPointParams {
            scale: 1000,
            divisor_bound: 2169,
            ..Default::default()
        };
        assert_eq!(fp.warmup_scale().unwrap(), (4000, 1 << 14));
        fp.validate().unwrap();
    }

    #[test]
    fn session_roles() {
        let field = FieldParams::new(DEFAULT_PRIME).unwrap();
        let sharing = SharingParams::new(3, 1, field).unwrap();
        let fp = FixedPointParams::default();
        let one = PartyId::new(1).unwrap();
        assert!(ProtocolSession::with_roles(1, sharing, fp, one, one).is_err());
        let four = PartyId::new(4).unwrap();
        assert!(ProtocolSession::with_roles(1, sharing, fp, one, four).is_err());
        let s = ProtocolSession::new(1, sharing, fp).unwrap();
        assert_eq!((s.alice.get(), s.bob.get()), (1, 2));
    }

    #[test]
    fn hand_traced_division() {
        // u = 1000, d = 256, r = 300: q = 44, z = 1300, w = 20, u + q - w = 1024.
        assert_eq!(div_by_public_trace(1000, 256, 300, DEFAULT_PRIME), Some(4));
        assert_eq!(div_by_public_trace(0, 256, 12345, DEFAULT_PRIME), Some(0));
        assert_eq!(div_by_public_trace(256, 256, 999, DEFAULT_PRIME), Some(1));
        assert_eq!(
            div_by_public_trace(10, 2, SMALL_PRIME - 5, SMALL_PRIME),
            None
        );
    }

    #[test]
    fn shared_division_with_forced_mask() {
        let field = FieldParams::new(DEFAULT_PRIME).unwrap();
        let params = SharingParams::new(3, 1, field).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let u = shamir_share(field.element(1000), &params, &"u".into(), &mut rng).unwrap();
        let out = div_by_public_with_mask(&u, 256, 300, &params, &mut rng).unwrap();
        assert_eq!(lagrange_reconstruct(&out, &params).unwrap().value(), 4);
    }

    #[test]
    fn mul_reshare_reconstructs_product() {
        let field = FieldParams::new(SMALL_PRIME).unwrap();
        let params = SharingParams::new(5, 2, field).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let lambdas = recombination_vector(&params).unwrap();
        let x = shamir_share(
            field.element(SMALL_PRIME - 1),
            &params,
            &"x".into(),
            &mut rng,
        )
        .unwrap();
        let y = shamir_share(field.element(2), &params, &"y".into(), &mut rng).unwrap();
        let subs: Vec<Vec<FieldElement>> = x
            .iter()
            .zip(&y)
            .map(|(a, b)| mul_reshare_start(a.value, b.value, &params, &mut rng).unwrap())
            .collect();
        let out: Vec<PolynomialShare> = (0..5)
            .map(|j| {
                let column: Vec<FieldElement> = subs.iter().map(|row| row[j]).collect();
                PolynomialShare {
                    owner: PartyId::new(j as u16 + 1).unwrap(),
                    value: mul_reshare_finish(&column, &lambdas),
                    secret_id: "xy".into(),
                }
            })
            .collect();
        // Degree t again: any t + 1 = 3 shares suffice.
        assert_eq!(
            lagrange_reconstruct(&out[2..], &params).unwrap().value(),
            SMALL_PRIME - 2
        );
    }

    #[test]
    fn worked_fractions() {
        let got: Vec<u128> = [(71, 256), (209, 786), (320, 1127)]
            .iter()
            .map(|&(n, d)| rounded_fraction(n, d, 1000, 3).unwrap())
            .collect();
        assert_eq!(got, vec![92, 89, 95]);
        assert_eq!(rounded_fraction(1, 0, 1000, 3), None);
        assert_eq!(rounded_fraction(1, 4, 2, 1), Some(1));
    }

    #[test]
    fn plan_shapes() {
        let fp = FixedPointParams::default();
        let mut plan = Planner::new();
        let b = SecretId::new("b");
        plan_approx_inverse(&mut plan, &b, &fp).unwrap();
        // constant + 16 warm-up steps + lift + 16 precision steps, 4 exercises per step.
        assert_eq!(plan.len(), 1 + 16 * 4 + 1 + 16 * 4);
    }
}
