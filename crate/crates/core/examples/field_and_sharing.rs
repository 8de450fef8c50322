//! Shamir and additive sharing over the default prime field.

use privspn::field::DEFAULT_PRIME;
use privspn::sharing::{
    additive_share, lagrange_reconstruct, reconstruct_additive, shamir_share, SecretId,
};
use privspn::{FieldParams, SharingParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let field = FieldParams::new(DEFAULT_PRIME)?;
    let params = SharingParams::with_default_degree(5, field)?;
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let id = SecretId::new("x");

    let x = field.element(1234);
    let y = field.element(99);
    println!("x * y^-1 * y = {}", (x * y.inv()? * y).value());

    let shares = shamir_share(x, &params, &id, &mut rng)?;
    for s in &shares {
        println!("party {} holds {}", s.owner.get(), s.value.value());
    }
    // Any t + 1 shares determine the secret.
    let t = params.degree();
    let opened = lagrange_reconstruct(&shares[..t + 1], &params)?;
    println!("degree {t}, {} shares open to {}", t + 1, opened.value());

    let additive = additive_share(x, 3, &id, &mut rng)?;
    println!(
        "additive shares sum to {}",
        reconstruct_additive(&additive, 3)?.value()
    );
    Ok(())
}
