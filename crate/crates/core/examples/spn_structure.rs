//! Builds, validates, serialises and evaluates a small network.

use privspn::spn::{parse_structure, write_structure, Polarity, SpnBuilder};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut b = SpnBuilder::new();
    let x = b.leaf("X", 0, Polarity::Positive);
    let nx = b.leaf("NX", 0, Polarity::Negated);
    let y = b.leaf("Y", 1, Polarity::Positive);
    let ny = b.leaf("NY", 1, Polarity::Negated);
    let sy = b.sum("SY", &[(y, 300), (ny, 700)]);
    let px = b.product("PX", &[x, sy]);
    let pnx = b.product("PNX", &[nx, sy]);
    let root = b.sum("S", &[(px, 400), (pnx, 600)]);
    let spn = b.build(root, 2, 1000)?;

    println!("{}", spn.stats());
    println!("violations: {:?}", spn.validate());

    let text = write_structure(&spn);
    print!("{text}");
    let again = parse_structure(&text)?;
    assert_eq!(again.weights(), spn.weights());

    // Indicators for x0 = 1 with x1 marginalised.
    let p = spn.evaluate(&vec![[1.0, 0.0], [1.0, 1.0]])?;
    println!("Pr(x0 = 1) = {p}");
    Ok(())
}
