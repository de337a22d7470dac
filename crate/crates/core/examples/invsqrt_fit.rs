//! Fit and audit the inverse-square-root approximant used for encrypted norms.

use embshield::enc_ops::{audit_rel_error, fit_invsqrt_poly, PolyApprox};

fn main() -> Result<(), embshield::Error> {
    for (degree, lo, hi) in [(4, 0.5, 2.0), (8, 0.5, 2.0), (8, 0.25, 4.0), (12, 0.25, 4.0)] {
        let p = fit_invsqrt_poly(degree, lo, hi, 64)?;
        println!("degree {degree:>2} on [{lo}, {hi}]: max relative error {:.2e} (audit {:.2e})", p.max_rel_error, audit_rel_error(&p));
    }
    let p = fit_invsqrt_poly(8, 0.25, 4.0, 64)?;
    for x in [0.25, 1.0, 2.5, 4.0] {
        println!("  p({x}) = {:.5}, 1/sqrt = {:.5}", p.eval(x), 1.0 / f64::sqrt(x));
    }
    println!("5.0 in domain: {}", p.check_domain(5.0).is_ok());
    let back = PolyApprox::from_json(&p.to_json()?)?;
    assert_eq!(back, p);
    println!("json roundtrip ok");
    Ok(())
}
