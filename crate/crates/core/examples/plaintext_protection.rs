//! Apply each plaintext protection scheme to one embedding.

use embshield::embedding::{cosine_similarity, mrl_truncate, EmbeddingVector};
use embshield::protect::{dp_protect, miu_apply, miu_gen_params, miu_invert, nfr_compare, nfr_protect, polyprotect_apply, polyprotect_gen_params, DPParams};
use embshield::synth::{generate_dataset, SynthConfig};

fn main() -> Result<(), embshield::Error> {
    let ds = generate_dataset(&SynthConfig { n_identities: 2, records_per_identity: 2, ..SynthConfig::default() })?;
    let (a, same, other) = (&ds.records[0].embedding, &ds.records[1].embedding, &ds.records[2].embedding);
    println!("raw cosine: same identity {:.3}, other identity {:.3}", cosine_similarity(a, same)?, cosine_similarity(a, other)?);

    let short = |v: &EmbeddingVector| mrl_truncate(v, 64);
    println!("MRL-64 cosine: same {:.3}, other {:.3}", cosine_similarity(&short(a)?, &short(same)?)?, cosine_similarity(&short(a)?, &short(other)?)?);

    let pp = polyprotect_gen_params(5, 50, 0, 2024)?;
    println!("PolyProtect secret: c = {:?}, e = {:?}", pp.coefficients, pp.exponents);
    let p = |v: &EmbeddingVector| polyprotect_apply(v, &pp);
    println!("PolyProtect ({} outputs) cosine: same {:.3}, other {:.3}", p(a)?.dim(), cosine_similarity(&p(a)?, &p(same)?)?, cosine_similarity(&p(a)?, &p(other)?)?);

    let miu = miu_gen_params(a.dim(), 16, 9)?;
    let shuffled = miu_apply(a, &miu)?;
    println!("MIU: first blocks {:?}, inverse exact: {}", &miu.permutation[..6], miu_invert(&shuffled, &miu)? == *a);

    let (ta, tb) = (nfr_protect(a, 5)?, nfr_protect(same, 5)?);
    let tc = nfr_protect(other, 5)?;
    println!(
        "NFR templates of length {}: score same {:.4}, other {:.4}",
        ta.positive.len(),
        nfr_compare(&tb.positive, &ta.negative, 0.01)?,
        nfr_compare(&tc.positive, &ta.negative, 0.01)?
    );

    for eps in [0.1, 1.0, 10.0] {
        let noisy = dp_protect(&short(a)?, &DPParams::new(eps, 3))?;
        println!("Laplace eps {eps:>4}: cosine to clean {:.3}", cosine_similarity(&noisy, &short(a)?)?);
    }
    Ok(())
}
