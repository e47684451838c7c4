use rand::Rng;

use super::{categorical, Guidance};
use crate::denoiser::Denoiser;
use crate::error::{contract, Result};
use crate::samplers::cfg::guided_probs;
use crate::schedule::NoiseSchedule;
use crate::vocab::{unflat_index, Label, Sequence};

/// One discrete flow-matching Euler step from `t` to `s`.
///
/// With jump coefficients `j_t = 1 - α_t`, `j_s = 1 - α_s`, every position
/// samples `x̂_0 ~ p` and builds a velocity over the flat vocabulary:
/// `(j_t - j_s)/j_t` on `x̂_0`, the corrective `j_s/j_t` on the current token
/// when it is a mask index, then zero on the current token. The position
/// jumps with probability `1 - exp(-λ)`, `λ = Σu`, to a draw from `u / λ`.
///
/// Unmasked positions can therefore be revised. At the final step
/// (`j_s = 0`) masked positions jump with probability one so the output is
/// fully decoded.
#[allow(clippy::too_many_arguments)]
pub fn dfm_step<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x_t: &Sequence,
    t: f64,
    s: f64,
    den: &D,
    label: Label,
    guidance: Guidance,
    sched: NoiseSchedule,
    rng: &mut R,
) -> Result<Sequence> {
    let spec = den.spec();
    let d = spec.d();
    sched.decode_prob(s, t)?;
    let j_t = sched.mask_prob(t)?;
    let j_s = sched.mask_prob(s)?;
    if j_t <= 0.0 {
        return Err(contract("flow step needs 1 - alpha_t > 0"));
    }
    let p = guided_probs(den, x_t, t, label, guidance.w, guidance.space)?;
    let mut x = x_t.clone();
    let mut u = vec![0.0; spec.size()];
    for (i, tok) in x_t.tokens().iter().enumerate() {
        u.fill(0.0);
        let x0_hat = categorical(p.position(i), rng);
        u[x0_hat] += (j_t - j_s) / j_t;
        let current = tok.flat_unchecked(d);
        if current >= d {
            u[current] = j_s / j_t;
        }
        u[current] = 0.0;
        let lambda: f64 = u.iter().sum();
        if lambda <= 0.0 {
            continue;
        }
        let fire = if current >= d && j_s == 0.0 { 1.0 } else { 1.0 - (-lambda).exp() };
        if rng.gen::<f64>() < fire {
            let k = categorical(&u, rng);
            x.tokens_mut()[i] = unflat_index(k, spec)?;
        }
    }
    Ok(x)
}
