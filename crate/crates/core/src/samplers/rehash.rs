use rand::Rng;

use super::{categorical, DecodeLimit, Guidance};
use crate::denoiser::Denoiser;
use crate::error::Result;
use crate::samplers::cfg::guided_probs;
use crate::schedule::NoiseSchedule;
use crate::vocab::{Label, Sequence, Token};

/// One reverse step from `t` to `s`.
///
/// Mask indices of masked positions are redrawn uniformly, the model is
/// queried once, and each masked position draws from `d + 1` outcomes: the
/// valid tokens weighted by `(α_s - α_t)/(1 - α_t) · p` and a single merged
/// mask outcome of mass `(1 - α_s)/(1 - α_t)`. Unmasked positions pass
/// through.
///
/// With [`DecodeLimit::AtMostOne`], when several positions decode in a step
/// that is not the last one, one of them is kept uniformly at random and the
/// others stay masked.
#[allow(clippy::too_many_arguments)]
pub fn rehash_step<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x_t: &Sequence,
    t: f64,
    s: f64,
    den: &D,
    label: Label,
    guidance: Guidance,
    sched: NoiseSchedule,
    limit: DecodeLimit,
    rng: &mut R,
) -> Result<Sequence> {
    let spec = den.spec();
    let d = spec.d();
    let decode = sched.decode_prob(s, t)?;
    let stay = sched.rev_ratio(s, t)?;
    let masked: Vec<usize> = (0..x_t.len()).filter(|&i| x_t.tokens()[i].is_mask()).collect();
    if masked.is_empty() {
        return Ok(x_t.clone());
    }

    let mut x = x_t.clone();
    for &i in &masked {
        x.tokens_mut()[i] = Token::Mask(rng.gen_range(1..=spec.m()));
    }
    let rehashed = x.clone();

    let p = guided_probs(den, &x, t, label, guidance.w, guidance.space)?;
    let mut weights = vec![0.0; d + 1];
    let mut decoded = Vec::new();
    for &i in &masked {
        for (slot, pv) in weights.iter_mut().zip(p.position(i)) {
            *slot = decode * pv;
        }
        weights[d] = stay;
        let k = categorical(&weights, rng);
        if k < d {
            x.tokens_mut()[i] = Token::Valid(k + 1);
            decoded.push(i);
        }
    }

    if limit == DecodeLimit::AtMostOne && s > 0.0 && decoded.len() > 1 {
        let keep = decoded[rng.gen_range(0..decoded.len())];
        for &i in decoded.iter().filter(|&&i| i != keep) {
            x.tokens_mut()[i] = rehashed.tokens()[i];
        }
    }
    Ok(x)
}
