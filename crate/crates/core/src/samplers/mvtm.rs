use rand::Rng;

use super::{gumbel, Guidance, GumbelConfig};
use crate::denoiser::{Denoiser, ZERO_PROB_LOGIT};
use crate::error::Result;
use crate::samplers::cfg::guided_probs;
use crate::schedule::NoiseSchedule;
use crate::vocab::{Label, Sequence, Token};

/// Number of generated positions left masked at time `s`.
///
/// `floor(generated · (1 - α_s))`; the small offset keeps products such as
/// `9 · 0.6666…` from rounding down a whole position.
pub fn remask_count(generated: usize, s: f64, sched: NoiseSchedule) -> Result<usize> {
    Ok((generated as f64 * sched.mask_prob(s)? + 1e-9).floor() as usize)
}

/// Predict-all then re-mask.
///
/// Every masked position takes `argmax(log p + G(t)·g)`; its confidence is the
/// winning score plus an independent `G(t)·g'`. The `remask_count` lowest
/// confidences among the positions decoded in this step are masked again
/// (ties go to the lower position index). Positions decoded in earlier steps
/// are never re-masked. `generated` is the number of positions the run
/// generates, `L` for unconditional sampling.
#[allow(clippy::too_many_arguments)]
pub fn mvtm_step<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x_t: &Sequence,
    t: f64,
    s: f64,
    den: &D,
    label: Label,
    guidance: Guidance,
    gumbel_cfg: GumbelConfig,
    generated: usize,
    sched: NoiseSchedule,
    rng: &mut R,
) -> Result<Sequence> {
    let spec = den.spec();
    sched.decode_prob(s, t)?;
    let masked: Vec<usize> = (0..x_t.len()).filter(|&i| x_t.tokens()[i].is_mask()).collect();
    if masked.is_empty() {
        return Ok(x_t.clone());
    }
    let p = guided_probs(den, x_t, t, label, guidance.w, guidance.space)?;
    let intensity = gumbel_cfg.intensity(t);

    let mut x = x_t.clone();
    let mut confidence = Vec::with_capacity(masked.len());
    for &i in &masked {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (v, pv) in p.position(i).iter().enumerate() {
            let log_p = if *pv > 0.0 { pv.ln().max(ZERO_PROB_LOGIT) } else { ZERO_PROB_LOGIT };
            let score = log_p + intensity * gumbel(rng);
            if score > best.0 {
                best = (score, v);
            }
        }
        x.tokens_mut()[i] = Token::Valid(best.1 + 1);
        confidence.push((best.0 + intensity * gumbel(rng), i));
    }

    let wanted = remask_count(generated, s, sched)?;
    if wanted > masked.len() {
        log::debug!("re-mask count {wanted} exceeds {} masked positions; clamping", masked.len());
    }
    let count = wanted.min(masked.len());
    confidence.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for &(_, i) in confidence.iter().take(count) {
        x.tokens_mut()[i] = Token::Mask(rng.gen_range(1..=spec.m()));
    }
    Ok(x)
}
