//! Fixtures shared by the acceptance suite.

use std::io::Write;

use rehash_diffusion::dataset::generate_grid_patterns;
use rehash_diffusion::denoiser::ExactPosteriorDenoiser;
use rehash_diffusion::rng::seeded;
use rehash_diffusion::schedule::NoiseSchedule;
use rehash_diffusion::{Label, LabeledExample, Sequence, ToyDataset, VocabSpec};

pub const LIN: NoiseSchedule = NoiseSchedule::Linear;

/// `{AB: 0.5, BA: 0.5}` with `m` mask tokens.
pub fn swap_dataset(m: usize) -> ToyDataset {
    let spec = VocabSpec::new(2, m).expect("valid sizes");
    let ex = |codes: &[usize]| {
        LabeledExample::new(Sequence::from_valid_codes(codes, spec).expect("valid codes"), Label::Class(0), 0.5)
            .expect("clean example")
    };
    ToyDataset::new(spec, 2, 1, vec![ex(&[0, 1]), ex(&[1, 0])]).expect("valid dataset")
}

pub fn swap_denoiser(m: usize) -> ExactPosteriorDenoiser {
    ExactPosteriorDenoiser::new(swap_dataset(m), LIN)
}

/// 3x3 two-colour row stripes, one class, four mask tokens.
pub fn stripe_grid() -> ToyDataset {
    generate_grid_patterns(3, 2, 1, 4, 64, &mut seeded(0)).expect("valid grid settings")
}

/// Prints one uncaptured verdict line and returns `pass`.
pub fn verdict(criterion: u32, name: &str, pass: bool, detail: &str) -> bool {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance {criterion:>2} [{status}] {name}: {detail}");
    pass
}
