//! Randomised invariant suite for the forward and reverse kernels.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use rand::Rng;
use rehash_diffusion::kernels::{forward_step_prob, reverse_step_distribution, transition_matrix};
use rehash_diffusion::rng::stream;
use rehash_diffusion::schedule::NoiseSchedule;
use rehash_diffusion::vocab::unflat_index;
use rehash_diffusion::{Token, VocabSpec};

const LIN: NoiseSchedule = NoiseSchedule::Linear;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

/// Three ordered times `s < u < t` in `[0, 1)` with a visible gap.
fn ordered_times<R: Rng>(rng: &mut R) -> (f64, f64, f64) {
    loop {
        let mut v = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        v.sort_by(f64::total_cmp);
        if v[1] - v[0] > 1e-6 && v[2] - v[1] > 1e-6 {
            return (v[0], v[1], v[2]);
        }
    }
}

fn random_spec<R: Rng>(rng: &mut R) -> VocabSpec {
    VocabSpec::new(rng.gen_range(1..=16), rng.gen_range(1..=8)).expect("positive sizes")
}

fn row_stochastic(trials: usize, seed: u64) -> Result<CheckRow> {
    let mut rng = stream(seed, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let spec = random_spec(&mut rng);
        let (s, _, t) = ordered_times(&mut rng);
        let q = transition_matrix(spec, s, t, LIN)?;
        for i in 0..q.dim() {
            let row = q.row(i);
            let negative = row.iter().fold(0.0f64, |acc, v| acc.max(-v));
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs()).max(negative);
        }
    }
    Ok(CheckRow { name: "row-stochastic", cases: trials, max_error: worst, tolerance: 1e-12 })
}

fn chapman_kolmogorov(trials: usize, seed: u64) -> Result<CheckRow> {
    let mut rng = stream(seed, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let spec = random_spec(&mut rng);
        let (s, u, t) = ordered_times(&mut rng);
        let two_step = transition_matrix(spec, s, u, LIN)?.compose(&transition_matrix(spec, u, t, LIN)?)?;
        worst = worst.max(two_step.max_abs_diff(&transition_matrix(spec, s, t, LIN)?));
    }
    Ok(CheckRow { name: "chapman-kolmogorov", cases: trials, max_error: worst, tolerance: 1e-10 })
}

/// With one mask token the kernel is `α δ(x_t = x_s) + (1 - α) δ(x_t = mask)`.
fn single_mask_reduction(seed: u64) -> Result<CheckRow> {
    let mut rng = stream(seed, 3);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for d in 1..=16 {
        let spec = VocabSpec::new(d, 1)?;
        let (s, _, t) = ordered_times(&mut rng);
        let keep = LIN.fwd_ratio(s, t)?;
        for a in 0..spec.size() {
            for b in 0..spec.size() {
                let (from, to) = (unflat_index(a, spec)?, unflat_index(b, spec)?);
                let expected = match (from, to) {
                    (Token::Mask(_), Token::Mask(_)) => 1.0,
                    (Token::Valid(_), Token::Mask(_)) => 1.0 - keep,
                    (x, y) if x == y => keep,
                    _ => 0.0,
                };
                worst = worst.max((forward_step_prob(from, to, s, t, LIN, spec)? - expected).abs());
                cases += 1;
            }
        }
    }
    Ok(CheckRow { name: "single-mask-reduction", cases, max_error: worst, tolerance: 0.0 })
}

fn reverse_normalised(trials: usize, seed: u64) -> Result<CheckRow> {
    let mut rng = stream(seed, 4);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let spec = random_spec(&mut rng);
        let (s, _, t) = ordered_times(&mut rng);
        let raw: Vec<f64> = (0..spec.d()).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let z: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / z).collect();
        let tok = unflat_index(rng.gen_range(0..spec.size()), spec)?;
        let q = reverse_step_distribution(tok, &p, s, t, LIN, spec)?;
        worst = worst.max((q.probs().iter().sum::<f64>() - 1.0).abs());
        if tok.is_mask() {
            worst = worst.max((q.mask_mass(spec) - LIN.rev_ratio(s, t)?).abs());
        }
    }
    Ok(CheckRow { name: "reverse-normalised", cases: trials, max_error: worst, tolerance: 1e-12 })
}

pub fn run_suite(trials: usize, seed: u64) -> Result<Vec<CheckRow>> {
    Ok(vec![
        row_stochastic(trials, seed)?,
        chapman_kolmogorov(trials, seed)?,
        single_mask_reduction(seed)?,
        reverse_normalised(trials, seed)?,
    ])
}

pub fn table(rows: &[CheckRow]) -> String {
    let mut out = format!("{:<24}{:>8}{:>14}{:>12}  status\n", "check", "cases", "max error", "tolerance");
    for r in rows {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{:<24}{:>8}{:>14.3e}{:>12.0e}  {status}", r.name, r.cases, r.max_error, r.tolerance);
    }
    out
}

pub fn to_csv(rows: &[CheckRow]) -> String {
    let mut out = String::from("check,cases,max_error,tolerance,pass\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:e},{:e},{}", r.name, r.cases, r.max_error, r.tolerance, r.passed());
    }
    out
}

/// Writes `Q_{t|s}` for a fixed small vocabulary as CSV files into `dir`.
pub fn dump_matrices(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let spec = VocabSpec::new(3, 2)?;
    let mut written = Vec::new();
    for (s, t) in [(0.0, 0.5), (0.5, 0.75), (0.0, 0.75)] {
        let path = dir.join(format!("q_s{s}_t{t}.csv"));
        std::fs::write(&path, transition_matrix(spec, s, t, LIN)?.to_csv())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_renders() {
        let rows = run_suite(20, 0).unwrap();
        assert!(rows.iter().all(CheckRow::passed), "{}", table(&rows));
        assert_eq!(to_csv(&rows).lines().count(), rows.len() + 1);
    }
}
