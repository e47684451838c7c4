//! Distribution-recovery metrics, the sampler benchmark and the noise-capacity sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataset::ToyDataset;
use crate::denoiser::Denoiser;
use crate::error::{contract, Result};
use crate::samplers::{sample, RunSeed, SampleConfig, SampleRun, Sampler};
use crate::schedule::NoiseSchedule;
use crate::training::{train, TrainConfig};
use crate::vocab::{Label, Sequence, VocabSpec};

/// Probability map keyed by flat-index sequences.
pub type Distribution = BTreeMap<Vec<usize>, f64>;

/// Histogram of observed sequences.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EmpiricalDistribution {
    counts: BTreeMap<Vec<usize>, u64>,
    total: u64,
}

impl EmpiricalDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a Sequence>, spec: VocabSpec) -> Self {
        let mut out = Self::new();
        for s in seqs {
            out.add(s.to_flat(spec));
        }
        out
    }

    pub fn from_runs(runs: &[SampleRun], spec: VocabSpec) -> Self {
        Self::from_sequences(runs.iter().map(|r| &r.output), spec)
    }

    pub fn add(&mut self, flat: Vec<usize>) {
        *self.counts.entry(flat).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &EmpiricalDistribution) {
        for (k, c) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += c;
        }
        self.total += other.total;
    }

    pub fn counts(&self) -> &BTreeMap<Vec<usize>, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn probabilities(&self) -> Distribution {
        let n = self.total as f64;
        self.counts.iter().map(|(k, &c)| (k.clone(), c as f64 / n)).collect()
    }

    /// Shannon entropy in nats; zero for an empty histogram.
    pub fn entropy(&self) -> f64 {
        let n = self.total as f64;
        -self
            .counts
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum::<f64>()
    }
}

/// `½ Σ |p - q|` over the union of supports; missing keys count as zero.
pub fn tv_distance(p: &Distribution, q: &Distribution) -> f64 {
    let mut sum = 0.0;
    for (k, pv) in p {
        sum += (pv - q.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, qv) in q {
        if !p.contains_key(k) {
            sum += qv.abs();
        }
    }
    (0.5 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diversity {
    pub distinct: usize,
    pub entropy: f64,
}

pub fn diversity(runs: &[SampleRun], spec: VocabSpec) -> Diversity {
    let emp = EmpiricalDistribution::from_runs(runs, spec);
    Diversity { distinct: emp.distinct(), entropy: emp.entropy() }
}

/// Settings shared by every benchmark cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    /// Samples per label per cell.
    pub samples: usize,
    /// Labels to sample; the cell TV and entropy are averaged over them.
    pub labels: Vec<Label>,
    /// Template for the sampler config; `steps` is overwritten per cell.
    pub sample: SampleConfig,
    pub sched: NoiseSchedule,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            samples: 100_000,
            labels: vec![Label::Null],
            sample: SampleConfig::default(),
            sched: NoiseSchedule::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub sampler: String,
    pub steps: usize,
    pub seed: u64,
    pub tv: f64,
    pub entropy: f64,
    /// Distinct sequences pooled over all labels.
    pub distinct: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    pub sampler: String,
    pub steps: usize,
    pub mean_tv: f64,
    pub std_tv: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Mean and sample standard deviation of TV per (sampler, K), sorted by key.
    pub fn summary(&self) -> Vec<BenchSummary> {
        let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.sampler.clone(), r.steps)).or_default().push(r.tv);
        }
        groups
            .into_iter()
            .map(|((sampler, steps), tvs)| {
                let n = tvs.len() as f64;
                let mean = tvs.iter().sum::<f64>() / n;
                let var = if tvs.len() > 1 { tvs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
                BenchSummary { sampler, steps, mean_tv: mean, std_tv: var.sqrt(), seeds: tvs.len() }
            })
            .collect()
    }

    pub fn mean_tv(&self, sampler: &str, steps: usize) -> Option<f64> {
        self.summary().into_iter().find(|s| s.sampler == sampler && s.steps == steps).map(|s| s.mean_tv)
    }

    /// Per-seed rows followed by `mean` and `std` rows per (sampler, K).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sampler,K,seed,tv,entropy,distinct\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6},{:.6},{}", r.sampler, r.steps, r.seed, r.tv, r.entropy, r.distinct);
        }
        for s in self.summary() {
            let _ = writeln!(out, "{},{},mean,{:.6},,", s.sampler, s.steps, s.mean_tv);
            let _ = writeln!(out, "{},{},std,{:.6},,", s.sampler, s.steps, s.std_tv);
        }
        out
    }
}

/// One benchmark cell: `samples` runs per label on streams of `seed`.
///
/// Label `j` uses stream indices `j·samples ..`, so cells with the same seed
/// share random streams across samplers.
pub fn bench_cell<D: Denoiser + ?Sized>(
    dataset: &ToyDataset,
    den: &D,
    sampler: &Sampler,
    steps: usize,
    seed: u64,
    settings: &BenchSettings,
) -> Result<(f64, f64, usize)> {
    let config = SampleConfig { steps, keep_trajectory: false, ..settings.sample.clone() };
    let spec = den.spec();
    let mut pooled = EmpiricalDistribution::new();
    let mut tv = 0.0;
    let mut entropy = 0.0;
    for (j, &label) in settings.labels.iter().enumerate() {
        let truth = dataset.distribution(label)?;
        let offset = (j * settings.samples) as u64;
        let outputs: Vec<Sequence> = (0..settings.samples as u64)
            .into_par_iter()
            .map(|i| sample(sampler, &config, den, label, settings.sched, RunSeed::new(seed, offset + i)).map(|r| r.output))
            .collect::<Result<_>>()?;
        let emp = EmpiricalDistribution::from_sequences(&outputs, spec);
        tv += tv_distance(&emp.probabilities(), &truth);
        entropy += emp.entropy();
        pooled.merge(&emp);
    }
    let n = settings.labels.len() as f64;
    Ok((tv / n, entropy / n, pooled.distinct()))
}

/// TV to the dataset distribution for every (sampler, K, seed) cell.
pub fn sampler_bench<D: Denoiser + ?Sized>(
    dataset: &ToyDataset,
    den: &D,
    samplers: &[(String, Sampler)],
    step_counts: &[usize],
    seeds: &[u64],
    settings: &BenchSettings,
) -> Result<BenchReport> {
    if !dataset.is_exact() {
        return Err(contract("benchmark needs a dataset with an exact distribution"));
    }
    if settings.labels.is_empty() || settings.samples == 0 {
        return Err(contract("benchmark needs at least one label and one sample"));
    }
    let mut rows = Vec::new();
    for (name, sampler) in samplers {
        for &steps in step_counts {
            for &seed in seeds {
                let (tv, entropy, distinct) = bench_cell(dataset, den, sampler, steps, seed, settings)?;
                log::info!("bench {name} K={steps} seed={seed}: tv={tv:.4}");
                rows.push(BenchRow { sampler: name.clone(), steps, seed, tv, entropy, distinct });
            }
        }
    }
    Ok(BenchReport { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub m: usize,
    pub tv: f64,
    pub entropy: f64,
    pub distinct: usize,
    pub final_loss: f64,
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("m,tv,entropy,distinct,final_loss\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{:.6},{},{:.6}", r.m, r.tv, r.entropy, r.distinct, r.final_loss);
    }
    out
}

/// Retrain and resample at each mask capacity in `m_values`.
///
/// Every row uses the same training seed and the same sampling seed, so rows
/// differ only through the capacity.
pub fn capacity_sweep(
    dataset: &ToyDataset,
    m_values: &[usize],
    train_config: &TrainConfig,
    sampler: &Sampler,
    settings: &BenchSettings,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if m_values.contains(&0) {
        return Err(contract("mask capacities must be >= 1"));
    }
    let mut rows = Vec::with_capacity(m_values.len());
    for &m in m_values {
        let data = dataset.with_capacity(m)?;
        let outcome = train(train_config, &data, settings.sched)?;
        let (tv, entropy, distinct) = bench_cell(&data, &outcome.model, sampler, settings.sample.steps, seed, settings)?;
        let final_loss = outcome.final_loss().unwrap_or(f64::NAN);
        log::info!("sweep m={m}: tv={tv:.4} loss={final_loss:.4}");
        rows.push(SweepRow { m, tv, entropy, distinct, final_loss });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn dist(pairs: &[(usize, f64)]) -> Distribution {
        pairs.iter().map(|&(k, p)| (vec![k], p)).collect()
    }

    #[test]
    fn tv_examples() {
        let p = dist(&[(0, 0.75), (1, 0.25)]);
        let q = dist(&[(0, 0.5), (1, 0.5)]);
        assert_eq!(tv_distance(&p, &p), 0.0);
        assert_eq!(tv_distance(&p, &q), 0.25);
        assert_eq!(tv_distance(&dist(&[(0, 1.0)]), &dist(&[(1, 1.0)])), 1.0);
    }

    #[test]
    fn diversity_examples() {
        let sp = VocabSpec::new(4, 1).unwrap();
        let same: Vec<Sequence> = (0..10).map(|_| Sequence::from_valid_codes(&[2], sp).unwrap()).collect();
        let emp = EmpiricalDistribution::from_sequences(&same, sp);
        assert_eq!((emp.distinct(), emp.entropy()), (1, 0.0));
        assert_eq!(emp.probabilities(), dist(&[(2, 1.0)]));

        let four: Vec<Sequence> = (0..400).map(|i| Sequence::from_valid_codes(&[i % 4], sp).unwrap()).collect();
        let emp = EmpiricalDistribution::from_sequences(&four, sp);
        assert_eq!(emp.distinct(), 4);
        assert!((emp.entropy() - 4f64.ln()).abs() < 1e-12);

        let two = [Sequence::from_valid_codes(&[0], sp).unwrap(), Sequence::from_valid_codes(&[3], sp).unwrap()];
        assert_eq!(EmpiricalDistribution::from_sequences(&two, sp).probabilities(), dist(&[(0, 0.5), (3, 0.5)]));
    }

    fn random_dist(seed: u64, n: usize) -> Distribution {
        let mut rng = seeded(seed);
        let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let z: f64 = w.iter().sum();
        w.iter().enumerate().map(|(k, v)| (vec![k], v / z)).collect()
    }

    proptest! {
        #[test]
        fn tv_is_a_metric(a in any::<u64>(), b in any::<u64>(), c in any::<u64>(), n in 1usize..12) {
            let (p, q, r) = (random_dist(a, n), random_dist(b, n), random_dist(c, n));
            let pq = tv_distance(&p, &q);
            prop_assert!((0.0..=1.0).contains(&pq));
            prop_assert_eq!(pq, tv_distance(&q, &p));
            prop_assert!(tv_distance(&p, &r) <= pq + tv_distance(&q, &r) + 1e-12);
        }
    }

    #[test]
    fn summary_statistics() {
        let row = |seed, tv| BenchRow { sampler: "a".into(), steps: 2, seed, tv, entropy: 0.0, distinct: 1 };
        let report = BenchReport { rows: vec![row(0, 0.1), row(1, 0.3)] };
        let s = &report.summary()[0];
        assert!((s.mean_tv - 0.2).abs() < 1e-15);
        assert!((s.std_tv - 0.02f64.sqrt()).abs() < 1e-12);
        let csv = report.to_csv();
        assert!(csv.starts_with("sampler,K,seed,tv,entropy,distinct\na,2,0,0.100000,"));
        assert!(csv.contains("a,2,mean,0.200000,,\n"));
    }
}
