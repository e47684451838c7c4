//! Synthetic labeled datasets with exactly known distributions, and their
//! line-oriented text format.
//!
//! ```text
//! rehash-dataset v1 d=2 m=4 L=4 classes=2
//! 0 0.25 0,0,1,1
//! 1 0.25 0,1,0,1
//! ```
//!
//! Records hold a label (`null` for the dropped label), a weight and the
//! comma-separated flat indices of a clean sequence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::vocab::{Label, LabeledExample, Sequence, VocabSpec};

pub const FORMAT_MAGIC: &str = "rehash-dataset";
pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on the number of sequences an enumerated dataset may hold.
pub const ENUMERATION_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    spec: VocabSpec,
    len: usize,
    classes: usize,
    examples: Vec<LabeledExample>,
    exact: bool,
}

impl ToyDataset {
    pub fn new(spec: VocabSpec, len: usize, classes: usize, examples: Vec<LabeledExample>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if len == 0 {
            return Err(contract("sequence length must be at least 1"));
        }
        let mut total = 0.0;
        for ex in &examples {
            if ex.x0.len() != len {
                return Err(contract(format!("example of length {} in a dataset with L={len}", ex.x0.len())));
            }
            if !ex.x0.conforms_to(spec) || !ex.x0.is_clean() {
                return Err(contract("example is not a clean sequence under the dataset vocabulary"));
            }
            ex.label.row(classes)?;
            total += ex.weight;
        }
        if !(total > 0.0) {
            return Err(contract("dataset weights must sum to a positive total"));
        }
        Ok(Self { spec, len, classes, examples, exact: true })
    }

    pub fn spec(&self) -> VocabSpec {
        self.spec
    }

    pub fn seq_len(&self) -> usize {
        self.len
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    /// False when the support was sampled rather than enumerated.
    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn total_weight(&self) -> f64 {
        self.examples.iter().map(|e| e.weight).sum()
    }

    /// Same examples under a different noise capacity. Clean sequences use
    /// only the valid block, so their flat indices are unchanged.
    pub fn with_capacity(&self, m: usize) -> Result<Self> {
        Ok(Self { spec: self.spec.with_capacity(m)?, ..self.clone() })
    }

    /// Examples visible under `label`: all of them for `Null`, otherwise the
    /// examples carrying that class.
    pub fn examples_for(&self, label: Label) -> Result<impl Iterator<Item = &LabeledExample>> {
        label.row(self.classes)?;
        Ok(self
            .examples
            .iter()
            .filter(move |e| label == Label::Null || e.label == label))
    }

    /// Normalised distribution over flat-index sequences for `label`.
    pub fn distribution(&self, label: Label) -> Result<BTreeMap<Vec<usize>, f64>> {
        let mut dist = BTreeMap::new();
        let mut total = 0.0;
        for ex in self.examples_for(label)? {
            *dist.entry(ex.x0.to_flat(self.spec)).or_insert(0.0) += ex.weight;
            total += ex.weight;
        }
        if !(total > 0.0) {
            return Err(Error::EmptyDataset);
        }
        for p in dist.values_mut() {
            *p /= total;
        }
        dist.retain(|_, p| *p > 0.0);
        Ok(dist)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{FORMAT_MAGIC} v{FORMAT_VERSION} d={} m={} L={} classes={}\n",
            self.spec.d(),
            self.spec.m(),
            self.len,
            self.classes
        );
        for ex in &self.examples {
            let flat = ex.x0.to_flat(self.spec);
            let tokens: Vec<String> = flat.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{} {} {}", ex.label, ex.weight, tokens.join(","));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::EmptyDataset)?;
        let (spec, len, classes) = parse_header(header)?;
        let mut examples = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let parse_err = |msg: String| Error::Parse { line: line_no, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
            }
            let label: Label = fields[0].parse().map_err(|e: Error| parse_err(e.to_string()))?;
            let weight: f64 = fields[1].parse().map_err(|_| parse_err(format!("bad weight {:?}", fields[1])))?;
            let flat = fields[2]
                .split(',')
                .map(|s| s.parse::<usize>().map_err(|_| parse_err(format!("bad token {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            let x0 = Sequence::from_flat(&flat, spec).map_err(|e| parse_err(e.to_string()))?;
            let ex = LabeledExample::new(x0, label, weight).map_err(|e| parse_err(e.to_string()))?;
            examples.push(ex);
        }
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Self::new(spec, len, classes, examples)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Load and require the stored shape to match `spec` and `len`.
    pub fn load_expecting(path: impl AsRef<Path>, spec: VocabSpec, len: usize) -> Result<Self> {
        let ds = Self::load(path)?;
        if ds.spec != spec || ds.len != len {
            return Err(Error::Format(format!(
                "dataset has d={}, m={}, L={}; expected d={}, m={}, L={len}",
                ds.spec.d(),
                ds.spec.m(),
                ds.len,
                spec.d(),
                spec.m()
            )));
        }
        Ok(ds)
    }
}

fn parse_header(line: &str) -> Result<(VocabSpec, usize, usize)> {
    let bad = |msg: String| Error::Format(msg);
    let mut fields = line.split_whitespace();
    if fields.next() != Some(FORMAT_MAGIC) {
        return Err(bad(format!("missing {FORMAT_MAGIC:?} header")));
    }
    let version = fields.next().unwrap_or_default();
    if version != format!("v{FORMAT_VERSION}") {
        return Err(bad(format!("unsupported format version {version:?}")));
    }
    let mut values = BTreeMap::new();
    for field in fields {
        let (key, value) = field.split_once('=').ok_or_else(|| bad(format!("bad header field {field:?}")))?;
        let value: usize = value.parse().map_err(|_| bad(format!("bad header value {field:?}")))?;
        values.insert(key, value);
    }
    let get = |key: &str| values.get(key).copied().ok_or_else(|| bad(format!("header lacks {key}")));
    let spec = VocabSpec::new(get("d")?, get("m")?).map_err(|e| bad(e.to_string()))?;
    Ok((spec, get("L")?, get("classes")?))
}

/// Stripe families used for grid classes, in class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StripeFamily {
    Rows,
    Columns,
    Diagonals,
    AntiDiagonals,
}

impl StripeFamily {
    pub const ALL: [StripeFamily; 4] =
        [StripeFamily::Rows, StripeFamily::Columns, StripeFamily::Diagonals, StripeFamily::AntiDiagonals];

    fn stripe_of(&self, row: usize, col: usize, side: usize) -> usize {
        match self {
            StripeFamily::Rows => row,
            StripeFamily::Columns => col,
            StripeFamily::Diagonals => (row + col) % side,
            StripeFamily::AntiDiagonals => (row + side - col) % side,
        }
    }
}

/// Class-conditional striped grids of `side x side` cells over `d` colours.
///
/// Class `c` uses stripe family `c`: each of the `side` stripes gets one
/// colour, so a family holds `d^side` patterns. Families larger than
/// `max_per_class` are subsampled without replacement with `rng`. Every
/// retained pattern carries equal weight, so the stored weights remain the
/// exact ground truth.
pub fn generate_grid_patterns<R: Rng + ?Sized>(
    side: usize,
    d: usize,
    classes: usize,
    m: usize,
    max_per_class: usize,
    rng: &mut R,
) -> Result<ToyDataset> {
    if side < 2 || d < 2 {
        return Err(contract(format!("grid patterns need side >= 2 and d >= 2, got side={side}, d={d}")));
    }
    if classes == 0 || classes > StripeFamily::ALL.len() {
        return Err(contract(format!("grid patterns support 1..=4 classes, got {classes}")));
    }
    let spec = VocabSpec::new(d, m)?;
    let len = side * side;
    let family_size = d.checked_pow(side as u32).filter(|n| *n <= 1 << 24);
    let mut examples = Vec::new();
    for (class, family) in StripeFamily::ALL.iter().take(classes).enumerate() {
        let mut colourings: Vec<usize> = match family_size {
            Some(n) if n <= max_per_class => (0..n).collect(),
            Some(n) => rand::seq::index::sample(rng, n, max_per_class).into_vec(),
            None => return Err(contract("grid family too large to index")),
        };
        colourings.sort_unstable();
        let weight = 1.0 / (classes * colourings.len()) as f64;
        for code in colourings {
            let stripe_colours = digits(code, d, side);
            let cells: Vec<usize> = (0..len)
                .map(|p| stripe_colours[family.stripe_of(p / side, p % side, side)])
                .collect();
            let x0 = Sequence::from_valid_codes(&cells, spec)?;
            examples.push(LabeledExample::new(x0, Label::Class(class), weight)?);
        }
    }
    ToyDataset::new(spec, len, classes, examples)
}

fn digits(mut code: usize, base: usize, n: usize) -> Vec<usize> {
    let mut out = vec![0; n];
    for slot in out.iter_mut().rev() {
        *slot = code % base;
        code /= base;
    }
    out
}

/// First-order Markov chain over `d` valid codes.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    pub initial: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn uniform(d: usize) -> Self {
        Self { initial: vec![1.0 / d as f64; d], rows: vec![vec![1.0 / d as f64; d]; d] }
    }

    fn validate(&self) -> Result<usize> {
        let d = self.initial.len();
        let stochastic = |row: &[f64]| {
            row.len() == d && row.iter().all(|p| *p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() < 1e-9
        };
        if d == 0 || !stochastic(&self.initial) {
            return Err(contract("initial distribution is not stochastic"));
        }
        if self.rows.len() != d {
            return Err(contract(format!("expected {d} transition rows, got {}", self.rows.len())));
        }
        if let Some(i) = self.rows.iter().position(|r| !stochastic(r)) {
            return Err(contract(format!("transition row {i} is not stochastic")));
        }
        Ok(d)
    }
}

/// Dataset of length-`len` chain realisations under class 0.
///
/// When `d^len` fits under [`ENUMERATION_LIMIT`] every positive-probability
/// sequence is listed with its exact probability. Otherwise `samples`
/// sequences are drawn and the dataset is flagged non-exact.
pub fn generate_markov<R: Rng + ?Sized>(
    len: usize,
    chain: &MarkovChain,
    m: usize,
    samples: usize,
    rng: &mut R,
) -> Result<ToyDataset> {
    let d = chain.validate()?;
    if len == 0 {
        return Err(contract("sequence length must be at least 1"));
    }
    let spec = VocabSpec::new(d, m)?;
    let enumerable = d.checked_pow(len as u32).filter(|n| *n <= ENUMERATION_LIMIT);
    let mut examples = Vec::new();
    let exact = enumerable.is_some();
    if let Some(n) = enumerable {
        for code in 0..n {
            let seq = digits(code, d, len);
            let mut p = chain.initial[seq[0]];
            for w in seq.windows(2) {
                p *= chain.rows[w[0]][w[1]];
            }
            if p > 0.0 {
                examples.push(LabeledExample::new(Sequence::from_valid_codes(&seq, spec)?, Label::Class(0), p)?);
            }
        }
        // Renormalise so enumerated weights sum to one up to rounding of the
        // chain rows themselves.
        let total: f64 = examples.iter().map(|e| e.weight).sum();
        for ex in &mut examples {
            ex.weight /= total;
        }
    } else {
        if samples == 0 {
            return Err(contract("sampled Markov dataset needs samples >= 1"));
        }
        let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for _ in 0..samples {
            let mut seq = Vec::with_capacity(len);
            seq.push(draw(&chain.initial, rng));
            for i in 1..len {
                let prev = seq[i - 1];
                seq.push(draw(&chain.rows[prev], rng));
            }
            *counts.entry(seq).or_default() += 1;
        }
        for (seq, count) in counts {
            let weight = count as f64 / samples as f64;
            examples.push(LabeledExample::new(Sequence::from_valid_codes(&seq, spec)?, Label::Class(0), weight)?);
        }
    }
    let mut ds = ToyDataset::new(spec, len, 1, examples)?;
    ds.exact = exact;
    Ok(ds)
}

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let indices: Vec<usize> = (0..probs.len()).collect();
    *indices
        .choose_weighted(rng, |&i| probs[i])
        .expect("validated stochastic row")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn two_by_two_stripes() {
        let ds = generate_grid_patterns(2, 2, 2, 1, usize::MAX, &mut seeded(0)).unwrap();
        assert_eq!(ds.seq_len(), 4);
        let rows: Vec<Vec<usize>> = ds
            .examples()
            .iter()
            .filter(|e| e.label == Label::Class(0))
            .map(|e| e.x0.to_flat(ds.spec()))
            .collect();
        assert_eq!(rows, vec![vec![0, 0, 0, 0], vec![0, 0, 1, 1], vec![1, 1, 0, 0], vec![1, 1, 1, 1]]);
        let cols: Vec<Vec<usize>> = ds
            .examples()
            .iter()
            .filter(|e| e.label == Label::Class(1))
            .map(|e| e.x0.to_flat(ds.spec()))
            .collect();
        assert!(cols.contains(&vec![0, 1, 0, 1]));
        assert!(ds.examples().iter().all(|e| e.x0.is_clean()));
        let total: f64 = ds.distribution(Label::Null).unwrap().values().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_subsampling_is_seeded() {
        let a = generate_grid_patterns(4, 3, 2, 1, 10, &mut seeded(3)).unwrap();
        let b = generate_grid_patterns(4, 3, 2, 1, 10, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.examples().len(), 20);
    }

    #[test]
    fn markov_examples() {
        let det = MarkovChain { initial: vec![1.0, 0.0], rows: vec![vec![0.0, 1.0], vec![1.0, 0.0]] };
        let ds = generate_markov(4, &det, 1, 0, &mut seeded(0)).unwrap();
        assert_eq!(ds.examples().len(), 1);
        assert_eq!(ds.examples()[0].x0.to_flat(ds.spec()), vec![0, 1, 0, 1]);

        let uni = generate_markov(2, &MarkovChain::uniform(2), 1, 0, &mut seeded(0)).unwrap();
        assert_eq!(uni.examples().len(), 4);
        assert!(uni.examples().iter().all(|e| e.weight == 0.25));
        assert_eq!(uni.total_weight(), 1.0);
        assert!(uni.is_exact());

        let bad = MarkovChain { initial: vec![0.5, 0.5], rows: vec![vec![0.5, 0.6], vec![1.0, 0.0]] };
        assert!(generate_markov(2, &bad, 1, 0, &mut seeded(0)).is_err());
    }

    #[test]
    fn large_markov_is_sampled() {
        let ds = generate_markov(16, &MarkovChain::uniform(2), 1, 500, &mut seeded(1)).unwrap();
        assert!(!ds.is_exact());
        assert!((ds.total_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip() {
        let ds = generate_grid_patterns(3, 2, 3, 4, usize::MAX, &mut seeded(0)).unwrap();
        let back = ToyDataset::from_text(&ds.to_text()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn load_errors() {
        assert!(matches!(ToyDataset::from_text(""), Err(Error::EmptyDataset)));
        assert!(matches!(
            ToyDataset::from_text("rehash-dataset v1 d=2 m=1 L=2 classes=1\n"),
            Err(Error::EmptyDataset)
        ));
        assert!(matches!(
            ToyDataset::from_text("rehash-dataset v9 d=2 m=1 L=2 classes=1\n0 1 0,1\n"),
            Err(Error::Format(_))
        ));
        let err = ToyDataset::from_text("rehash-dataset v1 d=2 m=1 L=2 classes=1\n0 1 0,1\n0 x 1,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = ToyDataset::from_text("rehash-dataset v1 d=2 m=1 L=2 classes=1\n0 1 0,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn shape_mismatch_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.txt");
        let ds = generate_grid_patterns(2, 2, 1, 1, usize::MAX, &mut seeded(0)).unwrap();
        ds.save(&path).unwrap();
        assert!(ToyDataset::load_expecting(&path, ds.spec(), 4).is_ok());
        let other = VocabSpec::new(2, 3).unwrap();
        assert!(matches!(ToyDataset::load_expecting(&path, other, 4), Err(Error::Format(_))));
    }
}
