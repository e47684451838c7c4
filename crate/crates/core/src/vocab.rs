//! Extended vocabulary `V(d, m)`: `d` valid codes followed by `m` absorbing
//! indices.
//!
//! Domain indices are 1-based (`Valid(1..=d)`, `Mask(1..=m)`); the flat layout
//! used by matrices, denoiser parameters and files is 0-based with the valid
//! block first: `Valid(i) -> i - 1`, `Mask(j) -> d + j - 1`.

use std::fmt;

use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VocabSpec {
    d: usize,
    m: usize,
}

impl VocabSpec {
    pub fn new(d: usize, m: usize) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(contract(format!("vocabulary needs d >= 1 and m >= 1, got d={d}, m={m}")));
        }
        Ok(Self { d, m })
    }

    /// Number of valid codes.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Noise capacity.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Flat vocabulary size `d + m`.
    pub fn size(&self) -> usize {
        self.d + self.m
    }

    pub fn with_capacity(&self, m: usize) -> Result<Self> {
        Self::new(self.d, m)
    }

    pub fn contains(&self, tok: Token) -> bool {
        match tok {
            Token::Valid(i) => (1..=self.d).contains(&i),
            Token::Mask(j) => (1..=self.m).contains(&j),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Valid(usize),
    Mask(usize),
}

impl Token {
    pub fn is_mask(&self) -> bool {
        matches!(self, Token::Mask(_))
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, Token::Valid(_))
    }

    /// 0-based valid index, if this is a valid token.
    pub(crate) fn valid_index(&self) -> Option<usize> {
        match *self {
            Token::Valid(i) => Some(i - 1),
            Token::Mask(_) => None,
        }
    }

    /// Flat index without range checks; callers hold a validated sequence.
    #[inline]
    pub(crate) fn flat_unchecked(&self, d: usize) -> usize {
        match *self {
            Token::Valid(i) => i - 1,
            Token::Mask(j) => d + j - 1,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Valid(i) => write!(f, "v{i}"),
            Token::Mask(j) => write!(f, "m{j}"),
        }
    }
}

pub fn flat_index(tok: Token, spec: VocabSpec) -> Result<usize> {
    if !spec.contains(tok) {
        return Err(contract(format!("token {tok} outside vocabulary d={}, m={}", spec.d, spec.m)));
    }
    Ok(tok.flat_unchecked(spec.d))
}

pub fn unflat_index(k: usize, spec: VocabSpec) -> Result<Token> {
    if k < spec.d {
        Ok(Token::Valid(k + 1))
    } else if k < spec.size() {
        Ok(Token::Mask(k - spec.d + 1))
    } else {
        Err(contract(format!("flat index {k} outside [0, {})", spec.size())))
    }
}

/// A token sequence whose tokens all conform to one vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sequence {
    tokens: Vec<Token>,
}

impl Sequence {
    pub fn new(tokens: Vec<Token>, spec: VocabSpec) -> Result<Self> {
        if tokens.is_empty() {
            return Err(contract("sequence length must be at least 1"));
        }
        if let Some(bad) = tokens.iter().find(|t| !spec.contains(**t)) {
            return Err(contract(format!("token {bad} outside vocabulary d={}, m={}", spec.d, spec.m)));
        }
        Ok(Self { tokens })
    }

    pub fn from_flat(indices: &[usize], spec: VocabSpec) -> Result<Self> {
        let tokens = indices
            .iter()
            .map(|&k| unflat_index(k, spec))
            .collect::<Result<Vec<_>>>()?;
        Self::new(tokens, spec)
    }

    /// Sequence of `Valid` tokens from 0-based valid codes.
    pub fn from_valid_codes(codes: &[usize], spec: VocabSpec) -> Result<Self> {
        Self::new(codes.iter().map(|&c| Token::Valid(c + 1)).collect(), spec)
    }

    pub(crate) fn from_tokens_unchecked(tokens: Vec<Token>) -> Self {
        Self { tokens }
    }

    pub fn to_flat(&self, spec: VocabSpec) -> Vec<usize> {
        self.tokens.iter().map(|t| t.flat_unchecked(spec.d)).collect()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub(crate) fn tokens_mut(&mut self) -> &mut [Token] {
        &mut self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn mask_bitmap(&self) -> Vec<bool> {
        mask_bitmap(self)
    }

    pub fn masked_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.is_mask()).count()
    }

    /// True when no position holds a mask token.
    pub fn is_clean(&self) -> bool {
        self.tokens.iter().all(Token::is_valid)
    }

    pub fn conforms_to(&self, spec: VocabSpec) -> bool {
        self.tokens.iter().all(|t| spec.contains(*t))
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

pub fn mask_bitmap(x: &Sequence) -> Vec<bool> {
    x.tokens.iter().map(Token::is_mask).collect()
}

/// Class label; `Null` is the dropped label used for classifier-free guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Label {
    #[default]
    Null,
    Class(usize),
}

impl Label {
    /// Row of the class-bias table: classes first, null last.
    pub fn row(&self, classes: usize) -> Result<usize> {
        match *self {
            Label::Null => Ok(classes),
            Label::Class(c) if c < classes => Ok(c),
            Label::Class(c) => Err(Error::UnknownLabel { label: c, classes }),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Null => f.write_str("null"),
            Label::Class(c) => write!(f, "{c}"),
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "null" | "none" | "-" => Ok(Label::Null),
            other => other
                .parse::<usize>()
                .map(Label::Class)
                .map_err(|_| contract(format!("invalid label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub x0: Sequence,
    pub label: Label,
    pub weight: f64,
}

impl LabeledExample {
    pub fn new(x0: Sequence, label: Label, weight: f64) -> Result<Self> {
        if !x0.is_clean() {
            return Err(contract("clean example contains mask tokens"));
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(contract(format!("example weight must be finite and >= 0, got {weight}")));
        }
        Ok(Self { x0, label, weight })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(d: usize, m: usize) -> VocabSpec {
        VocabSpec::new(d, m).unwrap()
    }

    #[test]
    fn flat_index_examples() {
        let s = spec(8, 4);
        assert_eq!(flat_index(Token::Valid(1), s).unwrap(), 0);
        assert_eq!(flat_index(Token::Mask(1), s).unwrap(), 8);
        assert_eq!(flat_index(Token::Mask(4), s).unwrap(), 11);
        assert!(flat_index(Token::Mask(5), s).is_err());
        assert!(flat_index(Token::Valid(0), s).is_err());
    }

    #[test]
    fn unflat_index_examples() {
        let s = spec(2, 2);
        assert_eq!(unflat_index(0, s).unwrap(), Token::Valid(1));
        assert_eq!(unflat_index(2, s).unwrap(), Token::Mask(1));
        assert_eq!(unflat_index(3, s).unwrap(), Token::Mask(2));
        assert!(unflat_index(4, s).is_err());
    }

    #[test]
    fn flat_layout_is_bijective_exhaustively() {
        for d in 1..=64 {
            for m in 1..=64 {
                let s = spec(d, m);
                for k in 0..s.size() {
                    let tok = unflat_index(k, s).unwrap();
                    assert_eq!(flat_index(tok, s).unwrap(), k);
                }
            }
        }
    }

    #[test]
    fn single_capacity_has_one_mask() {
        let s = spec(5, 1);
        let masks: Vec<_> = (0..s.size())
            .map(|k| unflat_index(k, s).unwrap())
            .filter(Token::is_mask)
            .collect();
        assert_eq!(masks, vec![Token::Mask(1)]);
    }

    #[test]
    fn bitmap() {
        let s = spec(2, 2);
        let x = Sequence::new(vec![Token::Valid(1), Token::Mask(2)], s).unwrap();
        assert_eq!(x.mask_bitmap(), vec![false, true]);
        let clean = Sequence::from_valid_codes(&[0, 1, 1], s).unwrap();
        assert_eq!(clean.mask_bitmap(), vec![false; 3]);
        let noise = Sequence::new(vec![Token::Mask(1), Token::Mask(2)], s).unwrap();
        assert_eq!(noise.mask_bitmap(), vec![true, true]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(VocabSpec::new(0, 1).is_err());
        assert!(VocabSpec::new(1, 0).is_err());
        let s = spec(2, 1);
        assert!(Sequence::new(vec![], s).is_err());
        let masked = Sequence::new(vec![Token::Mask(1)], s).unwrap();
        assert!(LabeledExample::new(masked, Label::Null, 1.0).is_err());
        let clean = Sequence::from_valid_codes(&[0], s).unwrap();
        assert!(LabeledExample::new(clean, Label::Null, -1.0).is_err());
    }

    #[test]
    fn label_rows() {
        assert_eq!(Label::Null.row(3).unwrap(), 3);
        assert_eq!(Label::Class(2).row(3).unwrap(), 2);
        assert!(matches!(Label::Class(3).row(3), Err(Error::UnknownLabel { .. })));
        assert_eq!("null".parse::<Label>().unwrap(), Label::Null);
        assert_eq!("4".parse::<Label>().unwrap(), Label::Class(4));
    }
}
