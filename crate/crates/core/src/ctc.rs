//! CTC recognition loss, greedy decoding, and a path-enumeration oracle.
//!
//! Inputs are per-timestep probability rows (already softmax-normalized); the
//! recognizer producing them lives outside this crate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::LossValue;

/// Largest `C^T` accepted by [`brute_force_prob`].
pub const MAX_ENUMERATION: u64 = 1_000_000;
const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtcError {
    #[error("malformed probability matrix: {0}")]
    Malformed(String),
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("label of length {len} with {repeats} adjacent repeats needs at least {needed} timesteps, got {t}")]
    Infeasible {
        len: usize,
        repeats: usize,
        needed: usize,
        t: usize,
    },
    #[error("label has zero probability under every admissible path")]
    ZeroProbability,
    #[error("enumeration of {0} paths exceeds the limit")]
    TooLarge(u128),
    #[error("cannot parse {0:?} as a number")]
    Unparseable(String),
}

/// Output tokens plus the index of the blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<String>,
    blank_index: usize,
}

impl Alphabet {
    pub fn new(symbols: Vec<String>, blank_index: usize) -> Result<Self, CtcError> {
        if blank_index >= symbols.len() {
            return Err(CtcError::InvalidAlphabet(format!(
                "blank index {blank_index} out of range for {} symbols",
                symbols.len()
            )));
        }
        for (i, s) in symbols.iter().enumerate() {
            if symbols[..i].contains(s) {
                return Err(CtcError::InvalidAlphabet(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(Self {
            symbols,
            blank_index,
        })
    }

    /// Digits `0`–`9` at indices 0–9, `.` at 10, blank at 11.
    pub fn meter_digits() -> Self {
        let mut symbols: Vec<String> = (0..10).map(|d| d.to_string()).collect();
        symbols.push(".".into());
        symbols.push("<blank>".into());
        Self::new(symbols, 11).expect("default alphabet is valid")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn blank_index(&self) -> usize {
        self.blank_index
    }

    pub fn symbol(&self, i: usize) -> &str {
        &self.symbols[i]
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == token)
    }

    /// Splits `text` into single-character tokens and maps each to its index.
    pub fn encode(&self, text: &str) -> Result<Label, CtcError> {
        let indices = text
            .chars()
            .map(|ch| {
                self.index_of(&ch.to_string())
                    .ok_or_else(|| CtcError::InvalidLabel(format!("{ch:?} not in alphabet")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Label::new(indices, self.blank_index)
    }
}

/// `T` rows of `C` class probabilities. JSON: `{"T": .., "C": .., "rows": [[..], ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProbMatrixRepr", into = "ProbMatrixRepr")]
pub struct ProbMatrix {
    t: usize,
    c: usize,
    rows: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ProbMatrixRepr {
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "C")]
    c: usize,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<ProbMatrixRepr> for ProbMatrix {
    type Error = CtcError;
    fn try_from(r: ProbMatrixRepr) -> Result<Self, CtcError> {
        let m = ProbMatrix::new(r.rows)?;
        if m.t != r.t || m.c != r.c {
            return Err(CtcError::Malformed(format!(
                "declared {}x{} but rows are {}x{}",
                r.t, r.c, m.t, m.c
            )));
        }
        Ok(m)
    }
}

impl From<ProbMatrix> for ProbMatrixRepr {
    fn from(m: ProbMatrix) -> Self {
        ProbMatrixRepr {
            t: m.t,
            c: m.c,
            rows: m.rows,
        }
    }
}

impl ProbMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, CtcError> {
        let t = rows.len();
        if t == 0 {
            return Err(CtcError::Malformed("no timesteps".into()));
        }
        let c = rows[0].len();
        if c == 0 {
            return Err(CtcError::Malformed("no classes".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(CtcError::Malformed(format!(
                    "row {i} has {} classes, expected {c}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(CtcError::Malformed(format!(
                    "row {i} has entries outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(CtcError::Malformed(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { t, c, rows })
    }

    /// Row-wise softmax of unnormalized scores.
    pub fn from_logits(logits: &[Vec<f64>]) -> Result<Self, CtcError> {
        Self::new(logits.iter().map(|row| softmax(row)).collect())
    }

    pub fn timesteps(&self) -> usize {
        self.t
    }

    pub fn classes(&self) -> usize {
        self.c
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    #[inline]
    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.rows[t][k]
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Target class sequence without blanks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Label {
    indices: Vec<usize>,
}

impl Label {
    pub fn new(indices: Vec<usize>, blank: usize) -> Result<Self, CtcError> {
        if indices.is_empty() {
            return Err(CtcError::InvalidLabel("empty label".into()));
        }
        if indices.contains(&blank) {
            return Err(CtcError::InvalidLabel("label contains the blank".into()));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn repeats(&self) -> usize {
        self.indices.windows(2).filter(|w| w[0] == w[1]).count()
    }

    /// Shortest path length that can emit this label.
    pub fn min_timesteps(&self) -> usize {
        self.len() + self.repeats()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Negative log-likelihood of `label` summed over all alignments, and its
/// gradient with respect to every entry of `probs`.
///
/// Works on the blank-extended label `l'` (length `2L + 1`). The forward pass
/// stores `a_t(s)`, the log mass entering state `s` at `t` before emitting, so
/// `∂p/∂y_t(k) = Σ_{s: l'_s = k} a_t(s) b_t(s)`, where `b_t(s)` is the log mass
/// of completing the path after `t`. This stays exact when some `y_t(k)` is 0.
pub fn ctc_loss(probs: &ProbMatrix, label: &Label, blank: usize) -> Result<LossValue, CtcError> {
    if blank >= probs.c {
        return Err(CtcError::Malformed(format!(
            "blank index {blank} out of range for {} classes",
            probs.c
        )));
    }
    if let Some(&bad) = label.indices.iter().find(|&&k| k >= probs.c) {
        return Err(CtcError::InvalidLabel(format!(
            "class {bad} out of range for {} classes",
            probs.c
        )));
    }
    let t_len = probs.t;
    if t_len < label.min_timesteps() {
        return Err(CtcError::Infeasible {
            len: label.len(),
            repeats: label.repeats(),
            needed: label.min_timesteps(),
            t: t_len,
        });
    }

    let ext: Vec<usize> = std::iter::once(blank)
        .chain(label.indices.iter().flat_map(|&k| [k, blank]))
        .collect();
    let s_len = ext.len();
    let ninf = f64::NEG_INFINITY;
    let log_y = |t: usize, s: usize| probs.get(t, ext[s]).ln();
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    // entering mass a_t(s) and emitted mass alpha_t(s) = a_t(s) + log y
    let mut enter = vec![vec![ninf; s_len]; t_len];
    let mut alpha = vec![vec![ninf; s_len]; t_len];
    enter[0][0] = 0.0;
    enter[0][1] = 0.0;
    for s in 0..2 {
        alpha[0][s] = enter[0][s] + log_y(0, s);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = log_add(acc, alpha[t - 1][s - 1]);
            }
            if can_skip(s) {
                acc = log_add(acc, alpha[t - 1][s - 2]);
            }
            enter[t][s] = acc;
            alpha[t][s] = if acc == ninf { ninf } else { acc + log_y(t, s) };
        }
    }
    let log_p = log_add(alpha[t_len - 1][s_len - 1], alpha[t_len - 1][s_len - 2]);
    if log_p == ninf {
        return Err(CtcError::ZeroProbability);
    }

    // completion mass after t, excluding the emission at t
    let mut after = vec![vec![ninf; s_len]; t_len];
    after[t_len - 1][s_len - 1] = 0.0;
    after[t_len - 1][s_len - 2] = 0.0;
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = after[t + 1][s] + log_y(t + 1, s);
            if s + 1 < s_len {
                acc = log_add(acc, after[t + 1][s + 1] + log_y(t + 1, s + 1));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_add(acc, after[t + 1][s + 2] + log_y(t + 1, s + 2));
            }
            after[t][s] = acc;
        }
    }

    let mut grad = vec![0.0; t_len * probs.c];
    for t in 0..t_len {
        let mut per_class = vec![ninf; probs.c];
        for s in 0..s_len {
            per_class[ext[s]] = log_add(per_class[ext[s]], enter[t][s] + after[t][s]);
        }
        for (k, lp) in per_class.into_iter().enumerate() {
            if lp != ninf {
                grad[t * probs.c + k] = -(lp - log_p).exp();
            }
        }
    }
    Ok(LossValue {
        value: -log_p,
        grad,
    })
}

/// Merge adjacent repeats, then drop blanks.
pub fn collapse_path(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Sum of probabilities of every length-`T` path collapsing to `label`,
/// by explicit enumeration of all `C^T` paths.
pub fn brute_force_prob(probs: &ProbMatrix, label: &Label, blank: usize) -> Result<f64, CtcError> {
    let total = (probs.c as u128).pow(probs.t as u32);
    if total > MAX_ENUMERATION as u128 {
        return Err(CtcError::TooLarge(total));
    }
    let mut path = vec![0usize; probs.t];
    let mut sum = 0.0;
    for mut code in 0..total as u64 {
        for slot in path.iter_mut() {
            *slot = (code % probs.c as u64) as usize;
            code /= probs.c as u64;
        }
        if collapse_path(&path, blank) == label.indices {
            sum += path
                .iter()
                .enumerate()
                .map(|(t, &k)| probs.get(t, k))
                .product::<f64>();
        }
    }
    Ok(sum)
}

/// Best class per row (lowest index on ties), collapsed and mapped to tokens.
pub fn greedy_decode(probs: &ProbMatrix, alphabet: &Alphabet) -> String {
    let path: Vec<usize> = probs
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &p)| {
                    if p > best.1 {
                        (k, p)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect();
    collapse_path(&path, alphabet.blank_index)
        .into_iter()
        .filter(|&k| k < alphabet.len())
        .map(|k| alphabet.symbol(k))
        .collect()
}

/// Digits with at most one interior `.`.
pub fn parse_numeric(decoded: &str) -> Result<f64, CtcError> {
    let err = || CtcError::Unparseable(decoded.to_string());
    if decoded.is_empty() || !decoded.chars().all(|c| c.is_ascii_digit() || c == '.') {
        return Err(err());
    }
    if decoded.matches('.').count() > 1 || decoded.starts_with('.') || decoded.ends_with('.') {
        return Err(err());
    }
    decoded.parse().map_err(|_| err())
}
