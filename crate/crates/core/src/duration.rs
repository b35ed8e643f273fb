//! Splitting reward, DP duration extraction, sentence segmentation and
//! reward-based filtration.
//!
//! Boundaries follow a half-open convention: `B[0] = 0`, `B[T] = S`, and
//! phoneme `i` owns frames `[B[i], B[i+1])`, so durations always sum to `S`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{contract, CoreError, Result};

/// `T x S` non-negative alignment weights, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMatrix {
    pub t: usize,
    pub s: usize,
    pub data: Vec<f64>,
}

impl AttentionMatrix {
    pub fn new(t: usize, s: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != t * s {
            return Err(contract(format!("{} values for a {t}x{s} matrix", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(contract(format!("attention weight {v} is not a non-negative number")));
        }
        Ok(AttentionMatrix { t, s, data })
    }

    pub fn zeros(t: usize, s: usize) -> Self {
        AttentionMatrix {
            t,
            s,
            data: vec![0.0; t * s],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.s + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.s..(i + 1) * self.s]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.s..(i + 1) * self.s]
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        (0..self.t).all(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs() <= tol)
    }
}

pub fn validate_boundaries(b: &[usize], t: usize, s: usize) -> Result<()> {
    if b.len() != t + 1 {
        return Err(contract(format!("{} boundaries for {t} phonemes", b.len())));
    }
    if b[0] != 0 || b[t] != s {
        return Err(contract(format!("boundaries must run from 0 to {s}, got {}..{}", b[0], b[t])));
    }
    if b.windows(2).any(|w| w[1] < w[0]) {
        return Err(contract("boundaries must be non-decreasing"));
    }
    Ok(())
}

/// Total attention mass inside the segments defined by `b`, and the same
/// divided by `T`.
pub fn splitting_reward(a: &AttentionMatrix, b: &[usize]) -> Result<(f64, f64)> {
    validate_boundaries(b, a.t, a.s)?;
    let mut total = 0.0;
    for i in 0..a.t {
        total += a.row(i)[b[i]..b[i + 1]].iter().sum::<f64>();
    }
    Ok((total, total / a.t.max(1) as f64))
}

pub fn durations_from_boundaries(b: &[usize]) -> Result<Vec<usize>> {
    if b.is_empty() || b[0] != 0 || b.windows(2).any(|w| w[1] < w[0]) {
        return Err(contract("boundaries must start at 0 and be non-decreasing"));
    }
    Ok(b.windows(2).map(|w| w[1] - w[0]).collect())
}

pub fn boundaries_from_durations(d: &[usize]) -> Vec<usize> {
    let mut b = Vec::with_capacity(d.len() + 1);
    b.push(0);
    let mut acc = 0;
    for &x in d {
        acc += x;
        b.push(acc);
    }
    b
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DpOptions {
    /// Forbid zero-length phonemes.
    pub min_duration_one: bool,
    /// Restrict phoneme `i`'s start to within `2W` frames of `i*S/T`.
    pub band: Option<usize>,
}

/// Tables of the boundary search. `prefix[i][b]` is the mass of row `i` in
/// frames `[0, b)`; `reward[i][b]` the best reward for phonemes `0..=i`
/// covering frames `[0, b)`; `back[i][b]` the start frame of phoneme `i` on
/// that optimum. All are `T x (S+1)`.
#[derive(Clone, Debug)]
pub struct DpTable {
    pub t: usize,
    pub s: usize,
    pub prefix: Vec<f64>,
    pub reward: Vec<f64>,
    pub back: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpResult {
    pub durations: Vec<usize>,
    pub boundaries: Vec<usize>,
    pub reward: f64,
    pub normalized_reward: f64,
}

fn band_range(i: usize, t: usize, s: usize, w: usize) -> (usize, usize) {
    // k must satisfy |k - i*S/T| <= 2W; integer form k*T within i*S -+ 2W*T.
    let c = (i * s) as i64;
    let r = (2 * w * t) as i64;
    let tt = t as i64;
    let lo = (c - r).max(0);
    let lo = (lo + tt - 1) / tt;
    let hi = ((c + r) / tt).min(s as i64);
    (lo as usize, hi.max(0) as usize)
}

pub fn dp_table(a: &AttentionMatrix, opts: &DpOptions) -> Result<DpTable> {
    let (t, s) = (a.t, a.s);
    if t == 0 || s == 0 {
        return Err(contract(format!("DP needs T, S >= 1, got {t}x{s}")));
    }
    if opts.min_duration_one && t > s {
        return Err(CoreError::Infeasible(format!(
            "{t} phonemes cannot each take a frame of {s}"
        )));
    }
    let w = s + 1;
    let mut prefix = vec![0.0; t * w];
    for i in 0..t {
        let row = a.row(i);
        for j in 0..s {
            prefix[i * w + j + 1] = prefix[i * w + j] + row[j];
        }
    }
    let neg = f64::NEG_INFINITY;
    let mut reward = vec![neg; t * w];
    let mut back = vec![0usize; t * w];
    let min_d = usize::from(opts.min_duration_one);
    // Segment masses are summed left to right from each start so the table
    // agrees bit for bit with a direct sum over the same frames.
    let mut acc = 0.0;
    for b in 0..=s {
        if b > 0 {
            acc += a.row(0)[b - 1];
        }
        if b >= min_d {
            reward[b] = 0.0 + acc;
        }
    }
    for i in 1..t {
        let (klo, khi) = match opts.band {
            Some(bw) => band_range(i, t, s, bw),
            None => (0, s),
        };
        let row = a.row(i);
        for k in klo..=khi.min(s) {
            let prev = reward[(i - 1) * w + k];
            if prev == neg {
                continue;
            }
            let mut mass = 0.0;
            for b in k..=s {
                if b > k {
                    mass += row[b - 1];
                }
                if b < k + min_d {
                    continue;
                }
                let cand = prev + mass;
                if cand > reward[i * w + b] {
                    reward[i * w + b] = cand;
                    back[i * w + b] = k;
                }
            }
        }
    }
    Ok(DpTable {
        t,
        s,
        prefix,
        reward,
        back,
    })
}

/// Boundaries maximising the splitting reward. Ties go to the earliest
/// boundary.
pub fn extract_duration_dp(a: &AttentionMatrix, opts: &DpOptions) -> Result<DpResult> {
    let table = dp_table(a, opts)?;
    let (t, s) = (table.t, table.s);
    let w = s + 1;
    if table.reward[(t - 1) * w + s] == f64::NEG_INFINITY {
        return Err(CoreError::Infeasible("no boundary placement satisfies the band".into()));
    }
    let mut b = vec![0usize; t + 1];
    b[t] = s;
    let mut pos = s;
    for i in (1..t).rev() {
        pos = table.back[i * w + pos];
        b[i] = pos;
    }
    let (reward, normalized_reward) = splitting_reward(a, &b)?;
    Ok(DpResult {
        durations: durations_from_boundaries(&b)?,
        boundaries: b,
        reward,
        normalized_reward,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub frames: Range<usize>,
    pub phonemes: Range<usize>,
}

/// Splits at separator phonemes; each separator's frames are dropped.
pub fn segment_sentences(phonemes: &[usize], separator: usize, d: &[usize]) -> Result<Vec<SentenceSpan>> {
    if phonemes.len() != d.len() {
        return Err(contract(format!(
            "{} phonemes but {} durations",
            phonemes.len(),
            d.len()
        )));
    }
    let b = boundaries_from_durations(d);
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..=phonemes.len() {
        if i == phonemes.len() || phonemes[i] == separator {
            if i > start {
                out.push(SentenceSpan {
                    frames: b[start]..b[i],
                    phonemes: start..i,
                });
            } else {
                log::warn!("empty sentence at phoneme {i} dropped");
            }
            start = i + 1;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub id: String,
    pub normalized_reward: f64,
    pub threshold: f64,
    pub kept: bool,
    pub reason: String,
}

pub const DEFAULT_FILTER_THRESHOLD: f64 = 0.6;

/// Keeps entries whose normalised reward is at least `threshold`.
pub fn filter_by_reward(entries: &[(String, f64)], threshold: f64) -> Vec<FilterDecision> {
    entries
        .iter()
        .map(|(id, r)| {
            let kept = *r >= threshold;
            let reason = if kept {
                String::new()
            } else {
                format!("normalized reward {r:.4} below threshold {threshold}")
            };
            if !kept {
                log::info!("rejecting {id}: {reason}");
            }
            FilterDecision {
                id: id.clone(),
                normalized_reward: *r,
                threshold,
                kept,
                reason,
            }
        })
        .collect()
}
