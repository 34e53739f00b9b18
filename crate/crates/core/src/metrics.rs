//! Corpus and per-instance BLEU-1..4 against multiple references.

use std::collections::{BTreeMap, HashMap};
use std::ops::Add;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CocoCaptions, ImageId};
use crate::error::{Error, Result};
use crate::formats::Prediction;
use crate::tokenize::tokenize;

pub const MAX_N: usize = 4;

/// Stand-in for a zero n-gram match count under epsilon smoothing.
pub const EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    #[default]
    None,
    Epsilon,
}

impl std::str::FromStr for Smoothing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Smoothing::None),
            "epsilon" => Ok(Smoothing::Epsilon),
            other => Err(Error::Config(format!("unknown smoothing {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuResult {
    /// Cumulative BLEU-1..4.
    pub bleu: [f64; MAX_N],
    /// Modified n-gram precisions p_1..p_4 (after smoothing).
    pub precisions: [f64; MAX_N],
    pub brevity_penalty: f64,
    pub candidate_len: u64,
    pub reference_len: u64,
}

/// Sufficient statistics; corpus BLEU is computed from their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_N],
    pub totals: [u64; MAX_N],
    pub candidate_len: u64,
    pub reference_len: u64,
}

impl Add for BleuStats {
    type Output = BleuStats;

    fn add(mut self, o: BleuStats) -> BleuStats {
        for n in 0..MAX_N {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.candidate_len += o.candidate_len;
        self.reference_len += o.reference_len;
        self
    }
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Length of the reference closest to `c`; ties go to the shorter one.
fn closest_ref_len(c: usize, lens: impl Iterator<Item = usize>) -> usize {
    lens.min_by_key(|&r| (r.abs_diff(c), r)).unwrap_or(0)
}

impl BleuStats {
    pub fn of<S: AsRef<str>, R: AsRef<[S]>>(candidate: &[S], references: &[R]) -> Result<BleuStats> {
        if references.is_empty() {
            return Err(Error::Input("empty reference set".into()));
        }
        let mut s = BleuStats {
            candidate_len: candidate.len() as u64,
            reference_len: closest_ref_len(candidate.len(), references.iter().map(|r| r.as_ref().len()))
                as u64,
            ..BleuStats::default()
        };
        let cand_tokens: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
        let ref_tokens: Vec<Vec<&str>> = references
            .iter()
            .map(|r| r.as_ref().iter().map(AsRef::as_ref).collect())
            .collect();
        for n in 1..=MAX_N {
            let cand = ngram_counts(&cand_tokens, n);
            let mut max_ref: HashMap<&[&str], u64> = HashMap::new();
            for r in &ref_tokens {
                for (g, c) in ngram_counts(r, n) {
                    if cand.contains_key(&g) {
                        let e = max_ref.entry(g).or_insert(0);
                        *e = (*e).max(c);
                    }
                }
            }
            s.matches[n - 1] = cand
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
            s.totals[n - 1] = (candidate.len() + 1).saturating_sub(n) as u64;
        }
        Ok(s)
    }

    pub fn score(&self, smoothing: Smoothing) -> BleuResult {
        let mut precisions = [0.0; MAX_N];
        for (n, p) in precisions.iter_mut().enumerate() {
            let denom = self.totals[n].max(1) as f64;
            *p = match (self.matches[n], smoothing) {
                (0, Smoothing::Epsilon) => EPSILON / denom,
                (0, Smoothing::None) => 0.0,
                (m, _) => m as f64 / denom,
            };
        }
        let (c, r) = (self.candidate_len, self.reference_len);
        let brevity_penalty = if c == 0 {
            0.0
        } else if c < r {
            (1.0 - r as f64 / c as f64).exp()
        } else {
            1.0
        };
        let mut bleu = [0.0; MAX_N];
        let mut log_sum = 0.0;
        for n in 0..MAX_N {
            log_sum += precisions[n].ln();
            let geo = if precisions[..=n].contains(&0.0) {
                0.0
            } else {
                (log_sum / (n + 1) as f64).exp()
            };
            bleu[n] = brevity_penalty * geo;
        }
        BleuResult {
            bleu,
            precisions,
            brevity_penalty,
            candidate_len: c,
            reference_len: r,
        }
    }
}

/// Corpus BLEU with n-gram statistics pooled over all candidate/reference pairs.
pub fn bleu<S, R, Refs>(candidates: &[Vec<S>], references: &[Refs], smoothing: Smoothing) -> Result<BleuResult>
where
    S: AsRef<str> + Sync,
    R: AsRef<[S]> + Sync,
    Refs: AsRef<[R]> + Sync,
{
    Ok(corpus_stats(candidates, references)?.score(smoothing))
}

pub fn corpus_stats<S, R, Refs>(candidates: &[Vec<S>], references: &[Refs]) -> Result<BleuStats>
where
    S: AsRef<str> + Sync,
    R: AsRef<[S]> + Sync,
    Refs: AsRef<[R]> + Sync,
{
    if candidates.is_empty() || candidates.len() != references.len() {
        return Err(Error::Input(format!(
            "need equally many candidates and reference sets, got {} and {}",
            candidates.len(),
            references.len()
        )));
    }
    candidates
        .par_iter()
        .zip(references.par_iter())
        .map(|(c, r)| BleuStats::of(c, r.as_ref()))
        .try_reduce(BleuStats::default, |a, b| Ok(a + b))
}

/// BLEU of one candidate, epsilon-smoothed.
pub fn sentence_bleu<S: AsRef<str>, R: AsRef<[S]>>(candidate: &[S], references: &[R]) -> Result<BleuResult> {
    Ok(BleuStats::of(candidate, references)?.score(Smoothing::Epsilon))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceBleu {
    pub image_id: ImageId,
    pub bleu: [f64; MAX_N],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuReport {
    pub smoothing: Smoothing,
    pub corpus: BleuResult,
    pub per_instance: Vec<InstanceBleu>,
}

/// Tokenized reference captions per image from a COCO captions file.
pub fn references_by_image(refs: &CocoCaptions) -> BTreeMap<ImageId, Vec<Vec<String>>> {
    let mut anns: Vec<_> = refs.annotations.iter().collect();
    anns.sort_by_key(|a| a.id);
    let mut out: BTreeMap<ImageId, Vec<Vec<String>>> = BTreeMap::new();
    for a in anns {
        out.entry(ImageId(a.image_id)).or_default().push(tokenize(&a.caption));
    }
    out
}

/// Score predictions against references. Every predicted image needs references.
pub fn bleu_report(
    predictions: &[Prediction],
    references: &BTreeMap<ImageId, Vec<Vec<String>>>,
    smoothing: Smoothing,
) -> Result<BleuReport> {
    let missing: Vec<u64> = predictions
        .iter()
        .filter(|p| references.get(&p.image_id).is_none_or(Vec::is_empty))
        .map(|p| p.image_id.0)
        .collect();
    if !missing.is_empty() {
        return Err(Error::integrity("predicted images without reference captions", missing));
    }
    let stats: Vec<(ImageId, BleuStats)> = predictions
        .par_iter()
        .map(|p| {
            let refs = &references[&p.image_id];
            BleuStats::of(&tokenize(&p.caption), refs).map(|s| (p.image_id, s))
        })
        .collect::<Result<_>>()?;
    if stats.is_empty() {
        return Err(Error::Input("no predictions to score".into()));
    }
    let total = stats.iter().fold(BleuStats::default(), |a, (_, s)| a + *s);
    Ok(BleuReport {
        smoothing,
        corpus: total.score(smoothing),
        per_instance: stats
            .iter()
            .map(|(id, s)| InstanceBleu {
                image_id: *id,
                bleu: s.score(Smoothing::Epsilon).bleu,
            })
            .collect(),
    })
}
