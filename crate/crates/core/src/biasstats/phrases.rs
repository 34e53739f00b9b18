use std::ops::{Add, AddAssign};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{GenderClass, Lexicon};

/// Counts of captions mentioning a man and a woman, and how often the two are
/// joined into one "X and (a) Y" phrase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseStats {
    pub captions: u64,
    pub both_genders: u64,
    pub male_first_phrase: u64,
    pub female_first_phrase: u64,
}

impl PhraseStats {
    /// Fraction of two-gender captions that use the male-first phrase.
    pub fn male_first_share(&self) -> Option<f64> {
        (self.both_genders > 0).then(|| self.male_first_phrase as f64 / self.both_genders as f64)
    }
}

impl AddAssign for PhraseStats {
    fn add_assign(&mut self, o: PhraseStats) {
        self.captions += o.captions;
        self.both_genders += o.both_genders;
        self.male_first_phrase += o.male_first_phrase;
        self.female_first_phrase += o.female_first_phrase;
    }
}

impl Add for PhraseStats {
    type Output = PhraseStats;

    fn add(mut self, o: PhraseStats) -> PhraseStats {
        self += o;
        self
    }
}

fn joins<S: AsRef<str>>(lexicon: &Lexicon, tokens: &[S], first: GenderClass, second: GenderClass) -> bool {
    let class = |i: usize| tokens.get(i).map(|t| lexicon.classify_token(t.as_ref()));
    let is = |i: usize, w: &str| tokens.get(i).is_some_and(|t| t.as_ref() == w);
    (0..tokens.len()).any(|i| {
        class(i) == Some(first)
            && is(i + 1, "and")
            && (class(i + 2) == Some(second)
                || ((is(i + 2, "a") || is(i + 2, "an")) && class(i + 3) == Some(second)))
    })
}

/// Phrase statistics of a single caption.
pub fn caption_phrase_stats<S: AsRef<str>>(lexicon: &Lexicon, tokens: &[S]) -> PhraseStats {
    use GenderClass::{FemaleSingular, MaleSingular};
    let has = |c: GenderClass| tokens.iter().any(|t| lexicon.classify_token(t.as_ref()) == c);
    let mut s = PhraseStats {
        captions: 1,
        ..PhraseStats::default()
    };
    if has(MaleSingular) && has(FemaleSingular) {
        s.both_genders = 1;
        s.male_first_phrase = joins(lexicon, tokens, MaleSingular, FemaleSingular) as u64;
        s.female_first_phrase = joins(lexicon, tokens, FemaleSingular, MaleSingular) as u64;
    }
    s
}

pub fn two_person_phrase_stats<T, S>(lexicon: &Lexicon, captions: &[T]) -> PhraseStats
where
    T: AsRef<[S]> + Sync,
    S: AsRef<str>,
{
    captions
        .par_iter()
        .map(|c| caption_phrase_stats(lexicon, c.as_ref()))
        .reduce(PhraseStats::default, Add::add)
}

/// Male-first phrase share in predictions divided by the share in training captions.
pub fn amplification_ratio(train: &PhraseStats, predictions: &PhraseStats) -> Result<f64> {
    let train_share = train
        .male_first_share()
        .ok_or_else(|| Error::Input("training captions contain no two-gender captions".into()))?;
    let pred_share = predictions
        .male_first_share()
        .ok_or_else(|| Error::Input("predictions contain no two-gender captions".into()))?;
    if train_share == 0.0 {
        return Err(Error::Input(
            "training phrase share is zero; amplification undefined".into(),
        ));
    }
    Ok(pred_share / train_share)
}
