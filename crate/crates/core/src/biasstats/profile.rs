use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};
use crate::lexicon::{Gender, GenderClass, Lexicon};

/// Function words excluded from the bias word universe. Pinned; changing it changes reports.
pub const STOPLIST: [&str; 50] = [
    "a", "an", "the", "and", "or", "but", "nor", "so", "yet", "of", "in", "on", "at", "to",
    "for", "with", "from", "by", "about", "as", "into", "onto", "over", "under", "near", "next",
    "behind", "above", "below", "between", "through", "across", "around", "along", "up", "down",
    "out", "off", "while", "is", "are", "was", "be", "been", "being", "that", "this", "there",
    "some", "very",
];

pub fn is_stopword(token: &str) -> bool {
    STOPLIST.contains(&token)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WordCounts {
    pub male: u64,
    pub female: u64,
}

impl WordCounts {
    pub fn total(&self) -> u64 {
        self.male + self.female
    }
}

/// Caption-level co-occurrence counts of context words with male and female subject words.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasProfile {
    pub split: Split,
    pub lexicon_version: String,
    pub male_captions: u64,
    pub female_captions: u64,
    counts: BTreeMap<String, WordCounts>,
}

#[derive(Default)]
struct Partial {
    male_captions: u64,
    female_captions: u64,
    counts: HashMap<String, WordCounts>,
}

impl Partial {
    fn add_caption<S: AsRef<str>>(&mut self, lexicon: &Lexicon, tokens: &[S]) {
        let mut male = false;
        let mut female = false;
        for t in tokens {
            let class = lexicon.classify_token(t.as_ref());
            if class.is_person_word() {
                match class.gender() {
                    Some(Gender::Male) => male = true,
                    Some(Gender::Female) => female = true,
                    None => {}
                }
            }
        }
        if !male && !female {
            return;
        }
        self.male_captions += male as u64;
        self.female_captions += female as u64;
        let words: HashSet<&str> = tokens
            .iter()
            .map(AsRef::as_ref)
            .filter(|t| !is_stopword(t) && lexicon.classify_token(t) == GenderClass::NonPerson)
            .collect();
        for w in words {
            let entry = self.counts.entry(w.to_owned()).or_default();
            entry.male += male as u64;
            entry.female += female as u64;
        }
    }

    fn merge(mut self, other: Partial) -> Partial {
        self.male_captions += other.male_captions;
        self.female_captions += other.female_captions;
        for (w, c) in other.counts {
            let e = self.counts.entry(w).or_default();
            e.male += c.male;
            e.female += c.female;
        }
        self
    }
}

impl BiasProfile {
    /// Build a profile from raw token lists (one per caption).
    pub fn from_captions<'a, I, S>(lexicon: &Lexicon, split: Split, captions: I) -> BiasProfile
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut partial = Partial::default();
        for tokens in captions {
            partial.add_caption(lexicon, tokens);
        }
        BiasProfile::finish(lexicon, split, partial)
    }

    fn finish(lexicon: &Lexicon, split: Split, partial: Partial) -> BiasProfile {
        BiasProfile {
            split,
            lexicon_version: lexicon.version().to_owned(),
            male_captions: partial.male_captions,
            female_captions: partial.female_captions,
            counts: partial.counts.into_iter().collect(),
        }
    }

    pub fn counts(&self, word: &str) -> Option<WordCounts> {
        self.counts.get(word).copied()
    }

    /// Words in lexicographic order with their counts.
    pub fn iter(&self) -> impl Iterator<Item = (&str, WordCounts)> + '_ {
        self.counts.iter().map(|(w, c)| (w.as_str(), *c))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `c(w, male) / (c(w, male) + c(w, female))`, absent when the word never co-occurs.
    pub fn bias_male(&self, word: &str) -> Option<f64> {
        self.bias(word, Gender::Male)
    }

    pub fn bias_female(&self, word: &str) -> Option<f64> {
        self.bias(word, Gender::Female)
    }

    pub fn bias(&self, word: &str, gender: Gender) -> Option<f64> {
        let c = self.counts.get(word)?;
        bias_of(c, gender)
    }

    /// The `top_k` words most biased toward `gender` among words seen in at least
    /// `min_count` gendered captions. Only words strictly above 0.5 qualify.
    /// Ordered by bias, then count (descending), then word.
    pub fn most_biased(&self, gender: Gender, top_k: usize, min_count: u64) -> Vec<(String, f64)> {
        let mut candidates: Vec<(&str, f64, u64)> = self
            .counts
            .iter()
            .filter(|(_, c)| c.total() >= min_count)
            .filter_map(|(w, c)| {
                let b = bias_of(c, gender)?;
                (b > 0.5).then_some((w.as_str(), b, c.total()))
            })
            .collect();
        candidates.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then(b.2.cmp(&a.2))
                .then(a.0.cmp(b.0))
        });
        candidates
            .into_iter()
            .take(top_k)
            .map(|(w, b, _)| (w.to_owned(), b))
            .collect()
    }
}

fn bias_of(c: &WordCounts, gender: Gender) -> Option<f64> {
    let total = c.total();
    if total == 0 {
        return None;
    }
    let num = match gender {
        Gender::Male => c.male,
        Gender::Female => c.female,
    };
    Some(num as f64 / total as f64)
}

/// Bias profile over the captions of `split`.
pub fn build_bias_profile(lexicon: &Lexicon, corpus: &Corpus, split: Split) -> Result<BiasProfile> {
    let positions = corpus.image_positions(split);
    if positions.is_empty() {
        return Err(Error::Input(format!("split {split} contains no images")));
    }
    let partial = positions
        .par_iter()
        .fold(Partial::default, |mut acc, &pos| {
            for c in corpus.captions_at(pos) {
                acc.add_caption(lexicon, &c.tokens);
            }
            acc
        })
        .reduce(Partial::default, Partial::merge);
    Ok(BiasProfile::finish(lexicon, split, partial))
}
