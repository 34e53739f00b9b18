use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::biasstats::Contingency2x2;
use crate::corpus::{Corpus, ImageId, Split};
use crate::lexicon::{Gender, Lexicon, Number};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Signature {
    Male,
    Female,
    Neutral,
}

/// Gender of the caption's single person word of the requested number, if the
/// caption mentions exactly one person word and it has that number.
pub fn person_signature<S: AsRef<str>>(lexicon: &Lexicon, tokens: &[S], number: Number) -> Option<Signature> {
    let mut found = None;
    for t in tokens {
        let class = lexicon.classify_token(t.as_ref());
        if !class.is_person_word() {
            continue;
        }
        if found.is_some() {
            return None;
        }
        found = Some(class);
    }
    let class = found?;
    if class.number() != Some(number) {
        return None;
    }
    Some(match class.gender() {
        Some(Gender::Male) => Signature::Male,
        Some(Gender::Female) => Signature::Female,
        None => Signature::Neutral,
    })
}

pub fn single_person_gender_signature<S: AsRef<str>>(lexicon: &Lexicon, tokens: &[S]) -> Option<Signature> {
    person_signature(lexicon, tokens, Number::Singular)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SignatureCounts {
    pub male: usize,
    pub female: usize,
    pub neutral: usize,
}

impl SignatureCounts {
    pub fn total(&self) -> usize {
        self.male + self.female + self.neutral
    }

    pub fn is_conflict(&self) -> bool {
        self.male >= 1 && self.female >= 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSignatures {
    pub image_id: ImageId,
    pub counts: SignatureCounts,
}

/// Signature tallies for every image of `split` whose captions all carry a
/// signature of `number`. Images without captions are skipped. Ascending image id.
pub fn image_signatures(lexicon: &Lexicon, corpus: &Corpus, split: Split, number: Number) -> Vec<ImageSignatures> {
    corpus
        .image_positions(split)
        .into_par_iter()
        .filter_map(|pos| {
            let mut counts = SignatureCounts::default();
            for c in corpus.captions_at(pos) {
                match person_signature(lexicon, &c.tokens, number)? {
                    Signature::Male => counts.male += 1,
                    Signature::Female => counts.female += 1,
                    Signature::Neutral => counts.neutral += 1,
                }
            }
            (counts.total() > 0).then(|| ImageSignatures {
                image_id: corpus.images()[pos].image_id,
                counts,
            })
        })
        .collect()
}

/// Captions per image assumed by the census table layout.
pub const STANDARD_CAPTIONS: usize = 5;

/// Histogram of conflicting images keyed by (male, female, neutral) caption counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConflictCensus {
    /// Images with exactly five captions.
    #[serde(serialize_with = "cells_as_rows")]
    pub cells: BTreeMap<(usize, usize, usize), usize>,
    /// Conflicting images whose caption count is not five.
    #[serde(serialize_with = "cells_as_rows")]
    pub irregular_cells: BTreeMap<(usize, usize, usize), usize>,
    /// Images whose captions all describe one person with one word.
    pub qualifying_images: usize,
}

fn cells_as_rows<S: Serializer>(
    cells: &BTreeMap<(usize, usize, usize), usize>,
    s: S,
) -> Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Row {
        male: usize,
        female: usize,
        neutral: usize,
        images: usize,
    }
    s.collect_seq(cells.iter().map(|(&(male, female, neutral), &images)| Row {
        male,
        female,
        neutral,
        images,
    }))
}

impl ConflictCensus {
    pub fn get(&self, male: usize, female: usize, neutral: usize) -> usize {
        self.cells.get(&(male, female, neutral)).copied().unwrap_or(0)
    }

    pub fn conflicting_images(&self) -> usize {
        self.cells.values().sum::<usize>() + self.irregular_cells.values().sum::<usize>()
    }
}

pub fn conflict_census(lexicon: &Lexicon, corpus: &Corpus, split: Split) -> ConflictCensus {
    census_from_signatures(&image_signatures(lexicon, corpus, split, Number::Singular))
}

pub(crate) fn census_from_signatures(images: &[ImageSignatures]) -> ConflictCensus {
    let mut census = ConflictCensus {
        qualifying_images: images.len(),
        ..ConflictCensus::default()
    };
    for img in images.iter().filter(|i| i.counts.is_conflict()) {
        let c = img.counts;
        let cells = if c.total() == STANDARD_CAPTIONS {
            &mut census.cells
        } else {
            &mut census.irregular_cells
        };
        *cells.entry((c.male, c.female, c.neutral)).or_insert(0) += 1;
    }
    census
}

/// Images with `x` gendered and `5 - x` neutral captions, `x = 1..=5`, per gender.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UsageHistogram {
    pub number: Number,
    /// `male[x - 1]` counts images with `x` male captions.
    pub male: [usize; STANDARD_CAPTIONS],
    pub female: [usize; STANDARD_CAPTIONS],
    pub excluded_conflict: usize,
    pub excluded_irregular: usize,
}

impl UsageHistogram {
    /// 2x2 table: rows male/female, columns all-gendered (5/0) vs one neutral caption (4/1).
    pub fn contingency(&self) -> Contingency2x2 {
        let n = STANDARD_CAPTIONS;
        Contingency2x2::labelled(
            [
                [self.male[n - 1] as u64, self.male[n - 2] as u64],
                [self.female[n - 1] as u64, self.female[n - 2] as u64],
            ],
            ["male", "female"],
            ["all gendered", "one neutral"],
        )
    }

    pub fn total(&self, gender: Gender) -> usize {
        match gender {
            Gender::Male => self.male.iter().sum(),
            Gender::Female => self.female.iter().sum(),
        }
    }
}

pub fn usage_histogram(lexicon: &Lexicon, corpus: &Corpus, split: Split, number: Number) -> UsageHistogram {
    usage_from_signatures(number, &image_signatures(lexicon, corpus, split, number))
}

pub(crate) fn usage_from_signatures(number: Number, images: &[ImageSignatures]) -> UsageHistogram {
    let mut h = UsageHistogram {
        number,
        male: [0; STANDARD_CAPTIONS],
        female: [0; STANDARD_CAPTIONS],
        excluded_conflict: 0,
        excluded_irregular: 0,
    };
    for img in images {
        let c = img.counts;
        if c.is_conflict() {
            h.excluded_conflict += 1;
        } else if c.total() != STANDARD_CAPTIONS {
            if c.male + c.female > 0 {
                h.excluded_irregular += 1;
            }
        } else if c.male > 0 {
            h.male[c.male - 1] += 1;
        } else if c.female > 0 {
            h.female[c.female - 1] += 1;
        }
    }
    h
}
