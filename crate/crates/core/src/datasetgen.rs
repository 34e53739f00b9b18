//! Gender-classification crop specs and the anti-stereotypical evaluation set.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biasstats::{image_signatures, BiasProfile, SignatureCounts};
use crate::corpus::{BBox, CaptionId, Corpus, ImageId, Split};
use crate::error::{Error, Result};
use crate::lexicon::{Gender, GenderClass, Lexicon, Number};
use crate::reinjector::PersonClass;

pub const DEFAULT_TOP_K: usize = 100;
pub const DEFAULT_MIN_COUNT: u64 = 20;

/// One crop to cut from a COCO image. Pixels are not touched here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderCropSpec {
    pub image_id: ImageId,
    pub file_name: String,
    pub label: PersonClass,
    pub bbox: BBox,
    /// Box area `w * h` of the chosen instance.
    pub area: f64,
    pub segmentation: serde_json::Value,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub male: usize,
    pub female: usize,
    pub person: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationSummary {
    pub split: Split,
    pub counts: ClassCounts,
    /// Images whose captions all carry a single-person signature.
    pub signed_images: usize,
    /// Labelled images dropped because they have no non-crowd person box.
    pub excluded_without_box: usize,
}

/// Label for an image's signature tally, if it qualifies.
pub fn classify_signatures(c: &SignatureCounts) -> Option<PersonClass> {
    if c.male >= 3 && c.female == 0 {
        Some(PersonClass::Male)
    } else if c.female >= 3 && c.male == 0 {
        Some(PersonClass::Female)
    } else if c.neutral >= 4 && c.male == 0 && c.female == 0 {
        Some(PersonClass::Person)
    } else {
        None
    }
}

pub fn build_gender_classification_set(
    lexicon: &Lexicon,
    corpus: &Corpus,
    split: Split,
) -> Result<(Vec<GenderCropSpec>, ClassificationSummary)> {
    if !corpus.instances_loaded() {
        return Err(Error::Config(
            "classification set needs person instances; pass an instances file".into(),
        ));
    }
    let signed = image_signatures(lexicon, corpus, split, Number::Singular);
    let picked: Vec<Result<Option<GenderCropSpec>>> = signed
        .par_iter()
        .filter_map(|s| classify_signatures(&s.counts).map(|label| (s.image_id, label)))
        .map(|(image_id, label)| {
            let boxes = corpus.largest_person_boxes(image_id, 1)?;
            let Some(inst) = boxes.first() else {
                return Ok(None);
            };
            let image = corpus.image(image_id)?;
            Ok(Some(GenderCropSpec {
                image_id,
                file_name: image.file_name.clone(),
                label,
                bbox: inst.bbox,
                area: inst.bbox.area(),
                segmentation: inst.segmentation.clone(),
                split,
            }))
        })
        .collect();

    let mut specs = Vec::new();
    let mut summary = ClassificationSummary {
        split,
        counts: ClassCounts::default(),
        signed_images: signed.len(),
        excluded_without_box: 0,
    };
    for p in picked {
        match p? {
            Some(spec) => {
                match spec.label {
                    PersonClass::Male => summary.counts.male += 1,
                    PersonClass::Female => summary.counts.female += 1,
                    PersonClass::Person => summary.counts.person += 1,
                }
                specs.push(spec);
            }
            None => summary.excluded_without_box += 1,
        }
    }
    if summary.excluded_without_box > 0 {
        log::warn!(
            "{} labelled images in {split} have no person box and were excluded",
            summary.excluded_without_box
        );
    }
    Ok((specs, summary))
}

/// An evaluation image whose caption pairs a gender with words biased toward the other.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnusualInstance {
    pub image_id: ImageId,
    pub gender: Gender,
    /// Opposite-biased words in the caption, in caption order.
    pub trigger_words: Vec<String>,
    pub caption_id: CaptionId,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasedWord {
    pub word: String,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnusualSummary {
    pub profile_split: Split,
    pub eval_split: Split,
    pub top_k: usize,
    pub min_count: u64,
    pub male_instances: usize,
    pub female_instances: usize,
    pub male_biased_words: Vec<BiasedWord>,
    pub female_biased_words: Vec<BiasedWord>,
}

fn word_set(list: &[(String, f64)]) -> BTreeSet<&str> {
    list.iter().map(|(w, _)| w.as_str()).collect()
}

/// Gender of a caption that names people of exactly one gender (singular words only
/// count as the subject; any word of the other gender disqualifies).
fn caption_gender<S: AsRef<str>>(lexicon: &Lexicon, tokens: &[S]) -> Option<Gender> {
    let mut singular = None;
    let mut seen = BTreeSet::new();
    for t in tokens {
        let class = lexicon.classify_token(t.as_ref());
        if !class.is_person_word() {
            continue;
        }
        if let Some(g) = class.gender() {
            seen.insert(g);
            if matches!(class, GenderClass::MaleSingular | GenderClass::FemaleSingular) {
                singular = Some(g);
            }
        }
    }
    if seen.len() == 1 {
        singular
    } else {
        None
    }
}

pub fn build_unusual_set(
    lexicon: &Lexicon,
    corpus: &Corpus,
    profile: &BiasProfile,
    eval_split: Split,
    top_k: usize,
    min_count: u64,
) -> Result<(Vec<UnusualInstance>, UnusualSummary)> {
    if top_k == 0 {
        return Err(Error::Input("top_k must be at least 1".into()));
    }
    if profile.split == eval_split {
        return Err(Error::Contamination(format!(
            "bias profile was built on {} and cannot select images from the same split",
            profile.split
        )));
    }
    let male_list = profile.most_biased(Gender::Male, top_k, min_count);
    let female_list = profile.most_biased(Gender::Female, top_k, min_count);
    let male_set = word_set(&male_list);
    let female_set = word_set(&female_list);

    let mut instances: Vec<UnusualInstance> = corpus
        .images()
        .par_iter()
        .enumerate()
        .filter(|(_, img)| img.split == eval_split)
        .filter_map(|(pos, img)| {
            corpus.captions_at(pos).find_map(|c| {
                let gender = caption_gender(lexicon, &c.tokens)?;
                let opposite = match gender {
                    Gender::Male => &female_set,
                    Gender::Female => &male_set,
                };
                let mut triggers: Vec<String> = Vec::new();
                for t in &c.tokens {
                    if opposite.contains(t.as_str()) && !triggers.contains(t) {
                        triggers.push(t.clone());
                    }
                }
                (!triggers.is_empty()).then_some(UnusualInstance {
                    image_id: img.image_id,
                    gender,
                    trigger_words: triggers,
                    caption_id: c.caption_id,
                })
            })
        })
        .collect();
    instances.sort_by_key(|i| i.image_id);

    if let Some(bad) = instances
        .iter()
        .find(|i| corpus.split_of(i.image_id) == Some(profile.split))
    {
        return Err(Error::Contamination(format!(
            "image {} belongs to the profile split",
            bad.image_id
        )));
    }

    let to_words = |l: Vec<(String, f64)>| {
        l.into_iter()
            .map(|(word, bias)| BiasedWord { word, bias })
            .collect()
    };
    let male_instances = instances.iter().filter(|i| i.gender == Gender::Male).count();
    let summary = UnusualSummary {
        profile_split: profile.split,
        eval_split,
        top_k,
        min_count,
        male_instances,
        female_instances: instances.len() - male_instances,
        male_biased_words: to_words(male_list),
        female_biased_words: to_words(female_list),
    };
    Ok((instances, summary))
}

/// Class counts keyed by label name, for reports.
pub fn class_counts_map(c: &ClassCounts) -> BTreeMap<&'static str, usize> {
    BTreeMap::from([("male", c.male), ("female", c.female), ("person", c.person)])
}
