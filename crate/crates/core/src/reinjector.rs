//! Put classifier gender labels back into gender-neutral captions.
//!
//! Rules, tried in order:
//! - **pair**: the bigram "two people"/"two youngsters" becomes "a L1 and a L2" from
//!   the two largest labels, or "two men"/"two women" (boys/girls) when they agree;
//! - **group**: any other neutral plural subject becomes the gendered plural when
//!   the (up to six) largest labels all share one gender, else stays;
//! - **singular**: a lone singular subject takes the largest label.
//!
//! Mixed pairs are always rendered male first.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BBox, ImageId};
use crate::error::{Error, Result};
use crate::formats::{parse_jsonl, Prediction};
use crate::lexicon::{GenderClass, Lexicon};
use crate::tokenize::{detokenize, tokenize};

/// Labels considered by the group rule.
pub const GROUP_LABEL_LIMIT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PersonClass {
    Male,
    Female,
    Person,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonLabel {
    pub bbox: BBox,
    pub area: f64,
    pub label: PersonClass,
}

impl PersonLabel {
    pub fn new(label: PersonClass, area: f64) -> Self {
        let side = area.max(0.0).sqrt();
        PersonLabel {
            bbox: BBox {
                x: 0.0,
                y: 0.0,
                w: side,
                h: side,
            },
            area,
            label,
        }
    }
}

/// One line of a labels file: `{"image_id": 1, "instances": [{"bbox": [...], "area": 12.0, "label": "male"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageLabels {
    pub image_id: ImageId,
    pub instances: Vec<PersonLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InjectionRule {
    Singular,
    Pair,
    Group,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Substitution {
    /// Token index in the input caption.
    pub index: usize,
    pub original: String,
    pub replacement: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InjectionReport {
    pub rule_applied: InjectionRule,
    pub substitutions: Vec<Substitution>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InjectOptions {
    /// Render person-labelled "youngster" as "child" and unresolved "youngsters" as
    /// "children". Reads more naturally but makes injection non-invertible.
    pub prefer_child: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Age {
    Adult,
    Young,
}

struct Words<'a> {
    lexicon: &'a Lexicon,
    opts: InjectOptions,
}

impl Words<'_> {
    fn singular(&self, label: PersonClass, age: Age) -> &str {
        let c = self.lexicon.canonical();
        let t = self.lexicon.neutral_targets();
        match (label, age) {
            (PersonClass::Male, Age::Adult) => &c.man,
            (PersonClass::Male, Age::Young) => &c.boy,
            (PersonClass::Female, Age::Adult) => &c.woman,
            (PersonClass::Female, Age::Young) => &c.girl,
            (PersonClass::Person, Age::Adult) => &t.adult,
            (PersonClass::Person, Age::Young) if self.opts.prefer_child => &c.child,
            (PersonClass::Person, Age::Young) => &t.young,
        }
    }

    fn plural(&self, label: Option<PersonClass>, age: Age) -> &str {
        let c = self.lexicon.canonical();
        let t = self.lexicon.neutral_targets();
        match (label, age) {
            (Some(PersonClass::Male), Age::Adult) => &c.men,
            (Some(PersonClass::Male), Age::Young) => &c.boys,
            (Some(PersonClass::Female), Age::Adult) => &c.women,
            (Some(PersonClass::Female), Age::Young) => &c.girls,
            (_, Age::Adult) => &t.adults,
            (_, Age::Young) if self.opts.prefer_child => &c.children,
            (_, Age::Young) => &t.youngsters,
        }
    }

    fn singular_age(&self, token: &str) -> Option<Age> {
        let t = self.lexicon.neutral_targets();
        if token == t.adult {
            Some(Age::Adult)
        } else if token == t.young {
            Some(Age::Young)
        } else {
            None
        }
    }

    fn plural_age(&self, token: &str) -> Option<Age> {
        let t = self.lexicon.neutral_targets();
        if token == t.adults {
            Some(Age::Adult)
        } else if token == t.youngsters {
            Some(Age::Young)
        } else {
            None
        }
    }
}

/// The single gender shared by all labels, if any.
fn common_label(labels: &[PersonLabel]) -> Option<PersonClass> {
    let first = labels.first()?.label;
    labels.iter().all(|l| l.label == first).then_some(first)
}

/// Inject gender into a neutral caption. `labels` must be sorted by descending area.
pub fn inject_gender<S: AsRef<str>>(
    lexicon: &Lexicon,
    tokens: &[S],
    labels: &[PersonLabel],
    opts: InjectOptions,
) -> Result<(Vec<String>, InjectionReport)> {
    if let Some(bad) = tokens
        .iter()
        .map(AsRef::as_ref)
        .find(|t| lexicon.classify_token(t).is_gendered())
    {
        return Err(Error::Contract(format!(
            "caption contains gendered token {bad:?}; neutralize it first"
        )));
    }
    let mut out: Vec<String> = tokens.iter().map(|t| t.as_ref().to_owned()).collect();
    let unchanged = |out: Vec<String>, rule| {
        Ok((
            out,
            InjectionReport {
                rule_applied: rule,
                substitutions: Vec::new(),
            },
        ))
    };
    if labels.is_empty() {
        return unchanged(out, InjectionRule::None);
    }
    let words = Words { lexicon, opts };
    let mut subs = Vec::new();
    let mut replace = |out: &mut Vec<String>, i: usize, word: &str| {
        if out[i] != word {
            subs.push(Substitution {
                index: i,
                original: out[i].clone(),
                replacement: word.to_owned(),
            });
            out[i] = word.to_owned();
        }
    };

    // pair
    let pair_at = (0..out.len().saturating_sub(1))
        .find(|&i| out[i] == "two" && words.plural_age(&out[i + 1]).is_some());
    if let Some(i) = pair_at {
        if labels.len() < 2 {
            return unchanged(out, InjectionRule::None);
        }
        let age = words.plural_age(&out[i + 1]).expect("checked above");
        let (a, b) = (labels[0].label, labels[1].label);
        let mut rebuilt: Vec<String> = out[..i].to_vec();
        let phrase: Vec<String> = if a == b {
            vec!["two".to_owned(), words.plural(Some(a), age).to_owned()]
        } else {
            let (first, second) = if a <= b { (a, b) } else { (b, a) };
            ["a", words.singular(first, age), "and", "a", words.singular(second, age)]
                .map(str::to_owned)
                .to_vec()
        };
        let original = detokenize(&out[i..i + 2]);
        let replacement = detokenize(&phrase);
        rebuilt.extend(phrase);
        rebuilt.extend_from_slice(&out[i + 2..]);
        let substitutions = if original == replacement {
            Vec::new()
        } else {
            vec![Substitution {
                index: i,
                original,
                replacement,
            }]
        };
        return Ok((
            rebuilt,
            InjectionReport {
                rule_applied: InjectionRule::Pair,
                substitutions,
            },
        ));
    }

    // group
    let plural_positions: Vec<(usize, Age)> = out
        .iter()
        .enumerate()
        .filter_map(|(i, t)| words.plural_age(t).map(|a| (i, a)))
        .collect();
    if !plural_positions.is_empty() {
        let top = &labels[..labels.len().min(GROUP_LABEL_LIMIT)];
        let shared = common_label(top);
        for (i, age) in plural_positions {
            let w = words.plural(shared, age).to_owned();
            replace(&mut out, i, &w);
        }
        return Ok((
            out,
            InjectionReport {
                rule_applied: InjectionRule::Group,
                substitutions: subs,
            },
        ));
    }

    // singular
    let mentions = out
        .iter()
        .filter(|t| lexicon.classify_token(t) == GenderClass::NeutralSingularPerson)
        .count();
    let targets: Vec<(usize, Age)> = out
        .iter()
        .enumerate()
        .filter_map(|(i, t)| words.singular_age(t).map(|a| (i, a)))
        .collect();
    let rule = match mentions {
        0 => return unchanged(out, InjectionRule::None),
        1 => {
            for &(i, age) in &targets {
                let w = words.singular(labels[0].label, age).to_owned();
                replace(&mut out, i, &w);
            }
            InjectionRule::Singular
        }
        _ => {
            // Several singular subjects: gender them only when the two largest agree.
            let agreed = common_label(&labels[..labels.len().min(2)])
                .filter(|&l| l != PersonClass::Person && labels.len() >= 2);
            if let Some(label) = agreed {
                for &(i, age) in &targets {
                    let w = words.singular(label, age).to_owned();
                    replace(&mut out, i, &w);
                }
            }
            InjectionRule::Pair
        }
    };
    Ok((
        out,
        InjectionReport {
            rule_applied: rule,
            substitutions: subs,
        },
    ))
}

/// Parse a labels file and sort each image's instances by descending area
/// (stable, so ties keep file order). Duplicate image ids are rejected.
pub fn parse_labels(label: &str, bytes: &[u8]) -> Result<BTreeMap<ImageId, Vec<PersonLabel>>> {
    let lines: Vec<ImageLabels> = parse_jsonl(label, bytes)?;
    let mut out = BTreeMap::new();
    let mut dups = Vec::new();
    for mut line in lines {
        if let Some(bad) = line.instances.iter().find(|i| i.area.is_nan() || i.area <= 0.0) {
            return Err(Error::Input(format!(
                "{label}: image {} has a label with non-positive area {}",
                line.image_id, bad.area
            )));
        }
        line.instances
            .sort_by(|a, b| b.area.total_cmp(&a.area));
        if out.insert(line.image_id, line.instances).is_some() {
            dups.push(line.image_id.0);
        }
    }
    if !dups.is_empty() {
        return Err(Error::integrity(
            format!("{label}: duplicate image ids in labels"),
            dups,
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InjectionStats {
    pub captions: usize,
    pub missing_labels: usize,
    pub substitutions: usize,
    pub by_rule: BTreeMap<InjectionRule, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InjectedCaption {
    pub image_id: ImageId,
    pub report: InjectionReport,
}

#[derive(Debug, Clone)]
pub struct InjectionOutput {
    /// Same schema as the input predictions, ordered by image id.
    pub predictions: Vec<Prediction>,
    pub reports: Vec<InjectedCaption>,
    pub stats: InjectionStats,
}

/// Inject labels into every prediction. Images without labels pass through unchanged.
pub fn inject_corpus(
    lexicon: &Lexicon,
    predictions: &[Prediction],
    labels: &BTreeMap<ImageId, Vec<PersonLabel>>,
    opts: InjectOptions,
) -> Result<InjectionOutput> {
    let mut seen = BTreeSet::new();
    let dups: Vec<u64> = predictions
        .iter()
        .filter(|p| !seen.insert(p.image_id))
        .map(|p| p.image_id.0)
        .collect();
    if !dups.is_empty() {
        return Err(Error::integrity("duplicate image ids in predictions", dups));
    }
    let mut sorted: Vec<&Prediction> = predictions.iter().collect();
    sorted.sort_by_key(|p| p.image_id);

    let results: Vec<Result<(Prediction, InjectedCaption, bool)>> = sorted
        .par_iter()
        .map(|p| {
            let image_labels = labels.get(&p.image_id);
            let tokens = tokenize(&p.caption);
            let (gendered, report) =
                inject_gender(lexicon, &tokens, image_labels.map_or(&[], Vec::as_slice), opts)
                    .map_err(|e| Error::Contract(format!("image {}: {e}", p.image_id)))?;
            let caption = if report.substitutions.is_empty() {
                p.caption.clone()
            } else {
                detokenize(&gendered)
            };
            Ok((
                Prediction {
                    image_id: p.image_id,
                    caption,
                },
                InjectedCaption {
                    image_id: p.image_id,
                    report,
                },
                image_labels.is_none(),
            ))
        })
        .collect();

    let mut out = InjectionOutput {
        predictions: Vec::with_capacity(results.len()),
        reports: Vec::with_capacity(results.len()),
        stats: InjectionStats::default(),
    };
    for r in results {
        let (pred, injected, missing) = r?;
        out.stats.captions += 1;
        out.stats.missing_labels += missing as usize;
        out.stats.substitutions += injected.report.substitutions.len();
        *out.stats.by_rule.entry(injected.report.rule_applied).or_insert(0) += 1;
        out.predictions.push(pred);
        out.reports.push(injected);
    }
    Ok(out)
}
