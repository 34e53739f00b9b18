//! Gender/number classification of tokens and the neutral replacement map.
//!
//! The built-in lexicon (`default.json`) is pinned and versioned. A config file
//! with the same keys replaces it, or extends it when it sets `"base": "default"`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::hex;
use crate::error::{Error, Result};
use crate::tokenize::tokenize;

const DEFAULT_LEXICON: &str = include_str!("default.json");

/// Tokens after which an ambiguous pronoun ("her") is read as an object, not a possessive.
const OBJECT_FOLLOWERS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "to", "in", "on", "at", "with", "from", "by", "for",
    "of", "up", "down", "while", "as", "is", "are", "was", "were", "be", "off", "out", "over",
    "into", "onto", "under", "near", "through", "around", "across", "toward", "towards", "this",
    "that", "these", "those", "some", "it", "them", "him", "her", "so", "then", "too", "back",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GenderClass {
    MaleSingular,
    FemaleSingular,
    NeutralSingularPerson,
    MalePlural,
    FemalePlural,
    NeutralPlural,
    MalePronoun,
    FemalePronoun,
    NeutralPronoun,
    NonPerson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Number {
    Singular,
    Plural,
}

impl GenderClass {
    pub const ALL: [GenderClass; 10] = [
        GenderClass::MaleSingular,
        GenderClass::FemaleSingular,
        GenderClass::NeutralSingularPerson,
        GenderClass::MalePlural,
        GenderClass::FemalePlural,
        GenderClass::NeutralPlural,
        GenderClass::MalePronoun,
        GenderClass::FemalePronoun,
        GenderClass::NeutralPronoun,
        GenderClass::NonPerson,
    ];

    pub fn gender(self) -> Option<Gender> {
        use GenderClass::*;
        match self {
            MaleSingular | MalePlural | MalePronoun => Some(Gender::Male),
            FemaleSingular | FemalePlural | FemalePronoun => Some(Gender::Female),
            _ => None,
        }
    }

    pub fn is_gendered(self) -> bool {
        self.gender().is_some()
    }

    /// Singular or plural person noun (pronouns excluded).
    pub fn is_person_word(self) -> bool {
        self.number().is_some()
    }

    pub fn number(self) -> Option<Number> {
        use GenderClass::*;
        match self {
            MaleSingular | FemaleSingular | NeutralSingularPerson => Some(Number::Singular),
            MalePlural | FemalePlural | NeutralPlural => Some(Number::Plural),
            _ => None,
        }
    }

    /// The neutral class a gendered word of this class is rewritten into.
    pub fn neutral_counterpart(self) -> GenderClass {
        use GenderClass::*;
        match self {
            MaleSingular | FemaleSingular => NeutralSingularPerson,
            MalePlural | FemalePlural => NeutralPlural,
            MalePronoun | FemalePronoun => NeutralPronoun,
            other => other,
        }
    }

    pub fn config_key(self) -> &'static str {
        use GenderClass::*;
        match self {
            MaleSingular => "male_singular",
            FemaleSingular => "female_singular",
            NeutralSingularPerson => "neutral_singular",
            MalePlural => "male_plural",
            FemalePlural => "female_plural",
            NeutralPlural => "neutral_plural",
            MalePronoun => "male_pronouns",
            FemalePronoun => "female_pronouns",
            NeutralPronoun => "neutral_pronouns",
            NonPerson => "non_person",
        }
    }
}

impl fmt::Display for GenderClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.config_key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Replacement {
    Fixed(String),
    /// Pronouns like "her" whose neutral form depends on position.
    Contextual { possessive: String, object: String },
}

/// Words used when gender is put back into a neutral caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalWords {
    pub man: String,
    pub woman: String,
    pub boy: String,
    pub girl: String,
    pub child: String,
    pub men: String,
    pub women: String,
    pub boys: String,
    pub girls: String,
    pub children: String,
}

impl Default for CanonicalWords {
    fn default() -> Self {
        let s = |w: &str| w.to_string();
        CanonicalWords {
            man: s("man"),
            woman: s("woman"),
            boy: s("boy"),
            girl: s("girl"),
            child: s("child"),
            men: s("men"),
            women: s("women"),
            boys: s("boys"),
            girls: s("girls"),
            children: s("children"),
        }
    }
}

/// The four neutral subject words the re-injector recognises, derived from the
/// replacements of the canonical gendered words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeutralTargets {
    pub adult: String,
    pub young: String,
    pub adults: String,
    pub youngsters: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconConfig {
    #[serde(default)]
    version: Option<String>,
    #[serde(default)]
    base: Option<String>,
    #[serde(default)]
    male_singular: Vec<String>,
    #[serde(default)]
    female_singular: Vec<String>,
    #[serde(default)]
    neutral_singular: Vec<String>,
    #[serde(default)]
    male_plural: Vec<String>,
    #[serde(default)]
    female_plural: Vec<String>,
    #[serde(default)]
    neutral_plural: Vec<String>,
    #[serde(default)]
    male_pronouns: Vec<String>,
    #[serde(default)]
    female_pronouns: Vec<String>,
    #[serde(default)]
    neutral_pronouns: Vec<String>,
    #[serde(default)]
    replacements: BTreeMap<String, Replacement>,
    #[serde(default)]
    canonical: Option<CanonicalWords>,
}

impl LexiconConfig {
    fn lists(&self) -> [(GenderClass, &Vec<String>); 9] {
        use GenderClass::*;
        [
            (MaleSingular, &self.male_singular),
            (FemaleSingular, &self.female_singular),
            (NeutralSingularPerson, &self.neutral_singular),
            (MalePlural, &self.male_plural),
            (FemalePlural, &self.female_plural),
            (NeutralPlural, &self.neutral_plural),
            (MalePronoun, &self.male_pronouns),
            (FemalePronoun, &self.female_pronouns),
            (NeutralPronoun, &self.neutral_pronouns),
        ]
    }

    fn extend(&mut self, other: LexiconConfig) {
        self.male_singular.extend(other.male_singular);
        self.female_singular.extend(other.female_singular);
        self.neutral_singular.extend(other.neutral_singular);
        self.male_plural.extend(other.male_plural);
        self.female_plural.extend(other.female_plural);
        self.neutral_plural.extend(other.neutral_plural);
        self.male_pronouns.extend(other.male_pronouns);
        self.female_pronouns.extend(other.female_pronouns);
        self.neutral_pronouns.extend(other.neutral_pronouns);
        self.replacements.extend(other.replacements);
        if other.canonical.is_some() {
            self.canonical = other.canonical;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    version: String,
    classes: HashMap<String, GenderClass>,
    lists: BTreeMap<GenderClass, Vec<String>>,
    replacements: HashMap<String, Replacement>,
    canonical: CanonicalWords,
    targets: NeutralTargets,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::builtin()
    }
}

/// Load a lexicon from `path`, or the built-in default when `None`.
pub fn load_lexicon(path: Option<&Path>) -> Result<Lexicon> {
    match path {
        None => Ok(Lexicon::builtin()),
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            Lexicon::from_json(&p.display().to_string(), &bytes)
        }
    }
}

impl Lexicon {
    pub fn builtin() -> Lexicon {
        Lexicon::from_json("<builtin>", DEFAULT_LEXICON.as_bytes())
            .expect("built-in lexicon is valid")
    }

    pub fn from_json(label: &str, bytes: &[u8]) -> Result<Lexicon> {
        let mut config: LexiconConfig =
            serde_json::from_slice(bytes).map_err(|e| Error::parse(label, bytes, e))?;
        let digest = hex(&Sha256::digest(bytes))[..12].to_string();
        let version = match config.base.as_deref() {
            None => config
                .version
                .clone()
                .unwrap_or_else(|| format!("file-{digest}")),
            Some("default") => {
                let mut base: LexiconConfig = serde_json::from_str(DEFAULT_LEXICON)
                    .expect("built-in lexicon parses");
                let version = config
                    .version
                    .clone()
                    .unwrap_or_else(|| format!("{}+{digest}", base.version.as_deref().unwrap_or("default")));
                base.extend(std::mem::take(&mut config));
                config = base;
                version
            }
            Some(other) => {
                return Err(Error::Lexicon(format!(
                    "unknown base lexicon {other:?} (only \"default\" is available)"
                )))
            }
        };
        Lexicon::build(version, config)
    }

    fn build(version: String, config: LexiconConfig) -> Result<Lexicon> {
        let mut classes: HashMap<String, GenderClass> = HashMap::new();
        let mut lists: BTreeMap<GenderClass, Vec<String>> = BTreeMap::new();
        for (class, words) in config.lists() {
            let mut list = Vec::with_capacity(words.len());
            for word in words {
                if tokenize(word) != [word.as_str()] {
                    return Err(Error::Lexicon(format!(
                        "{word:?} in {class} is not a single lowercase token"
                    )));
                }
                match classes.get(word) {
                    Some(prev) if *prev != class => {
                        return Err(Error::Lexicon(format!(
                            "word {word:?} appears in both {prev} and {class}"
                        )))
                    }
                    Some(_) => continue,
                    None => {
                        classes.insert(word.clone(), class);
                        list.push(word.clone());
                    }
                }
            }
            lists.insert(class, list);
        }

        for word in config.replacements.keys() {
            match classes.get(word) {
                Some(c) if c.is_gendered() => {}
                Some(c) => {
                    return Err(Error::Lexicon(format!(
                        "replacement given for {word:?}, which is {c} rather than gendered"
                    )))
                }
                None => {
                    return Err(Error::Lexicon(format!(
                        "replacement given for {word:?}, which is in no word list"
                    )))
                }
            }
        }

        let mut replacements = HashMap::new();
        for (class, words) in &lists {
            if !class.is_gendered() {
                continue;
            }
            let expected = class.neutral_counterpart();
            for word in words {
                let rep = config.replacements.get(word).ok_or_else(|| {
                    Error::Lexicon(format!("gendered word {word:?} ({class}) has no replacement"))
                })?;
                let targets: Vec<&String> = match rep {
                    Replacement::Fixed(t) => vec![t],
                    Replacement::Contextual { possessive, object } => vec![possessive, object],
                };
                for t in targets {
                    if classes.get(t) != Some(&expected) {
                        return Err(Error::Lexicon(format!(
                            "replacement {t:?} for {word:?} is not listed under {expected}"
                        )));
                    }
                }
                replacements.insert(word.clone(), rep.clone());
            }
        }

        let canonical = config.canonical.unwrap_or_default();
        let mut lexicon = Lexicon {
            version,
            classes,
            lists,
            replacements,
            canonical,
            targets: NeutralTargets {
                adult: String::new(),
                young: String::new(),
                adults: String::new(),
                youngsters: String::new(),
            },
        };
        lexicon.targets = lexicon.check_canonical()?;
        Ok(lexicon)
    }

    /// Canonical words must sit in the right class, pair up by neutral target, and
    /// the child words must be neutral, so that re-injection stays invertible.
    fn check_canonical(&self) -> Result<NeutralTargets> {
        use GenderClass::*;
        let c = &self.canonical;
        let expect = |word: &str, class: GenderClass| -> Result<()> {
            if self.classify_token(word) == class {
                Ok(())
            } else {
                Err(Error::Lexicon(format!(
                    "canonical word {word:?} must be listed under {class}"
                )))
            }
        };
        for (w, class) in [
            (&c.man, MaleSingular),
            (&c.boy, MaleSingular),
            (&c.woman, FemaleSingular),
            (&c.girl, FemaleSingular),
            (&c.child, NeutralSingularPerson),
            (&c.men, MalePlural),
            (&c.boys, MalePlural),
            (&c.women, FemalePlural),
            (&c.girls, FemalePlural),
            (&c.children, NeutralPlural),
        ] {
            expect(w, class)?;
        }
        let target = |w: &str| self.neutral_replacement(w).map(str::to_owned);
        let pair = |a: &str, b: &str| -> Result<String> {
            let (ta, tb) = (target(a)?, target(b)?);
            if ta == tb {
                Ok(ta)
            } else {
                Err(Error::Lexicon(format!(
                    "canonical words {a:?} and {b:?} neutralize differently ({ta:?} vs {tb:?})"
                )))
            }
        };
        let targets = NeutralTargets {
            adult: pair(&c.man, &c.woman)?,
            young: pair(&c.boy, &c.girl)?,
            adults: pair(&c.men, &c.women)?,
            youngsters: pair(&c.boys, &c.girls)?,
        };
        if targets.adult == targets.young || targets.adults == targets.youngsters {
            return Err(Error::Lexicon(
                "adult and young canonical words must neutralize to different words".into(),
            ));
        }
        Ok(targets)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Class of a token; `NonPerson` for anything not listed.
    pub fn classify_token(&self, token: &str) -> GenderClass {
        self.classes
            .get(token)
            .copied()
            .unwrap_or(GenderClass::NonPerson)
    }

    pub fn words(&self, class: GenderClass) -> &[String] {
        self.lists.get(&class).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Every listed word with its class, in class then list order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, GenderClass)> + '_ {
        self.lists
            .iter()
            .flat_map(|(class, words)| words.iter().map(move |w| (w.as_str(), *class)))
    }

    pub fn canonical(&self) -> &CanonicalWords {
        &self.canonical
    }

    pub fn neutral_targets(&self) -> &NeutralTargets {
        &self.targets
    }

    /// Neutral form of a gendered token, out of context (contextual pronouns take
    /// their possessive form).
    pub fn neutral_replacement(&self, token: &str) -> Result<&str> {
        match self.replacements.get(token) {
            Some(Replacement::Fixed(t)) => Ok(t),
            Some(Replacement::Contextual { possessive, .. }) => Ok(possessive),
            None => Err(Error::Contract(format!(
                "{token:?} is not a gendered word ({})",
                self.classify_token(token)
            ))),
        }
    }

    /// Neutral form of `tokens[index]`, resolving contextual pronouns by the next token.
    /// `None` when the token is not gendered.
    pub fn neutral_replacement_at<S: AsRef<str>>(&self, tokens: &[S], index: usize) -> Option<&str> {
        match self.replacements.get(tokens[index].as_ref())? {
            Replacement::Fixed(t) => Some(t),
            Replacement::Contextual { possessive, object } => {
                let possessive_position = tokens
                    .get(index + 1)
                    .map(|next| !OBJECT_FOLLOWERS.contains(&next.as_ref()))
                    .unwrap_or(false);
                Some(if possessive_position { possessive } else { object })
            }
        }
    }
}
