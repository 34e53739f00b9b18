//! Quantitative gender-bias measurements over a caption corpus.
//!
//! Every statistic here is a commutative fold over captions or images, so the
//! parallel versions produce the same result regardless of shard order.

mod census;
mod chisq;
mod phrases;
mod profile;

pub use census::{
    conflict_census, image_signatures, person_signature, single_person_gender_signature,
    usage_histogram, ConflictCensus, ImageSignatures, Signature, SignatureCounts, UsageHistogram,
};
pub use chisq::{chi_squared_1dof, upper_tail_1dof, ChiSquared, Contingency2x2};
pub use phrases::{amplification_ratio, caption_phrase_stats, two_person_phrase_stats, PhraseStats};
pub use profile::{build_bias_profile, is_stopword, BiasProfile, WordCounts, STOPLIST};
