//! Gender-bias measurement and caption rewriting for COCO-style caption corpora.

pub mod biasstats;
pub mod corpus;
pub mod datasetgen;
mod error;
pub mod formats;
pub mod lexicon;
pub mod metrics;
pub mod neutralizer;
pub mod reinjector;
pub mod report;
pub mod tokenize;

pub use corpus::{load_corpus, BBox, CaptionId, CaptionRecord, Corpus, ImageId, InstanceId, Split};
pub use error::{Error, Result};
pub use formats::Prediction;
pub use lexicon::{load_lexicon, Gender, GenderClass, Lexicon, Number};
pub use reinjector::{PersonClass, PersonLabel};
pub use tokenize::{detokenize, tokenize};
