//! Gender-neutral caption rewriting with a per-token audit trail.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{CaptionId, CaptionRecord, CocoCaption, CocoCaptions, CocoImage, Corpus, Split};
use crate::lexicon::{GenderClass, Lexicon};
use crate::tokenize::detokenize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Edit {
    pub index: usize,
    pub original: String,
    pub replacement: String,
    pub class: GenderClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RewriteRecord {
    pub caption_id: CaptionId,
    pub edits: Vec<Edit>,
}

impl RewriteRecord {
    /// Apply the recorded edits to the original tokens.
    pub fn replay<S: AsRef<str>>(&self, original: &[S]) -> Vec<String> {
        let mut out: Vec<String> = original.iter().map(|t| t.as_ref().to_owned()).collect();
        for e in &self.edits {
            out[e.index] = e.replacement.clone();
        }
        out
    }
}

/// Replace every gendered token by its neutral counterpart. Token count is preserved.
pub fn neutralize_tokens<S: AsRef<str>>(lexicon: &Lexicon, tokens: &[S]) -> (Vec<String>, Vec<Edit>) {
    let mut out = Vec::with_capacity(tokens.len());
    let mut edits = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        let tok = tok.as_ref();
        match lexicon.neutral_replacement_at(tokens, i) {
            Some(rep) => {
                edits.push(Edit {
                    index: i,
                    original: tok.to_owned(),
                    replacement: rep.to_owned(),
                    class: lexicon.classify_token(tok),
                });
                out.push(rep.to_owned());
            }
            None => out.push(tok.to_owned()),
        }
    }
    (out, edits)
}

pub fn neutralize_caption(lexicon: &Lexicon, caption: &CaptionRecord) -> (Vec<String>, RewriteRecord) {
    let (tokens, edits) = neutralize_tokens(lexicon, &caption.tokens);
    (
        tokens,
        RewriteRecord {
            caption_id: caption.caption_id,
            edits,
        },
    )
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EditStats {
    pub captions: usize,
    pub captions_edited: usize,
    pub total_edits: usize,
    pub edits_by_class: BTreeMap<GenderClass, usize>,
}

#[derive(Debug, Clone)]
pub struct NeutralizedCorpus {
    /// Same schema and ids as the input; unedited captions keep their original text.
    pub captions: CocoCaptions,
    /// Records for captions with at least one edit, in caption id order.
    pub records: Vec<RewriteRecord>,
    pub stats: EditStats,
}

/// Neutralize every caption of the images in `split` (all images when `None`).
pub fn neutralize_corpus(lexicon: &Lexicon, corpus: &Corpus, split: Option<Split>) -> NeutralizedCorpus {
    let keep = |s: Split| split.is_none_or(|want| want == s);
    let images: Vec<CocoImage> = corpus
        .images()
        .iter()
        .filter(|r| keep(r.split))
        .map(|r| CocoImage {
            id: r.image_id.0,
            file_name: r.file_name.clone(),
        })
        .collect();

    let selected: Vec<&CaptionRecord> = corpus
        .captions()
        .iter()
        .filter(|c| corpus.split_of(c.image_id).is_some_and(keep))
        .collect();

    let rewritten: Vec<(CocoCaption, RewriteRecord)> = selected
        .par_iter()
        .map(|c| {
            let (tokens, record) = neutralize_caption(lexicon, c);
            let text = if record.edits.is_empty() {
                c.text.clone()
            } else {
                detokenize(&tokens)
            };
            (
                CocoCaption {
                    id: c.caption_id.0,
                    image_id: c.image_id.0,
                    caption: text,
                },
                record,
            )
        })
        .collect();

    let mut stats = EditStats {
        captions: rewritten.len(),
        ..EditStats::default()
    };
    let mut annotations = Vec::with_capacity(rewritten.len());
    let mut records = Vec::new();
    for (ann, record) in rewritten {
        annotations.push(ann);
        if record.edits.is_empty() {
            continue;
        }
        stats.captions_edited += 1;
        stats.total_edits += record.edits.len();
        for e in &record.edits {
            *stats.edits_by_class.entry(e.class).or_insert(0) += 1;
        }
        records.push(record);
    }

    NeutralizedCorpus {
        captions: CocoCaptions {
            images,
            annotations,
        },
        records,
        stats,
    }
}

/// TSV edit report: `caption_id  index  original  replacement  class`.
pub fn write_edit_tsv<W: Write>(records: &[RewriteRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "caption_id\tindex\toriginal\treplacement\tclass")?;
    for r in records {
        for e in &r.edits {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.caption_id, e.index, e.original, e.replacement, e.class
            )?;
        }
    }
    Ok(())
}
