//! TSV and JSON report writers.
//!
//! TSV reports open with `# key=value` lines; JSON reports wrap the payload as
//! `{"header": {...}, "report": ...}`.

use std::io::{self, Write};

use serde::Serialize;

use crate::biasstats::{BiasProfile, ChiSquared, ConflictCensus, PhraseStats, UsageHistogram};
use crate::corpus::{Corpus, Split};
use crate::lexicon::Lexicon;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportHeader {
    pub corpus_sha256: String,
    pub split_source: String,
    pub split: Option<Split>,
    pub lexicon_version: String,
    pub tool_version: String,
}

impl ReportHeader {
    pub fn new(corpus: &Corpus, split: Option<Split>, lexicon: &Lexicon) -> Self {
        let p = corpus.provenance();
        ReportHeader {
            corpus_sha256: p.corpus_sha256.clone(),
            split_source: p.split_source.clone(),
            split,
            lexicon_version: lexicon.version().to_owned(),
            tool_version: TOOL_VERSION.to_owned(),
        }
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# corpus_sha256={}", self.corpus_sha256)?;
        writeln!(w, "# split_source={}", self.split_source)?;
        if let Some(s) = self.split {
            writeln!(w, "# split={s}")?;
        }
        writeln!(w, "# lexicon_version={}", self.lexicon_version)?;
        writeln!(w, "# tool_version={}", self.tool_version)
    }
}

#[derive(Serialize)]
struct Wrapped<'a, T> {
    header: &'a ReportHeader,
    report: &'a T,
}

pub fn write_json_report<T: Serialize, W: Write>(header: &ReportHeader, report: &T, mut w: W) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut w, &Wrapped { header, report })?;
    w.write_all(b"\n")
}

/// One row per (male, female, neutral) cell, standard five-caption cells first.
pub fn write_census_tsv<W: Write>(header: &ReportHeader, census: &ConflictCensus, mut w: W) -> io::Result<()> {
    header.write_tsv(&mut w)?;
    writeln!(w, "# qualifying_images={}", census.qualifying_images)?;
    writeln!(w, "# conflicting_images={}", census.conflicting_images())?;
    writeln!(w, "male\tfemale\tneutral\timages\tcaptions")?;
    for (cells, kind) in [(&census.cells, "standard"), (&census.irregular_cells, "irregular")] {
        for (&(m, f, n), &images) in cells {
            writeln!(w, "{m}\t{f}\t{n}\t{images}\t{kind}")?;
        }
    }
    Ok(())
}

pub fn write_usage_tsv<W: Write>(
    header: &ReportHeader,
    hist: &UsageHistogram,
    test: Option<&ChiSquared>,
    mut w: W,
) -> io::Result<()> {
    header.write_tsv(&mut w)?;
    writeln!(w, "# number={}", serde_json::to_value(hist.number).unwrap_or_default().as_str().unwrap_or(""))?;
    writeln!(w, "# excluded_conflict={}", hist.excluded_conflict)?;
    writeln!(w, "# excluded_irregular={}", hist.excluded_irregular)?;
    let t = hist.contingency();
    writeln!(
        w,
        "# contingency=[[{}, {}], [{}, {}]] rows=male,female cols={},{}",
        t.cells[0][0], t.cells[0][1], t.cells[1][0], t.cells[1][1], t.col_labels[0], t.col_labels[1]
    )?;
    match test {
        Some(x) => writeln!(w, "# chi2={} p_value={} dof={}", x.statistic, x.p_value, x.dof)?,
        None => writeln!(w, "# chi2=undefined")?,
    }
    writeln!(w, "gender\tx1\tx2\tx3\tx4\tx5")?;
    for (name, row) in [("male", &hist.male), ("female", &hist.female)] {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        writeln!(w, "{name}\t{}", cells.join("\t"))?;
    }
    Ok(())
}

/// Every counted word, lexicographic.
pub fn write_bias_tsv<W: Write>(header: &ReportHeader, profile: &BiasProfile, mut w: W) -> io::Result<()> {
    header.write_tsv(&mut w)?;
    writeln!(w, "# male_captions={}", profile.male_captions)?;
    writeln!(w, "# female_captions={}", profile.female_captions)?;
    writeln!(w, "word\tmale\tfemale\tbias_male")?;
    for (word, c) in profile.iter() {
        let b = profile.bias_male(word).unwrap_or(f64::NAN);
        writeln!(w, "{word}\t{}\t{}\t{b:.6}", c.male, c.female)?;
    }
    Ok(())
}

pub fn write_phrase_tsv<W: Write>(
    header: &ReportHeader,
    train: &PhraseStats,
    predictions: Option<(&PhraseStats, Option<f64>)>,
    mut w: W,
) -> io::Result<()> {
    header.write_tsv(&mut w)?;
    writeln!(w, "source\tcaptions\tboth_genders\tmale_first\tfemale_first\tmale_first_share")?;
    let row = |w: &mut W, name: &str, s: &PhraseStats| {
        let share = s.male_first_share().map_or("NA".to_owned(), |v| format!("{v:.6}"));
        writeln!(
            w,
            "{name}\t{}\t{}\t{}\t{}\t{share}",
            s.captions, s.both_genders, s.male_first_phrase, s.female_first_phrase
        )
    };
    row(&mut w, "corpus", train)?;
    if let Some((pred, ratio)) = predictions {
        row(&mut w, "predictions", pred)?;
        match ratio {
            Some(r) => writeln!(w, "# amplification={r:.6}")?,
            None => writeln!(w, "# amplification=undefined")?,
        }
    }
    Ok(())
}
