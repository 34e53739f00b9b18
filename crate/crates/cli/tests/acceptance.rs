//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Corpus-scale checks need COCO files, passed through the environment:
//! `CAPBIAS_COCO_CAPTIONS` and `CAPBIAS_COCO_INSTANCES` (path lists, `:`-separated)
//! and `CAPBIAS_COCO_SPLIT` (split assignment JSON with train/val/test ids).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use capbias_core::biasstats::{
    build_bias_profile, chi_squared_1dof, conflict_census, two_person_phrase_stats, upper_tail_1dof,
    Contingency2x2,
};
use capbias_core::datasetgen::{build_gender_classification_set, build_unusual_set};
use capbias_core::metrics::{bleu, Smoothing};
use capbias_core::neutralizer::neutralize_tokens;
use capbias_core::reinjector::{inject_gender, InjectOptions, InjectionRule};
use capbias_core::{load_corpus, GenderClass, Lexicon, PersonClass, PersonLabel, Split};

// ---- pinned tolerances ----
const SWEEP_CAPTIONS: usize = 500;
const SWEEP_LEN: usize = 6;
const SWEEP_WORDS_PER_CAPTION: usize = 3;
const ROUND_TRIP_PAIRS: usize = 1000;
const CHI_TABLES: usize = 200;
const CHI_REL_TOL: f64 = 1e-9;
const CHI_P_TOL: f64 = 1e-3;
const BLEU_TOL: f64 = 1e-4;
const BLEU_PAIRS: usize = 5000;
const BLEU_BUDGET: Duration = Duration::from_secs(1);
const COCO_REL_TOL: f64 = 0.15;
const UNUSUAL_FACTOR: f64 = 3.0;
const UNUSUAL_TOP_K: [usize; 4] = [25, 50, 100, 200];
const UNUSUAL_MIN_COUNT: [u64; 3] = [10, 20, 50];
const CENSUS_BUDGET: Duration = Duration::from_secs(60);
const SEED: u64 = 20_180_601;

#[derive(Default)]
struct Tally {
    pass: usize,
    fail: usize,
    skip: usize,
}

impl Tally {
    fn record(&mut self, name: &str, ok: bool, detail: &str) {
        if ok {
            self.pass += 1;
        } else {
            self.fail += 1;
        }
        println!("{}  {name}  {detail}", if ok { "PASS" } else { "FAIL" });
    }

    fn skip(&mut self, name: &str, why: &str) {
        self.skip += 1;
        println!("SKIP  {name}  {why}");
    }
}

fn info(msg: &str) {
    println!("      - {msg}");
}

// ---- neutralizer laws ----

fn neutralizer_laws(t: &mut Tally) {
    let lex = Lexicon::builtin();
    let words: Vec<(&str, GenderClass)> = lex.entries().collect();
    let fillers = ["a", "the", "on", "with", "dog", "street", "riding", "and", "of", "near"];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    // Every (word, position) slot, three slots per caption on distinct positions.
    let mut queues: Vec<Vec<&str>> = (0..SWEEP_LEN)
        .map(|_| {
            let mut q: Vec<&str> = words.iter().map(|(w, _)| *w).collect();
            q.shuffle(&mut rng);
            q
        })
        .collect();
    let position_sets = [[0, 1, 2], [3, 4, 5], [0, 2, 4], [1, 3, 5]];
    let mut captions: Vec<Vec<String>> = Vec::new();
    let mut set = 0;
    while queues.iter().any(|q| !q.is_empty()) && captions.len() < SWEEP_CAPTIONS {
        let positions = position_sets[set % position_sets.len()];
        set += 1;
        if positions.iter().all(|&p| queues[p].is_empty()) {
            continue;
        }
        let mut c: Vec<String> = (0..SWEEP_LEN)
            .map(|_| fillers.choose(&mut rng).unwrap().to_string())
            .collect();
        for p in positions {
            let w = queues[p]
                .pop()
                .unwrap_or_else(|| words.choose(&mut rng).unwrap().0);
            c[p] = w.to_string();
        }
        captions.push(c);
    }
    while captions.len() < SWEEP_CAPTIONS {
        let mut c: Vec<String> = (0..SWEEP_LEN)
            .map(|_| fillers.choose(&mut rng).unwrap().to_string())
            .collect();
        let mut pos: Vec<usize> = (0..SWEEP_LEN).collect();
        pos.shuffle(&mut rng);
        for &p in &pos[..SWEEP_WORDS_PER_CAPTION] {
            c[p] = words.choose(&mut rng).unwrap().0.to_string();
        }
        captions.push(c);
    }

    let mut covered = BTreeSet::new();
    for c in &captions {
        for (i, tok) in c.iter().enumerate() {
            if lex.classify_token(tok) != GenderClass::NonPerson {
                covered.insert((tok.clone(), i));
            }
        }
    }
    let slots = words.len() * SWEEP_LEN;

    let mut violations = Vec::new();
    for c in &captions {
        let (once, _) = neutralize_tokens(&lex, c);
        let (twice, again) = neutralize_tokens(&lex, &once);
        if twice != once || !again.is_empty() {
            violations.push(format!("not idempotent: {c:?}"));
        }
        if once.len() != c.len() {
            violations.push(format!("length changed: {c:?}"));
        }
        if once.iter().any(|w| lex.classify_token(w).is_gendered()) {
            violations.push(format!("gendered word left: {c:?} -> {once:?}"));
        }
        for (a, b) in c.iter().zip(&once) {
            if !lex.classify_token(a).is_gendered() && a != b {
                violations.push(format!("non-gender token changed: {a} -> {b}"));
            }
        }
    }
    let ok = violations.is_empty() && covered.len() == slots && captions.len() == SWEEP_CAPTIONS;
    t.record(
        "neutralizer-laws",
        ok,
        &format!(
            "{} captions, {}/{} word-position slots covered, {} violations",
            captions.len(),
            covered.len(),
            slots,
            violations.len()
        ),
    );
    for v in violations.iter().take(5) {
        info(v);
    }
}

// ---- round trip ----

fn random_caption(lex: &Lexicon, rng: &mut ChaCha8Rng) -> Vec<String> {
    let singular = lex.words(GenderClass::NeutralSingularPerson);
    let plural = lex.words(GenderClass::NeutralPlural);
    let s = |rng: &mut ChaCha8Rng| singular.choose(rng).unwrap().clone();
    let p = |rng: &mut ChaCha8Rng| plural.choose(rng).unwrap().clone();
    let verbs = ["riding", "holding", "standing", "sitting", "playing", "walking", "eating"];
    let objects = ["horse", "bench", "kite", "table", "motorcycle", "umbrella", "pizza", "slope"];
    let v = verbs.choose(rng).unwrap().to_string();
    let o = objects.choose(rng).unwrap().to_string();
    let text = match rng.gen_range(0..8) {
        0 => format!("a {} {v} a {o}", s(rng)),
        1 => format!("a {} {v} with its {o}", s(rng)),
        2 => format!("two {} {v} near a {o}", ["people", "youngsters"].choose(rng).unwrap()),
        3 => format!("a group of {} {v} at a {o}", p(rng)),
        4 => format!("{} {v} on a {o}", p(rng)),
        5 => format!("a {} and a {} {v} by a {o}", s(rng), s(rng)),
        6 => format!("a {o} next to a {}", s(rng)),
        _ => format!("a {o} on a {o}"),
    };
    capbias_core::tokenize(&text)
}

fn random_labels(rng: &mut ChaCha8Rng) -> Vec<PersonLabel> {
    let n = rng.gen_range(0..8);
    let mut labels: Vec<PersonLabel> = (0..n)
        .map(|_| {
            let class = [PersonClass::Male, PersonClass::Female, PersonClass::Person][rng.gen_range(0..3)];
            PersonLabel::new(class, rng.gen_range(1.0..10_000.0))
        })
        .collect();
    labels.sort_by(|a, b| b.area.total_cmp(&a.area));
    labels
}

fn round_trip(t: &mut Tally) {
    let lex = Lexicon::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 1);
    let opts = InjectOptions::default();
    let mut broken = Vec::new();
    let mut broken_outside_pair = 0;
    let mut word_level = 0;
    let mut identity_failures = 0;
    for _ in 0..ROUND_TRIP_PAIRS {
        let caption = random_caption(&lex, &mut rng);
        let labels = random_labels(&mut rng);
        let (gendered, report) = inject_gender(&lex, &caption, &labels, opts).expect("neutral caption");
        let (back, _) = neutralize_tokens(&lex, &gendered);
        let expands = gendered.len() != caption.len();
        if !expands {
            word_level += 1;
        }
        if back != caption {
            if !(expands && report.rule_applied == InjectionRule::Pair) {
                broken_outside_pair += 1;
            }
            broken.push((caption.join(" "), gendered.join(" "), back.join(" ")));
        }
        let persons: Vec<PersonLabel> = labels
            .iter()
            .map(|l| PersonLabel::new(PersonClass::Person, l.area))
            .collect();
        let (same, _) = inject_gender(&lex, &caption, &persons, opts).expect("neutral caption");
        if same != caption {
            identity_failures += 1;
        }
    }
    let ok = broken.is_empty() && identity_failures == 0;
    t.record(
        "round-trip",
        ok,
        &format!(
            "{}/{} pairs satisfy neutralize(inject(c)) = c; all-person identity {}/{}",
            ROUND_TRIP_PAIRS - broken.len(),
            ROUND_TRIP_PAIRS,
            ROUND_TRIP_PAIRS - identity_failures,
            ROUND_TRIP_PAIRS
        ),
    );
    if !broken.is_empty() {
        info(&format!(
            "{} of {} violations come from the two-person expansion (\"two people\" -> \"a man and a woman\"), \
             which the word-for-word neutralizer maps to \"a person and a person\"; {} violations elsewhere",
            broken.len() - broken_outside_pair,
            broken.len(),
            broken_outside_pair
        ));
        info(&format!(
            "word-for-word substitutions ({word_level} pairs) round-trip exactly: {}",
            broken_outside_pair == 0
        ));
        for (c, g, b) in broken.iter().take(3) {
            info(&format!("{c:?} -> {g:?} -> {b:?}"));
        }
    }
}

// ---- chi-squared ----

fn pearson_brute_force(cells: [[u64; 2]; 2]) -> f64 {
    let n: f64 = cells.iter().flatten().map(|&v| v as f64).sum();
    let mut x = 0.0;
    for row in &cells {
        for (j, &obs) in row.iter().enumerate() {
            let r: f64 = row.iter().map(|&v| v as f64).sum();
            let c: f64 = cells.iter().map(|row| row[j] as f64).sum();
            let e = r * c / n;
            x += (obs as f64 - e).powi(2) / e;
        }
    }
    x
}

fn chi_squared(t: &mut Tally) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 2);
    let mut worst: f64 = 0.0;
    let mut tables = 0;
    while tables < CHI_TABLES {
        let hi = [10u64, 100, 10_000, 1_000_000][rng.gen_range(0..4)];
        let cells = [[rng.gen_range(0..hi), rng.gen_range(0..hi)], [rng.gen_range(0..hi), rng.gen_range(0..hi)]];
        let Ok(r) = chi_squared_1dof(&Contingency2x2::new(cells)) else {
            continue;
        };
        tables += 1;
        let oracle = pearson_brute_force(cells);
        let rel = if oracle == 0.0 { r.statistic.abs() } else { (r.statistic - oracle).abs() / oracle };
        worst = worst.max(rel);
    }
    t.record(
        "chi-squared-statistic",
        worst <= CHI_REL_TOL,
        &format!("{tables} random tables, max relative error {worst:.2e} (tolerance {CHI_REL_TOL:.0e})"),
    );

    // Tabulated chi-square(1) upper-tail probabilities.
    let p = upper_tail_1dof;
    let checks = [(3.84, 0.050), (6.63, 0.010)];
    let worst_p = checks.iter().map(|&(x, want)| (p(x) - want).abs()).fold(0.0, f64::max);
    t.record(
        "chi-squared-p-value",
        worst_p <= CHI_P_TOL,
        &format!(
            "p(3.84) = {:.4}, p(6.63) = {:.4}, max deviation {worst_p:.1e} (tolerance {CHI_P_TOL:.0e})",
            p(3.84),
            p(6.63)
        ),
    );
}

// ---- BLEU ----

fn toks(s: &str) -> Vec<String> {
    capbias_core::tokenize(s)
}

fn bleu_oracle(t: &mut Tally) {
    let one = |c: &str, refs: &[&str]| {
        bleu(&[toks(c)], &[refs.iter().map(|r| toks(r)).collect::<Vec<_>>()], Smoothing::None).unwrap()
    };
    let bp = (-0.2f64).exp();
    // (label, computed, expected)
    let cases = [
        ("the cat / BLEU-1", one("the cat", &["the cat on the mat"]).bleu[0], (1.0f64 - 5.0 / 2.0).exp()),
        ("5 of 6 tokens / BLEU-1", one("a cat sat on mat", &["a cat sat on the mat"]).bleu[0], bp),
        ("5 of 6 tokens / BLEU-2", one("a cat sat on mat", &["a cat sat on the mat"]).bleu[1], bp * 0.75f64.sqrt()),
        (
            "5 of 6 tokens / BLEU-4",
            one("a cat sat on mat", &["a cat sat on the mat"]).bleu[3],
            bp * (0.75f64 * (2.0 / 3.0) * 0.5).powf(0.25),
        ),
        ("clipping, two refs / BLEU-1", one("the the the the", &["the cat", "the the mat"]).bleu[0], 0.5),
        (
            "corpus pooling / BLEU-2",
            bleu(
                &[toks("the cat"), toks("a dog runs fast")],
                &[vec![toks("the cat")], vec![toks("a dog walks fast")]],
                Smoothing::None,
            )
            .unwrap()
            .bleu[1],
            (5.0f64 / 6.0 * 0.5).sqrt(),
        ),
    ];
    let worst = cases.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    t.record(
        "bleu-micro-examples",
        worst <= BLEU_TOL,
        &format!(
            "{} hand-computed cases, the cat BLEU-1 = {:.4}, max deviation {worst:.1e} (tolerance {BLEU_TOL:.0e})",
            cases.len(),
            cases[0].1
        ),
    );
    for (name, got, want) in &cases {
        if (got - want).abs() > BLEU_TOL {
            info(&format!("{name}: got {got}, want {want}"));
        }
    }

    let perfect = one("a man riding a wave on top of a surfboard", &["a man riding a wave on top of a surfboard"]);
    t.record(
        "bleu-perfect-match",
        perfect.bleu == [1.0; 4] && perfect.brevity_penalty == 1.0,
        &format!("BLEU-1..4 = {:?}, BP = {}", perfect.bleu, perfect.brevity_penalty),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 3);
    let vocab: Vec<String> = (0..400).map(|i| format!("w{i}")).collect();
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let n = rng.gen_range(8..14);
        (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect()
    };
    let cands: Vec<Vec<String>> = (0..BLEU_PAIRS).map(|_| sentence(&mut rng)).collect();
    let refs: Vec<Vec<Vec<String>>> = (0..BLEU_PAIRS)
        .map(|_| (0..5).map(|_| sentence(&mut rng)).collect())
        .collect();
    let start = Instant::now();
    let r = bleu(&cands, &refs, Smoothing::None).unwrap();
    let took = start.elapsed();
    t.record(
        "bleu-runtime",
        took < BLEU_BUDGET,
        &format!(
            "{BLEU_PAIRS} candidates x 5 references in {:.0} ms (budget {} ms), BLEU-1 {:.3}",
            took.as_secs_f64() * 1e3,
            BLEU_BUDGET.as_millis(),
            r.bleu[0]
        ),
    );
}

// ---- corpus-scale checks ----

struct Coco {
    captions: Vec<PathBuf>,
    instances: Vec<PathBuf>,
    split: PathBuf,
}

fn coco_from_env() -> Option<Coco> {
    let list = |k: &str| std::env::var_os(k).map(|v| std::env::split_paths(&v).collect::<Vec<_>>());
    Some(Coco {
        captions: list("CAPBIAS_COCO_CAPTIONS")?,
        instances: list("CAPBIAS_COCO_INSTANCES").unwrap_or_default(),
        split: PathBuf::from(std::env::var_os("CAPBIAS_COCO_SPLIT")?),
    })
}

fn within(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want
}

/// Lexicon words by the number of captions in `captions` they occur in.
fn word_drivers<'a>(lex: &Lexicon, captions: impl Iterator<Item = &'a [String]>, gendered_only: bool) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in captions {
        let seen: BTreeSet<&str> = c
            .iter()
            .map(String::as_str)
            .filter(|w| {
                let class = lex.classify_token(w);
                class.is_person_word() && (!gendered_only || class.is_gendered())
            })
            .collect();
        for w in seen {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    let mut v: Vec<(&str, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut s = String::new();
    for (w, n) in v.iter().take(12) {
        let _ = write!(s, "{w}:{n} ");
    }
    s.trim_end().to_owned()
}

fn coco_checks(t: &mut Tally) {
    let names = ["coco-census", "coco-phrases", "coco-classification-set", "coco-unusual-set"];
    let Some(coco) = coco_from_env() else {
        for n in names {
            t.skip(n, "set CAPBIAS_COCO_CAPTIONS, CAPBIAS_COCO_INSTANCES and CAPBIAS_COCO_SPLIT to run");
        }
        return;
    };
    let lex = Lexicon::builtin();
    let corpus = match load_corpus(&coco.captions, &coco.instances, coco.split.clone()) {
        Ok(c) => c,
        Err(e) => {
            for n in names {
                t.record(n, false, &format!("could not load COCO: {e}"));
            }
            return;
        }
    };

    let start = Instant::now();
    let census = conflict_census(&lex, &corpus, Split::Train);
    let took = start.elapsed();
    let (a, b) = (census.get(1, 4, 0), census.get(4, 1, 0));
    t.record(
        "coco-census",
        within(a as f64, 77.0, COCO_REL_TOL) && within(b as f64, 47.0, COCO_REL_TOL) && took < CENSUS_BUDGET,
        &format!(
            "cell (1,4,0) = {a} (target 77), cell (4,1,0) = {b} (target 47), tolerance {:.0}%, {:.1} s",
            COCO_REL_TOL * 100.0,
            took.as_secs_f64()
        ),
    );

    let train: Vec<&[String]> = corpus
        .images_in(Split::Train)
        .flat_map(|img| corpus.captions_of(img.image_id).unwrap_or_default())
        .map(|c| c.tokens.as_slice())
        .collect();
    let ph = two_person_phrase_stats(&lex, &train);
    let got = [ph.both_genders, ph.male_first_phrase, ph.female_first_phrase];
    let want = [6282.0, 3153.0, 385.0];
    t.record(
        "coco-phrases",
        got.iter().zip(want).all(|(&g, w)| within(g as f64, w, COCO_REL_TOL)),
        &format!("(both, male-first, female-first) = {got:?}, target (6282, 3153, 385)"),
    );
    let two_gender = train.iter().copied().filter(|c| {
        let classes: BTreeSet<GenderClass> = c.iter().map(|w| lex.classify_token(w)).collect();
        classes.contains(&GenderClass::MaleSingular) && classes.contains(&GenderClass::FemaleSingular)
    });
    info(&format!("drivers: {}", word_drivers(&lex, two_gender, true)));

    match build_gender_classification_set(&lex, &corpus, Split::Train) {
        Ok((_, s)) => {
            let got = [s.counts.male, s.counts.female, s.counts.person];
            let want = [14620.0, 7243.0, 2819.0];
            t.record(
                "coco-classification-set",
                got.iter().zip(want).all(|(&g, w)| within(g as f64, w, COCO_REL_TOL)),
                &format!(
                    "(male, female, person) = {got:?}, target (14620, 7243, 2819), {} images without a box",
                    s.excluded_without_box
                ),
            );
            info(&format!("drivers: {}", word_drivers(&lex, train.iter().copied(), false)));
        }
        Err(e) => t.record("coco-classification-set", false, &format!("{e}")),
    }

    let profile = match build_bias_profile(&lex, &corpus, Split::Train) {
        Ok(p) => p,
        Err(e) => return t.record("coco-unusual-set", false, &format!("{e}")),
    };
    let mut hits = Vec::new();
    let mut contaminated = 0;
    for k in UNUSUAL_TOP_K {
        for m in UNUSUAL_MIN_COUNT {
            let Ok((inst, s)) = build_unusual_set(&lex, &corpus, &profile, Split::Test, k, m) else {
                continue;
            };
            contaminated += inst
                .iter()
                .filter(|i| corpus.split_of(i.image_id) == Some(Split::Train))
                .count();
            let same_order = |g: usize, w: f64| g as f64 >= w / UNUSUAL_FACTOR && g as f64 <= w * UNUSUAL_FACTOR;
            info(&format!("top_k {k}, min_count {m}: {} male, {} female", s.male_instances, s.female_instances));
            if same_order(s.male_instances, 69.0) && same_order(s.female_instances, 113.0) {
                hits.push((k, m));
            }
        }
    }
    t.record(
        "coco-unusual-set",
        !hits.is_empty() && contaminated == 0,
        &format!(
            "{} of {} grid points within a factor {UNUSUAL_FACTOR} of (69, 113); {contaminated} training images",
            hits.len(),
            UNUSUAL_TOP_K.len() * UNUSUAL_MIN_COUNT.len()
        ),
    );
}

// ---- determinism ----

/// A few hundred images of templated captions, split 60/15/25.
fn synthetic_corpus(dir: &Path) -> [PathBuf; 5] {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 4);
    let subjects = [
        "man", "woman", "boy", "girl", "person", "guy", "lady", "skier", "child", "player", "gentleman",
    ];
    let plurals = ["men", "women", "people", "boys", "girls", "kids"];
    let verbs = ["riding", "holding", "standing next to", "sitting on", "carrying", "looking at"];
    let objects = [
        "a horse", "a surfboard", "an umbrella", "a purse", "a motorcycle", "a kite", "a laptop", "a bench",
        "a skateboard", "a cake",
    ];
    let mut images = Vec::new();
    let mut anns = Vec::new();
    let mut insts = Vec::new();
    let mut split: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    let mut preds = String::new();
    let mut labels = String::new();
    let mut cid = 1u64;
    for id in 1..=400u64 {
        images.push(serde_json::json!({"id": id, "file_name": format!("{id:012}.jpg")}));
        let subject = subjects.choose(&mut rng).unwrap();
        let object = objects.choose(&mut rng).unwrap();
        for _ in 0..5 {
            let s = if rng.gen_bool(0.8) { subject } else { subjects.choose(&mut rng).unwrap() };
            let text = match rng.gen_range(0..6) {
                0 => format!("two {} {} {object}", plurals.choose(&mut rng).unwrap(), verbs.choose(&mut rng).unwrap()),
                1 => format!("a {s} and a {} near {object}", subjects.choose(&mut rng).unwrap()),
                2 => format!("A {s} with his {}", &object[2..]),
                _ => format!("A {s} {} {object}.", verbs.choose(&mut rng).unwrap()),
            };
            anns.push(serde_json::json!({"id": cid, "image_id": id, "caption": text}));
            cid += 1;
        }
        for k in 0..rng.gen_range(0..4u64) {
            let (w, h) = (rng.gen_range(1..200) as f64, rng.gen_range(1..200) as f64);
            insts.push(serde_json::json!({
                "id": id * 10 + k, "image_id": id, "category_id": 1, "bbox": [k as f64, 0.0, w, h],
                "area": w * h * 0.7, "segmentation": [[0, 0, w, 0, w, h]], "iscrowd": 0
            }));
        }
        let part = match id % 20 {
            0..=11 => "train",
            12..=14 => "val",
            _ => "test",
        };
        split.entry(part).or_default().push(id);
        if part == "test" {
            let neutral = ["a person riding a horse", "two people on a bench", "a group of people at a table", "a youngster with a kite"];
            let _ = writeln!(preds, "{}", serde_json::json!({"image_id": id, "caption": neutral.choose(&mut rng).unwrap()}));
            let n = rng.gen_range(0..4);
            let inst: Vec<serde_json::Value> = (0..n)
                .map(|k| {
                    let label = ["male", "female", "person"].choose(&mut rng).unwrap();
                    serde_json::json!({"bbox": [0, 0, 10, 10], "area": 100 - k, "label": label})
                })
                .collect();
            let _ = writeln!(labels, "{}", serde_json::json!({"image_id": id, "instances": inst}));
        }
    }
    let files = [
        dir.join("captions.json"),
        dir.join("instances.json"),
        dir.join("split.json"),
        dir.join("preds.jsonl"),
        dir.join("labels.jsonl"),
    ];
    std::fs::write(&files[0], serde_json::json!({"images": images, "annotations": anns}).to_string()).unwrap();
    std::fs::write(
        &files[1],
        serde_json::json!({"annotations": insts, "categories": [{"id": 1, "name": "person"}]}).to_string(),
    )
    .unwrap();
    std::fs::write(&files[2], serde_json::to_string(&split).unwrap()).unwrap();
    std::fs::write(&files[3], preds).unwrap();
    std::fs::write(&files[4], labels).unwrap();
    files
}

/// Run one invocation in a fresh directory; returns stdout plus every file written.
fn run_in_fresh_dir(args: &[String], threads: &str) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_capbias"))
        .arg("--threads")
        .arg(threads)
        .args(args)
        .current_dir(dir.path())
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("CAPBIAS_LEXICON")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let mut files = BTreeMap::from([("<stdout>".to_owned(), out.stdout)]);
    for entry in std::fs::read_dir(dir.path()).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        files.insert(
            entry.file_name().to_string_lossy().into_owned(),
            std::fs::read(entry.path()).map_err(|e| e.to_string())?,
        );
    }
    Ok(files)
}

fn determinism(t: &mut Tally) {
    let data = tempfile::tempdir().unwrap();
    let [caps, inst, split, preds, labels] = synthetic_corpus(data.path());
    let p = |x: &PathBuf| x.to_str().unwrap().to_owned();
    let corpus: Vec<String> = ["--captions", &p(&caps), "--instances", &p(&inst), "--split", &p(&split)]
        .map(String::from)
        .to_vec();
    let with = |head: &[&str], tail: &[&str]| -> Vec<String> {
        head.iter()
            .map(|s| s.to_string())
            .chain(corpus.iter().cloned())
            .chain(tail.iter().map(|s| s.to_string()))
            .collect()
    };
    let runs: Vec<Vec<String>> = vec![
        with(&["ingest-check"], &["--out", "check.json"]),
        with(&["neutralize"], &["--out", "gn.json", "--edits", "edits.tsv"]),
        with(&["stats", "bias"], &["--out", "bias.tsv"]),
        with(&["stats", "bias"], &["--format", "json", "--out", "bias.json"]),
        with(&["stats", "census"], &["--out", "census.tsv"]),
        with(&["stats", "usage"], &["--out", "usage.tsv"]),
        with(&["stats", "usage"], &["--number", "plural", "--format", "json", "--out", "usage.json"]),
        with(&["stats", "phrases"], &["--pred", &p(&preds), "--out", "phrases.tsv"]),
        with(&["build", "classification-set"], &["--out", "crops.jsonl"]),
        with(&["build", "unusual-set"], &["--top-k", "20", "--min-count", "2", "--out", "unusual.jsonl"]),
        ["inject", "--pred", &p(&preds), "--labels", &p(&labels), "--report", "rules.jsonl", "--out", "gendered.jsonl"]
            .map(String::from)
            .to_vec(),
        ["bleu", "--pred", &p(&preds), "--refs", &p(&caps), "--smoothing", "epsilon", "--out", "bleu.json"]
            .map(String::from)
            .to_vec(),
    ];
    let mut problems = Vec::new();
    let mut subcommands = BTreeSet::new();
    let mut artifacts = 0;
    for args in &runs {
        subcommands.insert(args.iter().take_while(|a| !a.starts_with("--")).cloned().collect::<Vec<_>>().join(" "));
        let mut outputs = Vec::new();
        for threads in ["1", "4", "1", "4"] {
            match run_in_fresh_dir(args, threads) {
                Ok(o) => outputs.push(o),
                Err(e) => problems.push(e),
            }
        }
        if let Some(first) = outputs.first() {
            artifacts += first.len() - 1;
            if outputs.iter().any(|o| o != first) {
                problems.push(format!("{args:?}: outputs differ across runs"));
            }
        }
    }
    t.record(
        "determinism",
        problems.is_empty(),
        &format!(
            "{} subcommands, {} invocations x 4 runs (--threads 1, 4, 1, 4), {artifacts} artifacts byte-compared",
            subcommands.len(),
            runs.len()
        ),
    );
    for pr in problems.iter().take(5) {
        info(pr);
    }
}

fn main() {
    // `cargo test -- --list` and filters from the default harness are not supported;
    // everything always runs.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut t = Tally::default();
    neutralizer_laws(&mut t);
    round_trip(&mut t);
    chi_squared(&mut t);
    bleu_oracle(&mut t);
    coco_checks(&mut t);
    determinism(&mut t);
    println!("\nacceptance: {} passed, {} failed, {} skipped", t.pass, t.fail, t.skip);
    if t.fail > 0 {
        std::process::exit(1);
    }
}
