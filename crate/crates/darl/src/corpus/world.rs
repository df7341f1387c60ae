//! Builtin world: product-review-flavored domains over shared templates.
//!
//! Eight domains are available; a world takes the first `n_source_domains`
//! as sources and the next one as the adaptation target. Per-domain keyword
//! lists are pairwise disjoint and disjoint from every shared lexicon and
//! template literal, which the builder re-verifies on every construction.

use std::collections::{BTreeMap, HashSet};

use crate::corpus::grammar::{DomainGrammar, Piece, Template};
use crate::corpus::vocab::Vocab;
use crate::corpus::{kshot_sample, DomainCorpus, Sequence};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Domain order is part of the deterministic world contract.
const DOMAIN_POOL: [(&str, [&str; 8]); 8] = [
    ("books", ["book", "novel", "author", "chapter", "paperback", "reader", "library", "bookshelf"]),
    ("films", ["film", "movie", "actor", "scene", "cinema", "director", "trailer", "sequel"]),
    ("music", ["song", "album", "melody", "singer", "concert", "rhythm", "guitar", "chorus"]),
    ("games", ["game", "puzzle", "player", "level", "console", "quest", "arcade", "board"]),
    ("tools", ["hammer", "wrench", "drill", "blade", "toolbox", "screwdriver", "sander", "pliers"]),
    ("food", ["bread", "cheese", "sauce", "recipe", "flavor", "snack", "spice", "bakery"]),
    ("pets", ["puppy", "kitten", "leash", "collar", "kennel", "hamster", "aquarium", "parrot"]),
    ("sports", ["racket", "helmet", "jersey", "sneaker", "scoreboard", "stadium", "referee", "trophy"]),
];

const ADJ: [&str; 12] = [
    "good", "great", "fine", "nice", "cheap", "solid", "fresh", "clean", "bright", "simple",
    "sturdy", "lovely",
];
const NOUN: [&str; 10] =
    ["gift", "deal", "price", "box", "brand", "store", "item", "choice", "design", "bargain"];
const VERB: [&str; 8] = ["love", "like", "enjoy", "want", "need", "recommend", "prefer", "adore"];
const ADV: [&str; 6] = ["really", "very", "quite", "truly", "mostly", "fairly"];

/// Hand-written patterns covering every sentence length from 4 to 12, each
/// with exactly one per-domain slot so a single word substitution moves a
/// sentence between domains.
const BASE_TEMPLATES: [&str; 16] = [
    "the <kw> is <adj>",
    "i <verb> this <kw>",
    "i <verb> this <adj> <kw>",
    "the <kw> was <adv> <adj>",
    "my <kw> was a <adj> <noun>",
    "this <kw> is a <adj> <noun>",
    "this <kw> is <adv> <adj> and <adj>",
    "the <adj> <kw> was a <adj> <noun>",
    "we <verb> the <kw> for its <adj> <noun>",
    "my <adj> <kw> is a <adv> <adj> <noun>",
    "the <adj> <kw> in the <noun> was <adv> <adj>",
    "i <verb> the <kw> and it is <adv> <adj>",
    "the <kw> from this <noun> is a <adv> <adj> <noun>",
    "we <verb> a <adj> <kw> with a <adj> <noun> today",
    "the <adj> <kw> with the <adj> <noun> was <adv> <adj> today",
    "i <verb> the <adj> <kw> and we <verb> its <adj> <noun> today",
];

/// Tail phrases used to extend base patterns past length 12 (up to 30).
const CHUNK3: &str = "and <adv> <adj>";
const CHUNK4: &str = "with a <adj> <noun>";
const EXTENSION_BASES: [&str; 3] = [
    "we <verb> the <kw> for its <adj> <noun>",
    "the <adj> <kw> in the <noun> was <adv> <adj>",
    "this <kw> is <adv> <adj> and <adj>",
];

#[derive(Clone, Debug)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_source_domains: usize,
    pub k: usize,
    pub sentences_per_domain: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 0,
            n_source_domains: 5,
            k: 5,
            sentences_per_domain: 2000,
            min_len: 4,
            max_len: 12,
        }
    }
}

/// Desk-default world: `n_source_domains` sources, one target, 2000
/// sentences per domain, lengths in [4, 12], k support samples.
pub fn build_default_world(seed: u64, n_source_domains: usize, k: usize) -> Result<DomainCorpus> {
    build_world(&WorldConfig { seed, n_source_domains, k, ..WorldConfig::default() })
}

pub fn build_world(cfg: &WorldConfig) -> Result<DomainCorpus> {
    if cfg.n_source_domains == 0 || cfg.n_source_domains >= DOMAIN_POOL.len() {
        return Err(Error::InvalidArgument(format!(
            "n_source_domains must be in [1, {}], got {}",
            DOMAIN_POOL.len() - 1,
            cfg.n_source_domains
        )));
    }
    if cfg.min_len < 4 || cfg.max_len > 30 || cfg.min_len > cfg.max_len {
        return Err(Error::InvalidArgument(format!(
            "sentence length bounds [{}, {}] outside the supported [4, 30]",
            cfg.min_len, cfg.max_len
        )));
    }
    if cfg.sentences_per_domain == 0 {
        return Err(Error::InvalidArgument("sentences_per_domain must be positive".into()));
    }
    if cfg.k > cfg.sentences_per_domain {
        return Err(Error::InvalidArgument(format!(
            "k = {} exceeds the target pool size {}",
            cfg.k, cfg.sentences_per_domain
        )));
    }

    let templates = templates_for_range(cfg.min_len, cfg.max_len)?;
    let shared = shared_lexicons();
    let n_domains = cfg.n_source_domains + 1;

    let mut grammars = BTreeMap::new();
    for (name, words) in DOMAIN_POOL.iter().take(n_domains) {
        let mut slots = BTreeMap::new();
        slots.insert("kw".to_string(), words.iter().map(|w| w.to_string()).collect());
        grammars.insert(
            name.to_string(),
            DomainGrammar::new(*name, templates.clone(), slots, shared.clone())?,
        );
    }
    check_disjoint(&grammars)?;

    let vocab = vocab_for(&templates, &shared, n_domains)?;

    // One RNG stream per domain (in pool order), plus a dedicated stream for
    // the support draw, so corpora do not shift when unrelated knobs change.
    let mut sources = BTreeMap::new();
    let mut target_pool = Vec::new();
    let target_name = DOMAIN_POOL[cfg.n_source_domains].0.to_string();
    for (i, (name, _)) in DOMAIN_POOL.iter().take(n_domains).enumerate() {
        let g = &grammars[*name];
        let mut rng = Rng::with_stream(cfg.seed, i as u64);
        let sentences: Vec<Sequence> = (0..cfg.sentences_per_domain)
            .map(|_| encode_sentence(&g.sample(&mut rng), &vocab))
            .collect::<Result<_>>()?;
        if *name == target_name {
            target_pool = sentences;
        } else {
            sources.insert(name.to_string(), sentences);
        }
    }

    let mut support_rng = Rng::with_stream(cfg.seed, 1000);
    let support = kshot_sample(&target_pool, cfg.k, &mut support_rng)?;

    Ok(DomainCorpus {
        vocab,
        grammars,
        sources,
        target_name,
        target_pool,
        support,
        min_len: cfg.min_len,
        max_len: cfg.max_len,
    })
}

fn encode_sentence(words: &[String], vocab: &Vocab) -> Result<Sequence> {
    let refs: Vec<&str> = words.iter().map(String::as_str).collect();
    let (ids, unk) = vocab.encode(&refs);
    debug_assert_eq!(unk, 0, "world sampling emitted an out-of-vocabulary word");
    Sequence::checked(ids, vocab)
}

fn shared_lexicons() -> BTreeMap<String, Vec<String>> {
    let mut m = BTreeMap::new();
    let put = |m: &mut BTreeMap<String, Vec<String>>, k: &str, v: &[&str]| {
        m.insert(k.to_string(), v.iter().map(|w| w.to_string()).collect());
    };
    put(&mut m, "adj", &ADJ);
    put(&mut m, "noun", &NOUN);
    put(&mut m, "verb", &VERB);
    put(&mut m, "adv", &ADV);
    m
}

/// Templates whose length falls inside [min_len, max_len]; lengths above the
/// hand-written range are reached by appending 3- and 4-token tail phrases
/// to a base pattern.
fn templates_for_range(min_len: usize, max_len: usize) -> Result<Vec<Template>> {
    let mut out = Vec::new();
    for pat in BASE_TEMPLATES {
        let t = Template::parse(pat)?;
        if t.len() >= min_len && t.len() <= max_len {
            out.push(t);
        }
    }
    for len in 13..=max_len.max(12) {
        if len >= min_len && len <= max_len && len > 12 {
            out.push(extended_template(len)?);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no templates available for lengths [{min_len}, {max_len}]"
        )));
    }
    Ok(out)
}

fn extended_template(len: usize) -> Result<Template> {
    for base in EXTENSION_BASES {
        let b = Template::parse(base)?;
        let mut rest = match len.checked_sub(b.len()) {
            Some(r) => r,
            None => continue,
        };
        // Solve rest = 3a + 4b greedily: peel 4-token chunks until the
        // remainder divides by 3.
        let mut fours = 0;
        while rest % 3 != 0 {
            match rest.checked_sub(4) {
                Some(r) => {
                    rest = r;
                    fours += 1;
                }
                None => break,
            }
        }
        if rest % 3 != 0 {
            continue;
        }
        let threes = rest / 3;
        let mut pattern = base.to_string();
        for _ in 0..fours {
            pattern.push(' ');
            pattern.push_str(CHUNK4);
        }
        for _ in 0..threes {
            pattern.push(' ');
            pattern.push_str(CHUNK3);
        }
        let t = Template::parse(&pattern)?;
        if t.len() == len {
            return Ok(t);
        }
    }
    Err(Error::InvalidArgument(format!("no template construction for length {len}")))
}

fn vocab_for(
    templates: &[Template],
    shared: &BTreeMap<String, Vec<String>>,
    n_domains: usize,
) -> Result<Vocab> {
    let mut seen = HashSet::new();
    let mut words: Vec<String> = Vec::new();
    let mut push = |w: &str, words: &mut Vec<String>| {
        if seen.insert(w.to_string()) {
            words.push(w.to_string());
        }
    };
    for t in templates {
        for p in t.pieces() {
            if let Piece::Literal(w) = p {
                push(w, &mut words);
            }
        }
    }
    for lex in shared.values() {
        for w in lex {
            push(w, &mut words);
        }
    }
    for (_, kws) in DOMAIN_POOL.iter().take(n_domains) {
        for w in kws {
            push(w, &mut words);
        }
    }
    Vocab::new(words)
}

/// Per-domain lexicons must be pairwise disjoint and disjoint from shared
/// lexicons and template literals; otherwise the oracle loses uniqueness.
pub(crate) fn check_disjoint(grammars: &BTreeMap<String, DomainGrammar>) -> Result<()> {
    let mut neutral: HashSet<&str> = HashSet::new();
    if let Some(g) = grammars.values().next() {
        for t in g.templates() {
            for p in t.pieces() {
                if let Piece::Literal(w) = p {
                    neutral.insert(w);
                }
            }
        }
        for lex in g.shared_lexicons().values() {
            neutral.extend(lex.iter().map(String::as_str));
        }
    }
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for (domain, g) in grammars {
        for lex in g.slot_lexicons().values() {
            for w in lex {
                if neutral.contains(w.as_str()) {
                    return Err(Error::InvalidArgument(format!(
                        "domain word {w:?} of {domain:?} collides with a shared word or literal"
                    )));
                }
                if let Some(other) = owner.insert(w, domain) {
                    if other != domain {
                        return Err(Error::InvalidArgument(format!(
                            "domain word {w:?} appears in both {other:?} and {domain:?}"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}
