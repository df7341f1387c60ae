//! Plain-text persistence for corpora and whole worlds.
//!
//! A corpus file holds one space-separated sentence per line. A world
//! directory bundles everything needed to reload a `DomainCorpus`:
//! a `world.txt` manifest, `grammar.txt`, `vocab.txt`, one
//! `corpus_<domain>.txt` per source domain, `target_pool.txt`, and
//! `support.txt`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use crate::corpus::grammar::GrammarFile;
use crate::corpus::vocab::Vocab;
use crate::corpus::{world, DomainCorpus, Sequence};
use crate::error::{Error, Result};

const WORLD_HEADER: &str = "DARL-WORLD v1";

pub fn save_corpus(path: &Path, seqs: &[Sequence], vocab: &Vocab) -> Result<()> {
    let mut out = String::new();
    for s in seqs {
        out.push_str(&vocab.render(s.ids())?.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads sentences, mapping out-of-vocabulary words to UNK. Returns the
/// sequences plus the number of substitutions so callers can decide whether
/// a nonzero count is a warning or corruption.
pub fn load_corpus(path: &Path, vocab: &Vocab) -> Result<(Vec<Sequence>, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seqs = Vec::new();
    let mut unk_total = 0;
    for (i, line) in text.lines().enumerate() {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            return Err(Error::format(path, format!("empty line {}", i + 1)));
        }
        let (ids, unk) = vocab.encode(&words);
        unk_total += unk;
        seqs.push(Sequence::from_ids(ids));
    }
    Ok((seqs, unk_total))
}

pub(crate) fn save_world_dir(corpus: &DomainCorpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut manifest = String::from(WORLD_HEADER);
    manifest.push('\n');
    manifest.push_str(&format!("target={}\n", corpus.target_name));
    let sources: Vec<&str> = corpus.sources.keys().map(String::as_str).collect();
    manifest.push_str(&format!("sources={}\n", sources.join(",")));
    manifest.push_str(&format!("k={}\n", corpus.support.len()));
    manifest.push_str(&format!("min_len={}\n", corpus.min_len));
    manifest.push_str(&format!("max_len={}\n", corpus.max_len));
    let manifest_path = dir.join("world.txt");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    GrammarFile::from_grammars(&corpus.grammars)?.save(&dir.join("grammar.txt"))?;
    corpus.vocab.save(&dir.join("vocab.txt"))?;
    for (name, seqs) in &corpus.sources {
        save_corpus(&dir.join(format!("corpus_{name}.txt")), seqs, &corpus.vocab)?;
    }
    save_corpus(&dir.join("target_pool.txt"), &corpus.target_pool, &corpus.vocab)?;
    save_corpus(&dir.join("support.txt"), &corpus.support, &corpus.vocab)?;
    Ok(())
}

pub(crate) fn load_world_dir(dir: &Path) -> Result<DomainCorpus> {
    let manifest_path = dir.join("world.txt");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(WORLD_HEADER) {
        return Err(Error::format(&manifest_path, format!("expected header {WORLD_HEADER:?}")));
    }
    let mut fields = BTreeMap::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(&manifest_path, format!("expected key=value, got {line:?}")))?;
        fields.insert(key.to_string(), value.to_string());
    }
    let field = |key: &str| {
        fields
            .get(key)
            .cloned()
            .ok_or_else(|| Error::format(&manifest_path, format!("missing field {key:?}")))
    };
    let number = |key: &str| -> Result<usize> {
        field(key)?
            .parse()
            .map_err(|_| Error::format(&manifest_path, format!("field {key:?} is not a number")))
    };
    let target_name = field("target")?;
    let source_names: Vec<String> =
        field("sources")?.split(',').map(str::to_string).filter(|s| !s.is_empty()).collect();
    if source_names.is_empty() {
        return Err(Error::format(&manifest_path, "no source domains listed".to_string()));
    }
    let k = number("k")?;
    let min_len = number("min_len")?;
    let max_len = number("max_len")?;

    let vocab = Vocab::load(&dir.join("vocab.txt"))?;
    let grammar_path = dir.join("grammar.txt");
    let grammar_file = GrammarFile::load(&grammar_path)?;
    let known: HashSet<String> =
        source_names.iter().cloned().chain([target_name.clone()]).collect();
    grammar_file.check_domains(&known, &grammar_path)?;
    let grammars = grammar_file.into_grammars()?;
    for name in known.iter() {
        if !grammars.contains_key(name) {
            return Err(Error::format(
                &grammar_path,
                format!("domain {name:?} has no slot lexicon"),
            ));
        }
    }
    world::check_disjoint(&grammars)?;

    // Corpus files must be closed over the saved vocabulary; an UNK here is
    // corruption, not a warning.
    let load_closed = |path: &Path| -> Result<Vec<Sequence>> {
        let (seqs, unk) = load_corpus(path, &vocab)?;
        if unk > 0 {
            return Err(Error::format(path, format!("{unk} out-of-vocabulary words")));
        }
        for s in &seqs {
            if s.len() < min_len || s.len() > max_len {
                return Err(Error::format(
                    path,
                    format!("sentence length {} outside [{min_len}, {max_len}]", s.len()),
                ));
            }
        }
        Ok(seqs)
    };

    let mut sources = BTreeMap::new();
    for name in &source_names {
        sources.insert(name.clone(), load_closed(&dir.join(format!("corpus_{name}.txt")))?);
    }
    let target_pool = load_closed(&dir.join("target_pool.txt"))?;
    let support_path = dir.join("support.txt");
    let support = load_closed(&support_path)?;
    if support.len() != k {
        return Err(Error::format(
            &support_path,
            format!("manifest says k={k} but support has {} sentences", support.len()),
        ));
    }
    for s in &support {
        if !target_pool.contains(s) {
            return Err(Error::format(
                &support_path,
                "support sentence missing from the target pool".to_string(),
            ));
        }
    }

    Ok(DomainCorpus {
        vocab,
        grammars,
        sources,
        target_name,
        target_pool,
        support,
        min_len,
        max_len,
    })
}
