//! Synthetic multi-domain corpora with an exact domain oracle.
//!
//! A world is a set of domains that share sentence templates and
//! domain-independent lexicons but have pairwise-disjoint per-domain word
//! lists. Because the only cross-domain difference is those word lists,
//! membership of a sentence in a domain is decidable exactly, which is what
//! the evaluation metrics lean on.

mod files;
mod grammar;
mod vocab;
mod world;

pub use files::{load_corpus, save_corpus};
pub use grammar::{DomainGrammar, GrammarFile, Piece, Template};
pub use vocab::{Vocab, EOS, RESERVED, START, UNK};
pub use world::{build_default_world, build_world, WorldConfig};

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// A sentence as content-token ids: no START, conceptually terminated by an
/// EOS that is not stored. Corpus construction guarantees no reserved ids
/// and a length within the world's configured bounds; sequences produced by
/// sampling a generator carry whatever the model emitted.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sequence {
    ids: Vec<u32>,
}

impl Sequence {
    pub fn from_ids(ids: Vec<u32>) -> Sequence {
        Sequence { ids }
    }

    /// Corpus-side constructor: non-empty, every id a known content token.
    pub fn checked(ids: Vec<u32>, vocab: &Vocab) -> Result<Sequence> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        for &id in &ids {
            if Vocab::is_reserved(id) {
                return Err(Error::InvalidArgument(format!(
                    "reserved id {id} among content tokens"
                )));
            }
            if vocab.token(id).is_none() {
                return Err(Error::InvalidArgument(format!("id {id} out of vocabulary")));
            }
        }
        Ok(Sequence { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Oracle answer: the unique generating domain, or ill-formed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DomainVerdict {
    Domain(String),
    IllFormed,
}

impl DomainVerdict {
    pub fn is_domain(&self, name: &str) -> bool {
        matches!(self, DomainVerdict::Domain(d) if d == name)
    }
}

/// A full synthetic world: vocabulary, per-domain grammars, sampled corpora
/// for the source domains, the target pool, and the k-shot support set drawn
/// from it.
#[derive(Clone, Debug)]
pub struct DomainCorpus {
    pub vocab: Vocab,
    pub grammars: BTreeMap<String, DomainGrammar>,
    pub sources: BTreeMap<String, Vec<Sequence>>,
    pub target_name: String,
    pub target_pool: Vec<Sequence>,
    pub support: Vec<Sequence>,
    pub min_len: usize,
    pub max_len: usize,
}

impl DomainCorpus {
    /// All source-domain sentences, in domain-name order. This is the MLE
    /// pretraining set and the reference set for corpus-level BLEU.
    pub fn source_union(&self) -> Vec<Sequence> {
        self.sources.values().flatten().cloned().collect()
    }

    /// Classifies a token sequence: the unique domain whose grammar generates
    /// it, or ill-formed. Reserved ids cannot be rendered as words, so any
    /// sequence containing one is ill-formed by construction.
    pub fn oracle_domain(&self, seq: &Sequence) -> DomainVerdict {
        if seq.is_empty() {
            return DomainVerdict::IllFormed;
        }
        let mut words = Vec::with_capacity(seq.len());
        for &id in seq.ids() {
            match self.vocab.token(id) {
                Some(w) => words.push(w),
                None => return DomainVerdict::IllFormed,
            }
        }
        let mut found: Option<&str> = None;
        for (name, g) in &self.grammars {
            if g.generates(&words) {
                if found.is_some() {
                    // Unreachable for validated worlds (disjoint per-domain
                    // lexicons), but "unique domain" is the contract.
                    return DomainVerdict::IllFormed;
                }
                found = Some(name);
            }
        }
        match found {
            Some(name) => DomainVerdict::Domain(name.to_string()),
            None => DomainVerdict::IllFormed,
        }
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        files::save_world_dir(self, dir)
    }

    pub fn load_dir(dir: &Path) -> Result<DomainCorpus> {
        files::load_world_dir(dir)
    }
}

/// Draws k sequences from the pool without index replacement (duplicates in
/// the pool itself may still both be picked). Partial Fisher-Yates, so for a
/// fixed generator the first min(k, n) picks do not depend on k.
pub fn kshot_sample(pool: &[Sequence], k: usize, rng: &mut Rng) -> Result<Vec<Sequence>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if k > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds pool size {}",
            pool.len()
        )));
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    for i in 0..k {
        let j = i + rng.below(pool.len() - i);
        idx.swap(i, j);
    }
    Ok(idx[..k].iter().map(|&i| pool[i].clone()).collect())
}
