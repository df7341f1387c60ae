//! Template grammars. Every domain in a world shares the same templates and
//! the same domain-independent slot lexicons; domains differ only in the
//! word lists behind their per-domain slots. That single difference is what
//! makes the domain oracle exact: swap the per-domain word and the sentence
//! provably belongs to the other domain.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Piece {
    Literal(String),
    Slot(String),
}

/// One sentence pattern. Each piece produces exactly one token, so the
/// template length equals the sentence length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pieces: Vec<Piece>,
}

impl Template {
    /// Parses a space-separated pattern where `<name>` marks a slot and any
    /// other token is a literal word.
    pub fn parse(pattern: &str) -> Result<Template> {
        let mut pieces = Vec::new();
        for tok in pattern.split_whitespace() {
            if let Some(name) = tok.strip_prefix('<').and_then(|t| t.strip_suffix('>')) {
                if name.is_empty() {
                    return Err(Error::InvalidArgument(format!("empty slot marker in {pattern:?}")));
                }
                pieces.push(Piece::Slot(name.to_string()));
            } else {
                pieces.push(Piece::Literal(tok.to_string()));
            }
        }
        if pieces.is_empty() {
            return Err(Error::InvalidArgument("empty template".into()));
        }
        Ok(Template { pieces })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn slot_names(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(n) => Some(n.as_str()),
            Piece::Literal(_) => None,
        })
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .pieces
            .iter()
            .map(|p| match p {
                Piece::Literal(w) => w.clone(),
                Piece::Slot(n) => format!("<{n}>"),
            })
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// The generative grammar of one domain: shared templates, shared lexicons,
/// and this domain's own word lists for the per-domain slots.
#[derive(Clone, Debug)]
pub struct DomainGrammar {
    pub domain_name: String,
    templates: Vec<Template>,
    slot_lexicons: BTreeMap<String, Vec<String>>,
    shared_lexicons: BTreeMap<String, Vec<String>>,
}

impl DomainGrammar {
    pub fn new(
        domain_name: impl Into<String>,
        templates: Vec<Template>,
        slot_lexicons: BTreeMap<String, Vec<String>>,
        shared_lexicons: BTreeMap<String, Vec<String>>,
    ) -> Result<DomainGrammar> {
        let g = DomainGrammar {
            domain_name: domain_name.into(),
            templates,
            slot_lexicons,
            shared_lexicons,
        };
        g.validate()?;
        Ok(g)
    }

    /// Structural checks: at least one template, every slot marker resolves
    /// to exactly one lexicon, every lexicon is non-empty, and every template
    /// contains at least one per-domain slot (otherwise a sentence could not
    /// be attributed to a unique domain).
    fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "domain {:?} has no templates",
                self.domain_name
            )));
        }
        for (name, lex) in self.slot_lexicons.iter().chain(self.shared_lexicons.iter()) {
            if lex.is_empty() {
                return Err(Error::InvalidArgument(format!("slot {name:?} has an empty lexicon")));
            }
        }
        for t in &self.templates {
            let mut domain_slots = 0usize;
            for name in t.slot_names() {
                let own = self.slot_lexicons.contains_key(name);
                let shared = self.shared_lexicons.contains_key(name);
                match (own, shared) {
                    (true, true) => {
                        return Err(Error::InvalidArgument(format!(
                            "slot {name:?} is both per-domain and shared"
                        )))
                    }
                    (false, false) => {
                        return Err(Error::InvalidArgument(format!(
                            "template {t} references unknown slot {name:?}"
                        )))
                    }
                    (true, false) => domain_slots += 1,
                    (false, true) => {}
                }
            }
            if domain_slots == 0 {
                return Err(Error::InvalidArgument(format!(
                    "template {t} has no per-domain slot; sentences from it would be domain-ambiguous"
                )));
            }
        }
        Ok(())
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn slot_lexicons(&self) -> &BTreeMap<String, Vec<String>> {
        &self.slot_lexicons
    }

    pub fn shared_lexicons(&self) -> &BTreeMap<String, Vec<String>> {
        &self.shared_lexicons
    }

    /// All words this grammar can emit, deterministically ordered: template
    /// literals first, then shared lexicons, then per-domain lexicons.
    pub fn words(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.templates {
            for p in t.pieces() {
                if let Piece::Literal(w) = p {
                    out.push(w);
                }
            }
        }
        for lex in self.shared_lexicons.values() {
            out.extend(lex.iter().map(String::as_str));
        }
        for lex in self.slot_lexicons.values() {
            out.extend(lex.iter().map(String::as_str));
        }
        out
    }

    fn lexicon(&self, slot: &str) -> &[String] {
        self.slot_lexicons
            .get(slot)
            .or_else(|| self.shared_lexicons.get(slot))
            .expect("validated slot")
    }

    /// True when some template produces exactly this word sequence.
    pub fn generates(&self, words: &[&str]) -> bool {
        self.templates.iter().any(|t| self.template_matches(t, words))
    }

    fn template_matches(&self, t: &Template, words: &[&str]) -> bool {
        if t.len() != words.len() {
            return false;
        }
        t.pieces().iter().zip(words).all(|(p, w)| match p {
            Piece::Literal(lit) => lit == w,
            Piece::Slot(name) => self.lexicon(name).iter().any(|x| x == w),
        })
    }

    /// Samples one sentence: uniform template, then uniform word per slot.
    pub fn sample(&self, rng: &mut Rng) -> Vec<String> {
        let t = &self.templates[rng.below(self.templates.len())];
        t.pieces()
            .iter()
            .map(|p| match p {
                Piece::Literal(w) => w.clone(),
                Piece::Slot(name) => {
                    let lex = self.lexicon(name);
                    lex[rng.below(lex.len())].clone()
                }
            })
            .collect()
    }
}

/// Serializable form of a whole world's grammar: shared templates and
/// lexicons plus every domain's per-domain slot lists.
#[derive(Clone, Debug, PartialEq)]
pub struct GrammarFile {
    pub templates: Vec<Template>,
    pub shared: BTreeMap<String, Vec<String>>,
    /// domain -> slot name -> words
    pub domain_slots: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

const GRAMMAR_HEADER: &str = "DARL-GRAMMAR v1";

impl GrammarFile {
    /// Collapses per-domain grammars back into one file. All grammars must
    /// agree on templates and shared lexicons.
    pub fn from_grammars(grammars: &BTreeMap<String, DomainGrammar>) -> Result<GrammarFile> {
        let mut it = grammars.values();
        let first = it
            .next()
            .ok_or_else(|| Error::InvalidArgument("no domain grammars".into()))?;
        for g in grammars.values() {
            if g.templates != first.templates || g.shared_lexicons != first.shared_lexicons {
                return Err(Error::InvalidArgument(format!(
                    "domain {:?} does not share templates/lexicons with {:?}",
                    g.domain_name, first.domain_name
                )));
            }
        }
        Ok(GrammarFile {
            templates: first.templates.clone(),
            shared: first.shared_lexicons.clone(),
            domain_slots: grammars
                .iter()
                .map(|(name, g)| (name.clone(), g.slot_lexicons.clone()))
                .collect(),
        })
    }

    pub fn into_grammars(self) -> Result<BTreeMap<String, DomainGrammar>> {
        self.domain_slots
            .iter()
            .map(|(name, slots)| {
                DomainGrammar::new(
                    name.clone(),
                    self.templates.clone(),
                    slots.clone(),
                    self.shared.clone(),
                )
                .map(|g| (name.clone(), g))
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(GRAMMAR_HEADER);
        out.push('\n');
        out.push_str("TEMPLATES\n");
        for t in &self.templates {
            out.push_str(&t.to_string());
            out.push('\n');
        }
        for (name, words) in &self.shared {
            out.push_str(&format!("SLOT {name} SHARED\n"));
            for w in words {
                out.push_str(w);
                out.push('\n');
            }
        }
        for (domain, slots) in &self.domain_slots {
            for (name, words) in slots {
                out.push_str(&format!("SLOT {name} DOMAIN {domain}\n"));
                for w in words {
                    out.push_str(w);
                    out.push('\n');
                }
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<GrammarFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, line)) if line.trim_end() == GRAMMAR_HEADER => {}
            Some((_, line)) => {
                return Err(Error::format(
                    path,
                    format!("missing version line: expected {GRAMMAR_HEADER:?}, got {line:?}"),
                ))
            }
            None => return Err(Error::format(path, "empty grammar file")),
        }

        enum Section {
            None,
            Templates,
            Shared(String),
            Domain(String, String),
        }
        let mut section = Section::None;
        let mut file = GrammarFile {
            templates: Vec::new(),
            shared: BTreeMap::new(),
            domain_slots: BTreeMap::new(),
        };
        for (lineno, raw) in lines {
            let line = raw.trim_end();
            if line.is_empty() {
                continue;
            }
            if line == "TEMPLATES" {
                section = Section::Templates;
                continue;
            }
            if let Some(rest) = line.strip_prefix("SLOT ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                section = match parts.as_slice() {
                    [name, "SHARED"] => Section::Shared(name.to_string()),
                    [name, "DOMAIN", domain] => {
                        Section::Domain(name.to_string(), domain.to_string())
                    }
                    _ => {
                        return Err(Error::format(
                            path,
                            format!("line {}: malformed section header {line:?}", lineno + 1),
                        ))
                    }
                };
                continue;
            }
            if line.chars().next().is_some_and(|c| c.is_ascii_uppercase()) {
                return Err(Error::format(
                    path,
                    format!("line {}: unknown section {line:?}", lineno + 1),
                ));
            }
            match &section {
                Section::None => {
                    return Err(Error::format(
                        path,
                        format!("line {}: entry before any section header", lineno + 1),
                    ))
                }
                Section::Templates => file.templates.push(
                    Template::parse(line).map_err(|e| Error::format(path, e.to_string()))?,
                ),
                Section::Shared(name) => {
                    file.shared.entry(name.clone()).or_default().push(line.to_string())
                }
                Section::Domain(name, domain) => file
                    .domain_slots
                    .entry(domain.clone())
                    .or_default()
                    .entry(name.clone())
                    .or_default()
                    .push(line.to_string()),
            }
        }
        Ok(file)
    }

    /// Rejects per-domain slot lists that reference domains outside `known`.
    pub fn check_domains(&self, known: &HashSet<String>, path: &Path) -> Result<()> {
        for domain in self.domain_slots.keys() {
            if !known.contains(domain) {
                return Err(Error::format(
                    path,
                    format!("slot list references unknown domain {domain:?}"),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_grammar(name: &str, kw: &[&str]) -> DomainGrammar {
        let templates = vec![
            Template::parse("the <kw> is <adj>").unwrap(),
            Template::parse("i like this <adj> <kw>").unwrap(),
        ];
        let mut slots = BTreeMap::new();
        slots.insert("kw".to_string(), kw.iter().map(|s| s.to_string()).collect());
        let mut shared = BTreeMap::new();
        shared.insert(
            "adj".to_string(),
            vec!["good".to_string(), "cheap".to_string()],
        );
        DomainGrammar::new(name, templates, slots, shared).unwrap()
    }

    #[test]
    fn parse_round_trips_through_display() {
        let t = Template::parse("the <kw> is <adj>").unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.to_string(), "the <kw> is <adj>");
    }

    #[test]
    fn generates_accepts_exactly_the_template_language() {
        let g = tiny_grammar("books", &["book", "novel"]);
        assert!(g.generates(&["the", "book", "is", "good"]));
        assert!(g.generates(&["i", "like", "this", "cheap", "novel"]));
        assert!(!g.generates(&["the", "film", "is", "good"]), "kw outside lexicon");
        assert!(!g.generates(&["the", "book", "is"]), "length mismatch");
        assert!(!g.generates(&["book", "the", "is", "good"]), "literal misplaced");
        assert!(!g.generates(&["the", "good", "is", "book"]), "slot/literal swapped");
    }

    #[test]
    fn samples_are_always_in_language_and_deterministic() {
        let g = tiny_grammar("books", &["book", "novel"]);
        let mut a = Rng::new(3);
        let mut b = Rng::new(3);
        for _ in 0..200 {
            let s = g.sample(&mut a);
            let words: Vec<&str> = s.iter().map(String::as_str).collect();
            assert!(g.generates(&words), "sampled {words:?} not in language");
            assert_eq!(s, g.sample(&mut b));
        }
    }

    #[test]
    fn templates_without_a_domain_slot_are_rejected() {
        let templates = vec![Template::parse("the <adj> one").unwrap()];
        let mut shared = BTreeMap::new();
        shared.insert("adj".to_string(), vec!["good".to_string()]);
        let err =
            DomainGrammar::new("x", templates, BTreeMap::new(), shared).unwrap_err();
        assert!(err.to_string().contains("per-domain"), "{err}");
    }

    #[test]
    fn unknown_slots_are_rejected() {
        let templates = vec![Template::parse("the <kw> has <mystery>").unwrap()];
        let mut slots = BTreeMap::new();
        slots.insert("kw".to_string(), vec!["book".to_string()]);
        assert!(DomainGrammar::new("x", templates, slots, BTreeMap::new()).is_err());
    }

    #[test]
    fn grammar_file_round_trip() {
        let mut grammars = BTreeMap::new();
        grammars.insert("books".to_string(), tiny_grammar("books", &["book", "novel"]));
        grammars.insert("films".to_string(), tiny_grammar("films", &["film", "movie"]));
        let file = GrammarFile::from_grammars(&grammars).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grammar.txt");
        file.save(&path).unwrap();
        let loaded = GrammarFile::load(&path).unwrap();
        assert_eq!(loaded, file);

        let back = loaded.into_grammars().unwrap();
        assert!(back["films"].generates(&["the", "movie", "is", "cheap"]));
        assert!(!back["films"].generates(&["the", "book", "is", "cheap"]));
    }

    #[test]
    fn grammar_file_rejects_malformed_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grammar.txt");

        std::fs::write(&path, "TEMPLATES\nthe <kw> is <adj>\n").unwrap();
        let err = GrammarFile::load(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");

        std::fs::write(&path, "DARL-GRAMMAR v1\nBOGUS SECTION\n").unwrap();
        let err = GrammarFile::load(&path).unwrap_err();
        assert!(err.to_string().contains("unknown section"), "{err}");

        std::fs::write(&path, "DARL-GRAMMAR v1\nstray entry\n").unwrap();
        let err = GrammarFile::load(&path).unwrap_err();
        assert!(err.to_string().contains("before any section"), "{err}");
    }

    #[test]
    fn unknown_domain_references_are_detected() {
        let mut grammars = BTreeMap::new();
        grammars.insert("books".to_string(), tiny_grammar("books", &["book"]));
        let file = GrammarFile::from_grammars(&grammars).unwrap();
        let known: HashSet<String> = ["films".to_string()].into();
        let err = file.check_domains(&known, Path::new("grammar.txt")).unwrap_err();
        assert!(err.to_string().contains("unknown domain"), "{err}");
    }
}
