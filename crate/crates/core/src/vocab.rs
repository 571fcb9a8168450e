//! Vocabulary management: lexeme categories, one-hot encoding and decoding,
//! triple representation, and the line-oriented vocabulary/triple file
//! formats.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("duplicate lexeme `{0}`")]
    DuplicateLexeme(String),
    #[error("unknown lexeme `{0}`")]
    UnknownLexeme(String),
    #[error("lexeme id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("unknown category `{0}`")]
    BadCategory(String),
    #[error("line {line}: expected {expected} tab-separated fields")]
    BadLine { line: usize, expected: usize },
    #[error("NaN entry in soft lexeme")]
    NanEntry,
    #[error("soft lexeme is empty")]
    EmptyVector,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Category {
    Object,
    Relation,
    Attribute,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Object => "object",
            Category::Relation => "relation",
            Category::Attribute => "attribute",
        }
    }

    pub fn parse(s: &str) -> Result<Self, VocabError> {
        match s {
            "object" => Ok(Category::Object),
            "relation" => Ok(Category::Relation),
            "attribute" => Ok(Category::Attribute),
            other => Err(VocabError::BadCategory(other.to_string())),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A (subject, predicate, object) statement as lexeme ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: usize,
    pub predicate: usize,
    pub object: usize,
}

impl Triple {
    pub fn new(subject: usize, predicate: usize, object: usize) -> Self {
        Triple {
            subject,
            predicate,
            object,
        }
    }
}

/// Immutable lexeme table. Ids are assigned by position and survive a
/// serialization round-trip unchanged. All lexemes share one id space; the
/// category is metadata used for corpus generation and diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    lexemes: Vec<String>,
    categories: Vec<Category>,
    by_name: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn from_entries(entries: Vec<(String, Category)>) -> Result<Self, VocabError> {
        let mut by_name = BTreeMap::new();
        let mut lexemes = Vec::with_capacity(entries.len());
        let mut categories = Vec::with_capacity(entries.len());
        for (lexeme, category) in entries {
            if by_name.insert(lexeme.clone(), lexemes.len()).is_some() {
                return Err(VocabError::DuplicateLexeme(lexeme));
            }
            lexemes.push(lexeme);
            categories.push(category);
        }
        Ok(Vocabulary {
            lexemes,
            categories,
            by_name,
        })
    }

    pub fn size(&self) -> usize {
        self.lexemes.len()
    }

    pub fn lexeme(&self, id: usize) -> Result<&str, VocabError> {
        self.lexemes
            .get(id)
            .map(|s| s.as_str())
            .ok_or(VocabError::IdOutOfRange {
                id,
                size: self.lexemes.len(),
            })
    }

    pub fn category(&self, id: usize) -> Result<Category, VocabError> {
        self.categories
            .get(id)
            .copied()
            .ok_or(VocabError::IdOutOfRange {
                id,
                size: self.lexemes.len(),
            })
    }

    pub fn id(&self, lexeme: &str) -> Result<usize, VocabError> {
        self.by_name
            .get(lexeme)
            .copied()
            .ok_or_else(|| VocabError::UnknownLexeme(lexeme.to_string()))
    }

    pub fn ids_in_category(&self, category: Category) -> Vec<usize> {
        (0..self.size())
            .filter(|&i| self.categories[i] == category)
            .collect()
    }

    pub fn triple_from_strs(&self, s: &str, p: &str, o: &str) -> Result<Triple, VocabError> {
        Ok(Triple::new(self.id(s)?, self.id(p)?, self.id(o)?))
    }

    pub fn triple_to_strs(&self, t: Triple) -> Result<(String, String, String), VocabError> {
        Ok((
            self.lexeme(t.subject)?.to_string(),
            self.lexeme(t.predicate)?.to_string(),
            self.lexeme(t.object)?.to_string(),
        ))
    }

    /// One `lexeme<TAB>category` line per id.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (lexeme, category) in self.lexemes.iter().zip(&self.categories) {
            out.push_str(lexeme);
            out.push('\t');
            out.push_str(category.as_str());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, VocabError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (lexeme, category) = match (fields.next(), fields.next(), fields.next()) {
                (Some(l), Some(c), None) => (l, c),
                _ => {
                    return Err(VocabError::BadLine {
                        line: i + 1,
                        expected: 2,
                    })
                }
            };
            entries.push((lexeme.to_string(), Category::parse(category)?));
        }
        Vocabulary::from_entries(entries)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), VocabError> {
        Ok(std::fs::write(path, self.serialize())?)
    }

    pub fn read_file(path: &Path) -> Result<Self, VocabError> {
        Vocabulary::parse(&std::fs::read_to_string(path)?)
    }

    /// FNV-1a over the serialized form; referenced by checkpoints so a model
    /// is never resumed against a different vocabulary.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.serialize().as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// Exactly one entry set to 1.
pub fn one_hot(id: usize, size: usize) -> Result<Vec<f64>, VocabError> {
    if id >= size {
        return Err(VocabError::IdOutOfRange { id, size });
    }
    let mut v = vec![0.0; size];
    v[id] = 1.0;
    Ok(v)
}

/// Smallest index attaining the maximum; NaN entries are rejected.
pub fn decode_argmax(v: &[f64]) -> Result<usize, VocabError> {
    if v.is_empty() {
        return Err(VocabError::EmptyVector);
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(VocabError::NanEntry);
    }
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Triple file: one `subject<TAB>predicate<TAB>object` line per triple,
/// lexeme strings.
pub fn serialize_triples(triples: &[(String, String, String)]) -> String {
    let mut out = String::new();
    for (s, p, o) in triples {
        out.push_str(s);
        out.push('\t');
        out.push_str(p);
        out.push('\t');
        out.push_str(o);
        out.push('\n');
    }
    out
}

pub fn parse_triples(text: &str) -> Result<Vec<(String, String, String)>, VocabError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(VocabError::BadLine {
                line: i + 1,
                expected: 3,
            });
        }
        out.push((
            fields[0].to_string(),
            fields[1].to_string(),
            fields[2].to_string(),
        ));
    }
    Ok(out)
}

/// Build a vocabulary from a triple corpus by keeping the most frequent
/// lexemes per category up to the given caps; frequency ties break toward
/// the lexicographically smaller lexeme.
///
/// Positions determine categories: subjects are objects, predicates are
/// relations, and the object position is an attribute when the predicate is
/// "is" and an object otherwise. A lexeme seen under several categories is
/// assigned its most frequent one (ties prefer object, then relation).
pub fn build_vocabulary(
    corpus: &[(String, String, String)],
    top_objects: usize,
    top_relations: usize,
    top_attributes: usize,
) -> Result<Vocabulary, VocabError> {
    if corpus.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }
    let mut counts: BTreeMap<&str, BTreeMap<Category, usize>> = BTreeMap::new();
    for (s, p, o) in corpus {
        *counts
            .entry(s.as_str())
            .or_default()
            .entry(Category::Object)
            .or_insert(0) += 1;
        *counts
            .entry(p.as_str())
            .or_default()
            .entry(Category::Relation)
            .or_insert(0) += 1;
        let obj_cat = if p == "is" {
            Category::Attribute
        } else {
            Category::Object
        };
        *counts
            .entry(o.as_str())
            .or_default()
            .entry(obj_cat)
            .or_insert(0) += 1;
    }

    // (category, total count, lexeme) per distinct lexeme
    let mut assigned: Vec<(Category, usize, &str)> = counts
        .iter()
        .map(|(lexeme, per_cat)| {
            let category = *per_cat
                .iter()
                .max_by_key(|(c, n)| (**n, std::cmp::Reverse(**c)))
                .expect("non-empty")
                .0;
            let total: usize = per_cat.values().sum();
            (category, total, *lexeme)
        })
        .collect();
    assigned.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(b.2)));

    let mut entries = Vec::new();
    let mut kept = BTreeMap::from([
        (Category::Object, 0usize),
        (Category::Relation, 0usize),
        (Category::Attribute, 0usize),
    ]);
    let caps = BTreeMap::from([
        (Category::Object, top_objects),
        (Category::Relation, top_relations),
        (Category::Attribute, top_attributes),
    ]);
    for (category, _count, lexeme) in assigned {
        let used = kept.get_mut(&category).expect("category present");
        if *used < caps[&category] {
            *used += 1;
            entries.push((lexeme.to_string(), category));
        }
    }
    Vocabulary::from_entries(entries)
}
