//! Constraint ingestion: synonym/antonym pair files and dialogue ontologies.
//!
//! Pair files are two whitespace-separated tokens per line (`#` comments
//! allowed). Ontologies are JSON objects mapping slot names to value lists;
//! every pair of single-token values within one slot becomes an antonymy
//! constraint.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::vecstore::VectorStore;

/// Unordered word-id pair in canonical order (smaller id first).
pub type WordPair = (usize, usize);

pub fn canonical_pair(i: usize, j: usize) -> WordPair {
    if i <= j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Deduplicated synonym and antonym pairs over vocabulary indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstraintSet {
    synonyms: BTreeSet<WordPair>,
    antonyms: BTreeSet<WordPair>,
}

impl ConstraintSet {
    pub fn synonyms(&self) -> &BTreeSet<WordPair> {
        &self.synonyms
    }

    pub fn antonyms(&self) -> &BTreeSet<WordPair> {
        &self.antonyms
    }

    pub fn is_empty(&self) -> bool {
        self.synonyms.is_empty() && self.antonyms.is_empty()
    }

    pub fn is_antonym_pair(&self, i: usize, j: usize) -> bool {
        self.antonyms.contains(&canonical_pair(i, j))
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let pair = canonical_pair(i, j);
        self.synonyms.contains(&pair) || self.antonyms.contains(&pair)
    }

    /// Every id must index into `store`; pairs must be canonical and non-self.
    pub fn validate(&self, store: &VectorStore) -> Result<()> {
        for &(i, j) in self.synonyms.iter().chain(self.antonyms.iter()) {
            if i >= j {
                return Err(Error::Validation(format!(
                    "pair ({i}, {j}) is not canonical"
                )));
            }
            if j >= store.len() {
                return Err(Error::Validation(format!(
                    "pair ({i}, {j}) exceeds vocabulary size {}",
                    store.len()
                )));
            }
        }
        Ok(())
    }
}

/// Result of loading one pair file against a vocabulary.
#[derive(Debug, Clone, Default)]
pub struct PairFile {
    pub pairs: BTreeSet<WordPair>,
    /// Lines dropped because a word was missing from the vocabulary.
    pub dropped_out_of_vocab: usize,
    /// Lines dropped because both tokens were the same word.
    pub dropped_self_pairs: usize,
}

/// Loads a two-token-per-line pair file, keeping lines where both words are
/// in the store's vocabulary. Duplicate and swapped-order lines collapse to
/// one canonical pair.
pub fn load_pair_file(path: impl AsRef<Path>, store: &VectorStore) -> Result<PairFile> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = PairFile::default();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 2 tokens, found {}", tokens.len()),
            ));
        }
        match (store.id(tokens[0]), store.id(tokens[1])) {
            (Some(i), Some(j)) => {
                if i == j {
                    out.dropped_self_pairs += 1;
                } else {
                    out.pairs.insert(canonical_pair(i, j));
                }
            }
            _ => out.dropped_out_of_vocab += 1,
        }
    }
    Ok(out)
}

/// Unions pair sources per relation. A pair found in both relations is kept
/// as an antonym and removed from the synonyms; the second element of the
/// return value counts those conflicts.
pub fn build_constraint_set(
    synonym_sources: &[BTreeSet<WordPair>],
    antonym_sources: &[BTreeSet<WordPair>],
) -> (ConstraintSet, usize) {
    let mut synonyms: BTreeSet<WordPair> = BTreeSet::new();
    let mut antonyms: BTreeSet<WordPair> = BTreeSet::new();
    for source in synonym_sources {
        synonyms.extend(source.iter().copied());
    }
    for source in antonym_sources {
        antonyms.extend(source.iter().copied());
    }
    let mut conflicts = 0;
    for pair in &antonyms {
        if synonyms.remove(pair) {
            conflicts += 1;
        }
    }
    (ConstraintSet { synonyms, antonyms }, conflicts)
}

/// A dialogue domain: named slots, each with a finite value list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    slots: Vec<Slot>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    pub values: Vec<String>,
}

impl Ontology {
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    fn validate(slots: Vec<Slot>) -> std::result::Result<Self, String> {
        let mut names = BTreeSet::new();
        for slot in &slots {
            if !names.insert(slot.name.as_str()) {
                return Err(format!("duplicate slot {:?}", slot.name));
            }
            if slot.values.is_empty() {
                return Err(format!("slot {:?} has no values", slot.name));
            }
            let mut values = BTreeSet::new();
            for value in &slot.values {
                if value.is_empty() {
                    return Err(format!("slot {:?} has an empty value", slot.name));
                }
                if !values.insert(value.as_str()) {
                    return Err(format!(
                        "duplicate value {:?} in slot {:?}",
                        value, slot.name
                    ));
                }
            }
        }
        Ok(Ontology { slots })
    }

    pub fn from_reader(reader: impl Read, origin: &Path) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_reader(reader);
        Ontology::deserialize(&mut de)
            .map_err(|e| Error::parse(origin, e.line(), e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), path)
    }
}

// Hand-rolled so that duplicate slot names in the JSON are rejected instead
// of silently collapsed by a map collection.
impl<'de> Deserialize<'de> for Ontology {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: Deserializer<'de>,
    {
        struct TopVisitor;

        impl<'de> Visitor<'de> for TopVisitor {
            type Value = Ontology;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object with a \"slots\" key")
            }

            fn visit_map<M: MapAccess<'de>>(
                self,
                mut map: M,
            ) -> std::result::Result<Ontology, M::Error> {
                let mut slots: Option<Vec<Slot>> = None;
                while let Some(key) = map.next_key::<String>()? {
                    if key == "slots" {
                        if slots.is_some() {
                            return Err(de::Error::duplicate_field("slots"));
                        }
                        slots = Some(map.next_value_seed(SlotMapSeed)?);
                    } else {
                        return Err(de::Error::unknown_field(&key, &["slots"]));
                    }
                }
                let slots = slots.ok_or_else(|| de::Error::missing_field("slots"))?;
                Ontology::validate(slots).map_err(de::Error::custom)
            }
        }

        struct SlotMapSeed;

        impl<'de> de::DeserializeSeed<'de> for SlotMapSeed {
            type Value = Vec<Slot>;

            fn deserialize<D: Deserializer<'de>>(
                self,
                deserializer: D,
            ) -> std::result::Result<Vec<Slot>, D::Error> {
                struct SlotMapVisitor;

                impl<'de> Visitor<'de> for SlotMapVisitor {
                    type Value = Vec<Slot>;

                    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                        f.write_str("an object mapping slot names to value arrays")
                    }

                    fn visit_map<M: MapAccess<'de>>(
                        self,
                        mut map: M,
                    ) -> std::result::Result<Vec<Slot>, M::Error> {
                        let mut slots = Vec::new();
                        while let Some((name, values)) =
                            map.next_entry::<String, Vec<String>>()?
                        {
                            slots.push(Slot { name, values });
                        }
                        Ok(slots)
                    }
                }

                deserializer.deserialize_map(SlotMapVisitor)
            }
        }

        deserializer.deserialize_map(TopVisitor)
    }
}

/// Antonym pairs generated from an ontology.
#[derive(Debug, Clone, Default)]
pub struct OntologyPairs {
    pub pairs: BTreeSet<WordPair>,
    /// Slot values skipped because they contain whitespace.
    pub skipped_multi_token: usize,
    /// Single-token slot values missing from the vocabulary.
    pub skipped_out_of_vocab: usize,
}

/// Emits every unordered pair of distinct single-token in-vocabulary values
/// within each slot. Values are never paired across slots.
pub fn ontology_antonyms(ontology: &Ontology, store: &VectorStore) -> OntologyPairs {
    let mut out = OntologyPairs::default();
    for slot in ontology.slots() {
        let mut ids: Vec<usize> = Vec::with_capacity(slot.values.len());
        for value in &slot.values {
            if value.contains(char::is_whitespace) {
                out.skipped_multi_token += 1;
                continue;
            }
            match store.id(value) {
                Some(id) => ids.push(id),
                None => out.skipped_out_of_vocab += 1,
            }
        }
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[a + 1..] {
                if i != j {
                    out.pairs.insert(canonical_pair(i, j));
                }
            }
        }
    }
    out
}
