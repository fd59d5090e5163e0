//! Counter-fitting for word vectors: inject antonymy and synonymy constraints
//! into a pre-trained vector space, evaluate the result on SimLex-999, and
//! build semantic dictionaries from dialogue-domain ontologies.
//!
//! The pipeline, end to end:
//!
//! 1. [`vecstore`] loads a text vector file and keeps every row on the unit
//!    sphere, so all geometry is cosine distance `d = 1 - cos`.
//! 2. [`lexicon`] ingests synonym/antonym pair files and ontology slots into
//!    a [`lexicon::ConstraintSet`].
//! 3. [`optimizer`] minimizes a three-term hinge objective (repel antonyms to
//!    distance >= delta, attract synonyms to distance <= gamma, preserve the
//!    original neighborhood geometry) by SGD over individual pairs.
//! 4. [`eval`] scores a space against SimLex-999 with Spearman rank
//!    correlation, runs constraint-source ablations, and reports the
//!    worst-ranked pairs before/after.
//! 5. [`dictgen`] emits, for every ontology value, the vocabulary words
//!    within radius `t` of its vector.

pub mod dictgen;
pub mod error;
pub mod eval;
pub mod lexicon;
pub mod optimizer;
pub mod vecstore;

pub use error::{Error, Result};
