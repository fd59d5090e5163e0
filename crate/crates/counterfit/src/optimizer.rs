//! The counter-fitting optimizer: a three-term hinge objective over word
//! pairs, minimized by SGD on individual pair visits.
//!
//! The objective on the transformed space `V'` given the original space `V`:
//!
//! * antonym repel: `sum over (u,w) in A of max(0, delta - d(u,w))`
//! * synonym attract: `sum over (u,w) in S of max(0, d(u,w) - gamma)`
//! * space preservation: `sum over i, j in N(i) of max(0, d'(i,j) - d(i,j))`
//!   where `N(i)` holds the words within distance `rho` of word `i` in the
//!   original space
//!
//! with `d = 1 - cos` and total cost `k1*AR + k2*SA + k3*VSP`. Every epoch
//! visits each pair summand once in a seeded shuffled order, steps the two
//! touched rows against the summand's subgradient, and renormalizes them.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lexicon::{canonical_pair, ConstraintSet, WordPair};
use crate::vecstore::{dot, norm, VectorStore};

/// All knobs of the optimization, with the defaults used throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Ideal minimum distance between antonyms (1.0 = orthogonality).
    pub delta: f64,
    /// Ideal maximum distance between synonyms.
    pub gamma: f64,
    /// Radius of the original-space neighborhoods preserved by the VSP term.
    pub rho: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Seed for the per-epoch shuffle of the pair list.
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            delta: 1.0,
            gamma: 0.0,
            rho: 0.2,
            k1: 1.0,
            k2: 1.0,
            k3: 1.0,
            epochs: 20,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Validation(msg.to_string()))
            }
        };
        check(
            (0.0..=2.0).contains(&self.delta) && self.delta.is_finite(),
            "delta must be in [0, 2]",
        )?;
        check(
            (0.0..=2.0).contains(&self.gamma) && self.gamma.is_finite(),
            "gamma must be in [0, 2]",
        )?;
        check(
            self.rho > 0.0 && self.rho < 2.0,
            "rho must be in the open interval (0, 2)",
        )?;
        check(
            self.k1 >= 0.0 && self.k2 >= 0.0 && self.k3 >= 0.0,
            "term weights k1, k2, k3 must be non-negative",
        )?;
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning rate must be positive",
        )
    }

    /// Sets one field from its config-file/flag name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Validation(format!("invalid {what} value {value:?}"));
        match key {
            "delta" => self.delta = value.parse().map_err(|_| bad(key))?,
            "gamma" => self.gamma = value.parse().map_err(|_| bad(key))?,
            "rho" => self.rho = value.parse().map_err(|_| bad(key))?,
            "k1" => self.k1 = value.parse().map_err(|_| bad(key))?,
            "k2" => self.k2 = value.parse().map_err(|_| bad(key))?,
            "k3" => self.k3 = value.parse().map_err(|_| bad(key))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad(key))?,
            "learning_rate" => self.learning_rate = value.parse().map_err(|_| bad(key))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            _ => return Err(Error::Validation(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a plain-text `key = value` config, starting from the defaults.
    pub fn from_config_str(text: &str, origin: &Path) -> Result<Self> {
        let mut hp = Hyperparams::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(origin, lineno + 1, "expected `key = value`")
            })?;
            hp.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(origin, lineno + 1, e.to_string()))?;
        }
        hp.validate()?;
        Ok(hp)
    }

    pub fn load_config(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut text = String::new();
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| Error::io(path, e))?;
        Self::from_config_str(&text, path)
    }
}

/// The three summand families of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostTerm {
    AntonymRepel,
    SynonymAttract,
    SpacePreservation,
}

/// `max(0, x)`: each constraint stops costing anything once its margin holds.
pub fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

/// Per-word sets `N(i)` of original-space neighbors within radius rho,
/// with the original distance cached per pair.
#[derive(Debug, Clone, Default)]
pub struct NeighborhoodIndex {
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl NeighborhoodIndex {
    pub fn empty(n: usize) -> Self {
        NeighborhoodIndex {
            neighbors: vec![Vec::new(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Neighbors of `i` as `(j, original distance)`, ascending by `j`.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Total number of ordered `(i, j)` pairs.
    pub fn ordered_pair_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Copy of the index with the given unordered pairs removed.
    pub fn without_pairs(&self, exclude: &BTreeSet<WordPair>) -> Self {
        if exclude.is_empty() {
            return self.clone();
        }
        let neighbors = self
            .neighbors
            .iter()
            .enumerate()
            .map(|(i, list)| {
                list.iter()
                    .filter(|&&(j, _)| !exclude.contains(&canonical_pair(i, j)))
                    .copied()
                    .collect()
            })
            .collect();
        NeighborhoodIndex { neighbors }
    }
}

/// Computes the exact threshold neighborhoods `N(i)` over all word pairs,
/// one block pair of the matrix at a time. Output is deterministic for any
/// thread count.
pub fn compute_neighborhoods(store: &VectorStore, rho: f64) -> Result<NeighborhoodIndex> {
    if !(rho > 0.0 && rho < 2.0) {
        return Err(Error::Validation(format!(
            "rho must be in the open interval (0, 2), got {rho}"
        )));
    }
    if !store.is_normalized() {
        return Err(Error::Validation(
            "neighborhoods require a normalized store".into(),
        ));
    }
    let n = store.len();
    // Per-row norms, so the cached distance is computed by exactly the same
    // expression the per-pair gradient evaluates. A preservation pair then
    // starts with a hinge argument of exactly zero, not a few ulps off.
    let norms: Vec<f64> = (0..n).map(|i| norm(store.row(i))).collect();
    const BLOCK: usize = 512;
    let nblocks = n.div_ceil(BLOCK);
    let block_pairs: Vec<(usize, usize)> = (0..nblocks)
        .flat_map(|a| (a..nblocks).map(move |b| (a, b)))
        .collect();

    let found: Vec<Vec<(u32, u32, f64)>> = block_pairs
        .par_iter()
        .map(|&(a, b)| {
            let mut local = Vec::new();
            let (a_start, a_end) = (a * BLOCK, ((a + 1) * BLOCK).min(n));
            let (b_start, b_end) = (b * BLOCK, ((b + 1) * BLOCK).min(n));
            for i in a_start..a_end {
                let row_i = store.row(i);
                let j_start = if a == b { i + 1 } else { b_start };
                for j in j_start..b_end {
                    let d = 1.0 - dot(row_i, store.row(j)) / (norms[i] * norms[j]);
                    if d <= rho {
                        local.push((i as u32, j as u32, d));
                    }
                }
            }
            local
        })
        .collect();

    let mut neighbors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for chunk in found {
        for (i, j, d) in chunk {
            neighbors[i as usize].push((j as usize, d));
            neighbors[j as usize].push((i as usize, d));
        }
    }
    for list in &mut neighbors {
        list.sort_unstable_by_key(|&(j, _)| j);
    }
    Ok(NeighborhoodIndex { neighbors })
}

/// The objective value, split by term. `ar`, `sa` and `vsp` are the raw
/// (unweighted) sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub ar: f64,
    pub sa: f64,
    pub vsp: f64,
    pub total: f64,
}

/// Distance between two unit rows.
fn unit_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - dot(a, b)
}

/// Evaluates the full objective of `store_vp` against the original
/// `store_v`, the constraints, and the given neighborhood index.
pub fn cost(
    store_v: &VectorStore,
    store_vp: &VectorStore,
    constraints: &ConstraintSet,
    nbhd: &NeighborhoodIndex,
    hp: &Hyperparams,
) -> Result<CostBreakdown> {
    hp.validate()?;
    if !store_v.same_vocab(store_vp) {
        return Err(Error::Validation(
            "original and transformed stores index different vocabularies".into(),
        ));
    }
    if !store_v.is_normalized() || !store_vp.is_normalized() {
        return Err(Error::Validation("cost requires normalized stores".into()));
    }
    if nbhd.len() != store_v.len() {
        return Err(Error::Validation(format!(
            "neighborhood index covers {} words, store has {}",
            nbhd.len(),
            store_v.len()
        )));
    }
    constraints.validate(store_v)?;

    let mut ar = 0.0;
    for &(u, w) in constraints.antonyms() {
        ar += hinge(hp.delta - unit_distance(store_vp.row(u), store_vp.row(w)));
    }
    let mut sa = 0.0;
    for &(u, w) in constraints.synonyms() {
        sa += hinge(unit_distance(store_vp.row(u), store_vp.row(w)) - hp.gamma);
    }
    let mut vsp = 0.0;
    for i in 0..store_v.len() {
        for &(j, _) in nbhd.neighbors(i) {
            let original = unit_distance(store_v.row(i), store_v.row(j));
            vsp += hinge(unit_distance(store_vp.row(i), store_vp.row(j)) - original);
        }
    }
    Ok(CostBreakdown {
        ar,
        sa,
        vsp,
        total: hp.k1 * ar + hp.k2 * sa + hp.k3 * vsp,
    })
}

/// Writes the subgradients of one weighted hinge summand into `grad_u` and
/// `grad_w`. Returns `false` (leaving the buffers zeroed) when the hinge is
/// inactive, including exactly at the kink.
///
/// The cosine derivative uses the full quotient rule, so the result is valid
/// for rows of any non-zero norm, not just unit rows.
fn gradient_into(
    term: CostTerm,
    row_u: &[f64],
    row_w: &[f64],
    reference_distance: f64,
    hp: &Hyperparams,
    grad_u: &mut [f64],
    grad_w: &mut [f64],
) -> bool {
    let norm_u = norm(row_u);
    let norm_w = norm(row_w);
    debug_assert!(norm_u > 0.0 && norm_w > 0.0);
    let cos = dot(row_u, row_w) / (norm_u * norm_w);
    let d = 1.0 - cos;
    let (active, weight) = match term {
        CostTerm::AntonymRepel => (reference_distance - d > 0.0, -hp.k1),
        CostTerm::SynonymAttract => (d - reference_distance > 0.0, hp.k2),
        CostTerm::SpacePreservation => (d - reference_distance > 0.0, hp.k3),
    };
    if !active {
        grad_u.fill(0.0);
        grad_w.fill(0.0);
        return false;
    }
    // d(d)/du = (cos / |u|^2) u - w / (|u||w|), symmetrically for w.
    let self_u = cos / (norm_u * norm_u);
    let self_w = cos / (norm_w * norm_w);
    let cross = 1.0 / (norm_u * norm_w);
    for t in 0..row_u.len() {
        grad_u[t] = weight * (self_u * row_u[t] - cross * row_w[t]);
        grad_w[t] = weight * (self_w * row_w[t] - cross * row_u[t]);
    }
    true
}

/// Subgradients of one term's weighted hinge summand with respect to both
/// rows. For the repel/attract terms the reference distance is delta/gamma;
/// for space preservation it is the pair's original-space distance.
pub fn pair_gradient(
    term: CostTerm,
    store: &VectorStore,
    u: usize,
    w: usize,
    reference_distance: f64,
    hp: &Hyperparams,
) -> (Vec<f64>, Vec<f64>) {
    let mut grad_u = vec![0.0; store.dim()];
    let mut grad_w = vec![0.0; store.dim()];
    gradient_into(
        term,
        store.row(u),
        store.row(w),
        reference_distance,
        hp,
        &mut grad_u,
        &mut grad_w,
    );
    (grad_u, grad_w)
}

/// One pair visit in the SGD schedule.
#[derive(Debug, Clone, Copy)]
struct PairItem {
    term: CostTerm,
    u: u32,
    w: u32,
    reference: f64,
}

/// The epoch visit list: every repel pair, every attract pair, and every
/// ordered preservation pair exactly once. Terms with a zero weight are not
/// enumerated. Antonym pairs are dropped from the preservation term: holding
/// a pair at its original closeness while also repelling it would cancel the
/// repulsion, and the explicit constraint wins.
fn build_items(
    constraints: &ConstraintSet,
    vsp_index: &NeighborhoodIndex,
    hp: &Hyperparams,
) -> Vec<PairItem> {
    let mut items = Vec::new();
    if hp.k1 > 0.0 {
        for &(u, w) in constraints.antonyms() {
            items.push(PairItem {
                term: CostTerm::AntonymRepel,
                u: u as u32,
                w: w as u32,
                reference: hp.delta,
            });
        }
    }
    if hp.k2 > 0.0 {
        for &(u, w) in constraints.synonyms() {
            items.push(PairItem {
                term: CostTerm::SynonymAttract,
                u: u as u32,
                w: w as u32,
                reference: hp.gamma,
            });
        }
    }
    if hp.k3 > 0.0 {
        for i in 0..vsp_index.len() {
            for &(j, original) in vsp_index.neighbors(i) {
                items.push(PairItem {
                    term: CostTerm::SpacePreservation,
                    u: i as u32,
                    w: j as u32,
                    reference: original,
                });
            }
        }
    }
    items
}

fn renormalize(row: &mut [f64]) {
    let n = norm(row);
    if n > 0.0 {
        for x in row {
            *x /= n;
        }
    }
}

/// Disjoint mutable views of rows `a` and `b`.
fn two_rows_mut(data: &mut [f64], dim: usize, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert_ne!(a, b);
    if a < b {
        let (head, tail) = data.split_at_mut(b * dim);
        (&mut head[a * dim..(a + 1) * dim], &mut tail[..dim])
    } else {
        let (head, tail) = data.split_at_mut(a * dim);
        let b_row = &mut head[b * dim..(b + 1) * dim];
        (&mut tail[..dim], b_row)
    }
}

fn validate_counter_fit_inputs(
    store: &VectorStore,
    constraints: &ConstraintSet,
    nbhd: &NeighborhoodIndex,
    hp: &Hyperparams,
) -> Result<()> {
    hp.validate()?;
    if !store.is_normalized() {
        return Err(Error::Validation(
            "counter-fitting requires a normalized store".into(),
        ));
    }
    constraints.validate(store)?;
    if nbhd.len() != store.len() {
        return Err(Error::Validation(format!(
            "neighborhood index covers {} words, store has {}",
            nbhd.len(),
            store.len()
        )));
    }
    Ok(())
}

/// Runs the full counter-fitting procedure, computing the neighborhoods from
/// the input store first (skipped when `k3` is zero, in which case the `vsp`
/// column of the trace is zero).
///
/// Returns the transformed store and the cost trace: entry 0 is the cost
/// before any update, entry `e` the cost after epoch `e`. The run is
/// deterministic given the inputs and the seed.
pub fn counter_fit(
    store: &VectorStore,
    constraints: &ConstraintSet,
    hp: &Hyperparams,
) -> Result<(VectorStore, Vec<CostBreakdown>)> {
    hp.validate()?;
    let nbhd = if hp.k3 > 0.0 {
        compute_neighborhoods(store, hp.rho)?
    } else {
        NeighborhoodIndex::empty(store.len())
    };
    counter_fit_with_index(store, constraints, &nbhd, hp)
}

/// As [`counter_fit`] with a precomputed neighborhood index, so several runs
/// over the same input space can share the all-pairs pass.
pub fn counter_fit_with_index(
    store: &VectorStore,
    constraints: &ConstraintSet,
    nbhd: &NeighborhoodIndex,
    hp: &Hyperparams,
) -> Result<(VectorStore, Vec<CostBreakdown>)> {
    validate_counter_fit_inputs(store, constraints, nbhd, hp)?;
    let vsp_index = nbhd.without_pairs(constraints.antonyms());
    let mut items = build_items(constraints, &vsp_index, hp);

    let mut out = store.clone();
    let mut trace = vec![cost(store, &out, constraints, &vsp_index, hp)?];
    if hp.epochs == 0 || items.is_empty() {
        trace.extend(std::iter::repeat(trace[0]).take(hp.epochs));
        return Ok((out, trace));
    }

    let dim = out.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut grad_u = vec![0.0; dim];
    let mut grad_w = vec![0.0; dim];
    for _ in 0..hp.epochs {
        items.shuffle(&mut rng);
        for item in &items {
            let (row_u, row_w) =
                two_rows_mut(out.matrix_mut(), dim, item.u as usize, item.w as usize);
            if gradient_into(
                item.term,
                row_u,
                row_w,
                item.reference,
                hp,
                &mut grad_u,
                &mut grad_w,
            ) {
                for t in 0..dim {
                    row_u[t] -= hp.learning_rate * grad_u[t];
                    row_w[t] -= hp.learning_rate * grad_w[t];
                }
                renormalize(row_u);
                renormalize(row_w);
            }
        }
        trace.push(cost(store, &out, constraints, &vsp_index, hp)?);
    }
    Ok((out, trace))
}

/// Row-major matrix of f64 bit patterns, shared across unsynchronized
/// workers. Lost updates between concurrent visits are tolerated; every load
/// and store is a whole f64, so no torn values can be observed.
struct AtomicMatrix {
    data: Vec<AtomicU64>,
    dim: usize,
}

impl AtomicMatrix {
    fn from_slice(values: &[f64], dim: usize) -> Self {
        AtomicMatrix {
            data: values
                .iter()
                .map(|v| AtomicU64::new(v.to_bits()))
                .collect(),
            dim,
        }
    }

    fn load_row(&self, i: usize, buf: &mut [f64]) {
        for (t, slot) in self.data[i * self.dim..(i + 1) * self.dim].iter().enumerate() {
            buf[t] = f64::from_bits(slot.load(Ordering::Relaxed));
        }
    }

    fn store_row(&self, i: usize, buf: &[f64]) {
        for (t, slot) in self.data[i * self.dim..(i + 1) * self.dim].iter().enumerate() {
            slot.store(buf[t].to_bits(), Ordering::Relaxed);
        }
    }

    fn snapshot_into(&self, out: &mut [f64]) {
        for (slot, value) in self.data.iter().zip(out.iter_mut()) {
            *value = f64::from_bits(slot.load(Ordering::Relaxed));
        }
    }

    fn snapshot_from(&self, values: &[f64]) {
        for (slot, value) in self.data.iter().zip(values) {
            slot.store(value.to_bits(), Ordering::Relaxed);
        }
    }
}

/// Parallel counter-fitting: each epoch's shuffled pair list is split across
/// `threads` workers that update rows without synchronization. The result is
/// not deterministic, but satisfies the same invariants as the
/// single-threaded mode (unit rows, unchanged vocabulary).
pub fn counter_fit_parallel(
    store: &VectorStore,
    constraints: &ConstraintSet,
    hp: &Hyperparams,
    threads: usize,
) -> Result<(VectorStore, Vec<CostBreakdown>)> {
    if threads == 0 {
        return Err(Error::Validation("thread count must be at least 1".into()));
    }
    if threads == 1 {
        return counter_fit(store, constraints, hp);
    }
    hp.validate()?;
    let nbhd = if hp.k3 > 0.0 {
        compute_neighborhoods(store, hp.rho)?
    } else {
        NeighborhoodIndex::empty(store.len())
    };
    validate_counter_fit_inputs(store, constraints, &nbhd, hp)?;
    let vsp_index = nbhd.without_pairs(constraints.antonyms());
    let mut items = build_items(constraints, &vsp_index, hp);

    let mut out = store.clone();
    let mut trace = vec![cost(store, &out, constraints, &vsp_index, hp)?];
    if hp.epochs == 0 || items.is_empty() {
        trace.extend(std::iter::repeat(trace[0]).take(hp.epochs));
        return Ok((out, trace));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Validation(format!("cannot build thread pool: {e}")))?;

    let dim = out.dim();
    let matrix = AtomicMatrix::from_slice(out.matrix(), dim);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let chunk_size = items.len().div_ceil(threads);
    for _ in 0..hp.epochs {
        items.shuffle(&mut rng);
        pool.install(|| {
            items.par_chunks(chunk_size).for_each(|chunk| {
                let mut row_u = vec![0.0; dim];
                let mut row_w = vec![0.0; dim];
                let mut grad_u = vec![0.0; dim];
                let mut grad_w = vec![0.0; dim];
                for item in chunk {
                    let (u, w) = (item.u as usize, item.w as usize);
                    matrix.load_row(u, &mut row_u);
                    matrix.load_row(w, &mut row_w);
                    if gradient_into(
                        item.term,
                        &row_u,
                        &row_w,
                        item.reference,
                        hp,
                        &mut grad_u,
                        &mut grad_w,
                    ) {
                        for t in 0..dim {
                            row_u[t] -= hp.learning_rate * grad_u[t];
                            row_w[t] -= hp.learning_rate * grad_w[t];
                        }
                        renormalize(&mut row_u);
                        renormalize(&mut row_w);
                        matrix.store_row(u, &row_u);
                        matrix.store_row(w, &row_w);
                    }
                }
            });
        });
        matrix.snapshot_into(out.matrix_mut());
        // concurrent writes may leave a row slightly off unit norm
        for i in 0..out.len() {
            renormalize(out.row_mut(i));
        }
        trace.push(cost(store, &out, constraints, &vsp_index, hp)?);
        matrix.snapshot_from(out.matrix());
    }
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::build_constraint_set;
    use rand::Rng;

    fn random_store(n: usize, dim: usize, seed: u64) -> VectorStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut store = VectorStore::new(words, dim, data).unwrap();
        store.normalize().unwrap();
        store
    }

    fn store_at_cosine(c: f64) -> VectorStore {
        let theta = c.acos();
        let mut store = VectorStore::new(
            vec!["u".into(), "w".into()],
            2,
            vec![1.0, 0.0, theta.cos(), theta.sin()],
        )
        .unwrap();
        store.normalize().unwrap();
        store
    }

    fn constraints(
        synonyms: &[(usize, usize)],
        antonyms: &[(usize, usize)],
    ) -> ConstraintSet {
        let syn: BTreeSet<WordPair> = synonyms.iter().copied().collect();
        let ant: BTreeSet<WordPair> = antonyms.iter().copied().collect();
        build_constraint_set(&[syn], &[ant]).0
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge(-0.3), 0.0);
        assert_eq!(hinge(0.0), 0.0);
        assert_eq!(hinge(0.7), 0.7);
    }

    #[test]
    fn hyperparams_validation() {
        let mut hp = Hyperparams::default();
        assert!(hp.validate().is_ok());
        hp.rho = 0.0;
        assert!(hp.validate().is_err());
        hp.rho = 0.2;
        hp.k2 = -1.0;
        assert!(hp.validate().is_err());
        hp.k2 = 1.0;
        hp.learning_rate = 0.0;
        assert!(hp.validate().is_err());
    }

    #[test]
    fn config_parsing_and_overrides() {
        let text = "# comment\ndelta = 0.8\nepochs = 5\nseed = 42 # inline\n";
        let hp = Hyperparams::from_config_str(text, Path::new("<test>")).unwrap();
        assert_eq!(hp.delta, 0.8);
        assert_eq!(hp.epochs, 5);
        assert_eq!(hp.seed, 42);
        assert_eq!(hp.gamma, 0.0);

        assert!(Hyperparams::from_config_str("wibble = 3\n", Path::new("<t>")).is_err());
        assert!(Hyperparams::from_config_str("delta\n", Path::new("<t>")).is_err());
        assert!(Hyperparams::from_config_str("rho = 9\n", Path::new("<t>")).is_err());
    }

    #[test]
    fn orthogonal_vectors_have_empty_neighborhoods() {
        let mut store = VectorStore::new(
            vec!["a".into(), "b".into(), "c".into()],
            3,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        store.normalize().unwrap();
        let nbhd = compute_neighborhoods(&store, 0.2).unwrap();
        for i in 0..3 {
            assert!(nbhd.neighbors(i).is_empty());
        }
    }

    #[test]
    fn identical_vectors_are_mutual_neighbors() {
        let store = store_at_cosine(1.0);
        let nbhd = compute_neighborhoods(&store, 0.05).unwrap();
        assert_eq!(nbhd.neighbors(0).len(), 1);
        assert_eq!(nbhd.neighbors(1).len(), 1);
        assert_eq!(nbhd.neighbors(0)[0].0, 1);
    }

    #[test]
    fn neighborhood_rho_validation() {
        let store = random_store(4, 3, 0);
        assert!(compute_neighborhoods(&store, 0.0).is_err());
        assert!(compute_neighborhoods(&store, 2.0).is_err());
        assert!(compute_neighborhoods(&store, -0.1).is_err());
    }

    /// Naive all-pairs double loop, the oracle for the blocked computation.
    fn neighborhood_oracle(store: &VectorStore, rho: f64) -> Vec<Vec<(usize, f64)>> {
        let n = store.len();
        let mut out = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let cosine = |a: &[f64], b: &[f64]| -> f64 {
                    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
                };
                let d = 1.0 - cosine(store.row(i), store.row(j));
                if d <= rho {
                    out[i].push((j, d));
                }
            }
        }
        out
    }

    #[test]
    fn neighborhoods_match_naive_oracle() {
        // low dimension so that the threshold actually fires
        let store = random_store(300, 3, 9);
        let nbhd = compute_neighborhoods(&store, 0.2).unwrap();
        let oracle = neighborhood_oracle(&store, 0.2);
        let mut total = 0;
        for i in 0..store.len() {
            let got = nbhd.neighbors(i);
            assert_eq!(
                got.iter().map(|&(j, _)| j).collect::<Vec<_>>(),
                oracle[i].iter().map(|&(j, _)| j).collect::<Vec<_>>(),
                "membership differs at row {i}"
            );
            for (a, b) in got.iter().zip(&oracle[i]) {
                assert!((a.1 - b.1).abs() < 1e-12);
            }
            total += oracle[i].len();
        }
        assert!(total > 0, "oracle found no pairs; test store too sparse");
    }

    #[test]
    fn cost_identity_transform_is_zero() {
        let store = random_store(10, 4, 1);
        let empty = constraints(&[], &[]);
        let nbhd = compute_neighborhoods(&store, 0.3).unwrap();
        let c = cost(&store, &store, &empty, &nbhd, &Hyperparams::default()).unwrap();
        assert_eq!(c.ar, 0.0);
        assert_eq!(c.sa, 0.0);
        assert_eq!(c.vsp, 0.0);
        assert_eq!(c.total, 0.0);
    }

    /// Exactly orthogonal rows, with no normalization rounding.
    fn orthogonal_store() -> VectorStore {
        let mut store = VectorStore::new(
            vec!["u".into(), "w".into()],
            2,
            vec![1.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        store.normalize().unwrap();
        store
    }

    #[test]
    fn cost_antonym_at_margin_contributes_nothing() {
        let store = orthogonal_store(); // distance exactly 1.0
        let cs = constraints(&[], &[(0, 1)]);
        let nbhd = NeighborhoodIndex::empty(2);
        let c = cost(&store, &store, &cs, &nbhd, &Hyperparams::default()).unwrap();
        assert_eq!(c.ar, 0.0);
    }

    #[test]
    fn cost_matches_independent_oracle() {
        let store_v = random_store(30, 5, 2);
        let store_vp = random_store(30, 5, 3);
        let all: Vec<(usize, usize)> = (0..30)
            .flat_map(|i| ((i + 1)..30).map(move |j| (i, j)))
            .collect();
        let syn: Vec<(usize, usize)> = all.iter().copied().take(10).collect();
        let ant: Vec<(usize, usize)> = all.iter().copied().skip(100).take(10).collect();
        let cs = constraints(&syn, &ant);
        let hp = Hyperparams {
            k1: 0.7,
            k2: 1.3,
            k3: 0.9,
            rho: 0.6,
            ..Hyperparams::default()
        };
        let nbhd = compute_neighborhoods(&store_v, hp.rho).unwrap();
        let got = cost(&store_v, &store_vp, &cs, &nbhd, &hp).unwrap();

        // independently coded sums, using the raw cosine definition
        let dist = |s: &VectorStore, i: usize, j: usize| -> f64 {
            let (a, b) = (s.row(i), s.row(j));
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            1.0 - d / (na * nb)
        };
        let mut ar = 0.0;
        for &(u, w) in cs.antonyms() {
            ar += f64::max(0.0, hp.delta - dist(&store_vp, u, w));
        }
        let mut sa = 0.0;
        for &(u, w) in cs.synonyms() {
            sa += f64::max(0.0, dist(&store_vp, u, w) - hp.gamma);
        }
        let mut vsp = 0.0;
        for i in 0..30 {
            for j in 0..30 {
                if i != j && dist(&store_v, i, j) <= hp.rho {
                    vsp += f64::max(0.0, dist(&store_vp, i, j) - dist(&store_v, i, j));
                }
            }
        }
        assert!((got.ar - ar).abs() < 1e-9, "ar {} vs {ar}", got.ar);
        assert!((got.sa - sa).abs() < 1e-9, "sa {} vs {sa}", got.sa);
        assert!((got.vsp - vsp).abs() < 1e-9, "vsp {} vs {vsp}", got.vsp);
        let total = hp.k1 * ar + hp.k2 * sa + hp.k3 * vsp;
        assert!((got.total - total).abs() < 1e-9);
        assert!(got.ar >= 0.0 && got.sa >= 0.0 && got.vsp >= 0.0);
    }

    #[test]
    fn cost_rejects_vocab_mismatch() {
        let a = random_store(5, 3, 1);
        let b = random_store(6, 3, 1);
        let empty = constraints(&[], &[]);
        let nbhd = NeighborhoodIndex::empty(5);
        assert!(cost(&a, &b, &empty, &nbhd, &Hyperparams::default()).is_err());
    }

    #[test]
    fn gradient_inactive_hinge_is_zero() {
        let store = store_at_cosine(-0.5); // distance 1.5 > delta
        let hp = Hyperparams::default();
        let (gu, gw) = pair_gradient(CostTerm::AntonymRepel, &store, 0, 1, hp.delta, &hp);
        assert!(gu.iter().all(|&x| x == 0.0));
        assert!(gw.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_zero_exactly_at_kink() {
        let store = orthogonal_store(); // distance exactly delta
        let hp = Hyperparams::default();
        let (gu, _) = pair_gradient(CostTerm::AntonymRepel, &store, 0, 1, hp.delta, &hp);
        assert!(gu.iter().all(|&x| x == 0.0));
        let (gu, _) = pair_gradient(CostTerm::SynonymAttract, &store, 0, 1, 1.0, &hp);
        assert!(gu.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn attract_gradient_is_a_descent_direction_for_distance() {
        let store = store_at_cosine(0.3);
        let hp = Hyperparams::default();
        let (gu, gw) = pair_gradient(CostTerm::SynonymAttract, &store, 0, 1, hp.gamma, &hp);
        let step = 1e-4;
        let u_new: Vec<f64> = store.row(0).iter().zip(&gu).map(|(x, g)| x - step * g).collect();
        let w_new: Vec<f64> = store.row(1).iter().zip(&gw).map(|(x, g)| x - step * g).collect();
        let before = 1.0 - dot(store.row(0), store.row(1));
        let after = {
            let nu = norm(&u_new);
            let nw = norm(&w_new);
            1.0 - dot(&u_new, &w_new) / (nu * nw)
        };
        assert!(after < before, "step should reduce distance: {after} vs {before}");
    }

    /// Central finite differences of the weighted hinge summand.
    fn finite_difference(
        term: CostTerm,
        store: &VectorStore,
        u: usize,
        w: usize,
        reference: f64,
        hp: &Hyperparams,
    ) -> (Vec<f64>, Vec<f64>) {
        let summand = |row_u: &[f64], row_w: &[f64]| -> f64 {
            let nu: f64 = row_u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nw: f64 = row_w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let cos: f64 = row_u.iter().zip(row_w).map(|(x, y)| x * y).sum::<f64>() / (nu * nw);
            let d = 1.0 - cos;
            let (arg, k) = match term {
                CostTerm::AntonymRepel => (reference - d, hp.k1),
                CostTerm::SynonymAttract => (d - reference, hp.k2),
                CostTerm::SpacePreservation => (d - reference, hp.k3),
            };
            k * arg.max(0.0)
        };
        let h = 1e-5;
        let dim = store.dim();
        let mut gu = vec![0.0; dim];
        let mut gw = vec![0.0; dim];
        for t in 0..dim {
            let mut up = store.row(u).to_vec();
            let mut um = store.row(u).to_vec();
            up[t] += h;
            um[t] -= h;
            gu[t] = (summand(&up, store.row(w)) - summand(&um, store.row(w))) / (2.0 * h);
            let mut wp = store.row(w).to_vec();
            let mut wm = store.row(w).to_vec();
            wp[t] += h;
            wm[t] -= h;
            gw[t] = (summand(store.row(u), &wp) - summand(store.row(u), &wm)) / (2.0 * h);
        }
        (gu, gw)
    }

    fn assert_close_rel(analytic: &[f64], numeric: &[f64], tol: f64) {
        for (a, n) in analytic.iter().zip(numeric) {
            let scale = a.abs().max(n.abs()).max(1e-8);
            assert!(
                (a - n).abs() / scale < tol,
                "gradient mismatch: analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hp = Hyperparams {
            k1: 0.9,
            k2: 1.1,
            k3: 0.7,
            ..Hyperparams::default()
        };
        let mut checked = 0;
        while checked < 120 {
            let store = random_store(2, 5, rng.random());
            let d = 1.0 - dot(store.row(0), store.row(1));
            let (term, reference) = match checked % 3 {
                0 => (CostTerm::AntonymRepel, hp.delta),
                1 => (CostTerm::SynonymAttract, hp.gamma),
                _ => (CostTerm::SpacePreservation, d / 2.0),
            };
            // only check active, non-kink pairs
            let active = match term {
                CostTerm::AntonymRepel => reference - d > 1e-3,
                _ => d - reference > 1e-3,
            };
            if !active {
                continue;
            }
            let (gu, gw) = pair_gradient(term, &store, 0, 1, reference, &hp);
            let (fu, fw) = finite_difference(term, &store, 0, 1, reference, &hp);
            assert_close_rel(&gu, &fu, 1e-4);
            assert_close_rel(&gw, &fw, 1e-4);
            checked += 1;
        }
    }

    #[test]
    fn counter_fit_identity_with_no_constraints_and_no_vsp() {
        let store = random_store(12, 4, 8);
        let hp = Hyperparams {
            k3: 0.0,
            ..Hyperparams::default()
        };
        let (out, trace) = counter_fit(&store, &constraints(&[], &[]), &hp).unwrap();
        assert_eq!(out.matrix(), store.matrix());
        assert_eq!(trace.len(), hp.epochs + 1);
        assert_eq!(trace[0].total, 0.0);
    }

    #[test]
    fn counter_fit_identity_fixed_point_with_vsp() {
        // no constraints: every preservation hinge starts exactly at its kink
        let store = random_store(20, 3, 4);
        let (out, trace) = counter_fit(&store, &constraints(&[], &[]), &Hyperparams::default())
            .unwrap();
        assert_eq!(out.matrix(), store.matrix());
        assert!(trace.iter().all(|c| c.total == 0.0));
    }

    #[test]
    fn counter_fit_epochs_zero_returns_copy_and_one_cost() {
        let store = random_store(8, 3, 2);
        let cs = constraints(&[(0, 1)], &[(2, 3)]);
        let hp = Hyperparams {
            epochs: 0,
            ..Hyperparams::default()
        };
        let (out, trace) = counter_fit(&store, &cs, &hp).unwrap();
        assert_eq!(out.matrix(), store.matrix());
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn antonym_pair_repelled_toward_delta() {
        let store = store_at_cosine(0.9);
        let cs = constraints(&[], &[(0, 1)]);
        let hp = Hyperparams {
            k2: 0.0,
            k3: 0.0,
            ..Hyperparams::default()
        };
        let nbhd = NeighborhoodIndex::empty(2);
        let mut previous = 0.1;
        let mut current = store.clone();
        for _ in 0..hp.epochs {
            let one = Hyperparams { epochs: 1, ..hp.clone() };
            let (next, _) = counter_fit_with_index(&current, &cs, &nbhd, &one).unwrap();
            let d = 1.0 - dot(next.row(0), next.row(1));
            if previous < hp.delta {
                assert!(d > previous, "distance must grow while the hinge is active: {d} vs {previous}");
            } else {
                assert_eq!(d, previous, "inactive pair must stay put");
            }
            previous = d;
            current = next;
        }
        assert!(previous >= 0.9, "final distance {previous} below 0.9");
    }

    #[test]
    fn orthogonality_pull_shrinks_margin_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let hp = Hyperparams {
            k2: 0.0,
            k3: 0.0,
            epochs: 1,
            ..Hyperparams::default()
        };
        // One epoch moves a pair by at most ~2*lr in distance, so the gap can
        // only be guaranteed to shrink when it starts larger than the step.
        let step_bound = 2.5 * hp.learning_rate;
        let mut active_checked = 0;
        for _ in 0..200 {
            let store = random_store(2, 6, rng.random());
            let d0 = 1.0 - dot(store.row(0), store.row(1));
            let cs = constraints(&[], &[(0, 1)]);
            let (out, _) = counter_fit(&store, &cs, &hp).unwrap();
            let d1 = 1.0 - dot(out.row(0), out.row(1));
            if d0 < hp.delta - step_bound {
                assert!(
                    (d1 - hp.delta).abs() < (d0 - hp.delta).abs(),
                    "active pair must move toward delta: {d0} -> {d1}"
                );
                active_checked += 1;
            } else if d0 >= hp.delta {
                assert_eq!(d0, d1, "inactive pair must not move");
            }
        }
        assert!(active_checked >= 20, "only {active_checked} active pairs sampled");
    }

    #[test]
    fn counter_fit_is_deterministic() {
        let store = random_store(25, 6, 13);
        let all: Vec<(usize, usize)> = (0..25)
            .flat_map(|i| ((i + 1)..25).map(move |j| (i, j)))
            .collect();
        let cs = constraints(&all[3..9], &all[40..47]);
        let hp = Hyperparams {
            rho: 0.5,
            ..Hyperparams::default()
        };
        let (a, trace_a) = counter_fit(&store, &cs, &hp).unwrap();
        let (b, trace_b) = counter_fit(&store, &cs, &hp).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        assert_eq!(trace_a.len(), trace_b.len());
        for (x, y) in trace_a.iter().zip(&trace_b) {
            assert_eq!(x.total, y.total);
        }
        // a different seed shuffles differently
        let hp2 = Hyperparams { seed: 1, ..hp };
        let (c, _) = counter_fit(&store, &cs, &hp2).unwrap();
        assert_ne!(a.matrix(), c.matrix());
    }

    #[test]
    fn counter_fit_leaves_input_unmodified_and_output_unit_norm() {
        let store = random_store(15, 5, 21);
        let before = store.matrix().to_vec();
        let cs = constraints(&[(0, 1), (2, 3)], &[(4, 5)]);
        let (out, _) = counter_fit(&store, &cs, &Hyperparams::default()).unwrap();
        assert_eq!(store.matrix(), &before[..]);
        assert!(store.same_vocab(&out));
        for i in 0..out.len() {
            assert!((norm(out.row(i)) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cost_trace_descends_on_fixture_instance() {
        let store = random_store(40, 8, 0);
        let all: Vec<(usize, usize)> = (0..40)
            .flat_map(|i| ((i + 1)..40).map(move |j| (i, j)))
            .collect();
        let cs = constraints(&all[100..115], &all[300..315]);
        let (_, trace) = counter_fit(&store, &cs, &Hyperparams::default()).unwrap();
        assert_eq!(trace.len(), 21);
        let increases = trace
            .windows(2)
            .filter(|w| w[1].total > w[0].total + 1e-12)
            .count();
        assert!(increases <= 1, "{increases} cost increases over 20 epochs");
        assert!(trace[20].total < trace[0].total);
    }

    #[test]
    fn parallel_mode_satisfies_invariants() {
        let store = random_store(30, 6, 17);
        let all: Vec<(usize, usize)> = (0..30)
            .flat_map(|i| ((i + 1)..30).map(move |j| (i, j)))
            .collect();
        let cs = constraints(&all[10..20], &all[200..210]);
        let hp = Hyperparams {
            rho: 0.4,
            ..Hyperparams::default()
        };
        let (out, trace) = counter_fit_parallel(&store, &cs, &hp, 4).unwrap();
        assert!(store.same_vocab(&out));
        assert!(out.is_normalized());
        for i in 0..out.len() {
            assert!((norm(out.row(i)) - 1.0).abs() < 1e-9);
        }
        assert_eq!(trace.len(), hp.epochs + 1);
        assert!(trace[hp.epochs].total < trace[0].total);
        assert!(counter_fit_parallel(&store, &cs, &hp, 0).is_err());
    }

    #[test]
    fn two_rows_mut_returns_disjoint_views() {
        let mut data = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let (a, b) = two_rows_mut(&mut data, 2, 2, 0);
        assert_eq!(a, &[4.0, 5.0]);
        assert_eq!(b, &[0.0, 1.0]);
    }
}
