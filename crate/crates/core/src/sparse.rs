//! Search for sparse {0,1} combiners that remain valid.

use itertools::Itertools;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, WaxError};
use crate::matrix::{CMatrix, C64};
use crate::model::{Dims, RngSpec};
use crate::validity::{r_max, validate_combiner};

pub const DEFAULT_SEARCH_BUDGET: usize = 5_000;

#[derive(Clone, Debug, Serialize)]
pub struct SearchResult {
    pub a: CMatrix,
    pub ones: usize,
    pub sum_modules: usize,
    pub valid: bool,
    /// Validity evaluations spent.
    pub iterations: usize,
}

/// Two-input sum modules needed to implement a combiner with `ones` ones.
pub fn sum_modules(ones: usize, t: usize) -> usize {
    ones.saturating_sub(t)
}

/// Boolean pattern matrix with row/column bookkeeping.
#[derive(Clone)]
struct Pattern {
    m: usize,
    t: usize,
    bits: Vec<bool>,
}

impl Pattern {
    fn new(m: usize, t: usize) -> Self {
        Self {
            m,
            t,
            bits: vec![false; m * t],
        }
    }

    fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.t + j]
    }

    fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.t + j] = v;
    }

    fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn row_count(&self, i: usize) -> usize {
        (0..self.t).filter(|&j| self.get(i, j)).count()
    }

    fn col_count(&self, j: usize) -> usize {
        (0..self.m).filter(|&i| self.get(i, j)).count()
    }

    fn positions(&self, value: bool) -> Vec<(usize, usize)> {
        (0..self.m)
            .cartesian_product(0..self.t)
            .filter(|&(i, j)| self.get(i, j) == value)
            .collect()
    }

    fn to_matrix(&self) -> CMatrix {
        CMatrix::from_fn(self.m, self.t, |i, j| {
            C64::new(if self.get(i, j) { 1.0 } else { 0.0 }, 0.0)
        })
    }

    /// Puts a one in every empty column, at a random row.
    fn cover_columns(&mut self, rng: &mut impl Rng) {
        for j in 0..self.t {
            if self.col_count(j) == 0 {
                let i = rng.random_range(0..self.m);
                self.set(i, j, true);
            }
        }
    }
}

/// Random {0,1} combiner with `round(fraction·M·T)` ones.
///
/// Block `p` first receives one 1 per row in `L` distinct columns taken
/// cyclically from a random column permutation, so every block has an
/// `L`-column support and every row is covered. Uncovered columns then get a
/// 1 each, and the remaining budget goes to uniformly random empty positions.
pub fn random_sparse_a(dims: &Dims, ones_fraction: f64, rng: RngSpec) -> Result<CMatrix> {
    dims.require_square()?;
    let Dims { m, l, t, .. } = *dims;
    if !(ones_fraction > 0.0 && ones_fraction <= 1.0) {
        return Err(WaxError::InvalidInput(format!(
            "ones fraction {ones_fraction} is outside (0, 1]"
        )));
    }
    if l > t {
        return Err(WaxError::Precondition(format!(
            "blocks need L={l} distinct columns but T={t}"
        )));
    }
    let budget = (ones_fraction * (m * t) as f64).round() as usize;
    if budget < m.max(t) {
        return Err(WaxError::Precondition(format!(
            "{budget} ones cannot cover {m} rows and {t} columns"
        )));
    }
    let mut g = rng.rng();
    let mut perm: Vec<usize> = (0..t).collect();
    perm.shuffle(&mut g);
    let mut pat = Pattern::new(m, t);
    for i in 0..m {
        pat.set(i, perm[i % t], true);
    }
    pat.cover_columns(&mut g);
    let empty = pat.positions(false);
    let extra = budget - pat.ones();
    for idx in index::sample(&mut g, empty.len(), extra) {
        let (i, j) = empty[idx];
        pat.set(i, j, true);
    }
    Ok(pat.to_matrix())
}

/// Rows of cheapest patterns first: each weight-`w` pattern is used up to
/// `cap` times, with copies of one pattern in consecutive positions.
fn structured_rows(m: usize, t: usize, cap: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut rows = Vec::with_capacity(m);
    let mut cols: Vec<usize> = (0..t).collect();
    cols.shuffle(rng);
    'outer: for w in 1..=t {
        let mut patterns: Vec<Vec<usize>> = (0..t)
            .combinations(w)
            .map(|c| c.into_iter().map(|j| cols[j]).collect())
            .collect();
        patterns.shuffle(rng);
        for p in patterns {
            for _ in 0..cap {
                if rows.len() == m {
                    break 'outer;
                }
                rows.push(p.clone());
            }
        }
    }
    rows
}

/// Seed following the counting argument behind the lower bound.
///
/// Row `j` of the pattern list goes to block `j mod P`, so repeated patterns
/// land in distinct blocks and each block holds distinct patterns.
fn structured_seed(dims: &Dims, rng: &mut impl Rng) -> Pattern {
    let Dims { m, k, l, t, .. } = *dims;
    let p = dims.p();
    let cap = r_max(k, l).finite().unwrap_or(p).min(p).max(1);
    let rows = structured_rows(m, t, cap, rng);
    let mut block_order: Vec<usize> = (0..p).collect();
    block_order.shuffle(rng);
    let mut pat = Pattern::new(m, t);
    for (j, cols) in rows.iter().enumerate() {
        let block = block_order[j % p];
        let row = block * l + j / p;
        for &c in cols {
            pat.set(row, c, true);
        }
    }
    pat.cover_columns(rng);
    pat
}

struct Search<'a> {
    dims: &'a Dims,
    rng: RngSpec,
    evals: usize,
    budget: usize,
}

impl Search<'_> {
    fn is_valid(&mut self, pat: &Pattern) -> Result<Option<bool>> {
        if self.evals >= self.budget {
            return Ok(None);
        }
        let stream = self.rng.child(self.evals as u64 + 1);
        self.evals += 1;
        Ok(Some(
            validate_combiner(&pat.to_matrix(), self.dims, stream, 1)?.valid,
        ))
    }
}

/// Grows a valid combiner and prunes ones until no single removal keeps it valid.
///
/// Phase 1 starts from a structured seed near the lower bound and adds random
/// ones until the seed validates. Phase 2 sweeps the ones in a fresh random
/// order each pass, removing any whose removal keeps the matrix valid and
/// every row and column covered. The result is re-checked with three draws.
pub fn minimize_ones(dims: &Dims, rng: RngSpec, budget: usize) -> Result<SearchResult> {
    dims.require_square()?;
    if !dims.admits_wax() {
        return Err(WaxError::Precondition(format!(
            "T={} is below the existence bound for M={}, K={}, L={}",
            dims.t, dims.m, dims.k, dims.l
        )));
    }
    if dims.l > dims.t {
        return Err(WaxError::Precondition("L exceeds T".into()));
    }
    let mut g = rng.child(0).rng();
    let mut search = Search {
        dims,
        rng: rng.child(1),
        evals: 0,
        budget,
    };
    let mut pat = structured_seed(dims, &mut g);

    loop {
        match search.is_valid(&pat)? {
            Some(true) => break,
            Some(false) => {
                let empty = pat.positions(false);
                if empty.is_empty() {
                    return Err(WaxError::SearchFailure(
                        "all-ones combiner is not valid".into(),
                    ));
                }
                let (i, j) = empty[g.random_range(0..empty.len())];
                pat.set(i, j, true);
            }
            None => {
                return Err(WaxError::SearchFailure(format!(
                    "no valid combiner within {budget} evaluations"
                )))
            }
        }
    }

    'sweeps: loop {
        let mut ones = pat.positions(true);
        ones.shuffle(&mut g);
        let mut removed = false;
        for (i, j) in ones {
            if pat.row_count(i) == 1 || pat.col_count(j) == 1 {
                continue;
            }
            pat.set(i, j, false);
            match search.is_valid(&pat)? {
                Some(true) => removed = true,
                Some(false) => pat.set(i, j, true),
                None => {
                    pat.set(i, j, true);
                    break 'sweeps;
                }
            }
        }
        if !removed {
            break;
        }
    }

    let a = pat.to_matrix();
    let valid = validate_combiner(&a, dims, rng.child(2), 3)?.valid;
    let ones = pat.ones();
    Ok(SearchResult {
        a,
        ones,
        sum_modules: sum_modules(ones, dims.t),
        valid,
        iterations: search.evals,
    })
}

/// Runs independent searches on child streams and keeps the sparsest valid result.
pub fn minimize_ones_restarts(
    dims: &Dims,
    rng: RngSpec,
    budget: usize,
    restarts: usize,
) -> Result<SearchResult> {
    let results: Vec<Result<SearchResult>> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| minimize_ones(dims, rng.child(r), budget))
        .collect();
    let mut best: Option<SearchResult> = None;
    let mut last_err = None;
    let mut iterations = 0;
    for r in results {
        match r {
            Ok(res) => {
                iterations += res.iterations;
                if res.valid && best.as_ref().is_none_or(|b| res.ones < b.ones) {
                    best = Some(res);
                }
            }
            Err(e @ WaxError::SearchFailure(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    match best {
        Some(b) => Ok(SearchResult { iterations, ..b }),
        None => Err(last_err.unwrap_or_else(|| {
            WaxError::SearchFailure("no restart produced a confirmed valid combiner".into())
        })),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FractionEstimate {
    pub fraction: f64,
    /// Binomial standard error `sqrt(f(1−f)/n)`.
    pub std_err: f64,
    pub trials: usize,
}

/// Fraction of random sparse combiners that validate with a single channel draw.
pub fn valid_fraction(
    dims: &Dims,
    ones_fraction: f64,
    trials: usize,
    rng: RngSpec,
) -> Result<FractionEstimate> {
    if trials == 0 {
        return Err(WaxError::InvalidInput("trials must be at least 1".into()));
    }
    let outcomes: Vec<bool> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let a = random_sparse_a(dims, ones_fraction, rng.child(2 * i))?;
            Ok(validate_combiner(&a, dims, rng.child(2 * i + 1), 1)?.valid)
        })
        .collect::<Result<_>>()?;
    let n = trials as f64;
    let f = outcomes.iter().filter(|&&v| v).count() as f64 / n;
    Ok(FractionEstimate {
        fraction: f,
        std_err: (f * (1.0 - f) / n).sqrt(),
        trials,
    })
}
