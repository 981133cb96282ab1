//! Validity of a fixed combiner `A`: the randomized decomposition test,
//! necessary rank conditions on block and row selections, the sparsity lower
//! bound and the rank-profile cap for small instances.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, WaxError};
use crate::matrix::CMatrix;
use crate::model::{numeric_rank, sample_gaussian, Dims, RngSpec};
use crate::solver::{wax_decompose, DEFAULT_MAX_ATTEMPTS};

/// Exhaustive enumeration is used up to this many subsets; beyond it, this
/// many seeded samples are drawn instead.
pub const DEFAULT_SUBSET_CAP: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailedCondition {
    BlockRank,
    RowRank,
    Decomposition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub valid: bool,
    pub trials: usize,
    /// One entry per channel draw that was attempted; `None` when no
    /// invertible candidate was ever produced.
    pub residuals: Vec<Option<f64>>,
    pub failed_condition: Option<FailedCondition>,
}

/// Decomposes `trials` seeded Gaussian channels against `a`.
///
/// Stops at the first failure.
pub fn validate_combiner(a: &CMatrix, dims: &Dims, rng: RngSpec, trials: usize) -> Result<Verdict> {
    dims.require_square()?;
    if a.shape() != (dims.m, dims.t) {
        return dim_err(format!(
            "A is {}x{}, expected {}x{}",
            a.rows(),
            a.cols(),
            dims.m,
            dims.t
        ));
    }
    if !dims.admits_wax() {
        return Err(WaxError::Precondition(format!(
            "T={} is below the existence bound for M={}, K={}, L={}",
            dims.t, dims.m, dims.k, dims.l
        )));
    }
    if trials == 0 {
        return Err(WaxError::InvalidInput("trials must be at least 1".into()));
    }
    let mut residuals = Vec::with_capacity(trials);
    for i in 0..trials as u64 {
        let h = sample_gaussian(rng.child(2 * i), dims.m, dims.k)?;
        match wax_decompose(&h, a, dims, rng.child(2 * i + 1), DEFAULT_MAX_ATTEMPTS) {
            Ok(f) => residuals.push(Some(f.residual)),
            Err(WaxError::Infeasible(rep)) => {
                residuals.push(rep.best_residual);
                return Ok(Verdict {
                    valid: false,
                    trials,
                    residuals,
                    failed_condition: Some(FailedCondition::Decomposition),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Verdict {
        valid: true,
        trials,
        residuals,
        failed_condition: None,
    })
}

/// A block or row selection violating a rank condition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub blocks: Vec<usize>,
    pub rows: Vec<usize>,
    pub rank: usize,
    /// Smallest rank that would have satisfied the condition.
    pub required_rank: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankCheck {
    pub pass: bool,
    /// False when selections were sampled; a pass then means "no violation found".
    pub exhaustive: bool,
    pub checked: usize,
    pub witness: Option<Witness>,
}

fn check_shape(a: &CMatrix, dims: &Dims) -> Result<()> {
    dims.require_square()?;
    if a.rows() != dims.m || a.cols() != dims.t {
        return dim_err(format!(
            "A is {}x{}, expected {}x{}",
            a.rows(),
            a.cols(),
            dims.m,
            dims.t
        ));
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return usize::MAX,
        };
    }
    acc
}

fn run_selections(
    selections: Vec<Selection>,
    exhaustive: bool,
    a: &CMatrix,
    required: impl Fn(&Selection) -> usize + Sync,
) -> Result<RankCheck> {
    let checked = selections.len();
    let outcomes: Vec<Option<Witness>> = selections
        .into_par_iter()
        .map(|s| {
            let rank = numeric_rank(&a.select_rows(&s.rows), None)?;
            let need = required(&s);
            Ok((rank < need).then_some(Witness {
                blocks: s.blocks,
                rows: s.rows,
                rank,
                required_rank: need,
            }))
        })
        .collect::<Result<_>>()?;
    let witness = outcomes.into_iter().flatten().next();
    Ok(RankCheck {
        pass: witness.is_none(),
        exhaustive,
        checked,
        witness,
    })
}

struct Selection {
    blocks: Vec<usize>,
    rows: Vec<usize>,
}

/// Every choice of `F ≤ ⌈K/L⌉` blocks must stack to rank at least `min(FL, K)`.
///
/// Larger `F` need no separate check: any such selection contains one of
/// `⌈K/L⌉` blocks that already reaches rank `K`.
pub fn check_block_rank(
    a: &CMatrix,
    dims: &Dims,
    subset_cap: usize,
    rng: RngSpec,
) -> Result<RankCheck> {
    check_shape(a, dims)?;
    let (p, l, k) = (dims.p(), dims.l, dims.k);
    let f_max = k.div_ceil(l).min(p);
    let total = (1..=f_max).fold(0usize, |acc, f| acc.saturating_add(binomial(p, f)));
    let rows_of = |blocks: &[usize]| -> Vec<usize> {
        blocks.iter().flat_map(|&b| b * l..(b + 1) * l).collect()
    };
    let exhaustive = total <= subset_cap;
    let selections: Vec<Selection> = if exhaustive {
        (1..=f_max)
            .flat_map(|f| itertools::Itertools::combinations(0..p, f))
            .map(|blocks| Selection {
                rows: rows_of(&blocks),
                blocks,
            })
            .collect()
    } else {
        (0..subset_cap as u64)
            .into_par_iter()
            .map(|i| {
                let mut g = rng.child(i).rng();
                let f = g.random_range(1..=f_max);
                let mut blocks = index::sample(&mut g, p, f).into_vec();
                blocks.sort_unstable();
                Selection {
                    rows: rows_of(&blocks),
                    blocks,
                }
            })
            .collect()
    };
    run_selections(selections, exhaustive, a, |s| (s.blocks.len() * l).min(k))
}

/// Smallest rank strictly above `R(K−L)/K`.
fn row_rank_requirement(r: usize, k: usize, l: usize) -> usize {
    r * k.saturating_sub(l) / k + 1
}

/// For `R` rows taken from `R` distinct blocks, the stacked rows must have
/// rank greater than `R(K−L)/K`.
pub fn check_row_rank(
    a: &CMatrix,
    dims: &Dims,
    subset_cap: usize,
    rng: RngSpec,
) -> Result<RankCheck> {
    check_shape(a, dims)?;
    let (p, l, k) = (dims.p(), dims.l, dims.k);
    // Each block contributes nothing or one of its L rows.
    let total = (l + 1).checked_pow(p as u32).map_or(usize::MAX, |v| v - 1);
    let exhaustive = total <= subset_cap;
    let selections: Vec<Selection> = if exhaustive {
        (1..=total)
            .map(|mut code| {
                let mut s = Selection {
                    blocks: Vec::new(),
                    rows: Vec::new(),
                };
                for b in 0..p {
                    let digit = code % (l + 1);
                    code /= l + 1;
                    if digit > 0 {
                        s.blocks.push(b);
                        s.rows.push(b * l + digit - 1);
                    }
                }
                s
            })
            .collect()
    } else {
        (0..subset_cap as u64)
            .into_par_iter()
            .map(|i| {
                let mut g = rng.child(i).rng();
                let r = g.random_range(1..=p);
                let mut blocks = index::sample(&mut g, p, r).into_vec();
                blocks.sort_unstable();
                let rows = blocks
                    .iter()
                    .map(|&b| b * l + g.random_range(0..l))
                    .collect();
                Selection { blocks, rows }
            })
            .collect()
    };
    run_selections(selections, exhaustive, a, |s| {
        row_rank_requirement(s.rows.len(), k, l)
    })
}

/// Upper bound on how often a single row pattern may repeat across blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RMax {
    Finite(usize),
    Unbounded,
}

impl Serialize for RMax {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RMax::Finite(v) => s.serialize_u64(*v as u64),
            RMax::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl RMax {
    pub fn finite(self) -> Option<usize> {
        match self {
            RMax::Finite(v) => Some(v),
            RMax::Unbounded => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SparsityBound {
    pub r_max: RMax,
    #[serde(rename = "Q")]
    pub q: usize,
    pub min_ones: usize,
}

/// `r_max = ⌈L/(K−L)⌉` for `L < K`.
pub fn r_max(k: usize, l: usize) -> RMax {
    if l >= k {
        RMax::Unbounded
    } else {
        RMax::Finite(l.div_ceil(k - l))
    }
}

/// Lower bound on the number of ones in a valid `M×T` combiner.
///
/// Rows are filled greedily with the cheapest patterns: each of the `C(T,w)`
/// weight-`w` patterns may appear at most `r_max` times.
pub fn ones_lower_bound(m: usize, k: usize, l: usize, t: usize) -> Result<SparsityBound> {
    if m == 0 || k == 0 || l == 0 || t == 0 {
        return Err(WaxError::InvalidInput("dimensions must be positive".into()));
    }
    if t < l || l > k {
        return Err(WaxError::InvalidInput(format!(
            "bound needs T >= L and L <= K, got T={t} L={l} K={k}"
        )));
    }
    let rm = match r_max(k, l) {
        RMax::Unbounded => {
            return Ok(SparsityBound {
                r_max: RMax::Unbounded,
                q: 1,
                min_ones: m,
            })
        }
        RMax::Finite(v) => v,
    };
    let mut covered: usize = 0;
    let mut q = 0;
    for w in 1..=t {
        covered = covered.saturating_add(rm.saturating_mul(binomial(t, w)));
        if covered >= m {
            q = w;
            break;
        }
    }
    if q == 0 {
        return Err(WaxError::Precondition(format!(
            "only {covered} admissible row patterns exist for M={m}"
        )));
    }
    let deficit: usize = (1..q).map(|w| rm * (q - w) * binomial(t, w)).sum();
    Ok(SparsityBound {
        r_max: RMax::Finite(rm),
        q,
        min_ones: q * m - deficit,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RankProfile {
    #[serde(rename = "B_S")]
    pub b_s: usize,
    pub required_rank: usize,
    pub rank: usize,
    pub pass: bool,
}

/// Largest enumeration size (active panels times `max_b`) accepted.
pub const RANK_PROFILE_BUDGET: usize = 24;

/// Largest null-space dimension `B_S` compatible with an admissible rank
/// profile, and whether `rank(a_sub) ≥ K − B_S`.
///
/// `row_allocation[p]` rows of `a_sub` come from block `p`. Blocks with no
/// selected rows impose no constraint and are dropped before the search.
pub fn rank_profile_cap(
    a_sub: &CMatrix,
    dims: &Dims,
    row_allocation: &[usize],
    max_b: usize,
) -> Result<RankProfile> {
    let (k, l) = (dims.k, dims.l);
    if row_allocation.len() != dims.p() {
        return dim_err(format!(
            "row allocation has {} entries, expected P={}",
            row_allocation.len(),
            dims.p()
        ));
    }
    if row_allocation.iter().any(|&a| a > l) {
        return Err(WaxError::InvalidInput(format!(
            "at most L={l} rows per block"
        )));
    }
    let r: usize = row_allocation.iter().sum();
    if r != a_sub.rows() {
        return dim_err(format!(
            "allocation sums to {r}, but a_sub has {} rows",
            a_sub.rows()
        ));
    }
    let cap: Vec<usize> = row_allocation
        .iter()
        .filter(|&&a| a > 0)
        .map(|&a| l - a)
        .collect();
    let b_s = if cap.is_empty() {
        k
    } else {
        let d = cap.len();
        if d * max_b > RANK_PROFILE_BUDGET {
            return Err(WaxError::Budget(format!(
                "{d} active blocks x max_b={max_b} exceeds {RANK_PROFILE_BUDGET}"
            )));
        }
        let base = k as i64 - (l * d) as i64;
        let limit = max_b.min(k);
        let mut best = 0;
        for b in 1..=limit {
            if profile_feasible(b, base, l, &cap) {
                best = b;
            } else {
                break;
            }
        }
        if best == limit && limit < k {
            return Err(WaxError::Budget(format!(
                "feasible at max_b={max_b}; B_S may exceed it"
            )));
        }
        best
    };
    let required_rank = k - b_s;
    let rank = if a_sub.is_empty() {
        0
    } else {
        numeric_rank(a_sub, None)?
    };
    Ok(RankProfile {
        b_s,
        required_rank,
        rank,
        pass: rank >= required_rank,
    })
}

/// Whether some 0/1 matrix with `rows` rows satisfies both inequality families.
fn profile_feasible(rows: usize, base: i64, l: usize, cap: &[usize]) -> bool {
    let mut col_sums = vec![0usize; cap.len()];
    dfs(1, rows, base, l, cap, &mut col_sums, 0)
}

fn dfs(
    b: usize,
    rows: usize,
    base: i64,
    l: usize,
    cap: &[usize],
    col: &mut [usize],
    prev_total: usize,
) -> bool {
    if b > rows {
        return true;
    }
    let d = cap.len();
    for mask in 0u32..(1 << d) {
        let mut gain: i64 = 0;
        let mut ok = true;
        for p in 0..d {
            if mask >> p & 1 == 1 {
                if col[p] + 1 > cap[p] {
                    ok = false;
                    break;
                }
                gain += (l - col[p]) as i64;
            }
        }
        if !ok || base + prev_total as i64 + gain < b as i64 {
            continue;
        }
        let ones = mask.count_ones() as usize;
        for p in 0..d {
            col[p] += (mask >> p & 1) as usize;
        }
        let found = dfs(b + 1, rows, base, l, cap, col, prev_total + ones);
        for p in 0..d {
            col[p] -= (mask >> p & 1) as usize;
        }
        if found {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(9, 2), 36);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(200, 100), usize::MAX);
    }

    #[test]
    fn table_cells() {
        assert_eq!(ones_lower_bound(60, 7, 6, 9).unwrap().min_ones, 66);
        assert_eq!(ones_lower_bound(60, 3, 2, 21).unwrap().min_ones, 78);
        assert_eq!(ones_lower_bound(60, 6, 3, 31).unwrap().min_ones, 89);
        let b = ones_lower_bound(60, 1, 1, 1).unwrap();
        assert_eq!((b.r_max, b.q, b.min_ones), (RMax::Unbounded, 1, 60));
    }

    #[test]
    fn r_max_values() {
        assert_eq!(r_max(7, 6), RMax::Finite(6));
        assert_eq!(r_max(3, 2), RMax::Finite(2));
        assert_eq!(r_max(6, 3), RMax::Finite(1));
        assert_eq!(r_max(10, 4), RMax::Finite(1));
    }

    #[test]
    fn bound_rejects_bad_arguments() {
        assert!(ones_lower_bound(60, 3, 4, 21).is_err());
        assert!(ones_lower_bound(60, 7, 6, 5).is_err());
    }

    #[test]
    fn row_requirement_is_strict() {
        // R(K−L)/K = 2 exactly: rank 2 is not enough.
        assert_eq!(row_rank_requirement(4, 2, 1), 3);
        assert_eq!(row_rank_requirement(3, 5, 3), 2);
        assert_eq!(row_rank_requirement(3, 3, 3), 1);
    }

    #[test]
    fn profile_hand_cases() {
        let d = Dims::square(2, 2, 2, 2).unwrap();
        let a = CMatrix::from_real_rows(&[[1.0, 0.0]]);
        assert_eq!(rank_profile_cap(&a, &d, &[1], 2).unwrap().b_s, 1);
        let d = Dims::square(2, 3, 2, 3).unwrap();
        let a = CMatrix::from_real_rows(&[[1.0, 0.0, 0.0]]);
        assert_eq!(rank_profile_cap(&a, &d, &[1], 3).unwrap().b_s, 2);
    }

    #[test]
    fn profile_without_rows_is_vacuous() {
        let d = Dims::square(4, 3, 2, 3).unwrap();
        let a = CMatrix::zeros(0, 3);
        let r = rank_profile_cap(&a, &d, &[0, 0], 1).unwrap();
        assert_eq!((r.b_s, r.required_rank, r.pass), (3, 0, true));
    }

    #[test]
    fn profile_budget_is_explicit() {
        let d = Dims::square(25, 4, 1, 4).unwrap();
        let a = CMatrix::identity(4).select_rows(&[0, 1, 2, 3, 0, 1, 2]);
        let mut alloc = vec![0; 25];
        alloc[..7].fill(1);
        assert!(matches!(
            rank_profile_cap(&a, &d, &alloc, 4),
            Err(WaxError::Budget(_))
        ));
    }
}
