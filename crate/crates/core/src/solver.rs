//! WAX decomposition `H = W·A·X`: the vectorized linear system, the null-space
//! solver, dimension planning and the resulting processing chain.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, WaxError};
use crate::linalg;
use crate::matrix::{CMatrix, C64};
use crate::model::{admits_wax, complex_normal, t_opt, BlockDiag, Dims, RngSpec};

/// Relative Frobenius residual accepted as a successful decomposition.
pub const SUCCESS_TOL: f64 = 1e-8;
/// Blocks of the recovered inverse processor at or above this condition number
/// count as singular.
pub const COND_LIMIT: f64 = 1e10;
pub const DEFAULT_MAX_ATTEMPTS: usize = 10;

/// Result of a successful decomposition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaxFactors {
    #[serde(rename = "W_blocks")]
    pub w: BlockDiag,
    #[serde(rename = "X")]
    pub x: CMatrix,
    pub residual: f64,
    pub nullspace_dim: usize,
    pub attempts: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfeasibleReason {
    /// The system has only the trivial solution.
    EmptyNullSpace,
    /// Every null-space combination tried produced a singular panel block.
    SingularBlocks,
    /// Blocks were invertible but the factors missed the residual threshold.
    ResidualTooLarge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfeasibleReport {
    pub reason: InfeasibleReason,
    pub nullspace_dim: usize,
    pub attempts: usize,
    pub best_residual: Option<f64>,
}

impl fmt::Display for InfeasibleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} (null space dim {}, {} attempts",
            self.reason, self.nullspace_dim, self.attempts
        )?;
        if let Some(r) = self.best_residual {
            write!(f, ", best residual {r:.3e}")?;
        }
        write!(f, ")")
    }
}

/// How the null space of the vectorized system is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NullSpaceRoute {
    /// Eliminate the panel unknowns first: every row of `A_p X` must lie in the
    /// row space of `H_p`, i.e. `A_p X N_p = 0` with `N_p` spanning `null(H_p)`.
    /// The remaining system has `M(K−L)` rows and `TK` columns, and its null
    /// space maps one-to-one onto that of the full system.
    #[default]
    Reduced,
    /// SVD of the full `MK × (TK+ML)` system matrix.
    FullSystem,
}

#[derive(Clone, Copy, Debug)]
pub struct WaxOptions {
    pub max_attempts: usize,
    pub route: NullSpaceRoute,
    pub success_tol: f64,
    pub cond_limit: f64,
}

impl Default for WaxOptions {
    fn default() -> Self {
        Self {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            route: NullSpaceRoute::Reduced,
            success_tol: SUCCESS_TOL,
            cond_limit: COND_LIMIT,
        }
    }
}

/// `A = T_{L,N} · Ã` with `T_{L,N} = I_{M/L} ⊗ (1_{L/N} ⊗ I_L)`.
///
/// Each group of `L` rows of `Ã` is repeated `L/N` times in place.
pub fn expand_combiner(a_tilde: &CMatrix, dims: &Dims) -> Result<CMatrix> {
    let Dims { m, l, n, .. } = *dims;
    if l < n || l % n != 0 {
        return dim_err(format!("L={l} must be a multiple of N={n}"));
    }
    if m % l != 0 {
        return dim_err(format!("M={m} must be a multiple of L={l}"));
    }
    if a_tilde.rows() != m {
        return dim_err(format!(
            "combiner has {} rows, expected M={m}",
            a_tilde.rows()
        ));
    }
    let copies = l / n;
    let rows: Vec<usize> = (0..m / l)
        .flat_map(|g| (0..copies).flat_map(move |_| (0..l).map(move |i| g * l + i)))
        .collect();
    Ok(a_tilde.select_rows(&rows))
}

/// The vectorized system `B·u = vec(A·X − Ŵ·H)` for `u = [vec X; vec W₁; …; vec W_P]`.
#[derive(Clone, Debug)]
pub struct SystemMatrix {
    pub b: CMatrix,
    m: usize,
    l: usize,
    tk: usize,
}

impl SystemMatrix {
    /// Number of leading columns belonging to `B₁ = I_K ⊗ A`.
    pub fn x_columns(&self) -> usize {
        self.tk
    }

    /// Row of `vec(Ŵ)` (an `M²` vector) that column `j` of `P_sel` selects.
    pub fn selection_row(&self, j: usize) -> usize {
        let (m, l) = (self.m, self.l);
        let p = j / (l * l);
        let within = j % (l * l);
        let (a, b) = (within % l, within / l);
        (p * l + b) * m + p * l + a
    }

    /// The dense `M² × ML` 0/1 selection matrix.
    pub fn selection_matrix(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.m * self.m, self.m * self.l);
        for j in 0..self.m * self.l {
            out.set(self.selection_row(j), j, C64::new(1.0, 0.0));
        }
        out
    }
}

fn check_square_shapes(h: &CMatrix, a: &CMatrix, dims: &Dims) -> Result<()> {
    dims.require_square()?;
    if h.shape() != (dims.m, dims.k) {
        return dim_err(format!(
            "H is {}x{}, expected {}x{}",
            h.rows(),
            h.cols(),
            dims.m,
            dims.k
        ));
    }
    if a.shape() != (dims.m, dims.t) {
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

pub fn build_system(h: &CMatrix, a: &CMatrix, dims: &Dims) -> Result<SystemMatrix> {
    check_square_shapes(h, a, dims)?;
    let Dims { m, k, l, t, .. } = *dims;
    let tk = t * k;
    let mut b = CMatrix::zeros(m * k, tk + m * l);
    for kk in 0..k {
        for i in 0..m {
            let row = kk * m + i;
            for tt in 0..t {
                b.set(row, kk * t + tt, a.get(i, tt));
            }
            let p = i / l;
            let a_in = i % l;
            for b_in in 0..l {
                let col = tk + p * l * l + b_in * l + a_in;
                b.set(row, col, -h.get(p * l + b_in, kk));
            }
        }
    }
    Ok(SystemMatrix { b, m, l, tk })
}

/// Stacks `[vec X; vec W₁; …]` in the column order of the system matrix.
pub fn stack_unknowns(x: &CMatrix, w_hat: &BlockDiag) -> Vec<C64> {
    let mut u = x.vec();
    for blk in w_hat.blocks() {
        u.extend(blk.vec());
    }
    u
}

/// Inverse of [`stack_unknowns`].
pub fn split_unknowns(u: &[C64], dims: &Dims) -> Result<(CMatrix, BlockDiag)> {
    let Dims { m, k, l, t, .. } = *dims;
    if u.len() != t * k + m * l {
        return dim_err(format!(
            "unknown vector has length {}, expected {}",
            u.len(),
            t * k + m * l
        ));
    }
    let x = CMatrix::from_col_major(t, k, &u[..t * k])?;
    let blocks = (0..m / l)
        .map(|p| {
            let start = t * k + p * l * l;
            CMatrix::from_col_major(l, l, &u[start..start + l * l])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((x, BlockDiag::new(blocks)?))
}

struct PanelData {
    pinv: CMatrix,
    null: CMatrix,
}

/// Per-panel pseudo-inverse and null basis of `H_p`, enforcing `rank(H_p) = L`.
fn panel_data(h: &CMatrix, l: usize) -> Result<Vec<PanelData>> {
    let k = h.cols();
    (0..h.rows() / l)
        .map(|p| {
            let hp = h.row_block(p * l, l);
            let d = linalg::svd(&hp)?;
            let r = linalg::rank_from_singular_values(&d.s, linalg::default_rank_tol(l, k));
            if r != l {
                return Err(WaxError::Precondition(format!(
                    "panel {p} of H has rank {r}, expected L={l}"
                )));
            }
            let pinv = CMatrix::from_fn(k, l, |i, j| {
                (0..l)
                    .map(|q| d.v.get(i, q) * d.u.get(j, q).conj() / d.s[q])
                    .sum()
            });
            let null_cols: Vec<usize> = (l..k).collect();
            Ok(PanelData {
                pinv,
                null: d.v.select_cols(&null_cols),
            })
        })
        .collect()
}

/// Null basis of the `M(K−L) × TK` system `A_p X N_p = 0` over all panels.
fn reduced_null_basis(a: &CMatrix, panels: &[PanelData], dims: &Dims) -> Result<CMatrix> {
    let Dims { m, k, l, t, .. } = *dims;
    let tk = t * k;
    let per_panel = k - l;
    if per_panel == 0 {
        return Ok(CMatrix::identity(tk));
    }
    let mut c = CMatrix::zeros(m * per_panel, tk);
    for (p, pd) in panels.iter().enumerate() {
        for a_in in 0..l {
            let arow = p * l + a_in;
            for nu in 0..per_panel {
                let row = arow * per_panel + nu;
                for kk in 0..k {
                    let coef = pd.null.get(kk, nu);
                    for tt in 0..t {
                        c.set(row, kk * t + tt, a.get(arow, tt) * coef);
                    }
                }
            }
        }
    }
    null_basis(&c)
}

/// Right singular vectors for the numerically zero singular values.
fn null_basis(m: &CMatrix) -> Result<CMatrix> {
    let d = linalg::svd(m)?;
    let r = linalg::rank_from_singular_values(&d.s, linalg::default_rank_tol(m.rows(), m.cols()));
    let cols: Vec<usize> = (r..m.cols()).collect();
    Ok(d.v.select_cols(&cols))
}

fn random_combination(basis: &CMatrix, rng: &mut impl rand::Rng) -> Vec<C64> {
    let d = basis.cols();
    let mut c: Vec<C64> = (0..d).map(|_| complex_normal(rng)).collect();
    let norm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in &mut c {
        *z /= norm;
    }
    (0..basis.rows())
        .map(|i| (0..d).map(|j| basis.get(i, j) * c[j]).sum())
        .collect()
}

/// Relative residual `‖W·A·X − H‖_F / ‖H‖_F` for panel-major factors.
pub fn wax_residual(h: &CMatrix, w: &BlockDiag, a: &CMatrix, x: &CMatrix) -> Result<f64> {
    let (wr, wc) = w.shape();
    if wr != h.rows() || wc != a.rows() || a.cols() != x.rows() || x.cols() != h.cols() {
        return dim_err("factor shapes are inconsistent with H");
    }
    let (br, bc) = w.block_shape();
    let ax = a.try_mul(x)?;
    let mut err = 0.0;
    for (p, wp) in w.blocks().iter().enumerate() {
        let prod = wp * &ax.row_block(p * bc, bc);
        err += (&prod - &h.row_block(p * br, br)).frobenius_norm().powi(2);
    }
    let denom = h.frobenius_norm();
    Ok(if denom == 0.0 {
        err.sqrt()
    } else {
        err.sqrt() / denom
    })
}

/// Computes `H = W·A·X` for the `N = L` layout with default options.
pub fn wax_decompose(
    h: &CMatrix,
    a: &CMatrix,
    dims: &Dims,
    rng: RngSpec,
    max_attempts: usize,
) -> Result<WaxFactors> {
    let opts = WaxOptions {
        max_attempts,
        ..WaxOptions::default()
    };
    wax_decompose_with(h, a, dims, rng, &opts)
}

pub fn wax_decompose_with(
    h: &CMatrix,
    a: &CMatrix,
    dims: &Dims,
    rng: RngSpec,
    opts: &WaxOptions,
) -> Result<WaxFactors> {
    check_square_shapes(h, a, dims)?;
    h.ensure_finite("H")?;
    a.ensure_finite("A")?;
    if dims.l > dims.k {
        return Err(WaxError::Precondition(format!(
            "L={} exceeds K={}: panel channels cannot have rank L",
            dims.l, dims.k
        )));
    }
    let Dims { m, k, l, t, .. } = *dims;
    let panels = panel_data(h, l)?;

    let basis = match opts.route {
        NullSpaceRoute::Reduced => reduced_null_basis(a, &panels, dims)?,
        NullSpaceRoute::FullSystem => null_basis(&build_system(h, a, dims)?.b)?,
    };
    let nullspace_dim = basis.cols();
    if nullspace_dim == 0 {
        return Err(WaxError::Infeasible(InfeasibleReport {
            reason: InfeasibleReason::EmptyNullSpace,
            nullspace_dim,
            attempts: 0,
            best_residual: None,
        }));
    }

    let mut g = rng.rng();
    let mut best: Option<f64> = None;
    let mut saw_invertible = false;
    for attempt in 1..=opts.max_attempts.max(1) {
        let u = random_combination(&basis, &mut g);
        let x = CMatrix::from_col_major(t, k, &u[..t * k])?;
        let w_hat: Vec<CMatrix> = match opts.route {
            NullSpaceRoute::Reduced => panels
                .iter()
                .enumerate()
                .map(|(p, pd)| &(&a.row_block(p * l, l) * &x) * &pd.pinv)
                .collect(),
            NullSpaceRoute::FullSystem => split_unknowns(&u, dims)?.1.into_blocks(),
        };

        let mut blocks = Vec::with_capacity(m / l);
        for wp in &w_hat {
            if linalg::condition_number(wp)? >= opts.cond_limit {
                break;
            }
            blocks.push(linalg::inverse(wp));
        }
        if blocks.len() != w_hat.len() {
            continue;
        }
        saw_invertible = true;
        let w = BlockDiag::new(blocks)?;
        let residual = wax_residual(h, &w, a, &x)?;
        if residual <= opts.success_tol {
            return Ok(WaxFactors {
                w,
                x,
                residual,
                nullspace_dim,
                attempts: attempt,
            });
        }
        best = Some(best.map_or(residual, |b: f64| b.min(residual)));
    }
    Err(WaxError::Infeasible(InfeasibleReport {
        reason: if saw_invertible {
            InfeasibleReason::ResidualTooLarge
        } else {
            InfeasibleReason::SingularBlocks
        },
        nullspace_dim,
        attempts: opts.max_attempts.max(1),
        best_residual: best,
    }))
}

/// Decomposition for panels of `N` antennas with `L` a multiple of `N`.
///
/// Solves the `N = L` problem on `Ã` (panels of `L` antennas, `M/L` of them)
/// and splits every `L×L` block row-wise into `L/N` panel blocks of shape
/// `N×L`. The returned factors satisfy `W · expand_combiner(Ã) · X = H`.
pub fn wax_decompose_panels(
    h: &CMatrix,
    a_tilde: &CMatrix,
    dims: &Dims,
    rng: RngSpec,
    max_attempts: usize,
) -> Result<WaxFactors> {
    if dims.is_square() {
        return wax_decompose(h, a_tilde, dims, rng, max_attempts);
    }
    let expanded = expand_combiner(a_tilde, dims)?;
    let square = Dims::square(dims.m, dims.k, dims.l, dims.t)?;
    let f = wax_decompose(h, a_tilde, &square, rng, max_attempts)?;
    let n = dims.n;
    let blocks: Vec<CMatrix> =
        f.w.blocks()
            .iter()
            .flat_map(|wg| (0..dims.l / n).map(move |c| wg.row_block(c * n, n)))
            .collect();
    let w = BlockDiag::new(blocks)?;
    let residual = wax_residual(h, &w, &expanded, &f.x)?;
    Ok(WaxFactors { w, residual, ..f })
}

/// Number of antennas that can be served; unbounded when `L ≥ K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AntennaLimit {
    Finite(usize),
    Unbounded,
}

impl Serialize for AntennaLimit {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AntennaLimit::Finite(v) => s.serialize_u64(*v as u64),
            AntennaLimit::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanQuery {
    pub m: Option<usize>,
    pub k: usize,
    pub l: Option<usize>,
    pub t: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Plan {
    pub t_opt: Option<usize>,
    pub l_opt: Option<usize>,
    pub m_max: Option<AntennaLimit>,
}

/// Solves the existence inequality for whichever of `M`, `L`, `T` is absent.
///
/// With all three supplied, each is computed from the other two.
pub fn plan_dimensions(q: &PlanQuery) -> Result<Plan> {
    let missing = [q.m.is_none(), q.l.is_none(), q.t.is_none()]
        .iter()
        .filter(|&&x| x)
        .count();
    if missing > 1 {
        return Err(WaxError::InvalidInput(
            "at most one of M, L, T may be left for planning".into(),
        ));
    }
    if q.k == 0 || [q.m, q.l, q.t].iter().flatten().any(|&v| v == 0) {
        return Err(WaxError::InvalidInput(
            "planning arguments must be positive".into(),
        ));
    }
    let k = q.k;
    let mut plan = Plan::default();
    if let (Some(m), Some(l)) = (q.m, q.l) {
        plan.t_opt = Some(t_opt(m, k, l));
    }
    if let (Some(m), Some(t)) = (q.m, q.t) {
        if t < k {
            return Err(WaxError::NoFeasiblePlan(format!(
                "T={t} < K={k}: no L gives lossless processing"
            )));
        }
        let l_opt = (1..=k.min(m)).find(|&l| m % l == 0 && admits_wax(m, k, l, t));
        match l_opt {
            Some(l) => plan.l_opt = Some(l),
            None => {
                return Err(WaxError::NoFeasiblePlan(format!(
                    "no divisor L of M={m} with L <= K={k} satisfies the bound at T={t}"
                )))
            }
        }
    }
    if let (Some(l), Some(t)) = (q.l, q.t) {
        if t < k {
            return Err(WaxError::NoFeasiblePlan(format!(
                "T={t} < K={k}: no antenna count gives lossless processing"
            )));
        }
        plan.m_max = Some(if l >= k {
            AntennaLimit::Unbounded
        } else {
            // Largest M with M(K−L) < TK.
            AntennaLimit::Finite((t * k - 1) / (k - l))
        });
    }
    Ok(plan)
}

/// `z = Xᴴ Aᴴ Wᴴ y`, applying each panel's `W_pᴴ` to its own antennas first.
pub fn apply_processing(y: &CMatrix, w: &BlockDiag, a: &CMatrix, x: &CMatrix) -> Result<CMatrix> {
    let (wr, wc) = w.shape();
    if y.cols() != 1 || y.rows() != wr {
        return dim_err(format!("y must be {wr}x1, got {}x{}", y.rows(), y.cols()));
    }
    if a.rows() != wc || x.rows() != a.cols() {
        return dim_err("A and X shapes do not chain with W");
    }
    let (br, _) = w.block_shape();
    let panel_outputs: Vec<CMatrix> = w
        .blocks()
        .iter()
        .enumerate()
        .map(|(p, wp)| &wp.adjoint() * &y.row_block(p * br, br))
        .collect();
    let stacked = CMatrix::vstack(&panel_outputs)?;
    let combined = &a.adjoint() * &stacked;
    Ok(&x.adjoint() * &combined)
}
