//! Rates when no exact decomposition exists: mutual information at the
//! combiner output, the least-residual approximation, panel selection and a
//! local refinement of the panel processors.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, WaxError};
use crate::linalg;
use crate::matrix::{CMatrix, C64};
use crate::model::{complex_normal, BlockDiag, Dims, RngSpec};
use crate::solver::{
    build_system, split_unknowns, wax_decompose, COND_LIMIT, DEFAULT_MAX_ATTEMPTS,
};

pub const DEFAULT_EVAL_BUDGET: usize = 2000;
const MIN_NORM_CANDIDATES: usize = 5;
/// Singular values of `Ŵ_p` below this fraction of the largest are dropped
/// when the blocks are pseudo-inverted.
const PSEUDO_REL_TOL: f64 = 1e-8;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateMethod {
    Wax,
    MinNorm,
    PanelSelect,
    Refined,
}

impl RateMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RateMethod::Wax => "wax",
            RateMethod::MinNorm => "min-norm",
            RateMethod::PanelSelect => "panel-select",
            RateMethod::Refined => "refined",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub i_lossless: f64,
    pub i_achieved: f64,
    /// Percentage `100 · i_achieved / i_lossless`.
    pub relative: f64,
    pub method: RateMethod,
    pub snr: f64,
}

impl RateReport {
    fn new(i_lossless: f64, i_achieved: f64, method: RateMethod, snr: f64) -> Self {
        let relative = if i_lossless > 0.0 {
            100.0 * i_achieved / i_lossless
        } else {
            100.0
        };
        Self {
            i_lossless,
            i_achieved,
            relative,
            method,
            snr,
        }
    }
}

fn check_snr(snr: f64) -> Result<()> {
    if snr.is_finite() && snr > 0.0 {
        Ok(())
    } else {
        Err(WaxError::InvalidInput(format!(
            "snr must be positive and finite, got {snr}"
        )))
    }
}

/// `log₂ det(I_K + snr·HᴴH)` in bits.
pub fn mutual_info_y(h: &CMatrix, snr: f64) -> Result<f64> {
    check_snr(snr)?;
    h.ensure_finite("H")?;
    log2_det_plus(&linalg::gram(h), snr)
}

fn log2_det_plus(g: &CMatrix, snr: f64) -> Result<f64> {
    let n = g.rows();
    let s = CMatrix::from_fn(n, n, |i, j| {
        let v = g.get(i, j) * snr;
        if i == j {
            v + 1.0
        } else {
            v
        }
    });
    linalg::log2_det_hpd(&s)
}

fn check_chain(h: &CMatrix, a: &CMatrix, w: &BlockDiag) -> Result<()> {
    let (wr, wc) = w.shape();
    if wr != h.rows() || wc != a.rows() {
        return dim_err(format!(
            "W is {wr}x{wc}, but H has {} rows and A has {} rows",
            h.rows(),
            a.rows()
        ));
    }
    Ok(())
}

/// Information about `s` in `Aᴴ Wᴴ y`, in bits.
///
/// The observation is whitened on the column space of `W·A`, so the result is
/// `log₂ det(I + snr·HᴴΠH)` with `Π` the projector onto that space.
pub fn mutual_info_z(h: &CMatrix, a: &CMatrix, w: &BlockDiag, snr: f64) -> Result<f64> {
    check_snr(snr)?;
    check_chain(h, a, w)?;
    let q = w.to_dense().try_mul(a)?;
    q.ensure_finite("W·A")?;
    info_on_range(h, &q, snr)
}

fn info_on_range(h: &CMatrix, q: &CMatrix, snr: f64) -> Result<f64> {
    let u = linalg::range_basis(q)?;
    if u.cols() == 0 {
        return Ok(0.0);
    }
    let g = &u.adjoint() * h;
    Ok(log2_det_plus(&linalg::gram(&g), snr)?.max(0.0))
}

pub fn rate_report(
    h: &CMatrix,
    a: &CMatrix,
    w: &BlockDiag,
    snr: f64,
    method: RateMethod,
) -> Result<RateReport> {
    let full = mutual_info_y(h, snr)?;
    let achieved = mutual_info_z(h, a, w, snr)?;
    Ok(RateReport::new(full, achieved, method, snr))
}

fn check_square_instance(h: &CMatrix, a: &CMatrix, dims: &Dims) -> Result<()> {
    dims.require_square()?;
    if h.shape() != (dims.m, dims.k) || a.shape() != (dims.m, dims.t) {
        return dim_err(format!(
            "expected H {}x{} and A {}x{}, got {}x{} and {}x{}",
            dims.m,
            dims.k,
            dims.m,
            dims.t,
            h.rows(),
            h.cols(),
            a.rows(),
            a.cols()
        ));
    }
    h.ensure_finite("H")?;
    a.ensure_finite("A")
}

#[derive(Clone, Debug)]
pub struct ApproxMf {
    pub w: BlockDiag,
    pub w_hat: BlockDiag,
    pub x_hat: CMatrix,
    /// Eigenvalue of `BᴴB` belonging to the chosen eigenvector.
    pub eigenvalue: f64,
    /// `‖B‖²_F`, for judging the eigenvalue.
    pub system_norm_sq: f64,
    pub report: RateReport,
}

/// Least-residual factors: the unit vector minimizing `‖B·u‖` gives `Ŵ` and
/// `X̂`, and `W` inverts the blocks of `Ŵ`.
///
/// Up to five eigenvectors are tried in ascending eigenvalue order until all
/// blocks are invertible. When `L > T` the blocks cannot be invertible, so the
/// smallest eigenvector is used with blocks pseudo-inverted at rank at most `T`.
pub fn approx_mf(h: &CMatrix, a: &CMatrix, dims: &Dims, snr: f64) -> Result<ApproxMf> {
    check_snr(snr)?;
    check_square_instance(h, a, dims)?;
    if dims.l > dims.k {
        return Err(WaxError::Precondition(format!(
            "L={} exceeds K={}",
            dims.l, dims.k
        )));
    }
    let sys = build_system(h, a, dims)?;
    let system_norm_sq = sys.b.frobenius_norm().powi(2);
    let (vals, vecs) = linalg::hermitian_eigen(&linalg::gram(&sys.b))?;
    let full = mutual_info_y(h, snr)?;
    let pseudo = dims.l > dims.t;
    let candidates = if pseudo {
        1
    } else {
        MIN_NORM_CANDIDATES.min(vals.len())
    };

    for c in 0..candidates {
        let u: Vec<C64> = (0..vecs.rows()).map(|i| vecs.get(i, c)).collect();
        let (x_hat, w_hat) = split_unknowns(&u, dims)?;
        let mut blocks = Vec::with_capacity(w_hat.len());
        for wp in w_hat.blocks() {
            if pseudo {
                blocks.push(linalg::pinv_truncated(wp, dims.t, PSEUDO_REL_TOL)?);
            } else if linalg::condition_number(wp)? < COND_LIMIT {
                blocks.push(linalg::inverse(wp));
            } else {
                break;
            }
        }
        if blocks.len() < w_hat.len() {
            continue;
        }
        let w = BlockDiag::new(blocks)?;
        let achieved = mutual_info_z(h, a, &w, snr)?;
        return Ok(ApproxMf {
            w,
            w_hat,
            x_hat,
            eigenvalue: vals[c].max(0.0),
            system_norm_sq,
            report: RateReport::new(full, achieved, RateMethod::MinNorm, snr),
        });
    }
    Err(WaxError::Degenerate(format!(
        "the {candidates} smallest eigenvectors all give singular panel blocks"
    )))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PanelSelection {
    /// Selected panel indices, ascending.
    pub panels: Vec<usize>,
    pub dims: Dims,
}

/// Keeps the largest number of panels `P′` with `TK > P′L(K−L)`, choosing the
/// panels with the largest channel norms.
pub fn select_panels(h: &CMatrix, dims: &Dims, t: usize) -> Result<PanelSelection> {
    dims.require_square()?;
    let Dims { m, k, l, .. } = *dims;
    if h.shape() != (m, k) {
        return dim_err(format!("H is {}x{}, expected {m}x{k}", h.rows(), h.cols()));
    }
    if t < k {
        return Err(WaxError::Precondition(format!(
            "panel selection needs T >= K, got T={t} K={k}"
        )));
    }
    let p = dims.p();
    let keep = if l >= k {
        p
    } else {
        ((t * k - 1) / (l * (k - l))).min(p)
    };
    let mut order: Vec<(usize, f64)> = (0..p)
        .map(|i| (i, h.row_block(i * l, l).frobenius_norm()))
        .collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut panels: Vec<usize> = order[..keep].iter().map(|&(i, _)| i).collect();
    panels.sort_unstable();
    Ok(PanelSelection {
        panels,
        dims: Dims::square(keep * l, k, l, t)?,
    })
}

/// Decomposes the channel restricted to the selected panels and switches the
/// other panels off.
pub fn panel_select_rate(
    h: &CMatrix,
    a: &CMatrix,
    dims: &Dims,
    snr: f64,
    rng: RngSpec,
) -> Result<(BlockDiag, RateReport)> {
    check_snr(snr)?;
    check_square_instance(h, a, dims)?;
    let sel = select_panels(h, dims, dims.t)?;
    let l = dims.l;
    let rows: Vec<usize> = sel
        .panels
        .iter()
        .flat_map(|&p| p * l..(p + 1) * l)
        .collect();
    let f = wax_decompose(
        &h.select_rows(&rows),
        &a.select_rows(&rows),
        &sel.dims,
        rng,
        DEFAULT_MAX_ATTEMPTS,
    )?;
    let mut chosen = f.w.into_blocks().into_iter();
    let blocks: Vec<CMatrix> = (0..dims.p())
        .map(|p| {
            if sel.panels.binary_search(&p).is_ok() {
                chosen.next().expect("one block per selected panel")
            } else {
                CMatrix::zeros(l, l)
            }
        })
        .collect();
    let w = BlockDiag::new(blocks)?;
    let report = rate_report(h, a, &w, snr, RateMethod::PanelSelect)?;
    Ok((w, report))
}

#[derive(Clone, Debug)]
pub struct Refined {
    pub w: BlockDiag,
    pub report: RateReport,
    /// Objective and gradient evaluations spent.
    pub evaluations: usize,
}

struct Objective<'a> {
    h: &'a CMatrix,
    a: &'a CMatrix,
    snr: f64,
    evals: usize,
}

impl Objective<'_> {
    fn value(&mut self, w: &BlockDiag) -> Result<f64> {
        self.evals += 1;
        let q = w.to_dense().try_mul(self.a)?;
        if !q.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        info_on_range(self.h, &q, self.snr)
    }

    /// Ascent direction for the block entries of `W`.
    ///
    /// With `Π` the projector onto the range of `Q = W·A`, `S = I + snr·HᴴΠH`
    /// and `C = H S⁻¹ Hᴴ`, the gradient with respect to `Q` is
    /// `snr·(I − Π)·C·(Q⁺)ᴴ`, pulled back to `W` through `Aᴴ`.
    fn gradient(&mut self, w: &BlockDiag) -> Result<Vec<CMatrix>> {
        self.evals += 1;
        let q = w.to_dense().try_mul(self.a)?;
        let u = linalg::range_basis(&q)?;
        let m = self.h.rows();
        let proj = &u * &u.adjoint();
        let ph = &proj * self.h;
        let g = &self.h.adjoint() * &ph;
        let k = g.rows();
        let s = CMatrix::from_fn(k, k, |i, j| {
            let v = g.get(i, j) * self.snr;
            if i == j {
                v + 1.0
            } else {
                v
            }
        });
        let c = &(self.h * &linalg::inverse(&s)) * &self.h.adjoint();
        let resid = &CMatrix::identity(m) - &proj;
        let grad_q = (&(&resid * &c) * &linalg::pinv(&q)?.adjoint()).scale(C64::new(self.snr, 0.0));
        let grad_w = &grad_q * &self.a.adjoint();
        let (br, bc) = w.block_shape();
        Ok((0..w.len())
            .map(|p| CMatrix::from_fn(br, bc, |i, j| grad_w.get(p * br + i, p * bc + j)))
            .collect())
    }
}

fn step(w: &BlockDiag, dir: &[CMatrix], s: f64) -> Result<BlockDiag> {
    BlockDiag::new(
        w.blocks()
            .iter()
            .zip(dir)
            .map(|(b, d)| {
                CMatrix::from_fn(b.rows(), b.cols(), |i, j| b.get(i, j) + d.get(i, j) * s)
            })
            .collect(),
    )
}

fn sq_norm(dir: &[CMatrix]) -> f64 {
    dir.iter().map(|d| d.frobenius_norm().powi(2)).sum()
}

/// Gradient ascent with backtracking on the panel blocks, starting at `w0`.
///
/// Never returns a lower rate than the start. `rng` only perturbs starts
/// where the gradient is unusable.
#[allow(clippy::too_many_arguments)]
pub fn refine_rate(
    h: &CMatrix,
    a: &CMatrix,
    dims: &Dims,
    snr: f64,
    w0: &BlockDiag,
    eval_budget: usize,
    rng: RngSpec,
) -> Result<Refined> {
    check_snr(snr)?;
    check_square_instance(h, a, dims)?;
    check_chain(h, a, w0)?;
    let full = mutual_info_y(h, snr)?;
    let mut obj = Objective {
        h,
        a,
        snr,
        evals: 0,
    };
    let mut g = rng.rng();
    let mut w = w0.clone();
    let mut f = obj.value(&w)?;
    let mut best = (w.clone(), f);
    let mut s = 1.0 / w.to_dense().frobenius_norm().max(1e-300);
    let mut perturbed = false;

    while obj.evals + 2 <= eval_budget && f < full * (1.0 - 1e-12) {
        let dir = obj.gradient(&w)?;
        let gn = sq_norm(&dir);
        if !gn.is_finite() || gn == 0.0 {
            if perturbed {
                break;
            }
            perturbed = true;
            let scale = 1e-3 * w.to_dense().frobenius_norm().max(1.0) / (w.len() as f64).sqrt();
            let noise: Vec<CMatrix> = w
                .blocks()
                .iter()
                .map(|b| CMatrix::from_fn(b.rows(), b.cols(), |_, _| complex_normal(&mut g)))
                .collect();
            w = step(&w, &noise, scale)?;
            f = obj.value(&w)?;
            continue;
        }
        let slope = 2.0 * gn / std::f64::consts::LN_2;
        let mut accepted = false;
        while obj.evals < eval_budget {
            let cand = step(&w, &dir, s)?;
            let fc = obj.value(&cand)?;
            if fc >= f + 1e-4 * s * slope {
                w = cand;
                f = fc;
                s *= 2.0;
                accepted = true;
                break;
            }
            s *= 0.5;
            if s * gn.sqrt() < 1e-14 * w.to_dense().frobenius_norm() {
                break;
            }
        }
        if f > best.1 {
            best = (w.clone(), f);
        }
        if !accepted {
            break;
        }
    }
    let (w, f) = best;
    Ok(Refined {
        report: RateReport::new(full, f, RateMethod::Refined, snr),
        w,
        evaluations: obj.evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_gaussian;

    fn eig_oracle(h: &CMatrix, snr: f64) -> f64 {
        let (vals, _) = linalg::hermitian_eigen(&linalg::gram(h)).unwrap();
        vals.iter().map(|v| (1.0 + snr * v.max(0.0)).log2()).sum()
    }

    #[test]
    fn info_y_examples() {
        assert_eq!(mutual_info_y(&CMatrix::zeros(4, 2), 3.0).unwrap(), 0.0);
        assert!((mutual_info_y(&CMatrix::identity(3), 1.0).unwrap() - 3.0).abs() < 1e-12);
        let h = sample_gaussian(RngSpec::new(11, 0), 8, 3).unwrap();
        assert!((mutual_info_y(&h, 10.0).unwrap() - eig_oracle(&h, 10.0)).abs() < 1e-9);
        assert!(mutual_info_y(&h, 0.0).is_err());
    }

    #[test]
    fn centralized_chain_is_lossless() {
        let h = sample_gaussian(RngSpec::new(12, 0), 6, 2).unwrap();
        let w = BlockDiag::identity(3, 2);
        let z = mutual_info_z(&h, &CMatrix::identity(6), &w, 5.0).unwrap();
        assert!((z - mutual_info_y(&h, 5.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn single_output_matches_scalar_channel() {
        let h = sample_gaussian(RngSpec::new(13, 0), 4, 2).unwrap();
        let mut a = CMatrix::zeros(4, 1);
        a.set(2, 0, C64::new(1.0, 0.0));
        let w = BlockDiag::identity(4, 1);
        let z = mutual_info_z(&h, &a, &w, 10.0).unwrap();
        let row_sq: f64 = (0..2).map(|j| h.get(2, j).norm_sqr()).sum();
        assert!((z - (1.0 + 10.0 * row_sq).log2()).abs() < 1e-12);
    }

    #[test]
    fn zero_combiner_carries_nothing() {
        let h = sample_gaussian(RngSpec::new(14, 0), 4, 2).unwrap();
        let w = BlockDiag::identity(2, 2);
        assert_eq!(
            mutual_info_z(&h, &CMatrix::zeros(4, 3), &w, 1.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn panel_count_examples() {
        let dims = Dims::square(24, 5, 3, 8).unwrap();
        let h = sample_gaussian(RngSpec::new(15, 0), 24, 5).unwrap();
        let sel = select_panels(&h, &dims, 8).unwrap();
        assert_eq!(sel.panels.len(), 6);
        assert_eq!(sel.dims.m, 18);
        assert_eq!(select_panels(&h, &dims, 10).unwrap().panels.len(), 8);
        assert!(matches!(
            select_panels(&h, &dims, 4),
            Err(WaxError::Precondition(_))
        ));
    }

    #[test]
    fn strongest_panels_win() {
        let dims = Dims::square(10, 4, 2, 4).unwrap();
        let scale = [0.1, 5.0, 0.2, 3.0, 4.0];
        let base = sample_gaussian(RngSpec::new(18, 0), 10, 4).unwrap();
        let h = CMatrix::from_fn(10, 4, |i, j| base.get(i, j) * scale[i / 2]);
        assert_eq!(select_panels(&h, &dims, 4).unwrap().panels, vec![1, 3, 4]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = sample_gaussian(RngSpec::new(16, 0), 12, 4).unwrap();
        let a = sample_gaussian(RngSpec::new(16, 1), 12, 5).unwrap();
        let w = BlockDiag::new(
            (0..6)
                .map(|p| sample_gaussian(RngSpec::new(16, 2 + p), 2, 2).unwrap())
                .collect(),
        )
        .unwrap();
        let mut obj = Objective {
            h: &h,
            a: &a,
            snr: 3.0,
            evals: 0,
        };
        let grad = obj.gradient(&w).unwrap();
        let dir: Vec<CMatrix> = (0..6)
            .map(|p| sample_gaussian(RngSpec::new(17, p), 2, 2).unwrap())
            .collect();
        let eps = 1e-6;
        let fp = obj.value(&step(&w, &dir, eps).unwrap()).unwrap();
        let fm = obj.value(&step(&w, &dir, -eps).unwrap()).unwrap();
        let numeric = (fp - fm) / (2.0 * eps);
        let analytic: f64 = grad
            .iter()
            .zip(&dir)
            .map(|(g, d)| {
                let prod = &g.adjoint() * d;
                (0..prod.rows()).map(|i| prod.get(i, i).re).sum::<f64>()
            })
            .sum::<f64>()
            * 2.0
            / std::f64::consts::LN_2;
        assert!(
            (numeric - analytic).abs() < 1e-5 * numeric.abs().max(1.0),
            "{numeric} vs {analytic}"
        );
    }
}
