//! Sparse convex QP solver based on the operator-splitting (ADMM) scheme.
//!
//! Problems have the form
//!
//! ```text
//! minimize   x' P x / 2 + q' x
//! subject to l <= A x <= u
//! ```
//!
//! with `P` positive semidefinite and equality rows expressed as `l = u`.
//! The iteration alternates a linear solve with `P + sigma I + A' diag(rho) A`
//! against projections onto the constraint box; convergence is declared on
//! absolute primal and dual residuals of the unscaled problem, checked every
//! iteration. Rows are equilibrated by their infinity norms, equality rows
//! get a stiffer penalty, and the penalty rescales itself from the residual
//! ratio unless the caller freezes it to reuse the factorization.
//!
//! Receding-horizon problems have a characteristic sparsity: almost banded
//! under a node-major variable order, plus a handful of columns (footholds,
//! shared slacks, binaries) that couple everything. Callers pass those
//! columns as a border hint and the linear solves run on a banded Cholesky
//! factor bordered by a dense Schur complement, falling back to a dense
//! factorization when the hint is missing or the band is too wide.
//!
//! Bound and linear-cost updates keep the factorization, which makes
//! branch-and-bound over binary bounds and warm-started re-solves cheap.

use crate::error::{Error, Result};
use crate::linalg::{cholesky_in_place, cholesky_solve, dot, ldl_in_place, ldl_solve, norm_inf, Csr, DMat};
use crate::scalar::{c, Real};

/// Problem data. `p` must hold both triangles of the symmetric cost matrix.
#[derive(Debug, Clone)]
pub struct QpProblem<T> {
    pub p: Csr<T>,
    pub q: Vec<T>,
    pub a: Csr<T>,
    pub l: Vec<T>,
    pub u: Vec<T>,
}

impl<T: Real> QpProblem<T> {
    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.l.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        let m = self.m();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(Error::Dimension(format!(
                "cost matrix is {}x{}, expected {}x{}",
                self.p.nrows(),
                self.p.ncols(),
                n,
                n
            )));
        }
        if self.a.nrows() != m || self.a.ncols() != n || self.u.len() != m {
            return Err(Error::Dimension(format!(
                "constraints are {}x{} with {} lower / {} upper bounds",
                self.a.nrows(),
                self.a.ncols(),
                self.l.len(),
                self.u.len()
            )));
        }
        for i in 0..m {
            if self.l[i] > self.u[i] {
                return Err(Error::Invalid(format!(
                    "row {} has l {} > u {}",
                    i, self.l[i], self.u[i]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings<T> {
    /// Absolute tolerance applied to both primal and dual residuals.
    pub eps_abs: T,
    pub max_iter: usize,
    /// ADMM penalty; rescaled online when `adaptive_rho` is set.
    pub rho: T,
    /// Penalty multiplier for equality rows.
    pub rho_eq_scale: T,
    pub sigma: T,
    /// Over-relaxation in (0, 2).
    pub alpha: T,
    pub adaptive_rho: bool,
    pub adaptive_interval: usize,
    /// Iterations between termination checks; residuals and infeasibility
    /// certificates cost several matrix passes, so they are not evaluated
    /// every iteration.
    pub check_interval: usize,
    /// Tolerance of the primal/dual infeasibility certificates.
    pub eps_inf: T,
    pub polish: bool,
    /// Skip polishing when `n` plus the active-set size exceeds this.
    pub polish_cap: usize,
}

impl<T: Real> Default for QpSettings<T> {
    fn default() -> Self {
        Self {
            eps_abs: c(1e-6),
            max_iter: 4000,
            rho: c(0.1),
            rho_eq_scale: c(1e3),
            sigma: c(1e-6),
            alpha: c(1.6),
            adaptive_rho: true,
            adaptive_interval: 50,
            check_interval: 10,
            eps_inf: c(1e-4),
            polish: true,
            polish_cap: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Solved,
    /// A primal or dual infeasibility certificate was found.
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct QpSolution<T> {
    pub x: Vec<T>,
    /// Duals of the box rows, in the sign convention where positive values
    /// push against upper bounds.
    pub y: Vec<T>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: T,
    pub primal_residual: T,
    pub dual_residual: T,
    pub polished: bool,
}

/// Lower Cholesky factor of a matrix that is banded except for a trailing
/// dense border: `[[B, C'], [C, D]]` with `B` banded. Stores the band factor
/// of `B`, the solved border block `W = L_B^{-1} C'` transposed so each
/// border column is a contiguous row, and the Cholesky factor of the Schur
/// complement `D - W' W`.
struct BandArrow<T> {
    nb: usize,
    w: usize,
    band: Vec<T>,
    wt: DMat<T>,
    schur: DMat<T>,
}

impl<T: Real> BandArrow<T> {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.w + 1) + (j + self.w - i)
    }

    /// Factor a dense matrix already permuted so the last `nk` variables are
    /// the border. `w` is the half bandwidth of the leading block.
    fn factor(m: &DMat<T>, nk: usize, w: usize) -> Result<Self> {
        let n = m.rows();
        let nb = n - nk;
        let bidx = |i: usize, j: usize| i * (w + 1) + (j + w - i);
        let mut band = vec![T::zero(); nb * (w + 1)];
        for i in 0..nb {
            let lo = i.saturating_sub(w);
            for j in lo..i {
                let klo = j.saturating_sub(w).max(lo);
                let mut s = m.get(i, j);
                for k in klo..j {
                    s -= band[bidx(i, k)] * band[bidx(j, k)];
                }
                band[bidx(i, j)] = s / band[bidx(j, j)];
            }
            let mut s = m.get(i, i);
            for k in lo..i {
                let v = band[bidx(i, k)];
                s -= v * v;
            }
            if s <= T::zero() {
                return Err(Error::Singular);
            }
            band[bidx(i, i)] = s.sqrt();
        }
        // W solves L_B W = C', one band forward-substitution per border
        // column.
        let mut wt = DMat::zeros(nk, nb);
        for cidx in 0..nk {
            let wrow = wt.row_mut(cidx);
            for i in 0..nb {
                let lo = i.saturating_sub(w);
                let mut s = m.get(nb + cidx, i);
                for k in lo..i {
                    s -= band[bidx(i, k)] * wrow[k];
                }
                wrow[i] = s / band[bidx(i, i)];
            }
        }
        let mut schur = DMat::zeros(nk, nk);
        for r in 0..nk {
            for cc in 0..=r {
                let mut s = m.get(nb + r, nb + cc);
                let (wr, wc) = (wt.row(r), wt.row(cc));
                for k in 0..nb {
                    s -= wr[k] * wc[k];
                }
                schur.set(r, cc, s);
                schur.set(cc, r, s);
            }
        }
        cholesky_in_place(&mut schur)?;
        Ok(BandArrow {
            nb,
            w,
            band,
            wt,
            schur,
        })
    }

    /// In-place solve of the permuted system.
    fn solve(&self, b: &mut [T]) {
        let (nb, w) = (self.nb, self.w);
        let nk = self.wt.rows();
        for i in 0..nb {
            let lo = i.saturating_sub(w);
            let mut s = b[i];
            for k in lo..i {
                s -= self.band[self.idx(i, k)] * b[k];
            }
            b[i] = s / self.band[self.idx(i, i)];
        }
        // Border: z2 = b2 - W' z1, then the Schur solve.
        for cidx in 0..nk {
            let row = self.wt.row(cidx);
            let mut s = b[nb + cidx];
            for k in 0..nb {
                s -= row[k] * b[k];
            }
            b[nb + cidx] = s;
        }
        cholesky_solve(&self.schur, &mut b[nb..]);
        // Back substitution on the band block with the border folded in.
        for i in (0..nb).rev() {
            let mut s = b[i];
            for cidx in 0..nk {
                s -= self.wt.row(cidx)[i] * b[nb + cidx];
            }
            let hi = (i + w + 1).min(nb);
            for k in i + 1..hi {
                s -= self.band[self.idx(k, i)] * b[k];
            }
            b[i] = s / self.band[self.idx(i, i)];
        }
    }
}

enum Factor<T> {
    Dense(DMat<T>),
    BandArrow(BandArrow<T>),
}

impl<T: Real> Factor<T> {
    fn solve(&self, b: &mut [T]) {
        match self {
            Factor::Dense(l) => cholesky_solve(l, b),
            Factor::BandArrow(f) => f.solve(b),
        }
    }
}

/// Stateful solver that keeps its factorization and iterates across
/// re-solves. Bound and linear-cost updates are free; matrix updates
/// refactor but keep the iterates when dimensions are unchanged.
pub struct QpSolver<T: Real> {
    prob: QpProblem<T>,
    pub settings: QpSettings<T>,
    border: Vec<usize>,
    perm: Vec<usize>,
    scale: Vec<T>,
    rho: Vec<T>,
    rho_base: T,
    eq_rows: Vec<bool>,
    factor: Option<Factor<T>>,
    x: Vec<T>,
    z: Vec<T>,
    y: Vec<T>,
    rho_updates: usize,
}

impl<T: Real> QpSolver<T> {
    /// `border` lists variables that couple across the band structure; pass
    /// an empty slice to always use the dense factorization.
    pub fn new(prob: QpProblem<T>, settings: QpSettings<T>, border: &[usize]) -> Result<Self> {
        prob.validate()?;
        let n = prob.n();
        let m = prob.m();
        for &b in border {
            if b >= n {
                return Err(Error::Dimension(format!(
                    "border variable {} out of range {}",
                    b, n
                )));
            }
        }
        let mut solver = Self {
            prob,
            settings,
            border: border.to_vec(),
            perm: Vec::new(),
            scale: vec![T::one(); m],
            rho: vec![settings.rho; m],
            rho_base: settings.rho,
            eq_rows: vec![false; m],
            factor: None,
            x: vec![T::zero(); n],
            z: vec![T::zero(); m],
            y: vec![T::zero(); m],
            rho_updates: 0,
        };
        solver.scale_rows();
        solver.build_permutation();
        solver.reset_rho();
        Ok(solver)
    }

    pub fn problem(&self) -> &QpProblem<T> {
        &self.prob
    }

    /// Replace both bounds (given for the unscaled problem), keeping the
    /// iterates. The factorization survives unless a row switches between
    /// equality and inequality, which moves its penalty weight; keeping the
    /// old weight would leave a pinned row converging at inequality pace.
    pub fn update_bounds(&mut self, l: &[T], u: &[T]) -> Result<()> {
        if l.len() != self.prob.m() || u.len() != self.prob.m() {
            return Err(Error::Dimension("bound length mismatch".into()));
        }
        let mut reclassified = false;
        for i in 0..l.len() {
            if l[i] > u[i] {
                return Err(Error::Invalid(format!(
                    "row {} has l {} > u {}",
                    i, l[i], u[i]
                )));
            }
            self.prob.l[i] = l[i] * self.scale[i];
            self.prob.u[i] = u[i] * self.scale[i];
            if (l[i] == u[i]) != self.eq_rows[i] {
                reclassified = true;
            }
        }
        if reclassified {
            self.refresh_rho();
            self.factor = None;
        }
        Ok(())
    }

    /// Replace the linear cost, keeping the factorization and iterates.
    pub fn update_linear_cost(&mut self, q: &[T]) -> Result<()> {
        if q.len() != self.prob.n() {
            return Err(Error::Dimension("cost length mismatch".into()));
        }
        self.prob.q.copy_from_slice(q);
        Ok(())
    }

    /// Replace the whole problem. The factorization is rebuilt; iterates are
    /// kept as the warm start when dimensions match, otherwise reset.
    pub fn update_problem(&mut self, prob: QpProblem<T>) -> Result<()> {
        prob.validate()?;
        let same_dims = prob.n() == self.prob.n() && prob.m() == self.prob.m();
        self.prob = prob;
        if !same_dims {
            self.x = vec![T::zero(); self.prob.n()];
            self.y = vec![T::zero(); self.prob.m()];
            self.border.retain(|&b| b < self.prob.n());
        }
        self.scale = vec![T::one(); self.prob.m()];
        self.eq_rows = vec![false; self.prob.m()];
        self.scale_rows();
        self.build_permutation();
        self.reset_rho();
        // Re-derive the slack from the new constraint matrix.
        self.z = vec![T::zero(); self.prob.m()];
        self.prob.a.matvec(&self.x, &mut self.z);
        for i in 0..self.z.len() {
            self.z[i] = clamp(self.z[i], self.prob.l[i], self.prob.u[i]);
        }
        self.factor = None;
        Ok(())
    }

    pub fn warm_start(&mut self, x: Option<&[T]>, y: Option<&[T]>) {
        if let Some(x0) = x {
            self.x.copy_from_slice(x0);
            self.prob.a.matvec(&self.x, &mut self.z);
            for i in 0..self.z.len() {
                self.z[i] = clamp(self.z[i], self.prob.l[i], self.prob.u[i]);
            }
        }
        if let Some(y0) = y {
            for (yi, &v) in self.y.iter_mut().zip(y0) {
                *yi = v;
            }
        }
    }

    /// Scale constraint rows (and bounds) by their infinity norms so the
    /// penalty acts uniformly; duals are unscaled on the way out.
    fn scale_rows(&mut self) {
        for i in 0..self.prob.m() {
            let nrm = self.prob.a.row_norm_inf(i);
            let e = if nrm > T::zero() { nrm.recip() } else { T::one() };
            let e = clamp(e, c(1e-4), c(1e4));
            self.scale[i] = e;
        }
        let a = &mut self.prob.a;
        for i in 0..a.nrows() {
            let e = self.scale[i];
            a.scale_row(i, e);
            self.prob.l[i] = self.prob.l[i] * e;
            self.prob.u[i] = self.prob.u[i] * e;
        }
    }

    fn build_permutation(&mut self) {
        let n = self.prob.n();
        let mut is_border = vec![false; n];
        for &b in &self.border {
            is_border[b] = true;
        }
        let mut pos = vec![0usize; n];
        let mut next = 0usize;
        for i in 0..n {
            if !is_border[i] {
                pos[i] = next;
                next += 1;
            }
        }
        for i in 0..n {
            if is_border[i] {
                pos[i] = next;
                next += 1;
            }
        }
        self.perm = pos;
    }

    /// Half bandwidth of the non-border block under the current permutation,
    /// or `None` when a constraint couples band variables too widely.
    ///
    /// Cost entries map one-to-one into the normal matrix, so each is bounded
    /// on its own; a constraint row couples every pair of its band columns.
    fn band_width(&self) -> Option<usize> {
        let nb = self.prob.n() - self.border.len();
        let mut w = 0usize;
        for i in 0..self.prob.p.nrows() {
            let pi = self.perm[i];
            if pi >= nb {
                continue;
            }
            let (cols, _) = self.prob.p.row(i);
            for &j in cols {
                let pj = self.perm[j];
                if pj < nb {
                    w = w.max(pi.abs_diff(pj));
                }
            }
        }
        for i in 0..self.prob.a.nrows() {
            let (cols, _) = self.prob.a.row(i);
            let mut lo = usize::MAX;
            let mut hi = 0usize;
            for &j in cols {
                let pj = self.perm[j];
                if pj < nb {
                    lo = lo.min(pj);
                    hi = hi.max(pj);
                }
            }
            if lo != usize::MAX {
                w = w.max(hi - lo);
            }
        }
        if w > 100 {
            None
        } else {
            Some(w)
        }
    }

    fn reset_rho(&mut self) {
        self.rho_base = self.settings.rho;
        self.rho = vec![T::zero(); self.prob.m()];
        self.refresh_rho();
        self.rho_updates = 0;
    }

    fn refresh_rho(&mut self) {
        for i in 0..self.prob.m() {
            let eq = self.prob.l[i] == self.prob.u[i];
            let r = if eq {
                self.rho_base * self.settings.rho_eq_scale
            } else {
                self.rho_base
            };
            self.rho[i] = clamp(r, c(1e-6), c(1e6));
            self.eq_rows[i] = eq;
        }
    }


    fn refactor(&mut self) -> Result<()> {
        let n = self.prob.n();
        let nk = self.border.len();
        let mut m = DMat::zeros(n, n);
        for i in 0..self.prob.p.nrows() {
            let (cols, vals) = self.prob.p.row(i);
            let pi = self.perm[i];
            for (&j, &v) in cols.iter().zip(vals) {
                m.add_at(pi, self.perm[j], v);
            }
        }
        for i in 0..n {
            m.add_at(self.perm[i], self.perm[i], self.settings.sigma);
        }
        for r in 0..self.prob.a.nrows() {
            let (cols, vals) = self.prob.a.row(r);
            let w = self.rho[r];
            for (&ja, &va) in cols.iter().zip(vals) {
                let pa = self.perm[ja];
                let wv = w * va;
                for (&jb, &vb) in cols.iter().zip(vals) {
                    m.add_at(pa, self.perm[jb], wv * vb);
                }
            }
        }
        let band = if nk > 0 || n > 200 {
            self.band_width()
        } else {
            None
        };
        self.factor = Some(match band {
            Some(w) if n - nk > w => Factor::BandArrow(BandArrow::factor(&m, nk, w)?),
            _ => {
                cholesky_in_place(&mut m)?;
                Factor::Dense(m)
            }
        });
        Ok(())
    }

    /// Unscaled primal and dual residual norms at the current iterate.
    fn residuals(&self, px: &mut [T], aty: &mut [T], ax: &mut [T]) -> (T, T) {
        let prob = &self.prob;
        prob.a.matvec(&self.x, ax);
        let mut rp = T::zero();
        for i in 0..prob.m() {
            let v = ((ax[i] - self.z[i]) / self.scale[i]).abs();
            // NaN must poison the residual, not vanish under max.
            if v != v || v > rp {
                rp = v;
            }
        }
        prob.p.matvec(&self.x, px);
        prob.a.matvec_t(&self.y, aty);
        let mut rd = T::zero();
        for i in 0..prob.n() {
            let v = (px[i] + prob.q[i] + aty[i]).abs();
            if v != v || v > rd {
                rd = v;
            }
        }
        (rp, rd)
    }

    fn primal_infeasible(&self, dy: &[T], work: &mut [T]) -> bool {
        let eps = self.settings.eps_inf;
        let mut dy_norm = T::zero();
        for i in 0..dy.len() {
            let v = (dy[i] * self.scale[i]).abs();
            if v > dy_norm {
                dy_norm = v;
            }
        }
        if dy_norm <= T::zero() {
            return false;
        }
        self.prob.a.matvec_t(dy, work);
        if norm_inf(work) > eps * dy_norm {
            return false;
        }
        let mut support = T::zero();
        for i in 0..dy.len() {
            if dy[i] > T::zero() {
                if self.prob.u[i].is_infinite() {
                    return false;
                }
                support += self.prob.u[i] * dy[i];
            } else if dy[i] < T::zero() {
                if self.prob.l[i].is_infinite() {
                    return false;
                }
                support += self.prob.l[i] * dy[i];
            }
        }
        support <= -eps * dy_norm
    }

    fn dual_infeasible(&self, dx: &[T], work_n: &mut [T], work_m: &mut [T]) -> bool {
        let eps = self.settings.eps_inf;
        let dx_norm = norm_inf(dx);
        if dx_norm <= T::zero() {
            return false;
        }
        self.prob.p.matvec(dx, work_n);
        if norm_inf(work_n) > eps * dx_norm {
            return false;
        }
        if dot(&self.prob.q, dx) > -eps * dx_norm {
            return false;
        }
        self.prob.a.matvec(dx, work_m);
        for i in 0..work_m.len() {
            let v = work_m[i] / self.scale[i];
            let lim = eps * dx_norm;
            let lo_ok = self.prob.l[i].is_infinite() || v >= -lim;
            let hi_ok = self.prob.u[i].is_infinite() || v <= lim;
            if !(lo_ok && hi_ok) {
                return false;
            }
        }
        true
    }

    pub fn solve(&mut self) -> Result<QpSolution<T>> {
        if self.factor.is_none() {
            self.refactor()?;
        }
        // The penalty-update budget is per solve, so re-solves after bound
        // updates can keep adapting.
        self.rho_updates = 0;
        let n = self.prob.n();
        let m = self.prob.m();
        let set = self.settings;
        let mut rhs = vec![T::zero(); n];
        let mut xt = vec![T::zero(); n];
        let mut zt = vec![T::zero(); m];
        let mut tmp_m = vec![T::zero(); m];
        let mut dx = vec![T::zero(); n];
        let mut dy = vec![T::zero(); m];
        let mut px = vec![T::zero(); n];
        let mut aty = vec![T::zero(); n];
        let mut ax = vec![T::zero(); m];

        let mut status = SolveStatus::MaxIter;
        let mut iterations = set.max_iter;
        // Keep the slack inside the box, which bound updates may have moved.
        for i in 0..m {
            self.z[i] = clamp(self.z[i], self.prob.l[i], self.prob.u[i]);
        }
        // A warm start from an unchanged problem is already optimal; accept
        // it without iterating.
        let (mut rp, mut rd) = self.residuals(&mut px, &mut aty, &mut ax);
        if rp <= set.eps_abs && rd <= set.eps_abs {
            status = SolveStatus::Solved;
            iterations = 0;
        }

        for iter in 1..=set.max_iter {
            if status == SolveStatus::Solved {
                break;
            }
            for i in 0..m {
                tmp_m[i] = self.rho[i] * self.z[i] - self.y[i];
            }
            self.prob.a.matvec_t(&tmp_m, &mut rhs);
            for i in 0..n {
                rhs[i] += set.sigma * self.x[i] - self.prob.q[i];
            }
            // Solve in permuted coordinates.
            for i in 0..n {
                xt[self.perm[i]] = rhs[i];
            }
            self.factor.as_ref().unwrap().solve(&mut xt);
            for i in 0..n {
                rhs[i] = xt[self.perm[i]];
            }
            let one_m_alpha = T::one() - set.alpha;
            for i in 0..n {
                let xn = set.alpha * rhs[i] + one_m_alpha * self.x[i];
                dx[i] = xn - self.x[i];
                self.x[i] = xn;
                xt[i] = rhs[i];
            }
            self.prob.a.matvec(&xt, &mut zt);
            for i in 0..m {
                let zbar = set.alpha * zt[i] + one_m_alpha * self.z[i];
                let zn = clamp(
                    zbar + self.y[i] / self.rho[i],
                    self.prob.l[i],
                    self.prob.u[i],
                );
                let yn = self.y[i] + self.rho[i] * (zbar - zn);
                dy[i] = yn - self.y[i];
                self.z[i] = zn;
                self.y[i] = yn;
            }

            let check = iter % set.check_interval.max(1) == 0 || iter == set.max_iter;
            if !check {
                continue;
            }
            let (p, d) = self.residuals(&mut px, &mut aty, &mut ax);
            rp = p;
            rd = d;
            if rp <= set.eps_abs && rd <= set.eps_abs {
                status = SolveStatus::Solved;
                iterations = iter;
                break;
            }
            if self.primal_infeasible(&dy, &mut rhs) {
                status = SolveStatus::Infeasible;
                iterations = iter;
                break;
            }
            if self.dual_infeasible(&dx, &mut rhs, &mut tmp_m) {
                status = SolveStatus::Infeasible;
                iterations = iter;
                break;
            }

            if set.adaptive_rho
                && iter % set.adaptive_interval == 0
                && self.rho_updates < 20
            {
                let tiny = c::<T>(1e-12);
                let mut ax_n = T::zero();
                let mut z_n = T::zero();
                for i in 0..m {
                    ax_n = ax_n.max((ax[i] / self.scale[i]).abs());
                    z_n = z_n.max((self.z[i] / self.scale[i]).abs());
                }
                let rp_rel = rp / (ax_n.max(z_n) + tiny);
                let rd_rel = rd / (norm_inf(&px).max(norm_inf(&aty)).max(norm_inf(&self.prob.q)) + tiny);
                let ratio = (rp_rel / (rd_rel + tiny) + tiny).sqrt();
                if ratio > c(5.0) || ratio < c(0.2) {
                    self.rho_base = clamp(self.rho_base * ratio, c(1e-6), c(1e6));
                    self.refresh_rho();
                    self.rho_updates += 1;
                    self.refactor()?;
                }
            }
        }

        let mut y_out = vec![T::zero(); m];
        for i in 0..m {
            y_out[i] = self.y[i] * self.scale[i];
        }
        let mut polished = false;
        if status == SolveStatus::Solved && set.polish {
            if let Some((xp, yp, prp, prd)) = self.try_polish(&y_out, rp, rd) {
                self.x = xp.clone();
                for i in 0..m {
                    self.y[i] = yp[i] / self.scale[i];
                }
                self.prob.a.matvec(&self.x, &mut zt);
                for i in 0..m {
                    self.z[i] = clamp(zt[i], self.prob.l[i], self.prob.u[i]);
                }
                y_out = yp;
                rp = prp;
                rd = prd;
                polished = true;
            }
        }

        let obj = {
            self.prob.p.matvec(&self.x, &mut px);
            dot(&self.x, &px) * c::<T>(0.5) + dot(&self.x, &self.prob.q)
        };
        Ok(QpSolution {
            x: self.x.clone(),
            y: y_out,
            status,
            iterations,
            objective: obj,
            primal_residual: rp,
            dual_residual: rd,
            polished,
        })
    }

    /// Re-solve the KKT system restricted to the active rows, with light
    /// regularization and iterative refinement; returns the polished iterate
    /// when it does not degrade either residual.
    fn try_polish(&self, y_unscaled: &[T], rp: T, rd: T) -> Option<(Vec<T>, Vec<T>, T, T)> {
        let n = self.prob.n();
        let m = self.prob.m();
        let mut active = Vec::new();
        for i in 0..m {
            let eq = self.prob.l[i] == self.prob.u[i];
            if eq || y_unscaled[i] != T::zero() {
                active.push(i);
            }
        }
        let ma = active.len();
        if n + ma > self.settings.polish_cap {
            return None;
        }
        let dim = n + ma;
        let reg = c::<T>(1e-7);
        let mut kkt = DMat::zeros(dim, dim);
        for i in 0..n {
            let (cols, vals) = self.prob.p.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                kkt.add_at(i, j, v);
            }
            kkt.add_at(i, i, reg);
        }
        let mut rhs = vec![T::zero(); dim];
        for i in 0..n {
            rhs[i] = -self.prob.q[i];
        }
        for (k, &r) in active.iter().enumerate() {
            let e = self.scale[r];
            let (cols, vals) = self.prob.a.row(r);
            for (&j, &v) in cols.iter().zip(vals) {
                let vu = v / e;
                kkt.add_at(n + k, j, vu);
                kkt.add_at(j, n + k, vu);
            }
            kkt.add_at(n + k, n + k, -reg);
            let eq = self.prob.l[r] == self.prob.u[r];
            let b = if eq || y_unscaled[r] > T::zero() {
                self.prob.u[r]
            } else {
                self.prob.l[r]
            };
            rhs[n + k] = b / e;
        }
        let mut fac = kkt.clone();
        let mut d = Vec::new();
        ldl_in_place(&mut fac, &mut d).ok()?;
        let mut sol = rhs.clone();
        ldl_solve(&fac, &d, &mut sol);
        // Refinement against the unregularized system, keeping the best
        // iterate. Dependent active rows make that system singular, and a
        // correction step can then grow instead of shrink.
        let mut resid = vec![T::zero(); dim];
        kkt_residual(&kkt, &sol, &rhs, reg, n, &mut resid);
        let mut best = sol.clone();
        let mut best_norm = norm_inf(&resid);
        for _ in 0..2 {
            let mut corr = resid.clone();
            ldl_solve(&fac, &d, &mut corr);
            for i in 0..dim {
                sol[i] += corr[i];
            }
            kkt_residual(&kkt, &sol, &rhs, reg, n, &mut resid);
            let rn = norm_inf(&resid);
            if rn < best_norm {
                best_norm = rn;
                best.copy_from_slice(&sol);
            } else {
                break;
            }
        }
        let sol = best;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let xp: Vec<T> = sol[..n].to_vec();
        let mut yp = vec![T::zero(); m];
        for (k, &r) in active.iter().enumerate() {
            yp[r] = sol[n + k];
        }
        // Residuals of the polished pair on the unscaled problem.
        let mut ax = vec![T::zero(); m];
        self.prob.a.matvec(&xp, &mut ax);
        let mut prp = T::zero();
        for i in 0..m {
            let v = ax[i] / self.scale[i];
            let lo = self.prob.l[i] / self.scale[i];
            let hi = self.prob.u[i] / self.scale[i];
            let viol = (lo - v).max(v - hi).max(T::zero());
            if viol != viol || viol > prp {
                prp = viol;
            }
        }
        let mut px = vec![T::zero(); n];
        self.prob.p.matvec(&xp, &mut px);
        let mut aty = vec![T::zero(); n];
        {
            // A' y with unscaled rows.
            for (k, &r) in active.iter().enumerate() {
                let e = self.scale[r];
                let (cols, vals) = self.prob.a.row(r);
                for (&j, &v) in cols.iter().zip(vals) {
                    aty[j] += v / e * sol[n + k];
                }
            }
        }
        let mut prd = T::zero();
        for i in 0..n {
            let v = (px[i] + self.prob.q[i] + aty[i]).abs();
            if v != v || v > prd {
                prd = v;
            }
        }
        // A misidentified active set shows up as a dual with the wrong sign;
        // the KKT solve satisfies stationarity regardless, so signs must be
        // checked explicitly.
        let sign_tol = c::<T>(1e-9);
        for (k, &r) in active.iter().enumerate() {
            if self.prob.l[r] == self.prob.u[r] {
                continue;
            }
            let upper = y_unscaled[r] > T::zero();
            let yk = sol[n + k];
            if (upper && yk < -sign_tol) || (!upper && yk > sign_tol) {
                return None;
            }
        }
        let margin = c::<T>(1e-10);
        if prp <= rp + margin && prd <= rd + margin {
            Some((xp, yp, prp, prd))
        } else {
            None
        }
    }
}

fn kkt_residual<T: Real>(
    kkt: &DMat<T>,
    sol: &[T],
    rhs: &[T],
    reg: T,
    n: usize,
    out: &mut [T],
) {
    let dim = sol.len();
    for i in 0..dim {
        let mut s = dot(kkt.row(i), sol);
        // Remove the regularization contribution to refine against the
        // original KKT matrix.
        if i < n {
            s -= reg * sol[i];
        } else {
            s += reg * sol[i];
        }
        out[i] = rhs[i] - s;
    }
}

fn clamp<T: Real>(v: T, lo: T, hi: T) -> T {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

/// One-shot convenience wrapper around [`QpSolver`].
pub fn solve_qp<T: Real>(prob: QpProblem<T>, settings: QpSettings<T>) -> Result<QpSolution<T>> {
    QpSolver::new(prob, settings, &[])?.solve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Csr;

    fn csr(nrows: usize, ncols: usize, t: &[(usize, usize, f64)]) -> Csr<f64> {
        Csr::from_triplets(nrows, ncols, t).unwrap()
    }

    fn settings() -> QpSettings<f64> {
        QpSettings::default()
    }

    #[test]
    fn scalar_box_qp_hits_the_bound() {
        // minimize (x - 2)^2 subject to 0 <= x <= 1.
        let prob = QpProblem {
            p: csr(1, 1, &[(0, 0, 2.0)]),
            q: vec![-4.0],
            a: csr(1, 1, &[(0, 0, 1.0)]),
            l: vec![0.0],
            u: vec![1.0],
        };
        let sol = solve_qp(prob, settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        assert!(sol.polished);
        assert!((sol.x[0] - 1.0).abs() < 1e-10);
        // Stationarity 2x - 4 + y = 0 at x = 1.
        assert!((sol.y[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn equality_constrained_qp_matches_kkt() {
        // minimize x1^2 + x2^2 subject to x1 + x2 = 1 -> (1/2, 1/2).
        let prob = QpProblem {
            p: csr(2, 2, &[(0, 0, 2.0), (1, 1, 2.0)]),
            q: vec![0.0, 0.0],
            a: csr(1, 2, &[(0, 0, 1.0), (0, 1, 1.0)]),
            l: vec![1.0],
            u: vec![1.0],
        };
        let sol = solve_qp(prob, settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        assert!((sol.x[0] - 0.5).abs() < 1e-9);
        assert!((sol.x[1] - 0.5).abs() < 1e-9);
        assert!((sol.objective - 0.5).abs() < 1e-9);
    }

    #[test]
    fn linear_cost_with_box() {
        // minimize x subject to 0 <= x <= 1, no quadratic term.
        let prob = QpProblem {
            p: csr(1, 1, &[]),
            q: vec![1.0],
            a: csr(1, 1, &[(0, 0, 1.0)]),
            l: vec![0.0],
            u: vec![1.0],
        };
        let sol = solve_qp(prob, settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        assert!(sol.x[0].abs() < 1e-8);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        // x >= 1 and x <= 0 cannot hold together.
        let prob = QpProblem {
            p: csr(1, 1, &[(0, 0, 2.0)]),
            q: vec![0.0],
            a: csr(2, 1, &[(0, 0, 1.0), (1, 0, 1.0)]),
            l: vec![1.0, f64::NEG_INFINITY],
            u: vec![f64::INFINITY, 0.0],
        };
        let sol = solve_qp(prob, settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_direction_is_reported_infeasible() {
        // minimize -x with only x >= 0: no finite optimum.
        let prob = QpProblem {
            p: csr(1, 1, &[]),
            q: vec![-1.0],
            a: csr(1, 1, &[(0, 0, 1.0)]),
            l: vec![0.0],
            u: vec![f64::INFINITY],
        };
        let sol = solve_qp(prob, settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn iteration_cap_reports_maxiter() {
        let mut s = settings();
        s.max_iter = 1;
        s.eps_abs = 1e-14;
        s.polish = false;
        let prob = QpProblem {
            p: csr(2, 2, &[(0, 0, 2.0), (1, 1, 2.0)]),
            q: vec![-1.0, 3.0],
            a: csr(1, 2, &[(0, 0, 1.0), (0, 1, 1.0)]),
            l: vec![1.0],
            u: vec![1.0],
        };
        let sol = solve_qp(prob, s).unwrap();
        assert_eq!(sol.status, SolveStatus::MaxIter);
    }

    #[test]
    fn warm_resolve_converges_immediately() {
        let prob = QpProblem {
            p: csr(2, 2, &[(0, 0, 4.0), (1, 1, 2.0)]),
            q: vec![-1.0, -2.0],
            a: csr(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]),
            l: vec![-1.0, -1.0],
            u: vec![1.0, 1.0],
        };
        let mut solver = QpSolver::new(prob, settings(), &[]).unwrap();
        let first = solver.solve().unwrap();
        assert_eq!(first.status, SolveStatus::Solved);
        let second = solver.solve().unwrap();
        assert_eq!(second.status, SolveStatus::Solved);
        assert!(
            second.iterations <= 5,
            "warm re-solve took {} iterations",
            second.iterations
        );
        assert!((first.x[0] - second.x[0]).abs() < 1e-8);
    }

    #[test]
    fn bound_update_keeps_factor_and_tracks_solution() {
        let prob = QpProblem {
            p: csr(1, 1, &[(0, 0, 2.0)]),
            q: vec![-4.0],
            a: csr(1, 1, &[(0, 0, 1.0)]),
            l: vec![0.0],
            u: vec![10.0],
        };
        let mut solver = QpSolver::new(prob, settings(), &[]).unwrap();
        let free = solver.solve().unwrap();
        assert!((free.x[0] - 2.0).abs() < 1e-8);
        solver.update_bounds(&[0.0], &[1.0]).unwrap();
        let clamped = solver.solve().unwrap();
        assert!((clamped.x[0] - 1.0).abs() < 1e-8);
        solver.update_bounds(&[0.5, ], &[0.5]).unwrap();
        let pinned = solver.solve().unwrap();
        assert!((pinned.x[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn badly_scaled_rows_still_solve() {
        let prob = QpProblem {
            p: csr(2, 2, &[(0, 0, 2.0), (1, 1, 2.0)]),
            q: vec![-2.0, -2.0],
            a: csr(2, 2, &[(0, 0, 1e4), (1, 1, 1e-3)]),
            l: vec![0.0, 0.0],
            u: vec![5e3, 4e-4],
        };
        let sol = solve_qp(prob, settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        assert!((sol.x[0] - 0.5).abs() < 1e-6);
        assert!((sol.x[1] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn band_arrow_factor_matches_dense_solve() {
        // SPD matrix: banded 8x8 block plus a 2-column border.
        let n = 10;
        let mut m = DMat::zeros(n, n);
        for i in 0..8 {
            m.set(i, i, 4.0 + i as f64 * 0.1);
            if i + 1 < 8 {
                m.set(i, i + 1, -1.0);
                m.set(i + 1, i, -1.0);
            }
        }
        for b in 8..10 {
            m.set(b, b, 6.0);
            for i in 0..8 {
                let v = 0.3 + 0.05 * (i as f64) * (b as f64 - 7.0);
                m.set(b, i, v);
                m.set(i, b, v);
            }
        }
        m.set(8, 9, 0.7);
        m.set(9, 8, 0.7);
        let b0: Vec<f64> = (0..n).map(|i| (i as f64 * 0.77).sin()).collect();

        let fac = BandArrow::factor(&m, 2, 1).unwrap();
        let mut x_band = b0.clone();
        fac.solve(&mut x_band);

        let mut dense = m.clone();
        cholesky_in_place(&mut dense).unwrap();
        let mut x_dense = b0;
        cholesky_solve(&dense, &mut x_dense);

        for i in 0..n {
            assert!(
                (x_band[i] - x_dense[i]).abs() < 1e-10,
                "mismatch at {i}: {} vs {}",
                x_band[i],
                x_dense[i]
            );
        }
    }

    #[test]
    fn border_hint_reproduces_dense_solution() {
        // Chain coupling between neighbours plus one variable tied to all.
        let n = 30;
        let mut pt = Vec::new();
        for i in 0..n {
            pt.push((i, i, 3.0));
        }
        let mut at = Vec::new();
        let mut l = Vec::new();
        let mut u = Vec::new();
        for i in 0..n - 2 {
            at.push((i, i, 1.0));
            at.push((i, i + 1, -2.0));
            at.push((i, n - 1, 0.5));
            l.push(-1.0);
            u.push(1.0);
        }
        let q: Vec<f64> = (0..n).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let prob = QpProblem {
            p: csr(n, n, &pt),
            q: q.clone(),
            a: csr(n - 2, n, &at),
            l: l.clone(),
            u: u.clone(),
        };
        let hinted = QpSolver::new(prob.clone(), settings(), &[n - 1])
            .unwrap()
            .solve()
            .unwrap();
        let dense = QpSolver::new(prob, settings(), &[])
            .unwrap()
            .solve()
            .unwrap();
        assert_eq!(hinted.status, SolveStatus::Solved);
        for i in 0..n {
            assert!((hinted.x[i] - dense.x[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn polish_reaches_machine_precision() {
        let prob = QpProblem {
            p: csr(2, 2, &[(0, 0, 2.0), (1, 1, 4.0)]),
            q: vec![-2.0, -4.0],
            a: csr(3, 2, &[(0, 0, 1.0), (1, 1, 1.0), (2, 0, 1.0), (2, 1, 1.0)]),
            l: vec![-10.0, -10.0, f64::NEG_INFINITY],
            u: vec![10.0, 10.0, 1.2],
        };
        let sol = solve_qp(prob, settings()).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        assert!(sol.polished);
        // Constrained optimum of x'diag(1,2)x - 2x1 - 4x2 on x1 + x2 <= 1.2.
        // KKT: 2x1 - 2 + nu = 0, 4x2 - 4 + nu = 0, x1 + x2 = 1.2
        // -> x1 = 1 - nu/2, x2 = 1 - nu/4, nu = (0.8) / 0.75.
        let nu = 0.8 / 0.75;
        assert!((sol.x[0] - (1.0 - nu / 2.0)).abs() < 1e-9);
        assert!((sol.x[1] - (1.0 - nu / 4.0)).abs() < 1e-9);
        assert!(sol.primal_residual < 1e-9);
        assert!(sol.dual_residual < 1e-9);
    }

    #[test]
    fn rejects_inconsistent_dimensions_and_bounds() {
        let bad = QpProblem {
            p: csr(2, 2, &[]),
            q: vec![0.0, 0.0],
            a: csr(1, 2, &[(0, 0, 1.0)]),
            l: vec![2.0],
            u: vec![1.0],
        };
        assert!(QpSolver::new(bad, settings(), &[]).is_err());
        let wrong = QpProblem {
            p: csr(3, 3, &[]),
            q: vec![0.0, 0.0],
            a: csr(1, 2, &[]),
            l: vec![0.0],
            u: vec![0.0],
        };
        assert!(QpSolver::new(wrong, settings(), &[]).is_err());
    }
}
