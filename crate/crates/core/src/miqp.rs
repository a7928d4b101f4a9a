//! Mixed-integer QP: a problem builder, best-first branch-and-bound, and an
//! exhaustive reference solver.
//!
//! Binary variables are relaxed to `[0, 1]` box rows; branching fixes a row
//! to `[0, 0]` or `[1, 1]`, so every node differs from its parent only in
//! bounds and the underlying [`QpSolver`] keeps one factorization for the
//! whole tree. Nodes are explored best-first by parent bound with
//! most-fractional branching, an interval presolve rejects nodes whose fixed
//! binaries already contradict a row, and a rounding heuristic at the root
//! seeds the incumbent. The returned solution comes from a final
//! high-accuracy solve with all binaries pinned.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::linalg::Csr;
use crate::qp::{QpProblem, QpSettings, QpSolution, QpSolver, SolveStatus};
use crate::scalar::{c, Real};

/// A QP plus the list of binary variables, each tied to its `[0, 1]` box row.
#[derive(Debug, Clone)]
pub struct MiqpProblem<T> {
    pub qp: QpProblem<T>,
    /// `(variable, box row)` pairs; the row must be the identity row of the
    /// variable with bounds `[0, 1]`.
    pub binaries: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiqpSettings<T> {
    pub qp: QpSettings<T>,
    /// A relaxation value within this of 0 or 1 counts as integral.
    pub int_tol: T,
    /// Nodes within this of the incumbent objective are pruned.
    pub gap_tol: T,
    pub node_limit: usize,
    /// Accuracy of the final solve with all binaries pinned.
    pub final_eps: T,
}

impl<T: Real> Default for MiqpSettings<T> {
    fn default() -> Self {
        Self {
            qp: QpSettings::default(),
            int_tol: c(1e-6),
            gap_tol: c(1e-6),
            node_limit: 2000,
            final_eps: c(1e-8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiqpStatus {
    Optimal,
    Infeasible,
    NodeLimit,
}

#[derive(Debug, Clone)]
pub struct MiqpSolution<T> {
    /// Empty when no integer-feasible point was found.
    pub x: Vec<T>,
    pub objective: T,
    pub status: MiqpStatus,
    /// Branch-and-bound nodes popped, zero for the reference solver.
    pub nodes: usize,
    /// Relaxation bounds in pop order; non-decreasing by construction.
    pub node_bounds: Vec<T>,
}

struct Node<T> {
    bound: T,
    seq: usize,
    fixes: Vec<(usize, bool)>,
}

impl<T: Real> PartialEq for Node<T> {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}

impl<T: Real> Eq for Node<T> {}

impl<T: Real> PartialOrd for Node<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> Ord for Node<T> {
    // BinaryHeap pops the maximum; invert so the smallest bound (then the
    // oldest node) comes out first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .partial_cmp(&self.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Incremental construction of (MI)QP data in triplet form. Quadratic terms
/// are given once per pair and mirrored automatically.
#[derive(Debug, Clone, Default)]
pub struct ProblemBuilder<T> {
    q: Vec<T>,
    p_triplets: Vec<(usize, usize, T)>,
    a_triplets: Vec<(usize, usize, T)>,
    l: Vec<T>,
    u: Vec<T>,
    binaries: Vec<(usize, usize)>,
}

/// Variables of one absolute-value encoding: `value = pos - neg` with
/// `pos, neg >= 0` and the binary steering which side is active.
#[derive(Debug, Clone, Copy)]
pub struct AbsEncoding {
    pub pos: usize,
    pub neg: usize,
    pub bin: usize,
}

impl<T: Real> ProblemBuilder<T> {
    pub fn new() -> Self {
        Self {
            q: Vec::new(),
            p_triplets: Vec::new(),
            a_triplets: Vec::new(),
            l: Vec::new(),
            u: Vec::new(),
            binaries: Vec::new(),
        }
    }

    pub fn nvars(&self) -> usize {
        self.q.len()
    }

    pub fn nrows(&self) -> usize {
        self.l.len()
    }

    pub fn add_var(&mut self) -> usize {
        self.q.push(T::zero());
        self.q.len() - 1
    }

    pub fn add_vars(&mut self, k: usize) -> std::ops::Range<usize> {
        let start = self.q.len();
        for _ in 0..k {
            self.q.push(T::zero());
        }
        start..self.q.len()
    }

    /// Add `w (xi - target)^2 / 2`-style terms by parts: this is the raw
    /// quadratic coefficient, mirrored when off-diagonal.
    pub fn add_quad(&mut self, i: usize, j: usize, w: T) {
        self.p_triplets.push((i, j, w));
        if i != j {
            self.p_triplets.push((j, i, w));
        }
    }

    pub fn add_linear(&mut self, i: usize, w: T) {
        self.q[i] += w;
    }

    /// Convenience for `w/2 (x_i - target)^2` up to a constant.
    pub fn add_quad_cost(&mut self, i: usize, w: T, target: T) {
        self.add_quad(i, i, w);
        self.add_linear(i, -w * target);
    }

    pub fn add_row(&mut self, entries: &[(usize, T)], l: T, u: T) -> usize {
        let r = self.l.len();
        for &(col, v) in entries {
            self.a_triplets.push((r, col, v));
        }
        self.l.push(l);
        self.u.push(u);
        r
    }

    /// New binary variable with its `[0, 1]` box row.
    pub fn add_binary(&mut self) -> usize {
        let v = self.add_var();
        let r = self.add_row(&[(v, T::one())], T::zero(), T::one());
        self.binaries.push((v, r));
        v
    }

    /// Box row for a plain variable.
    pub fn bound_var(&mut self, v: usize, l: T, u: T) -> usize {
        self.add_row(&[(v, T::one())], l, u)
    }

    /// Split the affine value `sum(entries) + offset` into `pos - neg` with
    /// a binary forcing one side to zero, so `pos + neg` is its absolute
    /// value at integral solutions. `big_m` must dominate the value's range.
    pub fn encode_abs(&mut self, entries: &[(usize, T)], offset: T, big_m: T) -> AbsEncoding {
        let pos = self.add_var();
        let neg = self.add_var();
        let bin = self.add_binary();
        let mut row: Vec<(usize, T)> = entries.to_vec();
        row.push((pos, -T::one()));
        row.push((neg, T::one()));
        self.add_row(&row, -offset, -offset);
        self.bound_var(pos, T::zero(), T::infinity());
        self.bound_var(neg, T::zero(), T::infinity());
        // pos <= M b, neg <= M (1 - b).
        self.add_row(&[(pos, T::one()), (bin, -big_m)], T::neg_infinity(), T::zero());
        self.add_row(&[(neg, T::one()), (bin, big_m)], T::neg_infinity(), big_m);
        AbsEncoding { pos, neg, bin }
    }

    pub fn build(self) -> Result<MiqpProblem<T>> {
        let n = self.q.len();
        let m = self.l.len();
        let qp = QpProblem {
            p: Csr::from_triplets(n, n, &self.p_triplets)?,
            q: self.q,
            a: Csr::from_triplets(m, n, &self.a_triplets)?,
            l: self.l,
            u: self.u,
        };
        Ok(MiqpProblem {
            qp,
            binaries: self.binaries,
        })
    }

    pub fn build_qp(self) -> Result<QpProblem<T>> {
        if !self.binaries.is_empty() {
            return Err(Error::Invalid(
                "builder holds binaries; build a mixed-integer problem".into(),
            ));
        }
        Ok(self.build()?.qp)
    }
}

/// Interval propagation over the rows: bounds of single-entry rows define
/// variable boxes, and any row whose attainable interval misses its bounds
/// proves the node infeasible. Cheap, and decisive once exclusivity rows
/// have all their binaries fixed.
struct Presolve<T> {
    var_lo: Vec<T>,
    var_hi: Vec<T>,
    single: Vec<(usize, usize, T)>,
    multi: Vec<usize>,
}

impl<T: Real> Presolve<T> {
    fn new(a: &Csr<T>) -> Self {
        let mut single = Vec::new();
        let mut multi = Vec::new();
        for r in 0..a.nrows() {
            let (cols, vals) = a.row(r);
            if cols.len() == 1 && vals[0] != T::zero() {
                single.push((r, cols[0], vals[0]));
            } else if cols.len() > 1 {
                multi.push(r);
            }
        }
        Self {
            var_lo: vec![T::neg_infinity(); a.ncols()],
            var_hi: vec![T::infinity(); a.ncols()],
            single,
            multi,
        }
    }

    fn feasible(&mut self, a: &Csr<T>, l: &[T], u: &[T]) -> bool {
        let tol = c::<T>(1e-9);
        for v in &mut self.var_lo {
            *v = T::neg_infinity();
        }
        for v in &mut self.var_hi {
            *v = T::infinity();
        }
        for &(r, col, coef) in &self.single {
            let (mut lo, mut hi) = (l[r] / coef, u[r] / coef);
            if coef < T::zero() {
                std::mem::swap(&mut lo, &mut hi);
            }
            self.var_lo[col] = self.var_lo[col].max(lo);
            self.var_hi[col] = self.var_hi[col].min(hi);
            if self.var_lo[col] > self.var_hi[col] + tol {
                return false;
            }
        }
        for &r in &self.multi {
            let (cols, vals) = a.row(r);
            let mut lo = T::zero();
            let mut hi = T::zero();
            for (&j, &v) in cols.iter().zip(vals) {
                let (a1, a2) = (v * self.var_lo[j], v * self.var_hi[j]);
                lo += a1.min(a2);
                hi += a1.max(a2);
                if lo.is_nan() || hi.is_nan() {
                    return true;
                }
            }
            if lo > u[r] + tol || hi < l[r] - tol {
                return false;
            }
        }
        true
    }
}

struct Tree<T: Real> {
    solver: QpSolver<T>,
    /// Constraint matrix before the solver's internal row scaling; the
    /// presolve intervals must pair with the unscaled bounds.
    a_orig: Csr<T>,
    base_l: Vec<T>,
    base_u: Vec<T>,
    binaries: Vec<(usize, usize)>,
    /// Groups of binaries tied by a `sum = 1` row; fixing one to 1 lets the
    /// rest be pinned to 0 in the same node.
    exclusive: Vec<Vec<usize>>,
    presolve: Presolve<T>,
    settings: MiqpSettings<T>,
    work_l: Vec<T>,
    work_u: Vec<T>,
}

impl<T: Real> Tree<T> {
    fn new(prob: MiqpProblem<T>, settings: MiqpSettings<T>, border: &[usize]) -> Result<Self> {
        for &(v, r) in &prob.binaries {
            let (cols, vals) = prob.qp.a.row(r);
            let ok = cols == [v]
                && vals[0] == T::one()
                && prob.qp.l[r] == T::zero()
                && prob.qp.u[r] == T::one();
            if !ok {
                return Err(Error::Invalid(format!(
                    "binary variable {} lacks a unit box row at {}",
                    v, r
                )));
            }
        }
        let base_l = prob.qp.l.clone();
        let base_u = prob.qp.u.clone();
        let a_orig = prob.qp.a.clone();
        let presolve = Presolve::new(&a_orig);
        let mut var_to_bin = std::collections::HashMap::new();
        for (k, &(v, _)) in prob.binaries.iter().enumerate() {
            var_to_bin.insert(v, k);
        }
        let mut exclusive = Vec::new();
        for r in 0..a_orig.nrows() {
            if base_l[r] != T::one() || base_u[r] != T::one() {
                continue;
            }
            let (cols, vals) = a_orig.row(r);
            if cols.len() < 2 || vals.iter().any(|&v| v != T::one()) {
                continue;
            }
            let members: Option<Vec<usize>> =
                cols.iter().map(|c| var_to_bin.get(c).copied()).collect();
            if let Some(m) = members {
                exclusive.push(m);
            }
        }
        let mut tree_settings = settings.qp;
        // Node relaxations skip polishing; incumbents are re-solved at the
        // final accuracy anyway. Penalty adaptation stays on, since fixing
        // binaries reshapes the problem enough that a frozen penalty can
        // stall far from the solution.
        tree_settings.polish = false;
        let solver = QpSolver::new(prob.qp, tree_settings, border)?;
        Ok(Self {
            solver,
            a_orig,
            work_l: base_l.clone(),
            work_u: base_u.clone(),
            base_l,
            base_u,
            binaries: prob.binaries,
            exclusive,
            presolve,
            settings,
        })
    }

    fn apply(&mut self, fixes: &[(usize, bool)]) {
        self.work_l.copy_from_slice(&self.base_l);
        self.work_u.copy_from_slice(&self.base_u);
        for &(k, v) in fixes {
            let row = self.binaries[k].1;
            let val = if v { T::one() } else { T::zero() };
            self.work_l[row] = val;
            self.work_u[row] = val;
        }
        // A binary fixed to 1 zeroes the rest of its exclusivity group.
        for &(k, v) in fixes {
            if !v {
                continue;
            }
            for group in &self.exclusive {
                if !group.contains(&k) {
                    continue;
                }
                for &other in group {
                    if other == k {
                        continue;
                    }
                    let row = self.binaries[other].1;
                    // An explicit conflicting fix must stay visible to the
                    // presolve rather than be papered over.
                    if self.work_l[row] != T::one() {
                        self.work_l[row] = T::zero();
                        self.work_u[row] = T::zero();
                    }
                }
            }
        }
    }

    fn solve_node(&mut self, fixes: &[(usize, bool)]) -> Result<Option<QpSolution<T>>> {
        self.apply(fixes);
        if !self.presolve.feasible(&self.a_orig, &self.work_l, &self.work_u) {
            return Ok(None);
        }
        self.solver.update_bounds(&self.work_l, &self.work_u)?;
        let sol = self.solver.solve()?;
        if sol.status == SolveStatus::Infeasible {
            return Ok(None);
        }
        Ok(Some(sol))
    }

    /// Index (into the binary list) of the most fractional binary, ties to
    /// the lowest index; `None` when all are integral within tolerance.
    /// Picks the unfixed binary whose relaxed value is farthest from
    /// integral. Fixed binaries are skipped: an unconverged relaxation can
    /// leave even a pinned variable off its bound, and branching on it
    /// again would loop.
    fn most_fractional(&self, x: &[T], fixes: &[(usize, bool)]) -> Option<usize> {
        let mut best: Option<(usize, T)> = None;
        for (k, &(v, _)) in self.binaries.iter().enumerate() {
            if fixes.iter().any(|&(fk, _)| fk == k) {
                continue;
            }
            let frac = x[v].min(T::one() - x[v]).max(T::zero());
            if frac <= self.settings.int_tol {
                continue;
            }
            match best {
                Some((_, f)) if frac <= f => {}
                _ => best = Some((k, frac)),
            }
        }
        best.map(|(k, _)| k)
    }

    /// Rounds the relaxed binary values, keeping any explicit fixes.
    fn assignment(&self, x: &[T], fixes: &[(usize, bool)]) -> Vec<(usize, bool)> {
        self.binaries
            .iter()
            .enumerate()
            .map(|(k, &(v, _))| {
                let fixed = fixes.iter().find(|&&(fk, _)| fk == k);
                (k, fixed.map(|&(_, fv)| fv).unwrap_or(x[v] > c(0.5)))
            })
            .collect()
    }

    /// High-accuracy solve with every binary pinned; the factorization is
    /// still reused.
    fn pinned_solve(&mut self, assignment: &[(usize, bool)]) -> Result<Option<QpSolution<T>>> {
        let saved = self.solver.settings;
        self.solver.settings.eps_abs = self.settings.final_eps;
        self.solver.settings.polish = true;
        let out = self.solve_node(assignment);
        self.solver.settings = saved;
        match out {
            Ok(Some(sol)) if sol.status == SolveStatus::Solved => Ok(Some(sol)),
            Ok(_) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Best-first branch-and-bound. `border` is forwarded to the QP solver's
/// factorization heuristic.
///
/// Every incumbent candidate is re-solved at the final accuracy with all
/// binaries pinned, so incumbent objectives are exact and pruning against
/// them is sound even when node relaxations stop early. Objectives of
/// unconverged nodes are never used as bounds; such nodes pass their
/// parent's bound to their children.
pub fn solve_miqp<T: Real>(
    prob: MiqpProblem<T>,
    settings: MiqpSettings<T>,
    border: &[usize],
) -> Result<MiqpSolution<T>> {
    let mut tree = Tree::new(prob, settings, border)?;
    let mut nodes = 0usize;
    let mut node_bounds = Vec::new();
    let mut incumbent: Option<(T, Vec<T>)> = None;
    let mut seq = 0usize;

    let root = match tree.solve_node(&[])? {
        Some(sol) => sol,
        None => {
            return Ok(MiqpSolution {
                x: Vec::new(),
                objective: T::infinity(),
                status: MiqpStatus::Infeasible,
                nodes: 0,
                node_bounds,
            })
        }
    };
    let root_solved = root.status == SolveStatus::Solved;

    let consider = |tree: &mut Tree<T>,
                        assignment: &[(usize, bool)],
                        incumbent: &mut Option<(T, Vec<T>)>|
     -> Result<()> {
        if let Some(sol) = tree.pinned_solve(assignment)? {
            let better = incumbent
                .as_ref()
                .map(|(obj, _)| sol.objective < *obj)
                .unwrap_or(true);
            if better {
                *incumbent = Some((sol.objective, sol.x));
            }
        }
        Ok(())
    };

    let mut heap = BinaryHeap::new();
    let root_assignment = tree.assignment(&root.x, &[]);
    match tree.most_fractional(&root.x, &[]) {
        None => {
            consider(&mut tree, &root_assignment, &mut incumbent)?;
            // A solved, integral relaxation is the optimum; otherwise there
            // is nothing to branch on and the pinned value is the best
            // available answer.
        }
        Some(k) => {
            // Rounding heuristic to seed the incumbent.
            consider(&mut tree, &root_assignment, &mut incumbent)?;
            let bound = if root_solved {
                root.objective
            } else {
                T::neg_infinity()
            };
            for v in [false, true] {
                heap.push(Node {
                    bound,
                    seq,
                    fixes: vec![(k, v)],
                });
                seq += 1;
            }
        }
    }

    let mut status = MiqpStatus::Optimal;
    while let Some(node) = heap.pop() {
        if nodes >= tree.settings.node_limit {
            status = MiqpStatus::NodeLimit;
            break;
        }
        if let Some((obj, _)) = &incumbent {
            if node.bound >= *obj - tree.settings.gap_tol {
                // Best-first order: every remaining node is at least as bad.
                break;
            }
        }
        nodes += 1;
        node_bounds.push(node.bound);
        let sol = match tree.solve_node(&node.fixes)? {
            Some(s) => s,
            None => continue,
        };
        let solved = sol.status == SolveStatus::Solved;
        if solved {
            if let Some((obj, _)) = &incumbent {
                if sol.objective >= *obj - tree.settings.gap_tol {
                    continue;
                }
            }
        }
        match tree.most_fractional(&sol.x, &node.fixes) {
            None => {
                let assignment = tree.assignment(&sol.x, &node.fixes);
                consider(&mut tree, &assignment, &mut incumbent)?;
            }
            Some(k) => {
                let bound = if solved { sol.objective } else { node.bound };
                for v in [false, true] {
                    let mut fixes = node.fixes.clone();
                    fixes.push((k, v));
                    heap.push(Node { bound, seq, fixes });
                    seq += 1;
                }
            }
        }
    }

    Ok(match incumbent {
        None => MiqpSolution {
            x: Vec::new(),
            objective: T::infinity(),
            status: if status == MiqpStatus::NodeLimit {
                MiqpStatus::NodeLimit
            } else {
                MiqpStatus::Infeasible
            },
            nodes,
            node_bounds,
        },
        Some((objective, x)) => MiqpSolution {
            x,
            objective,
            status,
            nodes,
            node_bounds,
        },
    })
}

/// Exhaustive reference solver: tries every assignment of up to 16 binaries
/// at the final accuracy and returns the best. Intended for validating the
/// branch-and-bound path.
pub fn solve_by_enumeration<T: Real>(
    prob: MiqpProblem<T>,
    settings: MiqpSettings<T>,
    border: &[usize],
) -> Result<MiqpSolution<T>> {
    let k = prob.binaries.len();
    if k > 16 {
        return Err(Error::Invalid(format!(
            "enumeration over {} binaries is not tractable",
            k
        )));
    }
    let mut tree = Tree::new(prob, settings, border)?;
    let mut best: Option<(T, Vec<T>)> = None;
    for mask in 0u32..(1u32 << k) {
        let assignment: Vec<(usize, bool)> =
            (0..k).map(|i| (i, mask >> i & 1 == 1)).collect();
        if let Some(sol) = tree.pinned_solve(&assignment)? {
            let better = best
                .as_ref()
                .map(|(obj, _)| sol.objective < *obj)
                .unwrap_or(true);
            if better {
                best = Some((sol.objective, sol.x));
            }
        }
    }
    Ok(match best {
        None => MiqpSolution {
            x: Vec::new(),
            objective: T::infinity(),
            status: MiqpStatus::Infeasible,
            nodes: 0,
            node_bounds: Vec::new(),
        },
        Some((obj, x)) => MiqpSolution {
            x,
            objective: obj,
            status: MiqpStatus::Optimal,
            nodes: 0,
            node_bounds: Vec::new(),
        },
    })
}
