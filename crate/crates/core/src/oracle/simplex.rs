//! Dense revised simplex for small linear programs.
//!
//! Solves `min cᵀx` subject to rows `aᵢx {≤,=,≥} bᵢ` and `x ≥ 0` with a
//! two-phase method. The basis inverse is kept explicitly and refactored
//! periodically. Pricing is Dantzig's rule; after a run of degenerate pivots
//! it falls back to Bland's rule until the objective moves again.
//!
//! Row duals `y` are reported with the convention that reduced costs
//! `c - Aᵀy` are nonnegative at optimality, so `≤` rows of a minimization
//! carry `y ≤ 0`.

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-10;
const DEGENERATE_RUN: usize = 25;
const REFACTOR_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub duals: Vec<f64>,
    pub iterations: usize,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
        }
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, kind, rhs });
        self.rows.len() - 1
    }

    pub fn solve(&self) -> LpSolution {
        Tableau::new(self).run()
    }
}

struct Tableau {
    m: usize,
    n_orig: usize,
    /// Columns in standard form: originals, slacks, artificials.
    cols: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    artificial_start: usize,
    b: Vec<f64>,
    row_sign: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<Option<usize>>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    pivots_since_refactor: usize,
}

enum Phase {
    One,
    Two,
}

enum StepResult {
    Optimal,
    Unbounded,
    Pivoted,
}

impl Tableau {
    fn new(lp: &LinearProgram) -> Self {
        let m = lp.rows.len();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); lp.num_vars];
        let mut b = Vec::with_capacity(m);
        let mut row_sign = Vec::with_capacity(m);
        let mut kinds = Vec::with_capacity(m);
        for (i, row) in lp.rows.iter().enumerate() {
            let sign = if row.rhs < 0.0 { -1.0 } else { 1.0 };
            for &(j, v) in &row.coeffs {
                if v != 0.0 {
                    cols[j].push((i, sign * v));
                }
            }
            b.push(sign * row.rhs);
            row_sign.push(sign);
            kinds.push(match (row.kind, sign < 0.0) {
                (RowKind::Le, true) => RowKind::Ge,
                (RowKind::Ge, true) => RowKind::Le,
                (k, _) => k,
            });
        }
        // merge duplicate (row) entries within a column
        for c in &mut cols {
            c.sort_by_key(|&(i, _)| i);
            c.dedup_by(|a, b| {
                if a.0 == b.0 {
                    b.1 += a.1;
                    true
                } else {
                    false
                }
            });
        }
        let mut basis = vec![usize::MAX; m];
        for (i, kind) in kinds.iter().enumerate() {
            match kind {
                RowKind::Le => {
                    cols.push(vec![(i, 1.0)]);
                    basis[i] = cols.len() - 1;
                }
                RowKind::Ge => cols.push(vec![(i, -1.0)]),
                RowKind::Eq => {}
            }
        }
        let artificial_start = cols.len();
        for i in 0..m {
            if basis[i] == usize::MAX {
                cols.push(vec![(i, 1.0)]);
                basis[i] = cols.len() - 1;
            }
        }
        let mut cost = vec![0.0; cols.len()];
        cost[..lp.num_vars].copy_from_slice(&lp.objective);
        let mut in_basis = vec![None; cols.len()];
        for (i, &j) in basis.iter().enumerate() {
            in_basis[j] = Some(i);
        }
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = 1.0;
        }
        let xb = b.clone();
        Self {
            m,
            n_orig: lp.num_vars,
            cols,
            cost,
            artificial_start,
            b,
            row_sign,
            basis,
            in_basis,
            binv,
            xb,
            iterations: 0,
            pivots_since_refactor: 0,
        }
    }

    fn is_artificial(&self, j: usize) -> bool {
        j >= self.artificial_start
    }

    fn phase_cost(&self, phase: &Phase, j: usize) -> f64 {
        match phase {
            Phase::One => {
                if self.is_artificial(j) {
                    1.0
                } else {
                    0.0
                }
            }
            Phase::Two => {
                if self.is_artificial(j) {
                    0.0
                } else {
                    self.cost[j]
                }
            }
        }
    }

    fn duals(&self, phase: &Phase) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &j) in self.basis.iter().enumerate() {
            let cb = self.phase_cost(phase, j);
            if cb != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, &v) in y.iter_mut().zip(row) {
                    *yk += cb * v;
                }
            }
        }
        y
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        for &(r, v) in &self.cols[j] {
            for (i, a) in alpha.iter_mut().enumerate() {
                *a += self.binv[i * m + r] * v;
            }
        }
        alpha
    }

    fn pivot(&mut self, r: usize, j: usize, alpha: &[f64]) {
        let m = self.m;
        let theta = self.xb[r] / alpha[r];
        for i in 0..m {
            if i != r {
                self.xb[i] -= theta * alpha[i];
                if self.xb[i] < 0.0 && self.xb[i] > -1e-11 {
                    self.xb[i] = 0.0;
                }
            }
        }
        self.xb[r] = theta;
        let piv = alpha[r];
        for v in &mut self.binv[r * m..(r + 1) * m] {
            *v /= piv;
        }
        let pivot_row: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
        for i in 0..m {
            if i != r && alpha[i] != 0.0 {
                let f = alpha[i];
                for (v, &p) in self.binv[i * m..(i + 1) * m].iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
            }
        }
        self.in_basis[self.basis[r]] = None;
        self.basis[r] = j;
        self.in_basis[j] = Some(r);
        self.iterations += 1;
        self.pivots_since_refactor += 1;
        if self.pivots_since_refactor >= REFACTOR_EVERY {
            self.refactor();
        }
    }

    /// Recomputes the basis inverse from scratch by Gauss-Jordan elimination
    /// with partial pivoting, then the basic values.
    fn refactor(&mut self) {
        let m = self.m;
        let mut a = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            for &(r, v) in &self.cols[j] {
                a[r * m + k] = v;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let p = (col..m)
                .max_by(|&x, &y| a[x * m + col].abs().total_cmp(&a[y * m + col].abs()))
                .unwrap();
            if a[p * m + col].abs() < 1e-14 {
                // singular basis: keep the product-form inverse
                self.pivots_since_refactor = 0;
                return;
            }
            if p != col {
                for k in 0..m {
                    a.swap(p * m + k, col * m + k);
                    inv.swap(p * m + k, col * m + k);
                }
            }
            let d = a[col * m + col];
            for k in 0..m {
                a[col * m + k] /= d;
                inv[col * m + k] /= d;
            }
            for i in 0..m {
                if i != col {
                    let f = a[i * m + col];
                    if f != 0.0 {
                        for k in 0..m {
                            a[i * m + k] -= f * a[col * m + k];
                            inv[i * m + k] -= f * inv[col * m + k];
                        }
                    }
                }
            }
        }
        // inv is B⁻¹ with rows indexed by basis position
        self.binv = inv;
        for i in 0..m {
            let v: f64 = (0..m).map(|k| self.binv[i * m + k] * self.b[k]).sum();
            self.xb[i] = if v < 0.0 && v > -1e-11 { 0.0 } else { v };
        }
        self.pivots_since_refactor = 0;
    }

    fn step(&mut self, phase: &Phase, bland: bool) -> StepResult {
        let y = self.duals(phase);
        let mut entering: Option<(usize, f64)> = None;
        for j in 0..self.cols.len() {
            if self.in_basis[j].is_some() || (matches!(phase, Phase::Two) && self.is_artificial(j)) {
                continue;
            }
            let d = self.phase_cost(phase, j) - self.cols[j].iter().map(|&(r, v)| y[r] * v).sum::<f64>();
            if d < -OPT_TOL {
                if bland {
                    entering = Some((j, d));
                    break;
                }
                if entering.is_none_or(|(_, best)| d < best) {
                    entering = Some((j, d));
                }
            }
        }
        let Some((j, _)) = entering else {
            return StepResult::Optimal;
        };
        let alpha = self.ftran(j);
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..self.m {
            if alpha[i] > PIVOT_TOL {
                let theta = self.xb[i].max(0.0) / alpha[i];
                let better = match leave {
                    None => true,
                    Some((r, best)) => {
                        let tie = (theta - best).abs() <= 1e-12 * best.abs().max(1.0);
                        if tie {
                            if bland {
                                self.basis[i] < self.basis[r]
                            } else {
                                alpha[i] > alpha[r]
                            }
                        } else {
                            theta < best
                        }
                    }
                };
                if better {
                    leave = Some((i, theta));
                }
            }
        }
        let Some((r, _)) = leave else {
            return StepResult::Unbounded;
        };
        self.pivot(r, j, &alpha);
        StepResult::Pivoted
    }

    fn optimize(&mut self, phase: Phase, limit: usize) -> LpStatus {
        let mut degenerate_run = 0;
        let mut last_obj = self.objective(&phase);
        loop {
            if self.iterations >= limit {
                return LpStatus::IterationLimit;
            }
            match self.step(&phase, degenerate_run >= DEGENERATE_RUN) {
                StepResult::Optimal => return LpStatus::Optimal,
                StepResult::Unbounded => return LpStatus::Unbounded,
                StepResult::Pivoted => {
                    let obj = self.objective(&phase);
                    if obj < last_obj - 1e-12 * last_obj.abs().max(1.0) {
                        degenerate_run = 0;
                    } else {
                        degenerate_run += 1;
                    }
                    last_obj = obj;
                }
            }
        }
    }

    fn objective(&self, phase: &Phase) -> f64 {
        self.basis
            .iter()
            .zip(&self.xb)
            .map(|(&j, &x)| self.phase_cost(phase, j) * x)
            .sum()
    }

    /// Pivots zero-valued artificials out of the basis where some
    /// non-artificial column can replace them. Artificials left behind sit
    /// on redundant rows.
    fn expel_artificials(&mut self) {
        let m = self.m;
        for r in 0..m {
            if !self.is_artificial(self.basis[r]) {
                continue;
            }
            let row = self.binv[r * m..(r + 1) * m].to_vec();
            let candidate = (0..self.artificial_start).find(|&j| {
                self.in_basis[j].is_none() && {
                    let rho: f64 = self.cols[j].iter().map(|&(i, v)| row[i] * v).sum();
                    rho.abs() > 1e-7
                }
            });
            if let Some(j) = candidate {
                let alpha = self.ftran(j);
                self.pivot(r, j, &alpha);
            }
        }
    }

    fn run(mut self) -> LpSolution {
        let limit = 50 * (self.m + self.cols.len()) + 1000;
        let needs_phase_one = self.basis.iter().any(|&j| self.is_artificial(j));
        if needs_phase_one {
            let status = self.optimize(Phase::One, limit);
            if status == LpStatus::IterationLimit {
                return self.finish(status);
            }
            self.refactor();
            let infeas = self.objective(&Phase::One);
            let scale = self.b.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
            if infeas > 1e-9 * scale {
                return self.finish(LpStatus::Infeasible);
            }
            self.expel_artificials();
        }
        let status = self.optimize(Phase::Two, limit);
        self.refactor();
        self.finish(status)
    }

    fn finish(self, status: LpStatus) -> LpSolution {
        let mut x = vec![0.0; self.n_orig];
        for (i, &j) in self.basis.iter().enumerate() {
            if j < self.n_orig {
                x[j] = self.xb[i].max(0.0);
            }
        }
        let objective = x.iter().zip(&self.cost).map(|(a, c)| a * c).sum();
        let duals = self
            .duals(&Phase::Two)
            .into_iter()
            .zip(&self.row_sign)
            .map(|(y, s)| y * s)
            .collect();
        LpSolution {
            status,
            x,
            objective,
            duals,
            iterations: self.iterations,
        }
    }
}
