//! Dense bounded-variable primal simplex with incremental row addition.
//!
//! Every row gets an artificial column when it is added, so new constraints
//! can be appended to an optimal basis and re-optimized from there: phase one
//! drives the artificials to zero, after which they are pinned at zero and
//! phase two resumes with the true costs.

use nalgebra::{DMatrix, DVector};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_STREAK: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// `a·x = b`
    Equal,
    /// `a·x ≥ b`, via a nonnegative surplus column.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimplexError {
    IterationBudget(usize),
    Infeasible(f64),
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct BoundedSimplex {
    cost: Vec<f64>,
    upper: Vec<f64>,
    artificial: Vec<bool>,
    /// Original sparse rows (column, coefficient) and right-hand sides.
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    /// Current tableau `B⁻¹A`, one dense vector per row.
    tab: Vec<Vec<f64>>,
    basic_value: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at_upper: Vec<bool>,
    pub iterations: usize,
    pub max_iterations: usize,
}

impl BoundedSimplex {
    /// Structural columns with costs and upper bounds (lower bounds are 0).
    pub fn new(cost: Vec<f64>, upper: Vec<f64>) -> Self {
        let n = cost.len();
        assert_eq!(upper.len(), n);
        BoundedSimplex {
            cost,
            upper,
            artificial: vec![false; n],
            rows: Vec::new(),
            rhs: Vec::new(),
            tab: Vec::new(),
            basic_value: Vec::new(),
            basis: Vec::new(),
            is_basic: vec![false; n],
            at_upper: vec![false; n],
            iterations: 0,
            max_iterations: 200_000,
        }
    }

    pub fn columns(&self) -> usize {
        self.cost.len()
    }

    fn push_column(&mut self, cost: f64, upper: f64, artificial: bool) -> usize {
        self.cost.push(cost);
        self.upper.push(upper);
        self.artificial.push(artificial);
        self.is_basic.push(false);
        self.at_upper.push(false);
        for row in &mut self.tab {
            row.push(0.0);
        }
        self.cost.len() - 1
    }

    /// Current value of column `j`.
    pub fn value(&self, j: usize) -> f64 {
        if self.is_basic[j] {
            let r = self.basis.iter().position(|&b| b == j).expect("basic column in basis");
            self.basic_value[r]
        } else if self.at_upper[j] {
            self.upper[j]
        } else {
            0.0
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.columns())
            .map(|j| if !self.is_basic[j] && self.at_upper[j] { self.upper[j] } else { 0.0 })
            .collect();
        for (r, &b) in self.basis.iter().enumerate() {
            x[b] = self.basic_value[r];
        }
        x
    }

    /// Appends a constraint over structural columns; the current basis stays
    /// valid and the new row's artificial column becomes basic.
    pub fn add_row(&mut self, coeffs: &[(usize, f64)], rhs: f64, kind: RowKind) {
        let mut sparse: Vec<(usize, f64)> = coeffs.to_vec();
        if kind == RowKind::AtLeast {
            let surplus = self.push_column(0.0, f64::INFINITY, false);
            sparse.push((surplus, -1.0));
        }
        let x = self.values();
        let activity: f64 = sparse.iter().map(|&(j, a)| a * x[j]).sum();
        let residual = rhs - activity;
        let sign = if residual >= 0.0 { 1.0 } else { -1.0 };
        let art = self.push_column(0.0, f64::INFINITY, true);
        sparse.push((art, sign));

        let cols = self.columns();
        let mut dense = vec![0.0; cols];
        for &(j, a) in &sparse {
            dense[j] += a;
        }
        // Express the row in terms of the current nonbasic columns.
        for (r, &b) in self.basis.iter().enumerate() {
            let factor = dense[b];
            if factor != 0.0 {
                for (d, t) in dense.iter_mut().zip(&self.tab[r]) {
                    *d -= factor * t;
                }
                dense[b] = 0.0;
            }
        }
        // Scale so the artificial column has coefficient one.
        let scale = dense[art];
        for d in &mut dense {
            *d /= scale;
        }
        self.rows.push(sparse);
        self.rhs.push(rhs);
        self.tab.push(dense);
        self.basic_value.push(residual.abs());
        self.basis.push(art);
        self.is_basic[art] = true;
    }

    /// Optimizes the current problem, first restoring feasibility if needed.
    pub fn solve(&mut self) -> Result<f64, SimplexError> {
        let infeasibility: f64 = (0..self.columns())
            .filter(|&j| self.artificial[j])
            .map(|j| self.value(j))
            .sum();
        if infeasibility > FEAS_TOL {
            let phase_one: Vec<f64> =
                self.artificial.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
            self.optimize(&phase_one)?;
            let left: f64 = (0..self.columns())
                .filter(|&j| self.artificial[j])
                .map(|j| self.value(j))
                .sum();
            if left > FEAS_TOL {
                return Err(SimplexError::Infeasible(left));
            }
        }
        for j in 0..self.columns() {
            if self.artificial[j] {
                self.upper[j] = 0.0;
                self.at_upper[j] = false;
            }
        }
        let cost = self.cost.clone();
        self.optimize(&cost)?;
        self.refine();
        let x = self.values();
        Ok(x.iter().zip(&self.cost).map(|(a, c)| a * c).sum())
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for (dj, t) in d.iter_mut().zip(&self.tab[r]) {
                    *dj -= cb * t;
                }
            }
        }
        for &b in &self.basis {
            d[b] = 0.0;
        }
        d
    }

    fn optimize(&mut self, cost: &[f64]) -> Result<(), SimplexError> {
        let mut degenerate_run = 0;
        loop {
            if self.iterations >= self.max_iterations {
                return Err(SimplexError::IterationBudget(self.iterations));
            }
            let bland = degenerate_run >= DEGENERATE_STREAK;
            let d = self.reduced_costs(cost);
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.columns() {
                if self.is_basic[j] || self.upper[j] <= 0.0 {
                    continue;
                }
                let gain = if self.at_upper[j] { d[j] } else { -d[j] };
                if gain > COST_TOL {
                    if bland {
                        entering = Some((j, gain));
                        break;
                    }
                    if entering.is_none_or(|(_, g)| gain > g) {
                        entering = Some((j, gain));
                    }
                }
            }
            let Some((j, _)) = entering else { return Ok(()) };
            self.iterations += 1;
            // Moving `j` by +t (from lower) or -t (from upper) changes basic row r by -dir·a_r·t.
            let dir = if self.at_upper[j] { -1.0 } else { 1.0 };
            let mut step = self.upper[j];
            let mut leave: Option<(usize, bool)> = None;
            let mut best_pivot = 0.0;
            for r in 0..self.basis.len() {
                let a = self.tab[r][j] * dir;
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                let b = self.basis[r];
                let (limit, to_upper) = if a > 0.0 {
                    (self.basic_value[r].max(0.0) / a, false)
                } else if self.upper[b].is_finite() {
                    ((self.upper[b] - self.basic_value[r]).max(0.0) / -a, true)
                } else {
                    continue;
                };
                let better = match leave {
                    None => limit < step,
                    Some((lr, _)) => {
                        if limit < step - 1e-12 {
                            true
                        } else if limit <= step + 1e-12 {
                            if bland {
                                self.basis[r] < self.basis[lr]
                            } else {
                                a.abs() > best_pivot
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    step = limit;
                    leave = Some((r, to_upper));
                    best_pivot = a.abs();
                }
            }
            if step.is_infinite() {
                return Err(SimplexError::Unbounded);
            }
            degenerate_run = if step <= 1e-12 { degenerate_run + 1 } else { 0 };
            for r in 0..self.basis.len() {
                self.basic_value[r] -= dir * self.tab[r][j] * step;
            }
            match leave {
                None => {
                    // Bound flip: the entering column crosses to its other bound.
                    self.at_upper[j] = !self.at_upper[j];
                }
                Some((r, to_upper)) => {
                    let entering_value = if self.at_upper[j] { self.upper[j] - step } else { step };
                    let out = self.basis[r];
                    self.is_basic[out] = false;
                    self.at_upper[out] = to_upper;
                    self.pivot(r, j);
                    self.basis[r] = j;
                    self.is_basic[j] = true;
                    self.at_upper[j] = false;
                    self.basic_value[r] = entering_value;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let p = self.tab[r][j];
        for t in self.tab[r].iter_mut() {
            *t /= p;
        }
        let pivot_row = std::mem::take(&mut self.tab[r]);
        for (i, row) in self.tab.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let factor = row[j];
            if factor != 0.0 {
                for (t, pr) in row.iter_mut().zip(&pivot_row) {
                    *t -= factor * pr;
                    if t.abs() < 1e-14 {
                        *t = 0.0;
                    }
                }
                row[j] = 0.0;
            }
        }
        self.tab[r] = pivot_row;
    }

    /// Recomputes basic values from the original rows to shed accumulated
    /// round-off, keeping the current basis.
    fn refine(&mut self) {
        let m = self.basis.len();
        if m == 0 {
            return;
        }
        let mut col_of = vec![usize::MAX; self.columns()];
        for (r, &b) in self.basis.iter().enumerate() {
            col_of[b] = r;
        }
        let mut bmat = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::from_vec(self.rhs.clone());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                if col_of[j] != usize::MAX {
                    bmat[(i, col_of[j])] += a;
                } else if self.at_upper[j] {
                    rhs[i] -= a * self.upper[j];
                }
            }
        }
        if let Some(sol) = bmat.lu().solve(&rhs) {
            let drift = sol.iter().zip(&self.basic_value).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if drift < 1e-6 {
                for (r, v) in sol.iter().enumerate() {
                    let ub = self.upper[self.basis[r]];
                    self.basic_value[r] = v.clamp(0.0, ub);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lp_with_bounds() {
        // min -x - y  s.t. x + y <= 1.5 (as -x - y >= -1.5), x,y in [0,1]
        let mut lp = BoundedSimplex::new(vec![-1.0, -1.0], vec![1.0, 1.0]);
        lp.add_row(&[(0, -1.0), (1, -1.0)], -1.5, RowKind::AtLeast);
        let obj = lp.solve().unwrap();
        assert!((obj + 1.5).abs() < 1e-12);
    }

    #[test]
    fn warm_start_after_new_row() {
        // min x0 + 2 x1 + 3 x2 s.t. x0 + x1 + x2 = 2, x <= 1, later x2 >= 0.5.
        let mut lp = BoundedSimplex::new(vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 1.0]);
        lp.add_row(&[(0, 1.0), (1, 1.0), (2, 1.0)], 2.0, RowKind::Equal);
        assert!((lp.solve().unwrap() - 3.0).abs() < 1e-12);
        lp.add_row(&[(2, 1.0)], 0.5, RowKind::AtLeast);
        // Best now: x0 = 1, x1 = 0.5, x2 = 0.5 -> 1 + 1 + 1.5
        assert!((lp.solve().unwrap() - 3.5).abs() < 1e-12);
        let x = lp.values();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12 && (x[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_detected() {
        let mut lp = BoundedSimplex::new(vec![1.0], vec![1.0]);
        lp.add_row(&[(0, 1.0)], 2.0, RowKind::Equal);
        assert!(matches!(lp.solve(), Err(SimplexError::Infeasible(_))));
    }
}
