//! Dense two-phase primal simplex for small linear programs.
//!
//! Minimizes `c·x` subject to linear rows and `x >= 0`. Bland's rule is used
//! for both pivot choices, so the method terminates on degenerate problems.

const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Row {
    pub coefs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        LinearProgram {
            num_vars: objective.len(),
            objective,
            rows: Vec::new(),
        }
    }

    pub fn add_row(&mut self, coefs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        debug_assert!(coefs.iter().all(|&(j, _)| j < self.num_vars));
        self.rows.push(Row { coefs, relation, rhs });
    }

    pub fn solve(&self) -> LpOutcome {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    // m rows of width `cols + 1`; the last entry is the right-hand side.
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
    artificial_start: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Tableau {
        let m = lp.rows.len();
        let n = lp.num_vars;
        let slack_count = lp.rows.iter().filter(|r| r.relation != Relation::Eq).count();
        let artificial_start = n + slack_count;
        let artificial_count = lp
            .rows
            .iter()
            .filter(|r| {
                let flipped = r.rhs < 0.0;
                match r.relation {
                    Relation::Eq => true,
                    Relation::Le => flipped,
                    Relation::Ge => !flipped,
                }
            })
            .count();
        let cols = artificial_start + artificial_count;

        let mut a = vec![vec![0.0; cols + 1]; m];
        let mut basis = vec![0; m];
        let mut next_slack = n;
        let mut next_artificial = artificial_start;
        for (i, row) in lp.rows.iter().enumerate() {
            let sign = if row.rhs < 0.0 { -1.0 } else { 1.0 };
            for &(j, v) in &row.coefs {
                a[i][j] += sign * v;
            }
            a[i][cols] = sign * row.rhs;
            let relation = match (row.relation, sign < 0.0) {
                (Relation::Le, true) => Relation::Ge,
                (Relation::Ge, true) => Relation::Le,
                (r, _) => r,
            };
            match relation {
                Relation::Le => {
                    a[i][next_slack] = 1.0;
                    basis[i] = next_slack;
                    next_slack += 1;
                }
                Relation::Ge => {
                    a[i][next_slack] = -1.0;
                    next_slack += 1;
                    a[i][next_artificial] = 1.0;
                    basis[i] = next_artificial;
                    next_artificial += 1;
                }
                Relation::Eq => {
                    a[i][next_artificial] = 1.0;
                    basis[i] = next_artificial;
                    next_artificial += 1;
                }
            }
        }
        Tableau {
            a,
            basis,
            cols,
            artificial_start,
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let width = self.cols + 1;
        let p = self.a[row][col];
        for k in 0..width {
            self.a[row][k] /= p;
        }
        let pivot_row = self.a[row].clone();
        for (i, r) in self.a.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let factor = r[col];
            if factor.abs() > 0.0 {
                for k in 0..width {
                    r[k] -= factor * pivot_row[k];
                }
                r[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// Minimizes `cost` over columns `< allowed_cols`. Returns false if unbounded.
    fn optimize(&mut self, cost: &[f64], allowed_cols: usize) -> bool {
        let m = self.a.len();
        loop {
            // Reduced costs: c_j - c_B B^-1 A_j, evaluated from the tableau.
            let mut entering = None;
            for j in 0..allowed_cols {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut reduced = cost[j];
                for i in 0..m {
                    reduced -= cost[self.basis[i]] * self.a[i][j];
                }
                if reduced < -EPS {
                    entering = Some(j);
                    break;
                }
            }
            let Some(col) = entering else { return true };

            let mut leaving: Option<(usize, f64)> = None;
            for i in 0..m {
                let coef = self.a[i][col];
                if coef > EPS {
                    let ratio = self.a[i][self.cols] / coef;
                    leaving = match leaving {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            if ratio < best - EPS
                                || (ratio <= best + EPS && self.basis[i] < self.basis[r])
                            {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leaving else { return false };
            self.pivot(row, col);
        }
    }

    fn run(mut self, lp: &LinearProgram) -> LpOutcome {
        let m = self.a.len();
        let n = lp.num_vars;
        if self.artificial_start < self.cols {
            let mut phase1 = vec![0.0; self.cols];
            for c in phase1.iter_mut().skip(self.artificial_start) {
                *c = 1.0;
            }
            self.optimize(&phase1, self.cols);
            let infeasibility: f64 = (0..m)
                .filter(|&i| self.basis[i] >= self.artificial_start)
                .map(|i| self.a[i][self.cols])
                .sum();
            if infeasibility > 1e-7 {
                return LpOutcome::Infeasible;
            }
            // Drive zero-level artificials out of the basis where possible.
            for i in 0..m {
                if self.basis[i] >= self.artificial_start {
                    if let Some(j) = (0..self.artificial_start).find(|&j| self.a[i][j].abs() > EPS) {
                        self.pivot(i, j);
                    }
                }
            }
        }
        let mut cost = vec![0.0; self.cols];
        cost[..n].copy_from_slice(&lp.objective);
        // Artificials are barred from re-entering in phase 2.
        if !self.optimize(&cost, self.artificial_start) {
            return LpOutcome::Unbounded;
        }
        let mut x = vec![0.0; n];
        for i in 0..m {
            if self.basis[i] < n {
                x[self.basis[i]] = self.a[i][self.cols];
            }
        }
        let objective = x.iter().zip(&lp.objective).map(|(v, c)| v * c).sum();
        LpOutcome::Optimal { x, objective }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(outcome: LpOutcome) -> (Vec<f64>, f64) {
        match outcome {
            LpOutcome::Optimal { x, objective } => (x, objective),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36.
        let mut lp = LinearProgram::new(vec![-3.0, -5.0]);
        lp.add_row(vec![(0, 1.0)], Relation::Le, 4.0);
        lp.add_row(vec![(1, 2.0)], Relation::Le, 12.0);
        lp.add_row(vec![(0, 3.0), (1, 2.0)], Relation::Le, 18.0);
        let (x, obj) = optimal(lp.solve());
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
        assert!((obj + 36.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // min x + 2y s.t. x + y = 3, y >= 1 -> (2, 1), 4.
        let mut lp = LinearProgram::new(vec![1.0, 2.0]);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 3.0);
        lp.add_row(vec![(1, 1.0)], Relation::Ge, 1.0);
        let (x, obj) = optimal(lp.solve());
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9);
        assert!((obj - 4.0).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_rows_are_normalized() {
        // min x s.t. -x <= -2 -> x = 2.
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_row(vec![(0, -1.0)], Relation::Le, -2.0);
        let (x, _) = optimal(lp.solve());
        assert!((x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_row(vec![(0, 1.0)], Relation::Le, 1.0);
        lp.add_row(vec![(0, 1.0)], Relation::Ge, 2.0);
        assert_eq!(lp.solve(), LpOutcome::Infeasible);

        let mut lp = LinearProgram::new(vec![-1.0, 0.0]);
        lp.add_row(vec![(0, 1.0), (1, -1.0)], Relation::Le, 1.0);
        assert_eq!(lp.solve(), LpOutcome::Unbounded);
    }

    #[test]
    fn degenerate_cycle_prone_problem_terminates() {
        // Beale's example, which cycles under the largest-coefficient rule.
        let mut lp = LinearProgram::new(vec![-0.75, 150.0, -0.02, 6.0]);
        lp.add_row(vec![(0, 0.25), (1, -60.0), (2, -0.04), (3, 9.0)], Relation::Le, 0.0);
        lp.add_row(vec![(0, 0.5), (1, -90.0), (2, -0.02), (3, 3.0)], Relation::Le, 0.0);
        lp.add_row(vec![(2, 1.0)], Relation::Le, 1.0);
        let (_, obj) = optimal(lp.solve());
        assert!((obj + 0.05).abs() < 1e-9, "{obj}");
    }
}
