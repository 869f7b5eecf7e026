//! Benders master problem: choose bus arcs minimizing fixed cost plus the
//! per-group routing estimates `theta`, under frequency balance and the
//! one-frequency-per-hub-pair rule.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpOutcome, Relation};

const INTEGRALITY_TOL: f64 = 1e-6;

/// One optimality cut `theta[group] >= constant - sum(coef * z[slot])`.
#[derive(Clone, Debug, PartialEq)]
pub struct MasterCut {
    pub group: usize,
    pub constant: f64,
    pub coefficients: Vec<(usize, f64)>,
}

impl MasterCut {
    pub fn value(&self, design: &[bool]) -> f64 {
        self.constant
            - self
                .coefficients
                .iter()
                .filter(|(s, _)| design[*s])
                .map(|(_, c)| c)
                .sum::<f64>()
    }
}

#[derive(Clone, Debug, Default)]
pub struct MasterProblem {
    /// Fixed cost per bus slot.
    pub fixed_costs: Vec<f64>,
    /// Per hub: (slot, +frequency for out-arcs / -frequency for in-arcs).
    pub balance: Vec<Vec<(usize, i64)>>,
    /// Slots that share a hub pair; at most one may open.
    pub exclusive_groups: Vec<Vec<usize>>,
    /// Lower bound on each theta group.
    pub theta_floors: Vec<f64>,
    pub cuts: Vec<MasterCut>,
    pub forced_open: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MasterSolution {
    pub design: Vec<bool>,
    pub objective: f64,
    pub nodes: usize,
}

impl MasterProblem {
    pub fn num_slots(&self) -> usize {
        self.fixed_costs.len()
    }

    pub fn theta(&self, group: usize, design: &[bool]) -> f64 {
        self.cuts
            .iter()
            .filter(|c| c.group == group)
            .map(|c| c.value(design))
            .fold(self.theta_floors[group], f64::max)
    }

    /// Exact master objective of an integral design.
    pub fn evaluate(&self, design: &[bool]) -> f64 {
        let fixed: f64 = self
            .fixed_costs
            .iter()
            .zip(design)
            .filter(|(_, &open)| open)
            .map(|(c, _)| c)
            .sum();
        fixed + (0..self.theta_floors.len()).map(|g| self.theta(g, design)).sum::<f64>()
    }

    pub fn is_feasible(&self, design: &[bool]) -> bool {
        self.balance
            .iter()
            .all(|row| row.iter().filter(|(s, _)| design[*s]).map(|(_, f)| f).sum::<i64>() == 0)
            && self
                .exclusive_groups
                .iter()
                .all(|g| g.iter().filter(|&&s| design[s]).count() <= 1)
            && self.forced_open.iter().zip(design).all(|(&forced, &open)| !forced || open)
    }

    /// LP relaxation with slot bounds `lower..=upper`. Variables are the slots
    /// followed by one `theta - floor` excess per group.
    fn relaxation(&self, lower: &[bool], upper: &[bool]) -> LinearProgram {
        let n = self.num_slots();
        let groups = self.theta_floors.len();
        let mut objective = self.fixed_costs.clone();
        objective.extend(std::iter::repeat(1.0).take(groups));
        let mut lp = LinearProgram::new(objective);
        for row in &self.balance {
            let coefs: Vec<_> = row.iter().filter(|(s, _)| upper[*s]).map(|&(s, f)| (s, f as f64)).collect();
            if !coefs.is_empty() {
                lp.add_row(coefs, Relation::Eq, 0.0);
            }
        }
        for group in &self.exclusive_groups {
            lp.add_row(group.iter().map(|&s| (s, 1.0)).collect(), Relation::Le, 1.0);
        }
        for s in 0..n {
            if !upper[s] {
                lp.add_row(vec![(s, 1.0)], Relation::Le, 0.0);
            } else if lower[s] {
                lp.add_row(vec![(s, 1.0)], Relation::Eq, 1.0);
            } else {
                lp.add_row(vec![(s, 1.0)], Relation::Le, 1.0);
            }
        }
        for cut in &self.cuts {
            let rhs = cut.constant - self.theta_floors[cut.group];
            if rhs <= 0.0 {
                continue;
            }
            let mut coefs: Vec<_> = cut
                .coefficients
                .iter()
                .filter(|(s, c)| upper[*s] && *c != 0.0)
                .copied()
                .collect();
            coefs.push((n + cut.group, 1.0));
            lp.add_row(coefs, Relation::Ge, rhs);
        }
        lp
    }
}

/// Exact solver for the master problem.
pub trait MasterSolver {
    fn solve(&self, problem: &MasterProblem) -> Result<MasterSolution>;
}

/// Depth-first branch-and-bound over the binary slots with the LP relaxation
/// as bound. The closed branch is explored first.
#[derive(Clone, Debug)]
pub struct BranchAndBound {
    pub node_limit: usize,
    pub deadline: Option<Instant>,
}

impl Default for BranchAndBound {
    fn default() -> Self {
        BranchAndBound {
            node_limit: 200_000,
            deadline: None,
        }
    }
}

struct Node {
    lower: Vec<bool>,
    upper: Vec<bool>,
}

impl MasterSolver for BranchAndBound {
    fn solve(&self, problem: &MasterProblem) -> Result<MasterSolution> {
        let n = problem.num_slots();
        let floor_sum: f64 = problem.theta_floors.iter().sum();
        let mut incumbent: Option<(Vec<bool>, f64)> = None;
        if problem.is_feasible(&problem.forced_open) {
            let z = problem.forced_open.clone();
            let value = problem.evaluate(&z);
            incumbent = Some((z, value));
        }

        let mut stack = vec![Node {
            lower: problem.forced_open.clone(),
            upper: vec![true; n],
        }];
        let mut nodes = 0;
        while let Some(node) = stack.pop() {
            nodes += 1;
            if nodes > self.node_limit {
                return Err(Error::LimitExceeded(format!(
                    "master branch-and-bound exceeded {} nodes",
                    self.node_limit
                )));
            }
            if self.deadline.is_some_and(|d| Instant::now() > d) {
                return Err(Error::LimitExceeded("master time limit reached".into()));
            }
            let lp = problem.relaxation(&node.lower, &node.upper);
            let (x, bound) = match lp.solve() {
                LpOutcome::Optimal { x, objective } => (x, objective + floor_sum),
                LpOutcome::Infeasible => continue,
                LpOutcome::Unbounded => {
                    return Err(Error::Consistency("master relaxation unbounded".into()));
                }
            };
            if let Some((_, best)) = &incumbent {
                if bound >= best - 1e-9 * best.abs().max(1.0) {
                    continue;
                }
            }

            let fractional = (0..n).find(|&s| {
                node.lower[s] != node.upper[s] && (x[s] - x[s].round()).abs() > INTEGRALITY_TOL
            });
            match fractional {
                None => {
                    let z: Vec<bool> = (0..n).map(|s| x[s] > 0.5).collect();
                    if problem.is_feasible(&z) {
                        let value = problem.evaluate(&z);
                        if incumbent.as_ref().map_or(true, |(_, best)| value < *best) {
                            incumbent = Some((z, value));
                        }
                    } else if let Some(s) = (0..n).find(|&s| node.lower[s] != node.upper[s]) {
                        // Rounding broke feasibility; fall back to plain branching.
                        push_children(&mut stack, &node, s);
                    }
                }
                Some(s) => push_children(&mut stack, &node, s),
            }
        }
        match incumbent {
            Some((design, objective)) => Ok(MasterSolution {
                design,
                objective,
                nodes,
            }),
            None => Err(Error::Consistency("master problem has no feasible design".into())),
        }
    }
}

fn push_children(stack: &mut Vec<Node>, node: &Node, slot: usize) {
    let mut open = Node {
        lower: node.lower.clone(),
        upper: node.upper.clone(),
    };
    open.lower[slot] = true;
    let mut closed = Node {
        lower: node.lower.clone(),
        upper: node.upper.clone(),
    };
    closed.upper[slot] = false;
    stack.push(open);
    stack.push(closed);
}
