//! Small linear programs: a dense problem description solved with `minilp`.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("problem is infeasible")]
    Infeasible,
    #[error("objective is unbounded")]
    Unbounded,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("solver failed: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize c.x` subject to linear constraints and per-variable bounds
/// `lower[i] <= x[i] <= upper[i]` (lower bounds must be finite).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<Option<f64>>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub objective: f64,
    pub x: Vec<f64>,
}

impl LinearProgram {
    /// A problem over `n` non-negative, unbounded-above variables.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self { objective, lower: vec![0.0; n], upper: vec![None; n], constraints: Vec::new() }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn bound(&mut self, var: usize, lower: f64, upper: Option<f64>) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn push(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let n = self.n_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Dimension("bound vectors do not match objective".into()));
        }
        if self.lower.iter().any(|l| !l.is_finite()) {
            return Err(LpError::Dimension("lower bounds must be finite".into()));
        }
        let mut problem = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = (0..n)
            .map(|i| {
                let upper = self.upper[i].unwrap_or(f64::INFINITY);
                if upper < self.lower[i] {
                    return Err(LpError::Infeasible);
                }
                Ok(problem.add_var(self.objective[i], (self.lower[i], upper)))
            })
            .collect::<Result<_, _>>()?;
        for c in &self.constraints {
            if c.coeffs.len() != n {
                return Err(LpError::Dimension(format!("constraint has {} coefficients, expected {n}", c.coeffs.len())));
            }
            let terms: Vec<_> = vars.iter().zip(&c.coeffs).filter(|(_, &a)| a != 0.0).map(|(&v, &a)| (v, a)).collect();
            let op = match c.relation {
                Relation::Le => ComparisonOp::Le,
                Relation::Eq => ComparisonOp::Eq,
                Relation::Ge => ComparisonOp::Ge,
            };
            problem.add_constraint(terms, op, c.rhs);
        }
        // The solver panics on some numerically singular bases.
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| problem.solve()))
            .map_err(|_| LpError::Numerical("singular basis".into()))?;
        let sol = outcome.map_err(|e| match e {
            minilp::Error::Infeasible => LpError::Infeasible,
            minilp::Error::Unbounded => LpError::Unbounded,
        })?;
        if !sol.objective().is_finite() {
            return Err(LpError::Unbounded);
        }
        let x = vars.iter().map(|&v| sol[v]).collect();
        Ok(LpSolution { objective: sol.objective(), x })
    }
}
