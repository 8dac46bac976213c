//! Flow-invariant cell labelers: user-supplied predicates over conserved
//! quantities and discrete symmetry invariants (e.g. `sign(p)` on the
//! pendulum's rotation region). They stand in for an ergodic decomposition
//! and drive the partition-refined bounds.
//!
//! A labeler assigns each phase-space point to the first matching predicate;
//! points matching none land in an implicit rest cell, so the cells always
//! partition phase space and the per-cell overlap vectors sum exactly to the
//! unpartitioned one. Invariance is validated empirically: labels must stay
//! constant along trajectories.

use crate::dynamics::{DynamicsError, PhaseState, Stepper, SystemSpec};
use crate::expr::{EvalError, EvalScratch, ParseError, Program};
use crate::Warning;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

#[derive(Debug)]
struct Clause {
    lhs: Program,
    op: CmpOp,
    rhs: Program,
}

/// A conjunction of comparisons between expressions, e.g.
/// `"p1 > 0 && H1 > 1"`.
#[derive(Debug)]
pub struct Predicate {
    text: String,
    clauses: Vec<Clause>,
}

impl Predicate {
    /// Parse a predicate in a system's context (`H1..Hk` available).
    pub fn parse(text: &str, sys: &SystemSpec) -> Result<Predicate, ParseError> {
        let mut clauses = Vec::new();
        for raw in text.split("&&") {
            let raw = raw.trim();
            let (lhs_text, op, rhs_text) = split_comparison(raw).ok_or_else(|| ParseError {
                position: 0,
                message: format!(
                    "predicate clause '{raw}' must be of the form <expr> (< | <= | > | >=) <expr>"
                ),
            })?;
            let lhs = sys.parse_observable(lhs_text)?;
            let rhs = sys.parse_observable(rhs_text)?;
            clauses.push(Clause {
                lhs: lhs.compile(),
                op,
                rhs: rhs.compile(),
            });
        }
        if clauses.is_empty() {
            return Err(ParseError {
                position: 0,
                message: "empty predicate".into(),
            });
        }
        Ok(Predicate {
            text: text.to_string(),
            clauses,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn eval(
        &self,
        q: &[f64],
        p: &[f64],
        scratch: &mut EvalScratch,
    ) -> Result<bool, EvalError> {
        for clause in &self.clauses {
            let a = clause.lhs.eval(q, p, scratch)?;
            let b = clause.rhs.eval(q, p, scratch)?;
            if !clause.op.apply(a, b) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Comparison operators never appear inside the expression grammar, so the
/// first occurrence splits the clause.
fn split_comparison(raw: &str) -> Option<(&str, CmpOp, &str)> {
    for (needle, op) in [
        ("<=", CmpOp::Le),
        (">=", CmpOp::Ge),
        ("<", CmpOp::Lt),
        (">", CmpOp::Gt),
    ] {
        if let Some(at) = raw.find(needle) {
            let lhs = raw[..at].trim();
            let rhs = raw[at + needle.len()..].trim();
            if lhs.is_empty() || rhs.is_empty() {
                return None;
            }
            return Some((lhs, op, rhs));
        }
    }
    None
}

/// An ordered list of predicate cells plus the implicit rest cell.
#[derive(Debug)]
pub struct InvariantLabeler {
    predicates: Vec<Predicate>,
}

impl InvariantLabeler {
    pub fn new(predicates: Vec<Predicate>) -> InvariantLabeler {
        assert!(!predicates.is_empty(), "labeler needs at least one cell");
        InvariantLabeler { predicates }
    }

    pub fn parse(texts: &[&str], sys: &SystemSpec) -> Result<InvariantLabeler, ParseError> {
        let predicates = texts
            .iter()
            .map(|t| Predicate::parse(t, sys))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(predicates))
    }

    /// Declared cells plus the rest cell.
    pub fn n_cells(&self) -> usize {
        self.predicates.len() + 1
    }

    pub fn rest_cell(&self) -> usize {
        self.predicates.len()
    }

    pub fn label(&self, cell: usize) -> String {
        if cell == self.rest_cell() {
            "rest".to_string()
        } else {
            self.predicates[cell].text().to_string()
        }
    }

    /// First matching cell, or the rest cell.
    pub fn cell_index(&self, q: &[f64], p: &[f64]) -> Result<usize, EvalError> {
        let mut scratch = EvalScratch::default();
        for (i, pred) in self.predicates.iter().enumerate() {
            if pred.eval(q, p, &mut scratch)? {
                return Ok(i);
            }
        }
        Ok(self.rest_cell())
    }
}

/// Empirically check that cell labels are constant along short trajectories
/// from the given starts. Violations become warnings naming the start and
/// the cells involved.
pub fn validate_labeler(
    sys: &SystemSpec,
    labeler: &InvariantLabeler,
    starts: &[PhaseState],
    t_check: f64,
    dt: f64,
) -> Result<Vec<Warning>, DynamicsError> {
    let mut warnings = Vec::new();
    let n_steps = ((t_check / dt).ceil() as usize).max(1);
    let check_every = (n_steps / 50).max(1);
    for (si, start) in starts.iter().enumerate() {
        let initial = labeler
            .cell_index(&start.q, &start.p)
            .map_err(|source| DynamicsError::Eval {
                what: "labeler predicate".into(),
                source,
            })?;
        let mut stepper = Stepper::new(sys, start, dt)?;
        let mut wrapped_q = vec![0.0; sys.dim()];
        for step in 1..=n_steps {
            stepper.step()?;
            if step % check_every != 0 {
                continue;
            }
            wrapped_q.copy_from_slice(&stepper.q);
            sys.wrap_angular(&mut wrapped_q);
            let cell = labeler
                .cell_index(&wrapped_q, &stepper.p)
                .map_err(|source| DynamicsError::Eval {
                    what: "labeler predicate".into(),
                    source,
                })?;
            if cell != initial {
                warnings.push(Warning::new(
                    "bounds.labeler",
                    format!(
                        "labeler is not flow-invariant: start #{si} moved from cell '{}' to \
                         '{}' by t = {:.3}",
                        labeler.label(initial),
                        labeler.label(cell),
                        step as f64 * dt
                    ),
                ));
                break;
            }
        }
    }
    Ok(warnings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pendulum_labeler(sys: &SystemSpec) -> InvariantLabeler {
        InvariantLabeler::parse(
            &["p1 > 0 && H1 > 1", "p1 < 0 && H1 > 1", "H1 <= 1"],
            sys,
        )
        .unwrap()
    }

    #[test]
    fn cells_classify_pendulum_regions() {
        let sys = SystemSpec::pendulum();
        let lab = pendulum_labeler(&sys);
        assert_eq!(lab.n_cells(), 4);
        // rotator with p > 0: H = 2.5^2/2 - 1 = 2.125 > 1
        assert_eq!(lab.cell_index(&[0.0], &[2.5]).unwrap(), 0);
        assert_eq!(lab.cell_index(&[0.0], &[-2.5]).unwrap(), 1);
        // librator
        assert_eq!(lab.cell_index(&[0.5], &[0.0]).unwrap(), 2);
        // p = 0 exactly with H > 1 matches no cell -> rest
        assert_eq!(lab.cell_index(&[3.0], &[0.0]).unwrap(), 2); // H = -cos(3) < 1: librator
    }

    #[test]
    fn rest_cell_catches_unmatched() {
        let sys = SystemSpec::pendulum();
        let lab = InvariantLabeler::parse(&["p1 > 0"], &sys).unwrap();
        assert_eq!(lab.cell_index(&[0.0], &[1.0]).unwrap(), 0);
        assert_eq!(lab.cell_index(&[0.0], &[-1.0]).unwrap(), 1);
        assert_eq!(lab.label(1), "rest");
    }

    #[test]
    fn validate_accepts_invariant_cells() {
        let sys = SystemSpec::pendulum();
        let lab = pendulum_labeler(&sys);
        let starts = vec![
            PhaseState::new(vec![0.0], vec![2.5]).unwrap(),
            PhaseState::new(vec![0.0], vec![-2.2]).unwrap(),
            PhaseState::new(vec![0.8], vec![0.0]).unwrap(),
        ];
        let warnings = validate_labeler(&sys, &lab, &starts, 30.0, 1e-3).unwrap();
        assert!(warnings.is_empty(), "{warnings:?}");
    }

    #[test]
    fn validate_flags_non_invariant_cells() {
        let sys = SystemSpec::pendulum();
        // q1 > 0 is not flow-invariant
        let lab = InvariantLabeler::parse(&["q1 > 0"], &sys).unwrap();
        let starts = vec![PhaseState::new(vec![0.5], vec![0.4]).unwrap()];
        let warnings = validate_labeler(&sys, &lab, &starts, 30.0, 1e-3).unwrap();
        assert!(!warnings.is_empty());
        assert!(warnings[0].message.contains("not flow-invariant"));
    }

    #[test]
    fn bad_predicate_rejected() {
        let sys = SystemSpec::pendulum();
        assert!(Predicate::parse("p1 + 1", &sys).is_err());
        assert!(Predicate::parse("p1 > ", &sys).is_err());
        assert!(Predicate::parse("H2 > 0", &sys).is_err()); // pendulum has k = 1
    }
}
