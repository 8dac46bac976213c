//! Arithmetic expression language for Hamiltonians, conserved quantities and
//! observables.
//!
//! Grammar: real literals, variables `q1..qr` / `p1..pr`, binary `+ - * / ^`,
//! unary minus, and the functions `sin`, `cos`, `exp`, `sqrt`, `ln`
//! (`ln` is accepted so that the symbolic gradient of a general power `u^v`
//! stays inside the language). `^` binds tighter than unary minus and is
//! right-associative; everything else is left-associative with the usual
//! precedence. Names `H1..Hk` may be used where a system context supplies
//! the conserved-quantity definitions; they are macro-expanded at parse time.
//!
//! Expressions are immutable after parsing; evaluation is pure.

mod parse;
mod program;

pub use parse::ParseError;
pub use program::{EvalScratch, Program};

use thiserror::Error;

/// Runtime evaluation failure.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root of a negative value")]
    SqrtOfNegative,
    #[error("logarithm of a non-positive value")]
    LogNonPositive,
    #[error("power produced a non-real result")]
    PowDomain,
    #[error("state has dimension {got}, expression declared r = {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Ln,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Ln => "ln",
        }
    }
}

/// One variable of the phase space, zero-indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Q(usize),
    P(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Literal(f64),
    Q(usize),
    P(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed expression over a phase space of dimension `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    r: usize,
    root: Node,
}

impl Expression {
    /// Parse `text` against a phase space with `r` degrees of freedom.
    pub fn parse(text: &str, r: usize) -> Result<Expression, ParseError> {
        Self::parse_with_macros(text, r, &[])
    }

    /// Parse with the conserved-quantity names `H1..Hk` bound to `macros`,
    /// which are substituted into the tree at parse time.
    pub fn parse_with_macros(
        text: &str,
        r: usize,
        macros: &[Expression],
    ) -> Result<Expression, ParseError> {
        for (i, m) in macros.iter().enumerate() {
            assert_eq!(
                m.r, r,
                "macro H{} declared for r = {}, expected r = {}",
                i + 1,
                m.r,
                r
            );
        }
        let root = parse::parse(text, r, macros)?;
        Ok(Expression {
            r,
            root: fold(root),
        })
    }

    /// Declared number of degrees of freedom.
    pub fn dim(&self) -> usize {
        self.r
    }

    /// Evaluate at phase-space point `(q, p)`.
    ///
    /// Tree-walking evaluation; compile to a [`Program`] for hot loops.
    pub fn eval(&self, q: &[f64], p: &[f64]) -> Result<f64, EvalError> {
        if q.len() != self.r || p.len() != self.r {
            return Err(EvalError::DimensionMismatch {
                expected: self.r,
                got: q.len().min(p.len()),
            });
        }
        eval_node(&self.root, q, p)
    }

    /// Compile for fast repeated evaluation.
    pub fn compile(&self) -> Program {
        Program::compile(self)
    }

    /// Symbolic partial derivative with respect to one variable,
    /// constant-folded.
    pub fn derivative(&self, var: Var) -> Expression {
        let idx = match var {
            Var::Q(i) | Var::P(i) => i,
        };
        assert!(idx < self.r, "variable index {idx} out of range");
        Expression {
            r: self.r,
            root: fold(differentiate(&self.root, var)),
        }
    }

    /// Full symbolic gradient: `d/dq_i` and `d/dp_i` for every `i`.
    pub fn gradient(&self) -> Gradient {
        Gradient {
            dq: (0..self.r).map(|i| self.derivative(Var::Q(i))).collect(),
            dp: (0..self.r).map(|i| self.derivative(Var::P(i))).collect(),
        }
    }

    /// Does the expression mention variable `var` anywhere?
    pub fn references(&self, var: Var) -> bool {
        references(&self.root, var)
    }

    /// Does it mention any momentum variable?
    pub fn references_any_p(&self) -> bool {
        (0..self.r).any(|i| self.references(Var::P(i)))
    }

    /// Does it mention any coordinate variable?
    pub fn references_any_q(&self) -> bool {
        (0..self.r).any(|i| self.references(Var::Q(i)))
    }

    pub(crate) fn root(&self) -> &Node {
        &self.root
    }
}

/// Partial derivatives of an expression, one per phase-space variable.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub dq: Vec<Expression>,
    pub dp: Vec<Expression>,
}

fn references(n: &Node, var: Var) -> bool {
    match n {
        Node::Literal(_) => false,
        Node::Q(i) => var == Var::Q(*i),
        Node::P(i) => var == Var::P(*i),
        Node::Neg(x) | Node::Call(_, x) => references(x, var),
        Node::Bin(_, a, b) => references(a, var) || references(b, var),
    }
}

fn eval_node(n: &Node, q: &[f64], p: &[f64]) -> Result<f64, EvalError> {
    Ok(match n {
        Node::Literal(v) => *v,
        Node::Q(i) => q[*i],
        Node::P(i) => p[*i],
        Node::Neg(x) => -eval_node(x, q, p)?,
        Node::Call(f, x) => {
            let v = eval_node(x, q, p)?;
            match f {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Exp => v.exp(),
                Func::Sqrt => {
                    if v < 0.0 {
                        return Err(EvalError::SqrtOfNegative);
                    }
                    v.sqrt()
                }
                Func::Ln => {
                    if v <= 0.0 {
                        return Err(EvalError::LogNonPositive);
                    }
                    v.ln()
                }
            }
        }
        Node::Bin(op, a, b) => {
            let x = eval_node(a, q, p)?;
            let y = eval_node(b, q, p)?;
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => {
                    if y == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    x / y
                }
                BinOp::Pow => {
                    let v = x.powf(y);
                    if v.is_nan() && !x.is_nan() && !y.is_nan() {
                        return Err(EvalError::PowDomain);
                    }
                    v
                }
            }
        }
    })
}

/// Symbolic differentiation by the standard rules. No simplification here;
/// callers fold afterwards.
fn differentiate(n: &Node, var: Var) -> Node {
    use BinOp::*;
    let d = |x: &Node| Box::new(differentiate(x, var));
    let b = |x: &Node| Box::new(x.clone());
    match n {
        Node::Literal(_) => Node::Literal(0.0),
        Node::Q(i) => Node::Literal(if var == Var::Q(*i) { 1.0 } else { 0.0 }),
        Node::P(i) => Node::Literal(if var == Var::P(*i) { 1.0 } else { 0.0 }),
        Node::Neg(x) => Node::Neg(d(x)),
        Node::Bin(Add, a, c) => Node::Bin(Add, d(a), d(c)),
        Node::Bin(Sub, a, c) => Node::Bin(Sub, d(a), d(c)),
        Node::Bin(Mul, a, c) => Node::Bin(
            Add,
            Box::new(Node::Bin(Mul, d(a), b(c))),
            Box::new(Node::Bin(Mul, b(a), d(c))),
        ),
        Node::Bin(Div, a, c) => {
            // (a'c - ac') / c^2
            let num = Node::Bin(
                Sub,
                Box::new(Node::Bin(Mul, d(a), b(c))),
                Box::new(Node::Bin(Mul, b(a), d(c))),
            );
            let den = Node::Bin(Pow, b(c), Box::new(Node::Literal(2.0)));
            Node::Bin(Div, Box::new(num), Box::new(den))
        }
        Node::Bin(Pow, a, c) => match c.as_ref() {
            // constant exponent: c * a^(c-1) * a'
            Node::Literal(e) => Node::Bin(
                Mul,
                Box::new(Node::Bin(
                    Mul,
                    Box::new(Node::Literal(*e)),
                    Box::new(Node::Bin(Pow, b(a), Box::new(Node::Literal(e - 1.0)))),
                )),
                d(a),
            ),
            // general: a^c * (c' ln a + c a'/a)
            _ => {
                let term1 = Node::Bin(Mul, d(c), Box::new(Node::Call(Func::Ln, b(a))));
                let term2 = Node::Bin(Mul, b(c), Box::new(Node::Bin(Div, d(a), b(a))));
                Node::Bin(
                    Mul,
                    Box::new(Node::Bin(Pow, b(a), b(c))),
                    Box::new(Node::Bin(Add, Box::new(term1), Box::new(term2))),
                )
            }
        },
        Node::Call(f, x) => {
            let inner = d(x);
            let outer = match f {
                Func::Sin => Node::Call(Func::Cos, b(x)),
                Func::Cos => Node::Neg(Box::new(Node::Call(Func::Sin, b(x)))),
                Func::Exp => Node::Call(Func::Exp, b(x)),
                Func::Sqrt => {
                    // 1 / (2 sqrt x)
                    Node::Bin(
                        Div,
                        Box::new(Node::Literal(1.0)),
                        Box::new(Node::Bin(
                            Mul,
                            Box::new(Node::Literal(2.0)),
                            Box::new(Node::Call(Func::Sqrt, b(x))),
                        )),
                    )
                }
                Func::Ln => Node::Bin(Div, Box::new(Node::Literal(1.0)), b(x)),
            };
            Node::Bin(Mul, Box::new(outer), inner)
        }
    }
}

/// Constant folding. Also removes the `0`/`1` identities that
/// differentiation leaves behind; no further simplification.
fn fold(n: Node) -> Node {
    use BinOp::*;
    match n {
        Node::Neg(x) => match fold(*x) {
            Node::Literal(v) => Node::Literal(-v),
            Node::Neg(inner) => *inner,
            other => Node::Neg(Box::new(other)),
        },
        Node::Call(f, x) => {
            let x = fold(*x);
            if let Node::Literal(v) = x {
                let val = match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Sqrt => v.sqrt(),
                    Func::Ln => v.ln(),
                };
                if val.is_finite() {
                    return Node::Literal(val);
                }
            }
            Node::Call(f, Box::new(x))
        }
        Node::Bin(op, a, b) => {
            let a = fold(*a);
            let b = fold(*b);
            if let (Node::Literal(x), Node::Literal(y)) = (&a, &b) {
                let val = match op {
                    Add => x + y,
                    Sub => x - y,
                    Mul => x * y,
                    Div => x / y,
                    Pow => x.powf(*y),
                };
                if val.is_finite() {
                    return Node::Literal(val);
                }
            }
            match (op, &a, &b) {
                (Add, Node::Literal(z), _) if *z == 0.0 => b,
                (Add, _, Node::Literal(z)) if *z == 0.0 => a,
                (Sub, _, Node::Literal(z)) if *z == 0.0 => a,
                (Sub, Node::Literal(z), _) if *z == 0.0 => fold(Node::Neg(Box::new(b))),
                (Mul, Node::Literal(z), _) | (Mul, _, Node::Literal(z)) if *z == 0.0 => {
                    Node::Literal(0.0)
                }
                (Mul, Node::Literal(o), _) if *o == 1.0 => b,
                (Mul, _, Node::Literal(o)) if *o == 1.0 => a,
                (Div, Node::Literal(z), _) if *z == 0.0 => Node::Literal(0.0),
                (Div, _, Node::Literal(o)) if *o == 1.0 => a,
                (Pow, _, Node::Literal(o)) if *o == 1.0 => a,
                (Pow, _, Node::Literal(z)) if *z == 0.0 => Node::Literal(1.0),
                _ => Node::Bin(op, Box::new(a), Box::new(b)),
            }
        }
        leaf => leaf,
    }
}

// ---- pretty printing ------------------------------------------------------

fn precedence(n: &Node) -> u8 {
    match n {
        Node::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Node::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Node::Neg(_) => 3,
        Node::Literal(v) if *v < 0.0 => 3, // prints with a leading '-'
        Node::Bin(BinOp::Pow, ..) => 4,
        _ => 5,
    }
}

fn write_node(f: &mut std::fmt::Formatter<'_>, n: &Node) -> std::fmt::Result {
    let paren = |f: &mut std::fmt::Formatter<'_>, x: &Node, need: bool| -> std::fmt::Result {
        if need {
            write!(f, "(")?;
            write_node(f, x)?;
            write!(f, ")")
        } else {
            write_node(f, x)
        }
    };
    match n {
        Node::Literal(v) => write!(f, "{v}"),
        Node::Q(i) => write!(f, "q{}", i + 1),
        Node::P(i) => write!(f, "p{}", i + 1),
        Node::Neg(x) => {
            write!(f, "-")?;
            paren(f, x, precedence(x) < 3)
        }
        Node::Call(func, x) => {
            write!(f, "{}(", func.name())?;
            write_node(f, x)?;
            write!(f, ")")
        }
        Node::Bin(op, a, b) => {
            let p = match op {
                BinOp::Add | BinOp::Sub => 1,
                BinOp::Mul | BinOp::Div => 2,
                BinOp::Pow => 4,
            };
            let right_assoc = matches!(op, BinOp::Pow);
            let (pa, pb) = (precedence(a), precedence(b));
            paren(f, a, pa < p || (pa == p && right_assoc))?;
            match op {
                BinOp::Add => write!(f, " + ")?,
                BinOp::Sub => write!(f, " - ")?,
                BinOp::Mul => write!(f, "*")?,
                BinOp::Div => write!(f, "/")?,
                BinOp::Pow => write!(f, "^")?,
            }
            paren(f, b, pb < p || (pb == p && !right_assoc))
        }
    }
}

impl std::fmt::Display for Expression {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write_node(f, &self.root)
    }
}
