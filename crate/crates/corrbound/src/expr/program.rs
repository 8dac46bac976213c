//! Stack-machine compilation of expressions for hot loops (integrator steps,
//! per-sample observable evaluation).

use super::{BinOp, EvalError, Expression, Func, Node};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Const(f64),
    LoadQ(u32),
    LoadP(u32),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    /// Integer power fast path for small literal exponents.
    Powi(i32),
    Powf,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Ln,
}

/// Reusable evaluation stack. One per thread/loop; avoids per-call allocation.
#[derive(Debug, Default, Clone)]
pub struct EvalScratch {
    stack: Vec<f64>,
}

/// A compiled expression in postfix form.
#[derive(Debug, Clone)]
pub struct Program {
    code: Vec<Instr>,
    max_stack: usize,
    r: usize,
}

impl Program {
    pub fn compile(expr: &Expression) -> Program {
        let mut code = Vec::new();
        emit(expr.root(), &mut code);
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        for instr in &code {
            match instr {
                Instr::Const(_) | Instr::LoadQ(_) | Instr::LoadP(_) => depth += 1,
                Instr::Add | Instr::Sub | Instr::Mul | Instr::Div | Instr::Powf => depth -= 1,
                _ => {}
            }
            max_stack = max_stack.max(depth);
        }
        debug_assert_eq!(depth, 1);
        Program {
            code,
            max_stack,
            r: expr.dim(),
        }
    }

    pub fn dim(&self) -> usize {
        self.r
    }

    /// Evaluate at `(q, p)`. Slices must have length `r`.
    pub fn eval(&self, q: &[f64], p: &[f64], scratch: &mut EvalScratch) -> Result<f64, EvalError> {
        if q.len() != self.r || p.len() != self.r {
            return Err(EvalError::DimensionMismatch {
                expected: self.r,
                got: q.len().min(p.len()),
            });
        }
        let stack = &mut scratch.stack;
        stack.clear();
        stack.reserve(self.max_stack);
        for instr in &self.code {
            match *instr {
                Instr::Const(v) => stack.push(v),
                Instr::LoadQ(i) => stack.push(q[i as usize]),
                Instr::LoadP(i) => stack.push(p[i as usize]),
                Instr::Neg => {
                    let top = stack.last_mut().unwrap();
                    *top = -*top;
                }
                Instr::Powi(e) => {
                    let top = stack.last_mut().unwrap();
                    *top = top.powi(e);
                }
                Instr::Sin => {
                    let top = stack.last_mut().unwrap();
                    *top = top.sin();
                }
                Instr::Cos => {
                    let top = stack.last_mut().unwrap();
                    *top = top.cos();
                }
                Instr::Exp => {
                    let top = stack.last_mut().unwrap();
                    *top = top.exp();
                }
                Instr::Sqrt => {
                    let top = stack.last_mut().unwrap();
                    if *top < 0.0 {
                        return Err(EvalError::SqrtOfNegative);
                    }
                    *top = top.sqrt();
                }
                Instr::Ln => {
                    let top = stack.last_mut().unwrap();
                    if *top <= 0.0 {
                        return Err(EvalError::LogNonPositive);
                    }
                    *top = top.ln();
                }
                Instr::Add => {
                    let b = stack.pop().unwrap();
                    let top = stack.last_mut().unwrap();
                    *top += b;
                }
                Instr::Sub => {
                    let b = stack.pop().unwrap();
                    let top = stack.last_mut().unwrap();
                    *top -= b;
                }
                Instr::Mul => {
                    let b = stack.pop().unwrap();
                    let top = stack.last_mut().unwrap();
                    *top *= b;
                }
                Instr::Div => {
                    let b = stack.pop().unwrap();
                    if b == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    let top = stack.last_mut().unwrap();
                    *top /= b;
                }
                Instr::Powf => {
                    let b = stack.pop().unwrap();
                    let top = stack.last_mut().unwrap();
                    let v = top.powf(b);
                    if v.is_nan() && !top.is_nan() && !b.is_nan() {
                        return Err(EvalError::PowDomain);
                    }
                    *top = v;
                }
            }
        }
        Ok(stack[0])
    }
}

fn emit(n: &Node, code: &mut Vec<Instr>) {
    match n {
        Node::Literal(v) => code.push(Instr::Const(*v)),
        Node::Q(i) => code.push(Instr::LoadQ(*i as u32)),
        Node::P(i) => code.push(Instr::LoadP(*i as u32)),
        Node::Neg(x) => {
            emit(x, code);
            code.push(Instr::Neg);
        }
        Node::Call(f, x) => {
            emit(x, code);
            code.push(match f {
                Func::Sin => Instr::Sin,
                Func::Cos => Instr::Cos,
                Func::Exp => Instr::Exp,
                Func::Sqrt => Instr::Sqrt,
                Func::Ln => Instr::Ln,
            });
        }
        Node::Bin(BinOp::Pow, a, b) => {
            emit(a, code);
            match b.as_ref() {
                Node::Literal(e) if e.fract() == 0.0 && e.abs() <= 64.0 => {
                    code.push(Instr::Powi(*e as i32));
                }
                _ => {
                    emit(b, code);
                    code.push(Instr::Powf);
                }
            }
        }
        Node::Bin(op, a, b) => {
            emit(a, code);
            emit(b, code);
            code.push(match op {
                BinOp::Add => Instr::Add,
                BinOp::Sub => Instr::Sub,
                BinOp::Mul => Instr::Mul,
                BinOp::Div => Instr::Div,
                BinOp::Pow => unreachable!(),
            });
        }
    }
}
