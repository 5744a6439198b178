//! Base-function expressions: a small arithmetic DSL over covariate columns
//! and previously built library columns.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | func '(' args ')' | 'x' INT | 'c' INT | 'x'
//!         | NUMBER | 'inf' | '(' expr ')'
//! ```
//!
//! `x<INT>` is a covariate column, `c<INT>` an earlier library column and a
//! bare `x` is the free slot of a library template.

mod eval;
mod parser;

use std::fmt;

pub use eval::{eval_expr, EvalError, EvalErrorKind};
pub use parser::{parse_expr, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Abs,
    Sqrt,
    Exp,
    Log,
    Sin,
    Cos,
    Tan,
    Arcsin,
    Arccos,
    Arctan,
    Sinh,
    Cosh,
    Tanh,
}

impl UnaryOp {
    pub const FUNCTIONS: [UnaryOp; 13] = [
        UnaryOp::Abs,
        UnaryOp::Sqrt,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Tan,
        UnaryOp::Arcsin,
        UnaryOp::Arccos,
        UnaryOp::Arctan,
        UnaryOp::Sinh,
        UnaryOp::Cosh,
        UnaryOp::Tanh,
    ];

    /// DSL function name; `Neg` is written as a prefix minus instead.
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Abs => "abs",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
            UnaryOp::Arcsin => "arcsin",
            UnaryOp::Arccos => "arccos",
            UnaryOp::Arctan => "arctan",
            UnaryOp::Sinh => "sinh",
            UnaryOp::Cosh => "cosh",
            UnaryOp::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<UnaryOp> {
        UnaryOp::FUNCTIONS.iter().copied().find(|op| op.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
            BinaryOp::Pow => 3,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "power",
        }
    }
}

/// An immutable expression tree.
///
/// `Binary(Pow, ..)` always carries a `Const` exponent and `Clip` always has
/// `lo <= hi`; use [`Expr::pow`] and [`Expr::clip`] to build those nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Var(usize),
    Column(usize),
    Slot,
    Const(f64),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Clip { child: Box<Expr>, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("power exponent must be a numeric constant")]
    NonConstantExponent,
    #[error("clip bounds out of order: lo = {lo} > hi = {hi}")]
    InvalidClip { lo: f64, hi: f64 },
}

impl Expr {
    pub fn unary(op: UnaryOp, child: Expr) -> Expr {
        Expr::Unary(op, Box::new(child))
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Result<Expr, ExprError> {
        if op == BinaryOp::Pow {
            return Expr::pow(lhs, rhs);
        }
        Ok(Expr::Binary(op, Box::new(lhs), Box::new(rhs)))
    }

    pub fn pow(base: Expr, exponent: Expr) -> Result<Expr, ExprError> {
        match exponent {
            Expr::Const(_) => Ok(Expr::Binary(BinaryOp::Pow, Box::new(base), Box::new(exponent))),
            _ => Err(ExprError::NonConstantExponent),
        }
    }

    pub fn clip(child: Expr, lo: f64, hi: f64) -> Result<Expr, ExprError> {
        if lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(ExprError::InvalidClip { lo, hi });
        }
        Ok(Expr::Clip { child: Box::new(child), lo, hi })
    }

    pub fn has_slot(&self) -> bool {
        self.any(&mut |e| matches!(e, Expr::Slot))
    }

    pub fn max_var(&self) -> Option<usize> {
        let mut max = None;
        self.visit(&mut |e| {
            if let Expr::Var(i) = e {
                max = Some(max.map_or(*i, |m: usize| m.max(*i)));
            }
        });
        max
    }

    pub fn max_column(&self) -> Option<usize> {
        let mut max = None;
        self.visit(&mut |e| {
            if let Expr::Column(i) = e {
                max = Some(max.map_or(*i, |m: usize| m.max(*i)));
            }
        });
        max
    }

    fn any(&self, pred: &mut impl FnMut(&Expr) -> bool) -> bool {
        if pred(self) {
            return true;
        }
        match self {
            Expr::Unary(_, c) | Expr::Clip { child: c, .. } => c.any(pred),
            Expr::Binary(_, l, r) => l.any(pred) || r.any(pred),
            _ => false,
        }
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Unary(_, c) | Expr::Clip { child: c, .. } => c.visit(f),
            Expr::Binary(_, l, r) => {
                l.visit(f);
                r.visit(f);
            }
            _ => {}
        }
    }

    /// Replaces every node for which `f` returns `Some` with the returned tree.
    pub fn substitute(&self, f: &impl Fn(&Expr) -> Option<Expr>) -> Expr {
        if let Some(e) = f(self) {
            return e;
        }
        match self {
            Expr::Unary(op, c) => Expr::Unary(*op, Box::new(c.substitute(f))),
            Expr::Binary(op, l, r) => Expr::Binary(*op, Box::new(l.substitute(f)), Box::new(r.substitute(f))),
            Expr::Clip { child, lo, hi } => Expr::Clip { child: Box::new(child.substitute(f)), lo: *lo, hi: *hi },
            leaf => leaf.clone(),
        }
    }

    pub fn fill_slot(&self, with: &Expr) -> Expr {
        self.substitute(&|e| matches!(e, Expr::Slot).then(|| with.clone()))
    }

    fn is_atom(&self) -> bool {
        match self {
            Expr::Var(_) | Expr::Column(_) | Expr::Slot | Expr::Clip { .. } => true,
            Expr::Const(c) => !c.is_sign_negative(),
            Expr::Unary(op, _) => *op != UnaryOp::Neg,
            Expr::Binary(op, _, _) => *op == BinaryOp::Pow,
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, _, _) => op.precedence(),
            _ => 4,
        }
    }
}

pub(crate) fn format_number(value: f64) -> String {
    if value.is_infinite() {
        return if value > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let mag = value.abs();
    if mag == 0.0 || (1e-4..1e15).contains(&mag) {
        format!("{value}")
    } else {
        format!("{value:e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Column(i) => write!(f, "c{i}"),
            Expr::Slot => write!(f, "x"),
            Expr::Const(c) => f.write_str(&format_number(*c)),
            Expr::Unary(UnaryOp::Neg, c) => {
                // `-2` would re-parse as the constant -2, so constants get parens too.
                if c.is_atom() && !matches!(**c, Expr::Const(_)) {
                    write!(f, "-{c}")
                } else {
                    write!(f, "-({c})")
                }
            }
            Expr::Unary(op, c) => write!(f, "{}({c})", op.name()),
            Expr::Binary(BinaryOp::Pow, base, exp) => write!(f, "power({base}, {exp})"),
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                if l.precedence() < p {
                    write!(f, "({l})")?;
                } else {
                    write!(f, "{l}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if r.precedence() <= p {
                    write!(f, "({r})")
                } else {
                    write!(f, "{r}")
                }
            }
            Expr::Clip { child, lo, hi } => {
                write!(f, "clip({child}, {}, {})", format_number(*lo), format_number(*hi))
            }
        }
    }
}
