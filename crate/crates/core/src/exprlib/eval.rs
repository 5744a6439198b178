use super::{BinaryOp, Expr, UnaryOp};
use crate::synthgen::CovariateTable;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalErrorKind {
    #[error("{0} argument out of domain")]
    Domain(&'static str),
    #[error("division by zero")]
    DivisionByZero,
    #[error("NaN produced")]
    NaN,
    #[error("covariate x{index} out of range (table has {available} columns)")]
    VariableOutOfRange { index: usize, available: usize },
    #[error("library column c{index} out of range ({available} built so far)")]
    ColumnOutOfRange { index: usize, available: usize },
    #[error("unfilled template slot")]
    UnfilledSlot,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("row {row}: {kind}")]
pub struct EvalError {
    pub row: usize,
    pub kind: EvalErrorKind,
}

/// Evaluates `expr` row by row over the covariate table. `built_columns`
/// are the library columns available to `c<INT>` references.
pub fn eval_expr(expr: &Expr, covariates: &CovariateTable, built_columns: &[Vec<f64>]) -> Result<Vec<f64>, EvalError> {
    check_refs(expr, covariates.cols(), built_columns.len()).map_err(|kind| EvalError { row: 0, kind })?;
    (0..covariates.rows())
        .map(|row| {
            let ctx = Row { covariates, built: built_columns, row };
            ctx.eval(expr).map_err(|kind| EvalError { row, kind })
        })
        .collect()
}

fn check_refs(expr: &Expr, vars: usize, cols: usize) -> Result<(), EvalErrorKind> {
    if expr.has_slot() {
        return Err(EvalErrorKind::UnfilledSlot);
    }
    if let Some(i) = expr.max_var().filter(|&i| i >= vars) {
        return Err(EvalErrorKind::VariableOutOfRange { index: i, available: vars });
    }
    if let Some(i) = expr.max_column().filter(|&i| i >= cols) {
        return Err(EvalErrorKind::ColumnOutOfRange { index: i, available: cols });
    }
    Ok(())
}

struct Row<'a> {
    covariates: &'a CovariateTable,
    built: &'a [Vec<f64>],
    row: usize,
}

impl Row<'_> {
    fn eval(&self, expr: &Expr) -> Result<f64, EvalErrorKind> {
        let v = match expr {
            Expr::Var(i) => self.covariates.get(self.row, *i),
            Expr::Column(i) => self.built[*i][self.row],
            Expr::Slot => return Err(EvalErrorKind::UnfilledSlot),
            Expr::Const(c) => *c,
            Expr::Unary(op, c) => unary(*op, self.eval(c)?)?,
            Expr::Binary(op, l, r) => {
                let a = self.eval(l)?;
                let b = self.eval(r)?;
                binary(*op, a, b)?
            }
            Expr::Clip { child, lo, hi } => self.eval(child)?.clamp(*lo, *hi),
        };
        if v.is_nan() {
            return Err(EvalErrorKind::NaN);
        }
        Ok(v)
    }
}

fn unary(op: UnaryOp, v: f64) -> Result<f64, EvalErrorKind> {
    Ok(match op {
        UnaryOp::Neg => -v,
        UnaryOp::Abs => v.abs(),
        UnaryOp::Sqrt if v < 0.0 => return Err(EvalErrorKind::Domain("sqrt")),
        UnaryOp::Sqrt => v.sqrt(),
        UnaryOp::Exp => v.exp(),
        UnaryOp::Log if v <= 0.0 => return Err(EvalErrorKind::Domain("log")),
        UnaryOp::Log => v.ln(),
        UnaryOp::Sin => v.sin(),
        UnaryOp::Cos => v.cos(),
        UnaryOp::Tan => v.tan(),
        UnaryOp::Arcsin if !(-1.0..=1.0).contains(&v) => return Err(EvalErrorKind::Domain("arcsin")),
        UnaryOp::Arcsin => v.asin(),
        UnaryOp::Arccos if !(-1.0..=1.0).contains(&v) => return Err(EvalErrorKind::Domain("arccos")),
        UnaryOp::Arccos => v.acos(),
        UnaryOp::Arctan => v.atan(),
        UnaryOp::Sinh => v.sinh(),
        UnaryOp::Cosh => v.cosh(),
        UnaryOp::Tanh => v.tanh(),
    })
}

fn binary(op: BinaryOp, a: f64, b: f64) -> Result<f64, EvalErrorKind> {
    Ok(match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div if b == 0.0 => return Err(EvalErrorKind::DivisionByZero),
        BinaryOp::Div => a / b,
        BinaryOp::Pow => a.powf(b),
    })
}
