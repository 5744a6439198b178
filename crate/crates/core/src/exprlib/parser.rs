use super::{BinaryOp, Expr, ExprError, UnaryOp};

/// Parse failure. `position` is the 1-based byte position of the offending
/// token (one past the last byte for unexpected end of input).
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at offset {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown function `{name}` at offset {position}")]
    UnknownFunction { name: String, position: usize },
    #[error("non-constant power exponent at offset {position}")]
    NonConstantExponent { position: usize },
    #[error("clip with lo = {lo} > hi = {hi} at offset {position}")]
    InvalidClip { lo: f64, hi: f64, position: usize },
}

impl ParseError {
    pub fn position(&self) -> usize {
        match self {
            ParseError::Syntax { position, .. }
            | ParseError::UnknownFunction { position, .. }
            | ParseError::NonConstantExponent { position }
            | ParseError::InvalidClip { position, .. } => *position,
        }
    }
}

pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser { src: src.as_bytes(), pos: 0 };
    p.skip_ws();
    if p.at_end() {
        return Err(p.error("empty expression"));
    }
    let e = p.expr()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn error(&self, message: &str) -> ParseError {
        self.error_at(self.pos, message)
    }

    fn error_at(&self, pos: usize, message: &str) -> ParseError {
        ParseError::Syntax { position: pos + 1, message: message.to_string() }
    }

    fn eat(&mut self, byte: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(byte) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, byte: u8) -> Result<(), ParseError> {
        if self.eat(byte) {
            Ok(())
        } else if self.at_end() {
            Err(self.error(&format!("expected `{}`, found end of input", byte as char)))
        } else {
            Err(self.error(&format!("expected `{}`", byte as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat(b'+') {
                BinaryOp::Add
            } else if self.eat(b'-') {
                BinaryOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = if self.eat(b'*') {
                BinaryOp::Mul
            } else if self.eat(b'/') {
                BinaryOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'-') => {
                self.pos += 1;
                self.skip_ws();
                // A minus directly on a literal folds into the constant.
                if let Some(v) = self.try_literal()? {
                    return Ok(Expr::Const(-v));
                }
                Ok(Expr::unary(UnaryOp::Neg, self.factor()?))
            }
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(b) if b.is_ascii_digit() || b == b'.' => {
                let v = self.try_literal()?.ok_or_else(|| self.error_at(start, "bad number"))?;
                Ok(Expr::Const(v))
            }
            Some(b) if b.is_ascii_alphabetic() || b == b'_' => self.identifier(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    /// Parses a NUMBER or `inf` at the cursor, leaving the cursor untouched
    /// when neither is present.
    fn try_literal(&mut self) -> Result<Option<f64>, ParseError> {
        let start = self.pos;
        if self.word_at(start) == "inf" {
            self.pos += 3;
            return Ok(Some(f64::INFINITY));
        }
        let mut end = start;
        let digits = |s: &[u8], mut i: usize| {
            while s.get(i).is_some_and(|b| b.is_ascii_digit()) {
                i += 1;
            }
            i
        };
        end = digits(self.src, end);
        if self.src.get(end) == Some(&b'.') {
            end = digits(self.src, end + 1);
        }
        if end == start || (end == start + 1 && self.src[start] == b'.') {
            return Ok(None);
        }
        if matches!(self.src.get(end), Some(b'e' | b'E')) {
            let mut e = end + 1;
            if matches!(self.src.get(e), Some(b'+' | b'-')) {
                e += 1;
            }
            let after = digits(self.src, e);
            if after == e {
                return Err(self.error_at(e, "malformed exponent"));
            }
            end = after;
        }
        if self.src.get(end).is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_') {
            return Err(self.error_at(end, "unexpected character after number"));
        }
        let text = std::str::from_utf8(&self.src[start..end]).expect("ascii");
        let v: f64 = text.parse().map_err(|_| self.error_at(start, "bad number"))?;
        self.pos = end;
        Ok(Some(v))
    }

    fn word_at(&self, start: usize) -> &str {
        let mut end = start;
        while self.src.get(end).is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_') {
            end += 1;
        }
        std::str::from_utf8(&self.src[start..end]).unwrap_or("")
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let word = self.word_at(start).to_string();
        self.pos += word.len();
        if word == "inf" {
            return Ok(Expr::Const(f64::INFINITY));
        }
        if word == "x" {
            return Ok(Expr::Slot);
        }
        if let Some(index) = indexed(&word, 'x') {
            return index.map(Expr::Var).map_err(|m| self.error_at(start, m));
        }
        if let Some(index) = indexed(&word, 'c') {
            return index.map(Expr::Column).map_err(|m| self.error_at(start, m));
        }
        self.skip_ws();
        if self.peek() != Some(b'(') {
            if is_function(&word) {
                return Err(self.error(&format!("expected `(` after `{word}`")));
            }
            return Err(ParseError::UnknownFunction { name: word, position: start + 1 });
        }
        match word.as_str() {
            "power" => {
                self.expect(b'(')?;
                let base = self.expr()?;
                self.expect(b',')?;
                self.skip_ws();
                let exp_pos = self.pos;
                let exponent = self.expr()?;
                self.expect(b')')?;
                Expr::pow(base, exponent).map_err(|_| ParseError::NonConstantExponent { position: exp_pos + 1 })
            }
            "clip" => {
                self.expect(b'(')?;
                let child = self.expr()?;
                self.expect(b',')?;
                let lo = self.bound()?;
                self.expect(b',')?;
                let hi = self.bound()?;
                self.expect(b')')?;
                Expr::clip(child, lo, hi).map_err(|e| match e {
                    ExprError::InvalidClip { lo, hi } => ParseError::InvalidClip { lo, hi, position: start + 1 },
                    ExprError::NonConstantExponent => unreachable!(),
                })
            }
            name => {
                let op = UnaryOp::from_name(name)
                    .ok_or_else(|| ParseError::UnknownFunction { name: name.to_string(), position: start + 1 })?;
                self.expect(b'(')?;
                let arg = self.expr()?;
                self.expect(b')')?;
                Ok(Expr::unary(op, arg))
            }
        }
    }

    fn bound(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let negative = self.peek() == Some(b'-');
        if negative {
            self.pos += 1;
            self.skip_ws();
        }
        match self.try_literal()? {
            Some(v) => Ok(if negative { -v } else { v }),
            None if self.at_end() => Err(self.error("expected clip bound, found end of input")),
            None => Err(self.error("clip bounds must be numeric literals")),
        }
    }
}

fn is_function(word: &str) -> bool {
    word == "power" || word == "clip" || UnaryOp::from_name(word).is_some()
}

/// `Some(Ok(i))` for `<prefix><digits>`, `Some(Err)` for a prefix followed by
/// junk that cannot be a function name, `None` otherwise.
fn indexed(word: &str, prefix: char) -> Option<Result<usize, &'static str>> {
    let rest = word.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(rest.parse().map_err(|_| "column index out of range"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_of_covariate() {
        let e = parse_expr("power(x3, 2)").unwrap();
        assert_eq!(e, Expr::Binary(BinaryOp::Pow, Box::new(Expr::Var(3)), Box::new(Expr::Const(2.0))));
    }

    #[test]
    fn logarithmic_entry_with_clip_and_shift() {
        let e = parse_expr("log(clip(x0, 1e-9, inf)) / (clip(x0, 1e-9, inf) + 1e-9)").unwrap();
        let clipped = Expr::clip(Expr::Var(0), 1e-9, f64::INFINITY).unwrap();
        let expected = Expr::Binary(
            BinaryOp::Div,
            Box::new(Expr::unary(UnaryOp::Log, clipped.clone())),
            Box::new(Expr::Binary(BinaryOp::Add, Box::new(clipped), Box::new(Expr::Const(1e-9)))),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn truncated_input_reports_position() {
        let err = parse_expr("power(x1,").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { .. }));
        assert_eq!(err.position(), 10);
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(
            parse_expr("foo(x1)"),
            Err(ParseError::UnknownFunction { ref name, position: 1 }) if name == "foo"
        ));
        assert!(matches!(parse_expr("power(x1, x2)"), Err(ParseError::NonConstantExponent { position: 11 })));
        assert!(matches!(parse_expr("clip(x0, 2, 1)"), Err(ParseError::InvalidClip { .. })));
        assert!(matches!(parse_expr(""), Err(ParseError::Syntax { position: 1, .. })));
        assert!(parse_expr("x0 +").is_err());
        assert!(parse_expr("x0 x1").is_err());
        assert!(parse_expr("1e").is_err());
    }

    #[test]
    fn negative_literals_and_unary_minus() {
        assert_eq!(parse_expr("-2").unwrap(), Expr::Const(-2.0));
        assert_eq!(parse_expr("-(2)").unwrap(), Expr::unary(UnaryOp::Neg, Expr::Const(2.0)));
        assert_eq!(parse_expr("-x1").unwrap(), Expr::unary(UnaryOp::Neg, Expr::Var(1)));
        let clip = parse_expr("clip(x0, -inf, -1)").unwrap();
        assert_eq!(clip, Expr::clip(Expr::Var(0), f64::NEG_INFINITY, -1.0).unwrap());
        // subtraction of a negative literal
        assert_eq!(
            parse_expr("x0 - -1").unwrap(),
            Expr::Binary(BinaryOp::Sub, Box::new(Expr::Var(0)), Box::new(Expr::Const(-1.0)))
        );
    }

    #[test]
    fn slot_and_library_columns() {
        assert_eq!(parse_expr("x").unwrap(), Expr::Slot);
        assert_eq!(parse_expr("c12").unwrap(), Expr::Column(12));
        assert_eq!(parse_expr("cosh(c3)").unwrap(), Expr::unary(UnaryOp::Cosh, Expr::Column(3)));
    }

    #[test]
    fn left_associative_chains() {
        let e = parse_expr("x0 - x1 - x2").unwrap();
        assert_eq!(e.to_string(), "x0 - x1 - x2");
        let e = parse_expr("x0 / x1 * x2").unwrap();
        match e {
            Expr::Binary(BinaryOp::Mul, l, _) => assert!(matches!(*l, Expr::Binary(BinaryOp::Div, ..))),
            other => panic!("unexpected tree {other:?}"),
        }
    }
}
