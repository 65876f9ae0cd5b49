//! Infix parser.
//!
//! ```text
//! root  := expr | "pair" "(" expr "," expr ")"
//! expr  := term (("+" | "-") term)*
//! term  := unary (("*" | "/") unary)*
//! unary := "-" unary | power
//! power := atom ("^" unary)?
//! atom  := number | name | func "(" expr ")" | "(" expr ")"
//! func  := "neg" | "abs" | "sqrt" | "log" | "exp"
//! ```
//!
//! `-` directly in front of a numeric literal folds into a negative constant.
//! Names resolve against the bound name list first, then the `x<k>` pattern.

use thiserror::Error;

use super::{BinaryOp, Expr, UnaryOp};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at offset {pos}: {message}")]
pub struct ParseError {
    pub pos: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

fn err<T>(pos: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { pos, message: message.into() })
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            match text.parse::<f64>() {
                Ok(v) => out.push((Tok::Num(v), start)),
                Err(_) => return err(start, format!("malformed number `{text}`")),
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
        } else if "+-*/^(),".contains(c) {
            out.push((Tok::Sym(c), i));
            i += 1;
        } else {
            return err(i, format!("unexpected character `{}`", &src[i..].chars().next().unwrap_or(c)));
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    names: &'a [String],
    /// Unknown names become free parameters instead of errors.
    params: Option<Vec<(String, usize)>>,
    const_count: usize,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Sym(s) if *s == c => {
                self.bump();
                Ok(())
            }
            Tok::End => err(self.pos(), format!("unexpected end of input, expected `{c}`")),
            _ => err(self.pos(), format!("expected `{c}`")),
        }
    }

    fn root(&mut self) -> Result<Expr, ParseError> {
        let e = if matches!(self.peek(), Tok::Ident(s) if s == "pair") {
            self.bump();
            self.expect('(')?;
            let a = self.expr()?;
            self.expect(',')?;
            let b = self.expr()?;
            self.expect(')')?;
            Expr::pair(a, b)
        } else {
            self.expr()?
        };
        match self.peek() {
            Tok::End => Ok(e),
            _ => err(self.pos(), "unexpected trailing input"),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('+') => BinaryOp::Add,
                Tok::Sym('-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::binary(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?.0;
        loop {
            let op = match self.peek() {
                Tok::Sym('*') => BinaryOp::Mul,
                Tok::Sym('/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::binary(op, lhs, self.unary()?.0);
        }
    }

    /// Returns the node and whether it is a bare numeric literal.
    fn unary(&mut self) -> Result<(Expr, bool), ParseError> {
        if matches!(self.peek(), Tok::Sym('-')) {
            self.bump();
            return Ok(match self.unary()? {
                (Expr::Const(c), true) => (Expr::Const(-c), true),
                (e, _) => (Expr::unary(UnaryOp::Neg, e), false),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<(Expr, bool), ParseError> {
        let (base, lit) = self.atom()?;
        if matches!(self.peek(), Tok::Sym('^')) {
            self.bump();
            let exp = self.unary()?.0;
            return Ok((Expr::binary(BinaryOp::Pow, base, exp), false));
        }
        Ok((base, lit))
    }

    fn atom(&mut self) -> Result<(Expr, bool), ParseError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Num(v) => {
                self.const_count += 1;
                Ok((Expr::Const(v), true))
            }
            Tok::Sym('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok((e, false))
            }
            Tok::Ident(name) => {
                if matches!(self.peek(), Tok::Sym('(')) {
                    if name == "pair" {
                        return err(pos, "pair is only allowed at the root");
                    }
                    let Some(op) = UnaryOp::from_name(&name) else {
                        return err(pos, format!("unknown function `{name}`"));
                    };
                    self.bump();
                    let e = self.expr()?;
                    self.expect(')')?;
                    return Ok((Expr::unary(op, e), false));
                }
                if let Some(i) = self.names.iter().position(|n| *n == name) {
                    return Ok((Expr::Var(i), false));
                }
                if let Some(i) = name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                    if self.names.is_empty() {
                        return Ok((Expr::Var(i), false));
                    }
                }
                if let Some(params) = &mut self.params {
                    if params.iter().any(|(p, _)| *p == name) {
                        return err(pos, format!("parameter `{name}` used more than once"));
                    }
                    params.push((name, self.const_count));
                    self.const_count += 1;
                    return Ok((Expr::Const(1.0), false));
                }
                err(pos, format!("unknown name `{name}`"))
            }
            Tok::End => err(pos, "unexpected end of input"),
            Tok::Sym(c) => err(pos, format!("unexpected `{c}`")),
        }
    }
}

fn run(text: &str, names: &[String], params: Option<Vec<(String, usize)>>) -> Result<(Expr, Option<Vec<(String, usize)>>), ParseError> {
    let mut p = Parser { toks: tokenize(text)?, at: 0, names, params, const_count: 0 };
    let e = p.root()?;
    Ok((e, p.params))
}

/// Parses text using `x<k>` variable names.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    parse_with_names(text, &[])
}

/// Parses text with variables bound to `names` (falls back to `x<k>` only when `names` is empty).
pub fn parse_with_names(text: &str, names: &[String]) -> Result<Expr, ParseError> {
    run(text, names, None).map(|(e, _)| e)
}

/// A parsed expression whose unbound names are free constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub expr: Expr,
    /// Parameter names in order of appearance.
    pub params: Vec<String>,
    /// Pre-order constant slot of each parameter.
    pub slots: Vec<usize>,
}

impl Template {
    /// Mask over [`Expr::constants`] marking which constants are free.
    pub fn free_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.expr.constants().len()];
        for &s in &self.slots {
            mask[s] = true;
        }
        mask
    }

    /// Template with parameters set to `values`.
    pub fn instantiate(&self, values: &[f64]) -> Expr {
        assert_eq!(values.len(), self.params.len());
        let mut c = self.expr.constants();
        for (&s, &v) in self.slots.iter().zip(values) {
            c[s] = v;
        }
        self.expr.with_constants(&c)
    }

    /// Parameter values read back from an instantiated expression.
    pub fn values(&self, e: &Expr) -> Vec<f64> {
        let c = e.constants();
        self.slots.iter().map(|&s| c[s]).collect()
    }
}

/// Parses a template; identifiers that are not in `names` become parameters
/// initialized to 1.
pub fn parse_template(text: &str, names: &[String]) -> Result<Template, ParseError> {
    let (expr, params) = run(text, names, Some(Vec::new()))?;
    let (params, slots) = params.unwrap_or_default().into_iter().unzip();
    Ok(Template { expr, params, slots })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse("x0 + x1 * x2 ^ 2").unwrap();
        let want = Expr::binary(
            BinaryOp::Add,
            Expr::Var(0),
            Expr::binary(BinaryOp::Mul, Expr::Var(1), Expr::binary(BinaryOp::Pow, Expr::Var(2), Expr::Const(2.0))),
        );
        assert_eq!(e, want);
        assert_eq!(parse("x0-x1-x2").unwrap(), parse("(x0-x1)-x2").unwrap());
        assert_eq!(parse("x0^x1^x2").unwrap(), parse("x0^(x1^x2)").unwrap());
    }

    #[test]
    fn minus_literal_folds_but_minus_paren_does_not() {
        assert_eq!(parse("-3").unwrap(), Expr::Const(-3.0));
        assert_eq!(parse("-(3)").unwrap(), Expr::unary(UnaryOp::Neg, Expr::Const(3.0)));
        assert_eq!(parse("-3^2").unwrap(), Expr::unary(UnaryOp::Neg, parse("3^2").unwrap()));
        assert_eq!(parse("x0^-1").unwrap(), parse("x0^(-1)").unwrap());
    }

    #[test]
    fn unclosed_call_reports_offset() {
        let e = parse("log((").unwrap_err();
        assert_eq!(e.pos, 5);
        assert_eq!(parse("x0 + ").unwrap_err().pos, 5);
        assert_eq!(parse("x0 $ x1").unwrap_err().pos, 3);
        assert_eq!(parse("foo(x0)").unwrap_err().pos, 0);
    }

    #[test]
    fn bound_names_and_round_trip() {
        let n = names(&["m", "M"]);
        let e = parse_with_names("(m*M/(m+M))", &n).unwrap();
        assert_eq!(e.format_with(&n), "m*M/(m+M)");
        assert_eq!(parse_with_names(&e.format_with(&n), &n).unwrap(), e);
        assert!(parse_with_names("x0", &n).is_err());
    }

    #[test]
    fn aero_dominant_term_template() {
        let e = parse("x0^2 + 2.24/x1^2").unwrap();
        let want = Expr::binary(
            BinaryOp::Add,
            Expr::binary(BinaryOp::Pow, Expr::Var(0), Expr::Const(2.0)),
            Expr::binary(BinaryOp::Div, Expr::Const(2.24), Expr::binary(BinaryOp::Pow, Expr::Var(1), Expr::Const(2.0))),
        );
        assert_eq!(e, want);
        assert_eq!(e.to_string(), "x0^2+2.24/x1^2");
    }

    #[test]
    fn pair_only_at_root() {
        let p = parse("pair(x0, x1^3)").unwrap();
        assert!(p.is_pair());
        assert_eq!(p.to_string(), "pair(x0, x1^3)");
        assert!(parse("x0 + pair(x0, x1)").is_err());
    }

    #[test]
    fn template_parameters() {
        let n = names(&["alpha", "Ma"]);
        let t = parse_template("(alpha^2 + c1/Ma^2)*c3", &n).unwrap();
        assert_eq!(t.params, vec!["c1", "c3"]);
        assert_eq!(t.free_mask(), vec![false, true, false, true]);
        let e = t.instantiate(&[2.24, 2.42]);
        assert_eq!(t.values(&e), vec![2.24, 2.42]);
        assert!(parse_template("c1*c1", &n).is_err());
    }

    #[test]
    fn number_formats() {
        for text in ["1e-7*x0", "0.1+x0", "x0*(-2.5)", "1.5e300/x0", "-(x0)", "-(2)*x1", "abs(x0)-exp(-x1)"] {
            let e = parse(text).unwrap();
            assert_eq!(parse(&e.to_string()).unwrap(), e, "{text} -> {e}");
        }
    }
}
