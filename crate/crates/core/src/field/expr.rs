//! Arithmetic expression grammar for user-defined vector-field components:
//! numbers, state variables `x1..xn` (with `x`, `y`, `z` aliases), named
//! parameters, `+ - * / ^` and a handful of functions. Precedence climbing;
//! `^` is right-associative and binds tighter than unary minus.

use std::collections::BTreeMap;
use std::fmt;

use super::FieldError;

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
    Tanh,
    Sqrt,
    Abs,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "tanh" => Func::Tanh,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprAst {
    Num(f64),
    /// Zero-based state variable index.
    Var(usize),
    Param(String),
    Neg(Box<ExprAst>),
    Bin(BinOp, Box<ExprAst>, Box<ExprAst>),
    Call(Func, Box<ExprAst>),
}

impl ExprAst {
    pub fn eval(&self, x: &[f64], params: &BTreeMap<String, f64>) -> f64 {
        match self {
            ExprAst::Num(v) => *v,
            ExprAst::Var(i) => x[*i],
            ExprAst::Param(name) => params[name],
            ExprAst::Neg(a) => -a.eval(x, params),
            ExprAst::Bin(op, a, b) => {
                let (a, b) = (a.eval(x, params), b.eval(x, params));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            ExprAst::Call(f, a) => {
                let a = a.eval(x, params);
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Tanh => a.tanh(),
                    Func::Sqrt => a.sqrt(),
                    Func::Abs => a.abs(),
                }
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            ExprAst::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            ExprAst::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            ExprAst::Neg(_) => 3,
            ExprAst::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }
}

/// Prints with the minimum parentheses that re-parse to the same tree.
impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn paren(f: &mut fmt::Formatter<'_>, e: &ExprAst, need: bool) -> fmt::Result {
            if need {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            ExprAst::Num(v) => write!(f, "{v}"),
            ExprAst::Var(i) => write!(f, "x{}", i + 1),
            ExprAst::Param(name) => write!(f, "{name}"),
            ExprAst::Neg(a) => {
                write!(f, "-")?;
                paren(f, a, a.precedence() < 3)
            }
            ExprAst::Bin(op, a, b) => {
                let (p, sym) = match op {
                    BinOp::Add => (1, "+"),
                    BinOp::Sub => (1, "-"),
                    BinOp::Mul => (2, "*"),
                    BinOp::Div => (2, "/"),
                    BinOp::Pow => (4, "^"),
                };
                // Left child needs parens when looser; for non-commutative
                // ops the right child also needs them at equal precedence.
                // `^` is right-associative, so the asymmetry flips.
                let (lneed, rneed) = match op {
                    BinOp::Pow => (a.precedence() <= p, b.precedence() < p),
                    BinOp::Sub | BinOp::Div => (a.precedence() < p, b.precedence() <= p),
                    _ => (a.precedence() < p, b.precedence() < p),
                };
                paren(f, a, lneed)?;
                write!(f, " {sym} ")?;
                paren(f, b, rneed)
            }
            ExprAst::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn tokenize(src: &str, line: usize) -> Result<Vec<Spanned>, FieldError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // Exponent suffix: 1e-3, 2.5E+10.
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| FieldError::Syntax {
                line,
                col,
                token: text.clone(),
                message: "malformed number".into(),
            })?;
            out.push(Spanned {
                tok: Tok::Num(v),
                line,
                col,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Spanned {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line,
                col,
            });
        } else if "+-*/^".contains(c) {
            out.push(Spanned {
                tok: Tok::Op(c),
                line,
                col,
            });
            i += 1;
        } else if c == '(' {
            out.push(Spanned {
                tok: Tok::LParen,
                line,
                col,
            });
            i += 1;
        } else if c == ')' {
            out.push(Spanned {
                tok: Tok::RParen,
                line,
                col,
            });
            i += 1;
        } else {
            return Err(FieldError::Syntax {
                line,
                col,
                token: c.to_string(),
                message: "unexpected character".into(),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [Spanned],
    pos: usize,
    dim: usize,
    params: &'a BTreeMap<String, f64>,
    line: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn err_here(&self, token: &str, message: &str) -> FieldError {
        let (line, col) = self
            .toks
            .get(self.pos)
            .map(|s| (s.line, s.col))
            .unwrap_or((self.line, self.toks.last().map(|s| s.col + 1).unwrap_or(1)));
        FieldError::Syntax {
            line,
            col,
            token: token.into(),
            message: message.into(),
        }
    }

    fn resolve_ident(&self, name: &str, line: usize, col: usize) -> Result<ExprAst, FieldError> {
        let alias = match name {
            "x" => Some(0),
            "y" => Some(1),
            "z" => Some(2),
            _ => None,
        };
        if let Some(i) = alias {
            if i < self.dim {
                return Ok(ExprAst::Var(i));
            }
        }
        if let Some(rest) = name.strip_prefix('x') {
            if let Ok(i) = rest.parse::<usize>() {
                if i >= 1 && i <= self.dim {
                    return Ok(ExprAst::Var(i - 1));
                }
            }
        }
        if self.params.contains_key(name) {
            return Ok(ExprAst::Param(name.to_string()));
        }
        Err(FieldError::UnknownIdentifier {
            name: name.to_string(),
            line,
            col,
        })
    }

    fn parse_atom(&mut self) -> Result<ExprAst, FieldError> {
        let sp = match self.toks.get(self.pos) {
            Some(sp) => sp.clone(),
            None => return Err(self.err_here("<end>", "expected expression")),
        };
        match sp.tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(ExprAst::Num(v))
            }
            Tok::Op('-') => {
                self.pos += 1;
                let inner = self.parse_expr(3)?;
                Ok(ExprAst::Neg(Box::new(inner)))
            }
            Tok::LParen => {
                self.pos += 1;
                let inner = self.parse_expr(0)?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(self.err_here(")", "expected closing parenthesis")),
                }
            }
            Tok::Ident(ref name) => {
                self.pos += 1;
                if Func::from_name(name).is_some() {
                    let func = Func::from_name(name).unwrap();
                    match self.peek() {
                        Some(Tok::LParen) => {
                            self.pos += 1;
                            let arg = self.parse_expr(0)?;
                            match self.peek() {
                                Some(Tok::RParen) => {
                                    self.pos += 1;
                                    Ok(ExprAst::Call(func, Box::new(arg)))
                                }
                                _ => Err(self.err_here(")", "expected closing parenthesis")),
                            }
                        }
                        _ => Err(FieldError::ArityMismatch {
                            name: name.clone(),
                            line: sp.line,
                            col: sp.col,
                        }),
                    }
                } else {
                    self.resolve_ident(name, sp.line, sp.col)
                }
            }
            _ => Err(self.err_here(&format!("{:?}", sp.tok), "expected expression")),
        }
    }

    fn parse_expr(&mut self, min_prec: u8) -> Result<ExprAst, FieldError> {
        let mut lhs = self.parse_atom()?;
        loop {
            let (op, prec, right_assoc) = match self.peek() {
                Some(Tok::Op('+')) => (BinOp::Add, 1, false),
                Some(Tok::Op('-')) => (BinOp::Sub, 1, false),
                Some(Tok::Op('*')) => (BinOp::Mul, 2, false),
                Some(Tok::Op('/')) => (BinOp::Div, 2, false),
                Some(Tok::Op('^')) => (BinOp::Pow, 4, true),
                _ => break,
            };
            if prec < min_prec {
                break;
            }
            self.pos += 1;
            let next_min = if right_assoc { prec } else { prec + 1 };
            let rhs = self.parse_expr(next_min)?;
            lhs = ExprAst::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }
}

/// Parses a single component expression.
pub fn parse_component(
    src: &str,
    line: usize,
    dim: usize,
    params: &BTreeMap<String, f64>,
) -> Result<ExprAst, FieldError> {
    let toks = tokenize(src, line)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        dim,
        params,
        line,
    };
    let e = p.parse_expr(0)?;
    if p.pos != toks.len() {
        return Err(p.err_here("<token>", "trailing input after expression"));
    }
    Ok(e)
}

/// Splits a multi-component source on semicolons and newlines and parses
/// each component.
pub fn parse_components(
    src: &str,
    dim: usize,
    params: &BTreeMap<String, f64>,
) -> Result<Vec<ExprAst>, FieldError> {
    let mut out = Vec::new();
    for (ln, chunk) in src
        .lines()
        .flat_map(|l| l.split(';'))
        .filter(|s| !s.trim().is_empty())
        .enumerate()
    {
        out.push(parse_component(chunk, ln + 1, dim, params)?);
    }
    if out.len() != dim {
        return Err(FieldError::ComponentCount {
            expected: dim,
            got: out.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse1(src: &str) -> ExprAst {
        parse_component(src, 1, 1, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn precedence_pow_over_neg() {
        // -x^2 must read as -(x^2)
        let e = parse1("-x^2");
        assert_eq!(e.eval(&[3.0], &BTreeMap::new()), -9.0);
    }

    #[test]
    fn pow_right_associative() {
        let e = parse1("2^3^2");
        assert_eq!(e.eval(&[0.0], &BTreeMap::new()), 512.0);
    }

    #[test]
    fn mul_binds_over_add() {
        let e = parse1("1 + 2*3");
        assert_eq!(e.eval(&[0.0], &BTreeMap::new()), 7.0);
    }

    #[test]
    fn unknown_identifier_has_location() {
        let err = parse_component("x + bogus", 4, 1, &BTreeMap::new()).unwrap_err();
        match err {
            FieldError::UnknownIdentifier { name, line, col } => {
                assert_eq!(name, "bogus");
                assert_eq!(line, 4);
                assert_eq!(col, 5);
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn aliases_map_to_indices() {
        let params = BTreeMap::new();
        let e = parse_component("x + 2*y + 4*z", 1, 3, &params).unwrap();
        assert_eq!(e.eval(&[1.0, 10.0, 100.0], &params), 421.0);
        let e2 = parse_component("x1 + 2*x2 + 4*x3", 1, 3, &params).unwrap();
        assert_eq!(e2.eval(&[1.0, 10.0, 100.0], &params), 421.0);
    }

    #[test]
    fn print_parse_round_trip() {
        let params: BTreeMap<String, f64> = [("a".to_string(), 2.0)].into();
        for src in [
            "x - x^2",
            "-(x + 1)*(x - 1)",
            "a*x*(1 - x/a) - 0.5*x",
            "exp(-1.5*x) + sin(x)^2",
            "2^3^x",
            "1 - (2 - x)",
            "x/(2*x)",
            "-x^2 + abs(x)",
        ] {
            let e = parse_component(src, 1, 1, &params).unwrap();
            let printed = e.to_string();
            let back = parse_component(&printed, 1, 1, &params).unwrap();
            assert_eq!(back, e, "round trip failed for {src:?} -> {printed:?}");
        }
    }
}
