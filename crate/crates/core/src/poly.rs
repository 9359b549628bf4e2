//! Polynomial level functions for implicit ambient hypersurfaces.
//!
//! A small expression grammar — sums, products, integer powers of the
//! coordinates, and numeric constants — parsed into expanded monomial form
//! so that gradients and Hessians are exact.
//!
//! Variables are `x1..xN` for an N-dimensional ambient; `x, y, z, w` are
//! accepted as aliases for `x1..x4`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Monomial {
    coef: f64,
    exps: Vec<u32>,
}

/// A polynomial in `dim` variables, stored as a sum of monomials.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn constant(dim: usize, c: f64) -> Self {
        Polynomial {
            dim,
            terms: vec![Monomial {
                coef: c,
                exps: vec![0; dim],
            }],
        }
        .compacted()
    }

    pub fn variable(dim: usize, index: usize) -> Self {
        let mut exps = vec![0; dim];
        exps[index] = 1;
        Polynomial {
            dim,
            terms: vec![Monomial { coef: 1.0, exps }],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Parse `text` as a polynomial in `dim` variables.
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        let tokens = tokenize(text)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            dim,
        };
        let poly = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            let (tok, at) = &parser.tokens[parser.pos];
            return Err(Error::parse(
                format!("column {at}"),
                format!("unexpected trailing token `{tok}`"),
            ));
        }
        Ok(poly.compacted())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.terms
            .iter()
            .map(|m| {
                let mut v = m.coef;
                for (xi, &e) in x.iter().zip(&m.exps) {
                    v *= xi.powi(e as i32);
                }
                v
            })
            .sum()
    }

    pub fn differentiate(&self, var: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter(|m| m.exps[var] > 0)
            .map(|m| {
                let mut exps = m.exps.clone();
                let e = exps[var];
                exps[var] = e - 1;
                Monomial {
                    coef: m.coef * e as f64,
                    exps,
                }
            })
            .collect();
        Polynomial {
            dim: self.dim,
            terms,
        }
        .compacted()
    }

    pub fn gradient_at(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| self.differentiate(i).eval(x))
            .collect()
    }

    /// Row-major dim x dim Hessian.
    pub fn hessian_at(&self, x: &[f64]) -> Vec<f64> {
        let grads: Vec<Polynomial> = (0..self.dim).map(|i| self.differentiate(i)).collect();
        let mut h = vec![0.0; self.dim * self.dim];
        for i in 0..self.dim {
            for j in i..self.dim {
                let v = grads[i].differentiate(j).eval(x);
                h[i * self.dim + j] = v;
                h[j * self.dim + i] = v;
            }
        }
        h
    }

    fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let exps = a.exps.iter().zip(&b.exps).map(|(x, y)| x + y).collect();
                terms.push(Monomial {
                    coef: a.coef * b.coef,
                    exps,
                });
            }
        }
        Polynomial {
            dim: self.dim,
            terms,
        }
        .compacted()
    }

    fn add(&self, other: &Polynomial) -> Polynomial {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Polynomial {
            dim: self.dim,
            terms,
        }
        .compacted()
    }

    fn neg(&self) -> Polynomial {
        Polynomial {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .map(|m| Monomial {
                    coef: -m.coef,
                    exps: m.exps.clone(),
                })
                .collect(),
        }
    }

    fn powi(&self, e: u32) -> Polynomial {
        let mut out = Polynomial::constant(self.dim, 1.0);
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    fn compacted(mut self) -> Polynomial {
        self.terms.sort_by(|a, b| a.exps.cmp(&b.exps));
        let mut merged: Vec<Monomial> = Vec::with_capacity(self.terms.len());
        for t in self.terms {
            match merged.last_mut() {
                Some(last) if last.exps == t.exps => last.coef += t.coef,
                _ => merged.push(t),
            }
        }
        merged.retain(|m| m.coef != 0.0);
        if merged.is_empty() {
            merged.push(Monomial {
                coef: 0.0,
                exps: vec![0; self.dim],
            });
        }
        Polynomial {
            dim: self.dim,
            terms: merged,
        }
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for m in &self.terms {
            if !first {
                write!(f, " {} ", if m.coef < 0.0 { "-" } else { "+" })?;
            } else if m.coef < 0.0 {
                write!(f, "-")?;
            }
            first = false;
            let c = m.coef.abs();
            let has_vars = m.exps.iter().any(|&e| e > 0);
            if c != 1.0 || !has_vars {
                write!(f, "{c}")?;
                if has_vars {
                    write!(f, "*")?;
                }
            }
            let mut first_var = true;
            for (i, &e) in m.exps.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                if !first_var {
                    write!(f, "*")?;
                }
                first_var = false;
                write!(f, "x{}", i + 1)?;
                if e > 1 {
                    write!(f, "^{e}")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Number(v) => write!(f, "{v}"),
            Token::Ident(s) => write!(f, "{s}"),
            Token::Plus => write!(f, "+"),
            Token::Minus => write!(f, "-"),
            Token::Star => write!(f, "*"),
            Token::Caret => write!(f, "^"),
            Token::LParen => write!(f, "("),
            Token::RParen => write!(f, ")"),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                tokens.push((Token::Plus, col));
                i += 1;
            }
            '-' => {
                tokens.push((Token::Minus, col));
                i += 1;
            }
            '*' => {
                tokens.push((Token::Star, col));
                i += 1;
            }
            '^' => {
                tokens.push((Token::Caret, col));
                i += 1;
            }
            '(' => {
                tokens.push((Token::LParen, col));
                i += 1;
            }
            ')' => {
                tokens.push((Token::RParen, col));
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && i > start
                            && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
                {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                let v = s.parse::<f64>().map_err(|_| {
                    Error::parse(format!("column {col}"), format!("bad number `{s}`"))
                })?;
                tokens.push((Token::Number(v), col));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                tokens.push((Token::Ident(chars[start..i].iter().collect()), col));
            }
            other => {
                return Err(Error::parse(
                    format!("column {col}"),
                    format!("unexpected character `{other}`"),
                ))
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn bump(&mut self) -> Option<(Token, usize)> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Polynomial> {
        let mut acc = match self.peek() {
            Some(Token::Minus) => {
                self.bump();
                self.term()?.neg()
            }
            _ => self.term()?,
        };
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.bump();
                    acc = acc.add(&self.term()?);
                }
                Some(Token::Minus) => {
                    self.bump();
                    acc = acc.add(&self.term()?.neg());
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Polynomial> {
        let mut acc = self.factor()?;
        while matches!(self.peek(), Some(Token::Star)) {
            self.bump();
            acc = acc.mul(&self.factor()?);
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Polynomial> {
        let base = self.base()?;
        if matches!(self.peek(), Some(Token::Caret)) {
            self.bump();
            match self.bump() {
                Some((Token::Number(v), at)) => {
                    if v < 0.0 || v.fract() != 0.0 || v > 64.0 {
                        return Err(Error::parse(
                            format!("column {at}"),
                            format!("exponent must be a small nonnegative integer, got {v}"),
                        ));
                    }
                    Ok(base.powi(v as u32))
                }
                Some((tok, at)) => Err(Error::parse(
                    format!("column {at}"),
                    format!("expected integer exponent, got `{tok}`"),
                )),
                None => Err(Error::parse("end of input", "expected integer exponent")),
            }
        } else {
            Ok(base)
        }
    }

    fn base(&mut self) -> Result<Polynomial> {
        match self.bump() {
            Some((Token::Number(v), _)) => Ok(Polynomial::constant(self.dim, v)),
            Some((Token::Ident(name), at)) => {
                let idx = match name.as_str() {
                    "x" => Some(0),
                    "y" => Some(1),
                    "z" => Some(2),
                    "w" => Some(3),
                    s => s
                        .strip_prefix('x')
                        .and_then(|n| n.parse::<usize>().ok())
                        .and_then(|n| if n >= 1 { Some(n - 1) } else { None }),
                };
                match idx {
                    Some(i) if i < self.dim => Ok(Polynomial::variable(self.dim, i)),
                    Some(i) => Err(Error::parse(
                        format!("column {at}"),
                        format!(
                            "variable `{name}` (index {}) exceeds ambient dimension {}",
                            i + 1,
                            self.dim
                        ),
                    )),
                    None => Err(Error::parse(
                        format!("column {at}"),
                        format!("unknown identifier `{name}`"),
                    )),
                }
            }
            Some((Token::Minus, _)) => Ok(self.factor()?.neg()),
            Some((Token::LParen, at)) => {
                let inner = self.expr()?;
                match self.bump() {
                    Some((Token::RParen, _)) => Ok(inner),
                    _ => Err(Error::parse(
                        format!("column {at}"),
                        "unclosed parenthesis",
                    )),
                }
            }
            Some((tok, at)) => Err(Error::parse(
                format!("column {at}"),
                format!("unexpected token `{tok}`"),
            )),
            None => Err(Error::parse("end of input", "expected an expression")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_evaluates_unit_sphere() {
        let p = Polynomial::parse("x^2 + y^2 + z^2 - 1", 3).unwrap();
        assert!((p.eval(&[1.0, 0.0, 0.0])).abs() < 1e-15);
        assert!((p.eval(&[0.0, 2.0, 0.0]) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn numeric_variables_and_aliases_agree() {
        let a = Polynomial::parse("x1^2 + 2*x2 - x3*x4", 4).unwrap();
        let b = Polynomial::parse("x^2 + 2*y - z*w", 4).unwrap();
        let pt = [1.3, -0.7, 2.1, 0.4];
        assert!((a.eval(&pt) - b.eval(&pt)).abs() < 1e-14);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let p = Polynomial::parse("3*x^3 - x*y^2 + z^2 - 2", 3).unwrap();
        let x = [0.7, -1.2, 0.5];
        let g = p.gradient_at(&x);
        let h = p.hessian_at(&x);
        let eps = 1e-6;
        for i in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (p.eval(&xp) - p.eval(&xm)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-7, "grad component {i}");
            for j in 0..3 {
                let gp = p.gradient_at(&xp)[j];
                let gm = p.gradient_at(&xm)[j];
                let fd2 = (gp - gm) / (2.0 * eps);
                assert!((fd2 - h[i * 3 + j]).abs() < 1e-6, "hess {i}{j}");
            }
        }
    }

    #[test]
    fn rejects_unknown_identifier_with_position() {
        let err = Polynomial::parse("x^2 + foo", 3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("foo"), "{msg}");
        assert!(msg.contains("column 7"), "{msg}");
    }

    #[test]
    fn rejects_fractional_exponent() {
        assert!(Polynomial::parse("x^1.5", 3).is_err());
    }

    #[test]
    fn rejects_out_of_range_variable() {
        assert!(Polynomial::parse("w", 3).is_err());
        assert!(Polynomial::parse("x5", 4).is_err());
    }

    #[test]
    fn display_round_trips() {
        let p = Polynomial::parse("x^2+y^2+z^2+w^2-1", 4).unwrap();
        let q = Polynomial::parse(&p.to_string(), 4).unwrap();
        assert_eq!(p, q);
    }
}
