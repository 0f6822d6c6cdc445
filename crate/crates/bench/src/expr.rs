//! Arithmetic expressions over `x1..xn` with forward-mode gradients.
//!
//! ```text
//! expr    = term , { ("+" | "-") , term } ;
//! term    = unary , { ("*" | "/") , unary } ;
//! unary   = ("-" | "+") , unary | power ;
//! power   = primary , [ "^" , unary ] ;
//! primary = number | "pi" | variable | func , "(" , expr , ")" | "(" , expr , ")" ;
//! ```

use std::fmt;

use nalgebra::DVector;

/// A parse error located by 1-based line and column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}, column {}: {}",
            self.line, self.column, self.message
        )
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Sqrt,
    Log,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "log" => Func::Log,
            _ => return None,
        })
    }

    fn apply(self, a: f64) -> (f64, f64) {
        match self {
            Func::Sin => (a.sin(), a.cos()),
            Func::Cos => (a.cos(), -a.sin()),
            Func::Exp => {
                let e = a.exp();
                (e, e)
            }
            Func::Abs => (
                a.abs(),
                if a > 0.0 {
                    1.0
                } else if a < 0.0 {
                    -1.0
                } else {
                    0.0
                },
            ),
            Func::Sqrt => {
                let s = a.sqrt();
                (s, 0.5 / s)
            }
            Func::Log => (a.ln(), 1.0 / a),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based variable index.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

fn integer_exponent(b: f64) -> Option<i32> {
    (b.fract() == 0.0 && b.abs() < 1e9).then_some(b as i32)
}

fn pow_value(a: f64, b: f64) -> f64 {
    match integer_exponent(b) {
        Some(k) => a.powi(k),
        None => a.powf(b),
    }
}

impl Expr {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.value(x),
            Expr::Add(a, b) => a.value(x) + b.value(x),
            Expr::Sub(a, b) => a.value(x) - b.value(x),
            Expr::Mul(a, b) => a.value(x) * b.value(x),
            Expr::Div(a, b) => a.value(x) / b.value(x),
            Expr::Pow(a, b) => pow_value(a.value(x), b.value(x)),
            Expr::Call(f, a) => f.apply(a.value(x)).0,
        }
    }

    /// Value and gradient with respect to all `x.len()` variables.
    pub fn value_gradient(&self, x: &[f64]) -> (f64, DVector<f64>) {
        match self {
            Expr::Const(c) => (*c, DVector::zeros(x.len())),
            Expr::Var(i) => {
                let mut g = DVector::zeros(x.len());
                g[*i] = 1.0;
                (x[*i], g)
            }
            Expr::Neg(a) => {
                let (v, g) = a.value_gradient(x);
                (-v, -g)
            }
            Expr::Add(a, b) => {
                let (va, ga) = a.value_gradient(x);
                let (vb, gb) = b.value_gradient(x);
                (va + vb, ga + gb)
            }
            Expr::Sub(a, b) => {
                let (va, ga) = a.value_gradient(x);
                let (vb, gb) = b.value_gradient(x);
                (va - vb, ga - gb)
            }
            Expr::Mul(a, b) => {
                let (va, ga) = a.value_gradient(x);
                let (vb, gb) = b.value_gradient(x);
                (va * vb, ga * vb + gb * va)
            }
            Expr::Div(a, b) => {
                let (va, ga) = a.value_gradient(x);
                let (vb, gb) = b.value_gradient(x);
                (va / vb, (ga * vb - gb * va) / (vb * vb))
            }
            Expr::Pow(a, b) => {
                let (va, ga) = a.value_gradient(x);
                let (vb, gb) = b.value_gradient(x);
                let v = pow_value(va, vb);
                let mut g = match integer_exponent(vb) {
                    Some(0) => DVector::zeros(x.len()),
                    Some(k) => ga * (vb * va.powi(k - 1)),
                    None => ga * (vb * va.powf(vb - 1.0)),
                };
                if gb.iter().any(|&d| d != 0.0) {
                    g += gb * (v * va.ln());
                }
                (v, g)
            }
            Expr::Call(f, a) => {
                let (va, ga) = a.value_gradient(x);
                let (v, d) = f.apply(va);
                (v, ga * d)
            }
        }
    }

    /// Largest variable index used, plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(a) | Expr::Call(_, a) => a.arity(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.arity().max(b.arity()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line: usize,
    col0: usize,
}

impl Lexer {
    fn new(src: &str, line: usize, col0: usize) -> Result<Self, ParseError> {
        let chars: Vec<char> = src.chars().collect();
        let mut toks = Vec::new();
        let mut i = 0;
        let err = |i: usize, m: String| ParseError {
            line,
            column: col0 + i,
            message: m,
        };
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() || c == '.' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        while j < chars.len() && chars[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v: f64 = text
                    .parse()
                    .map_err(|_| err(start, format!("malformed number `{text}`")))?;
                toks.push((Tok::Num(v), start));
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push((Tok::Ident(chars[start..i].iter().collect()), start));
            } else if "+-*/^()".contains(c) {
                toks.push((Tok::Op(c), i));
                i += 1;
            } else {
                return Err(err(i, format!("unexpected character `{c}`")));
            }
        }
        toks.push((Tok::End, chars.len()));
        Ok(Self {
            toks,
            pos: 0,
            line,
            col0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn next(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, offset: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            column: self.col0 + offset,
            message: message.into(),
        }
    }
}

struct Parser {
    lex: Lexer,
    n: usize,
}

impl Parser {
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ ('+' | '-')) = *self.lex.peek() {
            self.lex.next();
            let rhs = self.term()?;
            lhs = if c == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ ('*' | '/')) = *self.lex.peek() {
            self.lex.next();
            let rhs = self.unary()?;
            lhs = if c == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match *self.lex.peek() {
            Tok::Op('-') => {
                self.lex.next();
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Op('+') => {
                self.lex.next();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.lex.peek() == Tok::Op('^') {
            self.lex.next();
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn expect_close(&mut self, open_at: usize) -> Result<(), ParseError> {
        match self.lex.next() {
            (Tok::Op(')'), _) => Ok(()),
            (_, at) => Err(self.lex.error_at(
                at,
                format!(
                    "expected `)` to close `(` at column {}",
                    self.lex.col0 + open_at
                ),
            )),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let (tok, at) = self.lex.next();
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Op('(') => {
                let e = self.expr()?;
                self.expect_close(at)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if name == "pi" {
                    return Ok(Expr::Const(std::f64::consts::PI));
                }
                if let Some(f) = Func::from_name(&name) {
                    match self.lex.next() {
                        (Tok::Op('('), open) => {
                            let arg = self.expr()?;
                            self.expect_close(open)?;
                            return Ok(Expr::Call(f, Box::new(arg)));
                        }
                        (_, a) => {
                            return Err(self
                                .lex
                                .error_at(a, format!("expected `(` after `{name}`")))
                        }
                    }
                }
                if let Some(idx) = name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                    if idx == 0 || idx > self.n {
                        return Err(self.lex.error_at(
                            at,
                            format!("variable `{name}` out of range x1..x{}", self.n),
                        ));
                    }
                    return Ok(Expr::Var(idx - 1));
                }
                Err(self
                    .lex
                    .error_at(at, format!("unknown identifier `{name}`")))
            }
            Tok::End => Err(self.lex.error_at(at, "unexpected end of expression")),
            Tok::Op(c) => Err(self.lex.error_at(at, format!("unexpected `{c}`"))),
        }
    }
}

/// Parses `src` as an expression in the variables `x1..xn`. `line` and
/// `column` locate the first character of `src` for error messages.
pub fn parse_expr_at(src: &str, n: usize, line: usize, column: usize) -> Result<Expr, ParseError> {
    let lex = Lexer::new(src, line, column)?;
    let mut p = Parser { lex, n };
    let e = p.expr()?;
    match p.lex.next() {
        (Tok::End, _) => Ok(e),
        (t, at) => Err(p
            .lex
            .error_at(at, format!("unexpected trailing input {t:?}"))),
    }
}

pub fn parse_expr(src: &str, n: usize) -> Result<Expr, ParseError> {
    parse_expr_at(src, n, 1, 1)
}
