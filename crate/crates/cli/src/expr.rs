//! Arithmetic expressions over `x1..xn`: parsing, evaluation and symbolic
//! differentiation, plus a control-affine plant built from them.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;
use turnpike_core::model::ControlAffineSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
}

impl Func {
    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Tanh => v.tanh(),
        }
    }
}

/// Expression tree. Variables are zero-based: `x1` is `Var(0)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: expected one of {}", expected.join(", "))]
pub struct ParseError {
    pub offset: usize,
    pub expected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    /// Next token and its starting offset.
    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let Some(c) = rest.chars().next() else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == '.' {
            let bytes = rest.as_bytes();
            let mut end = 0;
            while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
                end += 1;
            }
            if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                let mut k = end + 1;
                if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                    k += 1;
                }
                if k < bytes.len() && bytes[k].is_ascii_digit() {
                    while k < bytes.len() && bytes[k].is_ascii_digit() {
                        k += 1;
                    }
                    end = k;
                }
            }
            let text = &rest[..end];
            let v: f64 = text.parse().map_err(|_| ParseError { offset: start, expected: vec!["number".into()] })?;
            self.pos += end;
            return Ok((Tok::Num(v), start));
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let end = rest.find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_')).unwrap_or(rest.len());
            self.pos += end;
            return Ok((Tok::Ident(rest[..end].to_string()), start));
        }
        if "+-*/^()".contains(c) {
            self.pos += 1;
            return Ok((Tok::Op(c), start));
        }
        Err(ParseError { offset: start, expected: operand_expected() })
    }
}

fn operand_expected() -> Vec<String> {
    ["number", "variable", "function", "(", "-"].iter().map(|s| s.to_string()).collect()
}

struct Parser<'a> {
    lex: Lexer<'a>,
    tok: Tok,
    at: usize,
}

impl<'a> Parser<'a> {
    fn bump(&mut self) -> Result<(), ParseError> {
        let (t, at) = self.lex.next()?;
        self.tok = t;
        self.at = at;
        Ok(())
    }

    fn fail<T>(&self, expected: &[&str]) -> Result<T, ParseError> {
        Err(ParseError { offset: self.at, expected: expected.iter().map(|s| s.to_string()).collect() })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.tok {
                Tok::Op('+') => {
                    self.bump()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Op('-') => {
                    self.bump()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.tok {
                Tok::Op('*') => {
                    self.bump()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Op('/') => {
                    self.bump()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.tok == Tok::Op('-') {
            self.bump()?;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.tok != Tok::Op('^') {
            return Ok(base);
        }
        self.bump()?;
        let at = self.at;
        let exponent = self.exponent()?;
        let v = exponent.eval(&[]);
        if exponent.max_var().is_some() || !v.is_finite() || v.fract() != 0.0 || v.abs() > i32::MAX as f64 {
            return Err(ParseError { offset: at, expected: vec!["integer exponent".into()] });
        }
        Ok(Expr::Pow(Box::new(base), v as i32))
    }

    // `^` is right-associative and binds tighter than unary minus on its
    // left, but the exponent itself may carry a sign.
    fn exponent(&mut self) -> Result<Expr, ParseError> {
        if self.tok == Tok::Op('-') {
            self.bump()?;
            return Ok(Expr::Neg(Box::new(self.exponent()?)));
        }
        self.power()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::Num(v))
            }
            Tok::Op('(') => {
                self.bump()?;
                let e = self.expr()?;
                if self.tok != Tok::Op(')') {
                    return self.fail(&[")", "operator"]);
                }
                self.bump()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(f) = Func::from_name(&name) {
                    self.bump()?;
                    if self.tok != Tok::Op('(') {
                        return self.fail(&["("]);
                    }
                    self.bump()?;
                    let arg = self.expr()?;
                    if self.tok != Tok::Op(')') {
                        return self.fail(&[")", "operator"]);
                    }
                    self.bump()?;
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                match name.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()) {
                    Some(k) if k >= 1 && !name[1..].starts_with('0') => {
                        self.bump()?;
                        Ok(Expr::Var(k - 1))
                    }
                    _ => self.fail(&["variable x1..xn", "sin", "cos", "exp", "tanh"]),
                }
            }
            _ => Err(ParseError { offset: self.at, expected: operand_expected() }),
        }
    }
}

/// Parses `source` under the usual precedence: `^` (right-associative,
/// integer exponents) over unary minus over `* /` over `+ −`.
pub fn parse_expr(source: &str) -> Result<Expr, ParseError> {
    let mut p = Parser { lex: Lexer { src: source, pos: 0 }, tok: Tok::End, at: 0 };
    p.bump()?;
    let e = p.expr()?;
    if p.tok != Tok::End {
        return p.fail(&["operator", "end of input"]);
    }
    Ok(e)
}

fn num(v: f64) -> Expr {
    Expr::Num(v)
}

fn is_num(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Num(x) if *x == v)
}

// Smart constructors fold constants and drop neutral elements so derivative
// trees stay small.
fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x + y),
        _ if is_num(&a, 0.0) => b,
        _ if is_num(&b, 0.0) => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x - y),
        _ if is_num(&b, 0.0) => a,
        _ if is_num(&a, 0.0) => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x * y),
        _ if is_num(&a, 0.0) || is_num(&b, 0.0) => num(0.0),
        _ if is_num(&a, 1.0) => b,
        _ if is_num(&b, 1.0) => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) if *y != 0.0 => num(x / y),
        _ if is_num(&a, 0.0) => num(0.0),
        _ if is_num(&b, 1.0) => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(x) => num(-x),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn pow(a: Expr, k: i32) -> Expr {
    match (&a, k) {
        (_, 0) => num(1.0),
        (_, 1) => a,
        (Expr::Num(x), _) => num(x.powi(k)),
        _ => Expr::Pow(Box::new(a), k),
    }
}

impl Expr {
    /// Evaluates at `x`; variables beyond `x.len()` read as zero.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(k) => x.get(*k).copied().unwrap_or(0.0),
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, k) => a.eval(x).powi(*k),
            Expr::Call(f, a) => f.apply(a.eval(x)),
        }
    }

    /// Symbolic `∂/∂x_{var+1}`.
    pub fn diff(&self, var: usize) -> Expr {
        match self {
            Expr::Num(_) => num(0.0),
            Expr::Var(k) => num(if *k == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.diff(var)),
            Expr::Add(a, b) => add(a.diff(var), b.diff(var)),
            Expr::Sub(a, b) => sub(a.diff(var), b.diff(var)),
            Expr::Mul(a, b) => add(mul(a.diff(var), (**b).clone()), mul((**a).clone(), b.diff(var))),
            Expr::Div(a, b) => div(
                sub(mul(a.diff(var), (**b).clone()), mul((**a).clone(), b.diff(var))),
                pow((**b).clone(), 2),
            ),
            Expr::Pow(a, k) => mul(mul(num(*k as f64), pow((**a).clone(), k - 1)), a.diff(var)),
            Expr::Call(f, a) => {
                let inner = (**a).clone();
                let outer = match f {
                    Func::Sin => Expr::Call(Func::Cos, Box::new(inner)),
                    Func::Cos => neg(Expr::Call(Func::Sin, Box::new(inner))),
                    Func::Exp => Expr::Call(Func::Exp, Box::new(inner)),
                    Func::Tanh => sub(num(1.0), pow(Expr::Call(Func::Tanh, Box::new(inner)), 2)),
                };
                mul(outer, a.diff(var))
            }
        }
    }

    /// Largest variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(k) => Some(*k),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => match (a.max_var(), b.max_var()) {
                (Some(i), Some(j)) => Some(i.max(j)),
                (i, j) => i.or(j),
            },
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(k) => write!(f, "x{}", k + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, k) => write!(f, "({a}^{k})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Error)]
pub enum SystemExprError {
    #[error("f[{index}]: {source}")]
    ParseF { index: usize, source: ParseError },
    #[error("g[{row}][{col}]: {source}")]
    ParseG { row: usize, col: usize, source: ParseError },
    #[error("{0}")]
    Shape(String),
    #[error("variable x{used} appears but the state has dimension {n}")]
    UnknownVariable { used: usize, n: usize },
    #[error("f(0) = {0:?} is not zero")]
    NonzeroDriftAtOrigin(Vec<f64>),
}

/// `ẋ = f(x) + g(x)u` with every entry given as an expression. First and
/// second derivatives are formed symbolically once.
#[derive(Debug, Clone)]
pub struct ExprSystem {
    name: String,
    n: usize,
    m: usize,
    f: Vec<Expr>,
    /// Row-major `n × m`.
    g: Vec<Expr>,
    df: Vec<Expr>,
    dg: Vec<Expr>,
    d2f: Vec<Expr>,
    d2g: Vec<Expr>,
}

impl ExprSystem {
    pub fn parse(name: &str, n: usize, m: usize, f: &[String], g: &[Vec<String>]) -> Result<Self, SystemExprError> {
        if n == 0 || m == 0 {
            return Err(SystemExprError::Shape("n and m must be positive".into()));
        }
        if f.len() != n {
            return Err(SystemExprError::Shape(format!("f has {} entries, expected n = {n}", f.len())));
        }
        if g.len() != n || g.iter().any(|row| row.len() != m) {
            return Err(SystemExprError::Shape(format!("g must be {n} rows of {m} entries")));
        }
        let f: Vec<Expr> = f
            .iter()
            .enumerate()
            .map(|(index, s)| parse_expr(s).map_err(|source| SystemExprError::ParseF { index, source }))
            .collect::<Result<_, _>>()?;
        let mut gx = Vec::with_capacity(n * m);
        for (row, entries) in g.iter().enumerate() {
            for (col, s) in entries.iter().enumerate() {
                gx.push(parse_expr(s).map_err(|source| SystemExprError::ParseG { row, col, source })?);
            }
        }
        if let Some(k) = f.iter().chain(&gx).filter_map(Expr::max_var).max() {
            if k >= n {
                return Err(SystemExprError::UnknownVariable { used: k + 1, n });
            }
        }
        let origin = vec![0.0; n];
        let f0: Vec<f64> = f.iter().map(|e| e.eval(&origin)).collect();
        if f0.iter().any(|v| v.abs() > 1e-12) {
            return Err(SystemExprError::NonzeroDriftAtOrigin(f0));
        }
        let grad = |es: &[Expr]| -> Vec<Expr> { es.iter().flat_map(|e| (0..n).map(move |j| e.diff(j))).collect() };
        let df = grad(&f);
        let dg = grad(&gx);
        let d2f = grad(&df);
        let d2g = grad(&dg);
        Ok(Self { name: name.to_string(), n, m, f, g: gx, df, dg, d2f, d2g })
    }

    fn eval_all(es: &[Expr], x: &DVector<f64>) -> Vec<f64> {
        es.iter().map(|e| e.eval(x.as_slice())).collect()
    }
}

impl ControlAffineSystem<f64> for ExprSystem {
    fn name(&self) -> &str {
        &self.name
    }
    fn state_dim(&self) -> usize {
        self.n
    }
    fn input_dim(&self) -> usize {
        self.m
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(Self::eval_all(&self.f, x))
    }
    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.m, &Self::eval_all(&self.g, x))
    }
    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &Self::eval_all(&self.df, x))
    }
    fn input_jacobians(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let (n, m) = (self.n, self.m);
        let v = Self::eval_all(&self.dg, x);
        // dg is laid out as [(i, k), j] -> v[(i·m + k)·n + j].
        (0..m).map(|k| DMatrix::from_fn(n, n, |i, j| v[(i * m + k) * n + j])).collect()
    }
    fn coupling_hessian(&self, x: &DVector<f64>, p: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (n, m) = (self.n, self.m);
        let d2f = Self::eval_all(&self.d2f, x);
        let g = Self::eval_all(&self.g, x);
        let dg = Self::eval_all(&self.dg, x);
        let d2g = Self::eval_all(&self.d2g, x);
        let mut h = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    s += p[i] * d2f[(i * n + a) * n + b];
                }
                // −½|gᵀp|²: with v_k = Σ_i g_ik p_i the Hessian is
                // −Σ_k (∂_a v_k ∂_b v_k + v_k ∂_ab v_k).
                for k in 0..m {
                    let (mut v, mut va, mut vb, mut vab) = (0.0, 0.0, 0.0, 0.0);
                    for i in 0..n {
                        let e = i * m + k;
                        v += g[e] * p[i];
                        va += dg[e * n + a] * p[i];
                        vb += dg[e * n + b] * p[i];
                        vab += d2g[(e * n + a) * n + b] * p[i];
                    }
                    s -= va * vb + v * vab;
                }
                h[(a, b)] = s;
            }
        }
        Some(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(src: &str, x: &[f64]) -> f64 {
        parse_expr(src).unwrap().eval(x)
    }

    #[test]
    fn byrnes_drift_and_derivative() {
        let e = parse_expr("-x1 + x1^2 * x2").unwrap();
        assert!((e.eval(&[1.0, 0.2]) + 0.8).abs() < 1e-15);
        let d = e.diff(0);
        for (x1, x2) in [(1.0, 0.2), (-0.3, 2.0), (0.0, 0.0)] {
            assert!((d.eval(&[x1, x2]) - (-1.0 + 2.0 * x1 * x2)).abs() < 1e-14);
        }
    }

    #[test]
    fn dangling_operator_reports_offset() {
        let err = parse_expr("x1 +").unwrap_err();
        assert_eq!(err.offset, 4);
        assert!(err.expected.contains(&"variable".to_string()));
    }

    #[test]
    fn exp_chain_rule() {
        let e = parse_expr("exp(-x1)*x2").unwrap();
        assert_eq!(e.eval(&[0.0, 3.0]), 3.0);
        assert_eq!(e.diff(0).eval(&[0.0, 3.0]), -3.0);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(at("2^3^2", &[]), 512.0);
        assert_eq!(at("-2^2", &[]), -4.0);
        assert_eq!(at("2^-1", &[]), 0.5);
        assert_eq!(at("8/4/2", &[]), 1.0);
        assert_eq!(at("1 - 2 - 3", &[]), -4.0);
        assert_eq!(at("2 * (3 + 4)", &[]), 14.0);
        assert_eq!(at("1.5e1 + .5", &[]), 15.5);
        assert_eq!(at("tanh(0) + cos(0)", &[]), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(parse_expr("x1 ^ 0.5").unwrap_err().offset, 5);
        assert_eq!(parse_expr("x1 ^ x2").unwrap_err().expected, vec!["integer exponent".to_string()]);
        assert_eq!(parse_expr("(x1").unwrap_err().offset, 3);
        assert_eq!(parse_expr("y + 1").unwrap_err().offset, 0);
        assert_eq!(parse_expr("x0").unwrap_err().offset, 0);
        assert_eq!(parse_expr("x1 $").unwrap_err().offset, 3);
        assert_eq!(parse_expr("x1 x2").unwrap_err().offset, 3);
        assert_eq!(parse_expr("").unwrap_err().offset, 0);
        assert_eq!(parse_expr("sin x1").unwrap_err().offset, 4);
    }

    #[test]
    fn derivatives_match_differences() {
        let srcs = ["sin(x1*x2) / (2 + x1^2)", "tanh(x2)^3 - exp(x1 - x2)", "cos(x1)^-2 + x1*x2*x2"];
        let pt = [0.4, -0.7];
        for s in srcs {
            let e = parse_expr(s).unwrap();
            for j in 0..2 {
                let h = 1e-6;
                let mut a = pt;
                let mut b = pt;
                a[j] += h;
                b[j] -= h;
                let fd = (e.eval(&a) - e.eval(&b)) / (2.0 * h);
                assert!((e.diff(j).eval(&pt) - fd).abs() < 1e-7, "{s} d/dx{}", j + 1);
            }
        }
    }

    #[test]
    fn system_checks_origin_and_variables() {
        let g = vec![vec!["1".to_string()]];
        assert!(matches!(
            ExprSystem::parse("s", 1, 1, &["x1 + 1".into()], &g),
            Err(SystemExprError::NonzeroDriftAtOrigin(_))
        ));
        assert!(matches!(
            ExprSystem::parse("s", 1, 1, &["x2".into()], &g),
            Err(SystemExprError::UnknownVariable { used: 2, n: 1 })
        ));
        assert!(ExprSystem::parse("s", 1, 1, &["-x1 + x1^2".into()], &g).is_ok());
    }

    #[test]
    fn expression_plant_validates() {
        let sys = ExprSystem::parse(
            "pend",
            2,
            1,
            &["x2".into(), "-sin(x1) - 0.1*x2".into()],
            &[vec!["0".into()], vec!["1 + 0.5*cos(x1)".into()]],
        )
        .unwrap();
        turnpike_core::model::validate_system(&sys).unwrap();
        // Hessian of the coupling term against differences of its gradient.
        let x = DVector::from_vec(vec![0.3, -0.4]);
        let p = DVector::from_vec(vec![0.7, 1.1]);
        let h = sys.coupling_hessian(&x, &p).unwrap();
        let grad = |x: &DVector<f64>| {
            let gp = sys.input_matrix(x).transpose() * &p;
            let mut out = sys.drift_jacobian(x).transpose() * &p;
            for (k, dgk) in sys.input_jacobians(x).iter().enumerate() {
                out -= dgk.transpose() * &p * gp[k];
            }
            out
        };
        for b in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[b] += 1e-6;
            xm[b] -= 1e-6;
            let col = (grad(&xp) - grad(&xm)) / 2e-6;
            for a in 0..2 {
                assert!((h[(a, b)] - col[a]).abs() < 1e-6);
            }
        }
    }
}
