//! Arithmetic expressions over `x`, `y`, `t`.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?          // right-associative
//! atom    := number | name | func '(' sum ')' | '(' sum ')'
//! ```
//!
//! Names are `x`, `y`, `t`, the constants `PI` and `E`, and any parameters
//! supplied at parse time. Functions: sin cos tan exp log sqrt abs tanh.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Pow => a.powf(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
}

impl Func {
    pub const ALL: [Func; 8] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Abs,
        Func::Tanh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
        }
    }

    pub fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Abs => v.abs(),
            Func::Tanh => v.tanh(),
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(Var),
    /// A named constant or parameter, resolved at parse time.
    Named(String, f64),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        match self {
            Node::Num(v) | Node::Named(_, v) => *v,
            Node::Var(Var::X) => x,
            Node::Var(Var::Y) => y,
            Node::Var(Var::T) => t,
            Node::Neg(a) => -a.eval(x, y, t),
            Node::Bin(op, a, b) => op.apply(a.eval(x, y, t), b.eval(x, y, t)),
            Node::Call(f, a) => f.apply(a.eval(x, y, t)),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Node::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Node::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Node::Neg(_) => 3,
            Node::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }

    fn uses(&self, v: Var) -> bool {
        match self {
            Node::Var(w) => *w == v,
            Node::Num(_) | Node::Named(..) => false,
            Node::Neg(a) | Node::Call(_, a) => a.uses(v),
            Node::Bin(_, a, b) => a.uses(v) || b.uses(v),
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, n: &Node, paren: bool) -> fmt::Result {
    if paren {
        write!(f, "({n})")
    } else {
        write!(f, "{n}")
    }
}

/// Prints with the minimum parentheses that preserve the tree.
impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(v) => write!(f, "{v}"),
            Node::Var(Var::X) => f.write_str("x"),
            Node::Var(Var::Y) => f.write_str("y"),
            Node::Var(Var::T) => f.write_str("t"),
            Node::Named(name, _) => f.write_str(name),
            Node::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, a.precedence() < 3)
            }
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
            Node::Bin(BinOp::Pow, a, b) => {
                write_child(f, a, a.precedence() <= 4)?;
                f.write_str("^")?;
                write_child(f, b, b.precedence() < 3)
            }
            Node::Bin(op, a, b) => {
                let p = self.precedence();
                write_child(f, a, a.precedence() < p)?;
                write!(f, " {} ", op.symbol())?;
                write_child(f, b, b.precedence() <= p)
            }
        }
    }
}

/// A parsed expression together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    source: String,
}

impl Expression {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, &BTreeMap::new())
    }

    /// Parses with extra named constants.
    pub fn parse_with(text: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let tokens = tokenize(text)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            params,
            end: text.chars().count() + 1,
        };
        let root = p.sum()?;
        if let Some(tok) = p.tokens.get(p.pos) {
            return Err(Error::Expression {
                column: tok.column,
                message: format!("unexpected {}", tok.kind.describe()),
            });
        }
        Ok(Expression {
            root,
            source: text.to_string(),
        })
    }

    pub fn constant(v: f64) -> Self {
        Expression {
            root: Node::Num(v),
            source: v.to_string(),
        }
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        self.root.eval(x, y, t)
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn depends_on_time(&self) -> bool {
        self.root.uses(Var::T)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::Num(v) => format!("number {v}"),
            TokKind::Ident(s) => format!("identifier '{s}'"),
            TokKind::Op(c) => format!("operator '{c}'"),
            TokKind::LParen => "'('".into(),
            TokKind::RParen => "')'".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    column: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
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
            let s: String = chars[start..i].iter().collect();
            let v: f64 = s.parse().map_err(|_| Error::Expression {
                column,
                message: format!("malformed number '{s}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Expression {
                    column,
                    message: format!("number '{s}' out of range"),
                });
            }
            out.push(Token {
                kind: TokKind::Num(v),
                column,
            });
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                kind: TokKind::Ident(chars[start..i].iter().collect()),
                column,
            });
        } else {
            let kind = match c {
                '+' | '-' | '*' | '/' | '^' => TokKind::Op(c),
                '(' => TokKind::LParen,
                ')' => TokKind::RParen,
                _ => {
                    return Err(Error::Expression {
                        column,
                        message: format!("unexpected character '{c}'"),
                    })
                }
            };
            out.push(Token { kind, column });
            i += 1;
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    params: &'a BTreeMap<String, f64>,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&TokKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn column(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.column)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Expression {
            column: self.column(),
            message: message.into(),
        })
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek() {
            Some(TokKind::Op(c)) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn sum(&mut self) -> Result<Node> {
        let mut lhs = self.product()?;
        while let Some(c) = self.eat_op(&['+', '-']) {
            let rhs = self.product()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.eat_op(&['*', '/']) {
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat_op(&['-']).is_some() {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat_op(&['^']).is_some() {
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn expect_rparen(&mut self, opened: usize) -> Result<()> {
        match self.peek() {
            Some(TokKind::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => self.error(format!("expected ')' to close '(' at column {opened}")),
        }
    }

    fn atom(&mut self) -> Result<Node> {
        let column = self.column();
        let Some(kind) = self.peek().cloned() else {
            return self.error("unexpected end of expression");
        };
        self.pos += 1;
        match kind {
            TokKind::Num(v) => Ok(Node::Num(v)),
            TokKind::LParen => {
                let inner = self.sum()?;
                self.expect_rparen(column)?;
                Ok(inner)
            }
            TokKind::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    if self.peek() != Some(&TokKind::LParen) {
                        return self.error(format!("expected '(' after function '{name}'"));
                    }
                    let open = self.column();
                    self.pos += 1;
                    let arg = self.sum()?;
                    self.expect_rparen(open)?;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                match name.as_str() {
                    "x" => Ok(Node::Var(Var::X)),
                    "y" => Ok(Node::Var(Var::Y)),
                    "t" => Ok(Node::Var(Var::T)),
                    "PI" => Ok(Node::Named(name, std::f64::consts::PI)),
                    "E" => Ok(Node::Named(name, std::f64::consts::E)),
                    _ => match self.params.get(&name) {
                        Some(&v) => Ok(Node::Named(name, v)),
                        None => Err(Error::Expression {
                            column,
                            message: format!("unknown identifier '{name}'"),
                        }),
                    },
                }
            }
            other => Err(Error::Expression {
                column,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str) -> f64 {
        Expression::parse(s).unwrap().eval(0.0, 0.0, 0.0)
    }

    fn column_of(s: &str) -> usize {
        match Expression::parse(s) {
            Err(Error::Expression { column, .. }) => column,
            other => panic!("expected an expression error, got {other:?}"),
        }
    }

    #[test]
    fn basics() {
        assert_eq!(ev("0"), 0.0);
        let e = Expression::parse("sin(PI*x)").unwrap();
        assert!((e.eval(0.5, 0.0, 0.0) - 1.0).abs() < 1e-15);
        assert_eq!(ev("2^3^2"), 512.0);
    }

    #[test]
    fn precedence_table() {
        let cases = [
            ("1 + 2 * 3", 7.0),
            ("(1 + 2) * 3", 9.0),
            ("1 - 2 - 3", -4.0),
            ("1 - (2 - 3)", 2.0),
            ("8 / 4 / 2", 1.0),
            ("8 / (4 / 2)", 4.0),
            ("-2^2", -4.0),
            ("(-2)^2", 4.0),
            ("2^-1", 0.5),
            ("2 * -3", -6.0),
            ("--3", 3.0),
            ("-2 * 3 + 1", -5.0),
            ("2^3 * 2", 16.0),
            ("2 * 3^2", 18.0),
            ("2^2^3", 256.0),
            ("6 / 2 * 3", 9.0),
            ("1e2 + .5", 100.5),
            ("2.5E-1", 0.25),
            ("abs(-3) + sqrt(16)", 7.0),
        ];
        for (s, v) in cases {
            assert_eq!(ev(s), v, "{s}");
        }
    }

    #[test]
    fn functions_and_variables() {
        let e = Expression::parse("exp(log(x)) + tanh(0) + tan(0) + cos(y) * t").unwrap();
        assert!((e.eval(2.0, 0.0, 3.0) - 5.0).abs() < 1e-14);
        assert!(e.depends_on_time());
        assert!(!Expression::parse("x + E").unwrap().depends_on_time());
    }

    #[test]
    fn errors_carry_columns() {
        assert_eq!(column_of("1 + "), 5);
        assert_eq!(column_of("x + foo"), 5);
        assert_eq!(column_of("2 $ 3"), 3);
        assert_eq!(column_of("sin x"), 5);
        assert_eq!(column_of("(1 + 2"), 7);
        assert_eq!(column_of("1 2"), 3);
        assert_eq!(column_of(")"), 1);
        assert_eq!(column_of(""), 1);
        match Expression::parse("x + foo") {
            Err(e) => assert!(e.to_string().contains("unknown identifier 'foo'")),
            Ok(_) => unreachable!(),
        }
    }

    #[test]
    fn parameters_resolve() {
        let mut p = BTreeMap::new();
        p.insert("r0".to_string(), 2.0);
        let e = Expression::parse_with("x / r0", &p).unwrap();
        assert_eq!(e.eval(3.0, 0.0, 0.0), 1.5);
        assert_eq!(e.to_string(), "x / r0");
        assert!(Expression::parse("x / r0").is_err());
    }

    #[test]
    fn pretty_printing_is_minimal_and_stable() {
        let cases = [
            ("1+2*3", "1 + 2 * 3"),
            ("(1+2)*3", "(1 + 2) * 3"),
            ("1-(2-3)", "1 - (2 - 3)"),
            ("(1-2)-3", "1 - 2 - 3"),
            ("-(2^2)", "-2^2"),
            ("(-2)^2", "(-2)^2"),
            ("(2^3)^2", "(2^3)^2"),
            ("2^(3^2)", "2^3^2"),
            ("2^(-x)", "2^-x"),
            ("-(x+1)", "-(x + 1)"),
            ("sin((x))", "sin(x)"),
            ("0.1*PI", "0.1 * PI"),
        ];
        for (src, printed) in cases {
            let e = Expression::parse(src).unwrap();
            assert_eq!(e.to_string(), printed);
            let again = Expression::parse(&e.to_string()).unwrap();
            assert_eq!(again.root(), e.root());
        }
    }
}
