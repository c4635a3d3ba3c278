//! Scalar coefficient expressions in the variables `x`, `y`, `t`, `u`.
//!
//! The grammar is deliberately small:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          (right associative)
//! primary := number | variable | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `sin cos exp log abs sqrt tanh` (one argument) and `min max`
//! (two arguments). There are no user-defined names.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("function `{name}` at position {pos} takes {expected} argument(s), got {found}")]
    Arity {
        pos: usize,
        name: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} in `{subexpr}`")]
pub struct EvalError {
    pub kind: EvalErrorKind,
    /// Printed form of the offending subexpression.
    pub subexpr: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalErrorKind {
    DivisionByZero,
    LogOfNonPositive,
    SqrtOfNegative,
    InvalidPower,
}

impl fmt::Display for EvalErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EvalErrorKind::DivisionByZero => "division by zero",
            EvalErrorKind::LogOfNonPositive => "log of non-positive value",
            EvalErrorKind::SqrtOfNegative => "square root of negative value",
            EvalErrorKind::InvalidPower => "power of negative base with non-integer exponent",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
    T,
    U,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
            Var::T => "t",
            Var::U => "u",
        }
    }
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
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Abs,
    Sqrt,
    Tanh,
    Min,
    Max,
}

impl Func {
    pub const ALL: [Func; 9] = [
        Func::Sin,
        Func::Cos,
        Func::Exp,
        Func::Log,
        Func::Abs,
        Func::Sqrt,
        Func::Tanh,
        Func::Min,
        Func::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == name)
    }
}

/// Expression tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Var),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// Evaluation point. `y` is ignored by expressions that do not reference it.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Env {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub u: f64,
}

impl Env {
    pub fn new(x: f64, y: f64, t: f64, u: f64) -> Self {
        Env { x, y, t, u }
    }

    pub fn with_u(self, u: f64) -> Self {
        Env { u, ..self }
    }
}

/// A parsed, immutable coefficient expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
}

impl Expression {
    pub fn from_node(root: Node) -> Self {
        Expression { root }
    }

    pub fn constant(value: f64) -> Self {
        Expression {
            root: Node::Const(value),
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn references(&self, var: Var) -> bool {
        fn walk(n: &Node, var: Var) -> bool {
            match n {
                Node::Const(_) => false,
                Node::Var(v) => *v == var,
                Node::Neg(a) => walk(a, var),
                Node::Binary(_, a, b) => walk(a, var) || walk(b, var),
                Node::Call(_, args) => args.iter().any(|a| walk(a, var)),
            }
        }
        walk(&self.root, var)
    }

    /// `Some(c)` when the tree is a bare literal.
    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    pub fn evaluate(&self, env: &Env) -> Result<f64, EvalError> {
        eval_node(&self.root, env)
    }

    /// Centered difference approximation of the derivative in `u`.
    pub fn partial_u(&self, env: &Env, h: f64) -> Result<f64, EvalError> {
        debug_assert!(h > 0.0);
        let up = self.evaluate(&env.with_u(env.u + h))?;
        let dn = self.evaluate(&env.with_u(env.u - h))?;
        Ok((up - dn) / (2.0 * h))
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

impl FromStr for Expression {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expression(s)
    }
}

/// Fully parenthesized printing; re-parsing yields the same tree for any tree
/// the parser can produce.
impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) if *c < 0.0 => write!(f, "(-{})", -c),
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(v) => f.write_str(v.name()),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

fn fail(kind: EvalErrorKind, node: &Node) -> EvalError {
    EvalError {
        kind,
        subexpr: node.to_string(),
    }
}

fn eval_node(node: &Node, env: &Env) -> Result<f64, EvalError> {
    Ok(match node {
        Node::Const(c) => *c,
        Node::Var(v) => match v {
            Var::X => env.x,
            Var::Y => env.y,
            Var::T => env.t,
            Var::U => env.u,
        },
        Node::Neg(a) => -eval_node(a, env)?,
        Node::Binary(op, a, b) => {
            let l = eval_node(a, env)?;
            let r = eval_node(b, env)?;
            match op {
                BinOp::Add => l + r,
                BinOp::Sub => l - r,
                BinOp::Mul => l * r,
                BinOp::Div => {
                    if r == 0.0 {
                        return Err(fail(EvalErrorKind::DivisionByZero, node));
                    }
                    l / r
                }
                BinOp::Pow => {
                    let v = l.powf(r);
                    if v.is_nan() && !l.is_nan() && !r.is_nan() {
                        return Err(fail(EvalErrorKind::InvalidPower, node));
                    }
                    v
                }
            }
        }
        Node::Call(func, args) => {
            let a = eval_node(&args[0], env)?;
            match func {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Log => {
                    if a <= 0.0 {
                        return Err(fail(EvalErrorKind::LogOfNonPositive, node));
                    }
                    a.ln()
                }
                Func::Abs => a.abs(),
                Func::Sqrt => {
                    if a < 0.0 {
                        return Err(fail(EvalErrorKind::SqrtOfNegative, node));
                    }
                    a.sqrt()
                }
                Func::Tanh => a.tanh(),
                Func::Min => a.min(eval_node(&args[1], env)?),
                Func::Max => a.max(eval_node(&args[1], env)?),
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
}

impl Lexer {
    fn tokenize(src: &str) -> Result<Lexer, ParseError> {
        let bytes = src.as_bytes();
        let mut toks = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_ascii_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            if c.is_ascii_digit() || c == '.' {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // optional exponent, only when followed by digits
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
                let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    pos: start,
                    msg: format!("malformed number `{text}`"),
                })?;
                toks.push((Tok::Num(value), start));
            } else if c.is_ascii_alphabetic() || c == '_' {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                toks.push((Tok::Ident(src[start..i].to_string()), start));
            } else {
                let tok = match c {
                    '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    _ => {
                        return Err(ParseError::Syntax {
                            pos: start,
                            msg: format!("unexpected character `{c}`"),
                        })
                    }
                };
                toks.push((tok, start));
                i += c.len_utf8();
            }
        }
        toks.push((Tok::End, src.len()));
        Ok(Lexer { toks })
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl Parser {
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

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(ParseError::Syntax {
                pos: self.pos(),
                msg: format!("expected {what}"),
            })
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            let inner = self.unary()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exp = self.unary()?;
            return Ok(Node::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Num(v) => Ok(Node::Const(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let var = match name.as_str() {
                    "x" => Some(Var::X),
                    "y" => Some(Var::Y),
                    "t" => Some(Var::T),
                    "u" => Some(Var::U),
                    _ => None,
                };
                if let Some(v) = var {
                    return Ok(Node::Var(v));
                }
                let func = Func::from_name(&name)
                    .ok_or(ParseError::UnknownIdentifier { pos, name: name.clone() })?;
                self.expect(Tok::LParen, "`(` after function name")?;
                let mut args = vec![self.expr()?];
                while *self.peek() == Tok::Comma {
                    self.bump();
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen, "`)`")?;
                if args.len() != func.arity() {
                    return Err(ParseError::Arity {
                        pos,
                        name,
                        expected: func.arity(),
                        found: args.len(),
                    });
                }
                Ok(Node::Call(func, args))
            }
            Tok::End => Err(ParseError::Syntax {
                pos,
                msg: "unexpected end of input".into(),
            }),
            other => Err(ParseError::Syntax {
                pos,
                msg: format!("unexpected token {other:?}"),
            }),
        }
    }
}

pub fn parse_expression(source: &str) -> Result<Expression, ParseError> {
    let lexer = Lexer::tokenize(source)?;
    let mut p = Parser {
        toks: lexer.toks,
        at: 0,
    };
    let root = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(ParseError::Syntax {
            pos: p.pos(),
            msg: "trailing input".into(),
        });
    }
    Ok(Expression { root })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str, env: Env) -> f64 {
        parse_expression(src).unwrap().evaluate(&env).unwrap()
    }

    #[test]
    fn literal() {
        let e = parse_expression("1").unwrap();
        assert_eq!(e.root(), &Node::Const(1.0));
    }

    #[test]
    fn linear_source_tree() {
        let e = parse_expression("1 - 0.5*u").unwrap();
        let expected = Node::Binary(
            BinOp::Sub,
            Box::new(Node::Const(1.0)),
            Box::new(Node::Binary(
                BinOp::Mul,
                Box::new(Node::Const(0.5)),
                Box::new(Node::Var(Var::U)),
            )),
        );
        assert_eq!(e.root(), &expected);
        assert_eq!(e.evaluate(&Env::new(0.0, 0.0, 0.0, 2.0)).unwrap(), 0.0);
    }

    #[test]
    fn functions_and_power() {
        let v = eval("exp(-x^2) + min(t, 1)", Env::new(0.0, 0.0, 2.0, 0.0));
        assert_eq!(v, 2.0);
        assert_eq!(eval("u", Env::new(0.0, 0.0, 0.0, 3.5)), 3.5);
        assert_eq!(eval("x*t", Env::new(2.0, 0.0, 0.25, 0.0)), 0.5);
        assert_eq!(eval("abs(x) - 1", Env::new(-0.25, 0.0, 0.0, 0.0)), -0.75);
    }

    #[test]
    fn precedence_and_associativity() {
        let env = Env::default();
        assert_eq!(eval("2^3^2", env), 512.0);
        assert_eq!(eval("-2^2", env), -4.0);
        assert_eq!(eval("2*3+4", env), 10.0);
        assert_eq!(eval("2+3*4", env), 14.0);
        assert_eq!(eval("8/4/2", env), 1.0);
        assert_eq!(eval("1-2-3", env), -4.0);
        assert_eq!(eval("2^-1", env), 0.5);
        assert_eq!(eval("1.5e2 + 1E-1", env), 150.1);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_expression("1 + "),
            Err(ParseError::Syntax { pos: 4, .. })
        ));
        assert!(matches!(
            parse_expression("foo(1)"),
            Err(ParseError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            parse_expression("min(1)"),
            Err(ParseError::Arity { expected: 2, found: 1, .. })
        ));
        assert!(matches!(
            parse_expression("(1"),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse_expression("1 2"),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(parse_expression(""), Err(ParseError::Syntax { .. })));
        assert!(matches!(
            parse_expression("1 $ 2"),
            Err(ParseError::Syntax { pos: 2, .. })
        ));
    }

    #[test]
    fn domain_errors_name_subexpression() {
        let e = parse_expression("1 + 1/(u - 1)").unwrap();
        let err = e.evaluate(&Env::new(0.0, 0.0, 0.0, 1.0)).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::DivisionByZero);
        assert_eq!(err.subexpr, "(1 / (u - 1))");

        let e = parse_expression("log(u)").unwrap();
        let err = e.evaluate(&Env::default()).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::LogOfNonPositive);

        let e = parse_expression("sqrt(x)").unwrap();
        let err = e.evaluate(&Env::new(-1.0, 0.0, 0.0, 0.0)).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::SqrtOfNegative);

        let e = parse_expression("x^0.5").unwrap();
        let err = e.evaluate(&Env::new(-1.0, 0.0, 0.0, 0.0)).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::InvalidPower);
    }

    #[test]
    fn partial_u_examples() {
        let env = Env::new(0.3, 0.0, 0.1, 0.7);
        let e = parse_expression("1 - u").unwrap();
        assert!((e.partial_u(&env, 1e-4).unwrap() + 1.0).abs() < 1e-8);
        let e = parse_expression("u^2").unwrap();
        assert!((e.partial_u(&env.with_u(3.0), 1e-4).unwrap() - 6.0).abs() < 1e-6);
        let e = parse_expression("exp(u)").unwrap();
        assert!((e.partial_u(&env.with_u(0.0), 1e-4).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn variable_references() {
        let e = parse_expression("sin(x) * u").unwrap();
        assert!(e.references(Var::U));
        assert!(e.references(Var::X));
        assert!(!e.references(Var::T));
        assert!(!e.references(Var::Y));
    }

    #[test]
    fn print_reparse() {
        let e = parse_expression("-x^2 + max(u, 2*t) / (1 + y)").unwrap();
        let again = parse_expression(&e.to_string()).unwrap();
        assert_eq!(e, again);
    }
}
