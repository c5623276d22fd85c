//! Rate expression language.
//!
//! Models write their transition rates as small arithmetic expressions over
//! parameters, the population size `N` and occupancy terms `m[state]`:
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := '-' factor | atom
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | 'm' '[' ident ']' | '(' expr ')'
//! ```
//!
//! Functions: `pow`, `exp`, `ln`, `min`, `max`. `pow(0, 0)` is 1.
//!
//! [`Expr`] is the user-facing tree. Hot loops use [`CompiledExpr`], which
//! folds parameters into constants and addresses occupancies by index.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};

/// A free variable of an expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    Param(String),
    /// The population size `N`.
    Size,
    /// `m[state]`.
    Occupancy(String),
}

impl Var {
    pub fn param(name: &str) -> Self {
        Var::Param(name.to_string())
    }

    pub fn occ(state: &str) -> Self {
        Var::Occupancy(state.to_string())
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Param(name) => f.write_str(name),
            Var::Size => f.write_str("N"),
            Var::Occupancy(state) => write!(f, "m[{state}]"),
        }
    }
}

pub type Bindings = HashMap<Var, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Pow,
    Exp,
    Ln,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "pow" => Func::Pow,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Pow => "pow",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Exp | Func::Ln => 1,
            Func::Pow | Func::Min | Func::Max => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Why a primitive operation has no real value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    DivisionByZero,
    LogNonPositive,
    NegativeBase,
    Overflow,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.describe())
    }
}

impl Fault {
    fn describe(self) -> &'static str {
        match self {
            Fault::DivisionByZero => "division by zero",
            Fault::LogNonPositive => "logarithm of a non-positive value",
            Fault::NegativeBase => "negative base with non-integer exponent",
            Fault::Overflow => "result is not finite",
        }
    }
}

#[inline]
fn apply_binary(op: BinOp, a: f64, b: f64) -> std::result::Result<f64, Fault> {
    let v = match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(Fault::DivisionByZero);
            }
            a / b
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Fault::Overflow)
    }
}

#[inline]
fn apply_call(func: Func, a: f64, b: f64) -> std::result::Result<f64, Fault> {
    let v = match func {
        Func::Exp => a.exp(),
        Func::Ln => {
            if a <= 0.0 {
                return Err(Fault::LogNonPositive);
            }
            a.ln()
        }
        Func::Pow => {
            if a < 0.0 && b.fract() != 0.0 {
                return Err(Fault::NegativeBase);
            }
            if a == 0.0 && b < 0.0 {
                return Err(Fault::DivisionByZero);
            }
            // powf(0, 0) is already 1
            a.powf(b)
        }
        Func::Min => a.min(b),
        Func::Max => a.max(b),
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Fault::Overflow)
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr> {
        let tokens = tokenize(text)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            open: Vec::new(),
        };
        let expr = parser.expr()?;
        match parser.peek() {
            Tok::End => Ok(expr),
            Tok::RParen => Err(Error::UnbalancedParens {
                column: parser.column(),
            }),
            other => Err(Error::Syntax {
                column: parser.column(),
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }

    pub fn constant(value: f64) -> Expr {
        Expr::Num(value)
    }

    pub fn is_zero_constant(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    pub fn eval(&self, bindings: &Bindings) -> Result<f64> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(var) => bindings
                .get(var)
                .copied()
                .ok_or_else(|| Error::Unbound(var.to_string())),
            Expr::Neg(inner) => Ok(-inner.eval(bindings)?),
            Expr::Binary(op, lhs, rhs) => {
                let a = lhs.eval(bindings)?;
                let b = rhs.eval(bindings)?;
                apply_binary(*op, a, b).map_err(|fault| self.domain_error(fault))
            }
            Expr::Call(func, args) => {
                let a = args[0].eval(bindings)?;
                let b = match args.get(1) {
                    Some(arg) => arg.eval(bindings)?,
                    None => 0.0,
                };
                apply_call(*func, a, b).map_err(|fault| self.domain_error(fault))
            }
        }
    }

    fn domain_error(&self, fault: Fault) -> Error {
        Error::Domain {
            expr: self.to_string(),
            reason: fault.describe().to_string(),
        }
    }

    /// Free variables in deterministic order.
    pub fn free_vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Neg(inner) => inner.collect_vars(out),
            Expr::Binary(_, lhs, rhs) => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    /// Resolve names against a parameter table and an ordered state list.
    pub fn compile(&self, params: &dyn Fn(&str) -> Option<f64>, states: &[String]) -> Result<CompiledExpr> {
        Ok(CompiledExpr {
            root: self.lower(params, states)?,
        })
    }

    fn lower(&self, params: &dyn Fn(&str) -> Option<f64>, states: &[String]) -> Result<Node> {
        let node = match self {
            Expr::Num(v) => Node::Const(*v),
            Expr::Var(Var::Size) => Node::Size,
            Expr::Var(Var::Param(name)) => Node::Const(params(name).ok_or_else(|| Error::Unbound(name.clone()))?),
            Expr::Var(Var::Occupancy(state)) => {
                let idx = states
                    .iter()
                    .position(|s| s == state)
                    .ok_or_else(|| Error::Unbound(format!("m[{state}]")))?;
                Node::Occ(idx)
            }
            Expr::Neg(inner) => match inner.lower(params, states)? {
                Node::Const(v) => Node::Const(-v),
                n => Node::Neg(Box::new(n)),
            },
            Expr::Binary(op, lhs, rhs) => {
                let a = lhs.lower(params, states)?;
                let b = rhs.lower(params, states)?;
                match (&a, &b) {
                    (Node::Const(x), Node::Const(y)) => match apply_binary(*op, *x, *y) {
                        Ok(v) => Node::Const(v),
                        Err(_) => Node::Bin(*op, Box::new(a), Box::new(b)),
                    },
                    _ => Node::Bin(*op, Box::new(a), Box::new(b)),
                }
            }
            Expr::Call(func, args) => {
                let a = args[0].lower(params, states)?;
                let b = match args.get(1) {
                    Some(arg) => arg.lower(params, states)?,
                    None => Node::Const(0.0),
                };
                match (&a, &b) {
                    (Node::Const(x), Node::Const(y)) => match apply_call(*func, *x, *y) {
                        Ok(v) => Node::Const(v),
                        Err(_) => Node::Call(*func, Box::new(a), Box::new(b)),
                    },
                    _ => Node::Call(*func, Box::new(a), Box::new(b)),
                }
            }
        };
        Ok(node)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(var) => write!(f, "{var}"),
            Expr::Neg(inner) => match **inner {
                Expr::Binary(..) => write!(f, "-({inner})"),
                _ => write!(f, "-{inner}"),
            },
            Expr::Binary(op, lhs, rhs) => {
                let p = op.precedence();
                match &**lhs {
                    Expr::Binary(l, ..) if l.precedence() < p => write!(f, "({lhs})")?,
                    _ => write!(f, "{lhs}")?,
                }
                write!(f, " {} ", op.symbol())?;
                match &**rhs {
                    // left associativity: equal precedence on the right needs parens
                    Expr::Binary(r, ..) if r.precedence() <= p => write!(f, "({rhs})"),
                    _ => write!(f, "{rhs}"),
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{arg}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Size,
    Occ(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>, Box<Node>),
}

/// An expression with parameters folded in and occupancies addressed by
/// state index.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    root: Node,
}

impl CompiledExpr {
    #[inline]
    pub fn eval(&self, size: f64, m: &[f64]) -> std::result::Result<f64, Fault> {
        eval_node(&self.root, size, m)
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Const(v) => Some(v),
            _ => None,
        }
    }
}

fn eval_node(node: &Node, size: f64, m: &[f64]) -> std::result::Result<f64, Fault> {
    match node {
        Node::Const(v) => Ok(*v),
        Node::Size => Ok(size),
        Node::Occ(i) => Ok(m[*i]),
        Node::Neg(inner) => Ok(-eval_node(inner, size, m)?),
        Node::Bin(op, a, b) => apply_binary(*op, eval_node(a, size, m)?, eval_node(b, size, m)?),
        Node::Call(func, a, b) => apply_call(*func, eval_node(a, size, m)?, eval_node(b, size, m)?),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(name) => format!("identifier `{name}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            ',' => Some(Tok::Comma),
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            _ => None,
        };
        if let Some(tok) = single {
            out.push((tok, column));
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
            let literal: String = chars[start..i].iter().collect();
            let value: f64 = literal.parse().map_err(|_| Error::Syntax {
                column,
                message: format!("malformed number `{literal}`"),
            })?;
            if !value.is_finite() {
                return Err(Error::Syntax {
                    column,
                    message: format!("number `{literal}` is out of range"),
                });
            }
            out.push((Tok::Num(value), column));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), column));
        } else {
            return Err(Error::Syntax {
                column,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    out.push((Tok::End, chars.len() + 1));
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    /// Columns of currently open parentheses.
    open: Vec<usize>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn column(&self) -> usize {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let tok = self.tokens[self.pos].0.clone();
        if tok != Tok::End {
            self.pos += 1;
        }
        tok
    }

    fn unexpected(&self, wanted: &str) -> Error {
        if *self.peek() == Tok::End {
            if let Some(&column) = self.open.last() {
                return Error::UnbalancedParens { column };
            }
        }
        Error::Syntax {
            column: self.column(),
            message: format!("expected {wanted}, found {}", self.peek().describe()),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        self.atom()
    }

    fn close_paren(&mut self) -> Result<()> {
        if *self.peek() == Tok::RParen {
            self.bump();
            self.open.pop();
            Ok(())
        } else {
            Err(self.unexpected("`)`"))
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let column = self.column();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump();
                self.open.push(column);
                let inner = self.expr()?;
                self.close_paren()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.bump();
                match self.peek() {
                    Tok::LBracket if name == "m" => {
                        self.bump();
                        let state = match self.bump() {
                            Tok::Ident(state) => state,
                            _ => {
                                self.pos -= 1;
                                return Err(self.unexpected("a state name"));
                            }
                        };
                        if *self.peek() != Tok::RBracket {
                            return Err(self.unexpected("`]`"));
                        }
                        self.bump();
                        Ok(Expr::Var(Var::Occupancy(state)))
                    }
                    Tok::LParen => {
                        let func = Func::from_name(&name).ok_or(Error::UnknownFunction {
                            name: name.clone(),
                            column,
                        })?;
                        self.open.push(self.column());
                        self.bump();
                        let mut args = vec![self.expr()?];
                        while *self.peek() == Tok::Comma {
                            self.bump();
                            args.push(self.expr()?);
                        }
                        self.close_paren()?;
                        if args.len() != func.arity() {
                            return Err(Error::Syntax {
                                column,
                                message: format!(
                                    "`{}` takes {} argument(s), got {}",
                                    func.name(),
                                    func.arity(),
                                    args.len()
                                ),
                            });
                        }
                        Ok(Expr::Call(func, args))
                    }
                    _ if name == "N" => Ok(Expr::Var(Var::Size)),
                    _ => Ok(Expr::Var(Var::Param(name))),
                }
            }
            Tok::RParen => Err(Error::UnbalancedParens { column }),
            _ => Err(self.unexpected("a number, identifier or `(`")),
        }
    }
}
