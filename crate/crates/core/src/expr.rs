//! Closed-form scalar expressions used for warp profiles, conformal
//! exponents and potentials.
//!
//! The grammar is deliberately small: numbers, named variables, `pi`, `e`,
//! the binary operators `+ - * / ^`, unary minus, and the functions
//! `sin cos tan sinh cosh tanh exp log sqrt`. Expressions can be
//! differentiated symbolically, which is what the curvature formulas need.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Sinh,
    Cosh,
    Tanh,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Tanh => "tanh",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Sinh => x.sinh(),
            Func::Cosh => x.cosh(),
            Func::Tanh => x.tanh(),
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sqrt => x.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed expression over a fixed list of variable names.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    vars: Vec<String>,
    root: Node,
    source: String,
}

impl Expr {
    /// Parse `text` with the given variable names (in argument order for
    /// [`Expr::eval`]).
    pub fn parse(text: &str, vars: &[&str]) -> Result<Self> {
        let tokens = tokenize(text)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            vars,
            text,
        };
        let root = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(Error::Expression(format!("unexpected trailing input in `{text}`")));
        }
        Ok(Self {
            vars: vars.iter().map(|s| s.to_string()).collect(),
            root: simplify(root),
            source: text.to_string(),
        })
    }

    /// A constant expression in the given variables.
    pub fn constant(value: f64, vars: &[&str]) -> Self {
        Self {
            vars: vars.iter().map(|s| s.to_string()).collect(),
            root: Node::Num(value),
            source: format!("{value}"),
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn variables(&self) -> &[String] {
        &self.vars
    }

    pub fn eval(&self, args: &[f64]) -> f64 {
        eval(&self.root, args)
    }

    /// Convenience for single-variable expressions.
    pub fn eval1(&self, x: f64) -> f64 {
        eval(&self.root, &[x])
    }

    /// Symbolic partial derivative with respect to variable `index`.
    pub fn derivative(&self, index: usize) -> Expr {
        let root = simplify(diff(&self.root, index));
        Expr {
            vars: self.vars.clone(),
            source: format!("d/d{}({})", self.vars[index], self.source),
            root,
        }
    }

    pub fn is_constant(&self) -> bool {
        !contains_var(&self.root)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, &self.vars, f)
    }
}

fn write_node(node: &Node, vars: &[String], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match node {
        Node::Num(v) => write!(f, "{v}"),
        Node::Var(i) => write!(f, "{}", vars[*i]),
        Node::Neg(a) => {
            write!(f, "(-")?;
            write_node(a, vars, f)?;
            write!(f, ")")
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            let op = match node {
                Node::Add(..) => "+",
                Node::Sub(..) => "-",
                Node::Mul(..) => "*",
                Node::Div(..) => "/",
                _ => "^",
            };
            write!(f, "(")?;
            write_node(a, vars, f)?;
            write!(f, " {op} ")?;
            write_node(b, vars, f)?;
            write!(f, ")")
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(a, vars, f)?;
            write!(f, ")")
        }
    }
}

fn contains_var(node: &Node) -> bool {
    match node {
        Node::Num(_) => false,
        Node::Var(_) => true,
        Node::Neg(a) | Node::Call(_, a) => contains_var(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            contains_var(a) || contains_var(b)
        }
    }
}

fn eval(node: &Node, args: &[f64]) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Var(i) => args[*i],
        Node::Neg(a) => -eval(a, args),
        Node::Add(a, b) => eval(a, args) + eval(b, args),
        Node::Sub(a, b) => eval(a, args) - eval(b, args),
        Node::Mul(a, b) => eval(a, args) * eval(b, args),
        Node::Div(a, b) => eval(a, args) / eval(b, args),
        Node::Pow(a, b) => {
            let base = eval(a, args);
            match b.as_ref() {
                Node::Num(p) if p.fract() == 0.0 && p.abs() < 64.0 => base.powi(*p as i32),
                _ => base.powf(eval(b, args)),
            }
        }
        Node::Call(func, a) => func.apply(eval(a, args)),
    }
}

fn num(v: f64) -> Box<Node> {
    Box::new(Node::Num(v))
}

fn diff(node: &Node, var: usize) -> Node {
    use Node::*;
    match node {
        Num(_) => Num(0.0),
        Var(i) => Num(if *i == var { 1.0 } else { 0.0 }),
        Neg(a) => Neg(Box::new(diff(a, var))),
        Add(a, b) => Add(Box::new(diff(a, var)), Box::new(diff(b, var))),
        Sub(a, b) => Sub(Box::new(diff(a, var)), Box::new(diff(b, var))),
        Mul(a, b) => Add(
            Box::new(Mul(Box::new(diff(a, var)), b.clone())),
            Box::new(Mul(a.clone(), Box::new(diff(b, var)))),
        ),
        Div(a, b) => Div(
            Box::new(Sub(
                Box::new(Mul(Box::new(diff(a, var)), b.clone())),
                Box::new(Mul(a.clone(), Box::new(diff(b, var)))),
            )),
            Box::new(Mul(b.clone(), b.clone())),
        ),
        Pow(a, b) => {
            if !contains_var(b) {
                // d(a^p) = p a^(p-1) a'
                Mul(
                    Box::new(Mul(
                        b.clone(),
                        Box::new(Pow(a.clone(), Box::new(Sub(b.clone(), num(1.0))))),
                    )),
                    Box::new(diff(a, var)),
                )
            } else {
                // d(a^b) = a^b (b' ln a + b a'/a)
                Mul(
                    Box::new(node.clone()),
                    Box::new(Add(
                        Box::new(Mul(Box::new(diff(b, var)), Box::new(Call(Func::Log, a.clone())))),
                        Box::new(Div(Box::new(Mul(b.clone(), Box::new(diff(a, var)))), a.clone())),
                    )),
                )
            }
        }
        Call(func, a) => {
            let inner = Box::new(diff(a, var));
            let outer = match func {
                Func::Sin => Call(Func::Cos, a.clone()),
                Func::Cos => Neg(Box::new(Call(Func::Sin, a.clone()))),
                Func::Tan => Div(num(1.0), Box::new(Pow(Box::new(Call(Func::Cos, a.clone())), num(2.0)))),
                Func::Sinh => Call(Func::Cosh, a.clone()),
                Func::Cosh => Call(Func::Sinh, a.clone()),
                Func::Tanh => Sub(num(1.0), Box::new(Pow(Box::new(Call(Func::Tanh, a.clone())), num(2.0)))),
                Func::Exp => Call(Func::Exp, a.clone()),
                Func::Log => Div(num(1.0), a.clone()),
                Func::Sqrt => Div(num(0.5), Box::new(Call(Func::Sqrt, a.clone()))),
            };
            Mul(Box::new(outer), inner)
        }
    }
}

fn simplify(node: Node) -> Node {
    use Node::*;
    match node {
        Neg(a) => match simplify(*a) {
            Num(v) => Num(-v),
            Neg(inner) => *inner,
            other => Neg(Box::new(other)),
        },
        Add(a, b) => match (simplify(*a), simplify(*b)) {
            (Num(x), Num(y)) => Num(x + y),
            (Num(z), other) | (other, Num(z)) if z == 0.0 => other,
            (x, y) => Add(Box::new(x), Box::new(y)),
        },
        Sub(a, b) => match (simplify(*a), simplify(*b)) {
            (Num(x), Num(y)) => Num(x - y),
            (other, Num(z)) if z == 0.0 => other,
            (Num(z), other) if z == 0.0 => Neg(Box::new(other)),
            (x, y) => Sub(Box::new(x), Box::new(y)),
        },
        Mul(a, b) => match (simplify(*a), simplify(*b)) {
            (Num(x), Num(y)) => Num(x * y),
            (Num(z), _) | (_, Num(z)) if z == 0.0 => Num(0.0),
            (Num(o), other) | (other, Num(o)) if o == 1.0 => other,
            (x, y) => Mul(Box::new(x), Box::new(y)),
        },
        Div(a, b) => match (simplify(*a), simplify(*b)) {
            (Num(x), Num(y)) => Num(x / y),
            (Num(z), _) if z == 0.0 => Num(0.0),
            (other, Num(o)) if o == 1.0 => other,
            (x, y) => Div(Box::new(x), Box::new(y)),
        },
        Pow(a, b) => match (simplify(*a), simplify(*b)) {
            (Num(x), Num(y)) => Num(x.powf(y)),
            (_, Num(z)) if z == 0.0 => Num(1.0),
            (other, Num(o)) if o == 1.0 => other,
            (x, y) => Pow(Box::new(x), Box::new(y)),
        },
        Call(func, a) => match simplify(*a) {
            Num(v) => Num(func.apply(v)),
            other => Call(func, Box::new(other)),
        },
        leaf => leaf,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
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
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lit: String = chars[start..i].iter().collect();
            let v = lit
                .parse::<f64>()
                .map_err(|_| Error::Expression(format!("bad number `{lit}` in `{text}`")))?;
            out.push(Token::Num(v));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else if c == '(' {
            out.push(Token::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Token::RParen);
            i += 1;
        } else {
            return Err(Error::Expression(format!("unexpected character `{c}` in `{text}`")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [&'a str],
    text: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn err(&self, msg: &str) -> Error {
        Error::Expression(format!("{msg} in `{}`", self.text))
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            // right associative, binds tighter than unary minus on the left
            let exponent = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let tok = self
            .peek()
            .cloned()
            .ok_or_else(|| self.err("unexpected end of expression"))?;
        self.pos += 1;
        match tok {
            Token::Num(v) => Ok(Node::Num(v)),
            Token::LParen => {
                let inner = self.expr()?;
                match self.peek() {
                    Some(Token::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(self.err("missing `)`")),
                }
            }
            Token::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    match self.peek() {
                        Some(Token::LParen) => {
                            self.pos += 1;
                            let arg = self.expr()?;
                            match self.peek() {
                                Some(Token::RParen) => {
                                    self.pos += 1;
                                    Ok(Node::Call(func, Box::new(arg)))
                                }
                                _ => Err(self.err("missing `)` after function argument")),
                            }
                        }
                        _ => Err(self.err(&format!("function `{name}` needs parentheses"))),
                    }
                } else if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    Ok(Node::Var(i))
                } else if name == "pi" {
                    Ok(Node::Num(std::f64::consts::PI))
                } else if name == "e" {
                    Ok(Node::Num(std::f64::consts::E))
                } else {
                    Err(self.err(&format!("unknown identifier `{name}`")))
                }
            }
            Token::Op(c) => Err(self.err(&format!("unexpected operator `{c}`"))),
            Token::RParen => Err(self.err("unexpected `)`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(e: &Expr, x: f64) -> f64 {
        let h = 1e-5;
        (e.eval1(x + h) - e.eval1(x - h)) / (2.0 * h)
    }

    #[test]
    fn parses_and_evaluates() {
        let e = Expr::parse("sin(r)*(1 - 0.3*sin(r)^4)", &["r"]).unwrap();
        let r: f64 = 0.7;
        let expected = r.sin() * (1.0 - 0.3 * r.sin().powi(4));
        assert!((e.eval1(r) - expected).abs() < 1e-15);
        let p = Expr::parse("-2^2 + 3e-1*pi", &[]).unwrap();
        assert!((p.eval(&[]) - (-4.0 + 0.3 * std::f64::consts::PI)).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for src in [
            "sin(r)*(1 - 0.3*sin(r)^4)",
            "sinh(r)",
            "exp(-r^2)/(1+r)",
            "r^r",
            "sqrt(1 + cosh(r)) * tanh(r) - log(2 + r)",
        ] {
            let e = Expr::parse(src, &["r"]).unwrap();
            let d = e.derivative(0);
            for &x in &[0.3, 0.9, 1.7] {
                assert!((d.eval1(x) - central(&e, x)).abs() < 1e-8, "{src} at {x}");
            }
        }
    }

    #[test]
    fn partial_derivatives_in_two_variables() {
        let e = Expr::parse("0.1*cos(x)*sin(2*y)", &["x", "y"]).unwrap();
        let dy = e.derivative(1);
        let v = dy.eval(&[0.4, 0.2]);
        assert!((v - 0.2 * 0.4f64.cos() * 0.4f64.cos()).abs() < 1e-15);
        assert!(e.derivative(0).derivative(0).eval(&[0.0, 0.0]).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Expr::parse("sin r", &["r"]).is_err());
        assert!(Expr::parse("q + 1", &["r"]).is_err());
        assert!(Expr::parse("(r + 1", &["r"]).is_err());
        assert!(Expr::parse("r $ 2", &["r"]).is_err());
    }

    #[test]
    fn constant_detection() {
        assert!(Expr::parse("2*pi", &["r"]).unwrap().is_constant());
        assert!(!Expr::parse("2*r", &["r"]).unwrap().is_constant());
    }
}
