//! Small arithmetic expression language used to specify exponent functions,
//! weights and domain indicators as text in config files.
//!
//! Supported syntax: real literals, coordinates `x1..xN`, the radial symbol
//! `absx` (= |x|), binary `+ - * /`, unary `-`, and the functions `sin`,
//! `cos`, `exp`, `pow(base, exp)` and `chi_ball(c1, .., cN, radius)`.
//! Precedence from tightest to loosest: function application, unary minus,
//! `* /`, `+ -`. The full grammar is in `docs/expr-grammar.md`.
//!
//! Expressions are immutable after parsing and evaluation is pure, so a
//! parsed [`Expr`] can be shared and evaluated from any number of threads.

use std::fmt;

use thiserror::Error;

/// Abstract syntax tree of a parsed expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// Numeric literal (finite, non-negative as produced by the parser).
    Num(f64),
    /// Coordinate variable, zero-based (`x1` is `Coord(0)`).
    Coord(usize),
    /// The radial symbol `absx`, the Euclidean norm of the point.
    AbsX,
    /// Unary negation.
    Neg(Box<Expr>),
    /// Binary arithmetic node.
    Bin(BinOp, Box<Expr>, Box<Expr>),
    /// Function application.
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Pow,
    /// Indicator of the closed ball: `chi_ball(c1, .., cN, radius)` is 1 for
    /// |x - c| <= radius (boundary counts as inside) and 0 otherwise.
    ChiBall,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Pow => "pow",
            Func::ChiBall => "chi_ball",
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: expected {expected}")]
    Syntax { pos: usize, expected: String },
    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdentifier { name: String, pos: usize },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("division by zero at point {point:?}")]
    DivisionByZero { point: Vec<f64> },
    #[error("pow of negative base with non-integer exponent at point {point:?}")]
    InvalidPow { point: Vec<f64> },
    #[error("expression needs coordinate dimension {needed}, point has dimension {dim}")]
    DimensionMismatch { needed: usize, dim: usize },
    #[error("non-finite result at point {point:?}")]
    NonFinite { point: Vec<f64> },
}

// ------------------------- lexer -------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next token plus its starting byte offset.
    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        self.skip_ws();
        let start = self.pos;
        if self.pos >= self.src.len() {
            return Ok((Tok::End, start));
        }
        let c = self.src[self.pos];
        let tok = match c {
            b'+' => {
                self.pos += 1;
                Tok::Plus
            }
            b'-' => {
                self.pos += 1;
                Tok::Minus
            }
            b'*' => {
                self.pos += 1;
                Tok::Star
            }
            b'/' => {
                self.pos += 1;
                Tok::Slash
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b',' => {
                self.pos += 1;
                Tok::Comma
            }
            b'0'..=b'9' => {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                if self.pos < self.src.len() && self.src[self.pos] == b'.' {
                    self.pos += 1;
                    while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                        self.pos += 1;
                    }
                }
                if self.pos < self.src.len() && (self.src[self.pos] | 0x20) == b'e' {
                    let mark = self.pos;
                    self.pos += 1;
                    if self.pos < self.src.len()
                        && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-')
                    {
                        self.pos += 1;
                    }
                    if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                            self.pos += 1;
                        }
                    } else {
                        // "2e" with no digits: the 'e' was not an exponent
                        self.pos = mark;
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    pos: start,
                    expected: "numeric literal".into(),
                })?;
                Tok::Num(v)
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                Tok::Ident(std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string())
            }
            _ => {
                return Err(ParseError::Syntax {
                    pos: start,
                    expected: format!("token, found `{}`", c as char),
                })
            }
        };
        Ok((tok, start))
    }
}

// ------------------------- parser -------------------------

struct Parser<'a> {
    lexer: Lexer<'a>,
    cur: Tok,
    cur_pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ParseError> {
        let mut lexer = Lexer::new(src);
        let (cur, cur_pos) = lexer.next()?;
        Ok(Parser { lexer, cur, cur_pos })
    }

    fn bump(&mut self) -> Result<(), ParseError> {
        let (t, p) = self.lexer.next()?;
        self.cur = t;
        self.cur_pos = p;
        Ok(())
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.cur == tok {
            self.bump()
        } else {
            Err(ParseError::Syntax { pos: self.cur_pos, expected: what.into() })
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.cur {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump()?;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.cur {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.bump()?;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.cur == Tok::Minus {
            self.bump()?;
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.primary()
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.cur.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump()?;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let pos = self.cur_pos;
                self.bump()?;
                if self.cur == Tok::LParen {
                    let func = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        "pow" => Func::Pow,
                        "chi_ball" => Func::ChiBall,
                        _ => return Err(ParseError::UnknownIdentifier { name, pos }),
                    };
                    self.bump()?;
                    let mut args = Vec::new();
                    if self.cur != Tok::RParen {
                        args.push(self.expr()?);
                        while self.cur == Tok::Comma {
                            self.bump()?;
                            args.push(self.expr()?);
                        }
                    }
                    self.expect(Tok::RParen, "`)` or `,`")?;
                    let ok = match func {
                        Func::Sin | Func::Cos | Func::Exp => args.len() == 1,
                        Func::Pow => args.len() == 2,
                        Func::ChiBall => args.len() >= 2,
                    };
                    if !ok {
                        let want = match func {
                            Func::Sin | Func::Cos | Func::Exp => "1 argument".to_string(),
                            Func::Pow => "2 arguments".to_string(),
                            Func::ChiBall => "at least 2 arguments (center.., radius)".to_string(),
                        };
                        return Err(ParseError::Syntax {
                            pos,
                            expected: format!("{} for `{}`, got {}", want, func.name(), args.len()),
                        });
                    }
                    Ok(Expr::Call(func, args))
                } else if name == "absx" {
                    Ok(Expr::AbsX)
                } else if let Some(idx) = coord_index(&name) {
                    Ok(Expr::Coord(idx))
                } else {
                    Err(ParseError::UnknownIdentifier { name, pos })
                }
            }
            _ => Err(ParseError::Syntax {
                pos: self.cur_pos,
                expected: "literal, identifier, `-` or `(`".into(),
            }),
        }
    }
}

/// `x1`..`x99` -> zero-based coordinate index.
fn coord_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let i: usize = digits.parse().ok()?;
    if i >= 1 {
        Some(i - 1)
    } else {
        None
    }
}

/// Parse an expression from source text.
///
/// ```
/// let e = multiphase::expr::parse("2 + absx/3").unwrap();
/// assert_eq!(e.eval(&[3.0, 0.0, 0.0]).unwrap(), 3.0);
/// ```
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    if src.trim().is_empty() {
        return Err(ParseError::Syntax { pos: 0, expected: "non-empty expression".into() });
    }
    let mut p = Parser::new(src)?;
    let e = p.expr()?;
    if p.cur != Tok::End {
        return Err(ParseError::Syntax { pos: p.cur_pos, expected: "end of input".into() });
    }
    Ok(e)
}

// ------------------------- evaluation -------------------------

impl Expr {
    /// Evaluate at a point. The point's dimension must cover every coordinate
    /// the expression references.
    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        let v = self.eval_inner(point)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite { point: point.to_vec() })
        }
    }

    fn eval_inner(&self, point: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Coord(i) => {
                if *i < point.len() {
                    Ok(point[*i])
                } else {
                    Err(EvalError::DimensionMismatch { needed: i + 1, dim: point.len() })
                }
            }
            Expr::AbsX => Ok(point.iter().map(|c| c * c).sum::<f64>().sqrt()),
            Expr::Neg(e) => Ok(-e.eval_inner(point)?),
            Expr::Bin(op, a, b) => {
                let x = a.eval_inner(point)?;
                let y = b.eval_inner(point)?;
                match op {
                    BinOp::Add => Ok(x + y),
                    BinOp::Sub => Ok(x - y),
                    BinOp::Mul => Ok(x * y),
                    BinOp::Div => {
                        if y == 0.0 {
                            Err(EvalError::DivisionByZero { point: point.to_vec() })
                        } else {
                            Ok(x / y)
                        }
                    }
                }
            }
            Expr::Call(func, args) => match func {
                Func::Sin => Ok(args[0].eval_inner(point)?.sin()),
                Func::Cos => Ok(args[0].eval_inner(point)?.cos()),
                Func::Exp => Ok(args[0].eval_inner(point)?.exp()),
                Func::Pow => {
                    let b = args[0].eval_inner(point)?;
                    let e = args[1].eval_inner(point)?;
                    if b < 0.0 && e.fract() != 0.0 {
                        return Err(EvalError::InvalidPow { point: point.to_vec() });
                    }
                    if b == 0.0 && e < 0.0 {
                        return Err(EvalError::DivisionByZero { point: point.to_vec() });
                    }
                    Ok(b.powf(e))
                }
                Func::ChiBall => {
                    let n = args.len() - 1;
                    if n != point.len() {
                        return Err(EvalError::DimensionMismatch { needed: n, dim: point.len() });
                    }
                    let mut d2 = 0.0;
                    for (k, arg) in args[..n].iter().enumerate() {
                        let c = arg.eval_inner(point)?;
                        d2 += (point[k] - c) * (point[k] - c);
                    }
                    let r = args[n].eval_inner(point)?;
                    // closed-ball convention: the boundary sphere counts as inside
                    Ok(if d2 <= r * r { 1.0 } else { 0.0 })
                }
            },
        }
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            _ => 4,
        }
    }
}

impl fmt::Display for Expr {
    /// Prints a form that re-parses to a structurally equal tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Coord(i) => write!(f, "x{}", i + 1),
            Expr::AbsX => write!(f, "absx"),
            Expr::Neg(e) => {
                if e.prec() < 3 {
                    write!(f, "-({e})")
                } else {
                    write!(f, "-{e}")
                }
            }
            Expr::Bin(op, a, b) => {
                let p = self.prec();
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                if a.prec() < p {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, " {sym} ")?;
                // right operand needs parens on equal precedence: a-(b-c) != a-b-c
                if b.prec() <= p {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(src: &str, p: &[f64]) -> f64 {
        parse(src).unwrap().eval(p).unwrap()
    }

    #[test]
    fn section4_exponent_matches_transcription() {
        // p(x) = 2 + |x|/3
        for p in [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.3, -0.4, 0.5]] {
            let absx = p.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert_eq!(ev("2 + absx/3", &p), 2.0 + absx / 3.0);
        }
    }

    #[test]
    fn constant_zero() {
        assert_eq!(ev("0", &[0.7]), 0.0);
        assert_eq!(ev("x1 - x1", &[123.456, -2.0]), 0.0);
    }

    #[test]
    fn sin_near_pi_is_small() {
        // independent scalar oracle for sin(3.14159265 * |x|) at (1,0,0)
        let want = (3.14159265f64).sin();
        let got = ev("sin(3.14159265*absx)", &[1.0, 0.0, 0.0]);
        assert!((got - want).abs() < 1e-15);
        assert!(got.abs() < 1e-6);
    }

    #[test]
    fn exp_of_negative_radius_squared() {
        let got = ev("exp(-absx*absx)", &[1.0, 0.0, 0.0]);
        assert!((got - (-1.0f64).exp()).abs() < 1e-15);
        assert!((got - 0.3678794).abs() < 1e-6);
    }

    #[test]
    fn chi_ball_closed_convention() {
        let e = parse("chi_ball(0,0,0, 0.5)").unwrap();
        assert_eq!(e.eval(&[0.25, 0.0, 0.0]).unwrap(), 1.0); // inside m1 support
        assert_eq!(e.eval(&[0.5, 0.0, 0.0]).unwrap(), 1.0); // boundary counts as inside
        assert_eq!(e.eval(&[0.51, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn precedence_unary_minus_tighter_than_mul() {
        // -2*3 parses as (-2)*3
        let e = parse("-2*3").unwrap();
        assert_eq!(
            e,
            Expr::Bin(
                BinOp::Mul,
                Box::new(Expr::Neg(Box::new(Expr::Num(2.0)))),
                Box::new(Expr::Num(3.0))
            )
        );
        assert_eq!(ev("2-3-4", &[]), -5.0);
        assert_eq!(ev("2-(3-4)", &[]), 3.0);
        assert_eq!(ev("12/3/2", &[]), 2.0);
        assert_eq!(ev("-sin(0)", &[]), 0.0);
    }

    #[test]
    fn pow_semantics() {
        assert_eq!(ev("pow(-2, 3)", &[]), -8.0);
        assert_eq!(ev("pow(2, 0.5)", &[]), 2f64.sqrt());
        let e = parse("pow(-2, 0.5)").unwrap();
        assert!(matches!(e.eval(&[]), Err(EvalError::InvalidPow { .. })));
        let e = parse("pow(0, -1)").unwrap();
        assert!(matches!(e.eval(&[]), Err(EvalError::DivisionByZero { .. })));
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let e = parse("1/(x1 - 1)").unwrap();
        assert!(matches!(e.eval(&[1.0]), Err(EvalError::DivisionByZero { .. })));
        assert_eq!(e.eval(&[3.0]).unwrap(), 0.5);
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse("2 + * 3") {
            Err(ParseError::Syntax { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("expected syntax error, got {other:?}"),
        }
        match parse("2 + y") {
            Err(ParseError::UnknownIdentifier { name, pos }) => {
                assert_eq!(name, "y");
                assert_eq!(pos, 4);
            }
            other => panic!("expected unknown identifier, got {other:?}"),
        }
        assert!(parse("").is_err());
        assert!(parse("sin(1,2)").is_err());
        assert!(parse("pow(1)").is_err());
        assert!(parse("x0").is_err());
    }

    #[test]
    fn coordinate_dimension_checked() {
        let e = parse("x3").unwrap();
        assert!(matches!(e.eval(&[1.0, 2.0]), Err(EvalError::DimensionMismatch { .. })));
        assert_eq!(e.eval(&[1.0, 2.0, 7.0]).unwrap(), 7.0);
    }

    // --- round-trip property: print then re-parse gives an equal tree and
    // --- bitwise identical evaluation

    fn arb_expr(dim: usize) -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            prop_oneof![
                Just(0.0f64),
                Just(1.0),
                Just(2.5),
                Just(0.1),
                Just(3.141592653589793),
                Just(1e-3),
                Just(1e6),
                (0.0f64..1e3),
            ]
            .prop_map(Expr::Num),
            (0..dim).prop_map(Expr::Coord),
            Just(Expr::AbsX),
        ];
        leaf.prop_recursive(4, 48, 4, move |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
                inner.clone().prop_map(|e| Expr::Call(Func::Sin, vec![e])),
                inner.clone().prop_map(|e| Expr::Call(Func::Cos, vec![e])),
                inner.clone().prop_map(|e| Expr::Call(Func::Exp, vec![e])),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::Call(Func::Pow, vec![a, b])),
                (proptest::collection::vec(inner.clone(), dim), inner)
                    .prop_map(|(mut c, r)| {
                        c.push(r);
                        Expr::Call(Func::ChiBall, c)
                    }),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_roundtrip(e in arb_expr(3), px in -2.0f64..2.0, py in -2.0f64..2.0, pz in -2.0f64..2.0) {
            let printed = e.to_string();
            let reparsed = parse(&printed).unwrap_or_else(|err| panic!("`{printed}` failed to re-parse: {err}"));
            prop_assert_eq!(&reparsed, &e);
            let p = [px, py, pz];
            match (e.eval(&p), reparsed.eval(&p)) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                (a, b) => prop_assert!(false, "eval mismatch: {:?} vs {:?}", a, b),
            }
        }
    }
}
