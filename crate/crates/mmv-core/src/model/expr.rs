//! Small arithmetic DSL for coefficient functions over
//! `(x, mu, y, nu)`. Measure dependence is restricted to moment
//! functionals: `mean(mu)[i]`, `var(nu)[j]`, `m2(mu)`, ...

use crate::error::{MmvError, Result};
use serde::{Deserialize, Serialize};

pub const MAX_DEPTH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoordSlot {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasureSlot {
    Mu,
    Nu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MomentKind {
    Mean,
    Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fn1 {
    Sin,
    Cos,
    Tanh,
    Exp,
    Sqrt,
    Abs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fn2 {
    Min,
    Max,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Abstract syntax tree of a scalar coefficient expression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(f64),
    Coord(CoordSlot, usize),
    Moment(MomentKind, MeasureSlot, usize),
    M2(MeasureSlot),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call1(Fn1, Box<Expr>),
    Call2(Fn2, Box<Expr>, Box<Expr>),
}

/// Which argument slots an expression may read, fixed by the coefficient's
/// signature (sigma has no `y` slot).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotPolicy {
    pub allow_x: bool,
    pub allow_y: bool,
    pub allow_mu: bool,
    pub allow_nu: bool,
}

impl SlotPolicy {
    pub const ALL: SlotPolicy = SlotPolicy {
        allow_x: true,
        allow_y: true,
        allow_mu: true,
        allow_nu: true,
    };
    /// sigma(x, mu, nu): no fast coordinate.
    pub const NO_Y: SlotPolicy = SlotPolicy {
        allow_y: false,
        ..SlotPolicy::ALL
    };
    /// Functions of the fast coordinate only (Poisson test functions).
    pub const Y_ONLY: SlotPolicy = SlotPolicy {
        allow_x: false,
        allow_y: true,
        allow_mu: false,
        allow_nu: false,
    };
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Spanned>> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let bytes: Vec<char> = src.chars().collect();
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i];
        let (l, co) = (line, col);
        let mut push = |tok: Tok| out.push(Spanned { tok, line: l, col: co });
        match c {
            '\n' => {
                line += 1;
                col = 1;
                i += 1;
                continue;
            }
            c if c.is_whitespace() => {}
            '+' => push(Tok::Plus),
            '-' => push(Tok::Minus),
            '*' => push(Tok::Star),
            '/' => push(Tok::Slash),
            '(' => push(Tok::LParen),
            ')' => push(Tok::RParen),
            '[' => push(Tok::LBracket),
            ']' => push(Tok::RBracket),
            ',' => push(Tok::Comma),
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == '.'
                        || bytes[i] == 'e'
                        || bytes[i] == 'E'
                        || ((bytes[i] == '+' || bytes[i] == '-')
                            && i > start
                            && (bytes[i - 1] == 'e' || bytes[i - 1] == 'E')))
                {
                    i += 1;
                }
                let text: String = bytes[start..i].iter().collect();
                let v = text.parse::<f64>().map_err(|_| MmvError::Syntax {
                    line,
                    col,
                    msg: format!("bad number `{text}`"),
                })?;
                out.push(Spanned { tok: Tok::Num(v), line, col });
                col += i - start;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                    i += 1;
                }
                let text: String = bytes[start..i].iter().collect();
                out.push(Spanned { tok: Tok::Ident(text), line, col });
                col += i - start;
                continue;
            }
            other => {
                return Err(MmvError::Syntax {
                    line,
                    col,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        }
        i += 1;
        col += 1;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser<'a> {
    toks: &'a [Spanned],
    pos: usize,
    d1: usize,
    d2: usize,
    policy: SlotPolicy,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn loc(&self) -> (usize, usize) {
        self.toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map(|s| (s.line, s.col))
            .unwrap_or((1, 1))
    }

    fn err(&self, msg: impl Into<String>) -> MmvError {
        let (line, col) = self.loc();
        MmvError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|s| s.tok.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        match self.peek() {
            Some(t) if *t == tok => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn expr(&mut self, depth: usize) -> Result<Expr> {
        if depth > MAX_DEPTH {
            return Err(self.err("expression too deeply nested"));
        }
        let mut lhs = self.term(depth + 1)?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term(depth + 1)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self, depth: usize) -> Result<Expr> {
        if depth > MAX_DEPTH {
            return Err(self.err("expression too deeply nested"));
        }
        let mut lhs = self.unary(depth + 1)?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.unary(depth + 1)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self, depth: usize) -> Result<Expr> {
        if depth > MAX_DEPTH {
            return Err(self.err("expression too deeply nested"));
        }
        if let Some(Tok::Minus) = self.peek() {
            self.pos += 1;
            let inner = self.unary(depth + 1)?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.atom(depth + 1)
    }

    fn index(&mut self, what: &str, dim: usize) -> Result<usize> {
        self.expect(Tok::LBracket, "`[`")?;
        let idx = match self.bump() {
            Some(Tok::Num(v)) if v.fract() == 0.0 && v >= 0.0 => v as usize,
            _ => return Err(self.err("expected a non-negative integer index")),
        };
        self.expect(Tok::RBracket, "`]`")?;
        if idx >= dim {
            return Err(MmvError::IndexOutOfRange {
                what: format!("{what}[{idx}]"),
                dim,
            });
        }
        Ok(idx)
    }

    fn measure_arg(&mut self) -> Result<MeasureSlot> {
        self.expect(Tok::LParen, "`(`")?;
        let slot = match self.bump() {
            Some(Tok::Ident(name)) if name == "mu" => MeasureSlot::Mu,
            Some(Tok::Ident(name)) if name == "nu" => MeasureSlot::Nu,
            _ => return Err(self.err("expected `mu` or `nu`")),
        };
        self.expect(Tok::RParen, "`)`")?;
        Ok(slot)
    }

    fn check_measure(&self, slot: MeasureSlot, line: usize, col: usize, name: &str) -> Result<()> {
        let allowed = match slot {
            MeasureSlot::Mu => self.policy.allow_mu,
            MeasureSlot::Nu => self.policy.allow_nu,
        };
        if !allowed {
            return Err(MmvError::UnknownIdentifier {
                name: format!("{name} (measure slot not available in this coefficient)"),
                line,
                col,
            });
        }
        Ok(())
    }

    fn atom(&mut self, depth: usize) -> Result<Expr> {
        if depth > MAX_DEPTH {
            return Err(self.err("expression too deeply nested"));
        }
        let (line, col) = self.loc();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::LParen) => {
                let e = self.expr(depth + 1)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "x" => {
                    if !self.policy.allow_x {
                        return Err(MmvError::UnknownIdentifier {
                            name: "x (slot not available in this coefficient)".into(),
                            line,
                            col,
                        });
                    }
                    let i = self.index("x", self.d1)?;
                    Ok(Expr::Coord(CoordSlot::X, i))
                }
                "y" => {
                    if !self.policy.allow_y {
                        return Err(MmvError::UnknownIdentifier {
                            name: "y (slot not available in this coefficient)".into(),
                            line,
                            col,
                        });
                    }
                    let j = self.index("y", self.d2)?;
                    Ok(Expr::Coord(CoordSlot::Y, j))
                }
                "mean" | "var" => {
                    let kind = if name == "mean" { MomentKind::Mean } else { MomentKind::Var };
                    let slot = self.measure_arg()?;
                    self.check_measure(slot, line, col, &name)?;
                    let dim = match slot {
                        MeasureSlot::Mu => self.d1,
                        MeasureSlot::Nu => self.d2,
                    };
                    let i = self.index(&name, dim)?;
                    Ok(Expr::Moment(kind, slot, i))
                }
                "m2" => {
                    let slot = self.measure_arg()?;
                    self.check_measure(slot, line, col, "m2")?;
                    Ok(Expr::M2(slot))
                }
                "sin" | "cos" | "tanh" | "exp" | "sqrt" | "abs" => {
                    let f = match name.as_str() {
                        "sin" => Fn1::Sin,
                        "cos" => Fn1::Cos,
                        "tanh" => Fn1::Tanh,
                        "exp" => Fn1::Exp,
                        "sqrt" => Fn1::Sqrt,
                        _ => Fn1::Abs,
                    };
                    self.expect(Tok::LParen, "`(`")?;
                    let a = self.expr(depth + 1)?;
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(Expr::Call1(f, Box::new(a)))
                }
                "min" | "max" | "pow" => {
                    let f = match name.as_str() {
                        "min" => Fn2::Min,
                        "max" => Fn2::Max,
                        _ => Fn2::Pow,
                    };
                    self.expect(Tok::LParen, "`(`")?;
                    let a = self.expr(depth + 1)?;
                    self.expect(Tok::Comma, "`,`")?;
                    let b = self.expr(depth + 1)?;
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(Expr::Call2(f, Box::new(a), Box::new(b)))
                }
                other => Err(MmvError::UnknownIdentifier {
                    name: other.to_string(),
                    line,
                    col,
                }),
            },
            _ => Err(MmvError::Syntax {
                line,
                col,
                msg: "unexpected end of input".into(),
            }),
        }
    }
}

/// Parses one scalar coefficient expression against the declared dimensions
/// and slot policy.
pub fn parse_coeff(src: &str, d1: usize, d2: usize, policy: SlotPolicy) -> Result<Expr> {
    if src.trim().is_empty() {
        return Err(MmvError::Syntax {
            line: 1,
            col: 1,
            msg: "empty expression".into(),
        });
    }
    let toks = lex(src)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        d1,
        d2,
        policy,
    };
    let e = p.expr(0)?;
    if p.pos != toks.len() {
        return Err(p.err("trailing input"));
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Pretty-printing (canonical, fully parenthesized; reparses to the same AST)
// ---------------------------------------------------------------------------

pub fn pretty(e: &Expr) -> String {
    let mut s = String::new();
    print_into(e, &mut s);
    s
}

fn print_into(e: &Expr, out: &mut String) {
    use std::fmt::Write;
    match e {
        Expr::Const(v) => {
            if *v < 0.0 || (v.is_sign_negative() && *v == 0.0) {
                // Negative literals never arise from parsing; keep canonical.
                let _ = write!(out, "(0 - {})", fmt_lit(-*v));
            } else {
                let _ = write!(out, "{}", fmt_lit(*v));
            }
        }
        Expr::Coord(CoordSlot::X, i) => {
            let _ = write!(out, "x[{i}]");
        }
        Expr::Coord(CoordSlot::Y, j) => {
            let _ = write!(out, "y[{j}]");
        }
        Expr::Moment(kind, slot, i) => {
            let k = match kind {
                MomentKind::Mean => "mean",
                MomentKind::Var => "var",
            };
            let _ = write!(out, "{k}({})[{i}]", slot_name(*slot));
        }
        Expr::M2(slot) => {
            let _ = write!(out, "m2({})", slot_name(*slot));
        }
        Expr::Neg(a) => {
            out.push_str("(-");
            print_into(a, out);
            out.push(')');
        }
        Expr::Bin(op, a, b) => {
            out.push('(');
            print_into(a, out);
            out.push_str(match op {
                BinOp::Add => " + ",
                BinOp::Sub => " - ",
                BinOp::Mul => " * ",
                BinOp::Div => " / ",
            });
            print_into(b, out);
            out.push(')');
        }
        Expr::Call1(f, a) => {
            out.push_str(match f {
                Fn1::Sin => "sin",
                Fn1::Cos => "cos",
                Fn1::Tanh => "tanh",
                Fn1::Exp => "exp",
                Fn1::Sqrt => "sqrt",
                Fn1::Abs => "abs",
            });
            out.push('(');
            print_into(a, out);
            out.push(')');
        }
        Expr::Call2(f, a, b) => {
            out.push_str(match f {
                Fn2::Min => "min",
                Fn2::Max => "max",
                Fn2::Pow => "pow",
            });
            out.push('(');
            print_into(a, out);
            out.push_str(", ");
            print_into(b, out);
            out.push(')');
        }
    }
}

fn slot_name(s: MeasureSlot) -> &'static str {
    match s {
        MeasureSlot::Mu => "mu",
        MeasureSlot::Nu => "nu",
    }
}

fn fmt_lit(v: f64) -> String {
    let s = format!("{v}");
    if s.parse::<f64>() == Ok(v) {
        s
    } else {
        format!("{v:.17e}")
    }
}

// ---------------------------------------------------------------------------
// Compiled evaluation
// ---------------------------------------------------------------------------

/// Read-only view of one measure slot during evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LawView<'a> {
    pub mean: &'a [f64],
    pub var: &'a [f64],
    pub m2: f64,
}

/// Inputs to one coefficient evaluation.
#[derive(Clone, Copy, Debug)]
pub struct EvalCtx<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub mu: LawView<'a>,
    pub nu: LawView<'a>,
}

#[derive(Clone, Copy, Debug)]
enum Instr {
    Push(f64),
    LoadX(u16),
    LoadY(u16),
    LoadMeanMu(u16),
    LoadMeanNu(u16),
    LoadVarMu(u16),
    LoadVarNu(u16),
    LoadM2Mu,
    LoadM2Nu,
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Tanh,
    Exp,
    Sqrt,
    Abs,
    Min,
    Max,
    Pow,
}

/// Flat postfix program compiled from an [`Expr`]; evaluation order matches
/// a left-to-right recursive walk of the tree exactly.
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    code: Vec<Instr>,
    src: String,
}

impl CompiledExpr {
    pub fn compile(e: &Expr) -> CompiledExpr {
        let mut code = Vec::new();
        emit(e, &mut code);
        CompiledExpr {
            code,
            src: pretty(e),
        }
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    #[inline]
    pub fn eval(&self, ctx: &EvalCtx<'_>) -> Result<f64> {
        let mut stack = [0.0f64; MAX_DEPTH + 2];
        let mut sp = 0usize;
        macro_rules! pop {
            () => {{
                sp -= 1;
                stack[sp]
            }};
        }
        macro_rules! push {
            ($v:expr) => {{
                stack[sp] = $v;
                sp += 1;
            }};
        }
        for ins in &self.code {
            match *ins {
                Instr::Push(v) => push!(v),
                Instr::LoadX(i) => push!(ctx.x[i as usize]),
                Instr::LoadY(j) => push!(ctx.y[j as usize]),
                Instr::LoadMeanMu(i) => push!(ctx.mu.mean[i as usize]),
                Instr::LoadMeanNu(j) => push!(ctx.nu.mean[j as usize]),
                Instr::LoadVarMu(i) => push!(ctx.mu.var[i as usize]),
                Instr::LoadVarNu(j) => push!(ctx.nu.var[j as usize]),
                Instr::LoadM2Mu => push!(ctx.mu.m2),
                Instr::LoadM2Nu => push!(ctx.nu.m2),
                Instr::Neg => {
                    let a = pop!();
                    push!(-a);
                }
                Instr::Add => {
                    let b = pop!();
                    let a = pop!();
                    push!(a + b);
                }
                Instr::Sub => {
                    let b = pop!();
                    let a = pop!();
                    push!(a - b);
                }
                Instr::Mul => {
                    let b = pop!();
                    let a = pop!();
                    push!(a * b);
                }
                Instr::Div => {
                    let b = pop!();
                    let a = pop!();
                    if b == 0.0 {
                        return Err(MmvError::Eval(format!("division by zero in `{}`", self.src)));
                    }
                    push!(a / b);
                }
                Instr::Sin => {
                    let a = pop!();
                    push!(a.sin());
                }
                Instr::Cos => {
                    let a = pop!();
                    push!(a.cos());
                }
                Instr::Tanh => {
                    let a = pop!();
                    push!(a.tanh());
                }
                Instr::Exp => {
                    let a = pop!();
                    push!(a.exp());
                }
                Instr::Sqrt => {
                    let a = pop!();
                    if a < 0.0 {
                        return Err(MmvError::Eval(format!(
                            "sqrt of negative value {a} in `{}`",
                            self.src
                        )));
                    }
                    push!(a.sqrt());
                }
                Instr::Abs => {
                    let a = pop!();
                    push!(a.abs());
                }
                Instr::Min => {
                    let b = pop!();
                    let a = pop!();
                    push!(a.min(b));
                }
                Instr::Max => {
                    let b = pop!();
                    let a = pop!();
                    push!(a.max(b));
                }
                Instr::Pow => {
                    let b = pop!();
                    let a = pop!();
                    let r = a.powf(b);
                    if r.is_nan() {
                        return Err(MmvError::Eval(format!(
                            "pow({a}, {b}) is not a real number in `{}`",
                            self.src
                        )));
                    }
                    push!(r);
                }
            }
        }
        let out = stack[0];
        if !out.is_finite() {
            return Err(MmvError::Eval(format!("non-finite result in `{}`", self.src)));
        }
        Ok(out)
    }
}

fn emit(e: &Expr, code: &mut Vec<Instr>) {
    match e {
        Expr::Const(v) => code.push(Instr::Push(*v)),
        Expr::Coord(CoordSlot::X, i) => code.push(Instr::LoadX(*i as u16)),
        Expr::Coord(CoordSlot::Y, j) => code.push(Instr::LoadY(*j as u16)),
        Expr::Moment(MomentKind::Mean, MeasureSlot::Mu, i) => code.push(Instr::LoadMeanMu(*i as u16)),
        Expr::Moment(MomentKind::Mean, MeasureSlot::Nu, j) => code.push(Instr::LoadMeanNu(*j as u16)),
        Expr::Moment(MomentKind::Var, MeasureSlot::Mu, i) => code.push(Instr::LoadVarMu(*i as u16)),
        Expr::Moment(MomentKind::Var, MeasureSlot::Nu, j) => code.push(Instr::LoadVarNu(*j as u16)),
        Expr::M2(MeasureSlot::Mu) => code.push(Instr::LoadM2Mu),
        Expr::M2(MeasureSlot::Nu) => code.push(Instr::LoadM2Nu),
        Expr::Neg(a) => {
            emit(a, code);
            code.push(Instr::Neg);
        }
        Expr::Bin(op, a, b) => {
            emit(a, code);
            emit(b, code);
            code.push(match op {
                BinOp::Add => Instr::Add,
                BinOp::Sub => Instr::Sub,
                BinOp::Mul => Instr::Mul,
                BinOp::Div => Instr::Div,
            });
        }
        Expr::Call1(f, a) => {
            emit(a, code);
            code.push(match f {
                Fn1::Sin => Instr::Sin,
                Fn1::Cos => Instr::Cos,
                Fn1::Tanh => Instr::Tanh,
                Fn1::Exp => Instr::Exp,
                Fn1::Sqrt => Instr::Sqrt,
                Fn1::Abs => Instr::Abs,
            });
        }
        Expr::Call2(f, a, b) => {
            emit(a, code);
            emit(b, code);
            code.push(match f {
                Fn2::Min => Instr::Min,
                Fn2::Max => Instr::Max,
                Fn2::Pow => Instr::Pow,
            });
        }
    }
}
