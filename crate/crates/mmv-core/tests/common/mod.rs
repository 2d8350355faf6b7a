//! Shared helpers for integration tests: a randomized expression generator
//! for the coefficient DSL and an independent recursive reference evaluator.

use mmv_core::error::Result;
use mmv_core::model::expr::{
    BinOp, CoordSlot, EvalCtx, Expr, Fn1, Fn2, MeasureSlot, MomentKind,
};
use proptest::prelude::*;

pub const EXPR_D1: usize = 2;
pub const EXPR_D2: usize = 2;

/// Non-negative literals only: the canonical printer never emits a negative
/// literal, so round-trip AST equality is stated for the parser's image.
fn lit_strategy() -> BoxedStrategy<f64> {
    prop_oneof![
        Just(0.0),
        Just(1.0),
        Just(0.5),
        Just(2.0),
        Just(1.5e-3),
        Just(3.25e6),
        (0.0f64..1e3),
        (0.0f64..1.0),
    ]
    .boxed()
}

fn leaf_strategy() -> BoxedStrategy<Expr> {
    prop_oneof![
        lit_strategy().prop_map(Expr::Const),
        (0..EXPR_D1).prop_map(|i| Expr::Coord(CoordSlot::X, i)),
        (0..EXPR_D2).prop_map(|j| Expr::Coord(CoordSlot::Y, j)),
        (0..EXPR_D1).prop_map(|i| Expr::Moment(MomentKind::Mean, MeasureSlot::Mu, i)),
        (0..EXPR_D2).prop_map(|j| Expr::Moment(MomentKind::Mean, MeasureSlot::Nu, j)),
        (0..EXPR_D1).prop_map(|i| Expr::Moment(MomentKind::Var, MeasureSlot::Mu, i)),
        (0..EXPR_D2).prop_map(|j| Expr::Moment(MomentKind::Var, MeasureSlot::Nu, j)),
        Just(Expr::M2(MeasureSlot::Mu)),
        Just(Expr::M2(MeasureSlot::Nu)),
    ]
    .boxed()
}

fn bin_op_strategy() -> BoxedStrategy<BinOp> {
    prop_oneof![
        Just(BinOp::Add),
        Just(BinOp::Sub),
        Just(BinOp::Mul),
        Just(BinOp::Div)
    ]
    .boxed()
}

fn fn1_strategy() -> BoxedStrategy<Fn1> {
    prop_oneof![
        Just(Fn1::Sin),
        Just(Fn1::Cos),
        Just(Fn1::Tanh),
        Just(Fn1::Exp),
        Just(Fn1::Sqrt),
        Just(Fn1::Abs)
    ]
    .boxed()
}

fn fn2_strategy() -> BoxedStrategy<Fn2> {
    prop_oneof![Just(Fn2::Min), Just(Fn2::Max), Just(Fn2::Pow)].boxed()
}

/// Randomized expression trees over `x[0..2]`, `y[0..2]`, and moment
/// functionals of both measure slots, with bounded height.
pub fn expr_strategy() -> BoxedStrategy<Expr> {
    leaf_strategy()
        .prop_recursive(5, 64, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (bin_op_strategy(), inner.clone(), inner.clone())
                    .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
                (fn1_strategy(), inner.clone())
                    .prop_map(|(f, a)| Expr::Call1(f, Box::new(a))),
                (fn2_strategy(), inner.clone(), inner)
                    .prop_map(|(f, a, b)| Expr::Call2(f, Box::new(a), Box::new(b))),
            ]
        })
        .boxed()
}

/// Evaluation inputs matching `EXPR_D1`/`EXPR_D2`.
#[derive(Clone, Debug)]
pub struct CtxData {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub mu_mean: [f64; 2],
    pub mu_var: [f64; 2],
    pub mu_m2: f64,
    pub nu_mean: [f64; 2],
    pub nu_var: [f64; 2],
    pub nu_m2: f64,
}

impl CtxData {
    pub fn view(&self) -> EvalCtx<'_> {
        EvalCtx {
            x: &self.x,
            y: &self.y,
            mu: mmv_core::model::expr::LawView {
                mean: &self.mu_mean,
                var: &self.mu_var,
                m2: self.mu_m2,
            },
            nu: mmv_core::model::expr::LawView {
                mean: &self.nu_mean,
                var: &self.nu_var,
                m2: self.nu_m2,
            },
        }
    }
}

pub fn ctx_strategy() -> BoxedStrategy<CtxData> {
    let coord = -3.0f64..3.0;
    let mean = -2.0f64..2.0;
    let var = 0.0f64..4.0;
    let m2 = 0.0f64..6.0;
    (
        [coord.clone(), coord.clone()],
        [coord.clone(), coord],
        [mean.clone(), mean.clone()],
        [var.clone(), var.clone()],
        m2.clone(),
        [mean.clone(), mean],
        [var.clone(), var],
        m2,
    )
        .prop_map(
            |(x, y, mu_mean, mu_var, mu_m2, nu_mean, nu_var, nu_m2)| CtxData {
                x,
                y,
                mu_mean,
                mu_var,
                mu_m2,
                nu_mean,
                nu_var,
                nu_m2,
            },
        )
        .boxed()
}

/// Direct recursive evaluator used as an independent reference for the
/// compiled program; the error conditions and the left-to-right operand
/// order mirror the runtime contract exactly.
pub fn ref_eval(e: &Expr, ctx: &EvalCtx<'_>) -> Result<f64> {
    let v = ref_eval_inner(e, ctx)?;
    if !v.is_finite() {
        return Err(mmv_core::MmvError::Eval("non-finite result".into()));
    }
    Ok(v)
}

fn ref_eval_inner(e: &Expr, ctx: &EvalCtx<'_>) -> Result<f64> {
    let fail = |msg: &str| Err(mmv_core::MmvError::Eval(msg.into()));
    match e {
        Expr::Const(v) => Ok(*v),
        Expr::Coord(CoordSlot::X, i) => Ok(ctx.x[*i]),
        Expr::Coord(CoordSlot::Y, j) => Ok(ctx.y[*j]),
        Expr::Moment(MomentKind::Mean, MeasureSlot::Mu, i) => Ok(ctx.mu.mean[*i]),
        Expr::Moment(MomentKind::Mean, MeasureSlot::Nu, j) => Ok(ctx.nu.mean[*j]),
        Expr::Moment(MomentKind::Var, MeasureSlot::Mu, i) => Ok(ctx.mu.var[*i]),
        Expr::Moment(MomentKind::Var, MeasureSlot::Nu, j) => Ok(ctx.nu.var[*j]),
        Expr::M2(MeasureSlot::Mu) => Ok(ctx.mu.m2),
        Expr::M2(MeasureSlot::Nu) => Ok(ctx.nu.m2),
        Expr::Neg(a) => Ok(-ref_eval_inner(a, ctx)?),
        Expr::Bin(op, a, b) => {
            let a = ref_eval_inner(a, ctx)?;
            let b = ref_eval_inner(b, ctx)?;
            match op {
                BinOp::Add => Ok(a + b),
                BinOp::Sub => Ok(a - b),
                BinOp::Mul => Ok(a * b),
                BinOp::Div => {
                    if b == 0.0 {
                        fail("division by zero")
                    } else {
                        Ok(a / b)
                    }
                }
            }
        }
        Expr::Call1(f, a) => {
            let a = ref_eval_inner(a, ctx)?;
            match f {
                Fn1::Sin => Ok(a.sin()),
                Fn1::Cos => Ok(a.cos()),
                Fn1::Tanh => Ok(a.tanh()),
                Fn1::Exp => Ok(a.exp()),
                Fn1::Sqrt => {
                    if a < 0.0 {
                        fail("sqrt of negative value")
                    } else {
                        Ok(a.sqrt())
                    }
                }
                Fn1::Abs => Ok(a.abs()),
            }
        }
        Expr::Call2(f, a, b) => {
            let a = ref_eval_inner(a, ctx)?;
            let b = ref_eval_inner(b, ctx)?;
            match f {
                Fn2::Min => Ok(a.min(b)),
                Fn2::Max => Ok(a.max(b)),
                Fn2::Pow => {
                    let r = a.powf(b);
                    if r.is_nan() {
                        fail("pow not real")
                    } else {
                        Ok(r)
                    }
                }
            }
        }
    }
}
