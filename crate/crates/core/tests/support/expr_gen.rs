//! Random expression trees for the parser round-trip properties.

use gradqvi_core::expr::{BinOp, Func, Node, Var};
use proptest::prelude::*;

fn leaf() -> impl Strategy<Value = Node> {
    prop_oneof![
        // printed literals are unsigned; negatives come from `Neg`
        (0.0f64..1e6).prop_map(Node::Const),
        (0u32..1000).prop_map(|v| Node::Const(v as f64)),
        prop_oneof![Just(Var::X), Just(Var::Y), Just(Var::T), Just(Var::U)].prop_map(Node::Var),
    ]
}

fn op() -> impl Strategy<Value = BinOp> {
    prop_oneof![
        Just(BinOp::Add),
        Just(BinOp::Sub),
        Just(BinOp::Mul),
        Just(BinOp::Div),
        Just(BinOp::Pow),
    ]
}

pub fn node() -> impl Strategy<Value = Node> {
    leaf().prop_recursive(5, 48, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
            (op(), inner.clone(), inner.clone()).prop_map(|(o, a, b)| Node::Binary(o, Box::new(a), Box::new(b))),
            (0..Func::ALL.len(), prop::collection::vec(inner, 2)).prop_map(|(i, mut args)| {
                let f = Func::ALL[i];
                args.truncate(f.arity());
                Node::Call(f, args)
            }),
        ]
    })
}
