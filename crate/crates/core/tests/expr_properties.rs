#[path = "support/expr_gen.rs"]
mod expr_gen;

use gradqvi_core::expr::{Env, Expression};
use gradqvi_core::parse_expression;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn print_parse_round_trip(node in expr_gen::node()) {
        let e = Expression::from_node(node);
        let printed = e.to_string();
        let back = parse_expression(&printed).unwrap();
        prop_assert_eq!(back.root(), e.root());
        prop_assert_eq!(back.to_string(), printed);
    }

    #[test]
    fn product_binds_tighter_than_sum(a in 0.0f64..100.0, b in 0.0f64..100.0, c in 0.0f64..100.0) {
        let src = format!("{a} + {b} * {c}");
        let v = parse_expression(&src).unwrap().evaluate(&Env::default()).unwrap();
        prop_assert_eq!(v, a + b * c);
        let src = format!("{a} - {b} / ({c} + 1)");
        let v = parse_expression(&src).unwrap().evaluate(&Env::default()).unwrap();
        prop_assert_eq!(v, a - b / (c + 1.0));
    }

    #[test]
    fn power_is_right_associative(a in 0.5f64..1.5, b in 0.0f64..2.0, c in 0.0f64..2.0) {
        let v = parse_expression(&format!("{a}^{b}^{c}")).unwrap().evaluate(&Env::default()).unwrap();
        prop_assert_eq!(v, a.powf(b.powf(c)));
    }

    #[test]
    fn whitespace_is_ignored(node in expr_gen::node()) {
        let printed = Expression::from_node(node).to_string();
        let spaced = printed.replace('(', " ( ").replace(',', " , ");
        prop_assert_eq!(parse_expression(&spaced).unwrap().to_string(), printed);
    }
}

#[test]
fn evaluation_examples() {
    let at = |src: &str, env: Env| parse_expression(src).unwrap().evaluate(&env).unwrap();
    assert_eq!(at("exp(-x^2) + min(t, 1)", Env::new(0.0, 0.0, 2.0, 0.0)), 2.0);
    assert_eq!(at("u", Env::new(0.0, 0.0, 0.0, 3.5)), 3.5);
    assert_eq!(at("x*t", Env::new(2.0, 0.0, 0.25, 0.0)), 0.5);
    assert_eq!(at("abs(x) - 1", Env::new(-0.25, 0.0, 0.0, 0.0)), -0.75);
}

#[test]
fn unary_minus_binds_looser_than_power() {
    let v = parse_expression("-2^2").unwrap().evaluate(&Env::default()).unwrap();
    assert_eq!(v, -4.0);
}
