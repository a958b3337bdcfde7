mod support;

use eductive::eduction::eval_program;
use eductive::lang::{desugar, parse_program};
use proptest::prelude::*;
use support::sugar::*;
use support::*;

#[test]
fn every_sugar_form_agrees_with_its_expansion() {
    let pairs = sugar_pairs();
    assert!(pairs.len() >= 8);
    for (sugar, expansion) in pairs {
        agree(&sugar, &expansion);
    }
}

fn expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("#t".to_owned()),
        Just("#s".to_owned()),
        Just("X".to_owned()),
        (-3i64..10).prop_map(|i| format!("({i})")),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        let dim = prop_oneof![Just("t"), Just("s")];
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (dim.clone(), inner.clone()).prop_map(|(d, a)| format!("(first.{d} {a})")),
            (dim.clone(), inner.clone()).prop_map(|(d, a)| format!("(next.{d} {a})")),
            (dim, inner.clone(), inner.clone()).prop_map(|(d, a, b)| format!("({a} fby.{d} {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("(if {a} <= {b} then {a} else {b})")),
            (inner.clone(), inner).prop_map(|(a, b)| format!("({a} @ t:({b}))")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn sugar_agrees_with_core(body in expr()) {
        let src = wrap(&body);
        let g = compiled(&src);
        let core = desugar(&parse_program(&src).unwrap()).unwrap();
        for at in grid() {
            let reference = oracle_value(&src, &at).ok();
            prop_assert_eq!(Oracle::from_expr(core.clone()).run(&at).ok(), reference.clone());
            prop_assert_eq!(eval_program(&g, &context(&at)).ok(), reference);
        }
    }
}
