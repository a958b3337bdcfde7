//! Hand-written sugar forms next to their core expansions.

use eductive::eduction::eval_program;
use eductive::lang::{desugar, parse_program};

use super::*;

pub fn wrap(body: &str) -> String {
    format!("E where dimension t, s; X = #t * 2 + #s; E = {body}; end")
}

pub fn grid() -> impl Iterator<Item = Tags> {
    (0..=10).flat_map(|t| (0..=2).map(move |s| tags(&[("t", t), ("s", s)])))
}

/// Oracle on the sugar, oracle on its core expansion, the engine on both,
/// over the whole grid. Returns the number of points checked.
pub fn agree(sugar: &str, expansion: &str) -> usize {
    let mut checked = 0;
    let (a, b) = (compiled(sugar), compiled(expansion));
    let core = desugar(&parse_program(sugar).unwrap()).unwrap();
    assert!(!core.contains_sugar());
    for at in grid() {
        let reference = oracle_value(sugar, &at).ok();
        assert_eq!(Oracle::from_expr(core.clone()).run(&at).ok(), reference, "{sugar} at {at:?}");
        assert_eq!(eval_program(&a, &context(&at)).ok(), reference, "{sugar} at {at:?}");
        assert_eq!(eval_program(&b, &context(&at)).ok(), reference, "{expansion} at {at:?}");
        checked += 1;
    }
    checked
}

pub fn sugar_pairs() -> Vec<(String, String)> {
    vec![
        (wrap("first.t X"), wrap("X @ t:0")),
        (wrap("first.s (X + #t)"), wrap("(X + #t) @ s:0")),
        (wrap("next.t X"), wrap("X @ t:(#t + 1)")),
        (wrap("next.s next.t X"), wrap("(X @ t:(#t + 1)) @ s:(#s + 1)")),
        (wrap("X fby.t (X + 100)"), wrap("if #t <= 0 then X else (X + 100) @ t:(#t - 1)")),
        (wrap("1 fby.s (E * 3)"), wrap("if #s <= 0 then 1 else (E * 3) @ s:(#s - 1)")),
        (NATURALS.to_owned(), "N where dimension t; N = if #t <= 0 then 0 else (N + 1) @ t:(#t - 1); end".to_owned()),
        (wrap("first.t (0 fby.t next.t X)"), wrap("(if #t <= 0 then 0 else (X @ t:(#t + 1)) @ t:(#t - 1)) @ t:0")),
    ]
}
