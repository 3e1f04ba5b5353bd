//! Example programs shipped with the library.

pub const PED: &str = include_str!("../corpus/ped.spcf");
pub const DIAGONAL: &str = include_str!("../corpus/diagonal.spcf");
pub const WALK: &str = include_str!("../corpus/walk.spcf");
pub const GEOMETRIC: &str = include_str!("../corpus/geometric.spcf");
pub const SCORE_S: &str = include_str!("../corpus/score_s.spcf");
pub const CONST: &str = include_str!("../corpus/const.spcf");
pub const ENUMQ: &str = include_str!("../corpus/enumq.spcf");
pub const DIVERGE: &str = include_str!("../corpus/diverge.spcf");
pub const NEG_SCORE: &str = include_str!("../corpus/neg_score.spcf");
pub const LOG: &str = include_str!("../corpus/log.spcf");
pub const UNIFORM: &str = include_str!("../corpus/uniform.spcf");
pub const INPUT: &str = include_str!("../corpus/input.spcf");
pub const LAMBDA: &str = include_str!("../corpus/lambda.spcf");

/// `(name, source)` for every corpus program.
pub const ALL: &[(&str, &str)] = &[
    ("ped", PED),
    ("diagonal", DIAGONAL),
    ("walk", WALK),
    ("geometric", GEOMETRIC),
    ("score_s", SCORE_S),
    ("const", CONST),
    ("enumq", ENUMQ),
    ("diverge", DIVERGE),
    ("neg_score", NEG_SCORE),
    ("log", LOG),
    ("uniform", UNIFORM),
    ("input", INPUT),
    ("lambda", LAMBDA),
];

pub fn get(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}
