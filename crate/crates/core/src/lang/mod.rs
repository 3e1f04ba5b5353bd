//! The core language: terms, types, surface syntax and evaluation contexts.

mod context;
mod parser;
mod printer;
mod term;
mod typing;

pub use context::{decompose, Decomposition, EvalContext, Frame, Zipper};
pub use parser::{parse, parse_with, LangError, TypedProgram};
pub use printer::print;
pub(crate) use printer::write_expr;
pub use term::{fresh_name, map_leaves, subst, Name, Term, Type};
pub use typing::{typecheck, typecheck_closed, Context, TypeError};
