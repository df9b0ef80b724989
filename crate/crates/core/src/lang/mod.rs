//! The modeling language: syntax tree, parser, printer and well-formedness checks.
//!
//! ```text
//! input sense;
//!
//! fn main() {
//!     let alarm = 0;
//!     let t = sense();
//!     Fresh(t);
//!     if t > 30 { alarm := 1; }
//!     ret 0
//! }
//! ```

pub mod ast;
mod lexer;
mod parser;
mod printer;
mod validate;

pub use ast::*;
pub use parser::parse;
pub use printer::{expr_to_string, pretty_print};
pub use validate::{param_kinds, validate, Diagnostic, Kind};

use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: expected {expected}, found {found}")]
    Syntax { line: usize, col: usize, expected: String, found: String },
    #[error("function `{0}` is defined more than once")]
    DuplicateFunction(String),
    #[error("entry function `{0}` is not defined")]
    MissingEntry(String),
    #[error("`{caller}` calls undefined function `{callee}`")]
    UnresolvedCall { caller: String, callee: String },
    #[error("recursive call cycle: {0}")]
    Recursion(String),
    #[error("{line}:{col}: annotation on `{var}` must directly follow its binding")]
    AnnotationNotAtBinding { var: String, line: usize, col: usize },
    #[error("`{caller}` passes an argument to input function `{input}`")]
    InputWithArgument { caller: String, input: String },
}
