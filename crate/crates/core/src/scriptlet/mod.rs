//! The sandboxed expression language used by Code nodes, Branch conditions,
//! prompt templates and Summary merge rules.
//!
//! There are no loops, no assignment and no recursion, so every evaluation
//! terminates. The normative grammar lives in `docs/scriptlet.ebnf`.

mod ast;
mod eval;
mod lexer;
mod parser;
mod template;

pub use ast::{BinaryOp, Builtin, Expr, ExprKind, Span, UnaryOp};
pub use eval::{eval, EvalError, EvalErrorKind};
pub use parser::{parse, ParseError};
pub use template::{render, render_str, Segment, Template, TemplateError};

use crate::value::{Object, Value};

/// Parses and evaluates `source` in one go.
pub fn eval_str(source: &str, env: &Object) -> Result<Value, ScriptError> {
    let ast = parse(source)?;
    Ok(eval(&ast, env)?)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScriptError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl ScriptError {
    /// Stable name of the failure kind, e.g. `DivByZero` or `ParseError`.
    pub fn kind_name(&self) -> &'static str {
        match self {
            ScriptError::Parse(_) => "ParseError",
            ScriptError::Eval(e) => e.kind.name(),
        }
    }
}
