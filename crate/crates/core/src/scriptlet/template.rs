use super::ast::Expr;
use super::eval::{eval, EvalError};
use super::parser::{line_col, parse, ParseError};
use crate::value::Object;

#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Text(String),
    Interp(Expr),
}

/// Text with `{expr}` interpolations; `{{` and `}}` are literal braces.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TemplateError {
    #[error("template syntax error at {line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("interpolation #{index}: {source}")]
    Parse { index: usize, source: ParseError },
    #[error("interpolation #{index}: {source}")]
    Eval { index: usize, source: EvalError },
}

impl TemplateError {
    pub fn kind_name(&self) -> &'static str {
        match self {
            TemplateError::Syntax { .. } | TemplateError::Parse { .. } => "ParseError",
            TemplateError::Eval { source, .. } => source.kind.name(),
        }
    }
}

impl Template {
    pub fn parse(text: &str) -> Result<Template, TemplateError> {
        let syntax = |offset: usize, message: &str| {
            let (line, col) = line_col(text, offset);
            TemplateError::Syntax {
                line,
                col,
                message: message.to_string(),
            }
        };
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut chars = text.char_indices().peekable();
        let mut index = 0;
        while let Some((i, c)) = chars.next() {
            match c {
                '{' if matches!(chars.peek(), Some((_, '{'))) => {
                    chars.next();
                    literal.push('{');
                }
                '}' if matches!(chars.peek(), Some((_, '}'))) => {
                    chars.next();
                    literal.push('}');
                }
                '}' => return Err(syntax(i, "unmatched `}` (write `}}` for a literal brace)")),
                '{' => {
                    let close = find_close(text, i + 1).ok_or_else(|| syntax(i, "unclosed `{`"))?;
                    let source = &text[i + 1..close];
                    let expr = parse(source).map_err(|source| TemplateError::Parse { index, source })?;
                    if !literal.is_empty() {
                        segments.push(Segment::Text(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Interp(expr));
                    index += 1;
                    while matches!(chars.peek(), Some((j, _)) if *j <= close) {
                        chars.next();
                    }
                }
                c => literal.push(c),
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Text(literal));
        }
        Ok(Template { segments })
    }

    pub fn render(&self, env: &Object) -> Result<String, TemplateError> {
        let mut out = String::new();
        let mut index = 0;
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Interp(expr) => {
                    let v = eval(expr, env).map_err(|source| TemplateError::Eval { index, source })?;
                    out.push_str(&v.to_display_string());
                    index += 1;
                }
            }
        }
        Ok(out)
    }
}

/// Finds the `}` closing an interpolation opened just before `from`,
/// skipping string literals and nested object braces.
fn find_close(text: &str, from: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut i = from;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => {
                i += 1;
                while i < bytes.len() && bytes[i] != b'"' {
                    if bytes[i] == b'\\' {
                        i += 1;
                    }
                    i += 1;
                }
            }
            b'{' => depth += 1,
            b'}' if depth == 0 => return Some(i),
            b'}' => depth -= 1,
            _ => {}
        }
        i += 1;
    }
    None
}

pub fn render(template: &Template, env: &Object) -> Result<String, TemplateError> {
    template.render(env)
}

/// Parses and renders in one step.
pub fn render_str(text: &str, env: &Object) -> Result<String, TemplateError> {
    Template::parse(text)?.render(env)
}
