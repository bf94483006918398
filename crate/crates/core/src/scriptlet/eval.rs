use std::cmp::Ordering;
use std::fmt;

use super::ast::{BinaryOp, Builtin, Expr, ExprKind, UnaryOp};
use crate::value::{Object, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalErrorKind {
    UnknownIdent,
    TypeMismatch,
    IndexOutOfRange,
    DivByZero,
    NonFinite,
}

impl EvalErrorKind {
    pub fn name(self) -> &'static str {
        match self {
            EvalErrorKind::UnknownIdent => "UnknownIdent",
            EvalErrorKind::TypeMismatch => "TypeMismatch",
            EvalErrorKind::IndexOutOfRange => "IndexOutOfRange",
            EvalErrorKind::DivByZero => "DivByZero",
            EvalErrorKind::NonFinite => "NonFinite",
        }
    }
}

impl fmt::Display for EvalErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `path` is the printed form of the sub-expression that failed.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{kind} at `{path}`: {detail}")]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub path: String,
    pub detail: String,
}

fn fail(kind: EvalErrorKind, at: &Expr, detail: impl Into<String>) -> EvalError {
    EvalError {
        kind,
        path: at.to_string(),
        detail: detail.into(),
    }
}

fn mismatch(at: &Expr, detail: impl Into<String>) -> EvalError {
    fail(EvalErrorKind::TypeMismatch, at, detail)
}

pub fn eval(expr: &Expr, env: &Object) -> Result<Value, EvalError> {
    match &expr.kind {
        ExprKind::Null => Ok(Value::Null),
        ExprKind::Bool(b) => Ok(Value::Bool(*b)),
        ExprKind::Number(n) => Ok(Value::Number(*n)),
        ExprKind::Str(s) => Ok(Value::String(s.clone())),
        ExprKind::Array(items) => items
            .iter()
            .map(|e| eval(e, env))
            .collect::<Result<Vec<_>, _>>()
            .map(Value::Array),
        ExprKind::Object(entries) => {
            let mut out = Object::new();
            for (k, e) in entries {
                out.insert(k.clone(), eval(e, env)?);
            }
            Ok(Value::Object(out))
        }
        ExprKind::Ident(name) => env
            .get(name)
            .cloned()
            .ok_or_else(|| fail(EvalErrorKind::UnknownIdent, expr, format!("`{name}` is not defined"))),
        ExprKind::Member(obj, key) => match eval(obj, env)? {
            Value::Object(map) => Ok(map.get(key).cloned().unwrap_or(Value::Null)),
            other => Err(mismatch(expr, format!("cannot read `.{key}` of {}", other.type_name()))),
        },
        ExprKind::Index(obj, index) => {
            let target = eval(obj, env)?;
            let index = eval(index, env)?;
            index_value(expr, target, &index)
        }
        ExprKind::Unary(UnaryOp::Neg, operand) => match eval(operand, env)? {
            Value::Number(n) => Ok(Value::Number(-n)),
            other => Err(mismatch(expr, format!("cannot negate {}", other.type_name()))),
        },
        ExprKind::Unary(UnaryOp::Not, operand) => Ok(Value::Bool(!eval(operand, env)?.truthy())),
        ExprKind::Binary(BinaryOp::And, l, r) => {
            if !eval(l, env)?.truthy() {
                return Ok(Value::Bool(false));
            }
            Ok(Value::Bool(eval(r, env)?.truthy()))
        }
        ExprKind::Binary(BinaryOp::Or, l, r) => {
            if eval(l, env)?.truthy() {
                return Ok(Value::Bool(true));
            }
            Ok(Value::Bool(eval(r, env)?.truthy()))
        }
        ExprKind::Binary(op, l, r) => {
            let lhs = eval(l, env)?;
            let rhs = eval(r, env)?;
            binary(expr, *op, lhs, rhs)
        }
        ExprKind::Conditional(cond, then, otherwise) => {
            if eval(cond, env)?.truthy() {
                eval(then, env)
            } else {
                eval(otherwise, env)
            }
        }
        ExprKind::Call(builtin, args) => {
            let args = args
                .iter()
                .map(|a| eval(a, env))
                .collect::<Result<Vec<_>, _>>()?;
            call(expr, *builtin, args)
        }
    }
}

fn finite(at: &Expr, n: f64) -> Result<Value, EvalError> {
    Value::number(n).map_err(|_| fail(EvalErrorKind::NonFinite, at, "result is not finite"))
}

fn binary(at: &Expr, op: BinaryOp, lhs: Value, rhs: Value) -> Result<Value, EvalError> {
    match op {
        BinaryOp::Eq => return Ok(Value::Bool(lhs == rhs)),
        BinaryOp::Ne => return Ok(Value::Bool(lhs != rhs)),
        BinaryOp::Add if matches!(lhs, Value::String(_)) || matches!(rhs, Value::String(_)) => {
            let mut s = lhs.to_display_string();
            s.push_str(&rhs.to_display_string());
            return Ok(Value::String(s));
        }
        BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => {
            let ord = match (&lhs, &rhs) {
                (Value::Number(a), Value::Number(b)) => a.partial_cmp(b).unwrap_or(Ordering::Equal),
                (Value::String(a), Value::String(b)) => a.cmp(b),
                _ => {
                    return Err(mismatch(
                        at,
                        format!("cannot compare {} with {}", lhs.type_name(), rhs.type_name()),
                    ))
                }
            };
            let result = match op {
                BinaryOp::Lt => ord == Ordering::Less,
                BinaryOp::Le => ord != Ordering::Greater,
                BinaryOp::Gt => ord == Ordering::Greater,
                _ => ord != Ordering::Less,
            };
            return Ok(Value::Bool(result));
        }
        _ => {}
    }
    let (Value::Number(a), Value::Number(b)) = (&lhs, &rhs) else {
        return Err(mismatch(
            at,
            format!(
                "`{}` needs numbers, got {} and {}",
                op.symbol(),
                lhs.type_name(),
                rhs.type_name()
            ),
        ));
    };
    let (a, b) = (*a, *b);
    match op {
        BinaryOp::Add => finite(at, a + b),
        BinaryOp::Sub => finite(at, a - b),
        BinaryOp::Mul => finite(at, a * b),
        BinaryOp::Div | BinaryOp::Rem if b == 0.0 => {
            Err(fail(EvalErrorKind::DivByZero, at, "division by zero"))
        }
        BinaryOp::Div => finite(at, a / b),
        BinaryOp::Rem => finite(at, a % b),
        _ => unreachable!("handled above"),
    }
}

fn as_index(at: &Expr, v: &Value) -> Result<i64, EvalError> {
    match v {
        Value::Number(n) if n.fract() == 0.0 => Ok(*n as i64),
        other => Err(mismatch(at, format!("index must be an integer, got {}", other.type_name()))),
    }
}

fn index_value(at: &Expr, target: Value, index: &Value) -> Result<Value, EvalError> {
    match (target, index) {
        (Value::Object(map), Value::String(key)) => Ok(map.get(key).cloned().unwrap_or(Value::Null)),
        (Value::Array(items), idx) => {
            let i = as_index(at, idx)?;
            usize::try_from(i)
                .ok()
                .and_then(|i| items.get(i).cloned())
                .ok_or_else(|| {
                    fail(
                        EvalErrorKind::IndexOutOfRange,
                        at,
                        format!("index {i} out of range for length {}", items.len()),
                    )
                })
        }
        (Value::String(s), idx) => {
            let i = as_index(at, idx)?;
            usize::try_from(i)
                .ok()
                .and_then(|i| s.chars().nth(i))
                .map(|c| Value::String(c.to_string()))
                .ok_or_else(|| fail(EvalErrorKind::IndexOutOfRange, at, format!("index {i} out of range")))
        }
        (target, idx) => Err(mismatch(
            at,
            format!("cannot index {} with {}", target.type_name(), idx.type_name()),
        )),
    }
}

fn clamp_range(at: &Expr, len: usize, from: &Value, to: &Value) -> Result<(usize, usize), EvalError> {
    let clamp = |v: i64| v.clamp(0, len as i64) as usize;
    let start = clamp(as_index(at, from)?);
    let end = clamp(as_index(at, to)?);
    Ok((start, end.max(start)))
}

fn call(at: &Expr, builtin: Builtin, mut args: Vec<Value>) -> Result<Value, EvalError> {
    match builtin {
        Builtin::Len => match &args[0] {
            Value::String(s) => Ok(Value::from(s.chars().count() as i64)),
            Value::Array(a) => Ok(Value::from(a.len() as i64)),
            Value::Object(o) => Ok(Value::from(o.len() as i64)),
            other => Err(mismatch(at, format!("len of {}", other.type_name()))),
        },
        Builtin::Str => Ok(Value::String(args[0].to_display_string())),
        Builtin::Num => match &args[0] {
            Value::Number(n) => Ok(Value::Number(*n)),
            Value::Bool(b) => Ok(Value::from(*b as i64)),
            Value::Null => Ok(Value::from(0)),
            Value::String(s) => match s.trim().parse::<f64>() {
                Ok(n) => finite(at, n),
                Err(_) => Err(mismatch(at, format!("`{s}` is not a number"))),
            },
            other => Err(mismatch(at, format!("num of {}", other.type_name()))),
        },
        Builtin::Keys => match &args[0] {
            Value::Object(o) => Ok(Value::Array(o.keys().map(|k| Value::from(k.as_str())).collect())),
            other => Err(mismatch(at, format!("keys of {}", other.type_name()))),
        },
        Builtin::Append => {
            let item = args.pop().expect("arity checked");
            match args.pop().expect("arity checked") {
                Value::Array(mut a) => {
                    a.push(item);
                    Ok(Value::Array(a))
                }
                other => Err(mismatch(at, format!("append to {}", other.type_name()))),
            }
        }
        Builtin::Slice => match &args[0] {
            Value::Array(a) => {
                let (s, e) = clamp_range(at, a.len(), &args[1], &args[2])?;
                Ok(Value::Array(a[s..e].to_vec()))
            }
            Value::String(text) => {
                let chars: Vec<char> = text.chars().collect();
                let (s, e) = clamp_range(at, chars.len(), &args[1], &args[2])?;
                Ok(Value::String(chars[s..e].iter().collect()))
            }
            other => Err(mismatch(at, format!("slice of {}", other.type_name()))),
        },
        Builtin::Contains => match (&args[0], &args[1]) {
            (Value::String(s), Value::String(sub)) => Ok(Value::Bool(s.contains(sub.as_str()))),
            (Value::Array(a), v) => Ok(Value::Bool(a.contains(v))),
            (Value::Object(o), Value::String(k)) => Ok(Value::Bool(o.contains_key(k))),
            (c, v) => Err(mismatch(
                at,
                format!("contains({}, {})", c.type_name(), v.type_name()),
            )),
        },
        Builtin::Json => Ok(Value::String(args[0].to_canonical_json())),
        Builtin::ParseJson => match &args[0] {
            Value::String(s) => {
                Value::from_json_str(s).map_err(|e| mismatch(at, format!("invalid JSON: {e}")))
            }
            other => Err(mismatch(at, format!("parse_json of {}", other.type_name()))),
        },
    }
}
