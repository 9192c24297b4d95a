//! Block workflows: the JSON document model, validation against a tool
//! catalog, and a sequential interpreter that reports every state change as
//! an [`ExecutionEvent`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};

use chrono::{DateTime, Utc};
use labmcp_protocol::{PropertyKind, ScalarType, ToolCallResult, ToolDescriptor};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::host::{Host, ToolRef};

pub const WORKFLOW_VERSION: u64 = 1;

/// Runtime value: workflows only handle scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Number(n) => write!(f, "{n}"),
            Scalar::Text(t) => f.write_str(t),
        }
    }
}

impl Scalar {
    fn from_json(v: &Value) -> Option<Self> {
        match v {
            Value::Bool(b) => Some(Scalar::Bool(*b)),
            Value::Number(n) => n.as_f64().map(Scalar::Number),
            Value::String(s) => Some(Scalar::Text(s.clone())),
            _ => None,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Scalar::Bool(b) => Value::Bool(*b),
            Scalar::Number(n) => number_json(*n),
            Scalar::Text(t) => Value::String(t.clone()),
        }
    }

    pub fn as_number(&self) -> Result<f64, String> {
        match self {
            Scalar::Number(n) => Ok(*n),
            Scalar::Text(t) => trailing_number(t)
                .ok_or_else(|| format!("cannot read a number from {t:?}")),
            Scalar::Bool(b) => Err(format!("expected a number, got boolean {b}")),
        }
    }

    pub fn truthy(&self) -> bool {
        match self {
            Scalar::Bool(b) => *b,
            Scalar::Number(n) => *n != 0.0,
            Scalar::Text(t) => !t.is_empty(),
        }
    }
}

fn number_json(n: f64) -> Value {
    if n.fract() == 0.0 && n.abs() < 9.0e15 {
        Value::from(n as i64)
    } else {
        serde_json::Number::from_f64(n).map_or(Value::Null, Value::Number)
    }
}

/// The last numeric literal at the end of `text`, e.g. 12.34 in
/// "deltaE = 12.34".
pub fn trailing_number(text: &str) -> Option<f64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?:^|[^0-9A-Za-z_.])([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*$")
            .expect("valid regex")
    });
    re.captures(text)
        .and_then(|c| c[1].parse::<f64>().ok())
        .filter(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Gt,
    Eq,
    Neg,
}

impl BinOp {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "add" | "+" => BinOp::Add,
            "sub" | "-" => BinOp::Sub,
            "mul" | "*" => BinOp::Mul,
            "div" | "/" => BinOp::Div,
            "lt" | "<" => BinOp::Lt,
            "gt" | ">" => BinOp::Gt,
            "eq" | "==" => BinOp::Eq,
            "neg" => BinOp::Neg,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Lt => "lt",
            BinOp::Gt => "gt",
            BinOp::Eq => "eq",
            BinOp::Neg => "neg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockKind {
    ToolCall {
        server: String,
        tool: String,
        args: Vec<(String, Block)>,
    },
    Repeat {
        count: Box<Block>,
        body: Vec<Block>,
    },
    If {
        condition: Box<Block>,
        then: Vec<Block>,
        otherwise: Vec<Block>,
    },
    SetVar {
        name: String,
        value: Box<Block>,
    },
    VarRef {
        name: String,
    },
    Literal {
        value: Scalar,
    },
    BinOp {
        op: BinOp,
        left: Box<Block>,
        right: Option<Box<Block>>,
    },
    Log {
        value: Box<Block>,
    },
}

impl BlockKind {
    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::ToolCall { .. } => "tool_call",
            BlockKind::Repeat { .. } => "repeat",
            BlockKind::If { .. } => "if",
            BlockKind::SetVar { .. } => "set_var",
            BlockKind::VarRef { .. } => "var_ref",
            BlockKind::Literal { .. } => "literal",
            BlockKind::BinOp { .. } => "binop",
            BlockKind::Log { .. } => "log",
        }
    }

    fn is_statement(&self) -> bool {
        matches!(
            self,
            BlockKind::ToolCall { .. }
                | BlockKind::Repeat { .. }
                | BlockKind::If { .. }
                | BlockKind::SetVar { .. }
                | BlockKind::Log { .. }
        )
    }

    fn is_expression(&self) -> bool {
        matches!(
            self,
            BlockKind::ToolCall { .. }
                | BlockKind::VarRef { .. }
                | BlockKind::Literal { .. }
                | BlockKind::BinOp { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: String,
    pub kind: BlockKind,
}

impl Block {
    pub fn new(id: impl Into<String>, kind: BlockKind) -> Self {
        Self {
            id: id.into(),
            kind,
        }
    }

    pub fn literal(id: impl Into<String>, value: Scalar) -> Self {
        Self::new(id, BlockKind::Literal { value })
    }

    pub fn tool_call(
        id: impl Into<String>,
        server: impl Into<String>,
        tool: impl Into<String>,
        args: Vec<(String, Block)>,
    ) -> Self {
        Self::new(
            id,
            BlockKind::ToolCall {
                server: server.into(),
                tool: tool.into(),
                args,
            },
        )
    }

    fn children(&self) -> Vec<&Block> {
        match &self.kind {
            BlockKind::ToolCall { args, .. } => args.iter().map(|(_, b)| b).collect(),
            BlockKind::Repeat { count, body } => std::iter::once(&**count).chain(body).collect(),
            BlockKind::If {
                condition,
                then,
                otherwise,
            } => std::iter::once(&**condition)
                .chain(then)
                .chain(otherwise)
                .collect(),
            BlockKind::SetVar { value, .. } | BlockKind::Log { value } => vec![&**value],
            BlockKind::BinOp { left, right, .. } => {
                std::iter::once(&**left).chain(right.as_deref()).collect()
            }
            BlockKind::VarRef { .. } | BlockKind::Literal { .. } => Vec::new(),
        }
    }

    fn walk<'a>(&'a self, out: &mut Vec<&'a Block>) {
        out.push(self);
        for c in self.children() {
            c.walk(out);
        }
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("id".into(), Value::String(self.id.clone()));
        m.insert("kind".into(), Value::String(self.kind.name().into()));
        let list = |blocks: &[Block]| Value::Array(blocks.iter().map(Block::to_json).collect());
        match &self.kind {
            BlockKind::ToolCall { server, tool, args } => {
                m.insert("server".into(), json!(server));
                m.insert("tool".into(), json!(tool));
                let args: Map<String, Value> =
                    args.iter().map(|(n, b)| (n.clone(), b.to_json())).collect();
                m.insert("args".into(), Value::Object(args));
            }
            BlockKind::Repeat { count, body } => {
                m.insert("count".into(), count.to_json());
                m.insert("body".into(), list(body));
            }
            BlockKind::If {
                condition,
                then,
                otherwise,
            } => {
                m.insert("condition".into(), condition.to_json());
                m.insert("then".into(), list(then));
                m.insert("else".into(), list(otherwise));
            }
            BlockKind::SetVar { name, value } => {
                m.insert("name".into(), json!(name));
                m.insert("value".into(), value.to_json());
            }
            BlockKind::VarRef { name } => {
                m.insert("name".into(), json!(name));
            }
            BlockKind::Literal { value } => {
                m.insert("value".into(), value.to_json());
            }
            BlockKind::BinOp { op, left, right } => {
                m.insert("op".into(), json!(op.name()));
                m.insert("left".into(), left.to_json());
                if let Some(r) = right {
                    m.insert("right".into(), r.to_json());
                }
            }
            BlockKind::Log { value } => {
                m.insert("value".into(), value.to_json());
            }
        }
        Value::Object(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workflow {
    pub version: u64,
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub block_id: Option<String>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.block_id {
            Some(id) => write!(f, "block {id}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkflowError {
    #[error("workflow is not valid JSON: {0}")]
    Json(String),
    #[error("invalid workflow: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Issue>),
}

impl WorkflowError {
    pub fn issues(&self) -> Vec<Issue> {
        match self {
            WorkflowError::Json(m) => vec![Issue {
                block_id: None,
                message: m.clone(),
            }],
            WorkflowError::Invalid(v) => v.clone(),
        }
    }
}

struct Reader {
    issues: Vec<Issue>,
}

impl Reader {
    fn issue(&mut self, id: Option<&str>, message: impl Into<String>) {
        self.issues.push(Issue {
            block_id: id.map(str::to_owned),
            message: message.into(),
        });
    }

    fn block(&mut self, v: &Value, fallback_id: &str) -> Option<Block> {
        if let Some(value) = Scalar::from_json(v) {
            return Some(Block::literal(fallback_id, value));
        }
        let Some(obj) = v.as_object() else {
            self.issue(Some(fallback_id), "expected a block object or a scalar");
            return None;
        };
        let id = match obj.get("id") {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            _ => {
                self.issue(Some(fallback_id), "block needs a non-empty string id");
                return None;
            }
        };
        let kind_name = obj.get("kind").and_then(Value::as_str).unwrap_or("");
        let idr = Some(id.as_str());
        let kind = match kind_name {
            "tool_call" => {
                let server = self.string_field(obj, "server", &id)?;
                let tool = self.string_field(obj, "tool", &id)?;
                let mut args = Vec::new();
                match obj.get("args") {
                    None | Some(Value::Null) => {}
                    Some(Value::Object(m)) => {
                        for (name, v) in m {
                            if let Some(b) = self.block(v, &format!("{id}.{name}")) {
                                args.push((name.clone(), b));
                            }
                        }
                    }
                    Some(_) => {
                        self.issue(idr, "args must be an object");
                        return None;
                    }
                }
                BlockKind::ToolCall { server, tool, args }
            }
            "repeat" => BlockKind::Repeat {
                count: Box::new(self.child(obj, "count", &id)?),
                body: self.list(obj, "body", &id)?,
            },
            "if" => BlockKind::If {
                condition: Box::new(self.child(obj, "condition", &id)?),
                then: self.list(obj, "then", &id)?,
                otherwise: self.list(obj, "else", &id)?,
            },
            "set_var" => BlockKind::SetVar {
                name: self.string_field(obj, "name", &id)?,
                value: Box::new(self.child(obj, "value", &id)?),
            },
            "var_ref" => BlockKind::VarRef {
                name: self.string_field(obj, "name", &id)?,
            },
            "literal" => match obj.get("value").and_then(Scalar::from_json) {
                Some(value) => BlockKind::Literal { value },
                None => {
                    self.issue(idr, "literal value must be a number, string or boolean");
                    return None;
                }
            },
            "binop" => {
                let op_name = obj.get("op").and_then(Value::as_str).unwrap_or("");
                let Some(op) = BinOp::parse(op_name) else {
                    self.issue(idr, format!("unknown operator {op_name:?}"));
                    return None;
                };
                let left = Box::new(self.child(obj, "left", &id)?);
                let right = match (op, obj.get("right")) {
                    (BinOp::Neg, None) => None,
                    (BinOp::Neg, Some(_)) => {
                        self.issue(idr, "neg takes only a left operand");
                        return None;
                    }
                    (_, _) => Some(Box::new(self.child(obj, "right", &id)?)),
                };
                BlockKind::BinOp { op, left, right }
            }
            "log" => BlockKind::Log {
                value: Box::new(self.child(obj, "value", &id)?),
            },
            other => {
                self.issue(idr, format!("unknown block kind {other:?}"));
                return None;
            }
        };
        Some(Block { id, kind })
    }

    fn string_field(&mut self, obj: &Map<String, Value>, key: &str, id: &str) -> Option<String> {
        match obj.get(key) {
            Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
            _ => {
                self.issue(Some(id), format!("{key} must be a non-empty string"));
                None
            }
        }
    }

    fn child(&mut self, obj: &Map<String, Value>, key: &str, id: &str) -> Option<Block> {
        match obj.get(key) {
            Some(v) => self.block(v, &format!("{id}.{key}")),
            None => {
                self.issue(Some(id), format!("missing {key}"));
                None
            }
        }
    }

    fn list(&mut self, obj: &Map<String, Value>, key: &str, id: &str) -> Option<Vec<Block>> {
        match obj.get(key) {
            None | Some(Value::Null) => Some(Vec::new()),
            Some(Value::Array(items)) => {
                let before = self.issues.len();
                let blocks: Vec<Block> = items
                    .iter()
                    .enumerate()
                    .filter_map(|(i, v)| self.block(v, &format!("{id}.{key}[{i}]")))
                    .collect();
                (self.issues.len() == before).then_some(blocks)
            }
            Some(_) => {
                self.issue(Some(id), format!("{key} must be a list of blocks"));
                None
            }
        }
    }
}

/// Static type of an expression, as far as it is known before running.
#[derive(Debug, Clone, Copy, PartialEq)]
enum StaticType {
    Number,
    Bool,
    Text,
    Dynamic,
}

fn static_type(b: &Block) -> StaticType {
    match &b.kind {
        BlockKind::Literal {
            value: Scalar::Number(_),
        } => StaticType::Number,
        BlockKind::Literal {
            value: Scalar::Bool(_),
        } => StaticType::Bool,
        BlockKind::Literal {
            value: Scalar::Text(_),
        } => StaticType::Text,
        BlockKind::BinOp { op, .. } => match op {
            BinOp::Lt | BinOp::Gt | BinOp::Eq => StaticType::Bool,
            _ => StaticType::Number,
        },
        _ => StaticType::Dynamic,
    }
}

impl Workflow {
    /// Structural parse only; see [`Workflow::validate`] for catalog checks.
    pub fn from_json_str(doc: &str) -> Result<Self, WorkflowError> {
        let value: Value = serde_json::from_str(doc).map_err(|e| WorkflowError::Json(e.to_string()))?;
        Self::from_value(&value)
    }

    pub fn from_value(value: &Value) -> Result<Self, WorkflowError> {
        let mut r = Reader { issues: Vec::new() };
        let Some(obj) = value.as_object() else {
            r.issue(None, "workflow must be a JSON object");
            return Err(WorkflowError::Invalid(r.issues));
        };
        let version = obj.get("version").and_then(Value::as_u64);
        if version != Some(WORKFLOW_VERSION) {
            r.issue(None, format!("version must be {WORKFLOW_VERSION}"));
        }
        let blocks = match obj.get("blocks") {
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .filter_map(|(i, v)| r.block(v, &format!("blocks[{i}]")))
                .collect(),
            _ => {
                r.issue(None, "blocks must be a list");
                Vec::new()
            }
        };
        if r.issues.is_empty() {
            Ok(Self {
                version: WORKFLOW_VERSION,
                blocks,
            })
        } else {
            Err(WorkflowError::Invalid(r.issues))
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "version": self.version,
            "blocks": self.blocks.iter().map(Block::to_json).collect::<Vec<_>>(),
        })
    }

    pub fn all_blocks(&self) -> Vec<&Block> {
        let mut out = Vec::new();
        for b in &self.blocks {
            b.walk(&mut out);
        }
        out
    }

    /// Server aliases referenced by tool_call blocks.
    pub fn servers(&self) -> BTreeSet<String> {
        self.all_blocks()
            .into_iter()
            .filter_map(|b| match &b.kind {
                BlockKind::ToolCall { server, .. } => Some(server.clone()),
                _ => None,
            })
            .collect()
    }

    /// Checks ids, block positions, tool references and argument names and
    /// literal types against `catalog`. Performs no tool calls.
    pub fn validate(&self, catalog: &[ToolRef]) -> Result<(), Vec<Issue>> {
        let mut issues = Vec::new();
        let mut push = |id: &str, message: String| {
            issues.push(Issue {
                block_id: Some(id.to_owned()),
                message,
            })
        };
        let mut seen = HashSet::new();
        for b in self.all_blocks() {
            if !seen.insert(b.id.as_str()) {
                push(&b.id, "duplicate block id".into());
            }
        }
        let servers: HashSet<&str> = catalog.iter().map(|t| t.server_alias.as_str()).collect();

        fn statements<'a>(blocks: &'a [Block], out: &mut Vec<&'a Block>) {
            out.extend(blocks);
        }
        let mut stmt_positions = Vec::new();
        let mut expr_positions = Vec::new();
        statements(&self.blocks, &mut stmt_positions);
        for b in self.all_blocks() {
            match &b.kind {
                BlockKind::ToolCall { args, .. } => expr_positions.extend(args.iter().map(|(_, a)| a)),
                BlockKind::Repeat { count, body } => {
                    expr_positions.push(&**count);
                    statements(body, &mut stmt_positions);
                }
                BlockKind::If {
                    condition,
                    then,
                    otherwise,
                } => {
                    expr_positions.push(&**condition);
                    statements(then, &mut stmt_positions);
                    statements(otherwise, &mut stmt_positions);
                }
                BlockKind::SetVar { value, .. } | BlockKind::Log { value } => {
                    expr_positions.push(&**value)
                }
                BlockKind::BinOp { left, right, .. } => {
                    expr_positions.push(&**left);
                    expr_positions.extend(right.as_deref());
                }
                BlockKind::VarRef { .. } | BlockKind::Literal { .. } => {}
            }
        }
        for b in stmt_positions {
            if !b.kind.is_statement() {
                push(&b.id, format!("{} block cannot stand alone as a statement", b.kind.name()));
            }
        }
        for b in expr_positions {
            if !b.kind.is_expression() {
                push(&b.id, format!("{} block does not produce a value", b.kind.name()));
            }
        }

        for b in self.all_blocks() {
            match &b.kind {
                BlockKind::Repeat { count, .. } => match static_type(count) {
                    StaticType::Text | StaticType::Bool => {
                        push(&b.id, "repeat count must be numeric".into())
                    }
                    StaticType::Number => {
                        if let BlockKind::Literal {
                            value: Scalar::Number(n),
                        } = count.kind
                        {
                            if n < 0.0 || n.fract() != 0.0 {
                                push(&b.id, format!("repeat count {n} is not a non-negative integer"));
                            }
                        }
                    }
                    StaticType::Dynamic => {}
                },
                BlockKind::BinOp { op, left, right } => {
                    let arithmetic = !matches!(op, BinOp::Lt | BinOp::Gt | BinOp::Eq);
                    let operands = std::iter::once(&**left).chain(right.as_deref());
                    for o in operands {
                        if arithmetic && static_type(o) == StaticType::Bool {
                            push(&b.id, format!("{} needs numeric operands", op.name()));
                        }
                    }
                }
                BlockKind::ToolCall { server, tool, args } => {
                    if !servers.contains(server.as_str()) {
                        push(&b.id, format!("unknown server {server:?}"));
                        continue;
                    }
                    let Some(desc) = catalog
                        .iter()
                        .find(|t| t.server_alias == *server && t.tool_name == *tool)
                    else {
                        push(&b.id, format!("unknown tool {server}.{tool}"));
                        continue;
                    };
                    for m in check_args(&desc.descriptor, args) {
                        push(&b.id, m);
                    }
                }
                _ => {}
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }
}

fn check_args(desc: &ToolDescriptor, args: &[(String, Block)]) -> Vec<String> {
    let schema = &desc.input_schema;
    let mut out = Vec::new();
    if !schema.is_supported() {
        out.push(format!(
            "tool {} has an unsupported input schema: {}",
            desc.name,
            schema.unsupported_reasons().join(", ")
        ));
        return out;
    }
    let mut names = HashSet::new();
    for (name, expr) in args {
        if !names.insert(name.as_str()) {
            out.push(format!("argument {name} given twice"));
        }
        let Some(prop) = schema.get(name) else {
            out.push(format!("unexpected argument {name}"));
            continue;
        };
        let Some(ty) = prop.scalar_type() else {
            continue;
        };
        let st = static_type(expr);
        let ok = match (ty, st) {
            (_, StaticType::Dynamic) => true,
            (ScalarType::Number, StaticType::Number) => true,
            (ScalarType::Integer, StaticType::Number) => match &expr.kind {
                BlockKind::Literal {
                    value: Scalar::Number(n),
                } => n.fract() == 0.0,
                _ => true,
            },
            (ScalarType::String, StaticType::Text) => true,
            (ScalarType::Boolean, StaticType::Bool) => true,
            _ => false,
        };
        if !ok {
            out.push(format!(
                "type mismatch for {name}: expected {}, got {}",
                ty.as_str(),
                match st {
                    StaticType::Number => "number",
                    StaticType::Bool => "boolean",
                    StaticType::Text => "string",
                    StaticType::Dynamic => "value",
                }
            ));
        }
    }
    for (name, _) in &schema.properties {
        if schema.is_required(name) && !names.contains(name.as_str()) {
            out.push(format!("missing argument {name}"));
        }
    }
    out
}

/// Parses `doc` and validates it against `catalog`.
pub fn parse_workflow(doc: &str, catalog: &[ToolRef]) -> Result<Workflow, WorkflowError> {
    let wf = Workflow::from_json_str(doc)?;
    wf.validate(catalog).map_err(WorkflowError::Invalid)?;
    Ok(wf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RunStarted,
    BlockStarted,
    BlockFinished,
    BlockFailed,
    RunFinished,
    RunCancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        self != RunStatus::Running
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventOutput {
    ToolResult(ToolCallResult),
    Value(Scalar),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionEvent {
    pub run_id: String,
    pub seq: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<EventOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<RunStatus>,
    pub timestamp: DateTime<Utc>,
}

impl ExecutionEvent {
    /// The event with its timestamp zeroed, for comparisons across runs.
    pub fn without_timestamp(&self) -> Self {
        Self {
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunState {
    pub run_id: String,
    pub status: RunStatus,
    pub variables: BTreeMap<String, Scalar>,
    pub error: Option<String>,
}

/// Cancellation flag shared between a run and its controllers.
#[derive(Debug, Clone, Default)]
pub struct RunControl {
    cancelled: Arc<AtomicBool>,
}

impl RunControl {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::SeqCst)
    }
}

enum Halt {
    Failed(String),
    Cancelled,
}

const CANCELLED: &str = "cancelled";

type BoxFuture<'a, T> = Pin<Box<dyn Future<Output = T> + Send + 'a>>;

struct Interpreter<'a> {
    host: &'a Host,
    control: &'a RunControl,
    sink: &'a mut (dyn FnMut(ExecutionEvent) + Send),
    run_id: String,
    seq: u64,
    vars: BTreeMap<String, Scalar>,
}

impl Interpreter<'_> {
    fn emit(
        &mut self,
        kind: EventKind,
        block_id: Option<&str>,
        output: Option<EventOutput>,
        error: Option<String>,
        status: Option<RunStatus>,
    ) {
        let ev = ExecutionEvent {
            run_id: self.run_id.clone(),
            seq: self.seq,
            kind,
            block_id: block_id.map(str::to_owned),
            output,
            error,
            status,
            timestamp: Utc::now(),
        };
        self.seq += 1;
        (self.sink)(ev);
    }

    fn start(&mut self, block: &Block) -> Result<(), Halt> {
        if self.control.is_cancelled() {
            return Err(Halt::Cancelled);
        }
        self.emit(EventKind::BlockStarted, Some(&block.id), None, None, None);
        Ok(())
    }

    fn finish(&mut self, block: &Block, outcome: &Result<Option<EventOutput>, (Halt, Option<EventOutput>)>) {
        match outcome {
            Ok(output) => self.emit(EventKind::BlockFinished, Some(&block.id), output.clone(), None, None),
            Err((halt, output)) => {
                let cause = match halt {
                    Halt::Failed(m) => m.clone(),
                    Halt::Cancelled => CANCELLED.into(),
                };
                self.emit(EventKind::BlockFailed, Some(&block.id), output.clone(), Some(cause), None)
            }
        }
    }

    fn statements<'b>(&'b mut self, blocks: &'b [Block]) -> BoxFuture<'b, Result<(), Halt>> {
        Box::pin(async move {
            for b in blocks {
                self.statement(b).await?;
            }
            Ok(())
        })
    }

    fn statement<'b>(&'b mut self, block: &'b Block) -> BoxFuture<'b, Result<(), Halt>> {
        Box::pin(async move {
            if let BlockKind::ToolCall { .. } = block.kind {
                return self.tool_call(block).await.map(|_| ());
            }
            self.start(block)?;
            let outcome = self.statement_body(block).await;
            self.finish(block, &outcome);
            outcome.map(|_| ()).map_err(|(h, _)| h)
        })
    }

    async fn statement_body(&mut self, block: &Block) -> Result<Option<EventOutput>, (Halt, Option<EventOutput>)> {
        let no_output = |h| (h, None);
        match &block.kind {
            BlockKind::Repeat { count, body } => {
                let n = self.eval(count).await.map_err(no_output)?;
                let n = n.as_number().map_err(|m| (Halt::Failed(m), None))?;
                if n < 0.0 || n.fract() != 0.0 {
                    return Err((
                        Halt::Failed(format!("repeat count {n} is not a non-negative integer")),
                        None,
                    ));
                }
                for _ in 0..n as u64 {
                    self.statements(body).await.map_err(no_output)?;
                }
                Ok(None)
            }
            BlockKind::If {
                condition,
                then,
                otherwise,
            } => {
                let c = self.eval(condition).await.map_err(no_output)?;
                let branch = if c.truthy() { then } else { otherwise };
                self.statements(branch).await.map_err(no_output)?;
                Ok(Some(EventOutput::Value(Scalar::Bool(c.truthy()))))
            }
            BlockKind::SetVar { name, value } => {
                let v = self.eval(value).await.map_err(no_output)?;
                self.vars.insert(name.clone(), v.clone());
                Ok(Some(EventOutput::Value(v)))
            }
            BlockKind::Log { value } => {
                let v = self.eval(value).await.map_err(no_output)?;
                Ok(Some(EventOutput::Value(Scalar::Text(v.to_string()))))
            }
            other => Err((
                Halt::Failed(format!("{} block cannot stand alone as a statement", other.name())),
                None,
            )),
        }
    }

    fn eval<'b>(&'b mut self, block: &'b Block) -> BoxFuture<'b, Result<Scalar, Halt>> {
        Box::pin(async move {
            match &block.kind {
                BlockKind::Literal { value } => Ok(value.clone()),
                BlockKind::VarRef { name } => self
                    .vars
                    .get(name)
                    .cloned()
                    .ok_or_else(|| Halt::Failed(format!("block {}: undefined variable {name}", block.id))),
                BlockKind::BinOp { op, left, right } => {
                    let l = self.eval(left).await?;
                    let r = match right {
                        Some(r) => Some(self.eval(r).await?),
                        None => None,
                    };
                    binop(*op, &l, r.as_ref())
                        .map_err(|m| Halt::Failed(format!("block {}: {m}", block.id)))
                }
                BlockKind::ToolCall { .. } => self.tool_call(block).await,
                other => Err(Halt::Failed(format!(
                    "block {}: {} block does not produce a value",
                    block.id,
                    other.name()
                ))),
            }
        })
    }

    async fn tool_call(&mut self, block: &Block) -> Result<Scalar, Halt> {
        let BlockKind::ToolCall { server, tool, args } = &block.kind else {
            unreachable!("tool_call only");
        };
        self.start(block)?;
        let outcome = self.tool_call_body(server, tool, args).await;
        let event_outcome = match &outcome {
            Ok(result) => Ok(Some(EventOutput::ToolResult(result.clone()))),
            Err((h, result)) => Err((
                match h {
                    Halt::Failed(m) => Halt::Failed(m.clone()),
                    Halt::Cancelled => Halt::Cancelled,
                },
                result.clone().map(EventOutput::ToolResult),
            )),
        };
        self.finish(block, &event_outcome);
        match outcome {
            Ok(result) => Ok(Scalar::Text(result.first_text().unwrap_or("").to_owned())),
            Err((h, _)) => Err(h),
        }
    }

    async fn tool_call_body(
        &mut self,
        server: &str,
        tool: &str,
        args: &[(String, Block)],
    ) -> Result<ToolCallResult, (Halt, Option<ToolCallResult>)> {
        let desc = self
            .host
            .descriptor(server, tool)
            .map_err(|e| (Halt::Failed(e.to_string()), None))?;
        let mut json_args = Map::new();
        for (name, expr) in args {
            let v = self.eval(expr).await.map_err(|h| (h, None))?;
            let ty = desc
                .input_schema
                .get(name)
                .and_then(|p| match p.kind() {
                    PropertyKind::Scalar(t) => Some(*t),
                    PropertyKind::Unsupported(_) => None,
                });
            let converted = convert_arg(&v, ty).map_err(|m| {
                (Halt::Failed(format!("argument {name}: {m}")), None)
            })?;
            json_args.insert(name.clone(), converted);
        }
        let result = self
            .host
            .call_tool(server, tool, json_args)
            .await
            .map_err(|e| (Halt::Failed(e.to_string()), None))?;
        if result.is_error {
            let msg = result.first_text().unwrap_or("tool reported an error").to_owned();
            return Err((Halt::Failed(format!("{server}.{tool}: {msg}")), Some(result)));
        }
        Ok(result)
    }
}

fn convert_arg(v: &Scalar, ty: Option<ScalarType>) -> Result<Value, String> {
    match ty {
        None => Ok(v.to_json()),
        Some(ScalarType::Number) => v.as_number().map(number_json),
        Some(ScalarType::Integer) => {
            let n = v.as_number()?;
            if n.fract() != 0.0 {
                return Err(format!("{n} is not an integer"));
            }
            Ok(number_json(n))
        }
        Some(ScalarType::String) => Ok(Value::String(v.to_string())),
        Some(ScalarType::Boolean) => match v {
            Scalar::Bool(b) => Ok(Value::Bool(*b)),
            Scalar::Text(t) if t == "true" || t == "false" => Ok(Value::Bool(t == "true")),
            other => Err(format!("expected a boolean, got {other}")),
        },
    }
}

fn binop(op: BinOp, l: &Scalar, r: Option<&Scalar>) -> Result<Scalar, String> {
    let rhs = || r.ok_or_else(|| format!("{} needs a right operand", op.name()));
    let value = match op {
        BinOp::Neg => -l.as_number()?,
        BinOp::Eq => {
            let r = rhs()?;
            let eq = match (l, r) {
                (Scalar::Text(a), Scalar::Text(b)) => a == b,
                (Scalar::Bool(a), Scalar::Bool(b)) => a == b,
                _ => match (l.as_number(), r.as_number()) {
                    (Ok(a), Ok(b)) => a == b,
                    _ => false,
                },
            };
            return Ok(Scalar::Bool(eq));
        }
        BinOp::Lt => return Ok(Scalar::Bool(l.as_number()? < rhs()?.as_number()?)),
        BinOp::Gt => return Ok(Scalar::Bool(l.as_number()? > rhs()?.as_number()?)),
        BinOp::Add => l.as_number()? + rhs()?.as_number()?,
        BinOp::Sub => l.as_number()? - rhs()?.as_number()?,
        BinOp::Mul => l.as_number()? * rhs()?.as_number()?,
        BinOp::Div => {
            let d = rhs()?.as_number()?;
            if d == 0.0 {
                return Err("division by zero".into());
            }
            l.as_number()? / d
        }
    };
    if !value.is_finite() {
        return Err(format!("{} produced a non-finite result", op.name()));
    }
    Ok(Scalar::Number(value))
}

/// Runs `wf` depth-first. Every event reaches `sink` before the next block
/// starts. Cancellation is checked before each block; a tool call already in
/// flight is always awaited.
pub async fn execute(
    wf: &Workflow,
    host: &Host,
    run_id: &str,
    control: &RunControl,
    sink: &mut (dyn FnMut(ExecutionEvent) + Send),
) -> RunState {
    let mut it = Interpreter {
        host,
        control,
        sink,
        run_id: run_id.to_owned(),
        seq: 0,
        vars: BTreeMap::new(),
    };
    it.emit(EventKind::RunStarted, None, None, None, Some(RunStatus::Running));
    let outcome = it.statements(&wf.blocks).await;
    let (status, error) = match outcome {
        Ok(()) => (RunStatus::Succeeded, None),
        Err(Halt::Failed(m)) => (RunStatus::Failed, Some(m)),
        Err(Halt::Cancelled) => (RunStatus::Cancelled, None),
    };
    let kind = if status == RunStatus::Cancelled {
        EventKind::RunCancelled
    } else {
        EventKind::RunFinished
    };
    it.emit(kind, None, None, error.clone(), Some(status));
    RunState {
        run_id: run_id.to_owned(),
        status,
        variables: it.vars,
        error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_number_rule() {
        assert_eq!(trailing_number("deltaE = 12.34"), Some(12.34));
        assert_eq!(trailing_number("-3"), Some(-3.0));
        assert_eq!(trailing_number("red = 40\n"), Some(40.0));
        assert_eq!(trailing_number("x=1e-3"), Some(1e-3));
        assert_eq!(trailing_number("sum = .5"), Some(0.5));
        assert_eq!(trailing_number("#6A4C9C"), None);
        assert_eq!(trailing_number("abc12"), None);
        assert_eq!(trailing_number("no number"), None);
        assert_eq!(trailing_number(""), None);
    }

    #[test]
    fn binops() {
        let n = Scalar::Number;
        assert_eq!(binop(BinOp::Add, &n(1.0), Some(&Scalar::Text("v = 2".into()))), Ok(n(3.0)));
        assert_eq!(binop(BinOp::Neg, &n(4.0), None), Ok(n(-4.0)));
        assert!(binop(BinOp::Div, &n(1.0), Some(&n(0.0))).is_err());
        assert_eq!(binop(BinOp::Lt, &n(1.0), Some(&n(2.0))), Ok(Scalar::Bool(true)));
        assert_eq!(
            binop(BinOp::Eq, &Scalar::Text("a".into()), Some(&Scalar::Text("a".into()))),
            Ok(Scalar::Bool(true))
        );
        assert!(binop(BinOp::Mul, &Scalar::Text("#ABC".into()), Some(&n(1.0))).is_err());
    }

    #[test]
    fn document_roundtrip() {
        let doc = json!({"version": 1, "blocks": [
            {"id": "r", "kind": "repeat", "count": 2, "body": [
                {"id": "s", "kind": "set_var", "name": "x", "value":
                    {"id": "b", "kind": "binop", "op": "neg", "left": {"id": "v", "kind": "literal", "value": 3}}},
                {"id": "c", "kind": "if", "condition": {"id": "cmp", "kind": "binop", "op": "lt",
                    "left": {"id": "x", "kind": "var_ref", "name": "x"}, "right": 0},
                 "then": [{"id": "l", "kind": "log", "value": "neg"}], "else": []}
            ]}
        ]});
        let wf = Workflow::from_value(&doc).unwrap();
        let again = Workflow::from_value(&wf.to_json()).unwrap();
        assert_eq!(wf, again);
        assert_eq!(wf.all_blocks().len(), 11);
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(Workflow::from_json_str("{"), Err(WorkflowError::Json(_))));
        let err = Workflow::from_value(&json!({"version": 2, "blocks": [{"kind": "log"}]})).unwrap_err();
        assert_eq!(err.issues().len(), 2);
        let err = Workflow::from_value(&json!({"version": 1, "blocks": [
            {"id": "a", "kind": "binop", "op": "pow", "left": 1, "right": 2}
        ]}))
        .unwrap_err();
        assert_eq!(err.issues()[0].block_id.as_deref(), Some("a"));
    }

    #[test]
    fn position_checks() {
        let wf = Workflow::from_value(&json!({"version": 1, "blocks": [
            {"id": "a", "kind": "literal", "value": 1},
            {"id": "b", "kind": "log", "value": {"id": "c", "kind": "log", "value": 1}},
            {"id": "d", "kind": "repeat", "count": "3", "body": []},
            {"id": "d", "kind": "log", "value": 1}
        ]}))
        .unwrap();
        let issues = wf.validate(&[]).unwrap_err();
        let ids: Vec<_> = issues.iter().map(|i| i.block_id.clone().unwrap()).collect();
        assert!(ids.contains(&"a".to_owned()));
        assert!(ids.contains(&"c".to_owned()));
        assert_eq!(ids.iter().filter(|i| *i == "d").count(), 2);
    }
}
