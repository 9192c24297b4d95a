//! UI-agnostic block palette generated from discovered tool schemas.

use labmcp_protocol::{PropertyKind, ScalarType};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::host::ToolRef;
use crate::workflow::{Block, BlockKind, Scalar};

pub const CORE_CATEGORY: &str = "Core";
pub const DECISION_CATEGORY: &str = "NIMO";
pub const UNSUPPORTED: &str = "unsupported input schema";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    NumberInput,
    TextInput,
    Checkbox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Value,
    Statement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Value,
    Statements,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDefinition {
    pub name: String,
    pub kind: FieldKind,
    /// Schema type behind the field: number, integer, string or boolean.
    pub value_type: String,
    pub required: bool,
    pub default: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

/// Socket of a control block that accepts other blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSlot {
    pub name: String,
    pub kind: InputKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDefinition {
    pub block_type: String,
    pub label: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    pub fields: Vec<FieldDefinition>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<InputSlot>,
    pub output: OutputKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<String>,
    pub blocks: Vec<BlockDefinition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolboxWarning {
    pub server: String,
    pub tool: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolboxDocument {
    pub categories: Vec<Category>,
    pub warnings: Vec<ToolboxWarning>,
}

impl ToolboxDocument {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("toolbox serializes")
    }

    pub fn category(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == name)
    }

    pub fn block(&self, block_type: &str) -> Option<&BlockDefinition> {
        self.categories
            .iter()
            .flat_map(|c| &c.blocks)
            .find(|b| b.block_type == block_type)
    }

    pub fn tool_blocks(&self) -> impl Iterator<Item = &BlockDefinition> {
        self.categories
            .iter()
            .flat_map(|c| &c.blocks)
            .filter(|b| b.tool.is_some())
    }
}

fn humanize(name: &str) -> String {
    name.replace(['_', '-'], " ")
}

fn field(name: &str, kind: FieldKind, value_type: &str, default: Value) -> FieldDefinition {
    FieldDefinition {
        name: name.into(),
        kind,
        value_type: value_type.into(),
        required: true,
        default,
        description: None,
    }
}

fn core_block(
    block_type: &str,
    description: &str,
    fields: Vec<FieldDefinition>,
    inputs: &[(&str, InputKind)],
    output: OutputKind,
) -> BlockDefinition {
    BlockDefinition {
        block_type: format!("core.{block_type}"),
        label: humanize(block_type),
        description: description.into(),
        server: None,
        tool: None,
        fields,
        inputs: inputs
            .iter()
            .map(|(n, k)| InputSlot {
                name: (*n).into(),
                kind: *k,
            })
            .collect(),
        output,
    }
}

/// Control-flow and value blocks; each maps onto one workflow block kind
/// (the two literal blocks both map onto `literal`).
pub fn core_blocks() -> Vec<BlockDefinition> {
    use InputKind::{Statements, Value as V};
    vec![
        core_block("repeat", "Run the body a number of times", vec![], &[("count", V), ("body", Statements)], OutputKind::Statement),
        core_block("if", "Run one branch depending on a condition", vec![], &[("condition", V), ("then", Statements), ("else", Statements)], OutputKind::Statement),
        core_block("set_var", "Store a value in a variable", vec![field("name", FieldKind::TextInput, "string", json!(""))], &[("value", V)], OutputKind::Statement),
        core_block("var_ref", "Read a variable", vec![field("name", FieldKind::TextInput, "string", json!(""))], &[], OutputKind::Value),
        core_block("number", "Number literal", vec![field("value", FieldKind::NumberInput, "number", json!(0))], &[], OutputKind::Value),
        core_block("text", "Text literal", vec![field("value", FieldKind::TextInput, "string", json!(""))], &[], OutputKind::Value),
        core_block("binop", "Arithmetic or comparison: add, sub, mul, div, lt, gt, eq, neg", vec![field("op", FieldKind::TextInput, "string", json!("add"))], &[("left", V), ("right", V)], OutputKind::Value),
        core_block("log", "Write a value to the run log", vec![], &[("value", V)], OutputKind::Statement),
    ]
}

fn tool_block(t: &ToolRef) -> Result<BlockDefinition, String> {
    let schema = &t.descriptor.input_schema;
    if !schema.is_supported() {
        return Err(format!(
            "{UNSUPPORTED}: {}",
            schema.unsupported_reasons().join(", ")
        ));
    }
    let mut fields = Vec::new();
    for (name, prop) in &schema.properties {
        let PropertyKind::Scalar(ty) = prop.kind() else {
            return Err(UNSUPPORTED.into());
        };
        let (kind, fallback) = match ty {
            ScalarType::Number | ScalarType::Integer => (FieldKind::NumberInput, json!(0)),
            ScalarType::String => (FieldKind::TextInput, json!("")),
            ScalarType::Boolean => (FieldKind::Checkbox, json!(false)),
        };
        let default = prop
            .default_value()
            .filter(|d| ty.accepts(d))
            .cloned()
            .unwrap_or(fallback);
        fields.push(FieldDefinition {
            name: name.clone(),
            kind,
            value_type: ty.as_str().into(),
            required: schema.is_required(name),
            default,
            description: prop.description().map(str::to_owned),
        });
    }
    Ok(BlockDefinition {
        block_type: format!("{}.{}", t.server_alias, t.tool_name),
        label: humanize(&t.tool_name),
        description: t.descriptor.description.clone(),
        server: Some(t.server_alias.clone()),
        tool: Some(t.tool_name.clone()),
        fields,
        inputs: Vec::new(),
        output: OutputKind::Value,
    })
}

/// One category per server (the decision server's is named "NIMO"), plus
/// "Core". Order: Core, NIMO, then servers in catalog order.
pub fn generate_toolbox(catalog: &[ToolRef], decision_alias: &str) -> ToolboxDocument {
    let mut categories = vec![
        Category {
            name: CORE_CATEGORY.into(),
            server: None,
            blocks: core_blocks(),
        },
        Category {
            name: DECISION_CATEGORY.into(),
            server: None,
            blocks: Vec::new(),
        },
    ];
    let mut warnings = Vec::new();
    for t in catalog {
        let block = match tool_block(t) {
            Ok(b) => b,
            Err(reason) => {
                warnings.push(ToolboxWarning {
                    server: t.server_alias.clone(),
                    tool: t.tool_name.clone(),
                    reason,
                });
                continue;
            }
        };
        if t.server_alias == decision_alias {
            categories[1].server = Some(decision_alias.to_owned());
            categories[1].blocks.push(block);
            continue;
        }
        match categories
            .iter_mut()
            .find(|c| c.server.as_deref() == Some(t.server_alias.as_str()))
        {
            Some(c) => c.blocks.push(block),
            None => categories.push(Category {
                name: t.server_alias.clone(),
                server: Some(t.server_alias.clone()),
                blocks: vec![block],
            }),
        }
    }
    ToolboxDocument {
        categories,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InstantiateError {
    #[error("{0} is a control block; build it with the workflow types")]
    NotATool(String),
    #[error("unknown field {0}")]
    UnknownField(String),
    #[error("field {name}: {message}")]
    BadValue { name: String, message: String },
}

impl BlockDefinition {
    /// Builds a tool_call block from filled field values. Required fields
    /// left empty take their default; optional ones are omitted.
    pub fn instantiate(&self, id: &str, values: &Map<String, Value>) -> Result<Block, InstantiateError> {
        let (Some(server), Some(tool)) = (&self.server, &self.tool) else {
            return Err(InstantiateError::NotATool(self.block_type.clone()));
        };
        if let Some(unknown) = values.keys().find(|k| !self.fields.iter().any(|f| &f.name == *k)) {
            return Err(InstantiateError::UnknownField(unknown.clone()));
        }
        let mut args = Vec::new();
        for f in &self.fields {
            let v = match values.get(&f.name) {
                Some(v) => v,
                None if f.required => &f.default,
                None => continue,
            };
            let bad = |message: &str| InstantiateError::BadValue {
                name: f.name.clone(),
                message: message.into(),
            };
            let scalar = match (f.kind, v) {
                (FieldKind::NumberInput, Value::Number(n)) => {
                    let n = n.as_f64().ok_or_else(|| bad("not a finite number"))?;
                    if f.value_type == "integer" && n.fract() != 0.0 {
                        return Err(bad("expected an integer"));
                    }
                    Scalar::Number(n)
                }
                (FieldKind::TextInput, Value::String(s)) => Scalar::Text(s.clone()),
                (FieldKind::Checkbox, Value::Bool(b)) => Scalar::Bool(*b),
                _ => return Err(bad(&format!("value does not fit a {:?} field", f.kind))),
            };
            args.push((f.name.clone(), Block::literal(format!("{id}.{}", f.name), scalar)));
        }
        Ok(Block::new(
            id,
            BlockKind::ToolCall {
                server: server.clone(),
                tool: tool.clone(),
                args,
            },
        ))
    }
}
