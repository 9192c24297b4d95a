//! Tool descriptors and the scalar subset of JSON Schema used for tool inputs.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};

/// Input types that can be rendered as simple form fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    Number,
    Integer,
    String,
    Boolean,
}

impl ScalarType {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalarType::Number => "number",
            ScalarType::Integer => "integer",
            ScalarType::String => "string",
            ScalarType::Boolean => "boolean",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "number" => ScalarType::Number,
            "integer" => ScalarType::Integer,
            "string" => ScalarType::String,
            "boolean" => ScalarType::Boolean,
            _ => return None,
        })
    }

    pub fn accepts(self, value: &Value) -> bool {
        match self {
            ScalarType::Number => value.is_number(),
            ScalarType::Integer => match value {
                Value::Number(n) => {
                    n.is_i64() || n.is_u64() || n.as_f64().is_some_and(|f| f.fract() == 0.0)
                }
                _ => false,
            },
            ScalarType::String => value.is_string(),
            ScalarType::Boolean => value.is_boolean(),
        }
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropertyKind {
    Scalar(ScalarType),
    /// Anything outside the scalar set; the string names what was found.
    Unsupported(String),
}

/// One named property. The original JSON is retained so discovery stays
/// lossless even for unsupported shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertySchema {
    kind: PropertyKind,
    raw: Map<String, Value>,
}

impl PropertySchema {
    pub fn scalar(ty: ScalarType) -> Self {
        let mut raw = Map::new();
        raw.insert("type".into(), Value::String(ty.as_str().into()));
        Self {
            kind: PropertyKind::Scalar(ty),
            raw,
        }
    }

    pub fn number() -> Self {
        Self::scalar(ScalarType::Number)
    }

    pub fn integer() -> Self {
        Self::scalar(ScalarType::Integer)
    }

    pub fn string() -> Self {
        Self::scalar(ScalarType::String)
    }

    pub fn boolean() -> Self {
        Self::scalar(ScalarType::Boolean)
    }

    pub fn describe(mut self, text: impl Into<String>) -> Self {
        self.raw.insert("description".into(), Value::String(text.into()));
        self
    }

    pub fn with_default(mut self, value: Value) -> Self {
        self.raw.insert("default".into(), value);
        self
    }

    pub fn from_json(value: Value) -> Self {
        let raw = match value {
            Value::Object(map) => map,
            other => {
                let mut map = Map::new();
                map.insert("schema".into(), other);
                return Self {
                    kind: PropertyKind::Unsupported("non-object schema".into()),
                    raw: map,
                };
            }
        };
        let kind = if raw.contains_key("enum") {
            PropertyKind::Unsupported("enum".into())
        } else {
            match raw.get("type") {
                Some(Value::String(t)) => match ScalarType::from_name(t) {
                    Some(ty) => PropertyKind::Scalar(ty),
                    None => PropertyKind::Unsupported(t.clone()),
                },
                Some(_) => PropertyKind::Unsupported("union type".into()),
                None => PropertyKind::Unsupported("untyped".into()),
            }
        };
        Self { kind, raw }
    }

    pub fn kind(&self) -> &PropertyKind {
        &self.kind
    }

    pub fn scalar_type(&self) -> Option<ScalarType> {
        match self.kind {
            PropertyKind::Scalar(t) => Some(t),
            PropertyKind::Unsupported(_) => None,
        }
    }

    pub fn description(&self) -> Option<&str> {
        self.raw.get("description").and_then(Value::as_str)
    }

    pub fn default_value(&self) -> Option<&Value> {
        self.raw.get("default")
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.raw.clone())
    }
}

/// Object schema with ordered named properties.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InputSchema {
    pub properties: Vec<(String, PropertySchema)>,
    pub required: Vec<String>,
    /// Structural defects found while reading a discovered schema.
    pub defects: Vec<String>,
}

impl InputSchema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn property(mut self, name: impl Into<String>, schema: PropertySchema, required: bool) -> Self {
        let name = name.into();
        if required {
            self.required.push(name.clone());
        }
        self.properties.push((name, schema));
        self
    }

    pub fn get(&self, name: &str) -> Option<&PropertySchema> {
        self.properties
            .iter()
            .find_map(|(n, p)| (n == name).then_some(p))
    }

    pub fn is_required(&self, name: &str) -> bool {
        self.required.iter().any(|r| r == name)
    }

    /// Reasons this schema cannot be rendered with scalar form fields.
    /// Empty means every property is a supported scalar.
    pub fn unsupported_reasons(&self) -> Vec<String> {
        let mut reasons = self.defects.clone();
        for (name, prop) in &self.properties {
            if let PropertyKind::Unsupported(what) = prop.kind() {
                reasons.push(format!("{name}: {what}"));
            }
        }
        reasons
    }

    pub fn is_supported(&self) -> bool {
        self.unsupported_reasons().is_empty()
    }

    pub fn from_json(value: &Value) -> Self {
        let mut schema = InputSchema::default();
        let Some(obj) = value.as_object() else {
            schema.defects.push("input schema is not an object".into());
            return schema;
        };
        if let Some(t) = obj.get("type") {
            if t != "object" {
                schema.defects.push(format!("input schema type is {t}, expected object"));
            }
        }
        match obj.get("properties") {
            None => {}
            Some(Value::Object(props)) => {
                for (name, prop) in props {
                    schema
                        .properties
                        .push((name.clone(), PropertySchema::from_json(prop.clone())));
                }
            }
            Some(_) => schema.defects.push("properties is not an object".into()),
        }
        match obj.get("required") {
            None => {}
            Some(Value::Array(items)) => {
                for item in items {
                    match item.as_str() {
                        Some(name) if schema.get(name).is_some() => {
                            schema.required.push(name.to_owned())
                        }
                        Some(name) => schema
                            .defects
                            .push(format!("required property {name} is not declared")),
                        None => schema.defects.push("required list holds a non-string".into()),
                    }
                }
            }
            Some(_) => schema.defects.push("required is not an array".into()),
        }
        schema
    }

    pub fn to_json(&self) -> Value {
        let props: Map<String, Value> = self
            .properties
            .iter()
            .map(|(n, p)| (n.clone(), p.to_json()))
            .collect();
        json!({
            "type": "object",
            "properties": props,
            "required": self.required,
        })
    }
}

impl Serialize for InputSchema {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for InputSchema {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        Ok(InputSchema::from_json(&value))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(rename = "inputSchema", default)]
    pub input_schema: InputSchema,
}

impl ToolDescriptor {
    pub fn new(name: impl Into<String>, description: impl Into<String>, input_schema: InputSchema) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            input_schema,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NotAnObject,
    Missing { property: String },
    TypeMismatch {
        property: String,
        expected: String,
        found: String,
    },
    Unexpected { property: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotAnObject => f.write_str("arguments must be a JSON object"),
            Violation::Missing { property } => write!(f, "missing {property}"),
            Violation::TypeMismatch {
                property,
                expected,
                found,
            } => write!(f, "type mismatch for {property}: expected {expected}, got {found}"),
            Violation::Unexpected { property } => write!(f, "unexpected argument {property}"),
        }
    }
}

fn json_type_name(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Checks `args` against `schema`. Never panics; returns every violation found.
/// `null` arguments are treated as an empty object.
pub fn validate_args(schema: &InputSchema, args: &Value) -> Result<(), Vec<Violation>> {
    let empty = Map::new();
    let obj = match args {
        Value::Object(map) => map,
        Value::Null => &empty,
        _ => return Err(vec![Violation::NotAnObject]),
    };
    let mut violations = Vec::new();
    for name in &schema.required {
        if !obj.contains_key(name) {
            violations.push(Violation::Missing {
                property: name.clone(),
            });
        }
    }
    for (name, value) in obj {
        let Some(prop) = schema.get(name) else {
            violations.push(Violation::Unexpected {
                property: name.clone(),
            });
            continue;
        };
        let ok = match prop.kind() {
            PropertyKind::Scalar(ty) => ty.accepts(value),
            PropertyKind::Unsupported(what) => match what.as_str() {
                "object" => value.is_object(),
                "array" => value.is_array(),
                _ => !value.is_null(),
            },
        };
        if !ok {
            let expected = match prop.kind() {
                PropertyKind::Scalar(ty) => ty.as_str().to_owned(),
                PropertyKind::Unsupported(what) => what.clone(),
            };
            violations.push(Violation::TypeMismatch {
                property: name.clone(),
                expected,
                found: json_type_name(value).into(),
            });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
