//! Test fixture server: counts every handler invocation, offers a slow tool,
//! a failing tool, and tools with object- and array-typed arguments that block
//! UIs cannot render.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use labmcp_protocol::{
    InputSchema, PropertySchema, ServerError, ServerIdentity, ToolCallResult, ToolDescriptor,
    ToolServer,
};
use parking_lot::Mutex;
use serde_json::json;

use crate::{number_arg, string_arg};

/// Handler invocation counts by tool name.
#[derive(Debug, Default)]
pub struct Counters {
    calls: Mutex<BTreeMap<String, u64>>,
}

impl Counters {
    fn bump(&self, tool: &str) -> u64 {
        let mut calls = self.calls.lock();
        let n = calls.entry(tool.to_owned()).or_default();
        *n += 1;
        *n
    }

    pub fn get(&self, tool: &str) -> u64 {
        self.calls.lock().get(tool).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.calls.lock().values().sum()
    }
}

pub fn descriptors() -> Vec<ToolDescriptor> {
    vec![
        ToolDescriptor::new("tick", "Increment the tick counter", InputSchema::new()),
        ToolDescriptor::new(
            "echo",
            "Return the text unchanged",
            InputSchema::new().property("text", PropertySchema::string(), true),
        ),
        ToolDescriptor::new(
            "add",
            "Add two numbers",
            InputSchema::new()
                .property("a", PropertySchema::number(), true)
                .property("b", PropertySchema::number(), true),
        ),
        ToolDescriptor::new("wash", "Pretend to wash the pipette", InputSchema::new()),
        ToolDescriptor::new(
            "dispense",
            "Pretend to dispense a dye",
            InputSchema::new()
                .property("dye", PropertySchema::string(), true)
                .property("volume_ml", PropertySchema::number(), true)
                .property("well", PropertySchema::integer(), true)
                .property("mix", PropertySchema::boolean().with_default(json!(false)), false),
        ),
        ToolDescriptor::new(
            "sleep",
            "Wait for ms milliseconds",
            InputSchema::new().property("ms", PropertySchema::number(), true),
        ),
        ToolDescriptor::new("fail", "Always fails; the handler panics", InputSchema::new()),
        ToolDescriptor::new(
            "configure",
            "Apply a settings object",
            InputSchema::new().property(
                "settings",
                PropertySchema::from_json(json!({"type": "object"})),
                true,
            ),
        ),
        ToolDescriptor::new(
            "batch",
            "Queue several wells",
            InputSchema::new().property(
                "wells",
                PropertySchema::from_json(json!({"type": "array", "items": {"type": "integer"}})),
                true,
            ),
        ),
    ]
}

pub fn server() -> Result<(ToolServer, Arc<Counters>), ServerError> {
    let counters = Arc::new(Counters::default());
    let mut server = ToolServer::new(ServerIdentity::new("fixture", env!("CARGO_PKG_VERSION")))?;
    for desc in descriptors() {
        let c = counters.clone();
        let name = desc.name.clone();
        server = server.with_tool(desc, move |args| {
            let n = c.bump(&name);
            match name.as_str() {
                "tick" => ToolCallResult::text(format!("tick {n}")),
                "echo" => ToolCallResult::text(string_arg(args, "text")),
                "add" => ToolCallResult::text(format!(
                    "sum = {}",
                    number_arg(args, "a") + number_arg(args, "b")
                )),
                "wash" => ToolCallResult::text(format!("washed (n={n})")),
                "dispense" => ToolCallResult::text(format!(
                    "dispensed {} mL {} into well {}",
                    number_arg(args, "volume_ml"),
                    string_arg(args, "dye"),
                    number_arg(args, "well")
                )),
                "sleep" => {
                    let ms = number_arg(args, "ms").clamp(0.0, 60_000.0);
                    std::thread::sleep(Duration::from_millis(ms as u64));
                    ToolCallResult::text(format!("slept {ms} ms"))
                }
                "fail" => panic!("fixture failure"),
                other => ToolCallResult::text(format!("{other} accepted")),
            }
        })?;
    }
    Ok((server, counters))
}
