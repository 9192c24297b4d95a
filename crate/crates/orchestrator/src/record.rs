//! On-disk run records: the submitted workflow, the JSON-lines event log and
//! any images returned by tools.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use labmcp_core::workflow::EventOutput;
use labmcp_core::ExecutionEvent;
use labmcp_protocol::content::{MIME_PNG, MIME_SVG};
use serde_json::Value;

pub const WORKFLOW_FILE: &str = "workflow.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const IMAGES_DIR: &str = "images";

pub struct RunWriter {
    dir: PathBuf,
    events: File,
}

impl RunWriter {
    /// Creates `dir` and writes the workflow document into it.
    pub fn create(dir: &Path, workflow: &Value) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        let doc = serde_json::to_string_pretty(workflow).expect("json serializes");
        fs::write(dir.join(WORKFLOW_FILE), doc + "\n")?;
        let events = File::create(dir.join(EVENTS_FILE))?;
        Ok(Self {
            dir: dir.to_owned(),
            events,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append(&mut self, event: &ExecutionEvent) -> std::io::Result<()> {
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        self.events.write_all(line.as_bytes())?;
        self.write_images(event)
    }

    fn write_images(&self, event: &ExecutionEvent) -> std::io::Result<()> {
        let Some(EventOutput::ToolResult(result)) = &event.output else {
            return Ok(());
        };
        let block = event.block_id.as_deref().unwrap_or("run");
        let mut n = 0;
        for content in &result.content {
            let Some(Ok((bytes, mime))) = content.image_bytes() else {
                continue;
            };
            let ext = match mime {
                MIME_PNG => "png",
                MIME_SVG => "svg",
                _ => "bin",
            };
            let images = self.dir.join(IMAGES_DIR);
            fs::create_dir_all(&images)?;
            n += 1;
            fs::write(images.join(image_name(event.seq, block, n, ext)), bytes)?;
        }
        Ok(())
    }
}

fn image_name(seq: u64, block: &str, n: usize, ext: &str) -> String {
    let safe: String = block
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    format!("{seq:05}-{safe}-{n}.{ext}")
}

/// Parses an events.jsonl file.
pub fn read_events(path: &Path) -> anyhow::Result<Vec<ExecutionEvent>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
