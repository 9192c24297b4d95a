//! Tool call results: ordered text and image content blocks.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIME_PNG: &str = "image/png";
pub const MIME_SVG: &str = "image/svg+xml";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ContentBlock {
    Text {
        text: String,
    },
    Image {
        /// Base64-encoded bytes.
        data: String,
        #[serde(rename = "mimeType")]
        mime_type: String,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContentError {
    #[error("unsupported image mime type {0}")]
    MimeType(String),
    #[error("image data is not valid base64: {0}")]
    Base64(String),
    #[error("a successful result must carry content")]
    EmptySuccess,
}

impl ContentBlock {
    pub fn text(text: impl Into<String>) -> Self {
        ContentBlock::Text { text: text.into() }
    }

    pub fn image(bytes: &[u8], mime_type: &str) -> Result<Self, ContentError> {
        check_mime(mime_type)?;
        Ok(ContentBlock::Image {
            data: BASE64.encode(bytes),
            mime_type: mime_type.to_owned(),
        })
    }

    pub fn svg(document: &str) -> Self {
        ContentBlock::Image {
            data: BASE64.encode(document.as_bytes()),
            mime_type: MIME_SVG.to_owned(),
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ContentBlock::Text { text } => Some(text),
            ContentBlock::Image { .. } => None,
        }
    }

    /// Decoded image bytes and mime type.
    pub fn image_bytes(&self) -> Option<Result<(Vec<u8>, &str), ContentError>> {
        match self {
            ContentBlock::Image { data, mime_type } => Some(
                BASE64
                    .decode(data)
                    .map(|b| (b, mime_type.as_str()))
                    .map_err(|e| ContentError::Base64(e.to_string())),
            ),
            ContentBlock::Text { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<(), ContentError> {
        if let ContentBlock::Image { mime_type, .. } = self {
            check_mime(mime_type)?;
            self.image_bytes().transpose()?;
        }
        Ok(())
    }
}

fn check_mime(mime: &str) -> Result<(), ContentError> {
    if mime == MIME_PNG || mime == MIME_SVG {
        Ok(())
    } else {
        Err(ContentError::MimeType(mime.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallResult {
    pub content: Vec<ContentBlock>,
    #[serde(rename = "isError", default)]
    pub is_error: bool,
}

impl ToolCallResult {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            content: vec![ContentBlock::text(text)],
            is_error: false,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self {
            content: vec![ContentBlock::text(message)],
            is_error: true,
        }
    }

    pub fn with(mut self, block: ContentBlock) -> Self {
        self.content.push(block);
        self
    }

    pub fn first_text(&self) -> Option<&str> {
        self.content.iter().find_map(ContentBlock::as_text)
    }

    pub fn images(&self) -> impl Iterator<Item = &ContentBlock> {
        self.content
            .iter()
            .filter(|c| matches!(c, ContentBlock::Image { .. }))
    }

    pub fn validate(&self) -> Result<(), ContentError> {
        if self.content.is_empty() && !self.is_error {
            return Err(ContentError::EmptySuccess);
        }
        self.content.iter().try_for_each(ContentBlock::validate)
    }
}
