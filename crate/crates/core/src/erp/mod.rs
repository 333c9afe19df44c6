//! ERP side of the plant: dispatch-list XML in, finished-goods XML out, and
//! the HTTP visibility API.

mod api;
mod server;
pub mod shape;
mod xml;

use thiserror::Error;

pub use api::{handle, ApiResponse, EngineAccess, OverrideRequest, CONTENT_JSON, CONTENT_NDJSON, CONTENT_XML};
pub use server::{router, serve_api, ApiState};
pub use xml::{export_finished_goods_xml, parse_dispatch_xml, serialize_dispatch_xml};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("XML syntax error at line {line}, column {column}: {message}")]
    XmlSyntax { line: usize, column: usize, message: String },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("semantic error at {path}: {message}")]
    Semantic { path: String, message: String },
}

impl GatewayError {
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::XmlSyntax { .. } => "XmlSyntaxError",
            GatewayError::Schema { .. } => "SchemaError",
            GatewayError::Semantic { .. } => "SemanticError",
        }
    }
}
