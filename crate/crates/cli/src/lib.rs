//! Shared pieces of the `auscult` binary: portal configuration and the
//! HTTP layer, kept in a library so integration tests can drive the
//! router without a network socket.

pub mod http;
pub mod portal_config;
