//! IO and workflow layer over `petc-core`: configuration files, certificate
//! and trace persistence, and the `design` / `simulate` / `verify` / `bounds`
//! commands.

pub mod config;
pub mod export;
pub mod persist;
pub mod pipeline;
