//! Core of the agent toolkit: the topology model and its textual forms, the
//! scriptlet language, the runtime engine, the LLM gateway and the plugin
//! registry.

pub mod code_sync;
pub mod engine;
pub mod external;
pub mod gateway;
pub mod model;
pub mod plugin;
pub mod scriptlet;
pub mod topo_format;
pub mod trace;
pub mod value;

#[cfg(feature = "testkit")]
pub mod testkit;

pub use value::{Object, Value};
