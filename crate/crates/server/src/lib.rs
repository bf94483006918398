//! Network side of the toolkit: the debug protocol service and its
//! transports, project loading, and bundle packaging and serving.

pub mod packager;
pub mod project;
pub mod service;
pub mod transport;

pub use packager::{package, serve_bundle, Bundle, BundleManifest, EmbedInfo, PackageError};
pub use project::{Project, ProjectConfig, ProjectError, RuntimeOverrides};
pub use service::{DebugService, ServiceConfig, ServiceMode};
pub use transport::{serve, Endpoint, ServeError, ServiceHandle};
