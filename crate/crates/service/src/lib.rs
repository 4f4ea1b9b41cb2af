//! Interactive deformation service: one solver session per websocket
//! client, streaming iterates while accepting constraint edits.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, ServerMessage, SessionState};
pub use server::{router, run, serve, AppState, Health, VERSION};
pub use session::{Session, SessionConfig};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("the service deforms planar triangle meshes only")]
    NotPlanar,
    #[error(transparent)]
    Solver(#[from] flipfree::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
