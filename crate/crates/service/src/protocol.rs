//! Websocket message envelopes and the binary vertex-array frame.
//!
//! Text frames carry one JSON object tagged by `type`. When a vertex array is
//! larger than the session's binary threshold, the JSON message has
//! `"binary": true` and a `null` array, and the next frame is binary: a
//! little-endian `u64` count `N` followed by `N` little-endian IEEE-754 `f64`
//! values, `x0, y0, x1, y1, ...`. The values are the solver's `f64`s
//! unchanged, so the binary path is bit-exact.

use flipfree::admm::{ConstraintUpdate, ExitStatus};
use flipfree::energies::EnergyKind;
use flipfree::mesh::HandleSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Client → server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    SetConstraints { handles: Vec<HandleSpec> },
    Pause,
    Resume,
    Reset,
    SetEnergy { kind: EnergyKind },
}

impl ClientMessage {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SetConstraints { .. } => "set_constraints",
            Self::Pause => "pause",
            Self::Resume => "resume",
            Self::Reset => "reset",
            Self::SetEnergy { .. } => "set_energy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionState {
    Running,
    Paused,
    Converged,
    MaxIter,
    Stalled,
}

impl From<ExitStatus> for SessionState {
    fn from(s: ExitStatus) -> Self {
        match s {
            ExitStatus::Converged => Self::Converged,
            ExitStatus::MaxIter => Self::MaxIter,
            ExitStatus::Stalled => Self::Stalled,
        }
    }
}

/// Server → client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Mesh {
        session: String,
        vertices: Option<Vec<[f64; 2]>>,
        faces: Vec<[usize; 3]>,
        binary: bool,
    },
    Update {
        iter: u64,
        positions: Option<Vec<[f64; 2]>>,
        /// `null` while some element is inverted (the energy is infinite).
        energy: Option<f64>,
        flips: usize,
        e_prim: f64,
        e_dual: f64,
        binary: bool,
        /// Set on the message that reports a terminated run.
        #[serde(rename = "final")]
        is_final: bool,
        /// Milliseconds since the session started, taken when the frame was sent.
        sent_ms: f64,
    },
    Status {
        session: String,
        state: SessionState,
        iter: u64,
        /// The client message this status acknowledges.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ack: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        constraint_update: Option<ConstraintUpdate>,
    },
    Error {
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ack: Option<String>,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("binary frame of {0} bytes is shorter than its 8-byte header")]
    Short(usize),
    #[error("binary frame declares {declared} values but carries {actual} bytes of payload")]
    Length { declared: u64, actual: usize },
}

/// Encodes a flat array as a binary frame.
pub fn encode_f64s(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * values.len());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_f64s(frame: &[u8]) -> Result<Vec<f64>, FrameError> {
    let header: [u8; 8] = frame
        .get(..8)
        .and_then(|h| h.try_into().ok())
        .ok_or(FrameError::Short(frame.len()))?;
    let declared = u64::from_le_bytes(header);
    let payload = &frame[8..];
    if declared.checked_mul(8) != Some(payload.len() as u64) {
        return Err(FrameError::Length {
            declared,
            actual: payload.len(),
        });
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn flatten(points: &[[f64; 2]]) -> Vec<f64> {
    points.iter().flatten().copied().collect()
}

pub fn unflatten(values: &[f64]) -> Vec<[f64; 2]> {
    values.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}
