//! JSON text format for states. The schema is described in
//! `docs/state-format.md`.

use serde::{Deserialize, Serialize};

use super::{GridGeometry, GridState, SpinState, SymmetricState, Wavefunction};
use crate::error::{Result, WfeError};
use crate::linalg::C64;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Repr {
    Spin {
        format_version: u32,
        n_spins: usize,
        amplitudes: Vec<C64>,
    },
    Symmetric {
        format_version: u32,
        n_spins: usize,
        amplitudes: Vec<C64>,
    },
    Grid {
        format_version: u32,
        n_particles: usize,
        dims: usize,
        points: usize,
        half_width: f64,
        spin_levels: usize,
        amplitudes: Vec<C64>,
        #[serde(default)]
        notes: Vec<String>,
    },
}

/// Any of the three state representations.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyState {
    Spin(SpinState),
    Symmetric(SymmetricState),
    Grid(GridState),
}

impl AnyState {
    pub fn type_name(&self) -> &'static str {
        match self {
            AnyState::Spin(_) => "spin",
            AnyState::Symmetric(_) => "symmetric",
            AnyState::Grid(_) => "grid",
        }
    }

    pub fn shape_string(&self) -> String {
        match self {
            AnyState::Spin(s) => s.shape_string(),
            AnyState::Symmetric(s) => s.shape_string(),
            AnyState::Grid(s) => s.shape_string(),
        }
    }

    pub fn norm(&self) -> f64 {
        match self {
            AnyState::Spin(s) => s.norm(),
            AnyState::Symmetric(s) => s.norm(),
            AnyState::Grid(s) => s.norm(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            AnyState::Spin(s) => s.amplitudes().len(),
            AnyState::Symmetric(s) => s.amplitudes().len(),
            AnyState::Grid(s) => s.amplitudes().len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_json(&self) -> String {
        let repr = match self {
            AnyState::Spin(s) => Repr::Spin {
                format_version: FORMAT_VERSION,
                n_spins: s.n_spins(),
                amplitudes: s.amplitudes().to_vec(),
            },
            AnyState::Symmetric(s) => Repr::Symmetric {
                format_version: FORMAT_VERSION,
                n_spins: s.n_spins(),
                amplitudes: s.amplitudes().to_vec(),
            },
            AnyState::Grid(s) => {
                let g = s.geometry();
                Repr::Grid {
                    format_version: FORMAT_VERSION,
                    n_particles: g.n_particles,
                    dims: g.dims,
                    points: g.points,
                    half_width: g.half_width,
                    spin_levels: g.spin_levels,
                    amplitudes: s.amplitudes().to_vec(),
                    notes: s.notes.clone(),
                }
            }
        };
        serde_json::to_string(&repr).expect("state serialization cannot fail")
    }

    /// Parses and validates a state document.
    pub fn from_json(text: &str) -> Result<Self> {
        let repr: Repr = serde_json::from_str(text).map_err(|e| WfeError::Format(e.to_string()))?;
        let version = match &repr {
            Repr::Spin { format_version, .. }
            | Repr::Symmetric { format_version, .. }
            | Repr::Grid { format_version, .. } => *format_version,
        };
        if version != FORMAT_VERSION {
            return Err(WfeError::Format(format!(
                "format_version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        Ok(match repr {
            Repr::Spin {
                n_spins, amplitudes, ..
            } => AnyState::Spin(SpinState::new(n_spins, amplitudes)?),
            Repr::Symmetric {
                n_spins, amplitudes, ..
            } => AnyState::Symmetric(SymmetricState::new(n_spins, amplitudes)?),
            Repr::Grid {
                n_particles,
                dims,
                points,
                half_width,
                spin_levels,
                amplitudes,
                notes,
                ..
            } => {
                let geometry = GridGeometry::new(n_particles, dims, points, half_width, spin_levels)?;
                let mut s = GridState::new(geometry, amplitudes)?;
                s.notes = notes;
                AnyState::Grid(s)
            }
        })
    }
}

impl From<SpinState> for AnyState {
    fn from(s: SpinState) -> Self {
        AnyState::Spin(s)
    }
}

impl From<SymmetricState> for AnyState {
    fn from(s: SymmetricState) -> Self {
        AnyState::Symmetric(s)
    }
}

impl From<GridState> for AnyState {
    fn from(s: GridState) -> Self {
        AnyState::Grid(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_round_trip() {
        let s = SymmetricState::basis(4, 1, 2).unwrap();
        let text = AnyState::from(s.clone()).to_json();
        assert!(text.contains("\"type\":\"symmetric\""));
        assert_eq!(AnyState::from_json(&text).unwrap(), AnyState::Symmetric(s));
    }

    #[test]
    fn wrong_length_and_version_rejected() {
        let bad = r#"{"type":"spin","format_version":1,"n_spins":2,"amplitudes":[[1,0]]}"#;
        assert!(matches!(AnyState::from_json(bad), Err(WfeError::ShapeMismatch(_))));
        let old = r#"{"type":"spin","format_version":0,"n_spins":1,"amplitudes":[[1,0],[0,0]]}"#;
        assert!(matches!(AnyState::from_json(old), Err(WfeError::Format(_))));
        let extra = r#"{"type":"spin","format_version":1,"n_spins":1,"amplitudes":[[1,0],[0,0]],"x":1}"#;
        assert!(matches!(AnyState::from_json(extra), Err(WfeError::Format(_))));
    }
}
