use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{SpinState, SymmetricState};
use crate::error::{Result, WfeError};
use crate::linalg::{DiagonalOp, LinearOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    PositionX,
    MomentumPx,
    AngularMomentumLz,
    SpinZ,
    /// `L_z + S_z` per particle.
    TotalJz,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 5] = [
        FamilyKind::PositionX,
        FamilyKind::MomentumPx,
        FamilyKind::AngularMomentumLz,
        FamilyKind::SpinZ,
        FamilyKind::TotalJz,
    ];

    pub fn is_spatial(self) -> bool {
        !matches!(self, FamilyKind::SpinZ)
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FamilyKind::PositionX => "position_x",
            FamilyKind::MomentumPx => "momentum_px",
            FamilyKind::AngularMomentumLz => "angular_momentum_lz",
            FamilyKind::SpinZ => "spin_z",
            FamilyKind::TotalJz => "total_jz",
        };
        f.write_str(s)
    }
}

/// The summed family `Σ_{i ∈ sites} O_i` entering the dispersion functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorFamily {
    pub kind: FamilyKind,
    pub sites: Vec<usize>,
}

impl OperatorFamily {
    pub fn new(kind: FamilyKind, sites: Vec<usize>) -> Result<Self> {
        if sites.is_empty() {
            return Err(WfeError::param("sites", "family needs at least one site"));
        }
        let mut sorted = sites.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != sites.len() {
            return Err(WfeError::param("sites", "duplicate site"));
        }
        Ok(Self { kind, sites: sorted })
    }

    /// Family over sites `0..n`.
    pub fn all(kind: FamilyKind, n: usize) -> Self {
        Self {
            kind,
            sites: (0..n).collect(),
        }
    }

    /// `N_f`, the number of summed sites.
    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub(crate) fn incompatible(&self, reason: impl Into<String>) -> WfeError {
        WfeError::IncompatibleFamily {
            family: self.kind.to_string(),
            reason: reason.into(),
        }
    }
}

/// State types on which an [`OperatorFamily`] can be realized.
pub trait FamilyOperator {
    fn family_operator(&self, family: &OperatorFamily) -> Result<Arc<dyn LinearOp>>;
}

impl FamilyOperator for SpinState {
    fn family_operator(&self, family: &OperatorFamily) -> Result<Arc<dyn LinearOp>> {
        if family.kind != FamilyKind::SpinZ {
            return Err(family.incompatible("spin states only carry spin_z"));
        }
        if let Some(&s) = family.sites.iter().find(|&&s| s >= self.n_spins()) {
            return Err(family.incompatible(format!("site {s} out of range for {} spins", self.n_spins())));
        }
        Ok(Arc::new(DiagonalOp::new(SpinState::site_sum_diagonal(
            self.n_spins(),
            &family.sites,
        ))))
    }
}

impl FamilyOperator for SymmetricState {
    /// Allowed site sets: the qubit `{0}`, the apparatus `{1..N-1}`, or all.
    fn family_operator(&self, family: &OperatorFamily) -> Result<Arc<dyn LinearOp>> {
        if family.kind != FamilyKind::SpinZ {
            return Err(family.incompatible("symmetric states only carry spin_z"));
        }
        let n = self.n_spins();
        if let Some(&s) = family.sites.iter().find(|&&s| s >= n) {
            return Err(family.incompatible(format!("site {s} out of range for {n} spins")));
        }
        let has_qubit = family.sites.first() == Some(&0);
        let n_app = family.sites.len() - usize::from(has_qubit);
        if n_app != 0 && n_app != n - 1 {
            return Err(family.incompatible("a partial apparatus site set breaks permutation symmetry"));
        }
        let q = SymmetricState::qubit_diagonal(n);
        let s = SymmetricState::readout_diagonal(n);
        let diag = q
            .iter()
            .zip(&s)
            .map(|(a, b)| if has_qubit { *a } else { 0.0 } + if n_app > 0 { *b } else { 0.0 })
            .collect();
        Ok(Arc::new(DiagonalOp::new(diag)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_rejects_partial_apparatus() {
        let s = SymmetricState::zeros(4).unwrap();
        let fam = OperatorFamily::new(FamilyKind::SpinZ, vec![0, 1]).unwrap();
        assert!(s.family_operator(&fam).is_err());
        let fam = OperatorFamily::new(FamilyKind::SpinZ, vec![1, 2, 3]).unwrap();
        assert!(s.family_operator(&fam).is_ok());
    }

    #[test]
    fn spin_rejects_spatial_kind() {
        let s = SpinState::zeros(2).unwrap();
        let fam = OperatorFamily::all(FamilyKind::PositionX, 2);
        assert!(matches!(
            s.family_operator(&fam),
            Err(WfeError::IncompatibleFamily { .. })
        ));
    }
}
