//! Assembly of the compliance matrix from loading experiments.
//!
//! Each experiment pairs an applied wrench `(F, M)` with the identified
//! deflection `(p, dphi)` of the reference point. Stacking `m >= 6` of them
//! gives `D = k W`, solved for `k` by inversion or pseudo-inversion of the
//! wrench matrix. Columns follow the wrench order `(Fx, Fy, Fz, Mx, My, Mz)`.

use std::fmt;

use log::warn;
use nalgebra::{DMatrix, Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::deflection::Deflection;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WrenchComponent {
    Fx,
    Fy,
    Fz,
    Mx,
    My,
    Mz,
}

impl WrenchComponent {
    pub const ALL: [WrenchComponent; 6] = [
        WrenchComponent::Fx,
        WrenchComponent::Fy,
        WrenchComponent::Fz,
        WrenchComponent::Mx,
        WrenchComponent::My,
        WrenchComponent::Mz,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            WrenchComponent::Fx => "Fx",
            WrenchComponent::Fy => "Fy",
            WrenchComponent::Fz => "Fz",
            WrenchComponent::Mx => "Mx",
            WrenchComponent::My => "My",
            WrenchComponent::Mz => "Mz",
        }
    }

    pub fn is_torque(self) -> bool {
        self.index() >= 3
    }
}

impl fmt::Display for WrenchComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Force (N) and torque (N·mm) applied at the reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Result<Self> {
        let w = Self { force, torque };
        if w.to_vector().iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroWrench);
        }
        Ok(w)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Result<Self> {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn single(component: WrenchComponent, magnitude: f64) -> Result<Self> {
        if magnitude == 0.0 {
            return Err(Error::ZeroMagnitude {
                component: component.name(),
            });
        }
        let mut v = Vector6::zeros();
        v[component.index()] = magnitude;
        Self::from_vector(&v)
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        )
    }

    /// The only nonzero component and its signed magnitude, if exactly one.
    pub fn single_component(&self) -> Option<(WrenchComponent, f64)> {
        let v = self.to_vector();
        let mut nonzero = WrenchComponent::ALL.into_iter().filter(|c| v[c.index()] != 0.0);
        match (nonzero.next(), nonzero.next()) {
            (Some(c), None) => Some((c, v[c.index()])),
            _ => None,
        }
    }
}

/// The six single-component wrenches `Fx, Fy, Fz, Mx, My, Mz` in that order.
pub fn canonical_wrench_scheme(magnitudes: [f64; 6]) -> Result<[Wrench; 6]> {
    let mut out = [Wrench {
        force: Vector3::zeros(),
        torque: Vector3::zeros(),
    }; 6];
    for (slot, (component, magnitude)) in out.iter_mut().zip(WrenchComponent::ALL.into_iter().zip(magnitudes)) {
        *slot = Wrench::single(component, magnitude)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub wrench: Wrench,
    pub deflection: Deflection,
    /// Where the displacement field came from (file name, generator, ...).
    pub source: String,
}

impl Experiment {
    pub fn new(wrench: Wrench, deflection: Deflection, source: impl Into<String>) -> Result<Self> {
        if !deflection.is_finite() {
            return Err(Error::NotCanonical("deflection is not finite".into()));
        }
        Ok(Self {
            wrench,
            deflection,
            source: source.into(),
        })
    }
}

/// Column `j` of a canonical scheme: the experiment loading component `j`
/// and its signed magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalColumn {
    pub experiment: usize,
    pub magnitude: f64,
}

/// Map each wrench component to the single experiment that loads it.
pub fn canonical_columns(experiments: &[Experiment]) -> Result<[CanonicalColumn; 6]> {
    if experiments.len() < 6 {
        return Err(Error::InsufficientExperiments {
            got: experiments.len(),
        });
    }
    if experiments.len() > 6 {
        return Err(Error::NotCanonical(format!(
            "{} experiments, a canonical scheme has exactly 6",
            experiments.len()
        )));
    }
    let mut columns: [Option<CanonicalColumn>; 6] = [None; 6];
    for (i, e) in experiments.iter().enumerate() {
        let (component, magnitude) = e.wrench.single_component().ok_or_else(|| {
            Error::NotCanonical(format!("experiment {i} loads more than one component"))
        })?;
        let slot = &mut columns[component.index()];
        if slot.is_some() {
            return Err(Error::NotCanonical(format!(
                "experiment {i} duplicates component {component}"
            )));
        }
        *slot = Some(CanonicalColumn {
            experiment: i,
            magnitude,
        });
    }
    // Six experiments, no duplicates: every slot is filled.
    Ok(columns.map(|c| c.expect("all components covered")))
}

pub type SignificanceMask = [[bool; 6]; 6];

#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceMatrix {
    /// Blocks: mm/N, mm/(N·mm) over rad/N, rad/(N·mm).
    pub k: Matrix6<f64>,
    /// `true` where the element was found significantly nonzero.
    pub significance_mask: Option<SignificanceMask>,
    pub symmetrized: bool,
}

impl ComplianceMatrix {
    pub fn new(k: Matrix6<f64>) -> Self {
        Self {
            k,
            significance_mask: None,
            symmetrized: false,
        }
    }

    /// `||k - k^T||_F`, the asymmetry left by identification.
    pub fn asymmetry_norm(&self) -> f64 {
        (self.k - self.k.transpose()).norm()
    }

    pub fn symmetrize(&self) -> Self {
        let k = (self.k + self.k.transpose()) / 2.0;
        let significance_mask = self.significance_mask.map(|m| {
            let mut out = m;
            for (i, row) in out.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = m[i][j] || m[j][i];
                }
            }
            out
        });
        let min = SymmetricEigen::new(k).eigenvalues.min();
        if min < -1e-9 * k.norm() {
            warn!("symmetrized compliance has a negative eigenvalue {min:e}");
        }
        Self {
            k,
            significance_mask,
            symmetrized: true,
        }
    }

    /// Stiffness matrix `K = k^-1`.
    pub fn invert_to_stiffness(&self) -> Result<Matrix6<f64>> {
        let scale = self.k.norm();
        if self.asymmetry_norm() > 1e-12 * scale {
            return Err(Error::NotCanonical(
                "compliance must be symmetrized before inversion".into(),
            ));
        }
        let eig = SymmetricEigen::new((self.k + self.k.transpose()) / 2.0);
        let largest = eig.eigenvalues.amax();
        let smallest = eig.eigenvalues.min();
        if !(smallest > 1e-12 * largest) {
            return Err(Error::SingularCompliance {
                min_eigenvalue: smallest,
            });
        }
        let inv = eig.eigenvalues.map(|l| 1.0 / l);
        Ok(eig.eigenvectors * Matrix6::from_diagonal(&inv) * eig.eigenvectors.transpose())
    }
}

/// One column per experiment: column `j` is `(p_j, dphi_j) / magnitude_j`.
pub fn assemble_canonical(experiments: &[Experiment]) -> Result<ComplianceMatrix> {
    let columns = canonical_columns(experiments)?;
    let mut k = Matrix6::zeros();
    for (j, col) in columns.iter().enumerate() {
        let d = experiments[col.experiment].deflection.to_vector() / col.magnitude;
        k.set_column(j, &d);
    }
    Ok(ComplianceMatrix::new(k))
}

/// Least-squares `k = D W^+` for any number `m >= 6` of experiments.
pub fn assemble_overdetermined(experiments: &[Experiment]) -> Result<ComplianceMatrix> {
    let m = experiments.len();
    if m < 6 {
        return Err(Error::InsufficientExperiments { got: m });
    }
    let wrenches = DMatrix::from_fn(6, m, |i, j| experiments[j].wrench.to_vector()[i]);
    let deflections = DMatrix::from_fn(6, m, |i, j| experiments[j].deflection.to_vector()[i]);
    let svd = wrenches.svd(true, true);
    let largest = svd.singular_values.max();
    let tol = 1e-12 * largest;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < 6 {
        return Err(Error::RankDeficientWrenches { rank });
    }
    let pinv = svd
        .pseudo_inverse(tol)
        .map_err(|e| Error::RankDeficientWrenches {
            rank: e.len().min(rank),
        })?;
    let k = deflections * pinv;
    Ok(ComplianceMatrix::new(Matrix6::from_fn(|i, j| k[(i, j)])))
}
