//! Six-DOF deflection of the reference point from a displacement field.
//!
//! Two estimators fit `p_i + dp_i = R p_i + p` in the least-squares sense:
//!
//! * the exact one solves the orthogonal Procrustes problem with an SVD of the
//!   cross-covariance of the mean-removed initial and displaced positions, and
//!   then reads the small rotation off `R` by one of six entry rules;
//! * the linearized one substitutes `R = I + [dphi]x` and solves the 6x6 normal
//!   equations, which decouple into a mean and a 3x3 system once positions are
//!   taken relative to the node centroid.
//!
//! Both report the translation at the reference point (the field origin).

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DisplacementField;

/// Rotations above one degree make the first-order rotation model unreliable.
pub const LINEAR_RANGE_LIMIT: f64 = std::f64::consts::PI / 180.0;

/// Relative eigenvalue floor of the moment matrix below which the rotation is
/// considered unobservable.
pub const DEGENERACY_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Deflection {
    /// mm
    pub translation: Vector3<f64>,
    /// rad
    pub rotation: Vector3<f64>,
}

impl Deflection {
    pub fn new(translation: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.translation.x,
            self.translation.y,
            self.translation.z,
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    pub fn exceeds_linear_range(&self) -> bool {
        self.rotation.norm() > LINEAR_RANGE_LIMIT
    }
}

/// Proper 3x3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let orthogonality = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        if !(orthogonality <= Self::TOLERANCE && (det - 1.0).abs() <= Self::TOLERANCE) {
            return Err(Error::NotARotation { orthogonality, det });
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Rotation by `|v|` about `v / |v|`.
    pub fn from_axis_angle(v: &Vector3<f64>) -> Self {
        Self(*Rotation3::new(*v).matrix())
    }

    /// Product of elementary rotations `Rz(v.z) * Ry(v.y) * Rx(v.x)`.
    pub fn from_elementary(v: &Vector3<f64>) -> Self {
        let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), v.x);
        let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), v.y);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), v.z);
        Self(*(rz * ry * rx).matrix())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// Rule for reading small rotation angles off the entries of `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleExtraction {
    /// `(r32, r13, r21)`
    #[serde(rename = "plus")]
    PlusEntries,
    /// `(-r23, -r31, -r12)`
    #[serde(rename = "minus")]
    MinusEntries,
    /// Mean of the two entry rules, i.e. the skew-symmetric part of `R`.
    #[default]
    #[serde(rename = "avg")]
    Averaged,
    PlusAsin,
    MinusAsin,
    #[serde(rename = "avg-asin")]
    AveragedAsin,
}

impl AngleExtraction {
    pub const ALL: [AngleExtraction; 6] = [
        AngleExtraction::PlusEntries,
        AngleExtraction::MinusEntries,
        AngleExtraction::Averaged,
        AngleExtraction::PlusAsin,
        AngleExtraction::MinusAsin,
        AngleExtraction::AveragedAsin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AngleExtraction::PlusEntries => "plus",
            AngleExtraction::MinusEntries => "minus",
            AngleExtraction::Averaged => "avg",
            AngleExtraction::PlusAsin => "plus-asin",
            AngleExtraction::MinusAsin => "minus-asin",
            AngleExtraction::AveragedAsin => "avg-asin",
        }
    }
}

impl fmt::Display for AngleExtraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AngleExtraction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown angle extraction method '{s}'"))
    }
}

fn checked_asin(x: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::EntryOutOfRange { value: x });
    }
    Ok(x.asin())
}

pub fn extract_angles(r: &RotationMatrix, method: AngleExtraction) -> Result<Vector3<f64>> {
    let m = r.matrix();
    let plus = Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]);
    let minus = -Vector3::new(m[(1, 2)], m[(2, 0)], m[(0, 1)]);
    let avg = (plus + minus) / 2.0;
    let asin = |v: Vector3<f64>| -> Result<Vector3<f64>> {
        Ok(Vector3::new(checked_asin(v.x)?, checked_asin(v.y)?, checked_asin(v.z)?))
    };
    match method {
        AngleExtraction::PlusEntries => Ok(plus),
        AngleExtraction::MinusEntries => Ok(minus),
        AngleExtraction::Averaged => Ok(avg),
        AngleExtraction::PlusAsin => asin(plus),
        // -asin(r) == asin(-r)
        AngleExtraction::MinusAsin => asin(minus),
        AngleExtraction::AveragedAsin => asin(avg),
    }
}

/// Matrix `P` with `P * dphi = dphi x p`, the first-order displacement of a
/// point at `p` under a small rotation `dphi`.
pub fn lever_matrix(p: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, p.z, -p.y, -p.z, 0.0, p.x, p.y, -p.x, 0.0)
}

/// `sum P_i^T P_i` over the given (already mean-removed) positions.
pub fn moment_matrix<I>(positions: I) -> Matrix3<f64>
where
    I: IntoIterator<Item = Vector3<f64>>,
{
    positions.into_iter().fold(Matrix3::zeros(), |acc, p| {
        acc + Matrix3::identity() * p.norm_squared() - p * p.transpose()
    })
}

pub(crate) fn check_moment(moment: &Matrix3<f64>) -> Result<()> {
    let trace = moment.trace();
    let min = SymmetricEigen::new(*moment).eigenvalues.min();
    if !(trace > 0.0) || min < DEGENERACY_RATIO * trace {
        return Err(Error::DegenerateGeometry(format!(
            "moment matrix smallest eigenvalue {min:e} vs trace {trace:e} (collinear nodes?)"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Lin,
    Svd(AngleExtraction),
}

impl Estimator {
    /// LIN followed by SVD with each angle rule.
    pub const ALL: [Estimator; 7] = [
        Estimator::Lin,
        Estimator::Svd(AngleExtraction::PlusEntries),
        Estimator::Svd(AngleExtraction::MinusEntries),
        Estimator::Svd(AngleExtraction::Averaged),
        Estimator::Svd(AngleExtraction::PlusAsin),
        Estimator::Svd(AngleExtraction::MinusAsin),
        Estimator::Svd(AngleExtraction::AveragedAsin),
    ];
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Lin => f.write_str("lin"),
            Estimator::Svd(m) => write!(f, "svd-{m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub deflection: Deflection,
    /// Per-node residuals in input order, mm.
    pub residuals: Vec<Vector3<f64>>,
    /// Sum of squared residual norms, mm^2.
    pub objective: f64,
    /// Node centroid relative to the reference point.
    pub centroid: Vector3<f64>,
    /// `sum P_i^T P_i` about the centroid.
    pub moment: Matrix3<f64>,
    /// Fitted rotation, only for the SVD estimator.
    pub rotation: Option<RotationMatrix>,
}

impl FitResult {
    pub fn node_count(&self) -> usize {
        self.residuals.len()
    }

    fn from_residuals(
        deflection: Deflection,
        residuals: Vec<Vector3<f64>>,
        centroid: Vector3<f64>,
        moment: Matrix3<f64>,
        rotation: Option<RotationMatrix>,
    ) -> Self {
        let objective = residuals.iter().map(|r| r.norm_squared()).sum();
        if deflection.exceeds_linear_range() {
            warn!(
                "rotation {:.4} deg is beyond the linear range",
                deflection.rotation.norm().to_degrees()
            );
        }
        Self {
            deflection,
            residuals,
            objective,
            centroid,
            moment,
            rotation,
        }
    }
}

struct Prepared {
    centroid: Vector3<f64>,
    mean_displacement: Vector3<f64>,
    moment: Matrix3<f64>,
}

fn prepare(field: &DisplacementField) -> Result<Prepared> {
    if !field.is_centered() {
        return Err(Error::NotCentered);
    }
    if field.len() < 3 {
        return Err(Error::TooFewNodes {
            required: 3,
            got: field.len(),
        });
    }
    let n = field.len() as f64;
    let centroid = field.centroid()?;
    let mean_displacement = field.nodes().iter().map(|n| n.displacement).sum::<Vector3<f64>>() / n;
    let moment = moment_matrix(field.positions().map(|p| p - centroid));
    check_moment(&moment)?;
    Ok(Prepared {
        centroid,
        mean_displacement,
        moment,
    })
}

fn linear_residuals(
    field: &DisplacementField,
    prep: &Prepared,
    rotation: &Vector3<f64>,
) -> Vec<Vector3<f64>> {
    field
        .nodes()
        .iter()
        .map(|n| n.displacement - prep.mean_displacement - rotation.cross(&(n.position - prep.centroid)))
        .collect()
}

/// Right-hand side `sum P_i^T (dp_i - mean dp)` about the centroid.
fn lever_moment(field: &DisplacementField, prep: &Prepared) -> Vector3<f64> {
    field
        .nodes()
        .iter()
        .map(|n| (n.position - prep.centroid).cross(&(n.displacement - prep.mean_displacement)))
        .sum()
}

/// Linearized estimator.
pub fn estimate_lin(field: &DisplacementField) -> Result<FitResult> {
    let prep = prepare(field)?;
    let rhs = lever_moment(field, &prep);
    let rotation = prep
        .moment
        .cholesky()
        .ok_or_else(|| Error::DegenerateGeometry("moment matrix is not positive definite".into()))?
        .solve(&rhs);
    // Translation is solved at the centroid; carry it back to the reference point.
    let translation = prep.mean_displacement - rotation.cross(&prep.centroid);
    let residuals = linear_residuals(field, &prep, &rotation);
    Ok(FitResult::from_residuals(
        Deflection::new(translation, rotation),
        residuals,
        prep.centroid,
        prep.moment,
        None,
    ))
}

/// Closed form for fields symmetric about the reference point, where the
/// moment matrix is diagonal.
pub fn estimate_symmetric(field: &DisplacementField) -> Result<FitResult> {
    let prep = prepare(field)?;
    let extent = field.positions().map(|p| p.amax()).fold(0.0, f64::max);
    if prep.centroid.norm() > 1e-9 * extent {
        return Err(Error::NotSymmetric);
    }
    let d = prep.moment.diagonal();
    let scale = d.max();
    let off = [(0, 1), (0, 2), (1, 2)];
    if off.iter().any(|&(i, j)| prep.moment[(i, j)].abs() > 1e-9 * scale) {
        return Err(Error::NotSymmetric);
    }
    let rotation = lever_moment(field, &prep).component_div(&d);
    let translation = prep.mean_displacement - rotation.cross(&prep.centroid);
    let residuals = linear_residuals(field, &prep, &rotation);
    Ok(FitResult::from_residuals(
        Deflection::new(translation, rotation),
        residuals,
        prep.centroid,
        prep.moment,
        None,
    ))
}

/// Exact rigid fit through the orthogonal Procrustes problem.
pub fn estimate_svd(field: &DisplacementField, method: AngleExtraction) -> Result<FitResult> {
    let prep = prepare(field)?;
    let target_mean = prep.centroid + prep.mean_displacement;
    let cross: Matrix3<f64> = field
        .nodes()
        .iter()
        .map(|n| (n.position - prep.centroid) * (n.position + n.displacement - target_mean).transpose())
        .sum();
    let svd = cross.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateGeometry("SVD did not converge".into())),
    };
    let sv = svd.singular_values;
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[1] > DEGENERACY_RATIO * sorted[0]) {
        return Err(Error::DegenerateGeometry(format!(
            "cross-covariance has rank < 2 (singular values {sorted:?})"
        )));
    }
    let mut v = v_t.transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        let weakest = sv.imin();
        v.column_mut(weakest).neg_mut();
        r = v * u.transpose();
    }
    let rotation = RotationMatrix::new(r)?;
    let translation = prep.mean_displacement - (r - Matrix3::identity()) * prep.centroid;
    let residuals = field
        .nodes()
        .iter()
        .map(|n| n.position + n.displacement - r * n.position - translation)
        .collect();
    let angles = extract_angles(&rotation, method)?;
    Ok(FitResult::from_residuals(
        Deflection::new(translation, angles),
        residuals,
        prep.centroid,
        prep.moment,
        Some(rotation),
    ))
}

pub fn estimate(field: &DisplacementField, estimator: Estimator) -> Result<FitResult> {
    match estimator {
        Estimator::Lin => estimate_lin(field),
        Estimator::Svd(method) => estimate_svd(field, method),
    }
}
