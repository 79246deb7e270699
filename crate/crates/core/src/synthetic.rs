//! Ground-truth displacement fields and the cantilever-beam oracle.

use nalgebra::{Matrix6, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compliance::{ComplianceMatrix, Wrench};
use crate::deflection::{Deflection, RotationMatrix};
use crate::error::{Error, Result};
use crate::field::{Axis, DisplacementField, Node};
use crate::gauss::GaussianSource;

/// Regular sensor grids, or an explicit list of node positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "lowercase")]
pub enum MeshPattern {
    Cubic { edge: f64, step: f64 },
    Square { edge: f64, step: f64, normal: Axis },
    Custom { nodes: Vec<[f64; 3]> },
}

impl MeshPattern {
    pub fn cubic(edge: f64, step: f64) -> Self {
        Self::Cubic { edge, step }
    }

    pub fn square(edge: f64, step: f64, normal: Axis) -> Self {
        Self::Square { edge, step, normal }
    }

    /// Nodes along one edge.
    fn divisions(edge: f64, step: f64) -> Result<usize> {
        if !(edge > 0.0 && step > 0.0 && edge.is_finite() && step.is_finite()) {
            return Err(Error::InvalidPattern(format!(
                "edge {edge} and step {step} must be positive"
            )));
        }
        let ratio = edge / step;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidPattern(format!(
                "step {step} does not divide edge {edge}"
            )));
        }
        Ok(k as usize + 1)
    }

    pub fn node_count(&self) -> Result<usize> {
        match self {
            Self::Cubic { edge, step } => Ok(Self::divisions(*edge, *step)?.pow(3)),
            Self::Square { edge, step, .. } => Ok(Self::divisions(*edge, *step)?.pow(2)),
            Self::Custom { nodes } => Ok(nodes.len()),
        }
    }
}

fn grid(edge: f64, step: f64) -> Result<Vec<f64>> {
    let k = MeshPattern::divisions(edge, step)?;
    Ok((0..k).map(|i| -edge / 2.0 + i as f64 * step).collect())
}

/// Centered field with zero displacements. Grids run x-major, then y, then z.
pub fn generate_pattern(pattern: &MeshPattern, center: Vector3<f64>) -> Result<DisplacementField> {
    let offsets: Vec<Vector3<f64>> = match pattern {
        MeshPattern::Cubic { edge, step } => {
            let g = grid(*edge, *step)?;
            let mut out = Vec::with_capacity(g.len().pow(3));
            for &x in &g {
                for &y in &g {
                    for &z in &g {
                        out.push(Vector3::new(x, y, z));
                    }
                }
            }
            out
        }
        MeshPattern::Square { edge, step, normal } => {
            let g = grid(*edge, *step)?;
            let [a, b] = normal.others();
            let mut out = Vec::with_capacity(g.len().pow(2));
            for &u in &g {
                for &v in &g {
                    let mut p = Vector3::zeros();
                    p[a] = u;
                    p[b] = v;
                    out.push(p);
                }
            }
            out
        }
        MeshPattern::Custom { nodes } => {
            if nodes.is_empty() {
                return Err(Error::InvalidPattern("custom pattern has no nodes".into()));
            }
            nodes.iter().map(|p| Vector3::from(*p)).collect()
        }
    };
    let nodes = offsets
        .into_iter()
        .map(|p| Node::new(center + p, Vector3::zeros()))
        .collect();
    DisplacementField::from_centered(nodes)
}

/// How the true rotation moves the nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationModel {
    /// `dphi x p`, the linearized model the estimators assume.
    #[default]
    Differential,
    /// Successive rotations about x, y then z by the components of `dphi`.
    Elementary,
    /// Rotation by `|dphi|` about `dphi / |dphi|`.
    AxisAngle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub deflection: Deflection,
    /// mm
    pub sigma: f64,
    pub seed: u64,
}

impl GroundTruth {
    pub fn new(deflection: Deflection, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::NegativeSigma(sigma));
        }
        Ok(Self {
            deflection,
            sigma,
            seed,
        })
    }

    pub fn noise_free(deflection: Deflection) -> Self {
        Self {
            deflection,
            sigma: 0.0,
            seed: 0,
        }
    }
}

/// Displace every node of a centered field by the true rigid motion plus
/// i.i.d. Gaussian noise. Noise is drawn node by node, x then y then z.
pub fn apply_rigid_transform(
    field: &DisplacementField,
    truth: &GroundTruth,
    model: RotationModel,
) -> Result<DisplacementField> {
    if !field.is_centered() {
        return Err(Error::NotCentered);
    }
    if !(truth.sigma >= 0.0) {
        return Err(Error::NegativeSigma(truth.sigma));
    }
    let d = &truth.deflection;
    let rotation = match model {
        RotationModel::Differential => None,
        RotationModel::Elementary => Some(RotationMatrix::from_elementary(&d.rotation)),
        RotationModel::AxisAngle => Some(RotationMatrix::from_axis_angle(&d.rotation)),
    };
    let displacements: Vec<_> = field
        .positions()
        .map(|p| {
            let rigid = match &rotation {
                None => d.rotation.cross(&p),
                Some(r) => r.matrix() * p - p,
            };
            rigid + d.translation
        })
        .collect();
    let exact = field.with_displacements(displacements);
    Ok(add_noise(&exact, truth.sigma, &mut GaussianSource::new(truth.seed)))
}

/// Add `N(0, sigma^2)` to every displacement component, drawing node by node.
pub fn add_noise(field: &DisplacementField, sigma: f64, source: &mut GaussianSource) -> DisplacementField {
    if sigma == 0.0 {
        return field.clone();
    }
    field.with_displacements(
        field
            .nodes()
            .iter()
            .map(|n| n.displacement + source.vector3(sigma))
            .collect::<Vec<_>>(),
    )
}

/// Add a spike of length `magnitude` in a random direction to
/// `round(fraction * n)` distinct nodes. Returns the field and the touched
/// indices in ascending order.
pub fn contaminate(
    field: &DisplacementField,
    fraction: f64,
    magnitude: f64,
    seed: u64,
) -> Result<(DisplacementField, Vec<usize>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidFraction(fraction));
    }
    let n = field.len();
    let count = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, n, count).into_vec();
    picked.sort_unstable();
    let mut directions = GaussianSource::new(seed ^ 0x5bd1_e995);
    let mut disp: Vec<Vector3<f64>> = field.nodes().iter().map(|n| n.displacement).collect();
    for &i in &picked {
        disp[i] += directions.unit_vector() * magnitude;
    }
    Ok((field.with_displacements(disp), picked))
}

/// Square-section steel cantilever, clamped at x = 0 and loaded at x = L.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSpec {
    /// mm
    pub length: f64,
    /// Edge of the square section, mm.
    pub side: f64,
    /// N/mm^2
    pub young: f64,
    pub poisson: f64,
}

impl Default for BeamSpec {
    fn default() -> Self {
        Self {
            length: 1000.0,
            side: 10.0,
            young: 2.0e5,
            poisson: 0.266,
        }
    }
}

/// Saint-Venant torsion constant of a square section is `0.1406 a^4`.
pub const SQUARE_TORSION_FACTOR: f64 = 0.1406;

/// Canonical test loads for the beam: `Fx` 1000 N, `Fy` and `Fz` 1 N,
/// torques 1000 N·mm. Tip rotations stay below 0.6 degrees.
pub const BEAM_LOADS: [f64; 6] = [1000.0, 1.0, 1.0, 1000.0, 1000.0, 1000.0];

impl BeamSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.length, self.side, self.young]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive {
            return Err(Error::InvalidBeam(
                "length, side and Young's modulus must be positive".into(),
            ));
        }
        if !(self.poisson > 0.0 && self.poisson < 0.5) {
            return Err(Error::InvalidBeam(format!(
                "Poisson's ratio {} outside (0, 0.5)",
                self.poisson
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.side * self.side
    }

    /// `I_y = I_z`
    pub fn second_moment(&self) -> f64 {
        self.side.powi(4) / 12.0
    }

    pub fn shear_modulus(&self) -> f64 {
        self.young / (2.0 * (1.0 + self.poisson))
    }

    pub fn torsion_constant(&self) -> f64 {
        SQUARE_TORSION_FACTOR * self.side.powi(4)
    }

    /// Reference point at the free end.
    pub fn tip(&self) -> Vector3<f64> {
        Vector3::new(self.length, 0.0, 0.0)
    }
}

/// Euler-Bernoulli compliance of the free end. Ten nonzero elements:
///
/// ```text
/// k11 = L/EA   k22 = k33 = L^3/3EI   k44 = L/GJ   k55 = k66 = L/EI
/// k26 = k62 = L^2/2EI   k35 = k53 = -L^2/2EI
/// ```
pub fn beam_compliance_oracle(spec: &BeamSpec) -> Result<ComplianceMatrix> {
    spec.validate()?;
    let l = spec.length;
    let e = spec.young;
    let i = spec.second_moment();
    let mut k = Matrix6::zeros();
    k[(0, 0)] = l / (e * spec.area());
    k[(1, 1)] = l.powi(3) / (3.0 * e * i);
    k[(2, 2)] = k[(1, 1)];
    k[(3, 3)] = l / (spec.shear_modulus() * spec.torsion_constant());
    k[(4, 4)] = l / (e * i);
    k[(5, 5)] = k[(4, 4)];
    let coupling = l * l / (2.0 * e * i);
    k[(1, 5)] = coupling;
    k[(5, 1)] = coupling;
    k[(2, 4)] = -coupling;
    k[(4, 2)] = -coupling;
    Ok(ComplianceMatrix {
        k,
        significance_mask: None,
        symmetrized: true,
    })
}

pub fn beam_tip_deflection(spec: &BeamSpec, wrench: &Wrench) -> Result<Deflection> {
    if wrench.single_component().is_none() {
        return Err(Error::NotCanonical(
            "beam loads must have exactly one nonzero component".into(),
        ));
    }
    let k = beam_compliance_oracle(spec)?;
    Ok(Deflection::from_vector(&(k.k * wrench.to_vector())))
}

/// Sensor field around the beam tip: the tip neighborhood moves rigidly by
/// the oracle deflection, plus noise. Positions are relative to the tip.
pub fn beam_tip_field(
    spec: &BeamSpec,
    wrench: &Wrench,
    pattern: &MeshPattern,
    sigma: f64,
    seed: u64,
) -> Result<DisplacementField> {
    let deflection = beam_tip_deflection(spec, wrench)?;
    let grid = generate_pattern(pattern, Vector3::zeros())?;
    apply_rigid_transform(
        &grid,
        &GroundTruth::new(deflection, sigma, seed)?,
        RotationModel::Differential,
    )
}
