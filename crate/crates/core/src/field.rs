//! Nodal displacement fields and virtual-sensor selection.
//!
//! A field is an ordered list of nodes, each carrying its initial position and
//! its displacement under load. Positions are in mm. Once a field has been
//! centered, positions are relative to the reference point at which the
//! lumped compliance is defined.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance (mm) applied on sensor region boundaries.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub position: Vector3<f64>,
    pub displacement: Vector3<f64>,
}

impl Node {
    pub fn new(position: Vector3<f64>, displacement: Vector3<f64>) -> Self {
        Self {
            position,
            displacement,
        }
    }

    fn is_finite(&self) -> bool {
        self.position.iter().chain(self.displacement.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    nodes: Vec<Node>,
    reference_point: Vector3<f64>,
    centered: bool,
}

impl DisplacementField {
    /// Field in global coordinates with the given reference point. Call
    /// [`DisplacementField::center`] before estimation.
    pub fn new(nodes: Vec<Node>, reference_point: Vector3<f64>) -> Result<Self> {
        Self::build(nodes, reference_point, false)
    }

    /// Field whose positions are already relative to the reference point.
    pub fn from_centered(nodes: Vec<Node>) -> Result<Self> {
        Self::build(nodes, Vector3::zeros(), true)
    }

    fn build(nodes: Vec<Node>, reference_point: Vector3<f64>, centered: bool) -> Result<Self> {
        if let Some(index) = nodes.iter().position(|n| !n.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if !reference_point.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRegion("non-finite reference point".into()));
        }
        Ok(Self {
            nodes,
            reference_point,
            centered,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn reference_point(&self) -> Vector3<f64> {
        self.reference_point
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn positions(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.nodes.iter().map(|n| n.position)
    }

    /// Shift the origin to the reference point. Displacements are untouched.
    pub fn center(&self) -> Result<Self> {
        if self.centered {
            return Err(Error::AlreadyCentered);
        }
        let nodes = self
            .nodes
            .iter()
            .map(|n| Node::new(n.position - self.reference_point, n.displacement))
            .collect();
        Ok(Self {
            nodes,
            reference_point: self.reference_point,
            centered: true,
        })
    }

    /// Sub-field of the nodes lying inside `region`, in input order.
    pub fn select(&self, region: &SensorRegion) -> Result<Self> {
        if !self.centered {
            return Err(Error::NotCentered);
        }
        region.validate()?;
        let nodes: Vec<Node> = self
            .nodes
            .iter()
            .filter(|n| region.contains(&n.position))
            .copied()
            .collect();
        if nodes.is_empty() {
            return Err(Error::EmptySelection);
        }
        Ok(Self {
            nodes,
            ..self.clone()
        })
    }

    pub fn centroid(&self) -> Result<Vector3<f64>> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyField);
        }
        let sum: Vector3<f64> = self.positions().sum();
        Ok(sum / self.nodes.len() as f64)
    }

    /// Keep only the nodes at `indices` (ascending, deduplicated by caller).
    pub fn retain_indices(&self, indices: &[usize]) -> Self {
        Self {
            nodes: indices.iter().map(|&i| self.nodes[i]).collect(),
            ..self.clone()
        }
    }

    /// Same positions with displacements replaced node by node.
    pub fn with_displacements<I>(&self, displacements: I) -> Self
    where
        I: IntoIterator<Item = Vector3<f64>>,
    {
        let nodes = self
            .nodes
            .iter()
            .zip(displacements)
            .map(|(n, d)| Node::new(n.position, d))
            .collect();
        Self {
            nodes,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    /// The two remaining axis indices, in increasing order.
    pub fn others(self) -> [usize; 2] {
        match self {
            Axis::X => [1, 2],
            Axis::Y => [0, 2],
            Axis::Z => [0, 1],
        }
    }
}

/// Geometry of a virtual sensor.
///
/// `Layer` is an unbounded slab `|x[axis] - coordinate| <= thickness / 2`; its
/// coordinate is absolute in the centered frame, so the region center is not
/// used for it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum SensorShape {
    Cube { edge: f64 },
    Square { edge: f64, normal: Axis },
    Layer { axis: Axis, coordinate: f64, thickness: f64 },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorRegion {
    #[serde(flatten)]
    pub shape: SensorShape,
    #[serde(default = "origin")]
    pub center: [f64; 3],
}

fn origin() -> [f64; 3] {
    [0.0; 3]
}

impl SensorRegion {
    pub fn new(shape: SensorShape, center: Vector3<f64>) -> Self {
        Self {
            shape,
            center: center.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims: &[(&str, f64)] = match self.shape {
            SensorShape::Cube { edge } => &[("edge", edge)],
            SensorShape::Square { edge, .. } => &[("edge", edge)],
            SensorShape::Layer { thickness, coordinate, .. } => {
                if !coordinate.is_finite() {
                    return Err(Error::InvalidRegion("layer coordinate must be finite".into()));
                }
                &[("thickness", thickness)]
            }
            SensorShape::Sphere { radius } => &[("radius", radius)],
        };
        for &(name, value) in dims {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidRegion(format!("{name} must be positive, got {value}")));
            }
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidRegion("non-finite center".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let rel = p - Vector3::from(self.center);
        let tol = BOUNDARY_TOLERANCE;
        match self.shape {
            SensorShape::Cube { edge } => rel.amax() <= edge / 2.0 + tol,
            SensorShape::Square { edge, normal } => {
                let [a, b] = normal.others();
                rel[normal.index()].abs() <= tol
                    && rel[a].abs() <= edge / 2.0 + tol
                    && rel[b].abs() <= edge / 2.0 + tol
            }
            SensorShape::Layer {
                axis,
                coordinate,
                thickness,
            } => (p[axis.index()] - coordinate).abs() <= thickness / 2.0 + tol,
            SensorShape::Sphere { radius } => rel.norm() <= radius + tol,
        }
    }
}
