//! Field CSV files and compliance-matrix documents.
//!
//! Field files hold one node per row under the header `x,y,z,dx,dy,dz`
//! (mm). Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::compliance::{ComplianceMatrix, SignificanceMask};
use crate::error::{Error, Result};
use crate::field::{DisplacementField, Node};

pub const FIELD_HEADER: [&str; 6] = ["x", "y", "z", "dx", "dy", "dz"];

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parse field rows from `reader`; `path` only labels error messages.
pub fn parse_field_csv<R: Read>(
    reader: R,
    path: &Path,
    reference_point: Vector3<f64>,
) -> Result<DisplacementField> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| {
        let line = e.position().map_or(1, |p| p.line());
        parse_error(path, line, e.to_string())
    })?;
    let names: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names != FIELD_HEADER {
        let line = header.position().map_or(1, |p| p.line());
        return Err(parse_error(
            path,
            line,
            format!("expected header {}, found {}", FIELD_HEADER.join(","), names.join(",")),
        ));
    }
    let mut nodes = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let mut v = [0.0; 6];
        for (slot, (name, text)) in v.iter_mut().zip(FIELD_HEADER.iter().zip(record.iter())) {
            *slot = text
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_error(path, line, format!("bad {name} value {text:?}")))?;
        }
        nodes.push(Node::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        ));
    }
    if nodes.is_empty() {
        return Err(parse_error(path, 1, "no nodes"));
    }
    DisplacementField::new(nodes, reference_point)
}

pub fn read_field_csv(path: &Path, reference_point: Vector3<f64>) -> Result<DisplacementField> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    parse_field_csv(file, path, reference_point)
}

/// Write nodes at `offset + position`. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_field_csv<W: Write>(out: W, field: &DisplacementField, offset: Vector3<f64>) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{}", FIELD_HEADER.join(","))?;
    for n in field.nodes() {
        let p = n.position + offset;
        let d = n.displacement;
        writeln!(w, "{},{},{},{},{},{}", p.x, p.y, p.z, d.x, d.y, d.z)?;
    }
    w.flush()
}

pub fn save_field_csv(path: &Path, field: &DisplacementField, offset: Vector3<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    write_field_csv(file, field, offset).map_err(|e| io_error(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub length: String,
    pub force: String,
    pub torque: String,
    pub angle: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            length: "mm".into(),
            force: "N".into(),
            torque: "N*mm".into(),
            angle: "rad".into(),
        }
    }
}

/// On-disk form of a compliance matrix. `k` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceDocument {
    pub k: [[f64; 6]; 6],
    #[serde(default)]
    pub units: Units,
    #[serde(default)]
    pub symmetrized: bool,
    #[serde(default)]
    pub significance_mask: Option<SignificanceMask>,
}

impl From<&ComplianceMatrix> for ComplianceDocument {
    fn from(c: &ComplianceMatrix) -> Self {
        let mut k = [[0.0; 6]; 6];
        for (i, row) in k.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = c.k[(i, j)];
            }
        }
        Self {
            k,
            units: Units::default(),
            symmetrized: c.symmetrized,
            significance_mask: c.significance_mask,
        }
    }
}

impl ComplianceDocument {
    pub fn to_matrix(&self) -> Result<ComplianceMatrix> {
        if self.units != Units::default() {
            return Err(Error::InvalidUnits(format!("{:?}", self.units)));
        }
        Ok(ComplianceMatrix {
            k: Matrix6::from_fn(|i, j| self.k[i][j]),
            significance_mask: self.significance_mask,
            symmetrized: self.symmetrized,
        })
    }
}

pub fn parse_compliance_json(text: &str) -> Result<ComplianceMatrix> {
    serde_json::from_str::<ComplianceDocument>(text)?.to_matrix()
}

pub fn compliance_json(c: &ComplianceMatrix) -> String {
    serde_json::to_string_pretty(&ComplianceDocument::from(c)).expect("plain data serializes")
}

const ROW_LABELS: [&str; 6] = ["px", "py", "pz", "phx", "phy", "phz"];
const COL_LABELS: [&str; 6] = ["Fx", "Fy", "Fz", "Mx", "My", "Mz"];

/// Fixed-width table, exact zeros printed as `0`.
pub fn compliance_table(c: &ComplianceMatrix) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:>5}", "");
    for l in COL_LABELS {
        let _ = write!(s, "{l:>12}");
    }
    s.push('\n');
    for (i, label) in ROW_LABELS.iter().enumerate() {
        let _ = write!(s, "{label:>5}");
        for j in 0..6 {
            let v = c.k[(i, j)];
            if v == 0.0 {
                let _ = write!(s, "{:>12}", "0");
            } else {
                let _ = write!(s, "{v:>12.3e}");
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{apply_rigid_transform, generate_pattern, GroundTruth, MeshPattern, RotationModel};
    use crate::deflection::Deflection;

    fn parse(text: &str) -> Result<DisplacementField> {
        parse_field_csv(text.as_bytes(), Path::new("f.csv"), Vector3::zeros())
    }

    #[test]
    fn parses_rows_and_comments() {
        let f = parse("# exported\nx,y,z,dx,dy,dz\n1,2,3,0.1,0.2,0.3\n# mid\n 4 , 5 , 6 , 0 , 0 , 1e-5\n").unwrap();
        assert_eq!(f.len(), 2);
        assert!(!f.is_centered());
        assert_eq!(f.nodes()[1].position, Vector3::new(4.0, 5.0, 6.0));
        assert_eq!(f.nodes()[1].displacement.z, 1e-5);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse("x,y,z,dx,dy,dz\n1,2,3,0,0,0\n1,2,oops,0,0,0\n").unwrap_err();
        match e {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("{other}"),
        }
        assert!(matches!(parse("a,b,c\n1,2,3\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("x,y,z,dx,dy,dz\n1,2,3,0,0\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("x,y,z,dx,dy,dz\n1,2,3,0,0,NaN\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("x,y,z,dx,dy,dz\n"), Err(Error::Parse { .. })));
        let e = read_field_csv(Path::new("/nonexistent/f.csv"), Vector3::zeros()).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/f.csv"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let grid = generate_pattern(&MeshPattern::cubic(2.0, 1.0), Vector3::zeros()).unwrap();
        let truth = GroundTruth::new(
            Deflection::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1e-3, -2e-3, 3e-4)),
            1e-4,
            3,
        )
        .unwrap();
        let field = apply_rigid_transform(&grid, &truth, RotationModel::Differential).unwrap();
        let offset = Vector3::new(1000.0, 0.0, 0.0);
        let mut buf = Vec::new();
        write_field_csv(&mut buf, &field, offset).unwrap();
        let back = parse_field_csv(buf.as_slice(), Path::new("mem"), offset).unwrap().center().unwrap();
        for (a, b) in field.nodes().iter().zip(back.nodes()) {
            assert_eq!(a.displacement, b.displacement);
            assert!((a.position - b.position).norm() < 1e-12);
        }
    }

    #[test]
    fn compliance_json_round_trip() {
        let mut k = Matrix6::from_fn(|i, j| (i * 6 + j) as f64 * 1e-7);
        k[(2, 3)] = 0.0;
        let mut mask = [[true; 6]; 6];
        mask[2][3] = false;
        let c = ComplianceMatrix {
            k,
            significance_mask: Some(mask),
            symmetrized: false,
        };
        let text = compliance_json(&c);
        assert_eq!(parse_compliance_json(&text).unwrap(), c);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["k"][0][1], serde_json::json!(1e-7));
        assert_eq!(v["units"]["torque"], "N*mm");
    }

    #[test]
    fn foreign_units_are_rejected() {
        let text = r#"{"k": [[0,0,0,0,0,0],[0,0,0,0,0,0],[0,0,0,0,0,0],[0,0,0,0,0,0],[0,0,0,0,0,0],[0,0,0,0,0,0]],
            "units": {"length": "m", "force": "N", "torque": "N*m", "angle": "rad"}}"#;
        assert!(parse_compliance_json(text).is_err());
        assert!(parse_compliance_json(r#"{"k": [[1,2]]}"#).is_err());
    }

    #[test]
    fn table_layout() {
        let mut k = Matrix6::zeros();
        k[(0, 0)] = 5.0e-5;
        let t = compliance_table(&ComplianceMatrix::new(k));
        let lines: Vec<_> = t.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[0].contains("Fx") && lines[0].contains("Mz"));
        assert!(lines[1].contains("5.000e-5"));
        assert_eq!(lines[2].split_whitespace().skip(1).collect::<Vec<_>>(), vec!["0"; 6]);
    }
}
