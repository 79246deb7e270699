//! The three subcommands as plain functions, so tests can call them
//! without spawning the binary.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use stiffid_core::compliance::canonical_wrench_scheme;
use stiffid_core::gauss::GaussianSource;
use stiffid_core::io::{compliance_json, compliance_table, read_field_csv, save_field_csv, ComplianceDocument};
use stiffid_core::pipeline::{identify, ExperimentData, Identification, IdentifyOptions};
use stiffid_core::studies::{
    beam_experiments, noise_bands, rotation_bands, run_amplitude_study, run_beam_study, run_noise_study,
    translation_bands, zero_detection_bands, AmplitudeStudy, BandCheck, BeamStudy, NoiseStudy,
};
use stiffid_core::synthetic::{BeamSpec, MeshPattern, BEAM_LOADS};
use stiffid_core::{Error, Result, SensorRegion, SensorShape};

use crate::manifest::{Manifest, ManifestExperiment, ManifestOptions, ManifestWrench, Quantity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Text,
    Csv,
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

/// Read, center and cut every experiment of a manifest.
pub fn load_experiments(manifest: &Manifest, base: &Path) -> Result<Vec<ExperimentData>> {
    let reference = manifest.reference_point.length()?;
    (0..manifest.experiments.len())
        .into_par_iter()
        .map(|i| {
            let e = &manifest.experiments[i];
            let load = || -> Result<ExperimentData> {
                let wrench = e.wrench.to_wrench()?;
                let field = read_field_csv(&manifest.field_path(base, i), reference)?.center()?;
                let field = match &e.sensor {
                    Some(region) => field.select(region)?,
                    None => field,
                };
                info!("{}: {} nodes in the sensor", manifest.experiment_name(i), field.len());
                Ok(ExperimentData {
                    wrench,
                    field,
                    source: manifest.experiment_name(i),
                })
            };
            load().map_err(|err| err.in_experiment(i))
        })
        .collect()
}

#[derive(Debug)]
pub struct IdentifyOutput {
    pub options: IdentifyOptions,
    pub identification: Identification,
}

impl IdentifyOutput {
    pub fn stiffness(&self) -> Option<[[f64; 6]; 6]> {
        let k = self.identification.compliance.invert_to_stiffness().ok()?;
        Some(std::array::from_fn(|i| std::array::from_fn(|j| k[(i, j)])))
    }

    pub fn document(&self) -> Value {
        let id = &self.identification;
        json!({
            "compliance": ComplianceDocument::from(&id.compliance),
            "stiffness": self.stiffness(),
            "raw_compliance": ComplianceDocument::from(&id.raw).k,
            "asymmetry_norm": id.asymmetry_norm,
            "noise": id.noise,
            "significance": id.significance,
            "experiments": id.experiments,
            "options": self.options,
        })
    }

    pub fn run_log(&self) -> Value {
        let id = &self.identification;
        json!({
            "sigma": id.noise.sigma,
            "dof": id.noise.dof,
            "asymmetry_norm": id.asymmetry_norm,
            "experiments": id.experiments.iter().zip(&id.noise.per_experiment_sigma).map(|(e, sigma)| json!({
                "source": e.source,
                "nodes": e.nodes,
                "nodes_used": e.nodes_used,
                "removed": e.removed,
                "sigma": sigma,
            })).collect::<Vec<_>>(),
        })
    }

    pub fn text(&self) -> String {
        let id = &self.identification;
        let mut s = compliance_table(&id.compliance);
        s.push_str(&format!("sigma {:.3e} mm, asymmetry {:.3e}", id.noise.sigma, id.asymmetry_norm));
        if let Some(r) = &id.significance {
            s.push_str(&format!(", {} of 36 elements zeroed", r.zeroed_count()));
        }
        s.push('\n');
        s
    }

    pub fn csv(&self) -> String {
        let k = &self.identification.compliance.k;
        let mut s = String::new();
        for i in 0..6 {
            let row: Vec<String> = (0..6).map(|j| format!("{:e}", k[(i, j)])).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => pretty(&self.document()),
            Format::Text => self.text(),
            Format::Csv => self.csv(),
        }
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        write_file(&dir.join("compliance.json"), &format!("{}\n", compliance_json(&self.identification.compliance)))?;
        write_file(&dir.join("significance.json"), &pretty(&self.identification.significance))?;
        write_file(&dir.join("compliance.txt"), &self.text())?;
        write_file(&dir.join("identification.json"), &pretty(&self.document()))?;
        write_file(&dir.join("run_log.json"), &pretty(&self.run_log()))
    }
}

pub fn cmd_identify(manifest_path: &Path, overrides: &ManifestOptions) -> Result<IdentifyOutput> {
    let manifest = Manifest::load(manifest_path)?;
    let options = manifest.options.overridden_by(overrides).resolve()?;
    if manifest.experiments.len() < 6 {
        return Err(Error::InsufficientExperiments {
            got: manifest.experiments.len(),
        });
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let data = load_experiments(&manifest, base)?;
    let identification = identify(&data, &options)?;
    Ok(IdentifyOutput {
        options,
        identification,
    })
}

/// Beam, sensor grid, loads and noise for `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub beam: BeamSpec,
    pub pattern: MeshPattern,
    /// `Fx, Fy, Fz` in N, `Mx, My, Mz` in N·mm.
    pub loads: [f64; 6],
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            beam: BeamSpec::default(),
            pattern: MeshPattern::cubic(10.0, 1.0),
            loads: BEAM_LOADS,
            sigma: 0.0,
            seed: 42,
        }
    }
}

impl SimulationSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    }

    fn sensor(&self) -> Option<SensorRegion> {
        let shape = match &self.pattern {
            MeshPattern::Cubic { edge, .. } => SensorShape::Cube { edge: *edge },
            MeshPattern::Square { edge, normal, .. } => SensorShape::Square {
                edge: *edge,
                normal: *normal,
            },
            MeshPattern::Custom { .. } => return None,
        };
        Some(SensorRegion::new(shape, Vector3::zeros()))
    }
}

pub const FIELD_FILES: [&str; 6] = ["fx.csv", "fy.csv", "fz.csv", "mx.csv", "my.csv", "mz.csv"];

/// Write six field files and `manifest.json` into `out`. Returns the
/// manifest path.
pub fn cmd_simulate(spec: &SimulationSpec, out: &Path) -> Result<PathBuf> {
    if !(spec.sigma >= 0.0) {
        return Err(Error::NegativeSigma(spec.sigma));
    }
    let data = beam_experiments(
        &spec.beam,
        &spec.pattern,
        spec.loads,
        spec.sigma,
        &mut GaussianSource::new(spec.seed),
    )?;
    create_dir(out)?;
    let tip = spec.beam.tip();
    let wrenches = canonical_wrench_scheme(spec.loads)?;
    let mut experiments = Vec::with_capacity(6);
    for ((d, w), file) in data.iter().zip(&wrenches).zip(FIELD_FILES) {
        save_field_csv(&out.join(file), &d.field, tip)?;
        experiments.push(ManifestExperiment {
            name: Some(file.trim_end_matches(".csv").to_string()),
            field_file: PathBuf::from(file),
            wrench: ManifestWrench {
                force: Quantity::new(w.force.into(), "N"),
                torque: Quantity::new(w.torque.into(), "N*mm"),
            },
            sensor: spec.sensor(),
        });
    }
    let manifest = Manifest {
        reference_point: Quantity::new(tip.into(), "mm"),
        experiments,
        options: ManifestOptions::default(),
    };
    let path = out.join("manifest.json");
    write_file(&path, &pretty(&manifest))?;
    write_file(&out.join("simulation.json"), &pretty(spec))?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Amplitude,
    Noise,
    ZeroDetection,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Amplitude => "amplitude",
            Study::Noise => "noise",
            Study::ZeroDetection => "zero-detection",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
pub struct BenchmarkArgs {
    pub seed: Option<u64>,
    pub sigma: Option<f64>,
    pub trials: Option<usize>,
    pub confidence_multiplier: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkOutput {
    pub study: String,
    /// Named CSV tables.
    pub tables: Vec<(String, String)>,
    pub summary: Value,
    pub bands: Vec<BandCheck>,
}

impl BenchmarkOutput {
    pub fn passed(&self) -> bool {
        self.bands.iter().all(|b| b.passed)
    }

    pub fn failures(&self) -> Vec<&BandCheck> {
        self.bands.iter().filter(|b| !b.passed).collect()
    }

    fn json(&self) -> Value {
        json!({
            "study": self.study,
            "passed": self.passed(),
            "summary": self.summary,
            "bands": self.bands,
        })
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => pretty(&self.json()),
            Format::Csv => self.tables.iter().map(|(_, t)| t.as_str()).collect::<Vec<_>>().join("\n"),
            Format::Text => {
                let mut s = String::new();
                for b in &self.bands {
                    s.push_str(&format!(
                        "{} {}: {:e} in [{:e}, {:e}]\n",
                        if b.passed { "PASS" } else { "FAIL" },
                        b.name,
                        b.value,
                        b.lower,
                        b.upper
                    ));
                }
                s
            }
        }
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        for (name, table) in &self.tables {
            write_file(&dir.join(format!("{name}.csv")), table)?;
        }
        write_file(&dir.join(format!("{}.json", self.study)), &pretty(&self.json()))
    }
}

pub fn cmd_benchmark(study: Study, args: &BenchmarkArgs) -> Result<BenchmarkOutput> {
    let seed = args.seed.unwrap_or(0);
    match study {
        Study::Amplitude => {
            let sigma = args.sigma.unwrap_or(0.0);
            let trials = args.trials.unwrap_or(if sigma > 0.0 { 20 } else { 1 });
            let rot_study = AmplitudeStudy {
                sigma,
                trials,
                seed,
                ..AmplitudeStudy::rotations()
            };
            let rot = run_amplitude_study(&rot_study)?;
            let trans = run_amplitude_study(&AmplitudeStudy {
                sigma,
                trials,
                seed,
                ..AmplitudeStudy::translations()
            })?;
            let bands = if sigma == 0.0 {
                let mut b = rotation_bands(&rot);
                b.extend(translation_bands(&trans, 1e-13));
                b
            } else {
                let band = &rot.best_band;
                vec![
                    BandCheck::new("smallest best amplitude (deg)", band.iter().copied().fold(f64::INFINITY, f64::min), 0.01, 0.2),
                    BandCheck::new("largest best amplitude (deg)", band.iter().copied().fold(0.0, f64::max), 0.01, 0.2),
                ]
            };
            Ok(BenchmarkOutput {
                study: study.name().into(),
                tables: vec![
                    ("rotation_errors".into(), rot.to_csv()),
                    ("translation_errors".into(), trans.to_csv()),
                ],
                summary: json!({ "rotation": rot, "translation": trans, "sigma": sigma, "trials": trials, "seed": seed }),
                bands,
            })
        }
        Study::Noise => {
            let sigma = args.sigma.unwrap_or(5e-5);
            let r = run_noise_study(&NoiseStudy {
                sigma,
                trials: args.trials.unwrap_or(500),
                seed,
                ..NoiseStudy::default()
            })?;
            let table = format!(
                "quantity,empirical,predicted\ntranslation_sd_mm,{:e},{:e}\nrotation_sd_deg,{:e},{:e}\nsigma_hat_mean_mm,{:e},{:e}\n",
                r.translation_sd, r.predicted_translation_sd, r.rotation_sd_deg, r.predicted_rotation_sd_deg, r.sigma_hat_mean, sigma
            );
            Ok(BenchmarkOutput {
                study: study.name().into(),
                tables: vec![("noise".into(), table)],
                bands: noise_bands(&r, sigma),
                summary: serde_json::to_value(&r)?,
            })
        }
        Study::ZeroDetection => {
            let defaults = BeamStudy::default();
            let r = run_beam_study(&BeamStudy {
                sigma: args.sigma.unwrap_or(defaults.sigma),
                trials: args.trials.unwrap_or(100),
                seed,
                options: IdentifyOptions {
                    confidence_multiplier: args.confidence_multiplier.unwrap_or(4.0),
                    ..defaults.options
                },
                ..defaults
            })?;
            let mut table = String::from("seed,sigma_hat,zeros_detected,nonzeros_retained,min_nonzero_safety,max_relative_error\n");
            for t in &r.trials {
                table.push_str(&format!(
                    "{},{:e},{},{},{:e},{:e}\n",
                    t.seed, t.sigma_hat, t.zeros_detected, t.nonzeros_retained, t.min_nonzero_safety, t.max_relative_error
                ));
            }
            Ok(BenchmarkOutput {
                study: study.name().into(),
                tables: vec![("zero_detection".into(), table)],
                bands: zero_detection_bands(&r, 0.95),
                summary: serde_json::to_value(&r)?,
            })
        }
    }
}
