//! Monte-Carlo benchmark studies on synthetic fields.
//!
//! Trial `t` of a study seeded with `s` draws all of its noise from one
//! generator seeded with `s + t`. Trials run in parallel and are merged in
//! trial order, so results do not depend on the thread count.

use std::fmt::Write as _;

use nalgebra::{Matrix6, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compliance::{canonical_wrench_scheme, ComplianceMatrix};
use crate::deflection::{estimate, Deflection, Estimator, FitResult};
use crate::error::{Error, Result};
use crate::field::{Axis, DisplacementField};
use crate::gauss::GaussianSource;
use crate::pipeline::{identify, ExperimentData, IdentifyOptions};
use crate::stats::{deflection_covariance, estimate_sigma, filter_outliers, OutlierRanking};
use crate::synthetic::{
    add_noise, apply_rigid_transform, beam_compliance_oracle, beam_tip_deflection, contaminate,
    generate_pattern, BeamSpec, GroundTruth, MeshPattern, RotationModel, BEAM_LOADS,
};

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::InvalidOption("a study needs at least one trial".into()));
    }
    Ok(())
}

fn run_trials<T, F>(trials: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut GaussianSource) -> Result<T> + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|t| f(t, &mut GaussianSource::for_trial(seed, t as u64)))
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(0.0, f64::max)
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Sample standard deviation around the sample mean.
fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1).max(1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmplitudeKind {
    /// Rotation `(b, b, b)`; amplitudes and errors in degrees.
    Rotation,
    /// Translation `(a, a, a)`; amplitudes and errors in mm.
    Translation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeStudy {
    pub kind: AmplitudeKind,
    pub amplitudes: Vec<f64>,
    pub pattern: MeshPattern,
    pub model: RotationModel,
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
}

impl AmplitudeStudy {
    /// Noise-free rotations on the 1331-node cube, elementary rotations.
    pub fn rotations() -> Self {
        Self {
            kind: AmplitudeKind::Rotation,
            amplitudes: vec![0.01, 0.05, 0.1, 0.5, 1.0, 5.0],
            pattern: MeshPattern::cubic(10.0, 1.0),
            model: RotationModel::Elementary,
            sigma: 0.0,
            trials: 1,
            seed: 0,
            estimators: Estimator::ALL.to_vec(),
        }
    }

    pub fn translations() -> Self {
        Self {
            kind: AmplitudeKind::Translation,
            amplitudes: vec![0.01, 0.1, 1.0, 10.0],
            ..Self::rotations()
        }
    }

    fn truth(&self, amplitude: f64) -> Deflection {
        match self.kind {
            AmplitudeKind::Rotation => {
                Deflection::new(Vector3::zeros(), Vector3::repeat(amplitude.to_radians()))
            }
            AmplitudeKind::Translation => Deflection::new(Vector3::repeat(amplitude), Vector3::zeros()),
        }
    }

    fn error(&self, fit: &FitResult, truth: &Deflection) -> f64 {
        match self.kind {
            AmplitudeKind::Rotation => (fit.deflection.rotation - truth.rotation).amax().to_degrees(),
            AmplitudeKind::Translation => (fit.deflection.translation - truth.translation).amax(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeRow {
    pub method: String,
    /// Largest component error over trials, one per amplitude.
    pub max_error: Vec<f64>,
    pub mean_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeTable {
    pub kind: AmplitudeKind,
    pub amplitudes: Vec<f64>,
    pub rows: Vec<AmplitudeRow>,
    /// Amplitudes where the first method's mean error relative to the
    /// amplitude is within twice its minimum.
    pub best_band: Vec<f64>,
}

impl AmplitudeTable {
    pub fn row(&self, method: &str) -> Option<&AmplitudeRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn relative_errors(&self, method: &str) -> Option<Vec<f64>> {
        self.row(method)
            .map(|r| r.mean_error.iter().zip(&self.amplitudes).map(|(e, a)| e / a).collect())
    }

    /// One line per method and statistic, one column per amplitude.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,statistic");
        for a in &self.amplitudes {
            let _ = write!(s, ",{a}");
        }
        s.push('\n');
        for r in &self.rows {
            for (stat, values) in [("max", &r.max_error), ("mean", &r.mean_error)] {
                let _ = write!(s, "{},{stat}", r.method);
                for v in values {
                    let _ = write!(s, ",{v:e}");
                }
                s.push('\n');
            }
        }
        s
    }
}

pub fn run_amplitude_study(study: &AmplitudeStudy) -> Result<AmplitudeTable> {
    check_trials(study.trials)?;
    if study.estimators.is_empty() || study.amplitudes.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::InvalidOption("amplitudes must be positive".into()));
    }
    let grid = generate_pattern(&study.pattern, Vector3::zeros())?;
    // errors[t][a][m]
    let errors = run_trials(study.trials, study.seed, |_, noise| {
        study
            .amplitudes
            .iter()
            .map(|&a| {
                let truth = study.truth(a);
                let exact = apply_rigid_transform(&grid, &GroundTruth::noise_free(truth), study.model)?;
                let field = add_noise(&exact, study.sigma, noise);
                study
                    .estimators
                    .iter()
                    .map(|e| Ok(study.error(&estimate(&field, *e)?, &truth)))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<AmplitudeRow> = study
        .estimators
        .iter()
        .enumerate()
        .map(|(m, e)| {
            let per_amp: Vec<Vec<f64>> = (0..study.amplitudes.len())
                .map(|a| errors.iter().map(|t| t[a][m]).collect())
                .collect();
            AmplitudeRow {
                method: e.to_string(),
                max_error: per_amp.iter().map(|v| max(v)).collect(),
                mean_error: per_amp.iter().map(|v| mean(v)).collect(),
            }
        })
        .collect();
    let relative: Vec<f64> = rows[0]
        .mean_error
        .iter()
        .zip(&study.amplitudes)
        .map(|(e, a)| e / a)
        .collect();
    let best = relative.iter().copied().fold(f64::INFINITY, f64::min);
    let best_band = study
        .amplitudes
        .iter()
        .zip(&relative)
        .filter(|(_, r)| **r <= 2.0 * best)
        .map(|(a, _)| *a)
        .collect();
    Ok(AmplitudeTable {
        kind: study.kind,
        amplitudes: study.amplitudes.clone(),
        rows,
        best_band,
    })
}

/// Repeated noisy fits of one known deflection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStudy {
    pub pattern: MeshPattern,
    pub deflection: Deflection,
    pub sigma: f64,
    /// Fields per trial pooled into one noise estimate.
    pub experiments: usize,
    pub trials: usize,
    pub seed: u64,
    pub estimator: Estimator,
}

impl Default for NoiseStudy {
    fn default() -> Self {
        Self {
            pattern: MeshPattern::cubic(10.0, 1.0),
            deflection: Deflection::new(Vector3::repeat(1.0), Vector3::repeat(0.1f64.to_radians())),
            sigma: 5e-5,
            experiments: 6,
            trials: 500,
            seed: 0,
            estimator: Estimator::Lin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStudyResult {
    pub trials: usize,
    pub nodes: usize,
    /// Empirical s.t.d. of the translation error, pooled over axes, mm.
    pub translation_sd: f64,
    pub rotation_sd_deg: f64,
    /// `sigma / sqrt(n)` and its rotational counterpart from the covariance.
    pub predicted_translation_sd: f64,
    pub predicted_rotation_sd_deg: f64,
    pub max_translation_error: f64,
    pub max_rotation_error_deg: f64,
    pub sigma_hat_mean: f64,
    /// Largest `|sigma_hat / sigma - 1|` over trials.
    pub sigma_hat_max_deviation: f64,
}

pub fn run_noise_study(study: &NoiseStudy) -> Result<NoiseStudyResult> {
    check_trials(study.trials)?;
    if study.experiments == 0 {
        return Err(Error::InsufficientExperiments { got: 0 });
    }
    let grid = generate_pattern(&study.pattern, Vector3::zeros())?;
    let exact = apply_rigid_transform(&grid, &GroundTruth::noise_free(study.deflection), RotationModel::Differential)?;
    let cov = deflection_covariance(&grid, study.sigma)?;
    let per_trial = run_trials(study.trials, study.seed, |_, noise| {
        let fits = (0..study.experiments)
            .map(|_| estimate(&add_noise(&exact, study.sigma, noise), study.estimator))
            .collect::<Result<Vec<_>>>()?;
        let sigma = estimate_sigma(&fits)?.sigma;
        Ok((fits[0].deflection, sigma))
    })?;
    let mut t_err = Vec::with_capacity(3 * study.trials);
    let mut r_err = Vec::with_capacity(3 * study.trials);
    for (d, _) in &per_trial {
        t_err.extend((d.translation - study.deflection.translation).iter());
        r_err.extend((d.rotation - study.deflection.rotation).iter().map(|v| v.to_degrees()));
    }
    let sigmas: Vec<f64> = per_trial.iter().map(|(_, s)| *s).collect();
    let sd = cov.std_devs();
    Ok(NoiseStudyResult {
        trials: study.trials,
        nodes: grid.len(),
        translation_sd: std_dev(&t_err),
        rotation_sd_deg: std_dev(&r_err),
        predicted_translation_sd: (sd[0] + sd[1] + sd[2]) / 3.0,
        predicted_rotation_sd_deg: ((sd[3] + sd[4] + sd[5]) / 3.0).to_degrees(),
        max_translation_error: t_err.iter().copied().map(f64::abs).fold(0.0, f64::max),
        max_rotation_error_deg: r_err.iter().copied().map(f64::abs).fold(0.0, f64::max),
        sigma_hat_mean: mean(&sigmas),
        sigma_hat_max_deviation: if study.sigma > 0.0 {
            sigmas.iter().map(|s| (s / study.sigma - 1.0).abs()).fold(0.0, f64::max)
        } else {
            max(&sigmas)
        },
    })
}

/// Full identification of the cantilever from noisy tip fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamStudy {
    pub beam: BeamSpec,
    pub pattern: MeshPattern,
    pub loads: [f64; 6],
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub options: IdentifyOptions,
    /// Smallest `|k| / halfwidth` for a nonzero element to count as retained.
    pub min_safety_factor: f64,
}

impl Default for BeamStudy {
    fn default() -> Self {
        Self {
            beam: BeamSpec::default(),
            pattern: MeshPattern::square(10.0, 1.0, Axis::X),
            loads: BEAM_LOADS,
            sigma: 5.6e-5,
            trials: 20,
            seed: 0,
            options: IdentifyOptions::default(),
            min_safety_factor: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamTrial {
    pub seed: u64,
    pub sigma_hat: f64,
    /// Structural zeros found not significant, out of 26.
    pub zeros_detected: usize,
    /// Nonzero elements significant with the required safety factor, out of 10.
    pub nonzeros_retained: usize,
    pub min_nonzero_safety: f64,
    /// Largest relative error over the nonzero elements of the final matrix.
    pub max_relative_error: f64,
}

impl BeamTrial {
    pub fn passed(&self, zeros: usize, nonzeros: usize) -> bool {
        self.zeros_detected == zeros && self.nonzeros_retained == nonzeros
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamStudyResult {
    pub oracle: [[f64; 6]; 6],
    pub zero_count: usize,
    pub trials: Vec<BeamTrial>,
    pub successes: usize,
    pub median_max_relative_error: f64,
    pub worst_max_relative_error: f64,
}

pub fn beam_experiments(
    beam: &BeamSpec,
    pattern: &MeshPattern,
    loads: [f64; 6],
    sigma: f64,
    noise: &mut GaussianSource,
) -> Result<Vec<ExperimentData>> {
    let grid = generate_pattern(pattern, Vector3::zeros())?;
    canonical_wrench_scheme(loads)?
        .iter()
        .enumerate()
        .map(|(j, w)| {
            let truth = GroundTruth::noise_free(beam_tip_deflection(beam, w)?);
            let exact = apply_rigid_transform(&grid, &truth, RotationModel::Differential)?;
            Ok(ExperimentData {
                wrench: *w,
                field: add_noise(&exact, sigma, noise),
                source: format!("experiment {}", j + 1),
            })
        })
        .collect()
}

fn score_beam(oracle: &Matrix6<f64>, id: &crate::pipeline::Identification, min_safety: f64) -> (usize, usize, f64, f64) {
    let report = id.significance.as_ref();
    let mut zeros = 0;
    let mut retained = 0;
    let mut min_safety_seen = f64::INFINITY;
    let mut worst = 0.0f64;
    for i in 0..6 {
        for j in 0..6 {
            let truth = oracle[(i, j)];
            let e = report.map(|r| r.element(i, j));
            if truth == 0.0 {
                if e.is_some_and(|e| !e.significant) {
                    zeros += 1;
                }
            } else {
                let safety = e.and_then(|e| e.safety_factor).unwrap_or(f64::INFINITY);
                min_safety_seen = min_safety_seen.min(safety);
                if e.is_some_and(|e| e.significant) && safety >= min_safety {
                    retained += 1;
                }
                worst = worst.max((id.compliance.k[(i, j)] / truth - 1.0).abs());
            }
        }
    }
    (zeros, retained, min_safety_seen, worst)
}

pub fn run_beam_study(study: &BeamStudy) -> Result<BeamStudyResult> {
    check_trials(study.trials)?;
    let oracle = beam_compliance_oracle(&study.beam)?.k;
    let trials = run_trials(study.trials, study.seed, |t, noise| {
        let data = beam_experiments(&study.beam, &study.pattern, study.loads, study.sigma, noise)?;
        let id = identify(&data, &study.options)?;
        let (zeros_detected, nonzeros_retained, min_nonzero_safety, max_relative_error) =
            score_beam(&oracle, &id, study.min_safety_factor);
        Ok(BeamTrial {
            seed: study.seed.wrapping_add(t as u64),
            sigma_hat: id.noise.sigma,
            zeros_detected,
            nonzeros_retained,
            min_nonzero_safety,
            max_relative_error,
        })
    })?;
    let zero_count = oracle.iter().filter(|v| **v == 0.0).count();
    let successes = trials
        .iter()
        .filter(|t| t.passed(zero_count, 36 - zero_count))
        .count();
    let errs: Vec<f64> = trials.iter().map(|t| t.max_relative_error).collect();
    Ok(BeamStudyResult {
        oracle: crate::io::ComplianceDocument::from(&ComplianceMatrix::new(oracle)).k,
        zero_count,
        successes,
        median_max_relative_error: median(&errs),
        worst_max_relative_error: max(&errs),
        trials,
    })
}

/// Filtering versus no filtering on fields with a few gross outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierStudy {
    pub pattern: MeshPattern,
    pub deflection: Deflection,
    pub sigma: f64,
    pub contaminated_fraction: f64,
    /// Spike length in units of `sigma`.
    pub spike: f64,
    pub filter_fraction: f64,
    pub ranking: OutlierRanking,
    pub estimator: Estimator,
    pub trials: usize,
    pub seed: u64,
}

impl Default for OutlierStudy {
    fn default() -> Self {
        Self {
            pattern: MeshPattern::cubic(10.0, 1.0),
            deflection: Deflection::new(Vector3::repeat(1.0), Vector3::repeat(0.1f64.to_radians())),
            sigma: 5e-5,
            contaminated_fraction: 0.05,
            spike: 100.0,
            filter_fraction: 0.1,
            ranking: OutlierRanking::MaxAxis,
            estimator: Estimator::Lin,
            trials: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierTrial {
    pub unfiltered_error: f64,
    pub filtered_error: f64,
    /// Contaminated nodes among the removed ones.
    pub spikes_removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierStudyResult {
    pub trials: Vec<OutlierTrial>,
    pub improved: usize,
}

/// RMS over the nodes of the displacement error the deflection error causes.
pub fn field_error(field: &DisplacementField, estimate: &Deflection, truth: &Deflection) -> f64 {
    let dp = estimate.translation - truth.translation;
    let dr = estimate.rotation - truth.rotation;
    let sum: f64 = field.positions().map(|p| (dp + dr.cross(&p)).norm_squared()).sum();
    (sum / field.len() as f64).sqrt()
}

pub fn run_outlier_study(study: &OutlierStudy) -> Result<OutlierStudyResult> {
    check_trials(study.trials)?;
    let grid = generate_pattern(&study.pattern, Vector3::zeros())?;
    let exact = apply_rigid_transform(&grid, &GroundTruth::noise_free(study.deflection), RotationModel::Differential)?;
    let trials = run_trials(study.trials, study.seed, |t, noise| {
        let noisy = add_noise(&exact, study.sigma, noise);
        let spike_seed = study.seed.wrapping_add(t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let (field, spikes) = contaminate(&noisy, study.contaminated_fraction, study.spike * study.sigma, spike_seed)?;
        let raw = estimate(&field, study.estimator)?;
        let filtered = filter_outliers(&field, &raw, study.filter_fraction, study.ranking)?;
        let refit = estimate(&filtered.field, study.estimator)?;
        Ok(OutlierTrial {
            unfiltered_error: field_error(&grid, &raw.deflection, &study.deflection),
            filtered_error: field_error(&grid, &refit.deflection, &study.deflection),
            spikes_removed: filtered.removed.iter().filter(|i| spikes.binary_search(i).is_ok()).count(),
        })
    })?;
    let improved = trials.iter().filter(|t| t.filtered_error < t.unfiltered_error).count();
    Ok(OutlierStudyResult { trials, improved })
}

/// Where the fields of an equivalence study come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquivalenceFields {
    /// Random clouds of 20 to 200 nodes in random boxes, away from the origin.
    RandomClouds,
    /// The 1331-node cube centered on the reference point.
    CenteredCube,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceStudy {
    pub fields: EquivalenceFields,
    pub trials: usize,
    /// Upper bound of `|dphi|`, degrees.
    pub max_angle_deg: f64,
    pub model: RotationModel,
    pub sigma: f64,
    pub seed: u64,
    /// Largest tolerated condition number of the moment matrix.
    pub max_condition: f64,
}

impl Default for EquivalenceStudy {
    fn default() -> Self {
        Self {
            fields: EquivalenceFields::RandomClouds,
            trials: 1000,
            max_angle_deg: 0.1,
            model: RotationModel::AxisAngle,
            sigma: 0.0,
            seed: 0,
            max_condition: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceResult {
    pub trials: usize,
    /// Per trial, `max |LIN - SVD|` over the six deflection components.
    pub gaps: Vec<f64>,
    pub max_gap: f64,
    pub median_gap: f64,
}

impl EquivalenceResult {
    pub fn within(&self, tolerance: f64) -> usize {
        self.gaps.iter().filter(|g| **g <= tolerance).count()
    }
}

fn random_cloud(noise: &mut GaussianSource, max_condition: f64) -> Result<DisplacementField> {
    loop {
        let n = 20 + (noise.uniform() * 181.0) as usize;
        let half = Vector3::from_fn(|_, _| 2.0 + 8.0 * noise.uniform());
        let center = Vector3::from_fn(|_, _| 20.0 * (noise.uniform() - 0.5));
        let nodes: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                let u = Vector3::from_fn(|_, _| 2.0 * noise.uniform() - 1.0);
                (center + half.component_mul(&u)).into()
            })
            .collect();
        let field = generate_pattern(&MeshPattern::Custom { nodes }, Vector3::zeros())?;
        let c = field.centroid()?;
        let eig = crate::deflection::moment_matrix(field.positions().map(|p| p - c)).symmetric_eigenvalues();
        if eig.max() <= max_condition * eig.min() {
            return Ok(field);
        }
    }
}

pub fn run_equivalence_study(study: &EquivalenceStudy) -> Result<EquivalenceResult> {
    check_trials(study.trials)?;
    let cube = generate_pattern(&MeshPattern::cubic(10.0, 1.0), Vector3::zeros())?;
    let gaps = run_trials(study.trials, study.seed, |_, noise| {
        let grid = match study.fields {
            EquivalenceFields::RandomClouds => random_cloud(noise, study.max_condition)?,
            EquivalenceFields::CenteredCube => cube.clone(),
        };
        let angle = study.max_angle_deg.to_radians() * noise.uniform();
        let truth = Deflection::new(
            Vector3::from_fn(|_, _| 2.0 * noise.uniform() - 1.0),
            noise.unit_vector() * angle,
        );
        let exact = apply_rigid_transform(&grid, &GroundTruth::noise_free(truth), study.model)?;
        let field = add_noise(&exact, study.sigma, noise);
        let lin = estimate(&field, Estimator::Lin)?.deflection.to_vector();
        let svd = estimate(&field, Estimator::Svd(Default::default()))?.deflection.to_vector();
        Ok((lin - svd).amax())
    })?;
    Ok(EquivalenceResult {
        trials: study.trials,
        max_gap: max(&gaps),
        median_gap: median(&gaps),
        gaps,
    })
}

/// Published rotation errors (deg) at amplitudes 0.01, 0.05, 0.1, 0.5, 1 and
/// 5 degrees for the averaged rules and LIN.
pub const REFERENCE_ROTATION_ERRORS_AVG: [f64; 6] = [9e-7, 2e-5, 9e-5, 2e-3, 9e-3, 0.24];
/// Same for the single-entry rules.
pub const REFERENCE_ROTATION_ERRORS_PLUS: [f64; 6] = [2e-6, 4e-5, 2e-4, 4e-3, 2e-2, 0.48];
pub const REFERENCE_AMPLITUDES_DEG: [f64; 6] = [0.01, 0.05, 0.1, 0.5, 1.0, 5.0];

/// Reference row for a method name as produced by [`Estimator`]'s `Display`.
pub fn reference_rotation_errors(method: &str) -> [f64; 6] {
    match method {
        "lin" | "svd-avg" | "svd-avg-asin" => REFERENCE_ROTATION_ERRORS_AVG,
        _ => REFERENCE_ROTATION_ERRORS_PLUS,
    }
}

/// A measured value against an acceptance interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCheck {
    pub name: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub passed: bool,
}

impl BandCheck {
    pub fn new(name: impl Into<String>, value: f64, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            value,
            lower,
            upper,
            passed: value >= lower && value <= upper,
        }
    }

    /// `value` within a factor of `factor` of `target`.
    pub fn factor(name: impl Into<String>, value: f64, target: f64, factor: f64) -> Self {
        Self::new(name, value, target / factor, target * factor)
    }

    pub fn relative(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        Self::new(name, value, target * (1.0 - tolerance), target * (1.0 + tolerance))
    }

    pub fn at_most(name: impl Into<String>, value: f64, upper: f64) -> Self {
        Self::new(name, value, f64::NEG_INFINITY, upper)
    }

    pub fn at_least(name: impl Into<String>, value: f64, lower: f64) -> Self {
        Self::new(name, value, lower, f64::INFINITY)
    }
}

/// Bands for a noise-free rotation table over the reference amplitudes:
/// every method within a factor 2 of its reference row, and averaged rules
/// no worse than the single-entry ones at every amplitude.
pub fn rotation_bands(table: &AmplitudeTable) -> Vec<BandCheck> {
    let mut out = Vec::new();
    for r in &table.rows {
        let reference = reference_rotation_errors(&r.method);
        for (k, &a) in REFERENCE_AMPLITUDES_DEG.iter().enumerate() {
            if let Some(col) = table.amplitudes.iter().position(|x| (x - a).abs() < 1e-12) {
                out.push(BandCheck::factor(
                    format!("{} at {a} deg", r.method),
                    r.max_error[col],
                    reference[k],
                    2.0,
                ));
            }
        }
    }
    if let (Some(avg), Some(plus)) = (table.row("svd-avg"), table.row("svd-plus")) {
        for (k, a) in table.amplitudes.iter().enumerate() {
            out.push(BandCheck::at_most(
                format!("svd-avg minus svd-plus at {a} deg"),
                avg.max_error[k] - plus.max_error[k],
                0.0,
            ));
        }
    }
    out
}

pub fn translation_bands(table: &AmplitudeTable, tolerance: f64) -> Vec<BandCheck> {
    table
        .rows
        .iter()
        .flat_map(|r| {
            table.amplitudes.iter().zip(&r.max_error).map(move |(a, e)| {
                BandCheck::at_most(format!("{} at {a} mm", r.method), *e, tolerance)
            })
        })
        .collect()
}

/// Noise study against the covariance prediction and the injected sigma.
pub fn noise_bands(result: &NoiseStudyResult, sigma: f64) -> Vec<BandCheck> {
    if sigma == 0.0 {
        return vec![
            BandCheck::at_most("max translation error", result.max_translation_error, 1e-12),
            BandCheck::at_most("max rotation error", result.max_rotation_error_deg.to_radians(), 1e-12),
            BandCheck::at_most("mean sigma estimate", result.sigma_hat_mean, 1e-12),
        ];
    }
    vec![
        BandCheck::relative("translation s.t.d.", result.translation_sd, result.predicted_translation_sd, 0.15),
        BandCheck::relative("rotation s.t.d.", result.rotation_sd_deg, result.predicted_rotation_sd_deg, 0.15),
        BandCheck::relative("mean sigma estimate", result.sigma_hat_mean, sigma, 0.01),
        BandCheck::at_most("worst single-trial sigma deviation", result.sigma_hat_max_deviation, 0.05),
    ]
}

pub fn zero_detection_bands(result: &BeamStudyResult, required_fraction: f64) -> Vec<BandCheck> {
    let n = result.trials.len() as f64;
    vec![BandCheck::at_least(
        "fraction of seeds with all zeros and nonzeros classified",
        result.successes as f64 / n,
        required_fraction,
    )]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translations_are_recovered_to_rounding() {
        let table = run_amplitude_study(&AmplitudeStudy::translations()).unwrap();
        assert_eq!(table.rows.len(), 7);
        for r in &table.rows {
            assert!(max(&r.max_error) <= 1e-13, "{} {:?}", r.method, r.max_error);
        }
    }

    #[test]
    fn linearization_error_grows_quadratically() {
        let study = AmplitudeStudy {
            amplitudes: vec![0.1, 1.0],
            estimators: vec![Estimator::Lin],
            ..AmplitudeStudy::rotations()
        };
        let lin = run_amplitude_study(&study).unwrap().rows[0].max_error.clone();
        let ratio = lin[1] / lin[0];
        assert!((50.0..=150.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn csv_layout() {
        let study = AmplitudeStudy {
            amplitudes: vec![0.01, 1.0],
            pattern: MeshPattern::cubic(2.0, 1.0),
            estimators: vec![Estimator::Lin, Estimator::Svd(Default::default())],
            ..AmplitudeStudy::rotations()
        };
        let csv = run_amplitude_study(&study).unwrap().to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "method,statistic,0.01,1");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("lin,max,"));
        assert!(lines[3].starts_with("svd-avg,max,"));
    }

    #[test]
    fn noisy_amplitude_band() {
        let study = AmplitudeStudy {
            amplitudes: vec![0.001, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 5.0],
            sigma: 5e-5,
            trials: 10,
            estimators: vec![Estimator::Lin],
            ..AmplitudeStudy::rotations()
        };
        let table = run_amplitude_study(&study).unwrap();
        assert!(!table.best_band.is_empty());
        assert!(table.best_band.iter().all(|b| (0.01..=0.2).contains(b)), "{:?}", table.best_band);
    }

    #[test]
    fn studies_are_seed_deterministic() {
        let study = NoiseStudy {
            pattern: MeshPattern::cubic(4.0, 1.0),
            trials: 8,
            seed: 77,
            ..NoiseStudy::default()
        };
        let a = run_noise_study(&study).unwrap();
        assert_eq!(a, run_noise_study(&study).unwrap());
        let b = run_noise_study(&NoiseStudy { seed: 78, ..study }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn noise_free_study_has_no_error() {
        let r = run_noise_study(&NoiseStudy {
            sigma: 0.0,
            trials: 2,
            ..NoiseStudy::default()
        })
        .unwrap();
        assert!(r.max_translation_error < 1e-12);
        assert!(r.max_rotation_error_deg < 1e-12);
        assert!(r.sigma_hat_mean < 1e-12);
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(run_noise_study(&NoiseStudy {
            trials: 0,
            ..NoiseStudy::default()
        })
        .is_err());
    }

    #[test]
    fn filtering_removes_the_spikes() {
        let r = run_outlier_study(&OutlierStudy {
            trials: 4,
            ..OutlierStudy::default()
        })
        .unwrap();
        for t in &r.trials {
            assert_eq!(t.spikes_removed, 67);
            assert!(t.filtered_error < t.unfiltered_error);
        }
    }

    #[test]
    fn centered_cubes_are_estimator_equivalent() {
        let r = run_equivalence_study(&EquivalenceStudy {
            fields: EquivalenceFields::CenteredCube,
            trials: 20,
            ..EquivalenceStudy::default()
        })
        .unwrap();
        assert!(r.max_gap < 1e-12, "{}", r.max_gap);
    }

    #[test]
    fn beam_study_smoke() {
        let r = run_beam_study(&BeamStudy {
            trials: 2,
            ..BeamStudy::default()
        })
        .unwrap();
        assert_eq!(r.zero_count, 26);
        assert_eq!(r.trials.len(), 2);
        assert!(r.worst_max_relative_error < 5e-3);
    }

    #[test]
    fn noise_free_rotation_table_meets_reference_bands() {
        let table = run_amplitude_study(&AmplitudeStudy::rotations()).unwrap();
        let bands = rotation_bands(&table);
        assert_eq!(bands.len(), 7 * 6 + 6);
        for b in &bands {
            assert!(b.passed, "{b:?}");
        }
    }

    #[test]
    fn band_construction() {
        assert!(BandCheck::factor("x", 1.9, 1.0, 2.0).passed);
        assert!(!BandCheck::factor("x", 2.1, 1.0, 2.0).passed);
        assert!(!BandCheck::relative("x", 1.2, 1.0, 0.15).passed);
        assert!(BandCheck::at_most("x", -1.0, 0.0).passed);
        assert!(!BandCheck::at_least("x", f64::NAN, 0.0).passed);
    }

    #[test]
    fn median_and_spread() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((std_dev(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
