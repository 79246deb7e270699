//! Full identification: fit every experiment, estimate the noise level,
//! drop outliers, refit, assemble `k`, test significance and symmetrize.

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compliance::{
    assemble_canonical, assemble_overdetermined, canonical_columns, ComplianceMatrix, Experiment,
    Wrench,
};
use crate::deflection::{estimate, Deflection, Estimator, FitResult};
use crate::error::{Error, Result};
use crate::field::DisplacementField;
use crate::stats::{
    estimate_sigma, filter_outliers, fit_covariance, significance_test, DeflectionCovariance,
    NoiseEstimate, OutlierRanking, SignificanceReport, DEFAULT_CONFIDENCE_MULTIPLIER,
    DEFAULT_OUTLIER_FRACTION,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyOptions {
    pub estimator: Estimator,
    pub outlier_fraction: f64,
    pub outlier_ranking: OutlierRanking,
    /// Filter-and-refit rounds.
    pub filter_passes: usize,
    pub confidence_multiplier: f64,
    pub symmetrize: bool,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self {
            estimator: Estimator::default(),
            outlier_fraction: DEFAULT_OUTLIER_FRACTION,
            outlier_ranking: OutlierRanking::default(),
            filter_passes: 1,
            confidence_multiplier: DEFAULT_CONFIDENCE_MULTIPLIER,
            symmetrize: true,
        }
    }
}

/// One loading experiment: the applied wrench and the centered sensor field.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub wrench: Wrench,
    pub field: DisplacementField,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDiagnostics {
    pub source: String,
    pub nodes: usize,
    pub nodes_used: usize,
    /// Node indices within the sensor field, in removal order.
    pub removed: Vec<usize>,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub deflection: Deflection,
    pub std_devs: [f64; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    /// After significance zeroing and, if requested, symmetrization.
    pub compliance: ComplianceMatrix,
    /// As assembled from the deflections.
    pub raw: ComplianceMatrix,
    pub asymmetry_norm: f64,
    pub noise: NoiseEstimate,
    pub significance: Option<SignificanceReport>,
    pub experiments: Vec<ExperimentDiagnostics>,
    pub covariances: Vec<DeflectionCovariance>,
}

struct Refit {
    fit: FitResult,
    removed: Vec<usize>,
    nodes_used: usize,
}

fn refit(data: &ExperimentData, first: &FitResult, options: &IdentifyOptions) -> Result<Refit> {
    let mut field = data.field.clone();
    let mut fit = first.clone();
    // Indices of `field` nodes in the original sensor field.
    let mut original: Vec<usize> = (0..field.len()).collect();
    let mut removed = Vec::new();
    if options.outlier_fraction > 0.0 {
        for _ in 0..options.filter_passes {
            let out = filter_outliers(&field, &fit, options.outlier_fraction, options.outlier_ranking)?;
            removed.extend(out.removed.iter().map(|&i| original[i]));
            let mut keep: Vec<bool> = vec![true; original.len()];
            for &i in &out.removed {
                keep[i] = false;
            }
            original = original
                .into_iter()
                .zip(keep)
                .filter_map(|(i, k)| k.then_some(i))
                .collect();
            field = out.field;
            fit = estimate(&field, options.estimator)?;
        }
    }
    Ok(Refit {
        fit,
        removed,
        nodes_used: field.len(),
    })
}

pub fn identify(data: &[ExperimentData], options: &IdentifyOptions) -> Result<Identification> {
    if data.len() < 6 {
        return Err(Error::InsufficientExperiments { got: data.len() });
    }
    if !(0.0..1.0).contains(&options.outlier_fraction) {
        return Err(Error::InvalidFraction(options.outlier_fraction));
    }
    for (i, d) in data.iter().enumerate() {
        if !d.field.is_centered() {
            return Err(Error::NotCentered.in_experiment(i));
        }
    }

    let first: Vec<FitResult> = data
        .par_iter()
        .enumerate()
        .map(|(i, d)| estimate(&d.field, options.estimator).map_err(|e| e.in_experiment(i)))
        .collect::<Result<_>>()?;
    let noise = estimate_sigma(&first)?;
    info!("sigma = {:e} mm over {} degrees of freedom", noise.sigma, noise.dof);

    let refits: Vec<Refit> = data
        .par_iter()
        .zip(&first)
        .enumerate()
        .map(|(i, (d, f))| refit(d, f, options).map_err(|e| e.in_experiment(i)))
        .collect::<Result<_>>()?;

    let covariances: Vec<DeflectionCovariance> = refits
        .iter()
        .enumerate()
        .map(|(i, r)| fit_covariance(&r.fit, noise.sigma).map_err(|e| e.in_experiment(i)))
        .collect::<Result<_>>()?;

    let experiments: Vec<Experiment> = data
        .iter()
        .zip(&refits)
        .map(|(d, r)| Experiment {
            wrench: d.wrench,
            deflection: r.fit.deflection,
            source: d.source.clone(),
        })
        .collect();

    let diagnostics: Vec<ExperimentDiagnostics> = data
        .iter()
        .zip(&first)
        .zip(&refits)
        .zip(&covariances)
        .map(|(((d, f), r), c)| {
            debug!(
                "{}: {} nodes, {} removed, objective {:e} -> {:e}",
                d.source,
                d.field.len(),
                r.removed.len(),
                f.objective,
                r.fit.objective
            );
            ExperimentDiagnostics {
                source: d.source.clone(),
                nodes: d.field.len(),
                nodes_used: r.nodes_used,
                removed: r.removed.clone(),
                initial_objective: f.objective,
                final_objective: r.fit.objective,
                deflection: r.fit.deflection,
                std_devs: c.std_devs().into(),
            }
        })
        .collect();

    let canonical = canonical_columns(&experiments).is_ok();
    let raw = if canonical {
        assemble_canonical(&experiments)?
    } else {
        assemble_overdetermined(&experiments)?
    };
    let asymmetry_norm = raw.asymmetry_norm();
    info!("asymmetry norm {asymmetry_norm:e}");

    let (significance, tested) = if canonical {
        let (report, zeroed) =
            significance_test(&raw, &experiments, &covariances, options.confidence_multiplier)?;
        info!("{} of 36 elements not significant", report.zeroed_count());
        (Some(report), zeroed)
    } else {
        warn!("wrenches are not canonical, significance test skipped");
        (None, raw.clone())
    };
    let compliance = if options.symmetrize {
        tested.symmetrize()
    } else {
        tested
    };

    Ok(Identification {
        compliance,
        raw,
        asymmetry_norm,
        noise,
        significance,
        experiments: diagnostics,
        covariances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compliance::canonical_wrench_scheme;
    use crate::field::Axis;
    use crate::synthetic::{beam_compliance_oracle, beam_tip_field, BeamSpec, MeshPattern};
    use approx::assert_relative_eq;

    fn beam_data(sigma: f64, seed: u64) -> Vec<ExperimentData> {
        let spec = BeamSpec::default();
        canonical_wrench_scheme([1000.0, 1.0, 1.0, 1000.0, 1000.0, 1000.0])
            .unwrap()
            .iter()
            .enumerate()
            .map(|(j, w)| ExperimentData {
                wrench: *w,
                field: beam_tip_field(
                    &spec,
                    w,
                    &MeshPattern::square(10.0, 1.0, Axis::X),
                    sigma,
                    seed + j as u64,
                )
                .unwrap(),
                source: format!("e{j}"),
            })
            .collect()
    }

    #[test]
    fn noise_free_round_trip() {
        let oracle = beam_compliance_oracle(&BeamSpec::default()).unwrap().k;
        let out = identify(&beam_data(0.0, 0), &IdentifyOptions::default()).unwrap();
        assert!(out.noise.sigma < 1e-12);
        assert!(out.compliance.symmetrized);
        for i in 0..6 {
            for j in 0..6 {
                let (got, truth) = (out.compliance.k[(i, j)], oracle[(i, j)]);
                if truth == 0.0 {
                    assert!(got.abs() <= 1e-15);
                } else {
                    assert_relative_eq!(got, truth, max_relative = 1e-9);
                }
            }
        }
        assert_eq!(out.experiments[0].nodes_used, 121 - 13);
    }

    #[test]
    fn noisy_identification_zeroes_structural_zeros() {
        let oracle = beam_compliance_oracle(&BeamSpec::default()).unwrap().k;
        let options = IdentifyOptions {
            confidence_multiplier: 4.0,
            ..IdentifyOptions::default()
        };
        let out = identify(&beam_data(5.6e-5, 11), &options).unwrap();
        let mask = out.compliance.significance_mask.unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(mask[i][j], oracle[(i, j)] != 0.0, "({i},{j})");
                let truth = oracle[(i, j)];
                if truth != 0.0 {
                    assert!((out.compliance.k[(i, j)] / truth - 1.0).abs() < 5e-3);
                }
            }
        }
        assert!((out.noise.sigma / 5.6e-5 - 1.0).abs() < 0.1);
    }

    #[test]
    fn without_symmetrization_the_raw_asymmetry_remains() {
        let options = IdentifyOptions {
            symmetrize: false,
            outlier_fraction: 0.0,
            ..IdentifyOptions::default()
        };
        let out = identify(&beam_data(5.6e-5, 3), &options).unwrap();
        assert!(!out.compliance.symmetrized);
        assert!(out.asymmetry_norm > 0.0);
        assert!(out.experiments.iter().all(|e| e.removed.is_empty()));
    }

    #[test]
    fn too_few_experiments() {
        let data = beam_data(0.0, 0);
        let err = identify(&data[..5], &IdentifyOptions::default()).unwrap_err();
        assert!(err.to_string().contains("insufficient experiments"));
        assert!(err.is_numerical());
    }

    #[test]
    fn degenerate_experiment_is_reported_by_index() {
        let mut data = beam_data(0.0, 0);
        let collinear = crate::synthetic::generate_pattern(
            &MeshPattern::Custom {
                nodes: (0..20).map(|i| [i as f64, 0.0, 0.0]).collect(),
            },
            nalgebra::Vector3::zeros(),
        )
        .unwrap();
        data[4].field = collinear;
        let err = identify(&data, &IdentifyOptions::default()).unwrap_err();
        assert_eq!(err.experiment_index(), Some(4));
        assert!(err.is_numerical());
    }

    #[test]
    fn multiple_passes_remove_more_nodes() {
        let options = IdentifyOptions {
            filter_passes: 2,
            ..IdentifyOptions::default()
        };
        let out = identify(&beam_data(5.6e-5, 1), &options).unwrap();
        let e = &out.experiments[0];
        assert_eq!(e.removed.len(), 13 + 11);
        assert_eq!(e.nodes_used, 121 - 24);
        let mut unique = e.removed.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), e.removed.len());
    }
}
