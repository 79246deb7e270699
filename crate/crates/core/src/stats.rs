//! Identification uncertainty: residual-based noise level, deflection
//! covariances, outlier filtering and significance of compliance elements.
//!
//! The noise model is i.i.d. Gaussian `N(0, sigma^2)` on every displacement
//! component. Under it the linearized estimator is unbiased with
//! `cov[p] = sigma^2 / n I` at the centroid and `cov[dphi] = sigma^2 M^-1`
//! where `M = sum P_i^T P_i`.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::compliance::{canonical_columns, ComplianceMatrix, Experiment, SignificanceMask};
use crate::deflection::{check_moment, moment_matrix, FitResult};
use crate::error::{Error, Result};
use crate::field::DisplacementField;

pub const DEFAULT_OUTLIER_FRACTION: f64 = 0.10;
pub const DEFAULT_CONFIDENCE_MULTIPLIER: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    /// mm
    pub sigma: f64,
    /// `sum (3 n_j - 6)` over the aggregated fits.
    pub dof: usize,
    pub per_experiment_sigma: Vec<f64>,
}

/// Pool the squared residuals of all fits: `sigma^2 = sum f_j / sum (3 n_j - 6)`.
pub fn estimate_sigma(fits: &[FitResult]) -> Result<NoiseEstimate> {
    if fits.is_empty() {
        return Err(Error::InsufficientDof { index: 0, nodes: 0 });
    }
    let mut dof = 0;
    let mut total = 0.0;
    let mut per_experiment_sigma = Vec::with_capacity(fits.len());
    for (index, fit) in fits.iter().enumerate() {
        let n = fit.node_count();
        if n < 3 {
            return Err(Error::InsufficientDof { index, nodes: n });
        }
        let d = 3 * n - 6;
        dof += d;
        total += fit.objective;
        per_experiment_sigma.push((fit.objective / d as f64).sqrt());
    }
    Ok(NoiseEstimate {
        sigma: (total / dof as f64).sqrt(),
        dof,
        per_experiment_sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeflectionCovariance {
    /// Covariance of the reference-point translation, mm^2.
    pub translation: Matrix3<f64>,
    /// rad^2
    pub rotation: Matrix3<f64>,
}

impl DeflectionCovariance {
    /// Standard deviations `(p_x, p_y, p_z, dphi_x, dphi_y, dphi_z)`.
    pub fn std_devs(&self) -> Vector6<f64> {
        let t = self.translation.diagonal();
        let r = self.rotation.diagonal();
        Vector6::new(t.x, t.y, t.z, r.x, r.y, r.z).map(|v| v.max(0.0).sqrt())
    }
}

fn cross_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn covariance_from_geometry(
    n: usize,
    centroid: &Vector3<f64>,
    moment: &Matrix3<f64>,
    sigma: f64,
) -> Result<DeflectionCovariance> {
    if !(sigma >= 0.0) {
        return Err(Error::NegativeSigma(sigma));
    }
    check_moment(moment)?;
    let var = sigma * sigma;
    let inv = moment
        .try_inverse()
        .ok_or_else(|| Error::DegenerateGeometry("moment matrix is singular".into()))?;
    let rotation = inv * var;
    // The reported translation is carried from the centroid to the reference
    // point, p_ref = p_c + [c]x dphi, and the two terms are uncorrelated.
    let lever = cross_matrix(centroid);
    let translation = Matrix3::identity() * (var / n as f64) + lever * rotation * lever.transpose();
    Ok(DeflectionCovariance {
        translation,
        rotation: (rotation + rotation.transpose()) / 2.0,
    })
}

pub fn deflection_covariance(field: &DisplacementField, sigma: f64) -> Result<DeflectionCovariance> {
    if field.len() < 3 {
        return Err(Error::TooFewNodes {
            required: 3,
            got: field.len(),
        });
    }
    let centroid = field.centroid()?;
    let moment = moment_matrix(field.positions().map(|p| p - centroid));
    covariance_from_geometry(field.len(), &centroid, &moment, sigma)
}

/// Same as [`deflection_covariance`] for the field a fit was computed on.
pub fn fit_covariance(fit: &FitResult, sigma: f64) -> Result<DeflectionCovariance> {
    covariance_from_geometry(fit.node_count(), &fit.centroid, &fit.moment, sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierRanking {
    /// Largest absolute residual component; a node goes if any axis is bad.
    #[default]
    MaxAxis,
    /// Euclidean norm of the residual vector.
    Norm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredField {
    pub field: DisplacementField,
    /// Indices into the input field, worst first.
    pub removed: Vec<usize>,
}

/// Drop the `ceil(fraction * n)` nodes with the largest residuals.
pub fn filter_outliers(
    field: &DisplacementField,
    fit: &FitResult,
    fraction: f64,
    ranking: OutlierRanking,
) -> Result<FilteredField> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidFraction(fraction));
    }
    let n = field.len();
    if fit.residuals.len() != n {
        return Err(Error::TooFewNodes {
            required: n,
            got: fit.residuals.len(),
        });
    }
    // Guard against 0.1 * 120 = 12.000000000000002.
    let count = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    if n - count.min(n) < 3 {
        return Err(Error::TooFewRemaining {
            remaining: n.saturating_sub(count),
        });
    }
    let score = |r: &Vector3<f64>| match ranking {
        OutlierRanking::MaxAxis => r.amax(),
        OutlierRanking::Norm => r.norm(),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        score(&fit.residuals[b])
            .total_cmp(&score(&fit.residuals[a]))
            .then(a.cmp(&b))
    });
    let removed = order[..count].to_vec();
    let mut keep = order[count..].to_vec();
    keep.sort_unstable();
    Ok(FilteredField {
        field: field.retain_indices(&keep),
        removed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementSignificance {
    pub row: usize,
    pub col: usize,
    pub estimate: f64,
    pub halfwidth: f64,
    pub significant: bool,
    /// `|estimate| / halfwidth`; absent when the interval has zero width.
    pub safety_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    /// Row-major, 36 entries.
    pub elements: Vec<ElementSignificance>,
    pub level_multiplier: f64,
    /// Two-sided Gaussian coverage of `±level_multiplier` standard deviations.
    pub confidence_level: f64,
}

impl SignificanceReport {
    pub fn element(&self, row: usize, col: usize) -> &ElementSignificance {
        &self.elements[row * 6 + col]
    }

    pub fn zeroed_count(&self) -> usize {
        self.elements.iter().filter(|e| !e.significant).count()
    }

    pub fn mask(&self) -> SignificanceMask {
        let mut m = [[false; 6]; 6];
        for e in &self.elements {
            m[e.row][e.col] = e.significant;
        }
        m
    }
}

pub fn confidence_level(multiplier: f64) -> f64 {
    statrs::function::erf::erf(multiplier / std::f64::consts::SQRT_2)
}

/// Confidence interval of every element of a canonically assembled `k`, and
/// the matrix with the non-significant elements set to zero.
///
/// Element `(i, j)` inherits the standard deviation of deflection component
/// `i` in the experiment loading component `j`, divided by that load.
pub fn significance_test(
    k: &ComplianceMatrix,
    experiments: &[Experiment],
    covariances: &[DeflectionCovariance],
    level_multiplier: f64,
) -> Result<(SignificanceReport, ComplianceMatrix)> {
    let columns = canonical_columns(experiments)?;
    let mut elements = Vec::with_capacity(36);
    let mut zeroed = k.k;
    let mut std_by_col = [Vector6::zeros(); 6];
    for (j, col) in columns.iter().enumerate() {
        let cov = covariances
            .get(col.experiment)
            .ok_or(Error::MissingCovariance {
                index: col.experiment,
            })?;
        std_by_col[j] = cov.std_devs() / col.magnitude.abs();
    }
    for i in 0..6 {
        for (j, std) in std_by_col.iter().enumerate() {
            let estimate = k.k[(i, j)];
            let halfwidth = level_multiplier * std[i];
            let significant = estimate.abs() > halfwidth;
            if !significant {
                zeroed[(i, j)] = 0.0;
            }
            elements.push(ElementSignificance {
                row: i,
                col: j,
                estimate,
                halfwidth,
                significant,
                safety_factor: (halfwidth > 0.0).then(|| estimate.abs() / halfwidth),
            });
        }
    }
    let report = SignificanceReport {
        elements,
        level_multiplier,
        confidence_level: confidence_level(level_multiplier),
    };
    let matrix = ComplianceMatrix {
        k: zeroed,
        significance_mask: Some(report.mask()),
        symmetrized: k.symmetrized,
    };
    Ok((report, matrix))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compliance::{assemble_canonical, canonical_wrench_scheme};
    use crate::deflection::{estimate_lin, Deflection};
    use crate::field::Node;
    use crate::gauss::GaussianSource;
    use approx::assert_relative_eq;
    use nalgebra::Matrix6;

    fn cube(half: i32) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        for x in -half..=half {
            for y in -half..=half {
                for z in -half..=half {
                    out.push(Vector3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        out
    }

    fn field(positions: &[Vector3<f64>], d: &Deflection, sigma: f64, seed: u64) -> DisplacementField {
        let mut g = GaussianSource::new(seed);
        let nodes = positions
            .iter()
            .map(|p| Node::new(*p, d.translation + d.rotation.cross(p) + g.vector3(sigma)))
            .collect();
        DisplacementField::from_centered(nodes).unwrap()
    }

    fn fake_fit(n: usize, objective: f64) -> FitResult {
        FitResult {
            deflection: Deflection::default(),
            residuals: vec![Vector3::zeros(); n],
            objective,
            centroid: Vector3::zeros(),
            moment: Matrix3::identity(),
            rotation: None,
        }
    }

    #[test]
    fn sigma_of_noise_free_fits_is_zero() {
        let d = Deflection::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1e-3, 0.0, -2e-3));
        let fit = estimate_lin(&field(&cube(5), &d, 0.0, 0)).unwrap();
        let est = estimate_sigma(&[fit.clone(), fit]).unwrap();
        assert!(est.sigma <= 1e-12);
        assert_eq!(est.dof, 2 * (3 * 1331 - 6));
    }

    #[test]
    fn sigma_pooling() {
        let fits = [fake_fit(4, 6.0), fake_fit(5, 18.0)];
        let est = estimate_sigma(&fits).unwrap();
        assert_eq!(est.dof, 6 + 9);
        assert_relative_eq!(est.sigma, (24.0f64 / 15.0).sqrt());
        assert_relative_eq!(est.per_experiment_sigma[0], 1.0);
        assert_relative_eq!(est.per_experiment_sigma[1], 2.0f64.sqrt());
        assert!(matches!(
            estimate_sigma(&[fake_fit(2, 0.0)]),
            Err(Error::InsufficientDof { index: 0, nodes: 2 })
        ));
        assert!(estimate_sigma(&[]).is_err());
    }

    #[test]
    fn single_trial_sigma_recovery() {
        // dof = 3987 per experiment, relative s.e. of sigma about 1.1%.
        let sigma = 5e-5;
        let d = Deflection::new(Vector3::new(1.0, 1.0, 1.0), Vector3::new(2e-3, 1e-3, -1e-3));
        let fits: Vec<_> = (0..6)
            .map(|s| estimate_lin(&field(&cube(5), &d, sigma, 100 + s)).unwrap())
            .collect();
        let est = estimate_sigma(&fits).unwrap();
        assert!((est.sigma / sigma - 1.0).abs() < 0.05, "{}", est.sigma);
        for s in &est.per_experiment_sigma {
            assert!((s / sigma - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn covariance_of_cubic_sensor() {
        let sigma = 5e-5;
        let f = field(&cube(5), &Deflection::default(), 0.0, 0);
        let cov = deflection_covariance(&f, sigma).unwrap();
        let sd = cov.std_devs();
        // sigma / sqrt(n)
        assert_relative_eq!(sd[0], sigma / 1331f64.sqrt(), max_relative = 1e-12);
        assert!((sd[0] / 1.37e-6 - 1.0).abs() < 0.01);
        // sigma / sqrt(d) with d = 26620 from direct summation.
        assert_relative_eq!(sd[3], sigma / 26620f64.sqrt(), max_relative = 1e-12);
        assert!((sd[3].to_degrees() / 1.8e-5 - 1.0).abs() < 0.05);
        // The cubic-field approximation sigma / (a sqrt(n / 6)) is within 10%.
        let approx = sigma / (10.0 * (1331.0f64 / 6.0).sqrt());
        assert!((sd[3] / approx - 1.0).abs() < 0.15);

        let zero = deflection_covariance(&f, 0.0).unwrap();
        assert_eq!(zero.translation, Matrix3::zeros());
        assert_eq!(zero.rotation, Matrix3::zeros());
        assert!(matches!(deflection_covariance(&f, -1.0), Err(Error::NegativeSigma(_))));
    }

    #[test]
    fn covariance_includes_transport_for_offset_sensors() {
        let offset = Vector3::new(20.0, 0.0, 0.0);
        let pos: Vec<_> = cube(2).into_iter().map(|p| p + offset).collect();
        let f = field(&pos, &Deflection::default(), 0.0, 0);
        let cov = deflection_covariance(&f, 1.0).unwrap();
        // Rotation about z moves the reference point along y by 20 * dphi_z.
        let expect_yy = 1.0 / 125.0 + 400.0 * cov.rotation[(2, 2)];
        assert_relative_eq!(cov.translation[(1, 1)], expect_yy, max_relative = 1e-12);
        assert_relative_eq!(cov.translation[(0, 0)], 1.0 / 125.0, max_relative = 1e-12);
    }

    #[test]
    fn fit_covariance_matches_field_covariance() {
        let f = field(&cube(3), &Deflection::default(), 1e-4, 9);
        let fit = estimate_lin(&f).unwrap();
        assert_relative_eq!(
            fit_covariance(&fit, 2.0).unwrap().rotation,
            deflection_covariance(&f, 2.0).unwrap().rotation,
            max_relative = 1e-12
        );
    }

    #[test]
    fn filter_counts_and_errors() {
        let f = field(&cube(1), &Deflection::default(), 1e-3, 3);
        let fit = estimate_lin(&f).unwrap();
        let none = filter_outliers(&f, &fit, 0.0, OutlierRanking::MaxAxis).unwrap();
        assert_eq!(none.field, f);
        assert!(none.removed.is_empty());

        let some = filter_outliers(&f, &fit, 0.1, OutlierRanking::MaxAxis).unwrap();
        assert_eq!(some.removed.len(), 3); // ceil(2.7)
        assert_eq!(some.field.len(), 24);

        assert!(matches!(
            filter_outliers(&f, &fit, 1.0, OutlierRanking::MaxAxis),
            Err(Error::InvalidFraction(_))
        ));
        assert!(matches!(
            filter_outliers(&f, &fit, 0.95, OutlierRanking::MaxAxis),
            Err(Error::TooFewRemaining { remaining: 1 })
        ));
    }

    #[test]
    fn ceil_is_robust_to_rounding() {
        let pos: Vec<_> = (0..120)
            .map(|i| Vector3::new((i % 5) as f64, (i / 5 % 4) as f64, (i / 20) as f64))
            .collect();
        let f = field(&pos, &Deflection::default(), 1e-3, 1);
        let fit = estimate_lin(&f).unwrap();
        let out = filter_outliers(&f, &fit, 0.1, OutlierRanking::MaxAxis).unwrap();
        assert_eq!(out.removed.len(), 12);
    }

    #[test]
    fn ranking_by_axis_versus_norm() {
        let pos = cube(1);
        let mut f = field(&pos, &Deflection::default(), 0.0, 0);
        let mut disp: Vec<Vector3<f64>> = f.nodes().iter().map(|n| n.displacement).collect();
        // Node 0 has one large component, node 1 a larger norm spread over axes.
        disp[0] = Vector3::new(1.0, 0.0, 0.0);
        disp[1] = Vector3::new(0.7, 0.7, 0.7);
        f = f.with_displacements(disp);
        let fit = FitResult {
            residuals: f.nodes().iter().map(|n| n.displacement).collect(),
            ..estimate_lin(&f).unwrap()
        };
        let by_axis = filter_outliers(&f, &fit, 0.01, OutlierRanking::MaxAxis).unwrap();
        let by_norm = filter_outliers(&f, &fit, 0.01, OutlierRanking::Norm).unwrap();
        assert_eq!(by_axis.removed, vec![0]);
        assert_eq!(by_norm.removed, vec![1]);
        // Node order of survivors is preserved.
        let kept: Vec<_> = by_axis.field.positions().collect();
        assert_eq!(kept, pos[1..].to_vec());
    }

    fn beam_like_experiments() -> Vec<Experiment> {
        let w = canonical_wrench_scheme([1000.0, 1.0, 1.0, 1000.0, 1000.0, 1000.0]).unwrap();
        let mut k = Matrix6::zeros();
        k[(0, 0)] = 5.0e-5;
        k[(2, 0)] = 1.8e-8;
        w.iter()
            .enumerate()
            .map(|(i, w)| {
                Experiment::new(*w, Deflection::from_vector(&(k * w.to_vector())), format!("e{i}"))
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn significance_zeroes_small_elements() {
        let exps = beam_like_experiments();
        let k = assemble_canonical(&exps).unwrap();
        // Translation s.t.d. chosen so that the k31 and k11 intervals are ±2.3e-8.
        let sd = 2.3e-8 * 1000.0 / 3.0;
        let cov = DeflectionCovariance {
            translation: Matrix3::identity() * sd * sd,
            rotation: Matrix3::identity() * 1e-20,
        };
        let covs = vec![cov; 6];
        let (report, zeroed) = significance_test(&k, &exps, &covs, 3.0).unwrap();
        let k31 = report.element(2, 0);
        assert_relative_eq!(k31.halfwidth, 2.3e-8, max_relative = 1e-12);
        assert!(!k31.significant);
        assert_eq!(zeroed.k[(2, 0)], 0.0);
        let k11 = report.element(0, 0);
        assert!(k11.significant);
        assert!(k11.safety_factor.unwrap() > 1e3);
        assert_eq!(zeroed.k[(0, 0)], 5.0e-5);
        let mask = zeroed.significance_mask.unwrap();
        assert!(mask[0][0] && !mask[2][0]);
        for e in &report.elements {
            let contains_zero = e.estimate - e.halfwidth <= 0.0 && 0.0 <= e.estimate + e.halfwidth;
            assert_eq!(e.significant, !contains_zero);
        }
        assert_relative_eq!(report.confidence_level, 0.9973, epsilon = 1e-4);
    }

    #[test]
    fn noise_free_intervals_keep_nonzero_elements() {
        let exps = beam_like_experiments();
        let k = assemble_canonical(&exps).unwrap();
        let cov = DeflectionCovariance {
            translation: Matrix3::zeros(),
            rotation: Matrix3::zeros(),
        };
        let (report, zeroed) = significance_test(&k, &exps, &[cov; 6], 3.0).unwrap();
        assert_eq!(zeroed.k, k.k);
        assert_eq!(report.zeroed_count(), 34);
        assert!(report.element(2, 0).significant);
        assert!(report.element(2, 0).safety_factor.is_none());
    }

    #[test]
    fn missing_covariance() {
        let exps = beam_like_experiments();
        let k = assemble_canonical(&exps).unwrap();
        let cov = DeflectionCovariance {
            translation: Matrix3::zeros(),
            rotation: Matrix3::zeros(),
        };
        assert!(matches!(
            significance_test(&k, &exps, &[cov; 4], 3.0),
            Err(Error::MissingCovariance { index: 4 })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn filter_is_bounded_and_deterministic(seed in any::<u64>(), fraction in 0.0..0.8f64) {
                let f = field(&cube(2), &Deflection::default(), 1e-3, seed);
                let fit = estimate_lin(&f).unwrap();
                let a = filter_outliers(&f, &fit, fraction, OutlierRanking::MaxAxis).unwrap();
                let b = filter_outliers(&f, &fit, fraction, OutlierRanking::MaxAxis).unwrap();
                prop_assert!(a.removed.len() as f64 <= (fraction * 125.0).ceil());
                prop_assert_eq!(a.field.len() + a.removed.len(), 125);
                prop_assert_eq!(a, b);
            }
        }
    }
}
