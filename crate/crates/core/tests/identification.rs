use nalgebra::Vector3;
use proptest::prelude::*;
use stiffid_core::deflection::{estimate, estimate_lin};
use stiffid_core::gauss::GaussianSource;
use stiffid_core::io::{parse_field_csv, write_field_csv};
use stiffid_core::pipeline::{identify, IdentifyOptions};
use stiffid_core::studies::beam_experiments;
use stiffid_core::synthetic::{
    apply_rigid_transform, beam_compliance_oracle, generate_pattern, BeamSpec, GroundTruth, MeshPattern, RotationModel,
    BEAM_LOADS,
};
use stiffid_core::{AngleExtraction, Axis, Deflection, Estimator};

fn beam_data(sigma: f64, seed: u64) -> Vec<stiffid_core::pipeline::ExperimentData> {
    beam_experiments(
        &BeamSpec::default(),
        &MeshPattern::square(10.0, 1.0, Axis::X),
        BEAM_LOADS,
        sigma,
        &mut GaussianSource::new(seed),
    )
    .unwrap()
}

#[test]
fn noisy_beam_recovers_oracle_structure() {
    let oracle = beam_compliance_oracle(&BeamSpec::default()).unwrap();
    let id = identify(&beam_data(5.6e-5, 3), &IdentifyOptions::default()).unwrap();
    let k = &id.compliance;
    assert_eq!(k.asymmetry_norm(), 0.0);
    for i in 0..6 {
        for j in 0..6 {
            let truth = oracle.k[(i, j)];
            if truth == 0.0 {
                assert_eq!(k.k[(i, j)], 0.0, "k{}{} not zeroed", i + 1, j + 1);
            } else {
                assert!((k.k[(i, j)] / truth - 1.0).abs() < 5e-3, "k{}{}", i + 1, j + 1);
            }
        }
    }
    assert!((id.noise.sigma / 5.6e-5 - 1.0).abs() < 0.05);
}

#[test]
fn experiment_order_does_not_matter() {
    let data = beam_data(5e-5, 8);
    let mut reversed = data.clone();
    reversed.reverse();
    let a = identify(&data, &IdentifyOptions::default()).unwrap();
    let b = identify(&reversed, &IdentifyOptions::default()).unwrap();
    assert!((a.compliance.k - b.compliance.k).norm() <= 1e-12 * a.compliance.k.norm());
}

#[test]
fn repeated_experiments_use_least_squares() {
    let mut data = beam_data(5e-5, 1);
    data.extend(beam_data(5e-5, 2));
    let id = identify(&data, &IdentifyOptions::default()).unwrap();
    assert!(id.significance.is_none());
    let oracle = beam_compliance_oracle(&BeamSpec::default()).unwrap();
    assert!((id.compliance.k[(0, 0)] / oracle.k[(0, 0)] - 1.0).abs() < 1e-2);
}

#[test]
fn unfiltered_and_unsymmetrized_options_are_respected() {
    let opts = IdentifyOptions {
        outlier_fraction: 0.0,
        symmetrize: false,
        ..IdentifyOptions::default()
    };
    let id = identify(&beam_data(5e-5, 4), &opts).unwrap();
    assert!(id.experiments.iter().all(|e| e.removed.is_empty() && e.nodes_used == e.nodes));
    assert!(!id.compliance.symmetrized);
}

#[test]
fn field_csv_round_trip_is_exact() {
    let grid = generate_pattern(&MeshPattern::cubic(4.0, 1.0), Vector3::zeros()).unwrap();
    let truth = GroundTruth::new(
        Deflection::new(Vector3::new(0.1, -0.2, 0.3), Vector3::new(1e-4, 2e-4, -3e-4)),
        1e-5,
        5,
    )
    .unwrap();
    let field = apply_rigid_transform(&grid, &truth, RotationModel::AxisAngle).unwrap();
    let tip = Vector3::new(1000.0, 0.0, 0.0);
    let mut buf = Vec::new();
    write_field_csv(&mut buf, &field, tip).unwrap();
    let back = parse_field_csv(buf.as_slice(), "mem.csv".as_ref(), tip).unwrap().center().unwrap();
    assert_eq!(back.len(), field.len());
    for (a, b) in back.nodes().iter().zip(field.nodes()) {
        assert_eq!(a.displacement, b.displacement);
        assert!((a.position - b.position).norm() < 1e-12);
    }
}

fn small_vec(bound: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-bound..bound).prop_map(Vector3::from)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lin_is_exact_for_linearized_motion(p in small_vec(1.0), phi in small_vec(1e-2)) {
        let grid = generate_pattern(&MeshPattern::cubic(6.0, 1.0), Vector3::zeros()).unwrap();
        let field = apply_rigid_transform(
            &grid,
            &GroundTruth::noise_free(Deflection::new(p, phi)),
            RotationModel::Differential,
        ).unwrap();
        let fit = estimate_lin(&field).unwrap();
        prop_assert!((fit.deflection.translation - p).norm() < 1e-13);
        prop_assert!((fit.deflection.rotation - phi).norm() < 1e-14);
        prop_assert!(fit.objective < 1e-24);
    }

    #[test]
    fn every_estimator_recovers_pure_translation(p in small_vec(10.0)) {
        let grid = generate_pattern(&MeshPattern::square(6.0, 1.0, Axis::Z), Vector3::zeros()).unwrap();
        let field = apply_rigid_transform(
            &grid,
            &GroundTruth::noise_free(Deflection::new(p, Vector3::zeros())),
            RotationModel::AxisAngle,
        ).unwrap();
        for est in Estimator::ALL {
            let d = estimate(&field, est).unwrap().deflection;
            prop_assert!((d.translation - p).norm() < 1e-12, "{}", est);
            prop_assert!(d.rotation.norm() < 1e-12, "{}", est);
        }
    }

    #[test]
    fn svd_avg_and_lin_agree_to_second_order(phi in small_vec(1e-3)) {
        let grid = generate_pattern(&MeshPattern::cubic(10.0, 2.0), Vector3::zeros()).unwrap();
        let field = apply_rigid_transform(
            &grid,
            &GroundTruth::noise_free(Deflection::new(Vector3::zeros(), phi)),
            RotationModel::AxisAngle,
        ).unwrap();
        let lin = estimate(&field, Estimator::Lin).unwrap().deflection.rotation;
        let svd = estimate(&field, Estimator::Svd(AngleExtraction::Averaged)).unwrap().deflection.rotation;
        prop_assert!((lin - svd).norm() <= 1e-15 + phi.norm().powi(2));
    }
}
