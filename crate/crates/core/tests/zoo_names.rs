//! Every advertised architecture builds, runs at full input length and
//! agrees with its own shape trace.

use wavecnn_core::zoo::{supported_names, ArchitectureSpec, ModelGraph, INPUT_SAMPLES};
use wavecnn_core::{RandomSource, Tensor};

#[test]
fn every_name_builds_and_infers() {
    let names = supported_names();
    assert!(names.len() >= 20, "{names:?}");
    let mut rng = RandomSource::new(3);
    let x = Tensor::from_vec(
        vec![2, INPUT_SAMPLES, 1],
        (0..2 * INPUT_SAMPLES).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
    )
    .unwrap();
    for name in names {
        let spec = ArchitectureSpec::from_name(&name, 4).unwrap().with_width(1.0 / 32.0).unwrap();
        let trace = spec.shape_trace(INPUT_SAMPLES).unwrap();
        let model: ModelGraph<f32> = ModelGraph::from_spec(spec, &mut RandomSource::new(1)).unwrap();
        let p = model.infer(&x).unwrap();
        assert_eq!(p.dims(), &[2, 4], "{name}");
        assert_eq!(trace.last().unwrap().channels, 4, "{name}");
        for row in p.data().chunks(4) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5, "{name}");
        }
    }
}

#[test]
fn variant_receptive_fields_and_strides() {
    let first = |name: &str| {
        let s = ArchitectureSpec::from_name(name, 10).unwrap();
        (s.layers[0].rf, s.layers[0].stride)
    };
    assert_eq!(first("m18"), (80, 4));
    assert_eq!(first("m18-srf"), (8, 4));
    assert_eq!(first("m18-lrf"), (320, 4));
    assert_eq!(first("m11-stride1"), (80, 1));
}
