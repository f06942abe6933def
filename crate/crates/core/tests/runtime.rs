use nandspin::runtime::model::{InputSpec, LayerKind, LayerSpec};
use nandspin::runtime::{oracle, toy_model, ToyConfig};
use nandspin::{run_model, Category, Error, FixedPointTensor, ModelSpec, Network, RunOptions};

fn run_both(spec: &ModelSpec, input: &FixedPointTensor) -> (FixedPointTensor, FixedPointTensor) {
    let net = Network::compile(spec).unwrap();
    let sim = run_model(&net, input, &RunOptions::default()).unwrap();
    let reference = oracle::run_network(&net, input).unwrap();
    (sim.output, reference)
}

#[test]
fn toy_models_match_the_oracle() {
    for seed in 0..5 {
        let toy = toy_model(seed, ToyConfig::default()).unwrap();
        let net = Network::compile(&toy.model).unwrap();
        let sim = run_model(&net, &toy.input, &RunOptions::default()).unwrap();
        let reference = oracle::run_network_trace(&net, &toy.input).unwrap();
        for (i, (a, b)) in sim.layer_outputs.iter().zip(&reference).enumerate() {
            assert_eq!(a, b, "seed {seed} layer {i}");
        }
        for cat in Category::ALL {
            assert!(sim.ledger.energy_aj(cat) > 0, "seed {seed}: {cat:?} is empty");
        }
        eprintln!(
            "{:?}",
            Category::ALL.map(|c| (c.name(), sim.ledger.energy_fj(c)))
        );
    }
}

fn conv_spec(dims: Vec<usize>, weights: serde_json::Value, k: u32, signed: bool) -> LayerSpec {
    LayerSpec {
        kind: LayerKind::Conv,
        dims,
        stride: 1,
        k_w: Some(k),
        k_i: None,
        k_o: Some(k),
        signed_weights: signed,
        relu: false,
        qmin: Some(0.0),
        qmax: Some(((1u32 << k) - 1) as f64),
        bn: None,
        bias: None,
        weights: Some(weights),
    }
}

#[test]
fn identity_kernel_reproduces_the_input() {
    let spec = ModelSpec {
        input: InputSpec { shape: vec![1, 4, 5], bits: 3 },
        layers: vec![conv_spec(vec![1, 1, 1, 1], serde_json::json!([[[[1]]]]), 3, false)],
    };
    let input = FixedPointTensor::unsigned(vec![1, 4, 5], 3, (0..20).map(|v| v % 8).collect()).unwrap();
    let (sim, reference) = run_both(&spec, &input);
    assert_eq!(sim.values, input.values);
    assert_eq!(reference.values, input.values);
}

#[test]
fn pools_match_the_oracle() {
    for kind in [LayerKind::Maxpool, LayerKind::Minpool, LayerKind::Avgpool] {
        let spec = ModelSpec {
            input: InputSpec { shape: vec![2, 6, 6], bits: 5 },
            layers: vec![LayerSpec::pool(kind, 3, 2, 1)],
        };
        let input = FixedPointTensor::unsigned(vec![2, 6, 6], 5, (0..72).map(|v| (v * 7 + 3) % 32).collect()).unwrap();
        let (sim, reference) = run_both(&spec, &input);
        assert_eq!(sim, reference, "{kind:?}");
    }
}

#[test]
fn empty_model_is_identity() {
    let spec = ModelSpec {
        input: InputSpec { shape: vec![1, 2, 2], bits: 2 },
        layers: vec![],
    };
    let input = FixedPointTensor::unsigned(vec![1, 2, 2], 2, vec![0, 1, 2, 3]).unwrap();
    let net = Network::compile(&spec).unwrap();
    let out = run_model(&net, &input, &RunOptions::default()).unwrap();
    assert_eq!(out.output, input);
    assert_eq!(out.ledger.total_energy_aj(), 0);
    assert!(out.argmax.is_none());
}

#[test]
fn oversized_layer_names_the_layer() {
    let spec = ModelSpec {
        input: InputSpec { shape: vec![1, 4, 200], bits: 2 },
        layers: vec![
            LayerSpec::pool(LayerKind::Maxpool, 1, 1, 1),
            conv_spec(vec![1, 1, 1, 1], serde_json::json!([[[[1]]]]), 2, false),
        ],
    };
    let net = Network::compile(&spec).unwrap();
    let input = FixedPointTensor::unsigned(vec![1, 4, 200], 2, vec![0; 800]).unwrap();
    match run_model(&net, &input, &RunOptions::default()) {
        Err(Error::CapacityExceeded { layer, kind, .. }) => assert_eq!((layer, kind.as_str()), (1, "conv")),
        other => panic!("unexpected {other:?}"),
    }
}
