use mdgan_core::models::{
    build_discriminator, build_generator, duplicate_frame, first_frame, Network, NetworkRole, Resolution, Stage, Width,
};
use mdgan_core::rng::{stream, Stream};
use mdgan_core::training::{discriminator_loss, generator_loss};
use mdgan_core::RunConfig;
use mdgan_tensor::nn::{Activation, NormMode};
use mdgan_tensor::{check_gradient, GradCheck, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// name, filters, kernel, stride, padding, per-sample output (C, T, H, W)
type Row = (&'static str, usize, [usize; 3], [usize; 3], [usize; 3], [usize; 4]);

const TABLE: [Row; 12] = [
    ("conv1", 32, [3, 4, 4], [1, 2, 2], [1, 1, 1], [32, 32, 64, 64]),
    ("conv2", 64, [4, 4, 4], [2, 2, 2], [1, 1, 1], [64, 16, 32, 32]),
    ("conv3", 128, [4, 4, 4], [2, 2, 2], [1, 1, 1], [128, 8, 16, 16]),
    ("conv4", 256, [4, 4, 4], [2, 2, 2], [1, 1, 1], [256, 4, 8, 8]),
    ("conv5", 512, [4, 4, 4], [2, 2, 2], [1, 1, 1], [512, 2, 4, 4]),
    ("conv6", 512, [2, 4, 4], [1, 1, 1], [0, 0, 0], [512, 1, 1, 1]),
    ("deconv1", 512, [2, 4, 4], [1, 1, 1], [0, 0, 0], [512, 2, 4, 4]),
    ("deconv2", 256, [4, 4, 4], [2, 2, 2], [1, 1, 1], [256, 4, 8, 8]),
    ("deconv3", 128, [4, 4, 4], [2, 2, 2], [1, 1, 1], [128, 8, 16, 16]),
    ("deconv4", 64, [4, 4, 4], [2, 2, 2], [1, 1, 1], [64, 16, 32, 32]),
    ("deconv5", 32, [4, 4, 4], [2, 2, 2], [1, 1, 1], [32, 32, 64, 64]),
    ("deconv6", 3, [3, 4, 4], [1, 2, 2], [1, 1, 1], [3, 32, 128, 128]),
];

const WIDTHS: [(u32, u32); 4] = [(1, 1), (1, 2), (1, 4), (1, 8)];

#[test]
fn full_size_generator_follows_the_table() {
    let spec = build_generator(Stage::One, Resolution::R128, Width::FULL).unwrap();
    assert_eq!(spec.layers.len(), 12);
    let shapes = spec.trace([3, 32, 128, 128]).unwrap();
    for ((layer, shape), row) in spec.layers.iter().zip(&shapes).zip(TABLE) {
        let (name, filters, kernel, stride, padding, out) = row;
        assert_eq!(layer.name, name);
        assert_eq!(layer.params.filters, filters, "{name}");
        assert_eq!(layer.params.kernel, kernel, "{name}");
        assert_eq!(layer.params.stride, stride, "{name}");
        assert_eq!(layer.params.padding, padding, "{name}");
        assert_eq!(layer.is_deconv(), name.starts_with("deconv"));
        assert_eq!(shape.output, out, "{name}");
    }
    let skips: Vec<(String, String)> = spec.skips.iter().map(|s| (s.from.clone(), s.to.clone())).collect();
    let want: Vec<(String, String)> = (1..=5).map(|i| (format!("conv{i}"), format!("deconv{}", 7 - i))).collect();
    assert_eq!(skips, want);
}

#[test]
fn normalization_and_activation_rules() {
    let spec = build_generator(Stage::One, Resolution::R128, Width::FULL).unwrap();
    for l in &spec.layers {
        let (bn, act) = match l.name.as_str() {
            "conv1" | "conv6" => (false, Activation::LeakyRelu),
            "deconv6" => (false, Activation::Tanh),
            n if n.starts_with("deconv") => (true, Activation::Relu),
            _ => (true, Activation::LeakyRelu),
        };
        assert_eq!((l.batch_norm, l.activation), (bn, act), "{}", l.name);
    }
}

#[test]
fn literal_deconv1_kernel_breaks_the_skip_junction() {
    let mut spec = build_generator(Stage::One, Resolution::R128, Width::FULL).unwrap();
    let i = spec.layers.iter().position(|l| l.name == "deconv1").unwrap();
    spec.layers[i].params.kernel = [4, 4, 4];
    let err = spec.validate().unwrap_err().to_string();
    assert!(err.contains("skip conv5 -> deconv2"), "{err}");
}

#[test]
fn mismatched_skip_fails_at_run_time_too() {
    let mut spec = build_generator(Stage::One, Resolution::R64, Width::new(1, 8).unwrap()).unwrap();
    let i = spec.layers.iter().position(|l| l.name == "deconv1").unwrap();
    spec.layers[i].params.kernel = [4, 4, 4];
    assert!(spec.validate().is_err());
    let mut net: Network = Network::init(spec, 0.1, 1e-5, &mut stream(0, Stream::Init));
    let x = Tensor::zeros(&[1, 3, 32, 64, 64]);
    assert!(net.forward_generator(&x, NormMode::Inference).is_err());
}

#[test]
fn every_width_and_resolution_validates() {
    for (num, den) in WIDTHS {
        let w = Width::new(num, den).unwrap();
        for res in [Resolution::R128, Resolution::R64] {
            for stage in [Stage::One, Stage::Two] {
                let g = build_generator(stage, res, w).unwrap();
                let shapes = g.trace(res.clip_shape()).unwrap();
                assert_eq!(shapes.last().unwrap().output, res.clip_shape());
                for l in &g.layers[..g.layers.len() - 1] {
                    let full = TABLE.iter().find(|r| r.0 == l.name).unwrap().1;
                    assert_eq!(l.params.filters, (full * num as usize / den as usize).max(1));
                }
            }
            let d = build_discriminator(res, w, &[]).unwrap();
            assert_eq!(d.trace(res.clip_shape()).unwrap().last().unwrap().output, [1, 1, 1, 1]);
            assert_eq!(d.layers.last().unwrap().params.filters, 1);
        }
    }
}

#[test]
fn stage_two_differs_only_in_skips() {
    for res in [Resolution::R128, Resolution::R64] {
        let g1 = build_generator(Stage::One, res, Width::FULL).unwrap();
        let g2 = build_generator(Stage::Two, res, Width::FULL).unwrap();
        assert_eq!(g1.layers, g2.layers);
        assert_eq!(g2.role, NetworkRole::Generator(Stage::Two));
        let kept: Vec<_> = g1
            .skips
            .iter()
            .filter(|s| s.from != "conv1" && s.from != "conv2")
            .cloned()
            .collect();
        assert_eq!(g2.skips, kept);
    }
    assert_eq!(build_generator(Stage::Two, Resolution::R128, Width::FULL).unwrap().skips.len(), 3);
}

#[test]
fn small_variant_drops_outer_layers() {
    let g = build_generator(Stage::One, Resolution::R64, Width::FULL).unwrap();
    let names: Vec<&str> = g.layers.iter().map(|l| l.name.as_str()).collect();
    assert_eq!(
        names,
        ["conv2", "conv3", "conv4", "conv5", "conv6", "deconv1", "deconv2", "deconv3", "deconv4", "deconv5"]
    );
    let out = g.layers.last().unwrap();
    assert_eq!((out.params.filters, out.batch_norm, out.activation), (3, false, Activation::Tanh));
    assert_eq!(g.layers[0].in_channels, 3);
    assert_eq!(g.skips.len(), 4);
    assert_eq!(
        build_generator(Stage::Two, Resolution::R64, Width::FULL).unwrap().skips.len(),
        3
    );
}

#[test]
fn discriminator_taps_and_scores() {
    let d = build_discriminator(Resolution::R128, Width::FULL, &[]).unwrap();
    assert_eq!(d.taps, ["conv1", "conv3"]);
    assert!(build_discriminator(Resolution::R128, Width::FULL, &["score".into()]).is_err());
    assert!(build_discriminator(Resolution::R128, Width::FULL, &["conv9".into()]).is_err());

    let w = Width::new(1, 8).unwrap();
    let spec = build_discriminator(Resolution::R64, w, &[]).unwrap();
    let mut d: Network = Network::init(spec, 0.1, 1e-5, &mut stream(3, Stream::Init));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 2 * 3 * 32 * 64 * 64;
    let video = Tensor::from_vec(&[2, 3, 32, 64, 64], (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
    let out = d.forward_discriminator(&video, NormMode::Train { update_running: false }).unwrap();
    assert_eq!(out.score.shape(), &[2, 1]);
    assert!(out.score.to_vec().iter().all(|&s| s > 0.0 && s < 1.0));
    assert_eq!(out.features[0].0, "conv2");
    assert_eq!(out.features[0].1.shape(), &[2, 8, 16, 32, 32]);
    assert_eq!(out.features[1].1.shape(), &[2, 32, 4, 8, 8]);
}

#[test]
fn generator_output_is_bounded_and_shaped() {
    let spec = build_generator(Stage::One, Resolution::R64, Width::new(1, 8).unwrap()).unwrap();
    let mut g: Network = Network::init(spec, 0.1, 1e-5, &mut stream(5, Stream::Init));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frame = Tensor::from_vec(&[2, 3, 64, 64], (0..2 * 3 * 64 * 64).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
    let x = duplicate_frame(&frame, 32).unwrap();
    assert_eq!(first_frame(&x).unwrap().to_vec(), frame.to_vec());
    for mode in [NormMode::Train { update_running: true }, NormMode::Inference] {
        let out = g.forward_generator(&x, mode).unwrap();
        assert_eq!(out.video.shape(), x.shape());
        assert!(out.video.to_vec().iter().all(|v| v.abs() < 1.0));
        assert_eq!(out.activations.len(), 10);
    }
}

#[test]
fn same_seed_same_parameters() {
    let spec = build_generator(Stage::One, Resolution::R64, Width::new(1, 4).unwrap()).unwrap();
    let a: Network = Network::init(spec.clone(), 0.1, 1e-5, &mut stream(9, Stream::Init));
    let b: Network = Network::init(spec.clone(), 0.1, 1e-5, &mut stream(9, Stream::Init));
    let c: Network = Network::init(spec, 0.1, 1e-5, &mut stream(10, Stream::Init));
    let flat = |n: &Network| n.params().iter().flat_map(|p| p.to_vec()).collect::<Vec<f32>>();
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

#[test]
fn parameter_init_statistics() {
    let spec = build_generator(Stage::One, Resolution::R128, Width::new(1, 2).unwrap()).unwrap();
    let net: Network = Network::init(spec, 0.1, 1e-5, &mut stream(0, Stream::Init));
    let weights: Vec<f64> = net.layers.iter().flat_map(|l| l.weight.to_vec()).map(f64::from).collect();
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    let std = (weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / weights.len() as f64).sqrt();
    assert!(mean.abs() < 1e-3 && (std - 0.02).abs() < 1e-3, "{mean} {std}");
    for l in &net.layers {
        assert!(l.bias.to_vec().iter().all(|&b| b == 0.0));
        if let Some(bn) = &l.bn {
            assert!(bn.beta.to_vec().iter().all(|&b| b == 0.0));
            assert!(bn.gamma.to_vec().iter().all(|&g| (g - 1.0).abs() < 0.15));
        }
    }
}

struct Composite {
    g1: Network<f64>,
    g2: Network<f64>,
    d: Network<f64>,
    y: Tensor<f64>,
    x: Tensor<f64>,
    cfg: RunConfig,
}

fn composite() -> Composite {
    let w = Width::new(1, 8).unwrap();
    let res = Resolution::R64;
    let mut rng = stream(11, Stream::Init);
    let g1: Network = Network::init(build_generator(Stage::One, res, w).unwrap(), 0.1, 1e-5, &mut rng);
    let g2: Network = Network::init(build_generator(Stage::Two, res, w).unwrap(), 0.1, 1e-5, &mut rng);
    let d: Network = Network::init(build_discriminator(res, w, &[]).unwrap(), 0.1, 1e-5, &mut rng);
    let mut data = ChaCha8Rng::seed_from_u64(12);
    let n = 2 * 3 * 32 * 64 * 64;
    let y = Tensor::from_vec(&[2, 3, 32, 64, 64], (0..n).map(|_| data.random_range(-0.9..0.9)).collect()).unwrap();
    let x = duplicate_frame(&first_frame(&y).unwrap(), 32).unwrap();
    let cfg = RunConfig {
        resolution: res,
        width_multiplier: w,
        ..RunConfig::default()
    };
    Composite {
        g1: g1.cast(),
        g2: g2.cast(),
        d: d.cast(),
        y,
        x,
        cfg,
    }
}

// A few entries per tensor. The step is small because the ReLU kinks of a
// full network are dense enough that wider steps straddle some of them.
fn probe_indices(numel: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(numel as u64);
    (0..3).map(|_| rng.random_range(0..numel)).collect()
}

// Parameter indices split into those checked against finite differences and
// the biases feeding batch norm, whose gradient vanishes identically.
fn parameter_groups(net: &Network<f64>) -> (Vec<usize>, Vec<usize>) {
    let (mut checked, mut null) = (Vec::new(), Vec::new());
    let mut k = 0;
    for l in &net.layers {
        checked.push(k);
        if l.bn.is_some() {
            null.push(k + 1);
            checked.extend([k + 2, k + 3]);
            k += 4;
        } else {
            checked.push(k + 1);
            k += 2;
        }
    }
    assert_eq!(k, net.params().len());
    (checked, null)
}

const COMPOSITE: GradCheck = GradCheck { step: 1e-7, floor: 1e-6 };

fn check_network<F>(net: &Network<f64>, loss: F)
where
    F: Fn(usize, &Tensor<f64>) -> mdgan_core::Result<Tensor<f64>>,
{
    let (checked, null) = parameter_groups(net);
    for k in checked {
        let base = net.params()[k].clone();
        let f = |p: &Tensor<f64>| loss(k, p).map_err(|e| TensorError::Contract(e.to_string()));
        let r = check_gradient(f, &base, &probe_indices(base.numel()), COMPOSITE).unwrap();
        assert!(
            r.max_rel_error < 1e-4,
            "param {k}: rel {} analytic {:?} numeric {:?}",
            r.max_rel_error,
            r.analytic,
            r.numeric
        );
    }
    for k in null {
        let p = net.params()[k].with_grad(true);
        loss(k, &p).unwrap().backward().unwrap();
        let g = p.grad().unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-10), "bias {k}: {g:?}");
    }
}

#[test]
fn stage_two_generator_objective_gradient() {
    let c = composite();
    check_network(&c.g2, |k, p| {
        let (mut g1, mut g2, mut d) = (c.g1.clone(), c.g2.clone(), c.d.clone());
        *g2.params_mut()[k] = p.clone();
        Ok(generator_loss(&mut g1, Some(&mut g2), &mut d, &c.y, &c.x, &c.cfg, false)?.total)
    });
}

#[test]
fn stage_two_discriminator_objective_gradient() {
    let c = composite();
    check_network(&c.d, |k, p| {
        let (mut g1, mut g2, mut d) = (c.g1.clone(), c.g2.clone(), c.d.clone());
        *d.params_mut()[k] = p.clone();
        Ok(discriminator_loss(&mut g1, Some(&mut g2), &mut d, &c.y, &c.x, &c.cfg, false)?.total)
    });
}

#[test]
fn stage_one_generator_objective_gradient() {
    let c = composite();
    check_network(&c.g1, |k, p| {
        let (mut g1, mut d) = (c.g1.clone(), c.d.clone());
        *g1.params_mut()[k] = p.clone();
        Ok(generator_loss(&mut g1, None, &mut d, &c.y, &c.x, &c.cfg, false)?.total)
    });
}
