use mdgan_tensor::nn::{batch_norm3d, conv3d, deconv3d, BatchNormState, ConvParams, NormMode};
use mdgan_tensor::serialize::RawTensor;
use mdgan_tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

fn axis() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    // (input, kernel, stride, padding) with a positive conv output
    (1usize..4, 1usize..4, 0usize..2, 1usize..7).prop_map(|(k, s, p, extra)| (k + extra, k, s, p.min(k - 1)))
}

fn exact_axis() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    // input extents that the stride tiles exactly, so deconv maps back onto them
    (1usize..4, 1usize..4, 0usize..2, 1usize..5)
        .prop_map(|(k, s, p, o)| {
            let p = p.min(k - 1);
            ((o - 1) * s + k - 2 * p, k, s, p)
        })
        .prop_filter("positive input", |a| a.0 >= 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_and_deconv_shapes_follow_closed_form(
        t in axis(), h in axis(), w in axis(),
        c_in in 1usize..3, c_out in 1usize..3, n in 1usize..3, seed in 0u64..1000,
    ) {
        let params = ConvParams::new(c_out, [t.1, h.1, w.1], [t.2, h.2, w.2], [t.3, h.3, w.3]);
        let x = random(&[n, c_in, t.0, h.0, w.0], seed);
        let wt = random(&[c_out, c_in, t.1, h.1, w.1], seed + 1);
        let y = conv3d(&x, &wt, &Tensor::zeros(&[c_out]), &params).unwrap();
        let formula = |(i, k, s, p): (usize, usize, usize, usize)| (i + 2 * p - k) / s + 1;
        prop_assert_eq!(y.shape(), &[n, c_out, formula(t), formula(h), formula(w)][..]);

        let tp = params.transposed();
        let d = deconv3d(&y, &wt, &Tensor::zeros(&[c_in]), &tp).unwrap();
        let back = |i: usize, (_, k, s, p): (usize, usize, usize, usize)| (i - 1) * s + k - 2 * p;
        prop_assert_eq!(
            d.shape(),
            &[n, c_in, back(y.shape()[2], t), back(y.shape()[3], h), back(y.shape()[4], w)][..]
        );
    }

    #[test]
    fn deconv_is_adjoint_of_conv(
        t in exact_axis(), h in exact_axis(), w in exact_axis(),
        c_in in 1usize..3, c_out in 1usize..4, seed in 0u64..1000,
    ) {
        let params = ConvParams::new(c_out, [t.1, h.1, w.1], [t.2, h.2, w.2], [t.3, h.3, w.3]);
        let x = random(&[2, c_in, t.0, h.0, w.0], seed);
        let wt = random(&[c_out, c_in, t.1, h.1, w.1], seed + 7);
        let cx = conv3d(&x, &wt, &Tensor::zeros(&[c_out]), &params).unwrap();
        let y = random(cx.shape(), seed + 13);
        // the same weight tensor read as [C_in_of_deconv, C_out_of_deconv, k..]
        let dy = deconv3d(&y, &wt, &Tensor::zeros(&[c_in]), &params.transposed()).unwrap();
        prop_assert_eq!(dy.shape(), x.shape());
        let (lhs, rhs) = (dot(&cx, &y), dot(&x, &dy));
        prop_assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn batchnorm_standardizes(c in 1usize..4, n in 1usize..3, seed in 0u64..1000, shift in -3.0f64..3.0, spread in 0.5f64..4.0) {
        let x = random(&[n, c, 2, 3, 3], seed).scale(spread).add_scalar(shift);
        let mut st = BatchNormState::<f64>::new(c, 0.1, 1e-5);
        let y = batch_norm3d(&x, &mut st, NormMode::Train { update_running: true }).unwrap();
        let spatial = 18;
        for ch in 0..c {
            let vals: Vec<f64> = (0..n).flat_map(|b| y.values()[(b * c + ch) * spatial..(b * c + ch + 1) * spatial].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            prop_assert!(m.abs() < 1e-5);
            prop_assert!((v - 1.0).abs() < 1e-3);
            prop_assert!(st.running_var[ch] >= 0.0);
        }
    }

    #[test]
    fn sigmoid_strictly_inside_unit_interval(x in -1e6f64..1e6) {
        for v in [x, x / 1e3, x / 1e5] {
            let s = Tensor::<f32>::scalar(v as f32).sigmoid().item().unwrap();
            prop_assert!(s > 0.0 || v < -80.0);
            prop_assert!(s >= 0.0 && s <= 1.0);
            let s64 = Tensor::<f64>::scalar(v).sigmoid().item().unwrap();
            prop_assert!(s64 >= 0.0 && s64 <= 1.0);
            if v.abs() < 30.0 {
                prop_assert!(s64 > 0.0 && s64 < 1.0);
            }
        }
    }

    #[test]
    fn reshape_and_transpose_round_trip_bitwise(a in 1usize..5, b in 1usize..5, c in 1usize..5, seed in 0u64..1000) {
        let x = random(&[a, b, c], seed);
        let r = x.reshape(&[a * b, c]).unwrap().reshape(&[a, b, c]).unwrap();
        prop_assert_eq!(r.values(), x.values());
        let t = x.transpose(0, 2).unwrap().transpose(0, 2).unwrap();
        prop_assert_eq!(t.values(), x.values());
    }

    #[test]
    fn serialization_round_trip(dims in proptest::collection::vec(1usize..4, 0..5), seed in 0u64..1000) {
        let shape = dims.clone();
        let n: usize = shape.iter().product();
        let x = if shape.is_empty() { Tensor::<f32>::scalar(seed as f32 * 0.37) } else { random(&shape, seed).cast::<f32>() };
        prop_assert_eq!(x.numel(), n.max(1));
        let mut buf = Vec::new();
        x.write_to(&mut buf).unwrap();
        let back = Tensor::<f32>::read_from(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        prop_assert_eq!(back.values(), x.values());
        let mut again = Vec::new();
        RawTensor::read_from(&mut buf.as_slice()).unwrap().write_to(&mut again).unwrap();
        prop_assert_eq!(again, buf);
    }
}

#[test]
fn forward_is_deterministic() {
    let params = ConvParams::new(4, [3, 4, 4], [1, 2, 2], [1, 1, 1]);
    let run = || {
        let x = random(&[2, 3, 4, 8, 8], 99).cast::<f32>();
        let w = random(&[4, 3, 3, 4, 4], 100).cast::<f32>();
        conv3d(&x, &w, &Tensor::zeros(&[4]), &params).unwrap().to_vec()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
