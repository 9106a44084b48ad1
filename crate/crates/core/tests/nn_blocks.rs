use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uafuse::fusion::{network_forward, FusionNet};
use uafuse::nn::{
    dense_aspp_forward, init_conv, se_res_forward, se_res_forward_traced, stream_forward, ConvParams,
    DenseAsppBlockParams, NetworkConfig, SeResBlockParams, StreamParams,
};
use uafuse::{Tape, Tensor, Var};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn bind_conv(tape: &mut Tape<f64>, p: &ConvParams<Tensor<f64>>) -> ConvParams<Var> {
    p.map("", &mut |_, t| tape.param(t.clone()))
}

#[test]
fn se_res_matches_scripted_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = SeResBlockParams::<Tensor<f64>>::init(&mut rng, 4, 2, 3);
    let x = rand_tensor(&mut rng, &[4, 5, 6, 7]);

    let mut tape = Tape::new();
    let pv = p.map("", &mut |_, t| tape.param(t.clone()));
    let xv = tape.constant(x.clone());
    let got = se_res_forward(&mut tape, xv, &pv).unwrap();
    let got = tape.value(got).clone();

    let mut t = Tape::new();
    let xv = t.constant(x);
    let c1 = bind_conv(&mut t, &p.conv1);
    let c2 = bind_conv(&mut t, &p.conv2);
    let (w1, b1) = (t.param(p.se_fc1.weight.clone()), t.param(p.se_fc1.bias.clone()));
    let (w2, b2) = (t.param(p.se_fc2.weight.clone()), t.param(p.se_fc2.bias.clone()));
    let h = t.conv3d(xv, c1.weight, c1.bias, 1).unwrap();
    let h = t.relu(h).unwrap();
    let f = t.conv3d(h, c2.weight, c2.bias, 1).unwrap();
    let s = t.global_avg_pool(f).unwrap();
    let s = t.linear(s, w1, b1).unwrap();
    let s = t.relu(s).unwrap();
    let s = t.linear(s, w2, b2).unwrap();
    let s = t.sigmoid(s).unwrap();
    let scaled = t.scale_channels(f, s).unwrap();
    let sum = t.add(xv, scaled).unwrap();
    let want = t.relu(sum).unwrap();
    assert_eq!(&got, t.value(want));
}

fn relu_of(x: &Tensor<f64>) -> Vec<f64> {
    x.data().iter().map(|v| v.max(0.0)).collect()
}

#[test]
fn se_res_zero_branch_and_closed_gate_reduce_to_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[4, 4, 4, 4]);

    let mut zero = SeResBlockParams::<Tensor<f64>>::init(&mut rng, 4, 2, 3);
    zero.conv2.weight = Tensor::zeros(zero.conv2.weight.shape().to_vec());
    let mut tape = Tape::new();
    let pv = zero.map("", &mut |_, t| tape.constant(t.clone()));
    let xv = tape.constant(x.clone());
    let y = se_res_forward(&mut tape, xv, &pv).unwrap();
    assert_eq!(tape.value(y).data(), relu_of(&x).as_slice());

    // A very negative excitation bias drives every gate to ~0.
    let mut closed = SeResBlockParams::<Tensor<f64>>::init(&mut rng, 4, 2, 3);
    closed.se_fc2.bias = Tensor::full(vec![4], -60.0);
    let mut tape = Tape::new();
    let pv = closed.map("", &mut |_, t| tape.constant(t.clone()));
    let xv = tape.constant(x.clone());
    let y = se_res_forward(&mut tape, xv, &pv).unwrap();
    for (a, b) in tape.value(y).data().iter().zip(relu_of(&x)) {
        assert!((a - b).abs() < 1e-20, "{a} vs {b}");
    }
}

#[test]
fn se_gates_lie_strictly_inside_the_unit_interval() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = SeResBlockParams::<Tensor<f32>>::init(&mut rng, 8, 4, 3);
        let x = Tensor::from_fn(vec![8, 6, 6, 6], |_| rng.random_range(-3.0..3.0));
        let mut tape = Tape::new();
        let pv = p.map("", &mut |_, t| tape.constant(t.clone()));
        let xv = tape.constant(x);
        let out = se_res_forward_traced(&mut tape, xv, &pv).unwrap();
        assert!(tape.value(out.gate).data().iter().all(|&g| g > 0.0 && g < 1.0));
    }
}

#[test]
fn se_res_rejects_indivisible_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = SeResBlockParams::<Tensor<f64>>::init(&mut rng, 6, 4, 3);
    let mut tape = Tape::new();
    let pv = p.map("", &mut |_, t| tape.constant(t.clone()));
    let xv = tape.constant(Tensor::zeros(vec![6, 3, 3, 3]));
    assert!(se_res_forward(&mut tape, xv, &pv).is_err());
}

#[test]
fn dense_aspp_matches_scripted_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = DenseAsppBlockParams::<Tensor<f64>>::init(&mut rng, 4, 3, &[1, 2, 3], 3);
    let x = rand_tensor(&mut rng, &[4, 7, 6, 5]);

    let mut tape = Tape::new();
    let pv = p.map("", &mut |_, t| tape.param(t.clone()));
    let xv = tape.constant(x.clone());
    let got = dense_aspp_forward(&mut tape, xv, &pv).unwrap();
    let got = tape.value(got).clone();

    let mut t = Tape::new();
    let xv = t.constant(x);
    let b: Vec<_> = p.branches.iter().map(|c| bind_conv(&mut t, c)).collect();
    let proj = bind_conv(&mut t, &p.projection);
    let y1 = t.conv3d(xv, b[0].weight, b[0].bias, 1).unwrap();
    let y1 = t.relu(y1).unwrap();
    let in2 = t.concat(&[xv, y1]).unwrap();
    let y2 = t.conv3d(in2, b[1].weight, b[1].bias, 2).unwrap();
    let y2 = t.relu(y2).unwrap();
    let in3 = t.concat(&[xv, y1, y2]).unwrap();
    let y3 = t.conv3d(in3, b[2].weight, b[2].bias, 3).unwrap();
    let y3 = t.relu(y3).unwrap();
    let all = t.concat(&[xv, y1, y2, y3]).unwrap();
    let want = t.conv3d(all, proj.weight, proj.bias, 1).unwrap();
    assert_eq!(&got, t.value(want));
}

#[test]
fn single_branch_with_selecting_projection_is_one_padded_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = DenseAsppBlockParams::<Tensor<f64>>::init(&mut rng, 2, 2, &[1], 3);
    // Projection copies the branch channels and ignores the block input.
    p.projection.weight = Tensor::from_fn(vec![2, 4, 1, 1, 1], |i| if i / 4 + 2 == i % 4 { 1.0 } else { 0.0 });
    let x = rand_tensor(&mut rng, &[2, 5, 5, 5]);
    let mut tape = Tape::new();
    let pv = p.map("", &mut |_, t| tape.constant(t.clone()));
    let xv = tape.constant(x);
    let got = dense_aspp_forward(&mut tape, xv, &pv).unwrap();
    let c = tape.conv3d(xv, pv.branches[0].weight, pv.branches[0].bias, 1).unwrap();
    let want = tape.relu(c).unwrap();
    assert_eq!(tape.value(got), tape.value(want));
}

#[test]
fn impulse_response_radius_is_sum_of_dilations() {
    let dilations = [1, 2, 4, 8];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut p = DenseAsppBlockParams::<Tensor<f64>>::init(&mut rng, 1, 2, &dilations, 3);
    // Positive weights rule out accidental cancellation.
    for b in p.branches.iter_mut().chain(std::iter::once(&mut p.projection)) {
        b.weight = Tensor::from_fn(b.weight.shape().to_vec(), |_| rng.random_range(0.1..1.0));
    }
    let n = 35;
    let c = n / 2;
    let x = Tensor::from_fn(vec![1, n, n, n], |i| if i == (c * n + c) * n + c { 1.0 } else { 0.0 });
    let mut tape = Tape::new();
    let pv = p.map("", &mut |_, t| tape.constant(t.clone()));
    let xv = tape.constant(x);
    let y = dense_aspp_forward(&mut tape, xv, &pv).unwrap();
    let y = tape.value(y);
    let mut radius = 0;
    for z in 0..n {
        for yy in 0..n {
            for xx in 0..n {
                if y.data()[(z * n + yy) * n + xx] != 0.0 {
                    let r = [z, yy, xx].iter().map(|&v| v.abs_diff(c)).max().unwrap();
                    radius = radius.max(r);
                }
            }
        }
    }
    let expected: usize = dilations.iter().map(|d| d * (3 - 1) / 2).sum();
    assert_eq!(expected, 15);
    assert_eq!(radius, expected);
}

fn small_config() -> NetworkConfig {
    NetworkConfig { width: 8, adapt_width: 4, aspp_growth: 4, se_reduction: 4, min_spatial: 8, ..NetworkConfig::default() }
}

#[test]
fn stream_keeps_spatial_shape_and_emits_probabilities() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = StreamParams::<Tensor<f32>>::init(&mut rng, &cfg);
    let x = Tensor::from_fn(vec![1, 9, 10, 11], |_| rng.random_range(-1.0..1.0));
    let run = || {
        let mut tape = Tape::new();
        let pv = p.map("", &mut |_, t| tape.constant(t.clone()));
        let xv = tape.constant(x.clone());
        let out = stream_forward(&mut tape, xv, &pv, cfg.min_spatial).unwrap();
        for &l in &out.levels {
            assert_eq!(tape.value(l).shape(), &[8, 9, 10, 11]);
        }
        tape.value(out.prob).clone()
    };
    let prob = run();
    assert_eq!(prob.shape(), &[5, 9, 10, 11]);
    let n = prob.spatial_len();
    for v in 0..n {
        let s: f32 = (0..5).map(|c| prob.data()[c * n + v]).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
    assert_eq!(run(), prob, "two evaluations differ");
}

#[test]
fn stream_rejects_inputs_below_minimum_extent() {
    let cfg = small_config();
    let p = StreamParams::<Tensor<f32>>::init(&mut ChaCha8Rng::seed_from_u64(1), &cfg);
    let mut tape = Tape::new();
    let pv = p.map("", &mut |_, t| tape.constant(t.clone()));
    let xv = tape.constant(Tensor::zeros(vec![1, 7, 9, 9]));
    assert!(stream_forward(&mut tape, xv, &pv, cfg.min_spatial).is_err());
}

#[test]
fn every_parameter_receives_gradient() {
    // A parameter may sit behind a dead ReLU for one initialisation; across
    // several seeds a wired parameter must see a nonzero gradient at least once.
    let cfg = NetworkConfig { min_spatial: 12, ..NetworkConfig::default() };
    let mut live = std::collections::BTreeMap::<String, bool>::new();
    for seed in 0..5 {
        let net = FusionNet::<f32>::new(cfg.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let dims = [12, 12, 12];
        let n: usize = dims.iter().product();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let inputs: Vec<_> = (0..2)
            .map(|_| tape.constant(Tensor::from_fn(vec![1, 12, 12, 12], |_| rng.random_range(-1.0..1.0))))
            .collect();
        let out = network_forward(&mut tape, &cfg, &vars, &inputs, true).unwrap();
        let mut terms = Vec::new();
        for s in &out.streams {
            terms.push((tape.cross_entropy(s.prob, &labels, 1e-7).unwrap(), 0.5));
        }
        terms.push((tape.cross_entropy(out.y_final.unwrap(), &labels, 1e-7).unwrap(), 1.0));
        let loss = tape.weighted_sum(&terms).unwrap();
        let grads = tape.backward(loss).unwrap();
        for (name, &v) in vars.named() {
            let g = grads.get(v).unwrap_or_else(|| panic!("seed {seed}: {name} has no gradient"));
            *live.entry(name).or_default() |= g.data().iter().any(|&x| x != 0.0);
        }
    }
    let dead: Vec<_> = live.iter().filter(|(_, &l)| !l).map(|(n, _)| n).collect();
    assert!(dead.is_empty(), "never received a nonzero gradient: {dead:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn same_padding_preserves_shape(
        k in prop::sample::select(vec![1usize, 3, 5]),
        d in prop::sample::select(vec![1usize, 2, 4, 8]),
        z in 1usize..10, y in 1usize..10, x in 1usize..10,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::<f32>::new();
        let p = init_conv::<f32, _>(&mut rng, 2, 3, k, d);
        let xv = tape.constant(Tensor::full(vec![2, z, y, x], 0.5));
        let w = tape.constant(p.weight);
        let b = tape.constant(p.bias);
        let out = tape.conv3d(xv, w, b, d).unwrap();
        prop_assert_eq!(tape.value(out).shape(), &[3, z, y, x]);
    }
}
