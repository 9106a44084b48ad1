//! Wall time of one full training step (both streams + fusion) on a 32^3 patch.

use std::time::Instant;

use uafuse::fusion::{network_forward, FusionNet};
use uafuse::nn::NetworkConfig;
use uafuse::{Tape, Tensor};

fn main() {
    let cfg = NetworkConfig::default();
    let net = FusionNet::<f32>::new(cfg.clone(), 0).unwrap();
    println!("parameters: {}", net.params.num_scalars());
    let s = 32;
    let m: Vec<Tensor<f32>> = (0..2)
        .map(|k| Tensor::from_fn(vec![1, s, s, s], |i| ((i * (31 + k) % 17) as f32) * 0.1 - 0.8))
        .collect();
    let labels: Vec<u8> = (0..s * s * s).map(|i| (i % 5) as u8).collect();
    for fusion in [false, true] {
        let reps = 3;
        let t0 = Instant::now();
        for _ in 0..reps {
            let mut tape = Tape::new();
            let p = net.bind(&mut tape);
            let inputs: Vec<_> = m.iter().map(|t| tape.constant(t.clone())).collect();
            let out = network_forward(&mut tape, &cfg, &p, &inputs, fusion).unwrap();
            let mut terms = Vec::new();
            for st in &out.streams {
                terms.push((tape.cross_entropy(st.prob, &labels, 1e-7).unwrap(), 0.5));
            }
            if let Some(y) = out.y_final {
                terms.push((tape.cross_entropy(y, &labels, 1e-7).unwrap(), 1.0));
            }
            let loss = tape.weighted_sum(&terms).unwrap();
            tape.backward(loss).unwrap();
        }
        println!("fusion {fusion}: {:.0} ms per step", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);
    }
    let t0 = Instant::now();
    net.predict(&m).unwrap();
    println!("inference: {:.0} ms per patch", t0.elapsed().as_secs_f64() * 1e3);
}
