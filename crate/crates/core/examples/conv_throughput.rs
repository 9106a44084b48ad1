//! Rough forward/backward throughput of one 16->16 3x3x3 convolution on a 32^3 patch.

use std::time::Instant;

use uafuse::{Tape, Tensor};

fn main() {
    let (c, s) = (16, 32);
    for dilation in [1, 4] {
        let x = Tensor::<f32>::from_fn(vec![c, s, s, s], |i| ((i * 31 % 17) as f32) * 0.1 - 0.8);
        let w = Tensor::<f32>::from_fn(vec![c, c, 3, 3, 3], |i| ((i * 7 % 13) as f32) * 0.01 - 0.06);
        let b = Tensor::<f32>::zeros(vec![c]);
        let reps = 5;
        let t0 = Instant::now();
        for _ in 0..reps {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let wv = tape.param(w.clone());
            let bv = tape.param(b.clone());
            let y = tape.conv3d(xv, wv, bv, dilation).unwrap();
            let l = tape.sum(y).unwrap();
            tape.backward(l).unwrap();
        }
        let secs = t0.elapsed().as_secs_f64() / reps as f64;
        let macs = 3.0 * (c * c * 27 * s * s * s) as f64;
        println!("dilation {dilation}: {:.1} ms per fwd+bwd, {:.1} GMAC/s", secs * 1e3, macs / secs / 1e9);
    }
}
