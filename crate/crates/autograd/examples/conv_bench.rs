use daa_autograd::{Graph, Tensor};
use std::time::Instant;

fn main() {
    let x = Tensor::full(&[8, 16, 64, 64], 0.5);
    let w = Tensor::full(&[16, 16, 3, 3], 0.01);
    let t = Instant::now();
    let reps = 5;
    for _ in 0..reps {
        let g = Graph::new();
        let xv = g.leaf(x.clone());
        let wv = g.leaf(w.clone());
        let y = g.conv2d(xv, wv, None, 1, 1);
        let l = g.sum(y);
        let _ = g.backward(l);
    }
    let secs = t.elapsed().as_secs_f64() / reps as f64;
    let flops = 3.0 * 2.0 * 8.0 * 4096.0 * 16.0 * 144.0;
    println!("conv fwd+bwd {:.1} ms, {:.2} GFLOP/s", secs * 1e3, flops / secs / 1e9);
}
