use daa_autograd::kernels::gemm;
use std::time::Instant;

fn main() {
    for &(m, k, n) in &[(16usize, 144usize, 4096usize), (144, 16, 4096), (16, 4096, 144), (256, 256, 256)] {
        let a = vec![0.5; m * k];
        let b = vec![0.25; k * n];
        let mut c = vec![0.0; m * n];
        let reps = 50;
        let t = Instant::now();
        for _ in 0..reps {
            gemm(m, k, n, &a, false, &b, false, 0.0, &mut c);
        }
        let s = t.elapsed().as_secs_f64() / reps as f64;
        println!("{m}x{k}x{n}: {:.2} GFLOP/s", 2.0 * (m * k * n) as f64 / s / 1e9);
    }
}
