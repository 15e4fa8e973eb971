// Rough epoch-time benchmark at desk scale.
use biasnet::dataset::corrupt_awgn;
use biasnet::model::LeNetShape;
use biasnet::synth::synth_digits;
use biasnet::training::{train_full, TrainConfig};
use std::time::Instant;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let t0 = Instant::now();
    let data = synth_digits::<f32>(n, 1).unwrap();
    let val = synth_digits::<f32>(1000, 2).unwrap();
    println!("synth {:?}", t0.elapsed());
    let noisy = corrupt_awgn(&data, 0.5, 3).unwrap();
    let _ = &noisy;
    let cfg = TrainConfig { batch_size: 100, learning_rate: 0.05, max_epochs: epochs, patience: epochs, seed: 7, desk_scale: true };
    let t1 = Instant::now();
    let (params, log) = train_full(&data, &val, &cfg, LeNetShape::standard()).unwrap();
    let dt = t1.elapsed();
    println!("{} epochs over {} images: {:?} ({:?}/epoch)", epochs, n, dt, dt / epochs as u32);
    println!("val errors: {:?}", log.series("val", "error"));
    let _ = params;
}
