// Calibration: train zero/max/mixed, sweep the AWGN grid, print curves.
use biasnet::dataset::{build_mixed, corrupt_awgn, noise_grid};
use biasnet::model::LeNetShape;
use biasnet::rng::derive_seed;
use biasnet::synth::synth_digits;
use biasnet::training::{error_rate, train_full, TrainConfig};
use std::time::Instant;

fn main() {
    let seed = 20260810u64;
    let args: Vec<String> = std::env::args().collect();
    let train_n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(15);
    let t0 = Instant::now();
    let train_clean = synth_digits::<f32>(train_n, derive_seed(seed, 1)).unwrap();
    let val_clean = synth_digits::<f32>(2000, derive_seed(seed, 2)).unwrap();
    let test_clean = synth_digits::<f32>(2000, derive_seed(seed, 3)).unwrap();

    let cfg = TrainConfig { batch_size: 100, learning_rate: 0.05, max_epochs: epochs, patience: 5, seed, desk_scale: true };
    let shape = LeNetShape::standard();

    let max_train = corrupt_awgn(&train_clean, 1.0, derive_seed(seed, 10)).unwrap();
    let max_val = corrupt_awgn(&val_clean, 1.0, derive_seed(seed, 11)).unwrap();
    let mixed_train = build_mixed(&train_clean, 0.0, 1.0, derive_seed(seed, 12)).unwrap();
    let mixed_val = build_mixed(&val_clean, 0.0, 1.0, derive_seed(seed, 13)).unwrap();

    let (zero, zl) = train_full(&train_clean, &val_clean, &cfg, shape).unwrap();
    eprintln!("zero trained: {} epochs best, {:?} elapsed", zero.meta.epochs, t0.elapsed());
    let (maxn, ml) = train_full(&max_train, &max_val, &cfg, shape).unwrap();
    eprintln!("max trained: {} epochs best, {:?}", maxn.meta.epochs, t0.elapsed());
    let (mixed, xl) = train_full(&mixed_train, &mixed_val, &cfg, shape).unwrap();
    eprintln!("mixed trained: {} epochs best, {:?}", mixed.meta.epochs, t0.elapsed());
    eprintln!("zero val: {:?}", zl.series("val", "error"));
    eprintln!("max val: {:?}", ml.series("val", "error"));
    eprintln!("mixed val: {:?}", xl.series("val", "error"));

    let grid = noise_grid(0.0, 1.0, 0.1).unwrap();
    println!("sigma,zero,max,mixed");
    for &g in &grid {
        let test = corrupt_awgn(&test_clean, g, derive_seed(seed, 1000 + (g * 1e6) as u64)).unwrap();
        let z = 1.0 - error_rate(&zero, &test, 200).unwrap();
        let m = 1.0 - error_rate(&maxn, &test, 200).unwrap();
        let x = 1.0 - error_rate(&mixed, &test, 200).unwrap();
        println!("{g:.2},{z:.4},{m:.4},{x:.4}");
    }
    eprintln!("total {:?}", t0.elapsed());
}
