use biasnet::ops::*;
use biasnet::tensor::Tensor;
use biasnet::rng::Rng;
use std::time::Instant;

fn rt(shape: Vec<usize>, rng: &mut Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0) as f32)
}

fn main() {
    let mut rng = Rng::new(1);
    let p1 = rt(vec![100, 20, 12, 12], &mut rng);
    let w = rt(vec![50, 20, 5, 5], &mut rng);
    let g = rt(vec![100, 50, 8, 8], &mut rng);
    let reps = 30;
    for (name, req) in [
        ("bias only", GradRequest { weights: false, bias: true, input: false }),
        ("weights only", GradRequest { weights: true, bias: false, input: false }),
        ("input only", GradRequest { weights: false, bias: false, input: true }),
        ("all", GradRequest::ALL),
    ] {
        let t = Instant::now();
        for _ in 0..reps {
            let _ = conv2d_backward(&p1, &w, &g, req).unwrap();
        }
        println!("conv2 bwd {name}: {:?}", t.elapsed() / reps);
    }
    let t = Instant::now();
    for _ in 0..reps { let _ = conv2d_forward(&p1, &w, &vec![0.0f32; 50]).unwrap(); }
    println!("conv2 fwd: {:?}", t.elapsed() / reps);
}
