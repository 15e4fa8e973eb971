// Phase timing for one training batch.
use biasnet::model::{LeNetParams, LeNetShape, Trainable};
use biasnet::synth::synth_digits;
use biasnet::dataset::IMG_PIXELS;
use biasnet::tensor::Tensor;
use biasnet::dataset::NoiseSpec;
use std::time::Instant;

fn main() {
    let set = synth_digits::<f32>(100, 1).unwrap();
    let batch = Tensor::new(vec![100, 1, 28, 28], set.images.data()[..100 * IMG_PIXELS].to_vec()).unwrap();
    let labels = set.labels.clone();
    let params = LeNetParams::<f32>::init(LeNetShape::standard(), 7, NoiseSpec::Clean);

    let reps = 20;
    let t = Instant::now();
    let mut trace = params.forward_trace(&batch).unwrap();
    for _ in 1..reps { trace = params.forward_trace(&batch).unwrap(); }
    println!("forward_trace: {:?}/batch", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps {
        let _ = params.backward(&batch, &trace, &labels, Trainable::all(), 1.0).unwrap();
    }
    println!("backward(all): {:?}/batch", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps {
        let _ = params.backward(&batch, &trace, &labels, Trainable::biases_only(true, true), 1.0).unwrap();
    }
    println!("backward(biases): {:?}/batch", t.elapsed() / reps);

    // kernel-level breakdown
    use biasnet::ops::*;
    let t = Instant::now();
    for _ in 0..reps { let _ = conv2d_forward(&batch, &params.conv1_w, &params.conv1_b).unwrap(); }
    println!("conv1 fwd: {:?}", t.elapsed() / reps);
    let z1 = conv2d_forward(&batch, &params.conv1_w, &params.conv1_b).unwrap();
    let t = Instant::now();
    for _ in 0..reps { let _ = tanh_apply(&z1); }
    println!("tanh conv1 ({} elems): {:?}", z1.len(), t.elapsed() / reps);
    let a1 = tanh_apply(&z1);
    let (p1, _i1) = maxpool2_forward(&a1).unwrap();
    let t = Instant::now();
    for _ in 0..reps { let _ = conv2d_forward(&p1, &params.conv2_w, &params.conv2_b).unwrap(); }
    println!("conv2 fwd: {:?}", t.elapsed() / reps);
    let z2 = conv2d_forward(&p1, &params.conv2_w, &params.conv2_b).unwrap();
    let t = Instant::now();
    for _ in 0..reps { let _ = conv2d_backward(&p1, &params.conv2_w, &z2, GradRequest::ALL).unwrap(); }
    println!("conv2 bwd(all): {:?}", t.elapsed() / reps);
    let t = Instant::now();
    for _ in 0..reps { let _ = conv2d_backward(&batch, &params.conv1_w, &z1, GradRequest { weights: true, bias: true, input: false }).unwrap(); }
    println!("conv1 bwd(w,b): {:?}", t.elapsed() / reps);
    let flat = p1.clone().reshape(vec![100, 20 * 144]).unwrap();
    let w = Tensor::<f32>::zeros(vec![20 * 144, 500]);
    let b = vec![0.0f32; 500];
    let t = Instant::now();
    for _ in 0..reps { let _ = dense_forward(&flat, &w, &b).unwrap(); }
    println!("dense 2880x500 fwd: {:?}", t.elapsed() / reps);
}
