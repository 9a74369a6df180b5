//! Analytic gradients of the two-head loss against central differences.

use densal_core::model::{Mlp, ModelSpec, Scratch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

fn numeric_gradient(mlp: &mut Mlp, x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut scratch = Scratch::new(mlp.spec());
    (0..mlp.num_params())
        .map(|i| {
            let orig = mlp.params()[i];
            mlp.params_mut()[i] = orig + STEP;
            let up = mlp.loss(x, y, &mut scratch);
            mlp.params_mut()[i] = orig - STEP;
            let down = mlp.loss(x, y, &mut scratch);
            mlp.params_mut()[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let spec = ModelSpec { bands: 3, context_radius: 1, hidden: vec![7, 5], dropout_rate: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for draw in 0..10 {
        let mut mlp = Mlp::new(&spec, draw).unwrap();
        for p in mlp.params_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let n = 6;
        let x: Vec<f64> = (0..n * spec.input_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let y: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.0 } else { rng.random_range(0.0..3.0) }).collect();
        let mut scratch = Scratch::new(&spec);
        let mut grad = vec![0.0; mlp.num_params()];
        mlp.loss_and_gradient::<ChaCha8Rng>(&x, &y, &mut scratch, None, &mut grad);
        let numeric = numeric_gradient(&mut mlp, &x, &y);
        for (a, b) in grad.iter().zip(&numeric) {
            worst = worst.max(relative_error(*a, *b));
        }
    }
    println!("max relative gradient error: {worst:.3e}");
    assert!(worst < 1e-4, "max relative error {worst}");
}
