//! Fixtures shared by the criterion benches.

use repsim_core::rng::{normal_vec, seeded};
use repsim_core::{ActivationMatrix, Matrix};

/// Standard normal activations, `neurons x datapoints`.
pub fn gaussian_layer(neurons: usize, datapoints: usize, seed: u64) -> ActivationMatrix {
    let mut rng = seeded(seed);
    let m = Matrix::from_row_major(
        neurons,
        datapoints,
        normal_vec(&mut rng, neurons * datapoints),
    )
    .expect("finite samples");
    ActivationMatrix::new(m).expect("at least two datapoints")
}

/// A pair sharing `shared` latent directions, the rest independent.
pub fn correlated_pair(
    neurons: usize,
    datapoints: usize,
    shared: usize,
    seed: u64,
) -> (ActivationMatrix, ActivationMatrix) {
    let a = gaussian_layer(neurons, datapoints, seed);
    let b = gaussian_layer(neurons, datapoints, seed.wrapping_add(1));
    let rows: Vec<Vec<f64>> = (0..neurons)
        .map(|i| {
            let src = if i < shared {
                a.matrix().row(i)
            } else {
                b.matrix().row(i)
            };
            src.iter().map(|v| 0.5 * v).collect()
        })
        .collect();
    (a, ActivationMatrix::from_rows(&rows).expect("finite"))
}
