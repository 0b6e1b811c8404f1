//! Seeded synthetic datasets for tests, benchmarks and the acceptance suite.

use ndarray::Array2;

use crate::rng::Rng;

/// Isotropic Gaussian classes: class `c` has mean `shift * e_c` (its own
/// axis) and unit variance, `per_class` rows each. Rows are grouped by class.
pub fn gaussian_classes(
    n_classes: usize,
    per_class: usize,
    d: usize,
    shift: f64,
    seed: u64,
) -> (Array2<f64>, Vec<usize>) {
    assert!(n_classes <= d, "each class needs its own axis");
    let mut rng = Rng::new(seed);
    let n = n_classes * per_class;
    let mut x = Array2::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    for c in 0..n_classes {
        for i in 0..per_class {
            let row = c * per_class + i;
            for j in 0..d {
                x[[row, j]] = rng.normal() + if j == c { shift } else { 0.0 };
            }
            y.push(c);
        }
    }
    (x, y)
}

/// One column equal to the label, the rest standard normal noise.
pub fn injected_signal(
    n: usize,
    d: usize,
    n_classes: usize,
    signal_col: usize,
    seed: u64,
) -> (Array2<f64>, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let y: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
    let mut x = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            x[[i, j]] = if j == signal_col {
                y[i] as f64
            } else {
                rng.normal()
            };
        }
    }
    (x, y)
}
