#![allow(dead_code)]

use std::path::PathBuf;

use bilinear_reach::io::{load_library, load_system};
use bilinear_reach::numerics::{spectral_radius, Matrix};
use bilinear_reach::selection::ActuatorLibrary;
use bilinear_reach::system::BilinearSystem;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn five_state() -> BilinearSystem {
    load_system(&fixture("five_state.json")).unwrap()
}

pub fn library4() -> ActuatorLibrary {
    load_library(&fixture("library4.json")).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Random system rescaled so that the existence radius equals `rho`.
pub fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize, rho: f64) -> BilinearSystem {
    let a = random_matrix(rng, n, n);
    let f: Vec<Matrix> = (0..m).map(|_| random_matrix(rng, n, n).scale(0.5)).collect();
    let b = random_matrix(rng, n, m);
    let raw = BilinearSystem::new(a.clone(), f.clone(), b.clone()).unwrap();
    let current = spectral_radius(&raw.kronecker_operator().unwrap()).unwrap();
    // The Kronecker operator is quadratic in (A, F).
    let c = (rho / current).sqrt();
    BilinearSystem::new(a.scale(c), f.iter().map(|x| x.scale(c)).collect(), b).unwrap()
}

pub fn random_library(rng: &mut ChaCha8Rng, n: usize, size: usize, rho: f64) -> ActuatorLibrary {
    use bilinear_reach::selection::Actuator;
    let base = random_system(rng, n, size, rho);
    let candidates = (0..size)
        .map(|i| Actuator {
            f: base.f()[i].clone(),
            b: base.b().column(i),
        })
        .collect();
    ActuatorLibrary::new(base.a().clone(), candidates).unwrap()
}

pub fn rel_fro(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm_fro() / a.norm_fro().max(b.norm_fro()).max(f64::MIN_POSITIVE)
}
