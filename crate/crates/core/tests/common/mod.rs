#![allow(dead_code)]

use sgf_core::numerics::{self, Matrix, RngState};

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    numerics::norm(&numerics::sub(a, b)) / numerics::norm(b).max(floor)
}

/// Largest `‖Mv‖` over unit `v`, found by random probing followed by a
/// shrinking random-perturbation hill climb. Uses no SVD and no power
/// iteration.
pub fn probe_sigma(m: &Matrix, rng: &mut RngState) -> f64 {
    let n = m.cols();
    let gain = |v: &[f64]| numerics::norm(&numerics::matvec(m, v).unwrap());
    let mut best_v = rng.unit_vector(n);
    let mut best = gain(&best_v);
    for _ in 0..10_000 {
        let v = rng.unit_vector(n);
        let g = gain(&v);
        if g > best {
            best = g;
            best_v = v;
        }
    }
    let mut radius = 0.3;
    while radius > 1e-7 {
        let mut improved = false;
        for _ in 0..200 {
            let mut v = best_v.clone();
            for x in v.iter_mut() {
                *x += radius * rng.normal();
            }
            let nv = numerics::norm(&v);
            let v = numerics::scaled(&v, 1.0 / nv);
            let g = gain(&v);
            if g > best {
                best = g;
                best_v = v;
                improved = true;
            }
        }
        if !improved {
            radius *= 0.5;
        }
    }
    best
}
