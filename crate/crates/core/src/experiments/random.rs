use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::TokenDataset;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Seed for one trial, derived from the master seed on an independent ChaCha stream
/// so that it does not depend on scheduling.
pub fn trial_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

pub fn unit_sphere(rng: &mut impl Rng, d: usize) -> Vector {
    loop {
        let z = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n = z.norm();
        if n > 1e-12 {
            return z / n;
        }
    }
}

/// `n` inputs of `T` tokens and a head `v`, all uniform on the unit sphere in `R^d`,
/// labels uniform in `{−1, +1}` and keys equal to tokens.
pub fn generate_random_dataset(n: usize, t: usize, d: usize, seed: u64) -> Result<(TokenDataset, Vector)> {
    if n == 0 || t == 0 || d == 0 {
        return Err(Error::InvalidInput(format!("n, T, d must be positive (got {n}, {t}, {d})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = Matrix::zeros(t, d);
        for r in 0..t {
            x.set_row(r, &unit_sphere(&mut rng, d).transpose());
        }
        inputs.push(x);
        labels.push(if rng.random::<bool>() { 1.0 } else { -1.0 });
    }
    let v = unit_sphere(&mut rng, d);
    let ds = TokenDataset::from_key_query(inputs, labels, Matrix::identity(d, d))?;
    Ok((ds, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_on_the_sphere() {
        let (a, va) = generate_random_dataset(3, 4, 5, 11).unwrap();
        let (b, vb) = generate_random_dataset(3, 4, 5, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(va, vb);
        assert_eq!(a.to_json_string().unwrap(), b.to_json_string().unwrap());
        for r in a.inputs() {
            for row in r.tokens().row_iter() {
                assert!((row.norm() - 1.0).abs() <= 1e-12);
            }
        }
        assert!((va.norm() - 1.0).abs() <= 1e-12);
        let (c, _) = generate_random_dataset(3, 4, 5, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn trial_seeds_differ_per_stream() {
        assert_eq!(trial_seed(7, 3), trial_seed(7, 3));
        assert_ne!(trial_seed(7, 3), trial_seed(7, 4));
        assert_ne!(trial_seed(7, 3), trial_seed(8, 3));
    }

    #[test]
    fn head_mean_is_near_zero() {
        let mut mean = Vector::zeros(16);
        for s in 0..1000 {
            mean += generate_random_dataset(6, 10, 16, trial_seed(99, s)).unwrap().1;
        }
        mean /= 1000.0;
        assert!(mean.iter().all(|x| x.abs() <= 0.05), "{mean:?}");
    }

    #[test]
    fn rejects_empty_shapes() {
        assert!(generate_random_dataset(0, 3, 2, 1).is_err());
    }
}
