//! Dense reference propagator `u(T) = exp(-i T H) u0` from an eigendecomposition
//! of the real symmetric spectral Hamiltonian.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::spectral::{SpectralProblem, StateVector};

#[derive(Debug, Clone)]
pub struct ReferencePropagator {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl ReferencePropagator {
    /// Factorise `H = Q diag(lambda) Q^T`, eigenvalues ascending.
    pub fn build(problem: &SpectralProblem) -> Result<Self> {
        let h = problem.hamiltonian()?;
        let eig = SymmetricEigen::try_new(h, f64::EPSILON, 0)
            .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
        let m = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = DVector::from_iterator(m, order.iter().map(|&i| eig.eigenvalues[i]));
        let eigenvectors = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Eigen("non-finite eigenvalue".into()));
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    /// Like [`build`](Self::build), but reuses a factorisation stored under
    /// `cache_dir` when one exists for the same grid and potential.
    pub fn build_cached(problem: &SpectralProblem, cache_dir: &Path) -> Result<Self> {
        let key = cache_key(problem);
        let bin = cache_dir.join(format!("{key}.bin"));
        let manifest = cache_dir.join(format!("{key}.txt"));
        if bin.exists() && manifest.exists() {
            if let Ok(p) = Self::read_cache(&bin, problem.len()) {
                return Ok(p);
            }
        }
        let p = Self::build(problem)?;
        std::fs::create_dir_all(cache_dir)?;
        p.write_cache(&bin, &manifest, problem)?;
        Ok(p)
    }

    fn write_cache(&self, bin: &Path, manifest: &Path, problem: &SpectralProblem) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(bin)?);
        for v in self.eigenvalues.iter().chain(self.eigenvectors.iter()) {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        let q = problem.potential().kind();
        std::fs::write(
            manifest,
            format!(
                "M = {}\nL = {}\nc4 = {}\nc2 = {}\nc1 = {}\nlayout = eigenvalues, eigenvectors column-major\n",
                problem.len(),
                problem.grid().half_width(),
                q.c4,
                q.c2,
                q.c1
            ),
        )?;
        Ok(())
    }

    fn read_cache(bin: &Path, m: usize) -> Result<Self> {
        let bytes = std::fs::read(bin)?;
        let expected = ((m + m * m) * 8) as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::Truncated {
                path: bin.to_path_buf(),
                offset: bytes.len() as u64,
                expected,
            });
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            eigenvalues: DVector::from_column_slice(&vals[..m]),
            eigenvectors: DMatrix::from_column_slice(m, m, &vals[m..]),
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// `Q exp(-i T diag(lambda)) Q^T u0`.
    pub fn propagate(&self, u0: &StateVector, t: f64) -> Result<StateVector> {
        let m = self.len();
        if u0.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: u0.len(),
            });
        }
        let q = &self.eigenvectors;
        let re = DVector::from_iterator(m, u0.0.iter().map(|z| z.re));
        let im = DVector::from_iterator(m, u0.0.iter().map(|z| z.im));
        let cr = q.tr_mul(&re);
        let ci = q.tr_mul(&im);
        let mut rr = DVector::zeros(m);
        let mut ri = DVector::zeros(m);
        for j in 0..m {
            let phase = Complex64::cis(-t * self.eigenvalues[j]);
            let c = Complex64::new(cr[j], ci[j]) * phase;
            rr[j] = c.re;
            ri[j] = c.im;
        }
        let out_re = q * rr;
        let out_im = q * ri;
        Ok(StateVector(
            out_re
                .iter()
                .zip(out_im.iter())
                .map(|(&r, &i)| Complex64::new(r, i))
                .collect(),
        ))
    }
}

/// Hex SHA-256 of `(M, L, c4, c2, c1)` as little-endian bytes.
pub fn cache_key(problem: &SpectralProblem) -> String {
    let mut hasher = Sha256::new();
    hasher.update((problem.len() as u64).to_le_bytes());
    hasher.update(problem.grid().half_width().to_le_bytes());
    for c in problem.potential().kind().coeffs() {
        hasher.update(c.to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Default cache location below a base directory.
pub fn cache_dir(base: &Path) -> PathBuf {
    base.join("reference-cache")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Quartic;

    fn problem() -> SpectralProblem {
        SpectralProblem::with_quartic(200, 10.0, Quartic::DOUBLE_WELL).unwrap()
    }

    fn packet(p: &SpectralProblem) -> StateVector {
        let mut u: Vec<Complex64> = p
            .grid()
            .points()
            .iter()
            .map(|x| Complex64::new((-2.0 * (x + 2.2f64).powi(2)).exp(), 0.0))
            .collect();
        let n = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        u.iter_mut().for_each(|z| *z /= n);
        StateVector(u)
    }

    #[test]
    fn factorisation_quality() {
        let p = problem();
        let r = ReferencePropagator::build(&p).unwrap();
        let h = p.hamiltonian().unwrap();
        let q = r.eigenvectors();
        let resid = &h * q - q * DMatrix::from_diagonal(r.eigenvalues());
        assert!(resid.norm() <= 1e-10 * h.norm());
        let gram = q.transpose() * q - DMatrix::identity(200, 200);
        assert!(gram.amax() <= 1e-12, "{}", gram.amax());
        let vmin = p.potential().samples().iter().copied().fold(f64::INFINITY, f64::min);
        assert!(r.eigenvalues()[0] >= vmin - 1e-9);
        assert!(r.eigenvalues().as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn free_spectrum_is_kappa_squared() {
        let p = SpectralProblem::with_quartic(32, 3.0, Quartic::new(0.0, 0.0, 0.0)).unwrap();
        let r = ReferencePropagator::build(&p).unwrap();
        let mut k2: Vec<f64> = p.kinetic_symbol().to_vec();
        k2.sort_by(f64::total_cmp);
        for (a, b) in r.eigenvalues().iter().zip(&k2) {
            assert!((a - b).abs() < 1e-10 * b.max(1.0));
        }
    }

    #[test]
    fn propagation_basics() {
        let p = problem();
        let r = ReferencePropagator::build(&p).unwrap();
        let u = packet(&p);
        assert!(r.propagate(&u, 0.0).unwrap().distance(&u) < 1e-13);
        let a = r.propagate(&u, 3.0).unwrap();
        assert!((a.norm() - 1.0).abs() < 1e-12);
        let ab = r.propagate(&a, 4.5).unwrap();
        let direct = r.propagate(&u, 7.5).unwrap();
        assert!(ab.distance(&direct) < 1e-11);
    }

    #[test]
    fn energy_is_conserved() {
        let p = problem();
        let r = ReferencePropagator::build(&p).unwrap();
        let energy = |u: &StateVector| {
            let hu = p.apply_hamiltonian(u).unwrap();
            u.0.iter().zip(&hu.0).map(|(a, b)| (a.conj() * b).re).sum::<f64>()
        };
        let u = packet(&p);
        let e0 = energy(&u);
        for t in [1.0, 5.0, 10.0] {
            let e = energy(&r.propagate(&u, t).unwrap());
            assert!((e - e0).abs() <= 1e-10 * e0.abs());
        }
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = SpectralProblem::with_quartic(16, 4.0, Quartic::DOUBLE_WELL).unwrap();
        let a = ReferencePropagator::build_cached(&p, dir.path()).unwrap();
        let b = ReferencePropagator::build_cached(&p, dir.path()).unwrap();
        assert_eq!(a.eigenvalues(), b.eigenvalues());
        assert_eq!(a.eigenvectors(), b.eigenvectors());
        let other = SpectralProblem::with_quartic(16, 4.5, Quartic::DOUBLE_WELL).unwrap();
        assert_ne!(cache_key(&p), cache_key(&other));
    }
}
