//! Random initial conditions, labelled datasets and their on-disk format.
//!
//! A dataset directory holds `manifest.txt` (`key = value` lines) and
//! `data.bin`, which stores for every item `u0` then `u_ref`, each as `M`
//! little-endian `(re, im)` f64 pairs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::reference::ReferencePropagator;
use crate::spectral::{decode_complex, write_complex, Grid, Quartic, SpectralProblem, StateVector};

pub const DATASET_VERSION: u32 = 1;

/// Law of the Gaussian centres and width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionParams {
    pub x_cent: f64,
    pub x_std_dev: f64,
    pub sigma: f64,
}

impl DistributionParams {
    pub const U1: DistributionParams = DistributionParams {
        x_cent: -2.23606797749979,
        x_std_dev: 0.1,
        sigma: 0.5,
    };
    pub const U2: DistributionParams = DistributionParams {
        x_cent: 2.23606797749979,
        x_std_dev: 0.2,
        sigma: 0.5,
    };
    pub const U3: DistributionParams = DistributionParams {
        x_cent: -3.872983346207417,
        x_std_dev: 0.05,
        sigma: 0.31622776601683794,
    };

    pub fn named(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "U1" => Some(Self::U1),
            "U2" => Some(Self::U2),
            "U3" => Some(Self::U3),
            _ => None,
        }
    }

    pub fn validate(&self, half_width: f64) -> Result<()> {
        if !(self.x_cent.abs() < half_width) {
            return Err(Error::invalid(format!(
                "centre mean {} outside the domain (-{half_width}, {half_width})",
                self.x_cent
            )));
        }
        if !(self.x_std_dev > 0.0 && self.x_std_dev.is_finite()) {
            return Err(Error::invalid("centre standard deviation must be positive"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("Gaussian width must be positive"));
        }
        Ok(())
    }
}

/// Probabilities of the add, phase and reset branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchProbs {
    pub add: f64,
    pub phase: f64,
    pub reset: f64,
}

impl Default for BranchProbs {
    fn default() -> Self {
        Self {
            add: 0.5,
            phase: 0.5,
            reset: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub m: usize,
    pub half_width: f64,
    pub potential: Quartic,
    pub t: f64,
    pub params: DistributionParams,
    pub probs: BranchProbs,
    pub seed: u64,
}

/// Labelled pairs `(u0, u_ref)` with `u_ref = exp(-i T H) u0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<(StateVector, StateVector)>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Items at `indices`, metadata unchanged.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            pairs: indices.iter().map(|&i| self.pairs[i].clone()).collect(),
            meta: self.meta.clone(),
        }
    }

    /// Reject datasets built on a different grid, potential or final time.
    pub fn check_compatible(&self, problem: &SpectralProblem, t: f64) -> Result<()> {
        let meta = &self.meta;
        if meta.m != problem.len() {
            return Err(Error::Mismatch(format!(
                "dataset has M = {}, problem has M = {}",
                meta.m,
                problem.len()
            )));
        }
        if meta.half_width != problem.grid().half_width() {
            return Err(Error::Mismatch(format!(
                "dataset has L = {}, problem has L = {}",
                meta.half_width,
                problem.grid().half_width()
            )));
        }
        if meta.potential != problem.potential().kind() {
            return Err(Error::Mismatch(format!(
                "dataset potential {:?} differs from {:?}",
                meta.potential.coeffs(),
                problem.potential().kind().coeffs()
            )));
        }
        if meta.t != t {
            return Err(Error::Mismatch(format!(
                "dataset has T = {}, requested T = {t}",
                meta.t
            )));
        }
        Ok(())
    }
}

/// `exp(-((x - x0)/sigma)^2 / 2)` scaled to unit squared 2-norm.
pub fn gaussian_state(grid: &Grid, x0: f64, sigma: f64) -> Result<StateVector> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("Gaussian width must be positive, got {sigma}")));
    }
    let mut u: Vec<Complex64> = grid
        .points()
        .iter()
        .map(|x| {
            let z = (x - x0) / sigma;
            Complex64::new((-0.5 * z * z).exp(), 0.0)
        })
        .collect();
    normalize(&mut u)?;
    Ok(StateVector(u))
}

fn normalize(u: &mut [Complex64]) -> Result<()> {
    let z: f64 = u.iter().map(|c| c.norm_sqr()).sum();
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::invalid("state has zero or non-finite norm"));
    }
    let s = 1.0 / z.sqrt();
    u.iter_mut().for_each(|c| *c *= s);
    Ok(())
}

/// Sequential random chain of labelled initial conditions.
///
/// Item `j > 0` starts from the label of item `j - 1`, optionally adds a
/// Gaussian at a fresh centre, optionally multiplies by a random global
/// phase, rarely resets to a pure Gaussian, and is renormalised.
pub fn generate_batch(
    problem: &SpectralProblem,
    reference: &ReferencePropagator,
    params: DistributionParams,
    count: usize,
    seed: u64,
    t: f64,
) -> Result<Dataset> {
    generate_batch_with(problem, reference, params, BranchProbs::default(), count, seed, t)
}

pub fn generate_batch_with(
    problem: &SpectralProblem,
    reference: &ReferencePropagator,
    params: DistributionParams,
    probs: BranchProbs,
    count: usize,
    seed: u64,
    t: f64,
) -> Result<Dataset> {
    params.validate(problem.grid().half_width())?;
    if !t.is_finite() {
        return Err(Error::invalid("final time must be finite"));
    }
    let grid = problem.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centre = Normal::new(params.x_cent, params.x_std_dev)
        .map_err(|e| Error::invalid(format!("centre distribution: {e}")))?;
    let mut pairs: Vec<(StateVector, StateVector)> = Vec::with_capacity(count);
    for j in 0..count {
        let x0 = centre.sample(&mut rng);
        let xi: [f64; 4] = rng.random();
        let mut phi = match pairs.last() {
            None => gaussian_state(grid, centre.sample(&mut rng), params.sigma)?.0,
            Some((_, prev_ref)) => prev_ref.0.clone(),
        };
        if xi[0] < probs.add {
            let g = gaussian_state(grid, x0, params.sigma)?;
            phi.iter_mut().zip(&g.0).for_each(|(a, b)| *a += b);
        }
        if xi[1] < probs.phase {
            let p = Complex64::cis(2.0 * std::f64::consts::PI * xi[2]);
            phi.iter_mut().for_each(|a| *a *= p);
        }
        if xi[3] < probs.reset {
            phi = gaussian_state(grid, x0, params.sigma)?.0;
        }
        normalize(&mut phi).map_err(|_| {
            Error::invalid(format!("item {j}: cancellation produced a zero state"))
        })?;
        let u0 = StateVector(phi);
        let uref = reference.propagate(&u0, t)?;
        pairs.push((u0, uref));
    }
    Ok(Dataset {
        pairs,
        meta: DatasetMeta {
            m: problem.len(),
            half_width: grid.half_width(),
            potential: problem.potential().kind(),
            t,
            params,
            probs,
            seed,
        },
    })
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let m = &ds.meta;
    let manifest = format!(
        "version = {DATASET_VERSION}\nM = {}\nL = {}\nc4 = {}\nc2 = {}\nc1 = {}\nT = {}\n\
         xCent = {}\nxStdDev = {}\nsigma = {}\npAdd = {}\npPhase = {}\npReset = {}\n\
         seed = {}\ncount = {}\n",
        m.m,
        m.half_width,
        m.potential.c4,
        m.potential.c2,
        m.potential.c1,
        m.t,
        m.params.x_cent,
        m.params.x_std_dev,
        m.params.sigma,
        m.probs.add,
        m.probs.phase,
        m.probs.reset,
        m.seed,
        ds.len()
    );
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("data.bin"))?);
    for (u0, uref) in &ds.pairs {
        if u0.len() != m.m || uref.len() != m.m {
            return Err(Error::DimensionMismatch {
                expected: m.m,
                got: u0.len().min(uref.len()),
            });
        }
        write_complex(&mut f, &u0.0)?;
        write_complex(&mut f, &uref.0)?;
    }
    f.flush()?;
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&mpath)?;
    let kv = parse_kv(&text, &mpath)?;
    let get = |k: &str| -> Result<&str> {
        kv.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::format(&mpath, format!("missing key `{k}`")))
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse::<f64>()
            .map_err(|e| Error::format(&mpath, format!("bad `{k}`: {e}")))
    };
    let int = |k: &str| -> Result<u64> {
        get(k)?
            .parse::<u64>()
            .map_err(|e| Error::format(&mpath, format!("bad `{k}`: {e}")))
    };
    let version = int("version")?;
    if version != DATASET_VERSION as u64 {
        return Err(Error::format(&mpath, format!("unsupported version {version}")));
    }
    let m = int("M")? as usize;
    let count = int("count")? as usize;
    let defaults = BranchProbs::default();
    let prob = |k: &str, d: f64| -> Result<f64> {
        if kv.contains_key(k) {
            num(k)
        } else {
            Ok(d)
        }
    };
    let meta = DatasetMeta {
        m,
        half_width: num("L")?,
        potential: Quartic::new(num("c4")?, num("c2")?, num("c1")?),
        t: num("T")?,
        params: DistributionParams {
            x_cent: num("xCent")?,
            x_std_dev: num("xStdDev")?,
            sigma: num("sigma")?,
        },
        probs: BranchProbs {
            add: prob("pAdd", defaults.add)?,
            phase: prob("pPhase", defaults.phase)?,
            reset: prob("pReset", defaults.reset)?,
        },
        seed: int("seed")?,
    };
    Grid::new(m, meta.half_width).map_err(|e| Error::format(&mpath, e.to_string()))?;

    let bpath = dir.join("data.bin");
    let bytes = std::fs::read(&bpath)?;
    let item = 2 * m * 16;
    let expected = (count * item) as u64;
    if bytes.len() as u64 != expected {
        // first byte offset at which the payload stops matching the manifest
        let offset = (bytes.len() as u64).min(expected);
        return Err(Error::Truncated {
            path: bpath,
            offset,
            expected,
        });
    }
    let pairs = bytes
        .chunks_exact(item)
        .map(|c| {
            (
                StateVector(decode_complex(&c[..item / 2])),
                StateVector(decode_complex(&c[item / 2..])),
            )
        })
        .collect();
    Ok(Dataset { pairs, meta })
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub(crate) fn parse_kv(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::format(origin, format!("line {}: expected `key = value`", i + 1))
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (SpectralProblem, ReferencePropagator) {
        let p = SpectralProblem::with_quartic(200, 10.0, Quartic::DOUBLE_WELL).unwrap();
        let r = ReferencePropagator::build(&p).unwrap();
        (p, r)
    }

    #[test]
    fn gaussian_properties() {
        let g = Grid::new(200, 10.0).unwrap();
        let x0 = -5f64.sqrt();
        let u = gaussian_state(&g, x0, 0.5).unwrap();
        assert!((u.norm_sqr() - 1.0).abs() < 1e-14);
        let argmax = (0..200)
            .max_by(|&a, &b| u.0[a].norm().total_cmp(&u.0[b].norm()))
            .unwrap();
        let nearest = (0..200)
            .min_by(|&a, &b| (g.points()[a] - x0).abs().total_cmp(&(g.points()[b] - x0).abs()))
            .unwrap();
        assert_eq!(argmax, nearest);
        let c = gaussian_state(&g, 0.0, 0.7).unwrap();
        for i in 0..100 {
            assert!((c.0[i].norm() - c.0[199 - i].norm()).abs() < 1e-14);
        }
        assert!(gaussian_state(&g, 0.0, 0.0).is_err());
    }

    #[test]
    fn batch_is_normalised_and_deterministic() {
        let (p, r) = setup();
        let a = generate_batch(&p, &r, DistributionParams::U1, 40, 9, 10.0).unwrap();
        let b = generate_batch(&p, &r, DistributionParams::U1, 40, 9, 10.0).unwrap();
        assert_eq!(a, b);
        for (u0, uref) in &a.pairs {
            assert!((u0.norm_sqr() - 1.0).abs() < 1e-12);
            assert!((uref.norm_sqr() - 1.0).abs() < 1e-12);
        }
        let prefix = generate_batch(&p, &r, DistributionParams::U1, 15, 9, 10.0).unwrap();
        assert_eq!(prefix.pairs[..], a.pairs[..15]);
    }

    #[test]
    fn forced_reset_gives_gaussians() {
        let (p, r) = setup();
        let probs = BranchProbs {
            reset: 1.0,
            ..BranchProbs::default()
        };
        let ds = generate_batch_with(&p, &r, DistributionParams::U1, probs, 20, 1, 10.0).unwrap();
        for (u0, _) in &ds.pairs {
            // a real positive Gaussian has a single phase and matches its own fit
            let mean: f64 = p.grid().points().iter().zip(&u0.0).map(|(x, u)| x * u.norm_sqr()).sum();
            let g = gaussian_state(p.grid(), mean, 0.5).unwrap();
            assert!(u0.distance(&g) < 1e-6);
        }
    }

    #[test]
    fn dataset_round_trip() {
        let (p, r) = setup();
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_batch(&p, &r, DistributionParams::U1, 5, 3, 10.0).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);

        let empty = generate_batch(&p, &r, DistributionParams::U1, 0, 3, 10.0).unwrap();
        let edir = dir.path().join("empty");
        save_dataset(&empty, &edir).unwrap();
        assert_eq!(load_dataset(&edir).unwrap(), empty);
    }

    #[test]
    fn manifest_payload_mismatch() {
        let (p, r) = setup();
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_batch(&p, &r, DistributionParams::U1, 3, 3, 10.0).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let mpath = dir.path().join("manifest.txt");
        let text = std::fs::read_to_string(&mpath).unwrap().replace("M = 200", "M = 100");
        std::fs::write(&mpath, text).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
    }

    #[test]
    fn compatibility_check() {
        let (p, r) = setup();
        let ds = generate_batch(&p, &r, DistributionParams::U1, 1, 3, 10.0).unwrap();
        assert!(ds.check_compatible(&p, 10.0).is_ok());
        assert!(ds.check_compatible(&p, 30.0).is_err());
        let q = SpectralProblem::with_quartic(200, 10.0, Quartic::new(1.0, -10.0, -10.0)).unwrap();
        assert!(matches!(ds.check_compatible(&q, 10.0), Err(Error::Mismatch(_))));
    }
}
