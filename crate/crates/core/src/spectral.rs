//! Periodic spectral discretisation of `i u' = (V - d^2/dx^2) u` and fast
//! evaluation of splitting schemes through its two diagonal subflows.
//!
//! The potential subflow `exp(-i t V)` is diagonal on the grid; the kinetic
//! subflow `exp(-i t kappa^2)` is diagonal in discrete Fourier space. The
//! forward transform is unnormalised and the inverse carries the `1/M`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::splitcore::{check_symmetry, SplitCoeffs, SYMMETRY_TOL};

/// Equispaced periodic grid on `[-L, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    half_width: f64,
    points: Vec<f64>,
    wavenumbers: Vec<f64>,
}

impl Grid {
    /// `x_m = ((2m - 1)/M - 1) L` for `m = 1..M`, wavenumbers `pi n / L` in FFT order.
    pub fn new(m: usize, half_width: f64) -> Result<Self> {
        if m < 4 || m % 2 != 0 {
            return Err(Error::invalid(format!(
                "grid size must be even and at least 4, got {m}"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::invalid(format!(
                "domain half-width must be positive, got {half_width}"
            )));
        }
        let mf = m as f64;
        let points = (1..=m)
            .map(|i| ((2.0 * i as f64 - 1.0) / mf - 1.0) * half_width)
            .collect();
        let wavenumbers = (0..m)
            .map(|n| {
                let n = if n <= m / 2 { n as f64 } else { n as f64 - mf };
                std::f64::consts::PI * n / half_width
            })
            .collect();
        Ok(Self {
            half_width,
            points,
            wavenumbers,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.len() as f64
    }
}

/// `V(x) = c4 x^4 + c2 x^2 + c1 x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartic {
    pub c4: f64,
    pub c2: f64,
    pub c1: f64,
}

impl Quartic {
    pub const fn new(c4: f64, c2: f64, c1: f64) -> Self {
        Self { c4, c2, c1 }
    }

    /// `x^4 - 10 x^2`, wells at `+-sqrt(5)`.
    pub const DOUBLE_WELL: Quartic = Quartic::new(1.0, -10.0, 0.0);

    pub fn eval(&self, x: f64) -> f64 {
        let x2 = x * x;
        self.c4 * x2 * x2 + self.c2 * x2 + self.c1 * x
    }

    pub fn coeffs(&self) -> [f64; 3] {
        [self.c4, self.c2, self.c1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    kind: Quartic,
    samples: Vec<f64>,
}

impl Potential {
    pub fn sample(kind: Quartic, grid: &Grid) -> Result<Self> {
        let samples: Vec<f64> = grid.points().iter().map(|&x| kind.eval(x)).collect();
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("potential samples must be finite"));
        }
        Ok(Self { kind, samples })
    }

    pub fn kind(&self) -> Quartic {
        self.kind
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

/// Complex amplitudes on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub Vec<Complex64>);

impl StateVector {
    pub fn zeros(m: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    /// `sum |u_m|^2`, no grid weight.
    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn distance(&self, other: &StateVector) -> f64 {
        self.distance_sqr(other).sqrt()
    }

    pub fn distance_sqr(&self, other: &StateVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Result of propagating a state with a splitting scheme.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub state: StateVector,
    pub subflow_evals: usize,
}

/// Subflow evaluation count for `n` steps of a `k`-stage scheme.
pub fn subflow_count(k: usize, n: usize, symmetric: bool) -> usize {
    if symmetric {
        2 * n * (k - 1) + 1
    } else {
        2 * k * n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FlowKind {
    Potential,
    Kinetic,
}

/// One distinct subflow of a compiled schedule: its kind, its coefficient
/// (time in units of `h`) and the `[alpha..., beta...]` indices it sums.
#[derive(Debug, Clone)]
pub(crate) struct FlowTable {
    pub kind: FlowKind,
    pub coeff: f64,
    pub params: Vec<usize>,
}

/// Flattened sequence of subflows for `n` steps.
#[derive(Debug, Clone)]
pub(crate) struct Schedule {
    pub tables: Vec<FlowTable>,
    pub ops: Vec<usize>,
    /// Number of ops per outer step; the last step may carry one extra op.
    pub ops_per_step: usize,
    pub steps: usize,
}

/// Schedule with its phase tables evaluated for one step size.
#[derive(Debug, Clone)]
pub(crate) struct CompiledScheme {
    pub schedule: Schedule,
    pub phases: Vec<Vec<Complex64>>,
}

impl Schedule {
    pub fn compile(coeffs: &SplitCoeffs, n: usize) -> Self {
        let k = coeffs.stages();
        let a = coeffs.alpha();
        let b = coeffs.beta();
        let mut tables = Vec::new();
        let mut ops = Vec::new();
        let push = |tables: &mut Vec<FlowTable>, kind, coeff, params| {
            tables.push(FlowTable {
                kind,
                coeff,
                params,
            });
            tables.len() - 1
        };
        if check_symmetry(coeffs, SYMMETRY_TOL) {
            // beta_K is (numerically) zero: skip it and merge phi1(alpha_K) of
            // one step with phi1(alpha_1) of the next.
            let first = push(&mut tables, FlowKind::Potential, a[0], vec![0]);
            let merged = push(&mut tables, FlowKind::Potential, a[k - 1] + a[0], vec![k - 1, 0]);
            let last = push(&mut tables, FlowKind::Potential, a[k - 1], vec![k - 1]);
            let inner_a: Vec<usize> = (1..k - 1)
                .map(|i| push(&mut tables, FlowKind::Potential, a[i], vec![i]))
                .collect();
            let inner_b: Vec<usize> = (0..k - 1)
                .map(|i| push(&mut tables, FlowKind::Kinetic, b[i], vec![k + i]))
                .collect();
            for step in 0..n {
                ops.push(if step == 0 { first } else { merged });
                for i in 0..k - 1 {
                    ops.push(inner_b[i]);
                    if i + 1 < k - 1 {
                        ops.push(inner_a[i]);
                    }
                }
            }
            ops.push(last);
            Schedule {
                tables,
                ops,
                ops_per_step: 2 * (k - 1),
                steps: n,
            }
        } else {
            let ta: Vec<usize> = (0..k)
                .map(|i| push(&mut tables, FlowKind::Potential, a[i], vec![i]))
                .collect();
            let tb: Vec<usize> = (0..k)
                .map(|i| push(&mut tables, FlowKind::Kinetic, b[i], vec![k + i]))
                .collect();
            for _ in 0..n {
                for i in 0..k {
                    ops.push(ta[i]);
                    ops.push(tb[i]);
                }
            }
            Schedule {
                tables,
                ops,
                ops_per_step: 2 * k,
                steps: n,
            }
        }
    }
}

/// Default cap on `M` for dense Hamiltonian assembly.
pub const DENSE_CAP: usize = 1024;

/// Grid, potential and FFT plans for one semi-discrete Schrödinger problem.
///
/// Immutable after construction and shareable across threads.
pub struct SpectralProblem {
    grid: Grid,
    potential: Potential,
    kinetic_symbol: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralProblem")
            .field("m", &self.grid.len())
            .field("half_width", &self.grid.half_width())
            .field("potential", &self.potential.kind())
            .finish()
    }
}

impl Clone for SpectralProblem {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            potential: self.potential.clone(),
            kinetic_symbol: self.kinetic_symbol.clone(),
            forward: Arc::clone(&self.forward),
            inverse: Arc::clone(&self.inverse),
        }
    }
}

impl SpectralProblem {
    pub fn new(grid: Grid, potential: Potential) -> Result<Self> {
        if potential.samples().len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: potential.samples().len(),
            });
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid.len());
        let inverse = planner.plan_fft_inverse(grid.len());
        let kinetic_symbol = grid.wavenumbers().iter().map(|k| k * k).collect();
        Ok(Self {
            grid,
            potential,
            kinetic_symbol,
            forward,
            inverse,
        })
    }

    /// Build grid and sampled potential in one go.
    pub fn with_quartic(m: usize, half_width: f64, kind: Quartic) -> Result<Self> {
        let grid = Grid::new(m, half_width)?;
        let potential = Potential::sample(kind, &grid)?;
        Self::new(grid, potential)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `kappa_n^2`, the symbol of `-Laplacian`.
    pub fn kinetic_symbol(&self) -> &[f64] {
        &self.kinetic_symbol
    }

    fn check_len(&self, state: &StateVector) -> Result<()> {
        if state.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: state.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn fft_forward(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.forward.process_with_scratch(buf, scratch);
    }

    pub(crate) fn fft_inverse(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inverse.process_with_scratch(buf, scratch);
    }

    pub(crate) fn scratch(&self) -> Vec<Complex64> {
        let len = self
            .forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len());
        vec![Complex64::new(0.0, 0.0); len]
    }

    /// `exp(-i t V)` as phase factors.
    pub(crate) fn potential_phases(&self, t: f64) -> Vec<Complex64> {
        self.potential
            .samples()
            .iter()
            .map(|v| Complex64::cis(-t * v))
            .collect()
    }

    /// `exp(-i t kappa^2) / M`, the inverse-transform normalisation folded in.
    pub(crate) fn kinetic_phases(&self, t: f64) -> Vec<Complex64> {
        let inv_m = 1.0 / self.len() as f64;
        self.kinetic_symbol
            .iter()
            .map(|k2| Complex64::cis(-t * k2) * inv_m)
            .collect()
    }

    pub(crate) fn phases(&self, kind: FlowKind, t: f64) -> Vec<Complex64> {
        match kind {
            FlowKind::Potential => self.potential_phases(t),
            FlowKind::Kinetic => self.kinetic_phases(t),
        }
    }

    pub(crate) fn apply_phases(
        &self,
        kind: FlowKind,
        phases: &[Complex64],
        buf: &mut [Complex64],
        scratch: &mut [Complex64],
    ) {
        match kind {
            FlowKind::Potential => {
                for (u, p) in buf.iter_mut().zip(phases) {
                    *u *= p;
                }
            }
            FlowKind::Kinetic => {
                self.fft_forward(buf, scratch);
                for (u, p) in buf.iter_mut().zip(phases) {
                    *u *= p;
                }
                self.fft_inverse(buf, scratch);
            }
        }
    }

    /// `phi1_t = exp(-i t V)`.
    pub fn potential_flow(&self, state: &StateVector, t: f64) -> Result<StateVector> {
        self.check_len(state)?;
        let mut out = state.clone();
        for (u, v) in out.0.iter_mut().zip(self.potential.samples()) {
            *u *= Complex64::cis(-t * v);
        }
        Ok(out)
    }

    /// `phi2_t = exp(i t Laplacian)`, applied in Fourier space.
    pub fn kinetic_flow(&self, state: &StateVector, t: f64) -> Result<StateVector> {
        self.check_len(state)?;
        let mut out = state.clone();
        let mut scratch = self.scratch();
        let phases = self.kinetic_phases(t);
        self.apply_phases(FlowKind::Kinetic, &phases, &mut out.0, &mut scratch);
        Ok(out)
    }

    /// `n` steps of size `h` of the scheme `coeffs`.
    ///
    /// Symmetric schemes skip the trailing `beta_K = 0` flow and merge the
    /// adjacent potential flows at step boundaries.
    pub fn apply_scheme(
        &self,
        state: &StateVector,
        coeffs: &SplitCoeffs,
        h: f64,
        n: usize,
    ) -> Result<StepReport> {
        self.check_len(state)?;
        if n < 1 {
            return Err(Error::invalid("step count must be at least 1"));
        }
        if !h.is_finite() {
            return Err(Error::invalid(format!("step size must be finite, got {h}")));
        }
        let compiled = self.compile(coeffs, h, n);
        let mut buf = state.0.clone();
        let mut scratch = self.scratch();
        self.run_compiled(&compiled, &mut buf, &mut scratch)?;
        Ok(StepReport {
            state: StateVector(buf),
            subflow_evals: compiled.schedule.ops.len(),
        })
    }

    pub(crate) fn compile(&self, coeffs: &SplitCoeffs, h: f64, n: usize) -> CompiledScheme {
        let schedule = Schedule::compile(coeffs, n);
        let phases = schedule
            .tables
            .iter()
            .map(|t| self.phases(t.kind, t.coeff * h))
            .collect();
        CompiledScheme { schedule, phases }
    }

    /// Run a compiled schedule in place, checking finiteness once per step.
    pub(crate) fn run_compiled(
        &self,
        compiled: &CompiledScheme,
        buf: &mut [Complex64],
        scratch: &mut [Complex64],
    ) -> Result<()> {
        let schedule = &compiled.schedule;
        for (i, &op) in schedule.ops.iter().enumerate() {
            let table = &schedule.tables[op];
            self.apply_phases(table.kind, &compiled.phases[op], buf, scratch);
            let done = i + 1;
            if done % schedule.ops_per_step == 0 || done == schedule.ops.len() {
                if !buf.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                    let step = done.div_ceil(schedule.ops_per_step).min(schedule.steps);
                    return Err(Error::NonFiniteState { step });
                }
            }
        }
        Ok(())
    }

    /// Dense `H = V - Laplacian` (real symmetric) for reference propagation.
    pub fn hamiltonian(&self) -> Result<DMatrix<f64>> {
        self.hamiltonian_capped(DENSE_CAP)
    }

    pub fn hamiltonian_capped(&self, cap: usize) -> Result<DMatrix<f64>> {
        let m = self.len();
        if m > cap {
            return Err(Error::DenseCap { m, cap });
        }
        // -Laplacian is circulant: entry (p, q) depends on (p - q) mod M only.
        let mf = m as f64;
        let column: Vec<f64> = (0..m)
            .map(|j| {
                self.kinetic_symbol
                    .iter()
                    .enumerate()
                    .map(|(n, k2)| {
                        let phase = 2.0 * std::f64::consts::PI * ((n * j) % m) as f64 / mf;
                        k2 * phase.cos()
                    })
                    .sum::<f64>()
                    / mf
            })
            .collect();
        let v = self.potential.samples();
        Ok(DMatrix::from_fn(m, m, |p, q| {
            let j = (p + m - q) % m;
            let diag = if p == q { v[p] } else { 0.0 };
            column[j] + diag
        }))
    }

    /// `H u` via the potential and a spectral second derivative.
    pub fn apply_hamiltonian(&self, state: &StateVector) -> Result<StateVector> {
        self.check_len(state)?;
        let mut buf = state.0.clone();
        let mut scratch = self.scratch();
        self.fft_forward(&mut buf, &mut scratch);
        let inv_m = 1.0 / self.len() as f64;
        for (u, k2) in buf.iter_mut().zip(&self.kinetic_symbol) {
            *u *= k2 * inv_m;
        }
        self.fft_inverse(&mut buf, &mut scratch);
        for ((out, u), v) in buf.iter_mut().zip(&state.0).zip(self.potential.samples()) {
            *out += u * v;
        }
        Ok(StateVector(buf))
    }
}

/// Sidecar manifest path for a raw state file.
pub fn state_manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

/// Write `(re, im)` little-endian f64 pairs plus a `key = value` sidecar.
pub fn save_state(path: &Path, state: &StateVector, problem: &SpectralProblem) -> Result<()> {
    if state.len() != problem.len() {
        return Err(Error::DimensionMismatch {
            expected: problem.len(),
            got: state.len(),
        });
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_complex(&mut f, &state.0)?;
    f.flush()?;
    let q = problem.potential().kind();
    let manifest = format!(
        "M = {}\nL = {}\nc4 = {}\nc2 = {}\nc1 = {}\n",
        problem.len(),
        problem.grid().half_width(),
        q.c4,
        q.c2,
        q.c1
    );
    std::fs::write(state_manifest_path(path), manifest)?;
    Ok(())
}

/// Read a state written by [`save_state`]; returns the state with its grid
/// size, half-width and potential.
pub fn load_state(path: &Path) -> Result<(StateVector, usize, f64, Quartic)> {
    let mpath = state_manifest_path(path);
    let text = std::fs::read_to_string(&mpath)?;
    let kv = crate::data::parse_kv(&text, &mpath)?;
    let get = |k: &str| -> Result<f64> {
        kv.get(k)
            .ok_or_else(|| Error::format(&mpath, format!("missing key `{k}`")))?
            .parse::<f64>()
            .map_err(|e| Error::format(&mpath, format!("bad `{k}`: {e}")))
    };
    let m = get("M")? as usize;
    let l = get("L")?;
    let q = Quartic::new(get("c4")?, get("c2")?, get("c1")?);
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    let expected = (m * 16) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            expected,
        });
    }
    Ok((StateVector(decode_complex(&bytes)), m, l, q))
}

pub(crate) fn write_complex<W: Write>(w: &mut W, values: &[Complex64]) -> std::io::Result<()> {
    for z in values {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn decode_complex(bytes: &[u8]) -> Vec<Complex64> {
    bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitcore::{builtin, BUILTIN_NAMES};

    fn double_well() -> SpectralProblem {
        SpectralProblem::with_quartic(200, 10.0, Quartic::DOUBLE_WELL).unwrap()
    }

    fn wavepacket(p: &SpectralProblem, x0: f64) -> StateVector {
        let mut u: Vec<Complex64> = p
            .grid()
            .points()
            .iter()
            .map(|x| Complex64::new((-(x - x0) * (x - x0)).exp(), 0.3 * x))
            .collect();
        let n: f64 = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        u.iter_mut().for_each(|z| *z /= n);
        StateVector(u)
    }

    #[test]
    fn small_grid_points() {
        let g = Grid::new(4, 1.0).unwrap();
        assert_eq!(g.points(), &[-0.75, -0.25, 0.25, 0.75]);
        let g = Grid::new(4, std::f64::consts::PI).unwrap();
        let k: Vec<f64> = g.wavenumbers().iter().map(|k| (k * 1e12).round() / 1e12).collect();
        assert_eq!(k, vec![0.0, 1.0, 2.0, -1.0]);
    }

    #[test]
    fn default_grid_spacing() {
        let g = Grid::new(200, 10.0).unwrap();
        assert!((g.spacing() - 0.1).abs() < 1e-15);
        assert!(g.points()[0] > -10.0 && g.points()[199] < 10.0);
        for w in g.points().windows(2) {
            assert!((w[1] - w[0] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid::new(201, 10.0).is_err());
        assert!(Grid::new(2, 10.0).is_err());
        assert!(Grid::new(200, 0.0).is_err());
        assert!(Grid::new(200, -1.0).is_err());
    }

    #[test]
    fn potential_flow_properties() {
        let p = double_well();
        let u = wavepacket(&p, -2.0);
        assert_eq!(p.potential_flow(&u, 0.0).unwrap(), u);
        let out = p.potential_flow(&u, 0.37).unwrap();
        assert!((out.norm() - u.norm()).abs() < 1e-15);

        let flat = SpectralProblem::with_quartic(16, 3.0, Quartic::new(0.0, 0.0, 0.0)).unwrap();
        let grid = flat.grid().clone();
        let c = 2.5;
        let flat = SpectralProblem::new(
            grid.clone(),
            Potential {
                kind: Quartic::new(0.0, 0.0, 0.0),
                samples: vec![c; grid.len()],
            },
        )
        .unwrap();
        let u = StateVector((0..16).map(|i| Complex64::new(i as f64, 1.0)).collect());
        let out = flat.potential_flow(&u, 0.8).unwrap();
        for (a, b) in out.0.iter().zip(&u.0) {
            assert!((a - b * Complex64::cis(-0.8 * c)).norm() < 1e-14);
        }
    }

    #[test]
    fn kinetic_flow_properties() {
        let p = double_well();
        let u = wavepacket(&p, 1.0);
        let same = p.kinetic_flow(&u, 0.0).unwrap();
        assert!(same.distance(&u) < 1e-14);
        let out = p.kinetic_flow(&u, 0.9).unwrap();
        assert!((out.norm() - u.norm()).abs() < 1e-13);

        let constant = StateVector(vec![Complex64::new(0.1, -0.2); 200]);
        let out = p.kinetic_flow(&constant, 3.3).unwrap();
        assert!(out.distance(&constant) < 1e-14);

        // single Fourier mode picks up exp(-i t kappa^2)
        let n = 7;
        let kappa = p.grid().wavenumbers()[n];
        let mode = StateVector(
            p.grid()
                .points()
                .iter()
                .map(|x| Complex64::cis(kappa * x))
                .collect(),
        );
        let t = 0.013;
        let out = p.kinetic_flow(&mode, t).unwrap();
        let factor = Complex64::cis(-t * kappa * kappa);
        for (a, b) in out.0.iter().zip(&mode.0) {
            assert!((a - b * factor).norm() < 1e-12);
        }
    }

    #[test]
    fn subflow_accounting() {
        let p = double_well();
        let u = wavepacket(&p, -2.2);
        let l5 = builtin("learn5a").unwrap();
        let r = p.apply_scheme(&u, &l5.coeffs, 1.0 / 7.0, 70).unwrap();
        assert_eq!(r.subflow_evals, 561);
        let l8 = builtin("learn8a").unwrap();
        let r = p.apply_scheme(&u, &l8.coeffs, 1.0 / 7.0, 70).unwrap();
        assert_eq!(r.subflow_evals, 981);
        let t = SplitCoeffs::trotter();
        let r = p.apply_scheme(&u, &t, 0.1, 13).unwrap();
        assert_eq!(r.subflow_evals, subflow_count(1, 13, false));
    }

    #[test]
    fn unitarity_and_reversal() {
        let p = double_well();
        let u = wavepacket(&p, -2.2);
        for name in BUILTIN_NAMES {
            let d = builtin(name).unwrap();
            let r = p.apply_scheme(&u, &d.coeffs, 1.0 / 7.0, 70).unwrap();
            assert!((r.state.norm() - u.norm()).abs() < 1e-12, "{name}");
            if d.symmetric {
                let fwd = p.apply_scheme(&u, &d.coeffs, 0.1, 1).unwrap().state;
                let back = p.apply_scheme(&fwd, &d.coeffs, -0.1, 1).unwrap().state;
                assert!(back.distance(&u) < 1e-10, "{name}");
            }
        }
    }

    #[test]
    fn free_particle_commuting_limit() {
        let p = SpectralProblem::with_quartic(64, 5.0, Quartic::new(0.0, 0.0, 0.0)).unwrap();
        let u = wavepacket(&p, 0.5);
        let exact = p.kinetic_flow(&u, 0.05 * 9.0).unwrap();
        for name in BUILTIN_NAMES {
            let d = builtin(name).unwrap();
            let r = p.apply_scheme(&u, &d.coeffs, 0.05, 9).unwrap();
            assert!(r.state.distance(&exact) < 1e-12, "{name}");
        }
    }

    #[test]
    fn overflow_is_reported_with_step() {
        let p = double_well();
        let u = wavepacket(&p, 0.0);
        let wild = SplitCoeffs::new(vec![1e308, -1e308], vec![1.0, 0.0]).unwrap();
        let err = p.apply_scheme(&u, &wild, 1e10, 3).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { step: 1 }), "{err}");
    }

    #[test]
    fn hamiltonian_is_symmetric_and_matches_action() {
        let p = double_well();
        let h = p.hamiltonian().unwrap();
        let asym = (&h - h.transpose()).amax();
        assert!(asym < 1e-12);
        let u = wavepacket(&p, 0.7);
        let direct = p.apply_hamiltonian(&u).unwrap();
        let re = nalgebra::DVector::from_iterator(200, u.0.iter().map(|z| z.re));
        let im = nalgebra::DVector::from_iterator(200, u.0.iter().map(|z| z.im));
        let (hr, hi) = (&h * re, &h * im);
        let scale = direct.norm();
        for i in 0..200 {
            let dense = Complex64::new(hr[i], hi[i]);
            assert!((dense - direct.0[i]).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn hamiltonian_zero_mode_and_plane_wave() {
        let p = SpectralProblem::with_quartic(32, 4.0, Quartic::new(0.0, 0.0, 0.0)).unwrap();
        let h = p.hamiltonian().unwrap();
        let ones = nalgebra::DVector::from_element(32, 1.0);
        assert!((&h * ones).amax() < 1e-12);
        let kappa = p.grid().wavenumbers()[3];
        let c = nalgebra::DVector::from_iterator(32, p.grid().points().iter().map(|x| (kappa * x).cos()));
        let hc = &h * &c;
        assert!((hc - c * kappa * kappa).amax() < 1e-10);
        assert!(matches!(p.hamiltonian_capped(16), Err(Error::DenseCap { .. })));
    }

    #[test]
    fn state_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = double_well();
        let u = wavepacket(&p, 1.5);
        let path = dir.path().join("u.bin");
        save_state(&path, &u, &p).unwrap();
        let (back, m, l, q) = load_state(&path).unwrap();
        assert_eq!(back, u);
        assert_eq!((m, l, q), (200, 10.0, Quartic::DOUBLE_WELL));
        std::fs::write(&path, [0u8; 17]).unwrap();
        assert!(matches!(load_state(&path), Err(Error::Truncated { .. })));
    }
}
