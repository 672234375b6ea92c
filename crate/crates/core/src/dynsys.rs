//! Stationary cost-trajectory generation from a linear dynamical system with
//! a nonlinear, multiplicative-noise observer, plus stability and mixing
//! diagnostics.
//!
//! The state evolves as `x_{k+1} = A x_k + w_k` with `w_k ~ N(0, Q)`; the
//! observed cost is `y_k = ((H x_k)^deg + 0.5*1) * xi_k` with the power
//! applied elementwise and `xi_k ~ Uniform[1 - xi_bar, 1 + xi_bar]` a single
//! scalar per step multiplying the whole vector.
//!
//! Reproducibility: all randomness comes from a ChaCha8 stream seeded with a
//! `u64`. Each step consumes one uniform for `xi_k`, then `ceil(d/2)`
//! Box-Muller pairs for the Gaussian state noise (surplus values are
//! discarded), so trajectories are identical across platforms for the same
//! `(spec, n, seed)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Generator description for one dynamical system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemSpecRaw", into = "SystemSpecRaw")]
pub struct SystemSpec {
    /// State transition matrix.
    pub a: DMatrix<f64>,
    /// State noise covariance (symmetric PSD).
    pub q: DMatrix<f64>,
    /// Observer matrix (defaults to the identity).
    pub h: DMatrix<f64>,
    /// Elementwise power applied to `H x`.
    pub deg: u32,
    /// Half width of the multiplicative observation noise, in [0, 1).
    pub xi_halfwidth: f64,
    /// Initial state.
    pub x0: DVector<f64>,
    /// Steps discarded before recording starts.
    pub burn_in: usize,
    /// Permit spectral radius >= 1 (the mixing argument no longer applies).
    pub allow_unstable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SystemSpecRaw {
    a: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    #[serde(default)]
    h: Option<Vec<Vec<f64>>>,
    deg: u32,
    #[serde(default = "default_xi_halfwidth")]
    xi_halfwidth: f64,
    #[serde(default)]
    x0: Option<Vec<f64>>,
    #[serde(default = "default_burn_in")]
    burn_in: usize,
    #[serde(default)]
    allow_unstable: bool,
}

fn default_xi_halfwidth() -> f64 {
    0.25
}

fn default_burn_in() -> usize {
    200
}

fn rows_to_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidParameter(format!("{name} must be nonempty")));
    }
    let mut flat = Vec::with_capacity(n * n);
    for r in rows {
        if r.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: r.len(),
            });
        }
        flat.extend_from_slice(r);
    }
    Ok(DMatrix::from_row_slice(n, n, &flat))
}

impl TryFrom<SystemSpecRaw> for SystemSpec {
    type Error = Error;

    fn try_from(raw: SystemSpecRaw) -> Result<Self> {
        let a = rows_to_matrix(&raw.a, "A")?;
        let d = a.nrows();
        let q = rows_to_matrix(&raw.q, "Q")?;
        let h = match raw.h {
            Some(rows) => rows_to_matrix(&rows, "H")?,
            None => DMatrix::identity(d, d),
        };
        let x0 = DVector::from_vec(raw.x0.unwrap_or_else(|| vec![0.0; d]));
        SystemSpec::new(
            a,
            q,
            h,
            raw.deg,
            raw.xi_halfwidth,
            x0,
            raw.burn_in,
            raw.allow_unstable,
        )
    }
}

impl From<SystemSpec> for SystemSpecRaw {
    fn from(spec: SystemSpec) -> Self {
        let to_rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|r| m.row(r).iter().copied().collect())
                .collect()
        };
        SystemSpecRaw {
            a: to_rows(&spec.a),
            q: to_rows(&spec.q),
            h: Some(to_rows(&spec.h)),
            deg: spec.deg,
            xi_halfwidth: spec.xi_halfwidth,
            x0: Some(spec.x0.iter().copied().collect()),
            burn_in: spec.burn_in,
            allow_unstable: spec.allow_unstable,
        }
    }
}

impl SystemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        q: DMatrix<f64>,
        h: DMatrix<f64>,
        deg: u32,
        xi_halfwidth: f64,
        x0: DVector<f64>,
        burn_in: usize,
        allow_unstable: bool,
    ) -> Result<Self> {
        let d = a.nrows();
        if a.ncols() != d || q.nrows() != d || q.ncols() != d || h.nrows() != d || h.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: q.nrows().max(h.nrows()),
            });
        }
        if x0.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x0.len(),
            });
        }
        if deg == 0 {
            return Err(Error::InvalidParameter("deg must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&xi_halfwidth) {
            return Err(Error::InvalidParameter(format!(
                "xi_halfwidth must lie in [0, 1), got {xi_halfwidth}"
            )));
        }
        if a.iter()
            .chain(q.iter())
            .chain(h.iter())
            .chain(x0.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("system matrices".into()));
        }
        psd_check(&q)?;
        Ok(SystemSpec {
            a,
            q,
            h,
            deg,
            xi_halfwidth,
            x0,
            burn_in,
            allow_unstable,
        })
    }

    /// The default experiment system: a stable upper-triangular pair with
    /// isotropic state noise.
    pub fn paper_default(deg: u32) -> Self {
        SystemSpec::new(
            DMatrix::from_row_slice(2, 2, &[0.8, 0.5, 0.0, 0.8]),
            DMatrix::identity(2, 2) * 0.1,
            DMatrix::identity(2, 2),
            deg,
            0.25,
            DVector::zeros(2),
            200,
            false,
        )
        .expect("static spec is valid")
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

fn psd_check(q: &DMatrix<f64>) -> Result<()> {
    let scale = q.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for i in 0..q.nrows() {
        for j in (i + 1)..q.ncols() {
            if (q[(i, j)] - q[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::NotPsd);
            }
        }
    }
    let eigs = q.clone().symmetric_eigen().eigenvalues;
    if eigs.iter().any(|&l| l < -1e-10 * scale) {
        return Err(Error::NotPsd);
    }
    Ok(())
}

/// Square root factor `L` of a PSD matrix with `L L' = Q`; Cholesky when
/// positive definite, eigenvalue factor otherwise (covers singular Q).
fn psd_factor(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if q.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(q.nrows(), q.ncols()));
    }
    if let Some(chol) = q.clone().cholesky() {
        return Ok(chol.l());
    }
    psd_check(q)?;
    let eig = q.clone().symmetric_eigen();
    let mut factor = eig.eigenvectors;
    for (c, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        factor.column_mut(c).scale_mut(s);
    }
    Ok(factor)
}

/// A generated cost trajectory plus the spec and seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTrajectory {
    pub data: Vec<DVector<f64>>,
    pub spec: SystemSpec,
    pub seed: u64,
}

/// One standard normal via Box-Muller on two uniforms; `u1` shifted into
/// (0, 1] so the logarithm is finite.
fn box_muller(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

fn gaussian_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    let mut out = DVector::zeros(d);
    let mut i = 0;
    while i < d {
        let (z0, z1) = box_muller(rng);
        out[i] = z0;
        if i + 1 < d {
            out[i + 1] = z1;
        }
        i += 2;
    }
    out
}

/// Simulates `n` recorded steps (after discarding `burn_in`), deterministic
/// given `(spec, n, seed)`.
pub fn simulate(spec: &SystemSpec, n: usize, seed: u64) -> Result<CostTrajectory> {
    let rho = spectral_radius(&spec.a)?;
    if rho >= 1.0 && !spec.allow_unstable {
        return Err(Error::UnstableSystem { rho });
    }
    let factor = psd_factor(&spec.q)?;
    let d = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = spec.x0.clone();
    let mut data = Vec::with_capacity(n);
    let total = spec.burn_in + n;
    for step in 0..total {
        let xi = 1.0 - spec.xi_halfwidth + 2.0 * spec.xi_halfwidth * rng.random::<f64>();
        if step >= spec.burn_in {
            let hx = &spec.h * &x;
            let y = hx.map(|v| (v.powi(spec.deg as i32) + 0.5) * xi);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Overflow { step });
            }
            data.push(y);
        }
        let noise = &factor * gaussian_vector(&mut rng, d);
        x = &spec.a * &x + noise;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { step });
        }
    }
    Ok(CostTrajectory {
        data,
        spec: spec.clone(),
        seed,
    })
}

/// Largest eigenvalue modulus. Analytic for 1x1 and 2x2, Schur eigenvalues
/// otherwise.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    match a.nrows() {
        0 => Err(Error::InvalidParameter("empty matrix".into())),
        1 => Ok(a[(0, 0)].abs()),
        2 => {
            let tr = a[(0, 0)] + a[(1, 1)];
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            let disc = tr * tr / 4.0 - det;
            if disc >= 0.0 {
                let s = disc.sqrt();
                Ok((tr / 2.0 + s).abs().max((tr / 2.0 - s).abs()))
            } else {
                // complex pair: |lambda|^2 = det
                Ok(det.sqrt())
            }
        }
        _ => {
            let eigs = a.clone().complex_eigenvalues();
            Ok(eigs.iter().fold(0.0f64, |m, l| m.max(l.norm())))
        }
    }
}

/// Largest singular value `sqrt(lambda_max(A'A))`.
pub fn spectral_norm(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    let gram = a.transpose() * a;
    let eigs = gram.symmetric_eigen().eigenvalues;
    Ok(eigs.iter().fold(0.0f64, |m, &l| m.max(l.max(0.0))).sqrt())
}

/// Plug-in upper-bound proxy `c * rho(A)^k` for the dependence coefficient
/// `beta(k)` of a stable system. Undefined at `rho >= 1`.
pub fn mixing_proxy(a: &DMatrix<f64>, k: u32, c: f64) -> Result<f64> {
    let rho = spectral_radius(a)?;
    if rho >= 1.0 {
        return Err(Error::ProxyUndefined { rho });
    }
    Ok(c * rho.powi(k as i32))
}

/// Stable seed derivation (splitmix64 finalizer); used to give independent
/// trials, draws, and training runs their own streams.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writes a trajectory as CSV with header `t,y1,...,yd` and 1-based `t`.
pub fn write_trajectory_csv<W: Write>(data: &[DVector<f64>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = data.first().map(|y| y.len()).unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("y{i}")));
    w.write_record(&header)?;
    for (t, y) in data.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(y.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory_csv`].
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Vec<DVector<f64>>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut y = Vec::with_capacity(rec.len().saturating_sub(1));
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad csv float: {field}")))?;
            y.push(v);
        }
        if y.is_empty() {
            return Err(Error::InvalidParameter(
                "csv row with no cost columns".into(),
            ));
        }
        out.push(DVector::from_vec(y));
    }
    if out.is_empty() {
        return Err(Error::InsufficientData("empty trajectory csv".into()));
    }
    Ok(out)
}
