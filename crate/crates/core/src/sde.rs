//! Langevin dynamics integrator: the stochastic verification channel for the
//! kinetic decay certificates.
//!
//! dX = grad psi(V) dt, dV = -grad phi(X) dt - xi grad psi(V) dt +
//! sqrt(2 xi) dW. The integrator splits kick/drift/fluctuation: exact
//! Ornstein-Uhlenbeck updates for quadratic kinetic energy, an
//! Euler-Maruyama fluctuation step otherwise. Paths own independent
//! counter-seeded RNG streams, so ensembles are bit-reproducible at any
//! thread count.

use crate::fit::block_bootstrap_rate_ci;
use crate::model::{HamiltonianSpec, Kinetic, Profile1d, XDomain};
use crate::quad::integrate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("path blew up: |V| exceeded 1e6 at step {step}")]
    Blowup { step: usize },
    #[error("no decay detected: rate confidence interval contains zero")]
    NoDecay,
}

#[derive(Debug, Clone)]
pub enum Observable {
    SecondMomentX,
    SecondMomentV,
    Energy,
    /// User-tabulated g(x) applied to the first position coordinate.
    Tabulated(crate::model::Table1d),
}

impl Observable {
    fn eval(&self, spec: &HamiltonianSpec, x: &[f64], v: &[f64]) -> f64 {
        match self {
            Observable::SecondMomentX => x.iter().map(|a| a * a).sum(),
            Observable::SecondMomentV => v.iter().map(|a| a * a).sum(),
            Observable::Energy => {
                x.iter().map(|&a| spec.phi_axis.eval(a)).sum::<f64>() + spec.psi(v)
            }
            Observable::Tabulated(t) => t.eval(x[0]),
        }
    }

    /// Equilibrium expectation by quadrature against the Gibbs measure.
    pub fn equilibrium(&self, spec: &HamiltonianSpec) -> f64 {
        let (a, b) = spec.x_axis_bounds();
        let tol = spec.quad_tol;
        let d = spec.dim as f64;
        match self {
            Observable::SecondMomentX => {
                d * integrate(|x| x * x * spec.mu_axis_density(x), a, b, tol).value
            }
            Observable::SecondMomentV => {
                if spec.separable_kinetic() {
                    d * integrate(
                        |v| v * v * spec.gamma_axis_density(v),
                        -spec.r_v,
                        spec.r_v,
                        tol,
                    )
                    .value
                } else {
                    // radial: E|v|^2 with the spherical surface measure
                    let area = match spec.dim {
                        2 => 2.0 * std::f64::consts::PI,
                        3 => 4.0 * std::f64::consts::PI,
                        _ => 2.0,
                    };
                    let probe = vec![0.0; spec.dim];
                    area * integrate(
                        |r| {
                            let mut p = probe.clone();
                            p[0] = r;
                            r * r * spec.gamma_density(&p) * r.powi(spec.dim as i32 - 1)
                        },
                        0.0,
                        spec.r_v,
                        tol,
                    )
                    .value
                }
            }
            Observable::Energy => {
                let ex = d * integrate(
                    |x| spec.phi_axis.eval(x) * spec.mu_axis_density(x),
                    a,
                    b,
                    tol,
                )
                .value;
                let ev = if spec.separable_kinetic() {
                    let q = spec.q_profile().unwrap();
                    d * integrate(
                        |v| q.eval(v) * spec.gamma_axis_density(v),
                        -spec.r_v,
                        spec.r_v,
                        tol,
                    )
                    .value
                } else {
                    0.0
                };
                ex + ev
            }
            Observable::Tabulated(t) => {
                integrate(|x| t.eval(x) * spec.mu_axis_density(x), a, b, tol).value
            }
        }
    }
}

/// How paths are initialised.
#[derive(Debug, Clone, Copy)]
pub enum SdeInit {
    /// Sample (X, V) from the Gibbs measure.
    Equilibrium,
    /// Gaussian position cloud shifted by `mean_x` with unit variance,
    /// equilibrium momenta (quadratic families).
    ShiftedGaussian { mean_x: f64 },
}

#[derive(Debug, Clone)]
pub struct SdeConfig {
    pub xi: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub observable: Observable,
    pub init: SdeInit,
    /// Record the ensemble average every this many steps.
    pub sample_every: usize,
}

impl SdeConfig {
    pub fn new(xi: f64, n_steps: usize, n_paths: usize, seed: u64) -> Self {
        Self {
            xi,
            dt: 1e-3,
            n_steps,
            n_paths,
            seed,
            observable: Observable::SecondMomentX,
            init: SdeInit::ShiftedGaussian { mean_x: 1.0 },
            sample_every: 10,
        }
    }
}

/// Ensemble observable series with standard errors.
#[derive(Debug, Clone)]
pub struct ObservableSeries {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub equilibrium: f64,
}

impl ObservableSeries {
    pub fn write_csv(&self) -> String {
        let mut s = String::from("t,mean_observable,stderr\n");
        for i in 0..self.times.len() {
            s.push_str(&format!("{},{},{}\n", self.times[i], self.mean[i], self.stderr[i]));
        }
        s
    }
}

struct PathAccumulator {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    blown: Option<usize>,
}

/// Integrates the ensemble and returns the observable time series. Fixed
/// chunking plus ordered reduction keeps results bit-identical for a given
/// seed regardless of thread count.
pub fn integrate_ensemble(
    spec: &HamiltonianSpec,
    cfg: &SdeConfig,
) -> Result<ObservableSeries, SdeError> {
    let n_samples = cfg.n_steps / cfg.sample_every + 1;
    let quadratic = matches!(
        spec.kinetic,
        Kinetic::Separable(Profile1d::Gaussian)
    );
    const CHUNK: usize = 256;
    let n_chunks = cfg.n_paths.div_ceil(CHUNK);
    let torus_period = match spec.x_domain {
        XDomain::Torus { period } => Some(period),
        XDomain::Line { .. } => None,
    };

    let chunks: Vec<PathAccumulator> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = ((chunk + 1) * CHUNK).min(cfg.n_paths);
            let mut acc = PathAccumulator {
                sum: vec![0.0; n_samples],
                sum_sq: vec![0.0; n_samples],
                blown: None,
            };
            let d = spec.dim;
            let mut x = vec![0.0; d];
            let mut v = vec![0.0; d];
            for path in lo..hi {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(path as u64 + 1);
                init_path(spec, cfg.init, &mut rng, &mut x, &mut v);
                let mut sample_idx = 0;
                let record = |k: usize, x: &[f64], v: &[f64], acc: &mut PathAccumulator| {
                    let val = cfg.observable.eval(spec, x, v);
                    acc.sum[k] += val;
                    acc.sum_sq[k] += val * val;
                };
                record(0, &x, &v, &mut acc);
                for step in 1..=cfg.n_steps {
                    advance(spec, cfg, quadratic, &mut rng, &mut x, &mut v, torus_period);
                    if v.iter().any(|a| a.abs() > 1e6) {
                        acc.blown = Some(step);
                        return acc;
                    }
                    if step % cfg.sample_every == 0 {
                        sample_idx += 1;
                        record(sample_idx, &x, &v, &mut acc);
                    }
                }
            }
            acc
        })
        .collect();

    let mut sum = vec![0.0; n_samples];
    let mut sum_sq = vec![0.0; n_samples];
    for acc in &chunks {
        if let Some(step) = acc.blown {
            return Err(SdeError::Blowup { step });
        }
        for k in 0..n_samples {
            sum[k] += acc.sum[k];
            sum_sq[k] += acc.sum_sq[k];
        }
    }
    let n = cfg.n_paths as f64;
    let times: Vec<f64> = (0..n_samples)
        .map(|k| (k * cfg.sample_every) as f64 * cfg.dt)
        .collect();
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| {
            let var = (sq / n - m * m).max(0.0);
            (var / (n - 1.0).max(1.0)).sqrt()
        })
        .collect();
    Ok(ObservableSeries {
        times,
        mean,
        stderr,
        equilibrium: cfg.observable.equilibrium(spec),
    })
}

fn init_path(
    spec: &HamiltonianSpec,
    init: SdeInit,
    rng: &mut ChaCha8Rng,
    x: &mut [f64],
    v: &mut [f64],
) {
    match init {
        SdeInit::ShiftedGaussian { mean_x } => {
            for a in x.iter_mut() {
                *a = mean_x + rng.sample::<f64, _>(StandardNormal);
            }
            for a in v.iter_mut() {
                *a = rng.sample::<f64, _>(StandardNormal);
            }
        }
        SdeInit::Equilibrium => {
            // positions: rejection sampling from the axis density
            let (lo, hi) = spec.x_axis_bounds();
            let cap = (0..512)
                .map(|k| spec.mu_axis_density(lo + (hi - lo) * (k as f64 + 0.5) / 512.0))
                .fold(0.0f64, f64::max)
                * 1.05;
            for a in x.iter_mut() {
                *a = rejection_sample(rng, lo, hi, cap, |t| spec.mu_axis_density(t));
            }
            if spec.separable_kinetic() {
                let cap_v = (0..512)
                    .map(|k| {
                        spec.gamma_axis_density(-spec.r_v + 2.0 * spec.r_v * (k as f64 + 0.5) / 512.0)
                    })
                    .fold(0.0f64, f64::max)
                    * 1.05;
                for a in v.iter_mut() {
                    *a = rejection_sample(rng, -spec.r_v, spec.r_v, cap_v, |t| {
                        spec.gamma_axis_density(t)
                    });
                }
            } else {
                for a in v.iter_mut() {
                    *a = rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
}

fn rejection_sample(
    rng: &mut ChaCha8Rng,
    lo: f64,
    hi: f64,
    cap: f64,
    dens: impl Fn(f64) -> f64,
) -> f64 {
    loop {
        let t = rng.gen_range(lo..hi);
        let u: f64 = rng.gen_range(0.0..cap);
        if u <= dens(t) {
            return t;
        }
    }
}

/// One BAOAB-style step: half kick, half drift, fluctuation step, half
/// drift, half kick.
#[allow(clippy::too_many_arguments)]
fn advance(
    spec: &HamiltonianSpec,
    cfg: &SdeConfig,
    quadratic: bool,
    rng: &mut ChaCha8Rng,
    x: &mut [f64],
    v: &mut [f64],
    torus_period: Option<f64>,
) {
    let dt = cfg.dt;
    let xi = cfg.xi;
    let d = x.len();
    let half_kick = |x: &[f64], v: &mut [f64]| {
        for i in 0..d {
            v[i] -= 0.5 * dt * spec.phi_axis.d1(x[i]);
        }
    };
    let half_drift = |x: &mut [f64], v: &[f64]| {
        let g = spec.grad_psi(v);
        for i in 0..d {
            x[i] += 0.5 * dt * g[i];
            if let Some(period) = torus_period {
                x[i] = x[i].rem_euclid(period);
            }
        }
    };
    half_kick(x, v);
    half_drift(x, v);
    if xi > 0.0 {
        if quadratic {
            // exact Ornstein-Uhlenbeck with unit equilibrium variance
            let c = (-xi * dt).exp();
            let s = (1.0 - c * c).sqrt();
            for a in v.iter_mut() {
                *a = c * *a + s * rng.sample::<f64, _>(StandardNormal);
            }
        } else {
            let g = spec.grad_psi(v);
            let s = (2.0 * xi * dt).sqrt();
            for (a, gi) in v.iter_mut().zip(&g) {
                *a += -xi * gi * dt + s * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    half_drift(x, v);
    half_kick(x, v);
}

/// Fitted exponential relaxation rate of an observable series, with a block
/// bootstrap confidence interval. The decaying segment is |mean -
/// equilibrium| down to the noise floor; `smooth_window > 0` applies a
/// running time-average first, which removes oscillation dips in the
/// underdamped regime (the same averaging idea the decay functional uses).
pub fn empirical_decay(
    series: &ObservableSeries,
    window: Option<(f64, f64)>,
    smooth_window: f64,
    seed: u64,
) -> Result<(f64, f64, f64), SdeError> {
    let dev: Vec<f64> = series
        .mean
        .iter()
        .map(|m| (m - series.equilibrium).abs())
        .collect();
    let (times, dev) = crate::fit::running_mean(&series.times, &dev, smooth_window);
    if times.len() < 8 {
        return Err(SdeError::NoDecay);
    }
    let noise = 3.0 * series.stderr.iter().cloned().fold(0.0, f64::max);
    let (t_lo, t_hi) = window.unwrap_or_else(|| {
        let t_end = times
            .iter()
            .zip(&dev)
            .find(|(_, d)| **d < noise)
            .map(|(t, _)| *t)
            .unwrap_or(*times.last().unwrap());
        (0.0, t_end.max(times[times.len() / 4]))
    });
    let (rate, lo, hi) = block_bootstrap_rate_ci(
        &times,
        &dev,
        t_lo,
        t_hi,
        noise.max(1e-300) * 0.3,
        400,
        seed,
    )
    .ok_or(SdeError::NoDecay)?;
    if lo <= 0.0 || !rate.is_finite() {
        return Err(SdeError::NoDecay);
    }
    Ok((rate, lo, hi))
}

/// One row of the friction sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub xi: f64,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub lambda_bar: f64,
}

/// Sweeps the friction and fits empirical relaxation rates; the certified
/// lambda_bar column comes from the exponential-rate formula at each xi.
///
/// Small frictions relax slowly and oscillate, so the horizon stretches like
/// 1/xi and the fit runs on a time-averaged deviation.
pub fn friction_sweep(
    spec: &HamiltonianSpec,
    base: &SdeConfig,
    xi_list: &[f64],
    lambda_p: f64,
    c_psi: f64,
) -> Result<Vec<SweepRow>, SdeError> {
    let mut rows = Vec::new();
    let base_t = base.n_steps as f64 * base.dt;
    for (k, &xi) in xi_list.iter().enumerate() {
        let horizon = base_t.max(8.0 / xi.min(1.0)).min(80.0);
        let cfg = SdeConfig {
            xi,
            n_steps: (horizon / base.dt).ceil() as usize,
            seed: base.seed.wrapping_add(k as u64 * 7919),
            ..base.clone()
        };
        let series = integrate_ensemble(spec, &cfg)?;
        let smooth = 6.5;
        let (rate, lo, hi) = empirical_decay(&series, None, smooth, cfg.seed)?;
        let lambda_bar = lambda_p / (1.0 / (xi * c_psi) + xi);
        rows.push(SweepRow {
            xi,
            rate,
            ci_lo: lo,
            ci_hi: hi,
            lambda_bar,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("xi,empirical_rate,rate_CI_lo,rate_CI_hi,certified_lambda_bar\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.xi, r.rate, r.ci_lo, r.ci_hi, r.lambda_bar
        ));
    }
    s
}

/// Trend flags of a sweep: empirically increasing at the small-friction end
/// and decreasing at the large-friction end.
pub fn sweep_trend(rows: &[SweepRow]) -> (bool, bool) {
    let n = rows.len();
    let increasing_small = n >= 2 && rows[1].rate > rows[0].rate;
    let decreasing_large = n >= 2 && rows[n - 1].rate < rows[n - 2].rate;
    (increasing_small, decreasing_large)
}
