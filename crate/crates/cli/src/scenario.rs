//! Scenario orchestration: certify, simulate-pde, simulate-sde, lions-check
//! and sweep-friction, each writing its artifacts into a timestamped run
//! directory and summarising every audited inequality as PASS or FAIL.

use crate::config::{Command, ConfigError, InitialData, ScenarioConfig};
use hypocert::certificates::{
    algebraic_data, algebraic_envelope, certify_exponential, certify_model,
    exponential_rate, lions_constant, m0_constant, optimal_friction, y0_root, CertificateError,
    CertifyOptions, Entry, RateCertificate,
};
use hypocert::lions::{
    empirical_lions_constant, random_source, solve_divergence, DivergenceProblem, LionsError,
};
use hypocert::model::{HamiltonianSpec, XDomain};
use hypocert::sde::{
    empirical_decay, friction_sweep, integrate_ensemble, sweep_csv, sweep_trend, Observable,
    SdeConfig, SdeError, SdeInit,
};
use hypocert::spectral1d::{Grid1d, SpectralError, SpectralOperator};
use hypocert::vfp::{run, FluxScheme, PdeError, PhaseGrid, RunConfig};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error(transparent)]
    Lions(#[from] LionsError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("configuration refused: {0}")]
    Refused(String),
}

impl ScenarioError {
    /// Exit codes: 1 parse, 2 validation, 3 numerical refusal, 5 i/o.
    /// Audit failures exit 4 via the outcome, not through this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(ConfigError::Parse { .. }) => 1,
            ScenarioError::Config(ConfigError::Validation { .. }) => 2,
            ScenarioError::Config(_) => 2,
            ScenarioError::Io(_) => 5,
            _ => 3,
        }
    }
}

/// Aggregated PASS/FAIL summary; every failed row carries both sides and the
/// slack that was applied.
#[derive(Debug, Default)]
pub struct Summary {
    lines: Vec<(bool, String)>,
}

impl Summary {
    pub fn check(&mut self, name: &str, ok: bool, lhs: f64, rhs: f64, slack: f64) {
        let verdict = if ok { "PASS" } else { "FAIL" };
        self.lines.push((
            ok,
            format!("{verdict} {name}: lhs = {lhs:.6e}, rhs = {rhs:.6e}, slack = {slack}"),
        ));
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.lines.push((true, format!("note {}", text.into())));
    }

    pub fn passed(&self) -> bool {
        self.lines.iter().all(|(ok, _)| *ok)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (_, line) in &self.lines {
            s.push_str(line);
            s.push('\n');
        }
        s.push_str(if self.passed() {
            "overall: PASS\n"
        } else {
            "overall: FAIL\n"
        });
        s
    }
}

pub struct ScenarioOutcome {
    pub passed: bool,
    pub summary: String,
    pub artifacts: PathBuf,
}

/// Creates the timestamped run directory under the output base.
fn run_dir(out_base: &Path, command: Command) -> std::io::Result<PathBuf> {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    for k in 0..10_000 {
        let name = if k == 0 {
            format!("run-{stamp}-{}", command.name())
        } else {
            format!("run-{stamp}-{}-{k}", command.name())
        };
        let dir = out_base.join(name);
        match std::fs::create_dir_all(&dir) {
            Ok(()) if std::fs::read_dir(&dir)?.next().is_none() => return Ok(dir),
            Ok(()) => continue,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    Err(std::io::Error::other("could not allocate a run directory"))
}

pub fn run_scenario(
    command: Command,
    cfg: &ScenarioConfig,
    out_base: &Path,
    quiet: bool,
) -> Result<ScenarioOutcome, ScenarioError> {
    let dir = run_dir(out_base, command)?;
    std::fs::write(dir.join("effective.ini"), cfg.effective_ini(command))?;
    let mut summary = Summary::default();
    match command {
        Command::Certify => certify_scenario(cfg, &dir, &mut summary)?,
        Command::SimulatePde => simulate_pde(cfg, &dir, &mut summary)?,
        Command::SimulateSde => simulate_sde(cfg, &dir, &mut summary)?,
        Command::LionsCheck => lions_check(cfg, &dir, &mut summary)?,
        Command::SweepFriction => sweep_friction_scenario(cfg, &dir, &mut summary)?,
    }
    let rendered = summary.render();
    std::fs::write(dir.join("summary.txt"), &rendered)?;
    if !quiet {
        print!("{rendered}");
        println!("artifacts: {}", dir.display());
    }
    Ok(ScenarioOutcome {
        passed: summary.passed(),
        summary: rendered,
        artifacts: dir,
    })
}

fn opts(cfg: &ScenarioConfig) -> CertifyOptions {
    CertifyOptions {
        spectral_n: cfg.spectral_n,
    }
}

/// Certificate data carried into the simulation scenarios.
enum CertRoute {
    Exponential(Box<RateCertificate>),
    Algebraic {
        lambda_p: f64,
        sigma: f64,
        p_psi: f64,
        g_sigma_l1: f64,
        report: String,
    },
}

fn certify_route(
    spec: &HamiltonianSpec,
    cfg: &ScenarioConfig,
) -> Result<CertRoute, ScenarioError> {
    match certify_exponential(spec, cfg.xi, cfg.tau, opts(cfg)) {
        Ok(cert) => Ok(CertRoute::Exponential(Box::new(cert))),
        Err(CertificateError::Spectral(SpectralError::NoSpectralGap { .. }))
        | Err(CertificateError::Unsupported(_)) => {
            let model = certify_model(spec, opts(cfg))?;
            let lc = lions_constant(
                model.c_phi.value,
                model.c_phi_prime.value,
                model.c_phi_second.value,
                spec.dim,
                cfg.tau,
            )?;
            let lambda_p = 1.0 / (1.0 + lc.c_tau_lions * model.kavg.k_avg);
            let sigma_opt = if cfg.sigma > 0.0 { Some(cfg.sigma) } else { None };
            let alg = algebraic_data(spec, sigma_opt, opts(cfg))?;
            let mut report = String::new();
            let mut put = |k: &str, e: &Entry| {
                report.push_str(&format!(
                    "# provenance: {}\n{} = {:.17e}\n",
                    e.provenance, k, e.value
                ));
            };
            put("tau", &Entry::new(cfg.tau, "run parameter"));
            put("xi", &Entry::new(cfg.xi, "run parameter"));
            put("c_phi", &model.c_phi);
            put("c_phi_prime", &model.c_phi_prime);
            put("c_phi_second", &model.c_phi_second);
            put(
                "K_avg",
                &Entry::new(model.kavg.k_avg, format!("{} route", model.kavg_route)),
            );
            if let Some(corr) = model.kavg.correction {
                put(
                    "K_avg_correction",
                    &Entry::new(corr, "dimension-dependent, scales as sqrt(d)"),
                );
            }
            put("C_tau_Lions", &Entry::new(lc.c_tau_lions, "3 (C_LM + 2 C_N)"));
            put("lambda_P", &Entry::new(lambda_p, "1/(1 + C_Lions K_avg)"));
            put(
                "P_psi",
                &Entry::new(
                    alg.weighted.p_psi,
                    format!("weighted eigensolve, G = {}", alg.weight_desc),
                ),
            );
            put(
                "sigma",
                &Entry::new(alg.sigma, "user-chosen in (0, sigma_max)"),
            );
            put(
                "sigma_max",
                &Entry::new(alg.weighted.sigma_max, "tail-exponent threshold"),
            );
            put("G_sigma_L1", &Entry::new(alg.g_sigma_l1, "quadrature"));
            Ok(CertRoute::Algebraic {
                lambda_p,
                sigma: alg.sigma,
                p_psi: alg.weighted.p_psi,
                g_sigma_l1: alg.g_sigma_l1,
                report,
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn certify_scenario(
    cfg: &ScenarioConfig,
    dir: &Path,
    summary: &mut Summary,
) -> Result<(), ScenarioError> {
    let spec = cfg.build_spec()?;
    match certify_route(&spec, cfg)? {
        CertRoute::Exponential(cert) => {
            std::fs::write(dir.join("certificate.txt"), cert.report())?;
            match cert.validate() {
                Ok(()) => summary.check("certificate_identities", true, 0.0, 0.0, 0.0),
                Err(msg) => {
                    summary.note(msg);
                    summary.check("certificate_identities", false, f64::NAN, f64::NAN, 0.0);
                }
            }
            summary.note(format!(
                "lambda_bar = {:.6e} at xi = {}, optimal xi* = {:.6e}",
                cert.lambda_bar.value,
                cert.xi.value,
                optimal_friction(cert.c_psi.value)
            ));
        }
        CertRoute::Algebraic { report, lambda_p, .. } => {
            std::fs::write(dir.join("certificate.txt"), report)?;
            summary.check("certificate_identities", lambda_p > 0.0, lambda_p, 0.0, 0.0);
            summary.note("no momentum spectral gap: algebraic route constants emitted");
        }
    }
    Ok(())
}

/// Truncation radius for the phase-space grid: small enough boundary density
/// for conservation, tail mass below 1e-8.
fn pde_r_v(spec: &HamiltonianSpec) -> Result<f64, ScenarioError> {
    let q = spec
        .q_profile()
        .ok_or_else(|| ScenarioError::Refused("phase-space solver needs separable psi".into()))?;
    let dens = |v: f64| (-(q.eval(v) + spec.psi_shift_axis)).exp();
    let mut r = 4.0f64;
    while r <= 1.2e3 {
        let tail = hypocert::quad::integrate(dens, r, 8.0 * r.max(50.0), 1e-12).value;
        if dens(r) < 2e-11 && 2.0 * tail < 1e-8 {
            return Ok(r.min(spec.r_v));
        }
        r *= 1.3;
    }
    Err(ScenarioError::Refused(
        "momentum truncation would exceed 1e3; tail mass target 1e-8 unreachable".into(),
    ))
}

fn phase_grid(spec: &HamiltonianSpec, cfg: &ScenarioConfig) -> Result<PhaseGrid, ScenarioError> {
    Ok(PhaseGrid {
        x_domain: spec.x_domain,
        nx: cfg.nx,
        r_v: pde_r_v(spec)?,
        nv: cfg.nv,
    })
}

fn initial_data(spec: &HamiltonianSpec, h0: InitialData) -> impl Fn(f64, f64) -> f64 {
    let period = match spec.x_domain {
        XDomain::Torus { period } => period,
        XDomain::Line { .. } => 1.0,
    };
    move |x: f64, v: f64| match h0 {
        InitialData::CosineProduct => {
            (2.0 * std::f64::consts::PI * x / period).cos() * (-0.5 * v * v).exp()
        }
        InitialData::GaussianShift { delta } => (delta * x - 0.5 * delta * delta).exp() - 1.0,
    }
}

fn simulate_pde(
    cfg: &ScenarioConfig,
    dir: &Path,
    summary: &mut Summary,
) -> Result<(), ScenarioError> {
    let spec = cfg.build_spec()?;
    if spec.dim != 1 {
        return Err(ScenarioError::Refused("the PDE solver runs in d = 1".into()));
    }
    let route = certify_route(&spec, cfg)?;
    let grid = phase_grid(&spec, cfg)?;
    let run_cfg = RunConfig {
        xi: cfg.xi,
        tau: cfg.tau,
        t_end: cfg.t_end,
        dt: cfg.dt,
        scheme: FluxScheme::CenteredSkew,
        snapshot_every: cfg.snapshot_every,
    };
    let (_, out) = run(&spec, grid, initial_data(&spec, cfg.h0), &run_cfg)?;
    let series = &out.series;

    // conservation and dissipation audits
    let mass_drift = series
        .mass
        .iter()
        .map(|m| (m - series.mass[0]).abs())
        .fold(0.0f64, f64::max);
    summary.check("mass_conservation", mass_drift <= 1e-9, mass_drift, 1e-9, 0.0);
    let monotone = series
        .norm_sq
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    summary.check("norm_monotone", monotone, 0.0, 0.0, 1e-12);
    let max_resid = series
        .dissip_residual
        .iter()
        .skip(1)
        .map(|r| r.abs())
        .fold(0.0f64, f64::max);
    let tol_dissip = 1e-4 * series.h0_norm_sq;
    summary.check(
        "dissipation_residual",
        max_resid <= tol_dissip,
        max_resid,
        tol_dissip,
        0.0,
    );

    let (_, hs) = series.h_tau();
    if hs.is_empty() {
        return Err(ScenarioError::Refused("t_end too short for the window".into()));
    }
    let h0_tau = hs[0];
    match route {
        CertRoute::Exponential(cert) => {
            std::fs::write(dir.join("certificate.txt"), cert.report())?;
            let lb = cert.lambda_bar.value;
            let bound = move |t: f64| h0_tau * (-2.0 * lb * t).exp();
            let h0n = series.h0_norm_sq;
            let tau = series.tau;
            let pointwise = move |t: f64| h0n * (lb * tau).exp() * (-lb * t).exp();
            let report = hypocert::vfp::check_decay_bound(series, &bound, &pointwise, cfg.slack);
            summary.check(
                "H_tau_exponential_bound",
                report.ok,
                report.max_ratio,
                1.0,
                cfg.slack,
            );
            summary.check(
                "pointwise_exponential_bound",
                report.pointwise_ok,
                report.pointwise_max_ratio,
                1.0,
                cfg.slack,
            );
            let fit_hi = (cfg.t_end - cfg.tau) * 0.8;
            match series.fitted_h_tau_rate(0.2, fit_hi) {
                Some(rate) => {
                    summary.check("fitted_rate_exceeds_2_lambda_bar", rate >= 2.0 * lb, rate, 2.0 * lb, 0.0);
                }
                None => summary.check("fitted_rate_exceeds_2_lambda_bar", false, f64::NAN, 2.0 * lb, 0.0),
            }
            std::fs::write(dir.join("series.csv"), series.write_csv(Some(&bound), cfg.slack))?;
        }
        CertRoute::Algebraic {
            lambda_p,
            sigma,
            p_psi,
            g_sigma_l1,
            report,
        } => {
            std::fs::write(dir.join("certificate.txt"), report)?;
            let h0_sup = series.h0_sup;
            let m0 = m0_constant(cfg.tau, lambda_p, p_psi, g_sigma_l1, h0_sup, sigma);
            let y0 = y0_root(m0, cfg.xi, lambda_p, h0_tau, sigma);
            let env = algebraic_envelope(
                h0_tau, cfg.xi, sigma, m0, y0, lambda_p, p_psi, g_sigma_l1, h0_sup,
            );
            let bound = {
                let env = env.clone();
                move |t: f64| env.eval(t)
            };
            let h0n = series.h0_norm_sq;
            let tau = series.tau;
            let pw_env = env.clone();
            let pointwise = move |t: f64| pw_env.pointwise_bound(h0n, t, tau);
            let rep = hypocert::vfp::check_decay_bound(series, &bound, &pointwise, cfg.slack);
            summary.check("H_tau_algebraic_envelope", rep.ok, rep.max_ratio, 1.0, cfg.slack);
            summary.check(
                "pointwise_algebraic_bound",
                rep.pointwise_ok,
                rep.pointwise_max_ratio,
                1.0,
                cfg.slack,
            );
            // envelope tail exponent: log-log slope in the asymptotic regime
            let bp = env.rate_base().powf((sigma + 1.0) / sigma);
            let (t1, t2) = (1e2 * bp, 1e4 * bp);
            let slope = (env.eval(t2).ln() - env.eval(t1).ln()) / (t2.ln() - t1.ln());
            summary.check(
                "envelope_tail_slope",
                (slope + sigma).abs() <= 0.05,
                slope,
                -sigma,
                0.05,
            );
            let mut extra = String::new();
            extra.push_str(&format!("# provenance: H_tau(0) from simulation\nH_tau_0 = {h0_tau:.17e}\n"));
            extra.push_str(&format!(
                "# provenance: grid max of the mean-zero initial data\nh0_sup = {h0_sup:.17e}\n"
            ));
            extra.push_str(&format!("# provenance: formula\nM0 = {m0:.17e}\n"));
            extra.push_str(&format!("# provenance: monotone root-finding\ny0 = {y0:.17e}\n"));
            extra.push_str(&format!("# provenance: formula\nc1 = {:.17e}\n", env.c1));
            extra.push_str(&format!("# provenance: formula\nc2 = {:.17e}\n", env.c2));
            std::fs::write(dir.join("envelope.txt"), extra)?;
            std::fs::write(dir.join("series.csv"), series.write_csv(Some(&bound), cfg.slack))?;
        }
    }
    Ok(())
}

fn sde_observable(cfg: &ScenarioConfig) -> Observable {
    match cfg.sde_observable.as_str() {
        "v2" => Observable::SecondMomentV,
        "energy" => Observable::Energy,
        _ => Observable::SecondMomentX,
    }
}

fn simulate_sde(
    cfg: &ScenarioConfig,
    dir: &Path,
    summary: &mut Summary,
) -> Result<(), ScenarioError> {
    let spec = cfg.build_spec()?;
    let sde_cfg = SdeConfig {
        xi: cfg.xi,
        dt: cfg.sde_dt,
        n_steps: cfg.sde_n_steps,
        n_paths: cfg.sde_n_paths,
        seed: cfg.seed,
        observable: sde_observable(cfg),
        init: SdeInit::ShiftedGaussian { mean_x: 1.0 },
        sample_every: cfg.sde_sample_every,
    };
    let series = integrate_ensemble(&spec, &sde_cfg)?;
    std::fs::write(dir.join("sde.csv"), series.write_csv())?;
    let (rate, lo, hi) = empirical_decay(&series, None, 0.0, cfg.seed)?;
    summary.check("empirical_decay_rate_positive", lo > 0.0, lo, 0.0, 0.0);
    summary.note(format!("fitted rate {rate:.6e}, CI [{lo:.6e}, {hi:.6e}]"));
    Ok(())
}

fn lions_check(
    cfg: &ScenarioConfig,
    dir: &Path,
    summary: &mut Summary,
) -> Result<(), ScenarioError> {
    let spec = cfg.build_spec()?;
    let model = certify_model(&spec, opts(cfg))?;
    let lc = lions_constant(
        model.c_phi.value,
        model.c_phi_prime.value,
        model.c_phi_second.value,
        spec.dim,
        cfg.tau,
    )?;
    let c_div = lc.c_tau_div_sq.sqrt();
    let x_grid = match spec.x_domain {
        XDomain::Torus { period } => Grid1d::torus(period, cfg.spectral_n),
        XDomain::Line { radius } => Grid1d::line(radius, cfg.spectral_n),
    };
    let op = {
        let p = spec.phi_axis.clone();
        let shift = spec.phi_shift_axis;
        SpectralOperator::new(x_grid, move |x| (-(p.eval(x) + shift)).exp())
    };
    let mut csv = String::from("sample_id,f_norm,residual,z_h1,boundary_trace,c_div_bound,ok\n");
    let mut all_ok = true;
    let mut worst_residual: f64 = 0.0;
    let mut worst_trace: f64 = 0.0;
    let mut worst_h1_ratio: f64 = 0.0;
    for sample in 0..cfg.lions_n_sources {
        let f = random_source(&op, cfg.tau, cfg.m_time, cfg.seed.wrapping_add(sample as u64));
        let problem = DivergenceProblem::new(&op, cfg.tau, cfg.m_time, f);
        let sol = solve_divergence(&problem)?;
        let d = sol.diagnostics;
        csv.push_str(&d.csv_row(sample, c_div));
        csv.push('\n');
        let ok = d.residual <= 1e-6 * d.f_norm
            && d.boundary_trace <= 1e-8
            && d.h1_norm <= c_div * d.f_norm;
        all_ok &= ok;
        worst_residual = worst_residual.max(d.residual / d.f_norm.max(1e-300));
        worst_trace = worst_trace.max(d.boundary_trace);
        worst_h1_ratio = worst_h1_ratio.max(d.h1_norm / (c_div * d.f_norm.max(1e-300)));
    }
    std::fs::write(dir.join("lions.csv"), csv)?;
    summary.check("divergence_residual", worst_residual <= 1e-6, worst_residual, 1e-6, 0.0);
    summary.check("boundary_traces", worst_trace <= 1e-8, worst_trace, 1e-8, 0.0);
    summary.check("h1_domination", worst_h1_ratio <= 1.0, worst_h1_ratio, 1.0, 0.0);
    summary.check("all_samples", all_ok, f64::from(u8::from(all_ok)), 1.0, 0.0);
    let emp = empirical_lions_constant(&op, cfg.tau, cfg.m_time.min(96), cfg.lions_n_random, cfg.seed);
    summary.check("empirical_below_certified", emp <= lc.c_tau_lions, emp, lc.c_tau_lions, 0.0);
    Ok(())
}

fn sweep_friction_scenario(
    cfg: &ScenarioConfig,
    dir: &Path,
    summary: &mut Summary,
) -> Result<(), ScenarioError> {
    let spec = cfg.build_spec()?;
    let cert = certify_exponential(&spec, 1.0, cfg.tau, opts(cfg))?;
    let lambda_p = cert.lambda_p.value;
    let c_psi = cert.c_psi.value;
    let base = SdeConfig {
        xi: 1.0,
        dt: cfg.sde_dt,
        n_steps: cfg.sde_n_steps,
        n_paths: cfg.sde_n_paths,
        seed: cfg.seed,
        observable: sde_observable(cfg),
        init: SdeInit::ShiftedGaussian { mean_x: 1.0 },
        sample_every: cfg.sde_sample_every,
    };
    let mut xi_list = cfg.xi_list.clone();
    xi_list.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rows = friction_sweep(&spec, &base, &xi_list, lambda_p, c_psi)?;
    std::fs::write(dir.join("sweep.csv"), sweep_csv(&rows))?;
    let (inc_small, dec_large) = sweep_trend(&rows);
    summary.check(
        "rate_increasing_at_small_friction",
        inc_small,
        rows[0].rate,
        rows[1].rate,
        0.0,
    );
    summary.check(
        "rate_decreasing_at_large_friction",
        dec_large,
        rows[rows.len() - 1].rate,
        rows[rows.len() - 2].rate,
        0.0,
    );
    // certified column: unimodal with maximum at xi* = c_psi^{-1/2}
    let xi_star = optimal_friction(c_psi);
    let lb = |xi: f64| exponential_rate(cert.c_tau_lions.value, cert.k_avg.value, c_psi, xi).1;
    let lb_star = lb(xi_star);
    let unimodal = rows.iter().all(|r| r.lambda_bar <= lb_star * (1.0 + 1e-12));
    summary.check("certified_unimodal_max_at_xi_star", unimodal, lb_star, lb_star, 0.0);
    let dominated = rows.iter().all(|r| r.rate >= r.lambda_bar);
    summary.check(
        "empirical_rate_dominates_certificate",
        dominated,
        f64::from(u8::from(dominated)),
        1.0,
        0.0,
    );
    Ok(())
}
