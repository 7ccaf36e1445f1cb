//! Flat INI-style configuration: `section.key = value` lines, `#` comments,
//! no nesting. Unknown keys are rejected; duplicates are parse errors.

use hypocert::model::{
    DeclaredConstants, HamiltonianSpec, Kinetic, ModelError, Profile1d, RadialKind, Table1d,
    XDomain,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("validation error for key `{key}`: {msg}")]
    Validation { key: String, msg: String },
    #[error("config file {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn validation(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        key: key.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Certify,
    SimulatePde,
    SimulateSde,
    LionsCheck,
    SweepFriction,
}

impl Command {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "certify" => Some(Command::Certify),
            "simulate-pde" => Some(Command::SimulatePde),
            "simulate-sde" => Some(Command::SimulateSde),
            "lions-check" => Some(Command::LionsCheck),
            "sweep-friction" => Some(Command::SweepFriction),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Certify => "certify",
            Command::SimulatePde => "simulate-pde",
            Command::SimulateSde => "simulate-sde",
            Command::LionsCheck => "lions-check",
            Command::SweepFriction => "sweep-friction",
        }
    }
}

/// Initial phase-space data of a PDE run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialData {
    /// cos(2 pi x / L) exp(-v^2 / 2): bounded, mean-free in x.
    CosineProduct,
    /// exp(delta x - delta^2 / 2) - 1: Gaussian position shift by delta.
    GaussianShift { delta: f64 },
}

/// Validated scenario configuration with every default filled in.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    // spec block
    pub kinetic: String,
    pub alpha: f64,
    pub beta: f64,
    pub potential: String,
    pub amplitude: f64,
    pub period: f64,
    pub barrier: f64,
    pub half_width: f64,
    pub dimension: usize,
    pub r_x: f64,
    pub r_v: f64,
    pub potential_file: Option<PathBuf>,
    pub kinetic_file: Option<PathBuf>,
    pub declared: DeclaredConstants,
    // numerics block
    pub nx: usize,
    pub nv: usize,
    pub spectral_n: usize,
    pub m_time: usize,
    pub dt: f64,
    pub quad_tol: f64,
    pub slack: f64,
    pub snapshot_every: usize,
    // run block
    pub xi: f64,
    pub tau: f64,
    pub sigma: f64,
    pub t_end: f64,
    pub seed: u64,
    pub h0: InitialData,
    // sde block
    pub sde_n_paths: usize,
    pub sde_dt: f64,
    pub sde_n_steps: usize,
    pub sde_sample_every: usize,
    pub sde_observable: String,
    // sweep / lions blocks
    pub xi_list: Vec<f64>,
    pub lions_n_sources: usize,
    pub lions_n_random: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kinetic: "gaussian".into(),
            alpha: 0.5,
            beta: 8.0,
            potential: "cosine".into(),
            amplitude: 1.0,
            period: 1.0,
            barrier: 1.0,
            half_width: 1.0,
            dimension: 1,
            r_x: 0.0,
            r_v: 0.0,
            potential_file: None,
            kinetic_file: None,
            declared: DeclaredConstants::default(),
            nx: 128,
            nv: 128,
            spectral_n: 512,
            m_time: 256,
            dt: 0.0,
            quad_tol: 1e-8,
            slack: 0.05,
            snapshot_every: 0,
            xi: 1.0,
            tau: 1.0,
            sigma: 0.0,
            t_end: 20.0,
            seed: 0,
            h0: InitialData::CosineProduct,
            sde_n_paths: 10_000,
            sde_dt: 1e-3,
            sde_n_steps: 4000,
            sde_sample_every: 10,
            sde_observable: "x2".into(),
            xi_list: vec![0.1, 0.3, 1.0, 3.0, 10.0],
            lions_n_sources: 20,
            lions_n_random: 100,
        }
    }
}

/// Raw `section.key = value` pairs of a config text, with duplicate detection.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find(['#', ';']) {
            Some(p) => &raw[..p],
            None => raw,
        };
        if line.trim().is_empty() {
            continue;
        }
        let eq = line.find('=').ok_or(ConfigError::Parse {
            line: line_no,
            col: line.len(),
            msg: "expected `section.key = value`".into(),
        })?;
        let key = line[..eq].trim().to_string();
        let value = line[eq + 1..].trim().to_string();
        if key.is_empty() || !key.contains('.') {
            return Err(ConfigError::Parse {
                line: line_no,
                col: 1,
                msg: format!("key `{key}` must be of the form section.key"),
            });
        }
        if map.contains_key(&key) {
            return Err(ConfigError::Parse {
                line: line_no,
                col: raw.find(&key).unwrap_or(0) + 1,
                msg: format!("duplicate key `{key}`"),
            });
        }
        map.insert(key, value);
    }
    Ok(map)
}

fn take_f64(map: &mut BTreeMap<String, String>, key: &str, into: &mut f64) -> Result<(), ConfigError> {
    if let Some(v) = map.remove(key) {
        *into = v
            .parse()
            .map_err(|_| validation(key, format!("`{v}` is not a number")))?;
    }
    Ok(())
}

fn take_usize(
    map: &mut BTreeMap<String, String>,
    key: &str,
    into: &mut usize,
) -> Result<(), ConfigError> {
    if let Some(v) = map.remove(key) {
        *into = v
            .parse()
            .map_err(|_| validation(key, format!("`{v}` is not a positive integer")))?;
    }
    Ok(())
}

fn take_opt_f64(
    map: &mut BTreeMap<String, String>,
    key: &str,
    into: &mut Option<f64>,
) -> Result<(), ConfigError> {
    if let Some(v) = map.remove(key) {
        *into = Some(
            v.parse()
                .map_err(|_| validation(key, format!("`{v}` is not a number")))?,
        );
    }
    Ok(())
}

/// Parses and validates the config text; defaults fill every absent key.
pub fn parse_config_text(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut map = parse_pairs(text)?;
    let mut cfg = ScenarioConfig::default();

    if let Some(v) = map.remove("spec.kinetic") {
        cfg.kinetic = v;
    }
    take_f64(&mut map, "spec.alpha", &mut cfg.alpha)?;
    take_f64(&mut map, "spec.beta", &mut cfg.beta)?;
    if let Some(v) = map.remove("spec.potential") {
        cfg.potential = v;
    }
    take_f64(&mut map, "spec.amplitude", &mut cfg.amplitude)?;
    take_f64(&mut map, "spec.period", &mut cfg.period)?;
    take_f64(&mut map, "spec.barrier", &mut cfg.barrier)?;
    take_f64(&mut map, "spec.half_width", &mut cfg.half_width)?;
    take_usize(&mut map, "spec.dimension", &mut cfg.dimension)?;
    take_f64(&mut map, "spec.r_x", &mut cfg.r_x)?;
    take_f64(&mut map, "spec.r_v", &mut cfg.r_v)?;
    if let Some(v) = map.remove("spec.potential_file") {
        cfg.potential_file = Some(PathBuf::from(v));
    }
    if let Some(v) = map.remove("spec.kinetic_file") {
        cfg.kinetic_file = Some(PathBuf::from(v));
    }
    take_opt_f64(&mut map, "spec.c_phi", &mut cfg.declared.c_phi)?;
    take_opt_f64(&mut map, "spec.c_phi_prime", &mut cfg.declared.c_phi_prime)?;
    take_opt_f64(&mut map, "spec.c_phi_second", &mut cfg.declared.c_phi_second)?;
    take_opt_f64(&mut map, "spec.c_psi", &mut cfg.declared.c_psi)?;

    take_usize(&mut map, "numerics.nx", &mut cfg.nx)?;
    take_usize(&mut map, "numerics.nv", &mut cfg.nv)?;
    take_usize(&mut map, "numerics.spectral_n", &mut cfg.spectral_n)?;
    take_usize(&mut map, "numerics.m_time", &mut cfg.m_time)?;
    take_f64(&mut map, "numerics.dt", &mut cfg.dt)?;
    take_f64(&mut map, "numerics.quad_tol", &mut cfg.quad_tol)?;
    take_f64(&mut map, "numerics.slack", &mut cfg.slack)?;
    take_usize(&mut map, "numerics.snapshot_every", &mut cfg.snapshot_every)?;

    take_f64(&mut map, "run.xi", &mut cfg.xi)?;
    take_f64(&mut map, "run.tau", &mut cfg.tau)?;
    take_f64(&mut map, "run.sigma", &mut cfg.sigma)?;
    take_f64(&mut map, "run.t_end", &mut cfg.t_end)?;
    if let Some(v) = map.remove("run.seed") {
        cfg.seed = v
            .parse()
            .map_err(|_| validation("run.seed", format!("`{v}` is not a u64")))?;
    }
    if let Some(v) = map.remove("run.h0") {
        cfg.h0 = match v.as_str() {
            "cosine" => InitialData::CosineProduct,
            "gaussian-shift" => InitialData::GaussianShift { delta: 0.5 },
            other => return Err(validation("run.h0", format!("unknown initial data `{other}`"))),
        };
    }
    let mut delta = match cfg.h0 {
        InitialData::GaussianShift { delta } => delta,
        _ => 0.5,
    };
    take_f64(&mut map, "run.h0_delta", &mut delta)?;
    if let InitialData::GaussianShift { .. } = cfg.h0 {
        cfg.h0 = InitialData::GaussianShift { delta };
    }

    take_usize(&mut map, "sde.n_paths", &mut cfg.sde_n_paths)?;
    take_f64(&mut map, "sde.dt", &mut cfg.sde_dt)?;
    take_usize(&mut map, "sde.n_steps", &mut cfg.sde_n_steps)?;
    take_usize(&mut map, "sde.sample_every", &mut cfg.sde_sample_every)?;
    if let Some(v) = map.remove("sde.observable") {
        cfg.sde_observable = v;
    }
    if let Some(v) = map.remove("sweep.xi_list") {
        let mut list = Vec::new();
        for part in v.split(',') {
            list.push(
                part.trim()
                    .parse()
                    .map_err(|_| validation("sweep.xi_list", format!("`{part}` is not a number")))?,
            );
        }
        cfg.xi_list = list;
    }
    take_usize(&mut map, "lions.n_sources", &mut cfg.lions_n_sources)?;
    take_usize(&mut map, "lions.n_random", &mut cfg.lions_n_random)?;

    if let Some((key, _)) = map.into_iter().next() {
        return Err(validation(&key, "unknown key"));
    }
    validate(&cfg)?;
    Ok(cfg)
}

pub fn parse_config_file(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
    parse_config_text(&text)
}

fn validate(cfg: &ScenarioConfig) -> Result<(), ConfigError> {
    match cfg.kinetic.as_str() {
        "gaussian" | "quadratic" | "subexp" | "heavytail" | "tabulated" => {}
        other => {
            return Err(validation(
                "spec.kinetic",
                format!("unknown kinetic family `{other}`"),
            ))
        }
    }
    match cfg.potential.as_str() {
        "quadratic" | "cosine" | "uniform" | "double-well" | "tabulated" => {}
        other => {
            return Err(validation(
                "spec.potential",
                format!("unknown potential family `{other}`"),
            ))
        }
    }
    if cfg.dimension == 0 {
        return Err(validation("spec.dimension", "must be at least 1"));
    }
    if cfg.kinetic == "subexp" && !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(validation(
            "spec.alpha",
            format!("subexp exponent {} must lie in (0, 1)", cfg.alpha),
        ));
    }
    if cfg.kinetic == "heavytail" && cfg.beta <= (cfg.dimension + 4) as f64 {
        return Err(validation(
            "spec.beta",
            format!(
                "heavytail exponent {} must exceed d + 4 = {}",
                cfg.beta,
                cfg.dimension + 4
            ),
        ));
    }
    if cfg.xi <= 0.0 {
        return Err(validation("run.xi", "friction must be positive"));
    }
    if cfg.tau <= 0.0 {
        return Err(validation("run.tau", "time-average window must be positive"));
    }
    if cfg.sigma < 0.0 {
        return Err(validation("run.sigma", "sigma must be nonnegative"));
    }
    if cfg.t_end <= cfg.tau {
        return Err(validation("run.t_end", "must exceed run.tau"));
    }
    if cfg.nx < 8 || cfg.nv < 8 {
        return Err(validation("numerics.nx", "grids need at least 8 cells"));
    }
    if cfg.m_time < 8 {
        return Err(validation("numerics.m_time", "need at least 8 time nodes"));
    }
    if cfg.quad_tol.is_nan() || cfg.quad_tol <= 0.0 {
        return Err(validation("numerics.quad_tol", "must be positive"));
    }
    if cfg.sde_n_paths == 0 {
        return Err(validation("sde.n_paths", "need at least one path"));
    }
    if cfg.sde_dt.is_nan() || cfg.sde_dt <= 0.0 {
        return Err(validation("sde.dt", "must be positive"));
    }
    match cfg.sde_observable.as_str() {
        "x2" | "v2" | "energy" => {}
        other => {
            return Err(validation(
                "sde.observable",
                format!("unknown observable `{other}`"),
            ))
        }
    }
    if cfg.xi_list.len() < 2 {
        return Err(validation("sweep.xi_list", "need at least two frictions"));
    }
    if cfg.xi_list.iter().any(|x| *x <= 0.0) {
        return Err(validation("sweep.xi_list", "frictions must be positive"));
    }
    Ok(())
}

impl ScenarioConfig {
    /// Builds the normalized Hamiltonian specification.
    pub fn build_spec(&self) -> Result<HamiltonianSpec, ConfigError> {
        let phi_axis = match self.potential.as_str() {
            "quadratic" => Profile1d::Gaussian,
            "cosine" => Profile1d::Cosine {
                amplitude: self.amplitude,
                period: self.period,
            },
            "uniform" => Profile1d::Zero,
            "double-well" => Profile1d::DoubleWell {
                barrier: self.barrier,
                half_width: self.half_width,
            },
            "tabulated" => {
                let path = self.potential_file.as_ref().ok_or_else(|| {
                    validation("spec.potential_file", "required for a tabulated potential")
                })?;
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ConfigError::Io(path.clone(), e))?;
                Profile1d::Tabulated(Table1d::parse(&text)?)
            }
            _ => unreachable!("validated"),
        };
        let x_domain = match self.potential.as_str() {
            "cosine" | "uniform" => XDomain::Torus {
                period: self.period,
            },
            _ => XDomain::Line { radius: self.r_x },
        };
        let kinetic = match self.kinetic.as_str() {
            "gaussian" | "quadratic" => Kinetic::Separable(Profile1d::Gaussian),
            "subexp" => Kinetic::Radial(RadialKind::SubExp { alpha: self.alpha }),
            "heavytail" => Kinetic::Radial(RadialKind::HeavyTail { beta: self.beta }),
            "tabulated" => {
                let path = self.kinetic_file.as_ref().ok_or_else(|| {
                    validation("spec.kinetic_file", "required for a tabulated kinetic energy")
                })?;
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ConfigError::Io(path.clone(), e))?;
                Kinetic::Separable(Profile1d::Tabulated(Table1d::parse(&text)?))
            }
            _ => unreachable!("validated"),
        };
        let mut spec = HamiltonianSpec::new(self.dimension, x_domain, phi_axis, kinetic)?;
        spec.quad_tol = self.quad_tol;
        if self.r_v > 0.0 {
            spec.r_v = self.r_v;
        }
        spec.declared = self.declared;
        Ok(hypocert::model::normalize_gibbs(&spec)?)
    }

    /// Deterministic echo of the effective configuration.
    pub fn effective_ini(&self, command: Command) -> String {
        let mut s = String::new();
        s.push_str(&format!("# effective configuration for `{}`\n", command.name()));
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        put("spec.kinetic", self.kinetic.clone());
        put("spec.alpha", format!("{}", self.alpha));
        put("spec.beta", format!("{}", self.beta));
        put("spec.potential", self.potential.clone());
        put("spec.amplitude", format!("{}", self.amplitude));
        put("spec.period", format!("{}", self.period));
        put("spec.dimension", format!("{}", self.dimension));
        put("spec.r_x", format!("{}", self.r_x));
        put("spec.r_v", format!("{}", self.r_v));
        put("numerics.nx", format!("{}", self.nx));
        put("numerics.nv", format!("{}", self.nv));
        put("numerics.spectral_n", format!("{}", self.spectral_n));
        put("numerics.m_time", format!("{}", self.m_time));
        put("numerics.dt", format!("{}", self.dt));
        put("numerics.quad_tol", format!("{:e}", self.quad_tol));
        put("numerics.slack", format!("{}", self.slack));
        put("numerics.snapshot_every", format!("{}", self.snapshot_every));
        put("run.xi", format!("{}", self.xi));
        put("run.tau", format!("{}", self.tau));
        put("run.sigma", format!("{}", self.sigma));
        put("run.t_end", format!("{}", self.t_end));
        put("run.seed", format!("{}", self.seed));
        put(
            "run.h0",
            match self.h0 {
                InitialData::CosineProduct => "cosine".into(),
                InitialData::GaussianShift { delta } => format!("gaussian-shift (delta = {delta})"),
            },
        );
        put("sde.n_paths", format!("{}", self.sde_n_paths));
        put("sde.dt", format!("{}", self.sde_dt));
        put("sde.n_steps", format!("{}", self.sde_n_steps));
        put("sde.sample_every", format!("{}", self.sde_sample_every));
        put("sde.observable", self.sde_observable.clone());
        put(
            "sweep.xi_list",
            self.xi_list
                .iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        put("lions.n_sources", format!("{}", self.lions_n_sources));
        put("lions.n_random", format!("{}", self.lions_n_random));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config_text("spec.kinetic = gaussian\n").unwrap();
        assert_eq!(cfg.dimension, 1);
        assert_eq!(cfg.xi, 1.0);
        assert_eq!(cfg.tau, 1.0);
        assert_eq!(cfg.nx, 128);
    }

    #[test]
    fn heavytail_beta_below_threshold_rejected() {
        let err = parse_config_text("spec.kinetic = heavytail\nspec.beta = 5\n").unwrap_err();
        match err {
            ConfigError::Validation { key, .. } => assert_eq!(key, "spec.beta"),
            other => panic!("wrong error {other}"),
        }
    }

    #[test]
    fn duplicate_key_is_parse_error() {
        let err = parse_config_text("run.xi = 1\nrun.xi = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 2, .. }));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config_text("spec.kinetic = gaussian\nrun.bogus = 3\n").unwrap_err();
        match err {
            ConfigError::Validation { key, .. } => assert_eq!(key, "run.bogus"),
            other => panic!("wrong error {other}"),
        }
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = parse_config_text(
            "# comment\n\nspec.kinetic = gaussian ; trailing\nrun.xi = 2.5\n",
        )
        .unwrap();
        assert_eq!(cfg.xi, 2.5);
    }

    #[test]
    fn spec_builds_for_defaults() {
        let cfg = parse_config_text("spec.kinetic = gaussian\n").unwrap();
        let spec = cfg.build_spec().unwrap();
        assert!(spec.normalized);
        assert!(spec.x_domain.is_torus());
    }

    #[test]
    fn effective_echo_is_deterministic() {
        let cfg = parse_config_text("spec.kinetic = gaussian\n").unwrap();
        assert_eq!(
            cfg.effective_ini(Command::Certify),
            cfg.effective_ini(Command::Certify)
        );
    }
}
