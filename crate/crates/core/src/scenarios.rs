//! Benchmark presets for the notched square under shear and tension.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::material::MaterialParams;
use crate::mesh::{COARSE_CELLS, DOMAIN_SIZE};
use crate::newton::NewtonConfig;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: expected 'key = value'")]
    Syntax { line: usize },
    #[error("line {line}: bad value for '{key}': {value}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Shear,
    Tension,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Shear => "shear",
            Scenario::Tension => "tension",
        }
    }
}

impl FromStr for Scenario {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "shear" => Ok(Scenario::Shear),
            "tension" => Ok(Scenario::Tension),
            other => Err(ConfigError::UnknownScenario(other.to_string())),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Side length of a cell after `p` uniform refinements of the coarse mesh.
pub fn cell_side(p: u32) -> f64 {
    DOMAIN_SIZE / (COARSE_CELLS as f64 * (1u64 << p) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub lambda: f64,
    pub mu: f64,
    pub g_c: f64,
    pub kappa: f64,
    pub dt: f64,
    pub t_end: f64,
    pub pre_refinements: u32,
    /// Realized cell side after pre-refinement (mm).
    pub h_start: f64,
    pub eps_factor: f64,
    /// Explicit ε; otherwise `eps_factor · h_start`.
    pub epsilon: Option<f64>,
    /// Explicit exclusion strip; otherwise `4 · h_start`.
    pub strip: Option<f64>,
    pub theta: f64,
    pub cycles: u32,
    pub uniform_levels: Option<u32>,
    pub tol_eta: Option<f64>,
    pub tol_transfer: Option<f64>,
    pub eta3_full_gradient: bool,
    pub newton: NewtonConfig,
}

impl ScenarioConfig {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let scenario: Scenario = name.parse()?;
        let (dt, t_end, p) = match scenario {
            Scenario::Shear => (1e-4, 0.0125, 5),
            Scenario::Tension => (1e-5, 0.00676, 6),
        };
        Ok(ScenarioConfig {
            scenario,
            lambda: 1.2115e5,
            mu: 8.077e4,
            g_c: 2.7,
            kappa: 1e-10,
            dt,
            t_end,
            pre_refinements: p,
            h_start: cell_side(p),
            eps_factor: 2.0,
            epsilon: None,
            strip: None,
            theta: 0.5,
            cycles: 1,
            uniform_levels: None,
            tol_eta: None,
            tol_transfer: None,
            eta3_full_gradient: false,
            newton: NewtonConfig::default(),
        })
    }

    pub fn set_pre_refinements(&mut self, p: u32) {
        self.pre_refinements = p;
        self.h_start = cell_side(p);
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(self.eps_factor * self.h_start)
    }

    pub fn strip(&self) -> f64 {
        self.strip.unwrap_or(4.0 * self.h_start)
    }

    /// Complementarity constant `c = G_c / ε`.
    pub fn complementarity_c(&self) -> f64 {
        self.g_c / self.epsilon()
    }

    pub fn material(&self) -> MaterialParams {
        MaterialParams {
            mu: self.mu,
            lambda: self.lambda,
            g_c: self.g_c,
            kappa: self.kappa,
            epsilon: self.epsilon(),
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// `t_0 = 0, …, t_N = t_end`.
    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps()).map(|n| n as f64 * self.dt).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.material().validate().map_err(ConfigError::Invalid)?;
        if !(self.dt > 0.0 && self.t_end > 0.0) {
            return Err(ConfigError::Invalid("dt and t_end must be positive".into()));
        }
        let n = self.n_steps();
        if n == 0 || (n as f64 * self.dt - self.t_end).abs() > 1e-12 {
            return Err(ConfigError::Invalid(format!(
                "dt = {} does not divide t_end = {}",
                self.dt, self.t_end
            )));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "theta = {} outside (0,1]",
                self.theta
            )));
        }
        if self.cycles == 0 {
            return Err(ConfigError::Invalid("cycles must be at least 1".into()));
        }
        self.newton.validate().map_err(ConfigError::Invalid)
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_overrides(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: line_no })?;
            self.set(key.trim(), value.trim(), line_no)?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
        };
        let f = || value.parse::<f64>().map_err(|_| bad());
        let u = || value.parse::<u32>().map_err(|_| bad());
        let opt_f = || -> Result<Option<f64>, ConfigError> {
            if value == "none" {
                Ok(None)
            } else {
                f().map(Some)
            }
        };
        match key {
            "scenario" => self.scenario = value.parse()?,
            "lambda" => self.lambda = f()?,
            "mu" => self.mu = f()?,
            "g_c" => self.g_c = f()?,
            "kappa" => self.kappa = f()?,
            "dt" => self.dt = f()?,
            "t_end" => self.t_end = f()?,
            "pre_refinements" => self.set_pre_refinements(u()?),
            "h_start" => self.h_start = f()?,
            "eps_factor" => self.eps_factor = f()?,
            "epsilon" => self.epsilon = opt_f()?,
            "strip" => self.strip = opt_f()?,
            "theta" => self.theta = f()?,
            "cycles" => self.cycles = u()?,
            "uniform_levels" => {
                self.uniform_levels = if value == "none" { None } else { Some(u()?) }
            }
            "tol_eta" => self.tol_eta = opt_f()?,
            "tol_transfer" => self.tol_transfer = opt_f()?,
            "eta3_full_gradient" => self.eta3_full_gradient = value.parse().map_err(|_| bad())?,
            "newton_rho" => self.newton.rho = f()?,
            "newton_l_max" => self.newton.l_max = u()?,
            "newton_tol_abs" => self.newton.tol_abs = f()?,
            "newton_tol_rel" => self.newton.tol_rel = f()?,
            "newton_max_iters" => self.newton.max_iters = u()? as usize,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// All fields as `key = value` lines, readable by [`apply_overrides`](Self::apply_overrides).
    pub fn to_config_string(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:e}"));
        let mut s = String::new();
        let _ = writeln!(s, "scenario = {}", self.scenario);
        let _ = writeln!(s, "lambda = {:e}", self.lambda);
        let _ = writeln!(s, "mu = {:e}", self.mu);
        let _ = writeln!(s, "g_c = {:e}", self.g_c);
        let _ = writeln!(s, "kappa = {:e}", self.kappa);
        let _ = writeln!(s, "dt = {:e}", self.dt);
        let _ = writeln!(s, "t_end = {:e}", self.t_end);
        let _ = writeln!(s, "pre_refinements = {}", self.pre_refinements);
        let _ = writeln!(s, "h_start = {:e}", self.h_start);
        let _ = writeln!(s, "eps_factor = {:e}", self.eps_factor);
        let _ = writeln!(s, "epsilon = {}", opt(self.epsilon));
        let _ = writeln!(s, "strip = {}", opt(self.strip));
        let _ = writeln!(s, "theta = {:e}", self.theta);
        let _ = writeln!(s, "cycles = {}", self.cycles);
        let _ = writeln!(
            s,
            "uniform_levels = {}",
            self.uniform_levels
                .map_or("none".to_string(), |l| l.to_string())
        );
        let _ = writeln!(s, "tol_eta = {}", opt(self.tol_eta));
        let _ = writeln!(s, "tol_transfer = {}", opt(self.tol_transfer));
        let _ = writeln!(s, "eta3_full_gradient = {}", self.eta3_full_gradient);
        let _ = writeln!(s, "newton_rho = {:e}", self.newton.rho);
        let _ = writeln!(s, "newton_l_max = {}", self.newton.l_max);
        let _ = writeln!(s, "newton_tol_abs = {:e}", self.newton.tol_abs);
        let _ = writeln!(s, "newton_tol_rel = {:e}", self.newton.tol_rel);
        let _ = writeln!(s, "newton_max_iters = {}", self.newton.max_iters);
        s
    }
}
