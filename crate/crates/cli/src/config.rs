//! Flat `key = value` experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sobolev_lab::energy::{BuiltinPhi, OrliczFunction, Phi};
use sobolev_lab::CantorSystem;

/// Generations beyond this make the Lg-preimages of the squeeze supports
/// smaller than f64 resolution around 1.
pub const K_MAX: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Widths {
    /// d_k = min(r̂_k, 8^{-k})/4 under the lane cap
    Seeded,
    /// halved until the squeeze energy meets δ_k or stalls
    Tuned,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub beta: u32,
    pub p: f64,
    #[serde(rename = "K")]
    pub k: usize,
    /// builtin name or a path to a knot file written by `orlicz`
    pub phi: String,
    /// perimeter weight in E_c
    pub a: f64,
    pub out: PathBuf,
    pub seed: u64,
    pub widths: Widths,
    /// random points per map in `maps`
    pub samples: usize,
    /// cells per axis in each straight tentacle box for the Lusin images
    pub lusin_resolution: usize,
    /// cells per axis for the perimeter demo
    pub perimeter_cells: usize,
    /// cells per axis on [−1,1]² for the cavity demo, 1/h = cells/2
    pub cavity_cells: usize,
    pub max_super: usize,
    pub rel_tol: f64,
    pub max_boxes: usize,
    /// random grid sets per map in the moduli sandwich
    pub sandwich_sets: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 2,
            beta: 3,
            p: 1.5,
            k: 4,
            phi: "t+1/t".into(),
            a: 1.0,
            out: PathBuf::from("out"),
            seed: 1,
            widths: Widths::Seeded,
            samples: 20_000,
            lusin_resolution: 2,
            perimeter_cells: 512,
            cavity_cells: 1024,
            max_super: 64,
            rel_tol: 1e-2,
            max_boxes: 20_000,
            sandwich_sets: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| bad(format!("{key}: cannot parse {value:?}")))
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "n" => self.n = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "p" => self.p = num(key, value)?,
            "K" | "k" => self.k = num(key, value)?,
            "phi" => self.phi = value.to_string(),
            "a" => self.a = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = num(key, value)?,
            "widths" => {
                self.widths = match value {
                    "seeded" => Widths::Seeded,
                    "tuned" => Widths::Tuned,
                    _ => return Err(bad(format!("widths: expected seeded or tuned, got {value:?}"))),
                }
            }
            "samples" => self.samples = num(key, value)?,
            "lusin_resolution" => self.lusin_resolution = num(key, value)?,
            "perimeter_cells" => self.perimeter_cells = num(key, value)?,
            "cavity_cells" => self.cavity_cells = num(key, value)?,
            "max_super" => self.max_super = num(key, value)?,
            "rel_tol" => self.rel_tol = num(key, value)?,
            "max_boxes" => self.max_boxes = num(key, value)?,
            "sandwich_sets" => self.sandwich_sets = num(key, value)?,
            _ => return Err(bad(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (k, v) in parse_pairs(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Hard errors, then warnings.
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        if !(2..=3).contains(&self.n) {
            return Err(bad(format!("n = {} is not supported; use 2 or 3", self.n)));
        }
        if (self.beta as usize) < self.n + 1 {
            return Err(bad(format!("beta = {} is too small for n = {}: the construction needs beta >= n+1 so that the Cantor tower fits", self.beta, self.n)));
        }
        if self.beta > 16 {
            return Err(bad(format!("beta = {} underflows the generation radii; use beta <= 16", self.beta)));
        }
        if self.k == 0 || self.k > K_MAX {
            return Err(bad(format!("K = {} outside 1..={K_MAX}", self.k)));
        }
        if !(self.p.is_finite() && self.p >= 1.0) {
            return Err(bad(format!("p = {} must be a finite exponent >= 1", self.p)));
        }
        if !(self.a.is_finite() && self.a >= 0.0) {
            return Err(bad(format!("a = {} must be >= 0", self.a)));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(bad(format!("rel_tol = {} outside (0, 1)", self.rel_tol)));
        }
        if self.samples == 0 || self.lusin_resolution == 0 || self.max_boxes == 0 || self.max_super == 0 {
            return Err(bad("samples, lusin_resolution, max_boxes and max_super must be positive"));
        }
        if self.perimeter_cells < 16 || self.cavity_cells < 16 {
            return Err(bad("perimeter_cells and cavity_cells must be at least 16"));
        }
        self.phi_fn()?;
        let mut warn = Vec::new();
        let floor = (self.n / 2) as f64;
        if self.p <= floor {
            warn.push(format!("p = {} does not exceed floor(n/2) = {floor}; the closure results assume p > floor(n/2)", self.p));
        }
        Ok(warn)
    }

    pub fn system(&self) -> Result<CantorSystem, ConfigError> {
        CantorSystem::with_k_max(self.n, self.beta, K_MAX.max(self.k)).map_err(|e| bad(e.to_string()))
    }

    pub fn phi_fn(&self) -> Result<Box<dyn Phi>, ConfigError> {
        if let Some(b) = BuiltinPhi::parse(&self.phi) {
            return Ok(Box::new(b));
        }
        let path = Path::new(&self.phi);
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| bad(format!("phi {}: {e}", path.display())))?;
            let f: OrliczFunction = serde_json::from_str(&text).map_err(|e| bad(format!("phi {}: {e}", path.display())))?;
            let f = OrliczFunction::new(f.lambda, f.knots).map_err(|e| bad(format!("phi {}: {e}", path.display())))?;
            return Ok(Box::new(f));
        }
        Err(bad(format!("phi = {:?} is neither t+1/t, t^2+1/t, t nor a knot file", self.phi)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut c = ExperimentConfig::default();
        c.apply_text("# profile\nn = 3\nbeta=4   # tower fits\nK = 2\nwidths = tuned\n").unwrap();
        assert_eq!((c.n, c.beta, c.k, c.widths), (3, 4, 2, Widths::Tuned));
        c.set("K", "4").unwrap();
        assert_eq!(c.k, 4);
        assert!(c.validate().unwrap().is_empty());
    }

    #[test]
    fn beta_gate_and_p_warning() {
        let mut c = ExperimentConfig { n: 3, beta: 3, ..Default::default() };
        assert!(c.validate().unwrap_err().0.contains("beta >= n+1"));
        c.beta = 4;
        c.p = 1.0;
        assert_eq!(c.validate().unwrap().len(), 1);
    }

    #[test]
    fn malformed_input() {
        let mut c = ExperimentConfig::default();
        assert!(c.apply_text("n 3").is_err());
        assert!(c.set("colour", "red").is_err());
        assert!(c.set("n", "three").is_err());
        c.phi = "t^3".into();
        assert!(c.validate().is_err());
    }
}
