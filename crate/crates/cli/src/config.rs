//! Flat key=value run configuration with command-line overrides.

use diar_core::adam::AdamParams;
use diar_core::clustergan::ClusterGanConfig;
use diar_core::clustering::KmeansParams;
use diar_core::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Fully resolved run configuration. Defaults < config file < flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub d_n: usize,
    pub hidden_dim: usize,
    pub sigma: f64,
    pub lambda_gp: f64,
    pub batch_size: usize,
    pub n_critic: usize,
    pub iterations: usize,
    pub weight_adv: f64,
    pub weight_cos: f64,
    pub weight_ce: f64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub num_speakers: Option<usize>,
    pub max_speakers: usize,
    pub fuse: bool,
    pub collar: f64,
    pub p_binarize: f64,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gan = ClusterGanConfig::default();
        let km = KmeansParams::default();
        RunConfig {
            d_n: gan.d_n,
            hidden_dim: gan.hidden_dim,
            sigma: gan.sigma,
            lambda_gp: gan.lambda_gp,
            batch_size: gan.batch_size,
            n_critic: gan.n_critic,
            iterations: gan.iterations,
            weight_adv: gan.weight_adv,
            weight_cos: gan.weight_cos,
            weight_ce: gan.weight_ce,
            alpha: gan.adam.alpha,
            beta1: gan.adam.beta1,
            beta2: gan.adam.beta2,
            seed: gan.seed,
            num_speakers: None,
            max_speakers: 10,
            fuse: false,
            collar: 0.25,
            p_binarize: 0.2,
            kmeans_restarts: km.restarts,
            kmeans_max_iter: km.max_iter,
        }
    }
}

impl RunConfig {
    /// Apply `key=value` pairs from a config file on top of the current state.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                detail: format!("expected key=value, got `{line}`"),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                detail: e.to_string(),
            })?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for {key}")))
        }
        match key {
            "d_n" => self.d_n = num(key, value)?,
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "lambda_gp" => self.lambda_gp = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "n_critic" => self.n_critic = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "weight_adv" => self.weight_adv = num(key, value)?,
            "weight_cos" => self.weight_cos = num(key, value)?,
            "weight_ce" => self.weight_ce = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "num_speakers" => self.num_speakers = Some(num(key, value)?),
            "max_speakers" => self.max_speakers = num(key, value)?,
            "fuse" => self.fuse = num(key, value)?,
            "collar" => self.collar = num(key, value)?,
            "p_binarize" => self.p_binarize = num(key, value)?,
            "kmeans_restarts" => self.kmeans_restarts = num(key, value)?,
            "kmeans_max_iter" => self.kmeans_max_iter = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Key=value rendering, one line per field, plus the tool version.
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "version={}", env!("CARGO_PKG_VERSION")).unwrap();
        writeln!(out, "d_n={}", self.d_n).unwrap();
        writeln!(out, "hidden_dim={}", self.hidden_dim).unwrap();
        writeln!(out, "sigma={}", self.sigma).unwrap();
        writeln!(out, "lambda_gp={}", self.lambda_gp).unwrap();
        writeln!(out, "batch_size={}", self.batch_size).unwrap();
        writeln!(out, "n_critic={}", self.n_critic).unwrap();
        writeln!(out, "iterations={}", self.iterations).unwrap();
        writeln!(out, "weight_adv={}", self.weight_adv).unwrap();
        writeln!(out, "weight_cos={}", self.weight_cos).unwrap();
        writeln!(out, "weight_ce={}", self.weight_ce).unwrap();
        writeln!(out, "alpha={}", self.alpha).unwrap();
        writeln!(out, "beta1={}", self.beta1).unwrap();
        writeln!(out, "beta2={}", self.beta2).unwrap();
        writeln!(out, "seed={}", self.seed).unwrap();
        if let Some(k) = self.num_speakers {
            writeln!(out, "num_speakers={k}").unwrap();
        }
        writeln!(out, "max_speakers={}", self.max_speakers).unwrap();
        writeln!(out, "fuse={}", self.fuse).unwrap();
        writeln!(out, "collar={}", self.collar).unwrap();
        writeln!(out, "p_binarize={}", self.p_binarize).unwrap();
        writeln!(out, "kmeans_restarts={}", self.kmeans_restarts).unwrap();
        writeln!(out, "kmeans_max_iter={}", self.kmeans_max_iter).unwrap();
        out
    }

    /// Write the resolved config next to a command's artifacts.
    pub fn write_resolved(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("config.resolved"), self.render())?;
        Ok(())
    }

    pub fn gan_config(&self, d_c: usize, embedding_dim: usize) -> ClusterGanConfig {
        ClusterGanConfig {
            d_n: self.d_n,
            d_c,
            embedding_dim,
            hidden_dim: self.hidden_dim,
            sigma: self.sigma,
            lambda_gp: self.lambda_gp,
            batch_size: self.batch_size,
            n_critic: self.n_critic,
            iterations: self.iterations,
            weight_adv: self.weight_adv,
            weight_cos: self.weight_cos,
            weight_ce: self.weight_ce,
            adam: AdamParams {
                alpha: self.alpha,
                beta1: self.beta1,
                beta2: self.beta2,
                ..AdamParams::default()
            },
            seed: self.seed,
        }
    }

    pub fn kmeans_params(&self) -> KmeansParams {
        KmeansParams {
            restarts: self.kmeans_restarts,
            max_iter: self.kmeans_max_iter,
            ..KmeansParams::default()
        }
    }
}
