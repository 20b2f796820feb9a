//! Flat `key=value` settings shared by the CLI subcommands.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are the
//! [`Settings`] field names; `kinds`, `etas` and `seeds` take comma lists.

use std::path::Path;

use super::{SweepConfig, SweepGrid, WorldSpec};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::prefmodel::Hyper;

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub eta: f64,
    pub loss: String,
    pub beta: f64,
    pub eps: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub clip: f64,
    pub n_queries: usize,
    pub n_responses: usize,
    pub reward_scale: f64,
    pub n_samples: usize,
    pub lr_factor: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub kinds: Vec<String>,
    pub etas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for Settings {
    fn default() -> Self {
        let h = Hyper::default();
        let sweep = SweepConfig::default();
        let grid = SweepGrid::default();
        Self {
            seed: 0,
            eta: 0.0,
            loss: "ropo".into(),
            beta: h.beta(),
            eps: h.eps(),
            alpha: h.alpha(),
            gamma: h.gamma(),
            clip: h.margin_clip(),
            n_queries: sweep.world.n_queries,
            n_responses: sweep.world.n_responses_per_query,
            reward_scale: sweep.world.reward_scale,
            n_samples: sweep.n_samples,
            lr_factor: sweep.lr_factor,
            max_steps: sweep.max_steps,
            grad_tol: sweep.grad_tol,
            kinds: grid.kinds.iter().map(|k| k.name().to_string()).collect(),
            etas: grid.etas,
            seeds: grid.seeds,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Domain(format!("bad value '{value}' for '{key}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "seed" => self.seed = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "loss" => self.loss = value.trim().to_string(),
            "beta" => self.beta = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "n_queries" => self.n_queries = parse(key, value)?,
            "n_responses" => self.n_responses = parse(key, value)?,
            "reward_scale" => self.reward_scale = parse(key, value)?,
            "n_samples" => self.n_samples = parse(key, value)?,
            "lr_factor" => self.lr_factor = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "grad_tol" => self.grad_tol = parse(key, value)?,
            "kinds" => self.kinds = parse_list(key, value)?,
            "etas" => self.etas = parse_list(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            other => return Err(Error::Domain(format!("unknown setting '{other}'"))),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got '{line}'"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&std::fs::read_to_string(path)?)
    }

    pub fn hyper(&self) -> Result<Hyper> {
        Hyper::new(self.beta, self.eps, self.alpha, self.gamma, self.eta, self.clip)
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        LossKind::parse_with(&self.loss, &self.hyper()?)
    }

    pub fn world_spec(&self) -> WorldSpec {
        WorldSpec {
            n_queries: self.n_queries,
            n_responses_per_query: self.n_responses,
            reward_scale: self.reward_scale,
            seed: self.seed,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            world: self.world_spec(),
            n_samples: self.n_samples,
            lr_factor: self.lr_factor,
            max_steps: self.max_steps,
            grad_tol: self.grad_tol,
        }
    }

    pub fn sweep_grid(&self) -> Result<SweepGrid> {
        let h = self.hyper()?;
        Ok(SweepGrid {
            kinds: self.kinds.iter().map(|k| LossKind::parse_with(k, &h)).collect::<Result<_>>()?,
            etas: self.etas.clone(),
            seeds: self.seeds.clone(),
        })
    }
}
