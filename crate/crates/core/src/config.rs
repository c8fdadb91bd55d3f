//! Pipeline hyperparameters and the `key = value` config file format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::freq_filter::FilterConfig;
use crate::mcaf::McafConfig;
use crate::pipeline::Ablation;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionConfig {
    pub seed: u64,
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
    pub region_grid: usize,
    pub topk_ratio: f64,
    pub alpha_init: f32,
    pub image_size: usize,
    pub ablation: Ablation,
}

impl Default for FusionConfig {
    fn default() -> Self {
        let m = McafConfig::default();
        let f = FilterConfig::default();
        Self {
            seed: 0,
            channels: m.channels,
            heads: m.heads,
            window: m.window,
            region_grid: m.region_grid,
            topk_ratio: f.topk_ratio,
            alpha_init: f.alpha_init,
            image_size: 512,
            ablation: Ablation::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "seed",
    "channels",
    "heads",
    "window",
    "region_grid",
    "topk_ratio",
    "alpha_init",
    "image_size",
    "filter",
    "cross_attention",
    "global_gate",
];

impl FusionConfig {
    pub fn mcaf(&self) -> McafConfig {
        McafConfig {
            channels: self.channels,
            heads: self.heads,
            window: self.window,
            region_grid: self.region_grid,
        }
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            topk_ratio: self.topk_ratio,
            alpha_init: self.alpha_init,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.filter().validate()?;
        if self.image_size == 0 {
            return Err(Error::config("image_size must be positive"));
        }
        self.mcaf().validate_spatial(self.image_size, self.image_size)
    }

    /// Same config at a different resolution, validated.
    pub fn with_image_size(&self, size: usize) -> Result<Self> {
        let cfg = Self {
            image_size: size,
            ..*self
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment;
    /// unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::config(format!("line {}: unknown key {key:?}", lineno + 1)));
            }
            if seen.contains(&key) {
                return Err(Error::config(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
            seen.push(key);
            cfg.set(key, value)
                .map_err(|e| Error::config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "region_grid" => self.region_grid = num(key, value)?,
            "topk_ratio" => self.topk_ratio = num(key, value)?,
            "alpha_init" => self.alpha_init = num(key, value)?,
            "image_size" => self.image_size = num(key, value)?,
            "filter" => self.ablation.filter = num(key, value)?,
            "cross_attention" => self.ablation.cross_attention = num(key, value)?,
            "global_gate" => self.ablation.global_gate = num(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Renders every key; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "window = {}", self.window);
        let _ = writeln!(s, "region_grid = {}", self.region_grid);
        let _ = writeln!(s, "topk_ratio = {}", self.topk_ratio);
        let _ = writeln!(s, "alpha_init = {}", self.alpha_init);
        let _ = writeln!(s, "image_size = {}", self.image_size);
        let _ = writeln!(s, "filter = {}", self.ablation.filter);
        let _ = writeln!(s, "cross_attention = {}", self.ablation.cross_attention);
        let _ = writeln!(s, "global_gate = {}", self.ablation.global_gate);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = FusionConfig::default();
        cfg.validate().unwrap();
        assert_eq!(FusionConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.channels, 32);
        assert_eq!(cfg.heads, 4);
        assert_eq!(cfg.region_grid, 8);
        assert_eq!(cfg.topk_ratio, 0.25);
        assert_eq!(cfg.alpha_init, 0.2);
    }

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = FusionConfig::parse(
            "# toy\nseed = 7\n  topk_ratio = 1.0   # keep all\n\nalpha_init=0\nimage_size = 64\nglobal_gate = false\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.topk_ratio, 1.0);
        assert_eq!(cfg.alpha_init, 0.0);
        assert_eq!(cfg.image_size, 64);
        assert!(!cfg.ablation.global_gate);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "colour = red",
            "seed = 1\nseed = 2",
            "seed",
            "channels = many",
            "topk_ratio = 0",
            "topk_ratio = 1.5",
            "alpha_init = 2",
            "image_size = 60",
            "heads = 5",
        ] {
            assert!(matches!(FusionConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }
}
