//! Config file layer and flag parsers shared by the subcommands.

use std::path::Path;

use anyhow::anyhow;
use serde::Deserialize;

use relight::metrics::SsimConfig;
use relight::pipeline::{SunEstConfig, TrainConfig};
use relight::solarpos::{SunPosition, BENCHMARK_POSITIONS};

use crate::error::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub gen: GenConfig,
    pub sunest: SunEstConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub scenes: usize,
    pub positions: String,
    pub size: String,
    pub seed: u64,
    pub test_fraction: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            scenes: 150,
            positions: "default9".into(),
            size: "64x64".into(),
            seed: 0,
            test_fraction: 0.1,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ssim: SsimConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::usage(anyhow!("{}: {e}", path.display())))
    }
}

/// `default9` or comma-separated `azimuth:zenith` pairs.
pub fn parse_positions(s: &str) -> Result<Vec<SunPosition>, CliError> {
    if s == "default9" {
        return Ok(BENCHMARK_POSITIONS.to_vec());
    }
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (az, zen) = item
            .split_once(':')
            .ok_or_else(|| CliError::usage(anyhow!("position '{item}' is not azimuth:zenith")))?;
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::usage(anyhow!("position '{item}' has a bad number")))
        };
        let p = SunPosition::new(num(az)?, num(zen)?)?;
        if !p.above_horizon() {
            return Err(CliError::usage(anyhow!("position {p} is below the horizon")));
        }
        out.push(p);
    }
    if out.is_empty() {
        return Err(CliError::usage(anyhow!("no sun positions given")));
    }
    Ok(out)
}

/// `HxW`, both at least 1.
pub fn parse_size(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::usage(anyhow!("size '{s}' is not HxW"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let (h, w) = (h.trim().parse::<usize>().map_err(|_| bad())?, w.trim().parse::<usize>().map_err(|_| bad())?);
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default9_is_the_benchmark_list() {
        assert_eq!(parse_positions("default9").unwrap(), BENCHMARK_POSITIONS.to_vec());
    }

    #[test]
    fn explicit_positions() {
        let p = parse_positions("-60:60, 0:30").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].azimuth, -60.0);
        assert_eq!(parse_positions("0:95").unwrap_err().code, 1);
        assert_eq!(parse_positions("0:90").unwrap_err().code, 1);
        assert!(parse_positions("0-30").is_err());
    }

    #[test]
    fn sizes() {
        assert_eq!(parse_size("48x64").unwrap(), (48, 64));
        assert!(parse_size("0x4").is_err());
        assert!(parse_size("64").is_err());
    }

    #[test]
    fn file_layers_over_defaults() {
        let c: FileConfig = toml::from_str("[train]\nepochs = 3\n[train.net]\nbase_width = 8\n").unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.net.base_width, 8);
        assert_eq!(c.train.lr, TrainConfig::default().lr);
        assert_eq!(c.gen.scenes, 150);
        assert!(toml::from_str::<FileConfig>("[bogus]\n").is_err());
    }
}
