//! Turns flags, config files and data specs into validated inputs.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file, flags.
//! The channel count always comes from the data.

use std::path::Path;

use anyhow::{bail, Context, Result};
use basisformer::data::{load_csv, synth_generate, SynthSpec};
use basisformer::{ModelConfig, RawSeries};

use crate::args::ConfigArgs;

/// Where the series comes from.
#[derive(Clone, Debug)]
pub enum DataSource {
    File(std::path::PathBuf),
    /// Regenerated for every seed.
    Synth(SynthTemplate),
}

#[derive(Clone, Debug)]
pub struct SynthTemplate {
    pub channels: usize,
    pub length: usize,
    pub periods: Vec<f64>,
    pub noise: f64,
}

impl Default for SynthTemplate {
    fn default() -> Self {
        let spec = SynthSpec::benchmark(0);
        Self {
            channels: spec.channels,
            length: spec.length,
            periods: spec.tones.iter().map(|t| t.period).collect(),
            noise: spec.noise,
        }
    }
}

impl DataSource {
    pub fn parse(text: &str) -> Result<Self> {
        let Some(rest) = text.strip_prefix("synth") else {
            return Ok(Self::File(text.into()));
        };
        let mut t = SynthTemplate::default();
        let rest = match rest {
            "" => return Ok(Self::Synth(t)),
            r => r
                .strip_prefix(':')
                .with_context(|| format!("data spec `{text}`: expected `synth` or `synth:key=value,...`"))?,
        };
        for item in rest.split(',').filter(|s| !s.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .with_context(|| format!("synthetic data setting `{item}` is not key=value"))?;
            let bad = || format!("synthetic data setting `{key}`: cannot parse `{value}`");
            match key.trim() {
                "channels" => t.channels = value.parse().with_context(bad)?,
                "length" => t.length = value.parse().with_context(bad)?,
                "noise" => t.noise = value.parse().with_context(bad)?,
                "periods" => {
                    t.periods = value
                        .split('/')
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .with_context(bad)?
                }
                other => bail!("unknown synthetic data setting `{other}` (channels, length, periods, noise)"),
            }
        }
        Ok(Self::Synth(t))
    }

    pub fn load(&self, seed: u64) -> Result<RawSeries> {
        match self {
            Self::File(path) => load_csv(path).with_context(|| format!("reading {}", path.display())),
            Self::Synth(t) => {
                let spec = SynthSpec::multi_tone(t.channels, t.length, &t.periods, t.noise, seed);
                Ok(synth_generate(&spec)?)
            }
        }
    }
}

/// Defaults, then the config file, then flags. Not yet validated.
pub fn build_config(args: &ConfigArgs) -> Result<ModelConfig> {
    let mut cfg = match &args.config {
        Some(path) => ModelConfig::from_file(path).with_context(|| format!("loading {}", path.display()))?,
        None => ModelConfig::default(),
    };
    let mut errors = Vec::new();
    for (key, value) in args.overrides() {
        if let Err(e) = cfg.set(key, &value) {
            errors.push(e.to_string());
        }
    }
    if !errors.is_empty() {
        bail!("{}", errors.join("\n"));
    }
    Ok(cfg)
}

/// Adopts the channel count of `raw` and checks every constraint.
pub fn fit_to_data(mut cfg: ModelConfig, raw: &RawSeries) -> Result<ModelConfig> {
    cfg.channels = raw.channels();
    cfg.validate()?;
    Ok(cfg)
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
