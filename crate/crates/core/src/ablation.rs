//! Seeded grids of configuration variants trained and compared side by side.

use std::fmt;
use std::str::FromStr;

use log::{info, warn};

use crate::config::ModelConfig;
use crate::data::{Dataset, RawSeries, Split};
use crate::error::{Error, Result};
use crate::model::BasisFormer;
use crate::train::{evaluate, evaluate_persistence, train, Metrics, StopReason};

/// Which auxiliary objectives are switched on. The prediction weight is left
/// untouched.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossArm {
    None,
    InfoNce,
    Smooth,
    InfoNceSmooth,
}

impl LossArm {
    pub const ALL: [LossArm; 4] = [LossArm::None, LossArm::InfoNce, LossArm::Smooth, LossArm::InfoNceSmooth];

    pub fn apply(self, config: &mut ModelConfig) {
        let (align, smooth) = match self {
            LossArm::None => (0.0, 0.0),
            LossArm::InfoNce => (1.0, 0.0),
            LossArm::Smooth => (0.0, 1.0),
            LossArm::InfoNceSmooth => (1.0, 1.0),
        };
        config.w_align = align;
        config.w_smooth = smooth;
    }
}

impl fmt::Display for LossArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossArm::None => "none",
            LossArm::InfoNce => "infonce",
            LossArm::Smooth => "smooth",
            LossArm::InfoNceSmooth => "infonce+smooth",
        })
    }
}

impl FromStr for LossArm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossArm::ALL
            .into_iter()
            .find(|arm| arm.to_string() == s.trim())
            .ok_or_else(|| Error::config(format!("unknown loss arm `{s}` (none, infonce, smooth, infonce+smooth)")))
    }
}

/// Key of the pseudo-setting that selects a [`LossArm`].
pub const LOSS_ARM_KEY: &str = "loss_arm";

/// Applies one override; `loss_arm` is accepted next to every config key.
pub fn apply_override(config: &mut ModelConfig, key: &str, value: &str) -> Result<()> {
    if key == LOSS_ARM_KEY {
        value.parse::<LossArm>()?.apply(config);
        Ok(())
    } else {
        config.set(key, value)
    }
}

/// One point of a grid: an ordered list of `key = value` overrides.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Variant {
    pub overrides: Vec<(String, String)>,
}

impl Variant {
    pub fn new(overrides: &[(&str, &str)]) -> Self {
        Self {
            overrides: overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn label(&self) -> String {
        if self.overrides.is_empty() {
            return "base".into();
        }
        self.overrides
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// The base config with every override applied and validated.
    pub fn config(&self, base: &ModelConfig) -> Result<ModelConfig> {
        let mut cfg = base.clone();
        for (k, v) in &self.overrides {
            apply_override(&mut cfg, k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A list of variants, usually the cartesian product of a few axes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AblationGrid {
    pub variants: Vec<Variant>,
}

impl AblationGrid {
    /// Cartesian product of `(key, values)` axes; the last axis varies fastest.
    pub fn product(axes: &[(String, Vec<String>)]) -> Self {
        let mut variants = vec![Variant::default()];
        for (key, values) in axes {
            variants = variants
                .into_iter()
                .flat_map(|v| {
                    values.iter().map(move |value| {
                        let mut next = v.clone();
                        next.overrides.push((key.clone(), value.clone()));
                        next
                    })
                })
                .collect();
        }
        Self { variants }
    }

    /// Parses axes written as `key=v1,v2,…`. Inside a `split` value the three
    /// ratios are separated by `/`.
    pub fn parse_axes<S: AsRef<str>>(specs: &[S]) -> Result<Self> {
        let mut axes = Vec::new();
        for spec in specs {
            let spec = spec.as_ref();
            let (key, values) = spec
                .split_once('=')
                .ok_or_else(|| Error::config(format!("grid axis `{spec}` is not key=v1,v2,...")))?;
            let key = key.trim().to_string();
            let values: Vec<String> = values
                .split(',')
                .map(|v| v.trim().replace('/', ","))
                .filter(|v| !v.is_empty())
                .collect();
            if values.is_empty() {
                return Err(Error::config(format!("grid axis `{key}` has no values")));
            }
            axes.push((key, values));
        }
        Ok(Self::product(&axes))
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }
}

/// One trained model of one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub test: Metrics,
    pub persistence: Metrics,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stop: StopReason,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantResult {
    pub variant: Variant,
    pub runs: Vec<RunRecord>,
    /// Set when the variant could not be configured or a run failed.
    pub error: Option<String>,
}

impl VariantResult {
    pub fn median_mse(&self) -> Option<f64> {
        median(self.runs.iter().map(|r| r.test.mse).collect())
    }

    pub fn median_mae(&self) -> Option<f64> {
        median(self.runs.iter().map(|r| r.test.mae).collect())
    }

    pub fn median_persistence_mse(&self) -> Option<f64> {
        median(self.runs.iter().map(|r| r.persistence.mse).collect())
    }
}

/// Median; the mean of the two middle values for an even count.
pub fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<VariantResult>,
}

fn one_line(e: &Error) -> String {
    e.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl AblationTable {
    /// One row per variant with medians over seeds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,runs,median_mse,median_mae,median_persistence_mse,status\n");
        for row in &self.rows {
            let status = row.error.as_deref().unwrap_or("ok");
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                csv_field(&row.variant.label()),
                row.runs.len(),
                fmt_opt(row.median_mse()),
                fmt_opt(row.median_mae()),
                fmt_opt(row.median_persistence_mse()),
                csv_field(status)
            ));
        }
        out
    }

    /// One row per trained model.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("variant,seed,test_mse,test_mae,persistence_mse,epochs_run,best_epoch,stop\n");
        for row in &self.rows {
            for r in &row.runs {
                out.push_str(&format!(
                    "{},{},{:.6},{:.6},{:.6},{},{},{}\n",
                    csv_field(&row.variant.label()),
                    r.seed,
                    r.test.mse,
                    r.test.mae,
                    r.persistence.mse,
                    r.epochs_run,
                    r.best_epoch,
                    csv_field(&r.stop.to_string())
                ));
            }
        }
        out
    }

    pub fn row(&self, label: &str) -> Option<&VariantResult> {
        self.rows.iter().find(|r| r.variant.label() == label)
    }
}

/// Trains and tests one configuration on the series for `seed`.
pub fn run_once(config: &ModelConfig, raw: RawSeries) -> Result<RunRecord> {
    let started = std::time::Instant::now();
    let data = Dataset::prepare(raw, config)?;
    let mut model = BasisFormer::new(config)?;
    let outcome = train(&mut model, &data)?;
    let test = evaluate(&model, &data, Split::Test)?;
    let persistence = evaluate_persistence(&data, Split::Test, config.eval_stride)?;
    Ok(RunRecord {
        seed: config.seed,
        test,
        persistence,
        epochs_run: outcome.report.epochs.len(),
        best_epoch: outcome.report.best_epoch,
        stop: outcome.report.stop,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Trains every variant once per seed. `series(seed)` supplies the data for
/// a seed, so synthetic data can follow the seed while file data stays put.
/// A variant that fails is recorded with its error and the grid carries on.
pub fn run_ablation<F>(base: &ModelConfig, grid: &AblationGrid, seeds: &[u64], mut series: F) -> Result<AblationTable>
where
    F: FnMut(u64) -> Result<RawSeries>,
{
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::config("ablation needs at least one variant and one seed"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for variant in &grid.variants {
        let mut result = VariantResult {
            variant: variant.clone(),
            runs: Vec::new(),
            error: None,
        };
        let cfg = match variant.config(base) {
            Ok(cfg) => cfg,
            Err(e) => {
                warn!("variant `{}` skipped: {e}", variant.label());
                result.error = Some(one_line(&e));
                rows.push(result);
                continue;
            }
        };
        for &seed in seeds {
            let run = series(seed).and_then(|raw| run_once(&ModelConfig { seed, ..cfg.clone() }, raw));
            match run {
                Ok(record) => {
                    info!(
                        "variant `{}` seed {seed}: test mse {:.6} ({:.1}s)",
                        variant.label(),
                        record.test.mse,
                        record.seconds
                    );
                    result.runs.push(record);
                }
                Err(e) => {
                    warn!("variant `{}` seed {seed} failed: {e}", variant.label());
                    result.error = Some(format!("seed {seed}: {}", one_line(&e)));
                    break;
                }
            }
        }
        rows.push(result);
    }
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};

    fn tiny() -> ModelConfig {
        ModelConfig {
            channels: 2,
            input_len: 8,
            output_len: 8,
            n_basis: 4,
            heads: 2,
            layers: 1,
            d_c: 6,
            bottleneck: 4,
            basis_hidden: 8,
            epochs: 2,
            batch_size: 16,
            ..Default::default()
        }
    }

    fn series(seed: u64) -> Result<RawSeries> {
        synth_generate(&SynthSpec::multi_tone(2, 200, &[8.0, 16.0], 0.05, seed))
    }

    #[test]
    fn loss_arms_set_weights() {
        let mut cfg = ModelConfig::default();
        for (arm, w) in [("none", (0.0, 0.0)), ("infonce", (1.0, 0.0)), ("smooth", (0.0, 1.0)), ("infonce+smooth", (1.0, 1.0))] {
            apply_override(&mut cfg, LOSS_ARM_KEY, arm).unwrap();
            assert_eq!((cfg.w_align, cfg.w_smooth), w, "{arm}");
            assert_eq!(cfg.w_pred, 1.0);
        }
        assert!("both".parse::<LossArm>().is_err());
    }

    #[test]
    fn heads_axis_has_the_sweep_structure() {
        let grid = AblationGrid::parse_axes(&["heads=4,8,16,32"]).unwrap();
        let labels: Vec<_> = grid.variants.iter().map(Variant::label).collect();
        assert_eq!(labels, ["heads=4", "heads=8", "heads=16", "heads=32"]);
        for v in &grid.variants {
            assert!(v.config(&ModelConfig::default()).is_ok());
        }
    }

    #[test]
    fn product_varies_last_axis_fastest() {
        let grid = AblationGrid::parse_axes(&["basis_kind=learnable,random-sine", "loss_arm=none,infonce+smooth"]).unwrap();
        let labels: Vec<_> = grid.variants.iter().map(Variant::label).collect();
        assert_eq!(
            labels,
            [
                "basis_kind=learnable loss_arm=none",
                "basis_kind=learnable loss_arm=infonce+smooth",
                "basis_kind=random-sine loss_arm=none",
                "basis_kind=random-sine loss_arm=infonce+smooth",
            ]
        );
        let split = AblationGrid::parse_axes(&["split=0.6/0.2/0.2"]).unwrap();
        assert_eq!(split.variants[0].config(&tiny()).unwrap().split, [0.6, 0.2, 0.2]);
        assert!(AblationGrid::parse_axes(&["heads"]).is_err());
        assert!(AblationGrid::parse_axes(&["heads="]).is_err());
    }

    #[test]
    fn median_of_odd_and_even_counts() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }

    #[test]
    fn single_variant_grid_equals_plain_training() {
        let base = tiny();
        let grid = AblationGrid {
            variants: vec![Variant::default()],
        };
        let table = run_ablation(&base, &grid, &[7], series).unwrap();
        let direct = run_once(&ModelConfig { seed: 7, ..base }, series(7).unwrap()).unwrap();
        let run = &table.rows[0].runs[0];
        assert_eq!(run.test.mse.to_bits(), direct.test.mse.to_bits());
        assert_eq!(run.test.mae.to_bits(), direct.test.mae.to_bits());
        assert_eq!(table.rows[0].median_mse(), Some(direct.test.mse));
    }

    #[test]
    fn failing_variant_is_recorded_and_the_rest_proceed() {
        let grid = AblationGrid::parse_axes(&["heads=3,2"]).unwrap();
        let table = run_ablation(&tiny(), &grid, &[0, 1], series).unwrap();
        assert!(table.rows[0].error.as_deref().unwrap().contains("H must divide O"));
        assert!(table.rows[0].runs.is_empty());
        assert!(table.rows[1].error.is_none());
        assert_eq!(table.rows[1].runs.len(), 2);
        let csv = table.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("heads=3,0,,,,"));
        assert!(lines[2].starts_with("heads=2,2,"));
        assert!(lines[2].ends_with(",ok"));
        assert_eq!(table.runs_csv().lines().count(), 3);
    }
}
