use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use basisformer::ablation::{run_ablation, AblationGrid};
use basisformer::data::{chrono_split, load_csv};
use basisformer::tensor::transpose;
use basisformer::train::evaluate_persistence;
use basisformer::{evaluate, save_checkpoint, train, BasisFormer, Checkpoint, Dataset, Split, Tensor};
use log::info;

use crate::args::{AblateArgs, EvalArgs, ExportArgs, PredictArgs, TrainArgs};
use crate::settings::{build_config, create_dir, fit_to_data, write, DataSource};

pub const CHECKPOINT: &str = "checkpoint.bfck";
pub const PREDICTIONS: &str = "predictions";
pub const BASIS_EXPORT: &str = "basis-export";

pub fn train_cmd(args: TrainArgs) -> Result<()> {
    let cfg = build_config(&args.config)?;
    cfg.validate()?;
    let source = DataSource::parse(&args.data.data)?;
    let raw = source.load(cfg.seed)?;
    let cfg = fit_to_data(cfg, &raw)?;
    let data = Dataset::prepare(raw, &cfg)?;
    let mut model = BasisFormer::new(&cfg)?;

    let out = &args.out;
    create_dir(out)?;
    create_dir(&out.join(PREDICTIONS))?;
    create_dir(&out.join(BASIS_EXPORT))?;
    write(&out.join("config.toml"), cfg.to_toml_string())?;
    info!("{}", cfg.echo());

    let outcome = train(&mut model, &data)?;
    let report = &outcome.report;
    write(&out.join("report.csv"), report.to_csv())?;
    write(&out.join("timing.csv"), report.timing_csv())?;
    save_checkpoint(&model, &data.normalizer, data.total_len(), Some(&outcome.optimizer), &out.join(CHECKPOINT))?;

    let mut metrics = String::from("split,mse,mae,windows,persistence_mse,persistence_mae\n");
    for split in [Split::Val, Split::Test] {
        let m = evaluate(&model, &data, split)?;
        let p = evaluate_persistence(&data, split, cfg.eval_stride)?;
        writeln!(metrics, "{split},{:?},{:?},{},{:?},{:?}", m.mse, m.mae, m.windows, p.mse, p.mae)?;
        println!(
            "{split}: mse {:.6} mae {:.6} ({} windows); persistence mse {:.6}",
            m.mse, m.mae, m.windows, p.mse
        );
    }
    write(&out.join("metrics.csv"), metrics)?;
    println!(
        "{} epochs, best epoch {}, stop: {}; artifacts in {}",
        report.epochs.len(),
        report.best_epoch,
        report.stop,
        out.display()
    );
    if report.aborted() {
        bail!("training aborted: {}", report.stop);
    }
    Ok(())
}

fn checkpoint_path(out: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.join(CHECKPOINT))
}

fn load(out: &Path, explicit: &Option<PathBuf>) -> Result<(Checkpoint, BasisFormer)> {
    let path = checkpoint_path(out, explicit);
    let ckpt = Checkpoint::load(&path)?;
    let model = ckpt.model()?;
    Ok((ckpt, model))
}

pub fn eval_cmd(args: EvalArgs) -> Result<()> {
    let split: Split = args.split.parse()?;
    let (ckpt, mut model) = load(&args.out, &args.checkpoint)?;
    if let Some(stride) = args.stride {
        ensure!(stride >= 1, "--stride must be >= 1");
        model.config.eval_stride = stride;
    }
    let cfg = model.config.clone();
    let raw = DataSource::parse(&args.data.data)?.load(cfg.seed)?;
    ensure!(
        raw.channels() == cfg.channels,
        "data has {} channels but the checkpoint expects C={}",
        raw.channels(),
        cfg.channels
    );
    let segments = chrono_split(raw.len(), cfg.split, cfg.input_len + cfg.output_len)?;
    let data = Dataset::with_normalizer(raw, ckpt.normalizer.clone(), segments, cfg.input_len, cfg.output_len);

    let m = evaluate(&model, &data, split)?;
    let p = evaluate_persistence(&data, split, cfg.eval_stride)?;
    create_dir(&args.out)?;
    let path = args.out.join(format!("eval-{split}.csv"));
    write(
        &path,
        format!(
            "split,mse,mae,windows,persistence_mse,persistence_mae\n{split},{:?},{:?},{},{:?},{:?}\n",
            m.mse, m.mae, m.windows, p.mse, p.mae
        ),
    )?;
    println!("{split}: MSE {:.6} MAE {:.6} over {} windows", m.mse, m.mae, m.windows);
    println!("persistence: MSE {:.6} MAE {:.6}", p.mse, p.mae);
    Ok(())
}

/// Default τ: the last full history window of the training series.
fn default_tau(ckpt: &Checkpoint) -> f64 {
    let len = ckpt.series_len;
    len.saturating_sub(ckpt.config.input_len) as f64 / len.max(1) as f64
}

/// Forecast in original units for a `[C, I]` raw history.
pub fn forecast_raw(ckpt: &Checkpoint, model: &BasisFormer, history: &Tensor, tau: f64) -> Result<Tensor> {
    let x = ckpt.normalizer.apply_tensor(history);
    Ok(ckpt.normalizer.invert_tensor(&model.forecast(&x, tau)?))
}

pub fn predict_cmd(args: PredictArgs) -> Result<()> {
    let (ckpt, model) = load(&args.out, &args.checkpoint)?;
    let (c, i, o) = (ckpt.config.channels, ckpt.config.input_len, ckpt.config.output_len);
    let raw = load_csv(&args.history).with_context(|| format!("reading {}", args.history.display()))?;
    ensure!(
        raw.len() == i && raw.channels() == c,
        "history must have exactly I={i} rows and C={c} channels, got {} rows and {} channels",
        raw.len(),
        raw.channels()
    );
    let tau = args.tau.unwrap_or_else(|| default_tau(&ckpt));
    ensure!(tau.is_finite(), "--tau must be finite");
    let history = Tensor::new([c, i], transpose(i, c, raw.values.data()))?;
    let forecast = forecast_raw(&ckpt, &model, &history, tau)?;

    let mut csv = String::from("step,tau");
    for name in &raw.names {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for step in 0..o {
        write!(csv, "{},{tau:?}", step + 1)?;
        for ch in 0..c {
            write!(csv, ",{:?}", forecast.at(&[ch, step]))?;
        }
        csv.push('\n');
    }
    let dir = args.out.join(PREDICTIONS);
    create_dir(&dir)?;
    let path = dir.join("forecast.csv");
    write(&path, csv)?;
    println!("forecast of {o} steps for {c} channels at tau {tau} written to {}", path.display());
    Ok(())
}

pub fn ablate_cmd(args: AblateArgs) -> Result<()> {
    let base = build_config(&args.config)?;
    base.validate()?;
    let grid = AblationGrid::parse_axes(&args.grid)?;
    let seeds = if args.seeds.is_empty() { vec![base.seed] } else { args.seeds.clone() };
    let source = DataSource::parse(&args.data.data)?;
    let first = source.load(seeds[0])?;
    let base = fit_to_data(base, &first)?;
    let mut problems = Vec::new();
    for variant in &grid.variants {
        let checked = variant
            .config(&base)
            .and_then(|cfg| Dataset::prepare(first.clone(), &cfg).map(drop));
        if let Err(e) = checked {
            problems.push(format!("variant `{}`: {e}", variant.label()));
        }
    }
    if !problems.is_empty() {
        bail!("{}", problems.join("\n"));
    }

    create_dir(&args.out)?;
    write(&args.out.join("config.toml"), base.to_toml_string())?;
    let table = run_ablation(&base, &grid, &seeds, |seed| {
        source.load(seed).map_err(|e| basisformer::Error::Input(format!("{e:#}")))
    })?;
    write(&args.out.join("ablation.csv"), table.to_csv())?;
    write(&args.out.join("runs.csv"), table.runs_csv())?;
    print!("{}", table.to_csv());
    let failed: Vec<String> = table
        .rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.variant.label())))
        .collect();
    if !failed.is_empty() {
        bail!("{} variant(s) failed:\n{}", failed.len(), failed.join("\n"));
    }
    Ok(())
}

pub fn export_cmd(args: ExportArgs) -> Result<()> {
    let (ckpt, model) = load(&args.out, &args.checkpoint)?;
    let tau = args.tau.unwrap_or_else(|| default_tau(&ckpt));
    ensure!(tau.is_finite(), "--tau must be finite");
    let basis = model.basis_at(tau)?;
    let z = basis.z();
    let (n, len) = (z.shape()[0], z.shape()[1]);
    let i = basis.input_len();

    let mut csv = String::from("basis,boundary");
    for t in 0..i {
        write!(csv, ",h{}", t + 1)?;
    }
    for t in 0..len - i {
        write!(csv, ",f{}", t + 1)?;
    }
    csv.push('\n');
    for row in 0..n {
        write!(csv, "{},{i}", row + 1)?;
        for t in 0..len {
            write!(csv, ",{:?}", z.at(&[row, t]))?;
        }
        csv.push('\n');
    }
    let dir = args.out.join(BASIS_EXPORT);
    create_dir(&dir)?;
    write(&dir.join("basis.csv"), csv)?;
    if args.svg {
        write(&dir.join("basis.svg"), basis_svg(z, i))?;
    }
    println!("{n} basis functions of length {len} at tau {tau} written to {}", dir.display());
    Ok(())
}

/// One polyline per basis function with a dashed history/future divider.
fn basis_svg(z: &Tensor, boundary: usize) -> String {
    const W: f64 = 800.0;
    const H: f64 = 400.0;
    const PAD: f64 = 20.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];
    let (n, len) = (z.shape()[0], z.shape()[1]);
    let lo = z.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = z.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |t: usize| PAD + (W - 2.0 * PAD) * t as f64 / (len.max(2) - 1) as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / span;

    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    svg.push('\n');
    let bx = x(boundary) - 0.5 * (x(1) - x(0));
    svg.push_str(&format!(
        r#"<line x1="{bx:.2}" y1="{PAD}" x2="{bx:.2}" y2="{}" stroke="gray" stroke-dasharray="4 4"/>"#,
        H - PAD
    ));
    svg.push('\n');
    for row in 0..n {
        let points: Vec<String> = (0..len).map(|t| format!("{:.2},{:.2}", x(t), y(z.at(&[row, t])))).collect();
        svg.push_str(&format!(
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            COLORS[row % COLORS.len()],
            points.join(" ")
        ));
        svg.push('\n');
    }
    svg.push_str("</svg>\n");
    svg
}
