//! Loading, splitting, normalizing and windowing multichannel series, plus a
//! seeded synthetic generator.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::basis::normalize_timestamp;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `T × C` values in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub names: Vec<String>,
    /// Row-major `[T, C]`.
    pub values: Tensor,
    pub timestamps: Option<Vec<String>>,
}

impl RawSeries {
    pub fn new(names: Vec<String>, values: Tensor, timestamps: Option<Vec<String>>) -> Result<Self> {
        let s = values.shape();
        if s.len() != 2 || s[1] != names.len() {
            return Err(Error::shape("series", s, &[names.len()]));
        }
        if timestamps.as_ref().is_some_and(|ts| ts.len() != s[0]) {
            return Err(Error::Input("one timestamp per row required".into()));
        }
        Ok(Self {
            names,
            values,
            timestamps,
        })
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.values.data()[t * self.channels() + c]
    }

    /// Every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let data = self.values.data().iter().map(|v| v * factor).collect();
        Self {
            values: Tensor::new(self.values.shape(), data).expect("same shape"),
            ..self.clone()
        }
    }

    /// Writes the series in the format [`load_csv`] reads.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, 0, 0, e))?;
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).map_err(|e| csv_error(path, 0, 0, e))?;
        for t in 0..self.len() {
            let mut row = vec![match &self.timestamps {
                Some(ts) => ts[t].clone(),
                None => t.to_string(),
            }];
            row.extend((0..self.channels()).map(|c| format!("{:?}", self.get(t, c))));
            w.write_record(&row).map_err(|e| csv_error(path, t + 1, 0, e))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(path: &Path, row: usize, column: usize, message: impl fmt::Display) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        row,
        column,
        message: message.to_string(),
    }
}

/// Reads a CSV with one header row, a timestamp first column and numeric
/// channel columns. Rows and columns in errors are 1-based file positions.
pub fn load_csv(path: &Path) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, 0, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, 1, 0, e))?.clone();
    if header.len() < 2 {
        return Err(csv_error(path, 1, 0, "need a timestamp column and at least one channel"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let channels = names.len();
    let mut values = Vec::new();
    let mut stamps = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| csv_error(path, row, 0, e))?;
        if record.len() != channels + 1 {
            return Err(csv_error(path, row, 0, format!("expected {} fields, found {}", channels + 1, record.len())));
        }
        stamps.push(record[0].to_string());
        for (c, cell) in record.iter().skip(1).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| csv_error(path, row, c + 2, format!("cannot parse `{cell}` as a number")))?;
            if !v.is_finite() {
                return Err(csv_error(path, row, c + 2, format!("missing or non-finite value `{cell}`")));
            }
            values.push(v);
        }
    }
    if stamps.is_empty() {
        return Err(Error::Input(format!("{}: series is empty", path.display())));
    }
    RawSeries::new(names, Tensor::new([stamps.len(), channels], values)?, Some(stamps))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split `{other}` (train, val, test)"))),
        }
    }
}

/// A contiguous range of time steps `start..start + len`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

/// Cuts `total` steps into consecutive train/val/test segments. Train and
/// val lengths are the rounded fractions; test takes the rest.
pub fn chrono_split(total: usize, ratios: [f64; 3], min_len: usize) -> Result<[Segment; 3]> {
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios must be positive and sum to 1, got {ratios:?}")));
    }
    let train = (ratios[0] * total as f64).round() as usize;
    let val = (ratios[1] * total as f64).round() as usize;
    let test = total.saturating_sub(train + val);
    let segs = [
        Segment { start: 0, len: train },
        Segment { start: train, len: val },
        Segment {
            start: train + val,
            len: test,
        },
    ];
    let short: Vec<String> = Split::ALL
        .iter()
        .zip(&segs)
        .filter(|(_, s)| s.len < min_len)
        .map(|(name, s)| format!("{name} segment has {} steps; needs at least I + O = {min_len}", s.len))
        .collect();
    if !short.is_empty() {
        return Err(Error::Config(short));
    }
    Ok(segs)
}

/// Per-channel z-scoring with population statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(series: &RawSeries, segment: Segment) -> Result<Self> {
        if segment.len == 0 || segment.start + segment.len > series.len() {
            return Err(Error::Input("normalizer needs a nonempty training segment".into()));
        }
        let c = series.channels();
        let n = segment.len as f64;
        let rows = segment.start..segment.start + segment.len;
        let mean: Vec<f64> = (0..c).map(|ch| rows.clone().map(|t| series.get(t, ch)).sum::<f64>() / n).collect();
        let mut std = Vec::with_capacity(c);
        for (ch, m) in mean.iter().enumerate() {
            let var = rows.clone().map(|t| (series.get(t, ch) - m).powi(2)).sum::<f64>() / n;
            if var.sqrt() == 0.0 {
                return Err(Error::Input(format!(
                    "channel `{}` has zero variance over the training split",
                    series.names[ch]
                )));
            }
            std.push(var.sqrt());
        }
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, channel: usize, v: f64) -> f64 {
        (v - self.mean[channel]) / self.std[channel]
    }

    pub fn invert(&self, channel: usize, v: f64) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }

    /// Inverts a tensor whose second-to-last axis is the channel axis.
    pub fn invert_tensor(&self, t: &Tensor) -> Tensor {
        self.map_channels(t, |c, v| self.invert(c, v))
    }

    pub fn apply_tensor(&self, t: &Tensor) -> Tensor {
        self.map_channels(t, |c, v| self.apply(c, v))
    }

    fn map_channels(&self, t: &Tensor, f: impl Fn(usize, f64) -> f64) -> Tensor {
        let s = t.shape();
        let len = s[s.len() - 1];
        let c = s[s.len() - 2];
        debug_assert_eq!(c, self.channels());
        let data = t
            .data()
            .chunks_exact(len)
            .enumerate()
            .flat_map(|(row, vals)| {
                let ch = row % c;
                vals.iter().map(move |&v| (ch, v))
            })
            .map(|(ch, v)| f(ch, v))
            .collect();
        Tensor::new(s, data).expect("same shape")
    }
}

/// One window: history starts at absolute step `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub t: usize,
    pub tau: f64,
}

/// Windows whose history and horizon both lie inside `segment`, starting at
/// offsets `0, stride, 2·stride, …`; `τ` is taken against `total_len`.
pub fn make_windows(segment: Segment, input_len: usize, output_len: usize, stride: usize, total_len: usize) -> Vec<Window> {
    let span = input_len + output_len;
    if segment.len < span || stride == 0 {
        return Vec::new();
    }
    (0..=segment.len - span)
        .step_by(stride)
        .map(|off| {
            let t = segment.start + off;
            Window {
                t,
                tau: normalize_timestamp(t, total_len).expect("window inside series"),
            }
        })
        .collect()
}

/// Normalized windows stacked for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B, C, I]`.
    pub x: Tensor,
    /// `[B, C, O]`.
    pub y: Tensor,
    pub taus: Vec<f64>,
    pub starts: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }
}

/// A series split chronologically and normalized with train statistics.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub raw: RawSeries,
    pub normalizer: Normalizer,
    pub segments: [Segment; 3],
    pub input_len: usize,
    pub output_len: usize,
    normalized: Vec<f64>,
}

impl Dataset {
    pub fn prepare(raw: RawSeries, config: &ModelConfig) -> Result<Self> {
        if raw.channels() != config.channels {
            return Err(Error::Input(format!(
                "data has {} channels, configuration expects C = {}",
                raw.channels(),
                config.channels
            )));
        }
        let (i, o) = (config.input_len, config.output_len);
        let segments = chrono_split(raw.len(), config.split, i + o)?;
        let normalizer = Normalizer::fit(&raw, segments[0])?;
        Ok(Self::with_normalizer(raw, normalizer, segments, i, o))
    }

    /// Uses given statistics, e.g. those stored alongside a trained model.
    pub fn with_normalizer(raw: RawSeries, normalizer: Normalizer, segments: [Segment; 3], input_len: usize, output_len: usize) -> Self {
        let c = raw.channels();
        let normalized = raw
            .values
            .data()
            .iter()
            .enumerate()
            .map(|(k, &v)| normalizer.apply(k % c, v))
            .collect();
        Self {
            raw,
            normalizer,
            segments,
            input_len,
            output_len,
            normalized,
        }
    }

    pub fn channels(&self) -> usize {
        self.raw.channels()
    }

    pub fn total_len(&self) -> usize {
        self.raw.len()
    }

    pub fn segment(&self, split: Split) -> Segment {
        self.segments[split.index()]
    }

    pub fn windows(&self, split: Split, stride: usize) -> Vec<Window> {
        make_windows(self.segment(split), self.input_len, self.output_len, stride, self.total_len())
    }

    /// Normalized `[C, len]` block starting at absolute step `t`.
    pub fn normalized_block(&self, t: usize, len: usize) -> Vec<f64> {
        let c = self.channels();
        let mut out = vec![0.0; c * len];
        for k in 0..len {
            let row = &self.normalized[(t + k) * c..(t + k + 1) * c];
            for (ch, &v) in row.iter().enumerate() {
                out[ch * len + k] = v;
            }
        }
        out
    }

    pub fn batch(&self, windows: &[Window]) -> Batch {
        let (c, i, o) = (self.channels(), self.input_len, self.output_len);
        let b = windows.len();
        let mut x = Vec::with_capacity(b * c * i);
        let mut y = Vec::with_capacity(b * c * o);
        for w in windows {
            x.extend(self.normalized_block(w.t, i));
            y.extend(self.normalized_block(w.t + i, o));
        }
        Batch {
            x: Tensor::new([b, c, i], x).expect("batch shape"),
            y: Tensor::new([b, c, o], y).expect("batch shape"),
            taus: windows.iter().map(|w| w.tau).collect(),
            starts: windows.iter().map(|w| w.t).collect(),
        }
    }
}

/// Repeats the last `P = min(I, O)` history steps: `ŷ[k] = x[I − P + (k mod P)]`.
/// `x` is `[.., I]`; the result is `[.., O]`.
pub fn persistence_forecast(x: &Tensor, output_len: usize) -> Tensor {
    let s = x.shape();
    let i = s[s.len() - 1];
    let p = i.min(output_len);
    let data = x
        .data()
        .chunks_exact(i)
        .flat_map(|row| (0..output_len).map(move |k| row[i - p + k % p]))
        .collect();
    let mut shape = s.to_vec();
    *shape.last_mut().unwrap() = output_len;
    Tensor::new(shape, data).expect("persistence shape")
}

/// One sinusoidal component, `amplitude · sin(2π t / period + phase[c])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub period: f64,
    pub amplitude: f64,
    /// One phase per channel.
    pub phases: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub channels: usize,
    pub length: usize,
    pub tones: Vec<Tone>,
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Tones at `periods` with amplitudes `1, 0.75, 0.5, …` and per-channel
    /// phases drawn uniformly from `[0, 2π)` with `seed`.
    pub fn multi_tone(channels: usize, length: usize, periods: &[f64], noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let phase = Uniform::new(0.0, 2.0 * PI).expect("valid range");
        let tones = periods
            .iter()
            .enumerate()
            .map(|(k, &period)| Tone {
                period,
                amplitude: (1.0 - 0.25 * k as f64).max(0.25),
                phases: (0..channels).map(|_| phase.sample(&mut rng)).collect(),
            })
            .collect();
        Self {
            channels,
            length,
            tones,
            noise,
            seed,
        }
    }

    /// Eight channels of 4000 steps with periods 24, 48 and 96 and noise 0.1.
    pub fn benchmark(seed: u64) -> Self {
        Self::multi_tone(8, 4000, &[24.0, 48.0, 96.0], 0.1, seed)
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<RawSeries> {
    if spec.channels == 0 || spec.length == 0 {
        return Err(Error::Input("synthetic series needs channels and length".into()));
    }
    for tone in &spec.tones {
        if !(tone.period >= 2.0) {
            return Err(Error::Input(format!("tone period must be >= 2, got {}", tone.period)));
        }
        if tone.phases.len() != spec.channels {
            return Err(Error::Input("one tone phase per channel required".into()));
        }
    }
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Input(format!("noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.channels;
    let mut values = Vec::with_capacity(spec.length * c);
    for t in 0..spec.length {
        for ch in 0..c {
            let clean: f64 = spec
                .tones
                .iter()
                .map(|tone| tone.amplitude * (2.0 * PI * t as f64 / tone.period + tone.phases[ch]).sin())
                .sum();
            let eps = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            values.push(clean + eps);
        }
    }
    let names = (0..c).map(|ch| format!("ch{ch}")).collect();
    let stamps = (0..spec.length).map(|t| t.to_string()).collect();
    RawSeries::new(names, Tensor::new([spec.length, c], values)?, Some(stamps))
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::File::create(&path).unwrap().write_all(text.as_bytes()).unwrap();
        path
    }

    fn series(cols: &[&[f64]]) -> RawSeries {
        let t = cols[0].len();
        let data = (0..t).flat_map(|r| cols.iter().map(move |c| c[r])).collect();
        let names = (0..cols.len()).map(|c| format!("c{c}")).collect();
        RawSeries::new(names, Tensor::new([t, cols.len()], data).unwrap(), None).unwrap()
    }

    #[test]
    fn loads_small_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "date,a,b\n2020-01-01,1,2\n2020-01-02,3,4.5\n2020-01-03,-1,0\n");
        let s = load_csv(&p).unwrap();
        assert_eq!((s.len(), s.channels()), (3, 2));
        assert_eq!(s.names, vec!["a", "b"]);
        assert_eq!(s.get(1, 1), 4.5);
        assert_eq!(s.timestamps.as_ref().unwrap()[2], "2020-01-03");
    }

    #[test]
    fn loads_ett_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n");
        for h in 0..5 {
            text.push_str(&format!("2016-07-01 0{h}:00:00,5.8,2.0,1.5,0.4,4.2,1.3,30.5\n"));
        }
        assert_eq!(load_csv(&write(&dir, "ett.csv", &text)).unwrap().channels(), 7);
    }

    #[test]
    fn load_errors_carry_position() {
        let dir = tempfile::tempdir().unwrap();
        let header_only = write(&dir, "h.csv", "date,a\n");
        assert!(matches!(load_csv(&header_only), Err(Error::Input(m)) if m.contains("empty")));

        let bad = write(&dir, "b.csv", "date,a,b\n0,1,2\n1,3,x\n");
        match load_csv(&bad) {
            Err(Error::Csv { row, column, .. }) => assert_eq!((row, column), (3, 3)),
            other => panic!("{other:?}"),
        }
        let gap = write(&dir, "g.csv", "date,a,b\n0,1,\n");
        assert!(matches!(load_csv(&gap), Err(Error::Csv { row: 2, column: 3, .. })));
        let ragged = write(&dir, "r.csv", "date,a,b\n0,1,2\n1,3\n");
        assert!(matches!(load_csv(&ragged), Err(Error::Csv { row: 3, .. })));
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = synth_generate(&SynthSpec::multi_tone(3, 50, &[7.0], 0.3, 9)).unwrap();
        let p = dir.path().join("s.csv");
        s.write_csv(&p).unwrap();
        assert_eq!(load_csv(&p).unwrap(), s);
    }

    #[test]
    fn split_lengths() {
        let segs = chrono_split(100, [0.7, 0.1, 0.2], 5).unwrap();
        assert_eq!(segs.map(|s| s.len), [70, 10, 20]);
        assert_eq!(segs.map(|s| s.start), [0, 70, 80]);
        assert!(matches!(chrono_split(100, [1.0, 0.0, 0.0], 5), Err(Error::Config(_))));
        let err = chrono_split(100, [0.7, 0.1, 0.2], 16).unwrap_err().to_string();
        assert!(err.contains("val segment has 10 steps") && err.contains("16"), "{err}");
    }

    #[test]
    fn window_counts_follow_segment_lengths() {
        let (i, o) = (4, 3);
        for total in [40, 47, 100] {
            let segs = chrono_split(total, [0.6, 0.2, 0.2], i + o).unwrap();
            for s in segs {
                assert_eq!(make_windows(s, i, o, 1, total).len(), s.len - i - o + 1);
            }
        }
        let seg = Segment { start: 0, len: 7 };
        assert_eq!(make_windows(seg, 4, 3, 1, 7).len(), 1);
        assert_eq!(make_windows(Segment { start: 0, len: 9 }, 4, 3, 1, 9).len(), 3);
        assert_eq!(make_windows(Segment { start: 0, len: 12 }, 4, 3, 2, 12).len(), 3);
    }

    #[test]
    fn window_tau_uses_full_length() {
        let w = make_windows(Segment { start: 48, len: 200 }, 96, 96, 1, 9600);
        assert_eq!(w[0].t, 48);
        assert_eq!(w[0].tau, 0.005);
    }

    #[test]
    fn normalizer_examples() {
        let s = series(&[&[1.0, 3.0, 100.0]]);
        let n = Normalizer::fit(&s, Segment { start: 0, len: 2 }).unwrap();
        assert_eq!((n.mean[0], n.std[0]), (2.0, 1.0));
        assert_eq!(n.apply(0, 3.0), 1.0);

        let shifted = series(&[&[11.0, 12.0, 13.0, 14.0]]);
        let n = Normalizer::fit(&shifted, Segment { start: 0, len: 4 }).unwrap();
        let m: f64 = (0..4).map(|t| n.apply(0, shifted.get(t, 0))).sum();
        assert!(m.abs() < 1e-12);
        for v in [-3.7, 0.0, 12.5, 1e6] {
            assert!((n.invert(0, n.apply(0, v)) - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn normalizer_rejects_flat_channel() {
        let s = series(&[&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]]);
        let err = Normalizer::fit(&s, Segment { start: 0, len: 3 }).unwrap_err().to_string();
        assert!(err.contains("c1"), "{err}");
    }

    #[test]
    fn normalizer_uses_train_only() {
        let cfg = ModelConfig {
            channels: 2,
            input_len: 3,
            output_len: 2,
            split: [0.6, 0.2, 0.2],
            ..Default::default()
        };
        let a = synth_generate(&SynthSpec::multi_tone(2, 50, &[5.0], 0.2, 1)).unwrap();
        let mut b = a.clone();
        for t in 30..50 {
            for c in 0..2 {
                b.values.data_mut()[t * 2 + c] += 17.0;
            }
        }
        let da = Dataset::prepare(a, &cfg).unwrap();
        let db = Dataset::prepare(b, &cfg).unwrap();
        assert_eq!(da.normalizer, db.normalizer);
    }

    #[test]
    fn batches_hold_adjacent_history_and_future() {
        let cfg = ModelConfig {
            channels: 2,
            input_len: 3,
            output_len: 2,
            split: [0.6, 0.2, 0.2],
            ..Default::default()
        };
        let ramp: Vec<f64> = (0..40).map(f64::from).collect();
        let neg: Vec<f64> = ramp.iter().map(|v| -2.0 * v).collect();
        let d = Dataset::prepare(series(&[&ramp, &neg]), &cfg).unwrap();
        let w = d.windows(Split::Val, 1);
        assert_eq!(w.len(), 8 - 5 + 1);
        let b = d.batch(&w[1..3]);
        assert_eq!(b.x.shape(), &[2, 2, 3]);
        assert_eq!(b.y.shape(), &[2, 2, 2]);
        let n = &d.normalizer;
        for (k, &t) in b.starts.iter().enumerate() {
            for c in 0..2 {
                let hist: Vec<f64> = (0..3).map(|j| n.invert(c, b.x.at(&[k, c, j]))).collect();
                let fut: Vec<f64> = (0..2).map(|j| n.invert(c, b.y.at(&[k, c, j]))).collect();
                let scale = if c == 0 { 1.0 } else { -2.0 };
                for (j, v) in hist.iter().chain(&fut).enumerate() {
                    assert!((v - scale * (t + j) as f64).abs() < 1e-9);
                }
            }
        }
        assert_eq!(b.taus[0], w[1].t as f64 / 40.0);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let cfg = ModelConfig {
            channels: 3,
            ..Default::default()
        };
        let s = synth_generate(&SynthSpec::multi_tone(2, 400, &[5.0], 0.0, 1)).unwrap();
        assert!(matches!(Dataset::prepare(s, &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn persistence_repeats_tail() {
        let x = Tensor::new([1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(persistence_forecast(&x, 2).data(), &[3.0, 4.0]);
        assert_eq!(persistence_forecast(&x, 6).data(), &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0]);
        assert_eq!(persistence_forecast(&x, 4).data(), x.data());
    }

    #[test]
    fn synth_examples() {
        let tone = |period: f64, phase: f64| Tone {
            period,
            amplitude: 1.0,
            phases: vec![phase],
        };
        let spec = SynthSpec {
            channels: 1,
            length: 200,
            tones: vec![tone(20.0, 0.0)],
            noise: 0.0,
            seed: 0,
        };
        let s = synth_generate(&spec).unwrap();
        for t in 0..180 {
            assert!((s.get(t, 0) - s.get(t + 20, 0)).abs() < 1e-9);
        }
        assert!((s.get(5, 0) - 1.0).abs() < 1e-12);

        let noisy = SynthSpec::benchmark(3);
        let a = synth_generate(&noisy).unwrap();
        assert_eq!(a, synth_generate(&noisy).unwrap());
        assert_ne!(a, synth_generate(&SynthSpec::benchmark(4)).unwrap());
        assert_eq!((a.len(), a.channels()), (4000, 8));

        let bad = SynthSpec {
            tones: vec![tone(1.5, 0.0)],
            ..spec
        };
        assert!(synth_generate(&bad).is_err());
    }
}
