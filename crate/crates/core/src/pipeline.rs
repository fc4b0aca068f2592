//! End-to-end runs behind the `cfepm` subcommands.
//!
//! LR is bicubic-upsampled to LR↑, Ref is expanded into a scale pyramid
//! `Ref_0..Ref_{n-1}`, and descriptors of LR↑ (K) are matched against each
//! Ref level (Q_i) with the coarse-to-fine matcher. Every function here is
//! deterministic for a fixed configuration; timings go to the caller, never
//! into output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::{
    dynamic_aggregate, fuse_multiscale, predict_offsets, standard_aggregate, AggregationConfig, OffsetSource, TapKernel,
};
use crate::error::{invalid, mismatch, Error, Result};
use crate::io;
use crate::matcher::{MatchConfig, Nnf, RelevanceMap};
use crate::oracle::{
    brute_force_nnf, convergence_trace, cost_model, enumerated_cost, nnf_mse, relevance_gap, TracePoint,
};
use crate::pyramid::{run_cfe, CfeOutput, PyramidConfig};
use crate::synth;
use crate::tensor::{bicubic_resize, extract_descriptors, make_ref_pyramid, DescriptorConfig, FeatureMap, Image};

/// Everything a run needs. Loaded from TOML; command-line flags override.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lr_path: Option<PathBuf>,
    pub ref_path: Option<PathBuf>,
    pub out_path: Option<PathBuf>,
    /// LR to LR↑ magnification.
    pub upscale: usize,
    /// Ref pyramid ratio between consecutive levels.
    pub k: f64,
    /// Number of Ref pyramid levels.
    pub n: usize,
    /// Ref level `i` is matched with seed `rng_seed + i`; the pyramid's own
    /// seed field is ignored.
    pub rng_seed: u64,
    pub threads: Option<usize>,
    pub dump_levels: bool,
    /// Describe each Ref level after a bicubic down/up round trip by
    /// `upscale`, so both sides of the match carry the same blur. Transfer
    /// still copies the sharp Ref pixels.
    pub degrade_ref: bool,
    pub descriptor: DescriptorConfig,
    pub pyramid: PyramidConfig,
    pub matching: MatchConfig,
    pub aggregation: AggregationFiles,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lr_path: None,
            ref_path: None,
            out_path: None,
            upscale: 4,
            k: 0.8,
            n: 5,
            rng_seed: 0,
            threads: None,
            dump_levels: false,
            degrade_ref: true,
            descriptor: DescriptorConfig::default(),
            pyramid: PyramidConfig::default(),
            matching: MatchConfig::default(),
            aggregation: AggregationFiles::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        toml::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })
    }

    pub fn validate(&self) -> Result<()> {
        if self.upscale == 0 {
            return Err(invalid("upscale must be at least 1"));
        }
        if !(self.k > 0.0 && self.k <= 1.0) {
            return Err(invalid(format!("pyramid ratio k must be in (0, 1], got {}", self.k)));
        }
        if self.n == 0 {
            return Err(invalid("need at least one Ref scale"));
        }
        if self.threads == Some(0) {
            return Err(invalid("thread count must be at least 1"));
        }
        self.descriptor.validate()?;
        self.pyramid.validate()?;
        self.matching.validate()
    }

    /// The schedule used for Ref level `i`.
    pub fn schedule(&self, i: usize) -> PyramidConfig {
        PyramidConfig { rng_seed: self.rng_seed.wrapping_add(i as u64), ..self.pyramid.clone() }
    }

    /// The single-scale baseline: full resolution only, with as many rounds
    /// as the coarse-to-fine schedule has in total.
    pub fn single_scale_schedule(&self) -> PyramidConfig {
        PyramidConfig::single_scale(self.pyramid.iters_per_level.iter().sum(), self.rng_seed)
    }

    fn lr(&self) -> Result<&Path> {
        self.lr_path.as_deref().ok_or_else(|| invalid("an LR image is required (--lr)"))
    }

    fn reference(&self) -> Result<&Path> {
        self.ref_path.as_deref().ok_or_else(|| invalid("a Ref image is required (--ref)"))
    }

    pub fn out(&self) -> Result<&Path> {
        self.out_path.as_deref().ok_or_else(|| invalid("an output path is required (--out)"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Uniform,
    Delta,
}

/// Aggregation settings as stored in a config file: weight files are
/// `WGT1` dumps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationFiles {
    pub kernel: KernelKind,
    /// `C x 1 x 3 x 3` (or `1 x 1 x 3 x 3`) tap weights; overrides `kernel`.
    pub tap_weights: Option<PathBuf>,
    /// `18 x (C_F + C) x 3 x 3` offset predictor.
    pub offset_weights: Option<PathBuf>,
    /// `C x C x kh x kw` filter applied after fusion.
    pub final_weights: Option<PathBuf>,
}

impl AggregationFiles {
    pub fn load(&self) -> Result<AggregationConfig> {
        let kernel = match (&self.tap_weights, self.kernel) {
            (Some(p), _) => TapKernel::from_conv(&io::read_weights(p)?)?,
            (None, KernelKind::Uniform) => TapKernel::uniform(),
            (None, KernelKind::Delta) => TapKernel::delta(),
        };
        let offset_source = match &self.offset_weights {
            Some(p) => OffsetSource::File(io::read_weights(p)?),
            None => OffsetSource::Zero,
        };
        let final_transform = self.final_weights.as_deref().map(io::read_weights).transpose()?;
        Ok(AggregationConfig { kernel, offset_source, final_transform })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Square K and Q sizes to run.
    pub sizes: Vec<usize>,
    pub channels: usize,
    /// Exhaustive matching is only run when `N_K * N_Q` is at most this.
    pub enumerated_limit: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { sizes: vec![64, 128, 250], channels: 8, enumerated_limit: 128u64.pow(4) }
    }
}

/// LR↑, the Ref pyramid and their descriptors.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub lr_up: Image,
    pub refs: Vec<Image>,
    pub k_map: FeatureMap,
    pub q_maps: Vec<FeatureMap>,
}

pub fn prepare(cfg: &RunConfig, lr: &Image, reference: &Image) -> Result<Prepared> {
    cfg.validate()?;
    if lr.channels() != reference.channels() {
        return Err(mismatch(format!("LR has {} channels, Ref has {}", lr.channels(), reference.channels())));
    }
    let lr_up = bicubic_resize(lr, lr.height() * cfg.upscale, lr.width() * cfg.upscale)?;
    let coarsest = cfg.pyramid.scale_denominators[0] as usize;
    let min_dim = cfg.descriptor.patch_size.max(coarsest);
    if lr_up.height() < min_dim || lr_up.width() < min_dim {
        return Err(invalid(format!(
            "LR↑ is {}x{}, smaller than the minimum {min_dim}",
            lr_up.height(),
            lr_up.width()
        )));
    }
    let refs = make_ref_pyramid(reference, cfg.k, cfg.n, min_dim)?;
    let k_map = extract_descriptors(&lr_up, &cfg.descriptor)?;
    let q_maps = refs
        .iter()
        .map(|r| {
            if cfg.degrade_ref && cfg.upscale > 1 {
                extract_descriptors(&degrade(r, cfg.upscale)?, &cfg.descriptor)
            } else {
                extract_descriptors(r, &cfg.descriptor)
            }
        })
        .collect::<Result<_>>()?;
    Ok(Prepared { lr_up, refs, k_map, q_maps })
}

/// Bicubic down by `factor` and back up to the original size.
pub fn degrade(img: &Image, factor: usize) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    let small = bicubic_resize(img, (h / factor).max(1), (w / factor).max(1))?;
    bicubic_resize(&small, h, w)
}

pub fn load_inputs(cfg: &RunConfig) -> Result<(Image, Image)> {
    Ok((io::read_image(cfg.lr()?)?, io::read_image(cfg.reference()?)?))
}

/// Runs the coarse-to-fine matcher of K against every Q_i.
pub fn match_scales(cfg: &RunConfig, prep: &Prepared) -> Result<Vec<CfeOutput>> {
    prep.q_maps.iter().enumerate().map(|(i, q)| run_cfe(&prep.k_map, q, &cfg.schedule(i), &cfg.matching)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleSummary {
    pub scale: usize,
    pub ref_height: usize,
    pub ref_width: usize,
    pub mean_relevance: f64,
    pub propagation_evals: u64,
    pub init_evals: u64,
    pub per_level_evals: Vec<u64>,
    pub nnf_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchSummary {
    pub lr_up_height: usize,
    pub lr_up_width: usize,
    pub descriptor_channels: usize,
    pub scales: Vec<ScaleSummary>,
    pub total_propagation_evals: u64,
    pub total_init_evals: u64,
}

pub fn nnf_file_name(scale: usize) -> String {
    format!("nnf_scale{scale}.nnf")
}

fn level_file_name(scale: usize, level: usize) -> String {
    format!("nnf_scale{scale}_level{level}.nnf")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serialises");
    text.push('\n');
    write_text(path, &text)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

/// Matches LR↑ against every Ref scale and writes `nnf_scale{i}.nnf`
/// (plus per-level dumps if asked) and `summary.json` into `out_dir`.
pub fn cmd_match(cfg: &RunConfig, out_dir: &Path) -> Result<MatchSummary> {
    let (lr, reference) = load_inputs(cfg)?;
    let prep = prepare(cfg, &lr, &reference)?;
    let outputs = match_scales(cfg, &prep)?;
    ensure_dir(out_dir)?;
    let mut scales = Vec::with_capacity(outputs.len());
    for (i, out) in outputs.iter().enumerate() {
        let name = nnf_file_name(i);
        io::write_nnf(&out_dir.join(&name), &out.nnf)?;
        if cfg.dump_levels {
            for (l, level) in out.levels.iter().enumerate() {
                io::write_nnf(&out_dir.join(level_file_name(i, l)), &level.nnf)?;
            }
        }
        scales.push(ScaleSummary {
            scale: i,
            ref_height: prep.refs[i].height(),
            ref_width: prep.refs[i].width(),
            mean_relevance: out.nnf.relevance.mean(),
            propagation_evals: out.propagation_evals(),
            init_evals: out.init_evals(),
            per_level_evals: out.levels.iter().map(|l| l.propagation_evals).collect(),
            nnf_file: name,
        });
    }
    let summary = MatchSummary {
        lr_up_height: prep.lr_up.height(),
        lr_up_width: prep.lr_up.width(),
        descriptor_channels: prep.k_map.channels(),
        total_propagation_evals: scales.iter().map(|s| s.propagation_evals).sum(),
        total_init_evals: scales.iter().map(|s| s.init_evals).sum(),
        scales,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Reads `nnf_scale{i}.nnf` for every scale from a match directory.
pub fn read_match_dir(dir: &Path, n: usize) -> Result<Vec<Nnf>> {
    (0..n).map(|i| io::read_nnf(&dir.join(nnf_file_name(i)))).collect()
}

/// Aggregates raw Ref pixels along the given fields and fuses the scales.
/// `nnfs[i]` maps LR↑ positions into `refs[i]`.
pub fn transfer(prep: &Prepared, nnfs: &[Nnf], agg: &AggregationConfig) -> Result<Image> {
    if nnfs.len() != prep.refs.len() {
        return Err(mismatch(format!("{} fields for {} Ref scales", nnfs.len(), prep.refs.len())));
    }
    let mut ys = Vec::with_capacity(nnfs.len());
    let mut ss: Vec<RelevanceMap> = Vec::with_capacity(nnfs.len());
    for (nnf, r) in nnfs.iter().zip(&prep.refs) {
        if nnf.dims() != prep.k_map.dims() {
            return Err(mismatch(format!("field {:?} vs LR↑ {:?}", nnf.dims(), prep.k_map.dims())));
        }
        let v = r.to_feature_map();
        let y_prime = standard_aggregate(&v, &nnf.positions, &agg.kernel)?;
        let offsets = predict_offsets(&prep.k_map, &y_prime, &agg.offset_source)?;
        ys.push(dynamic_aggregate(&v, &nnf.positions, &offsets, &agg.kernel)?);
        ss.push(nnf.relevance.clone());
    }
    let (z, _) = fuse_multiscale(&ys, &ss, agg.final_transform.as_ref())?;
    if z.channels() != prep.lr_up.channels() {
        return Err(mismatch(format!(
            "fused output has {} channels, image has {}",
            z.channels(),
            prep.lr_up.channels()
        )));
    }
    z.to_image()
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`; infinite when equal.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if (a.channels(), a.height(), a.width()) != (b.channels(), b.height(), b.width()) {
        return Err(mismatch("PSNR needs images of equal shape"));
    }
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

/// PSNRs of the 8-bit-quantised transfer output and of plain LR↑.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferReport {
    pub height: usize,
    pub width: usize,
    /// `None` means the images are identical.
    pub psnr_transfer: Option<f64>,
    pub psnr_bicubic: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn quantised(img: &Image) -> Result<Image> {
    Image::new(
        img.channels(),
        img.height(),
        img.width(),
        io::to_bytes(img).into_iter().map(|b| b as f64 / 255.0).collect(),
    )
}

/// Writes the transfer image to `out`. Fields come from `nnf_dir` when
/// given, otherwise they are matched afresh. With a ground-truth `hr`, a
/// `<out>.json` report with both PSNRs is written next to the image.
pub fn cmd_transfer(
    cfg: &RunConfig,
    out: &Path,
    nnf_dir: Option<&Path>,
    hr: Option<&Path>,
) -> Result<Option<TransferReport>> {
    let (lr, reference) = load_inputs(cfg)?;
    let prep = prepare(cfg, &lr, &reference)?;
    let nnfs = match nnf_dir {
        Some(dir) => read_match_dir(dir, prep.refs.len())?,
        None => match_scales(cfg, &prep)?.into_iter().map(|o| o.nnf).collect(),
    };
    let agg = cfg.aggregation.load()?;
    let img = transfer(&prep, &nnfs, &agg)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    io::write_image(out, &img)?;
    let Some(hr) = hr else { return Ok(None) };
    let truth = io::read_image(hr)?;
    let report = TransferReport {
        height: img.height(),
        width: img.width(),
        psnr_transfer: finite(psnr(&quantised(&img)?, &truth)?),
        psnr_bicubic: finite(psnr(&quantised(&prep.lr_up)?, &truth)?),
    };
    let mut sidecar = out.as_os_str().to_owned();
    sidecar.push(".json");
    write_json(Path::new(&sidecar), &report)?;
    Ok(Some(report))
}

pub fn trace_csv(trace: &[TracePoint]) -> String {
    let mut s = String::from("evals,mse\n");
    for p in trace {
        writeln!(s, "{},{}", p.evals, p.mse).unwrap();
    }
    s
}

/// First snapshot at or below `threshold`.
pub fn evals_to_threshold(trace: &[TracePoint], threshold: f64) -> Option<u64> {
    trace.iter().find(|p| p.mse <= threshold).map(|p| p.evals)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveSummary {
    pub snapshots: usize,
    pub final_evals: u64,
    pub final_mse: f64,
    pub evals_to_threshold: Option<u64>,
}

impl CurveSummary {
    fn new(trace: &[TracePoint], threshold: f64) -> Self {
        let last = trace.last().copied().unwrap_or(TracePoint { evals: 0, mse: f64::NAN });
        CurveSummary {
            snapshots: trace.len(),
            final_evals: last.evals,
            final_mse: last.mse,
            evals_to_threshold: evals_to_threshold(trace, threshold),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceSummary {
    pub threshold: f64,
    pub oracle_evals: u64,
    pub single_scale: CurveSummary,
    pub cfe: CurveSummary,
}

pub const MSE_THRESHOLD: f64 = 0.01;

/// Both convergence traces of LR↑ against `Ref_0`.
pub fn convergence_curves(cfg: &RunConfig, prep: &Prepared) -> Result<(Vec<TracePoint>, Vec<TracePoint>, u64)> {
    let q = &prep.q_maps[0];
    let oracle = brute_force_nnf(&prep.k_map, q, cfg.matching.epsilon_norm)?;
    let s_star = &oracle.nnf.relevance;
    let single = convergence_trace(&prep.k_map, q, &cfg.single_scale_schedule(), &cfg.matching, s_star)?;
    let cfe = convergence_trace(&prep.k_map, q, &cfg.schedule(0), &cfg.matching, s_star)?;
    Ok((single, cfe, oracle.evals))
}

/// Writes `single_scale.csv`, `cfe.csv` and `convergence.json` into `out_dir`.
pub fn cmd_convergence(cfg: &RunConfig, out_dir: &Path) -> Result<ConvergenceSummary> {
    let (lr, reference) = load_inputs(cfg)?;
    let cfg = RunConfig { n: 1, ..cfg.clone() };
    let prep = prepare(&cfg, &lr, &reference)?;
    let (single, cfe, oracle_evals) = convergence_curves(&cfg, &prep)?;
    ensure_dir(out_dir)?;
    write_text(&out_dir.join("single_scale.csv"), &trace_csv(&single))?;
    write_text(&out_dir.join("cfe.csv"), &trace_csv(&cfe))?;
    let summary = ConvergenceSummary {
        threshold: MSE_THRESHOLD,
        oracle_evals,
        single_scale: CurveSummary::new(&single, MSE_THRESHOLD),
        cfe: CurveSummary::new(&cfe, MSE_THRESHOLD),
    };
    write_json(&out_dir.join("convergence.json"), &summary)?;
    Ok(summary)
}

/// Predicted and measured evaluation counts for one matcher at one size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub size: usize,
    pub matcher: &'static str,
    pub predicted: u64,
    /// `None` when the run was skipped (exhaustive matching above the limit).
    pub measured: Option<u64>,
    pub init_evals: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Enumerated over coarse-to-fine propagation count, per size.
    pub ratios: Vec<(usize, f64)>,
}

impl BenchReport {
    pub fn all_match(&self) -> bool {
        self.rows.iter().all(|r| r.measured.is_none_or(|m| m == r.predicted))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("size,matcher,predicted,measured,init_evals\n");
        for r in &self.rows {
            let measured = r.measured.map_or(String::from("-"), |m| m.to_string());
            writeln!(s, "{},{},{},{},{}", r.size, r.matcher, r.predicted, measured, r.init_evals).unwrap();
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:>6}  {:<12} {:>16} {:>16}\n", "size", "matcher", "predicted", "measured");
        for r in &self.rows {
            let measured = r.measured.map_or(String::from("-"), |m| m.to_string());
            writeln!(s, "{:>6}  {:<12} {:>16} {:>16}", r.size, r.matcher, r.predicted, measured).unwrap();
        }
        for (size, ratio) in &self.ratios {
            writeln!(s, "{size}x{size}: enumerated / cfe = {ratio:.2}").unwrap();
        }
        s
    }
}

/// Runs exhaustive, single-scale and coarse-to-fine matching on seeded
/// random features of every requested size and compares the counters with
/// the closed forms.
pub fn bench(cfg: &RunConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let b = &cfg.bench;
    if b.channels == 0 {
        return Err(invalid("bench needs at least one channel"));
    }
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for (idx, &n) in b.sizes.iter().enumerate() {
        let seed = cfg.rng_seed.wrapping_add(2 * idx as u64);
        let k = synth::random_features(b.channels, n, n, seed);
        let q = synth::random_features(b.channels, n, n, seed + 1);

        let enumerated = enumerated_cost((n, n), (n, n));
        let measured = if enumerated <= b.enumerated_limit {
            Some(brute_force_nnf(&k, &q, cfg.matching.epsilon_norm)?.evals)
        } else {
            None
        };
        rows.push(BenchRow { size: n, matcher: "enumerated", predicted: enumerated, measured, init_evals: 0 });

        let mut cfe_predicted = 0;
        for (name, schedule) in [("single-scale", cfg.single_scale_schedule()), ("cfe", cfg.schedule(0))] {
            let predicted = cost_model(n, n, &schedule)?;
            let out = run_cfe(&k, &q, &schedule, &cfg.matching)?;
            if out.init_evals() != predicted.init_evals {
                return Err(invalid(format!(
                    "{name} {n}x{n}: {} initial evaluations, model says {}",
                    out.init_evals(),
                    predicted.init_evals
                )));
            }
            rows.push(BenchRow {
                size: n,
                matcher: name,
                predicted: predicted.propagation_evals,
                measured: Some(out.propagation_evals()),
                init_evals: predicted.init_evals,
            });
            cfe_predicted = predicted.propagation_evals;
        }
        ratios.push((n, enumerated as f64 / cfe_predicted as f64));
    }
    Ok(BenchReport { rows, ratios })
}

/// Runs [`bench`] and writes `bench.csv` into `out_dir` if given.
pub fn cmd_bench(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<BenchReport> {
    let report = bench(cfg)?;
    if let Some(dir) = out_dir {
        ensure_dir(dir)?;
        write_text(&dir.join("bench.csv"), &report.to_csv())?;
    }
    if !report.all_match() {
        return Err(invalid("measured evaluation counts differ from the cost model"));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleScale {
    pub scale: usize,
    pub evals: u64,
    pub mean_relevance: f64,
    pub oracle_file: String,
    /// Filled in when a match directory is compared against the oracle.
    pub mse: Option<f64>,
    pub mean_gap: Option<f64>,
    pub max_gap: Option<f64>,
}

pub fn oracle_file_name(scale: usize) -> String {
    format!("oracle_scale{scale}.nnf")
}

/// Exhaustive fields for every Ref scale, written as `oracle_scale{i}.nnf`
/// with an `oracle.json` summary. With `compare`, the matcher fields from
/// that match directory are scored against the oracle.
pub fn cmd_oracle(cfg: &RunConfig, out_dir: &Path, compare: Option<&Path>) -> Result<Vec<OracleScale>> {
    let (lr, reference) = load_inputs(cfg)?;
    let prep = prepare(cfg, &lr, &reference)?;
    let approx = compare.map(|d| read_match_dir(d, prep.refs.len())).transpose()?;
    ensure_dir(out_dir)?;
    let mut scales = Vec::with_capacity(prep.q_maps.len());
    for (i, q) in prep.q_maps.iter().enumerate() {
        let oracle = brute_force_nnf(&prep.k_map, q, cfg.matching.epsilon_norm)?;
        let name = oracle_file_name(i);
        io::write_nnf(&out_dir.join(&name), &oracle.nnf)?;
        let (mut mse, mut mean_gap, mut max_gap) = (None, None, None);
        if let Some(fields) = &approx {
            let s = &fields[i].relevance;
            mse = Some(nnf_mse(s, &oracle.nnf.relevance)?);
            let (mean, max) = relevance_gap(s, &oracle.nnf.relevance)?;
            (mean_gap, max_gap) = (Some(mean), Some(max));
        }
        scales.push(OracleScale {
            scale: i,
            evals: oracle.evals,
            mean_relevance: oracle.nnf.relevance.mean(),
            oracle_file: name,
            mse,
            mean_gap,
            max_gap,
        });
    }
    write_json(&out_dir.join("oracle.json"), &scales)?;
    Ok(scales)
}
