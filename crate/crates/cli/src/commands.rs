use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mant_core::codec::container::{load_quantized, load_tensor, save_quantized, save_tensor};
use mant_core::codec::{GroupFormat, QuantizedTensor, Tensor};
use mant_core::framework::{
    build_variance_table, calibrate_tables, quantize_weight_matrix, run_toy_attention, select_by_variance,
    select_weight_coefficient, AttentionConfig, AttentionTables, Calibration, CalibrationConfig, CandidateSet,
    KvPrecision, StepReport, VarianceTable,
};
use mant_core::gemm::{gemm, reference_gemm};
use mant_core::grid::{approximation_error, build_grid, fit_coefficient_with, CurveKind, FitMetric, ReferenceCurve};
use mant_core::synth::{random_tensor, ValueDistribution};
use mant_sim::{compare_configs, comparison_to_csv, ArrayConfig, CostModel, Workload};

use crate::{Format, GlobalOpts, Metric, Role, VerificationFailed};

fn emit(g: &GlobalOpts, text: &str) -> Result<()> {
    match &g.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn required_out(g: &GlobalOpts) -> Result<&Path> {
    g.out.as_deref().context("--out is required for binary output")
}

fn candidates(g: &GlobalOpts, default: CandidateSet) -> Result<CandidateSet> {
    match &g.candidates {
        Some(s) => Ok(CandidateSet::parse(s)?),
        None => Ok(default),
    }
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",") + "\n";
    for r in rows {
        out += &r.join(",");
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct FitLevel {
    index: usize,
    reference: f64,
    mant: f64,
}

#[derive(Serialize)]
struct FitReport {
    kind: CurveKind,
    metric: FitMetric,
    epsilon: Option<f64>,
    a: u8,
    error: f64,
    levels: Vec<FitLevel>,
}

pub fn fit_grid(g: &GlobalOpts, kind: CurveKind, metric: Metric) -> Result<()> {
    let metric = match metric {
        Metric::Mae => FitMetric::MeanAbsolute,
        Metric::Mse => FitMetric::MeanSquared,
        Metric::Max => FitMetric::MaxAbsolute,
    };
    let curve = ReferenceCurve::new(kind, g.epsilon)?;
    let a = fit_coefficient_with(&curve, metric);
    let grid = build_grid(u32::from(a))?.normalized();
    let levels: Vec<FitLevel> = curve
        .points()
        .iter()
        .zip(grid)
        .enumerate()
        .map(|(index, (&reference, mant))| FitLevel { index, reference, mant })
        .collect();
    log::info!("fitted a = {a} for {kind}");
    let report = FitReport {
        kind,
        metric,
        epsilon: curve.epsilon(),
        a,
        error: approximation_error(&curve, a, metric),
        levels,
    };
    match g.format {
        Format::Json => emit(g, &to_json(&report)?),
        Format::Csv => emit(
            g,
            &csv_text(
                &["index", "reference", "mant"],
                report
                    .levels
                    .iter()
                    .map(|l| vec![l.index.to_string(), l.reference.to_string(), l.mant.to_string()]),
            ),
        ),
    }
}

pub fn gen_tensor(g: &GlobalOpts, dims: &[usize], dist: ValueDistribution, scale: f64) -> Result<()> {
    let out = required_out(g)?;
    let t = random_tensor(dims, dist, scale, g.seed);
    save_tensor(out, &t)?;
    log::info!("wrote {:?} {dist} tensor to {}", dims, out.display());
    Ok(())
}

/// Calibrated variance tables as written by `calibrate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableFile {
    pub config: CalibrationConfig,
    pub k: VarianceTable,
    pub v: VarianceTable,
}

fn load_tables(path: &Path) -> Result<TableFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing variance tables in {}", path.display()))
}

fn synthetic_tables(g: &GlobalOpts, cands: &CandidateSet, heads: usize, head_dim: usize, groups: usize, min_samples: usize) -> Result<TableFile> {
    let cfg = AttentionConfig {
        heads,
        head_dim,
        group_size: g.group_size,
        seed: g.seed,
        calibration_groups: groups,
        min_samples,
        candidates: cands.coefficients().to_vec(),
        ..Default::default()
    };
    let AttentionTables { k, v } = calibrate_tables(&cfg)?;
    Ok(TableFile {
        config: CalibrationConfig {
            group_size: g.group_size,
            candidates: cfg.candidates,
            min_samples,
            epsilon: g.epsilon,
        },
        k,
        v,
    })
}

#[derive(Serialize)]
struct HistogramEntry {
    format: String,
    count: usize,
}

#[derive(Serialize)]
struct QuantizeStats {
    role: &'static str,
    dims: Vec<usize>,
    group_size: usize,
    group_axis: usize,
    groups: usize,
    mse: f64,
    max_abs_error: f64,
    histogram: Vec<HistogramEntry>,
}

fn format_label(f: GroupFormat) -> String {
    match f {
        GroupFormat::Mant(a) => format!("mant{a}"),
        GroupFormat::Int4 => "int4".into(),
        GroupFormat::Int8 => "int8".into(),
    }
}

pub fn quantize(
    g: &GlobalOpts,
    input: &Path,
    role: Role,
    axis: Option<usize>,
    calib: Option<&Path>,
    table: Option<&Path>,
    stats_path: Option<&Path>,
) -> Result<()> {
    let out = required_out(g)?;
    let t = load_tensor(input).with_context(|| format!("reading {}", input.display()))?;
    let last = t.dims().len().saturating_sub(1);
    let gs = g.group_size;
    let (q, role_name) = match role {
        Role::Weight => {
            let axis = axis.unwrap_or(0);
            let cands = candidates(g, CandidateSet::weights())?;
            let q = match calib {
                Some(p) => {
                    if axis != 0 {
                        bail!("calibrated weight selection groups along axis 0");
                    }
                    let x = load_tensor(p).with_context(|| format!("reading {}", p.display()))?;
                    quantize_weight_matrix(&t, Some(&x), gs, &cands)?
                }
                None => QuantizedTensor::quantize_four_bit(&t, axis, gs, |_, v| {
                    select_weight_coefficient(v, Calibration::WeightSpace, &cands).map(|s| s.format)
                })?,
            };
            (q, "weight")
        }
        Role::Activation => (QuantizedTensor::quantize_int8(&t, axis.unwrap_or(last), gs)?, "activation"),
        Role::Kv => {
            let tables = match table {
                Some(p) => load_tables(p)?,
                None => synthetic_tables(g, &candidates(g, CandidateSet::kv())?, 4, 64, 2048, 32)?,
            };
            let q = QuantizedTensor::quantize_four_bit(&t, axis.unwrap_or(last), gs, |_, v| {
                Ok(GroupFormat::Mant(select_by_variance(v, &tables.k)))
            })?;
            (q, "kv")
        }
    };
    save_quantized(out, &q)?;
    let deq = q.dequantize()?;
    let (mut sq, mut max_abs) = (0.0f64, 0.0f64);
    for (&a, &b) in deq.data().iter().zip(t.data()) {
        let d = f64::from(a) - f64::from(b);
        sq += d * d;
        max_abs = max_abs.max(d.abs());
    }
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    for m in q.metas() {
        *counts.entry(m.format.to_byte()).or_default() += 1;
    }
    let histogram = counts
        .into_iter()
        .map(|(b, count)| {
            Ok(HistogramEntry {
                format: format_label(GroupFormat::from_byte(b)?),
                count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let stats = QuantizeStats {
        role: role_name,
        dims: t.dims().to_vec(),
        group_size: gs,
        group_axis: q.group_axis(),
        groups: q.metas().len(),
        mse: if t.is_empty() { 0.0 } else { sq / t.len() as f64 },
        max_abs_error: max_abs,
        histogram,
    };
    let text = to_json(&stats)?;
    match stats_path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn dequantize(g: &GlobalOpts, input: &Path) -> Result<()> {
    let out = required_out(g)?;
    let q = load_quantized(input).with_context(|| format!("reading {}", input.display()))?;
    save_tensor(out, &q.dequantize()?)?;
    Ok(())
}

#[derive(Serialize)]
struct GemmCheckReport {
    m: usize,
    k: usize,
    n: usize,
    group_size: usize,
    max_relative_error: f64,
    mean_relative_error: f64,
    max_abs_error: f64,
    threshold: f64,
    pass: bool,
}

pub fn gemm_check(
    g: &GlobalOpts,
    x: Option<&Path>,
    w: Option<&Path>,
    random: Option<&[usize]>,
    threshold: f64,
) -> Result<()> {
    let (xq, wq) = match (x, w, random) {
        (Some(x), Some(w), None) => (
            load_quantized(x).with_context(|| format!("reading {}", x.display()))?,
            load_quantized(w).with_context(|| format!("reading {}", w.display()))?,
        ),
        (None, None, Some(&[m, k, n])) => {
            let xt: Tensor = random_tensor(&[m, k], ValueDistribution::Gaussian, 1.0, g.seed);
            let wt: Tensor = random_tensor(&[k, n], ValueDistribution::Gaussian, 1.0, g.seed.wrapping_add(1));
            let cands = candidates(g, CandidateSet::weights())?;
            (
                QuantizedTensor::quantize_int8(&xt, 1, g.group_size)?,
                QuantizedTensor::quantize_four_bit(&wt, 0, g.group_size, |_, v| {
                    select_weight_coefficient(v, Calibration::WeightSpace, &cands).map(|s| s.format)
                })?,
            )
        }
        (None, None, Some(_)) => bail!("--random takes exactly three dimensions M,K,N"),
        _ => bail!("give either --x and --w, or --random M,K,N"),
    };
    let fused = gemm(&xq, &wq)?;
    let reference = reference_gemm(&xq, &wq)?;
    let (mut abs_sum, mut ref_sum, mut max_abs) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in fused.data.iter().zip(&reference.data) {
        let d = (a - b).abs();
        abs_sum += d;
        ref_sum += b.abs();
        max_abs = max_abs.max(d);
    }
    let max_rel = fused.relative_error(&reference);
    let report = GemmCheckReport {
        m: fused.rows,
        k: xq.dims()[1],
        n: fused.cols,
        group_size: xq.group_size(),
        max_relative_error: max_rel,
        mean_relative_error: if ref_sum == 0.0 { 0.0 } else { abs_sum / ref_sum },
        max_abs_error: max_abs,
        threshold,
        pass: max_rel <= threshold,
    };
    emit(g, &to_json(&report)?)?;
    if !report.pass {
        return Err(VerificationFailed(format!("relative error {max_rel:e} exceeds {threshold:e}")).into());
    }
    Ok(())
}

pub struct KvRunArgs {
    pub heads: usize,
    pub head_dim: usize,
    pub prefill: usize,
    pub steps: usize,
    pub precision: KvPrecision,
    pub table: Option<PathBuf>,
    pub threshold: f64,
}

#[derive(Serialize)]
struct KvRunReport<'a> {
    config: &'a AttentionConfig,
    prefill: &'a StepReport,
    steps: &'a [StepReport],
    min_decode_cosine: Option<f64>,
    flushes: usize,
    clamped: usize,
    threshold: f64,
    pass: bool,
}

pub fn kv_run(g: &GlobalOpts, a: KvRunArgs) -> Result<()> {
    let cands = candidates(g, CandidateSet::kv())?;
    let cfg = AttentionConfig {
        heads: a.heads,
        head_dim: a.head_dim,
        group_size: g.group_size,
        prefill_len: a.prefill,
        decode_steps: a.steps,
        precision: a.precision,
        seed: g.seed,
        candidates: cands.coefficients().to_vec(),
        ..Default::default()
    };
    let tables = match &a.table {
        Some(p) => {
            let f = load_tables(p)?;
            AttentionTables { k: f.k, v: f.v }
        }
        None => calibrate_tables(&cfg)?,
    };
    let r = run_toy_attention(&cfg, &tables)?;
    let min_decode = r.steps.iter().map(|s| s.min_cosine).reduce(f64::min);
    let checked = min_decode.unwrap_or(r.prefill.min_cosine);
    let pass = checked >= a.threshold;
    match g.format {
        Format::Json => emit(
            g,
            &to_json(&KvRunReport {
                config: &cfg,
                prefill: &r.prefill,
                steps: &r.steps,
                min_decode_cosine: min_decode,
                flushes: r.flushes,
                clamped: r.clamped,
                threshold: a.threshold,
                pass,
            })?,
        )?,
        Format::Csv => emit(
            g,
            &csv_text(
                &["step", "tokens", "window_fill", "flushed", "min_cosine", "mean_cosine", "max_abs_error"],
                std::iter::once(&r.prefill).chain(&r.steps).map(|s| {
                    vec![
                        s.step.to_string(),
                        s.tokens.to_string(),
                        s.window_fill.to_string(),
                        s.flushed.to_string(),
                        s.min_cosine.to_string(),
                        s.mean_cosine.to_string(),
                        s.max_abs_error.to_string(),
                    ]
                }),
            ),
        )?,
    }
    if !pass {
        return Err(VerificationFailed(format!("cosine {checked:.6} below {}", a.threshold)).into());
    }
    Ok(())
}

pub fn calibrate(
    g: &GlobalOpts,
    input: Option<&Path>,
    min_samples: usize,
    groups: usize,
    heads: usize,
    head_dim: usize,
) -> Result<()> {
    let cands = candidates(g, CandidateSet::kv())?;
    let file = match input {
        None => synthetic_tables(g, &cands, heads, head_dim, groups, min_samples)?,
        Some(p) => {
            let t = load_tensor(p).with_context(|| format!("reading {}", p.display()))?;
            let &[s, d] = t.dims() else {
                bail!("calibration tensor must be 2-D (tokens x channels), got {:?}", t.dims());
            };
            let gs = g.group_size;
            let data = t.data();
            let k_groups: Vec<Vec<f32>> = data.chunks(d.max(1)).flat_map(|row| row.chunks(gs).map(<[f32]>::to_vec)).collect();
            let v_groups: Vec<Vec<f32>> = (0..s / gs)
                .flat_map(|b| (0..d).map(move |c| (b * gs..(b + 1) * gs).map(|r| data[r * d + c]).collect()))
                .collect();
            let c = cands.coefficients();
            TableFile {
                config: CalibrationConfig {
                    group_size: gs,
                    candidates: c.to_vec(),
                    min_samples,
                    epsilon: g.epsilon,
                },
                k: build_variance_table(&k_groups, c, min_samples)?,
                v: build_variance_table(&v_groups, c, min_samples)?,
            }
        }
    };
    emit(g, &to_json(&file)?)
}

pub fn sim(g: &GlobalOpts, workload: &Path, configs: &[PathBuf], cost: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(workload).with_context(|| format!("reading {}", workload.display()))?;
    let w = Workload::from_json(&text).with_context(|| format!("in workload {}", workload.display()))?;
    let mut cfgs = Vec::with_capacity(configs.len().max(1));
    for p in configs {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let mut c: ArrayConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing array config {}", p.display()))?;
        if c.name.is_empty() || c.name == ArrayConfig::default().name {
            if let Some(stem) = p.file_stem() {
                c.name = stem.to_string_lossy().into_owned();
            }
        }
        cfgs.push(c);
    }
    if cfgs.is_empty() {
        cfgs.push(ArrayConfig::default());
    }
    let cost = match cost {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing cost model {}", p.display()))?
        }
        None => CostModel::default(),
    };
    let cmp = compare_configs(&w, &cfgs, &cost)?;
    match g.format {
        Format::Json => emit(g, &to_json(&cmp)?),
        Format::Csv => emit(g, &comparison_to_csv(&cmp)?),
    }
}
