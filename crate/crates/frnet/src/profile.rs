//! Parameter and FLOP accounting plus timing benchmarks.
//!
//! FLOP convention (counted per forward pass, documented so numbers are
//! comparable across layers):
//!   - convolution: 2 * cin * k^2 * cout * out_h * out_w multiply-adds
//!     counted as two ops each, plus cout * out_h * out_w adds when biased;
//!   - depthwise convolution: 2 * k^2 * c * out_h * out_w (+ bias adds);
//!   - linear: 2 * n * m + m;
//!   - normalization (instance or layer): 6 per element (mean, variance,
//!     normalize, affine);
//!   - SiLU: 4 per element; residual add: 1 per element;
//!   - global average pool: 1 per element;
//!   - spectral filter per channel of an s*s plane: forward plus inverse
//!     2D FFT at 5 n log2 n per length-n line (10 s^2 log2 s each), plus
//!     6 s^2 for the complex Hadamard product.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fft::spectral_conv2d;
use crate::nn::{Block, Conv, Dw, Encoder, FrNet, Frb, Irb, Norm};
use crate::tensor::Tensor;
use crate::verify::circular_conv2d_direct;

/// Budget the default configuration must stay inside: 0.67M parameters
/// within 10%, and 0.18..0.30 GFLOPs per forward pass.
pub const PARAM_TARGET: usize = 670_000;
pub const PARAM_TOLERANCE: f64 = 0.10;
pub const FLOP_MIN: u64 = 180_000_000;
pub const FLOP_MAX: u64 = 300_000_000;

/// Empirical complexity bounds for full-kernel filtering when the image
/// side doubles: the spectral path is O(n^2 log n) (theoretical ratio just
/// over 4), the direct path O(n^4) (theoretical ratio 16). The bounds leave
/// margin for timer noise while keeping the two regimes clearly separated.
pub const SPECTRAL_DOUBLING_MAX: f64 = 5.5;
pub const DIRECT_DOUBLING_MIN: f64 = 8.0;

pub fn param_budget_range() -> (usize, usize) {
    let lo = (PARAM_TARGET as f64 * (1.0 - PARAM_TOLERANCE)).ceil() as usize;
    let hi = (PARAM_TARGET as f64 * (1.0 + PARAM_TOLERANCE)).floor() as usize;
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Norm,
    Act,
    Spectral,
    Add,
    Pool,
    Linear,
}

#[derive(Debug, Clone)]
pub struct CostRow {
    pub name: String,
    pub kind: LayerKind,
    pub params: usize,
    pub flops: u64,
    pub out_shape: [usize; 3],
}

#[derive(Debug, Clone, Default)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub total_params: usize,
    pub total_flops: u64,
}

impl CostReport {
    fn push(&mut self, name: String, kind: LayerKind, params: usize, flops: u64, shape: [usize; 3]) {
        self.total_params += params;
        self.total_flops += flops;
        self.rows.push(CostRow {
            name,
            kind,
            params,
            flops,
            out_shape: shape,
        });
    }

    pub fn flops_for(&self, kind: LayerKind) -> u64 {
        self.rows
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.flops)
            .sum()
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<34} {:>10} {:>14}  output\n",
            "layer", "params", "flops"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<34} {:>10} {:>14}  {}x{}x{}\n",
                r.name, r.params, r.flops, r.out_shape[0], r.out_shape[1], r.out_shape[2]
            ));
        }
        out.push_str(&format!(
            "{:<34} {:>10} {:>14}\n",
            "total",
            self.total_params,
            self.total_flops
        ));
        out
    }
}

/// Trainable parameter count, straight from the parameter store.
pub fn count_params(model: &FrNet) -> usize {
    model
        .params
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.value.len())
        .sum()
}

/// Forward-pass FLOPs under the documented convention.
pub fn count_flops(model: &FrNet) -> u64 {
    cost_report(model).total_flops
}

fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

fn conv_cost(conv: &Conv, size: usize) -> (usize, u64, usize) {
    let out = conv_out(size, conv.kernel, conv.stride, conv.pad);
    let mut params = conv.cout * conv.cin * conv.kernel * conv.kernel;
    let mut flops = 2 * conv.cin * conv.kernel * conv.kernel * conv.cout * out * out;
    if conv.b.is_some() {
        params += conv.cout;
        flops += conv.cout * out * out;
    }
    (params, flops as u64, out)
}

fn dw_cost(dw: &Dw, size: usize) -> (usize, u64, usize) {
    let out = conv_out(size, dw.kernel, dw.stride, dw.pad);
    let params = dw.c * dw.kernel * dw.kernel;
    let flops = 2 * dw.kernel * dw.kernel * dw.c * out * out;
    (params, flops as u64, out)
}

fn norm_cost(norm: &Norm, size: usize) -> (usize, u64) {
    (2 * norm.c, (6 * norm.c * size * size) as u64)
}

fn act_flops(c: usize, size: usize) -> u64 {
    (4 * c * size * size) as u64
}

fn spectral_cost(enc: &Encoder) -> (usize, u64) {
    let s = enc.size;
    let params = 2 * enc.dim * s * s;
    let log2 = (s as f64).log2().round() as usize;
    let per_channel = 2 * 10 * s * s * log2 + 6 * s * s;
    (params, (enc.dim * per_channel) as u64)
}

fn irb_rows(report: &mut CostReport, name: &str, irb: &Irb, size: usize) -> usize {
    let (p, f, mid) = conv_cost(&irb.expand, size);
    let hidden = irb.expand.cout;
    report.push(format!("{name}.expand"), LayerKind::Conv, p, f, [hidden, mid, mid]);
    let (p, f) = norm_cost(&irb.expand_norm, mid);
    report.push(format!("{name}.expand_norm"), LayerKind::Norm, p, f, [hidden, mid, mid]);
    report.push(format!("{name}.expand_act"), LayerKind::Act, 0, act_flops(hidden, mid), [hidden, mid, mid]);

    let (p, f, out) = dw_cost(&irb.dw, mid);
    report.push(format!("{name}.dw"), LayerKind::Conv, p, f, [hidden, out, out]);
    let (p, f) = norm_cost(&irb.dw_norm, out);
    report.push(format!("{name}.dw_norm"), LayerKind::Norm, p, f, [hidden, out, out]);
    report.push(format!("{name}.dw_act"), LayerKind::Act, 0, act_flops(hidden, out), [hidden, out, out]);

    let (p, f, out2) = conv_cost(&irb.project, out);
    report.push(format!("{name}.project"), LayerKind::Conv, p, f, [irb.cout, out2, out2]);
    let (p, f) = norm_cost(&irb.project_norm, out2);
    report.push(format!("{name}.project_norm"), LayerKind::Norm, p, f, [irb.cout, out2, out2]);
    if irb.stride == 1 && irb.cin == irb.cout {
        report.push(
            format!("{name}.residual"),
            LayerKind::Add,
            0,
            (irb.cout * out2 * out2) as u64,
            [irb.cout, out2, out2],
        );
    }
    out2
}

fn encoder_rows(report: &mut CostReport, name: &str, enc: &Encoder) {
    let (d, s) = (enc.dim, enc.size);
    let shape = [d, s, s];
    let (p, f) = norm_cost(&enc.ln1, s);
    report.push(format!("{name}.ln1"), LayerKind::Norm, p, f, shape);
    let (p, f) = spectral_cost(enc);
    report.push(format!("{name}.mask"), LayerKind::Spectral, p, f, shape);
    if enc.shortcut {
        report.push(format!("{name}.shortcut"), LayerKind::Add, 0, (d * s * s) as u64, shape);
    }
    let (p, f) = norm_cost(&enc.ln2, s);
    report.push(format!("{name}.ln2"), LayerKind::Norm, p, f, shape);
    let (p, f, _) = conv_cost(&enc.ffn1, s);
    let hidden = enc.ffn1.cout;
    report.push(format!("{name}.ffn1"), LayerKind::Conv, p, f, [hidden, s, s]);
    report.push(format!("{name}.ffn1_act"), LayerKind::Act, 0, act_flops(hidden, s), [hidden, s, s]);
    let (p, f, _) = conv_cost(&enc.ffn2, s);
    report.push(format!("{name}.ffn2"), LayerKind::Conv, p, f, shape);
    report.push(format!("{name}.ffn_add"), LayerKind::Add, 0, (d * s * s) as u64, shape);
}

fn frb_rows(report: &mut CostReport, name: &str, frb: &Frb) {
    let s = frb.size;
    let (p, f, _) = dw_cost(&frb.local_dw, s);
    report.push(format!("{name}.local_dw"), LayerKind::Conv, p, f, [frb.cin, s, s]);
    let (p, f) = norm_cost(&frb.local_norm, s);
    report.push(format!("{name}.local_norm"), LayerKind::Norm, p, f, [frb.cin, s, s]);
    report.push(format!("{name}.local_act"), LayerKind::Act, 0, act_flops(frb.cin, s), [frb.cin, s, s]);
    let (p, f, _) = conv_cost(&frb.local_pw, s);
    report.push(format!("{name}.local_pw"), LayerKind::Conv, p, f, [frb.dim, s, s]);
    for (i, enc) in frb.encoders.iter().enumerate() {
        encoder_rows(report, &format!("{name}.enc{i}"), enc);
    }
    let (p, f, _) = conv_cost(&frb.fusion, s);
    report.push(format!("{name}.fusion"), LayerKind::Conv, p, f, [frb.cin, s, s]);
    let (p, f) = norm_cost(&frb.fusion_norm, s);
    report.push(format!("{name}.fusion_norm"), LayerKind::Norm, p, f, [frb.cin, s, s]);
    report.push(format!("{name}.fusion_act"), LayerKind::Act, 0, act_flops(frb.cin, s), [frb.cin, s, s]);
}

/// Per-layer parameter and FLOP breakdown for one forward pass.
pub fn cost_report(model: &FrNet) -> CostReport {
    let mut report = CostReport::default();
    let mut size = model.config.input_size;

    let (stem_conv, stem_norm) = &model.stem;
    let (p, f, out) = conv_cost(stem_conv, size);
    report.push("stem.conv".into(), LayerKind::Conv, p, f, [stem_conv.cout, out, out]);
    let (p, f) = norm_cost(stem_norm, out);
    report.push("stem.norm".into(), LayerKind::Norm, p, f, [stem_conv.cout, out, out]);
    report.push("stem.act".into(), LayerKind::Act, 0, act_flops(stem_conv.cout, out), [stem_conv.cout, out, out]);
    size = out;

    for (i, block) in model.body.iter().enumerate() {
        let name = format!("block{i}");
        match block {
            Block::Irb(irb) => size = irb_rows(&mut report, &name, irb, size),
            Block::Frb(frb) => frb_rows(&mut report, &name, frb),
        }
    }

    let (head_conv, head_norm) = &model.head_conv;
    let (p, f, _) = conv_cost(head_conv, size);
    report.push("head.conv".into(), LayerKind::Conv, p, f, [head_conv.cout, size, size]);
    let (p, f) = norm_cost(head_norm, size);
    report.push("head.norm".into(), LayerKind::Norm, p, f, [head_conv.cout, size, size]);
    report.push("head.act".into(), LayerKind::Act, 0, act_flops(head_conv.cout, size), [head_conv.cout, size, size]);
    report.push(
        "head.pool".into(),
        LayerKind::Pool,
        0,
        (head_conv.cout * size * size) as u64,
        [head_conv.cout, 1, 1],
    );

    let hc = model.config.head_channels;
    let od = model.config.output_dims;
    report.push(
        "head.linear".into(),
        LayerKind::Linear,
        hc * od + od,
        (2 * hc * od + od) as u64,
        [od, 1, 1],
    );
    report
}

// ------------------------------------------------------------ benchmarks

#[derive(Debug, Clone, Copy)]
pub struct ScalingRow {
    pub n: usize,
    pub spectral_secs: f64,
    pub direct_secs: f64,
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    samples[samples.len() / 2]
}

/// Time spectral vs direct circular convolution with a full-size kernel at
/// each image size. Median of `repeats` runs; repeats is clamped to >= 5 so
/// a single noisy measurement cannot dominate.
pub fn bench_scaling(sizes: &[usize], repeats: usize, seed: u64) -> Result<Vec<ScalingRow>> {
    let repeats = repeats.max(5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &n in sizes {
        if !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "bench size {n} must be a power of two"
            )));
        }
        let x = Tensor::from_vec(
            &[n, n],
            (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )?;
        let k = Tensor::from_vec(
            &[n, n],
            (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )?;

        // The two paths are timed in separate contiguous blocks so the
        // cache-hostile direct convolution cannot pollute the spectral
        // samples. Spectral runs are batched until each timed sample lasts
        // at least a few milliseconds, keeping timer jitter negligible.
        let t = Instant::now();
        std::hint::black_box(spectral_conv2d(&x, &k)?);
        let once = t.elapsed().as_secs_f64().max(1e-9);
        let iters = ((5e-3 / once).ceil() as usize).clamp(1, 1000);
        let _ = spectral_conv2d(&x, &k)?;
        let mut spec = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t = Instant::now();
            for _ in 0..iters {
                std::hint::black_box(spectral_conv2d(&x, &k)?);
            }
            spec.push(t.elapsed().as_secs_f64() / iters as f64);
        }

        let _ = circular_conv2d_direct(&x, &k)?;
        let mut dir = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t = Instant::now();
            std::hint::black_box(circular_conv2d_direct(&x, &k)?);
            dir.push(t.elapsed().as_secs_f64());
        }
        rows.push(ScalingRow {
            n,
            spectral_secs: median(&mut spec),
            direct_secs: median(&mut dir),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct InferenceBench {
    pub median_ms: f64,
    pub repeats: usize,
    pub hardware: String,
}

pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|text| {
            text.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    format!("{cpu} ({}), single thread", std::env::consts::ARCH)
}

/// Median single-image forward-pass latency after one warmup run.
pub fn bench_inference(model: &FrNet, repeats: usize) -> Result<InferenceBench> {
    let repeats = repeats.max(3);
    let s = model.config.input_size;
    let image = Tensor::full(&[3, s, s], 0.5)?;
    model.infer(&image)?; // warmup
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(model.infer(&image)?);
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(InferenceBench {
        median_ms: median(&mut samples),
        repeats,
        hardware: hardware_descriptor(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;

    #[test]
    fn hand_counted_layer_params() {
        // conv 3->16, 3x3, bias: 3*16*9 + 16 = 448
        let conv = Conv {
            w: crate::autodiff::ParamId(0),
            b: Some(crate::autodiff::ParamId(1)),
            cin: 3,
            cout: 16,
            kernel: 3,
            stride: 1,
            pad: 1,
        };
        let (params, _, out) = conv_cost(&conv, 32);
        assert_eq!(params, 448);
        assert_eq!(out, 32);
    }

    #[test]
    fn report_params_match_store() {
        for config in [ModelConfig::small(), ModelConfig::default()] {
            let model = FrNet::new(config, 1).unwrap();
            let report = cost_report(&model);
            assert_eq!(report.total_params, count_params(&model));
        }
    }

    #[test]
    fn head_linear_row_is_hand_counted() {
        let model = FrNet::new(ModelConfig::default(), 1).unwrap();
        let report = cost_report(&model);
        let row = report.rows.iter().find(|r| r.name == "head.linear").unwrap();
        // 320*2 + 2 params, 2*320*2 + 2 flops
        assert_eq!(row.params, 642);
        assert_eq!(row.flops, 1282);
    }

    #[test]
    fn conv_flops_scale_4x_with_spatial_doubling() {
        let mut small = ModelConfig::small();
        small.input_size = 64;
        let mut big = small.clone();
        big.input_size = 128;
        let a = cost_report(&FrNet::new(small, 1).unwrap());
        let b = cost_report(&FrNet::new(big, 1).unwrap());
        let ratio = b.flops_for(LayerKind::Conv) as f64 / a.flops_for(LayerKind::Conv) as f64;
        assert!((ratio - 4.0).abs() < 0.05, "conv flop ratio {ratio}");
    }

    #[test]
    fn default_model_is_inside_budget() {
        let model = FrNet::new(ModelConfig::default(), 1).unwrap();
        let params = count_params(&model);
        let (lo, hi) = param_budget_range();
        assert!(
            (lo..=hi).contains(&params),
            "default model has {params} params, budget {lo}..={hi}"
        );
        let flops = count_flops(&model);
        assert!(
            (FLOP_MIN..=FLOP_MAX).contains(&flops),
            "default model has {flops} flops, budget {FLOP_MIN}..={FLOP_MAX}"
        );
    }

    #[test]
    fn bench_rejects_non_power_of_two() {
        assert!(bench_scaling(&[12], 5, 0).is_err());
    }
}
