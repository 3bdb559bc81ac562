//! Self-verification suites that check the fast paths against slow,
//! independent oracles: the FFT against a quadratic DFT, spectral
//! convolution against direct circular convolution, every differentiable op
//! against central finite differences, and the gaze metrics against
//! hand-derived anchor values.
//!
//! `run_suite` takes an optional fault name; when it matches a gradient
//! case, that case's analytic gradient is deliberately perturbed so the
//! comparison must fail. This demonstrates the checks can actually detect a
//! broken backward rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::fft::{self, Direction};
use crate::metrics::{angles_to_vector, angular_error, mean_angular_error, GazeAngles, GazeVector};
use crate::tensor::{ComplexTensor, Tensor};

pub const SUITES: [&str; 4] = ["fft", "conv", "grad", "metrics"];

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CaseResult {
    fn pass(name: &str, detail: String) -> CaseResult {
        CaseResult {
            name: name.to_string(),
            passed: true,
            detail,
        }
    }

    fn fail(name: &str, detail: String) -> CaseResult {
        CaseResult {
            name: name.to_string(),
            passed: false,
            detail,
        }
    }

    fn check(name: &str, err: f64, tol: f64) -> CaseResult {
        if err.is_finite() && err < tol {
            CaseResult::pass(name, format!("max error {err:.3e} < {tol:.1e}"))
        } else {
            CaseResult::fail(name, format!("max error {err:.3e} exceeds {tol:.1e}"))
        }
    }
}

pub fn run_suite(suite: &str, fault: Option<&str>) -> Result<Vec<CaseResult>> {
    match suite {
        "fft" => Ok(fft_suite()),
        "conv" => Ok(conv_suite()),
        "grad" => Ok(grad_suite(fault)),
        "metrics" => Ok(metrics_suite()),
        other => Err(Error::InvalidArgument(format!(
            "unknown suite '{other}', expected one of {SUITES:?}"
        ))),
    }
}

pub fn run_all(fault: Option<&str>) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for suite in SUITES {
        out.extend(run_suite(suite, fault)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------- oracles

/// Quadratic-time discrete Fourier transform, the reference the fast path
/// is checked against. Forward is unscaled; inverse scales by 1/n.
pub fn naive_dft1d(re: &[f64], im: &[f64], direction: Direction) -> (Vec<f64>, Vec<f64>) {
    let n = re.len();
    let sign = match direction {
        Direction::Forward => -1.0,
        Direction::Inverse => 1.0,
    };
    let scale = match direction {
        Direction::Forward => 1.0,
        Direction::Inverse => 1.0 / n as f64,
    };
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for k in 0..n {
        let mut sr = 0.0;
        let mut si = 0.0;
        for (t, (&xr, &xi)) in re.iter().zip(im).enumerate() {
            let ang = sign * 2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
            let (s, c) = ang.sin_cos();
            sr += xr * c - xi * s;
            si += xr * s + xi * c;
        }
        out_re[k] = sr * scale;
        out_im[k] = si * scale;
    }
    (out_re, out_im)
}

pub fn naive_dft2d(x: &ComplexTensor, direction: Direction) -> Result<ComplexTensor> {
    let (h, w) = match x.shape()[..] {
        [h, w] => (h, w),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "naive_dft2d expects rank 2, got {:?}",
                x.shape()
            )))
        }
    };
    let mut re = x.re.clone();
    let mut im = x.im.clone();
    for r in 0..h {
        let (rr, ri) = naive_dft1d(&re[r * w..(r + 1) * w], &im[r * w..(r + 1) * w], direction);
        re[r * w..(r + 1) * w].copy_from_slice(&rr);
        im[r * w..(r + 1) * w].copy_from_slice(&ri);
    }
    for c in 0..w {
        let col_re: Vec<f64> = (0..h).map(|r| re[r * w + c]).collect();
        let col_im: Vec<f64> = (0..h).map(|r| im[r * w + c]).collect();
        let (cr, ci) = naive_dft1d(&col_re, &col_im, direction);
        for r in 0..h {
            re[r * w + c] = cr[r];
            im[r * w + c] = ci[r];
        }
    }
    ComplexTensor::from_parts(x.shape(), re, im)
}

/// Direct O(h*w*kh*kw) circular convolution with the kernel anchored at the
/// origin — the semantics the spectral path must reproduce exactly.
pub fn circular_conv2d_direct(x: &Tensor, k: &Tensor) -> Result<Tensor> {
    let [h, w] = x.dims2()?;
    let [kh, kw] = k.dims2()?;
    if kh > h || kw > w {
        return Err(Error::InvalidArgument(format!(
            "kernel {kh}x{kw} larger than input {h}x{w}"
        )));
    }
    let mut out = Tensor::zeros(&[h, w])?;
    for i in 0..h {
        for j in 0..w {
            let mut s = 0.0;
            for u in 0..kh {
                for v in 0..kw {
                    let xi = (i + h - u % h) % h;
                    let xj = (j + w - v % w) % w;
                    s += x.data()[xi * w + xj] * k.data()[u * kw + v];
                }
            }
            out.data_mut()[i * w + j] = s;
        }
    }
    Ok(out)
}

// ------------------------------------------------------------- fft suite

fn rand_complex(rng: &mut ChaCha8Rng, shape: &[usize]) -> ComplexTensor {
    let n: usize = shape.iter().product();
    let re = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let im = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ComplexTensor::from_parts(shape, re, im).expect("shape")
}

fn rand_real(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

fn max_complex_diff(a: &ComplexTensor, b: &ComplexTensor) -> f64 {
    a.re.iter()
        .zip(&b.re)
        .chain(a.im.iter().zip(&b.im))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn max_real_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn fft_suite() -> Vec<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfff1);
    let mut out = Vec::new();

    // fast transform vs quadratic DFT, both directions, several lengths
    let mut worst = 0.0f64;
    for &n in &[2usize, 4, 8, 16, 64, 128] {
        for direction in [Direction::Forward, Direction::Inverse] {
            let x = rand_complex(&mut rng, &[n]);
            let fast = fft::fft1d(&x, direction).expect("pow2");
            let (nre, nim) = naive_dft1d(&x.re, &x.im, direction);
            let naive = ComplexTensor::from_parts(&[n], nre, nim).expect("shape");
            worst = worst.max(max_complex_diff(&fast, &naive));
        }
    }
    out.push(CaseResult::check("fft.1d_matches_naive_dft", worst, 1e-9));

    let mut worst = 0.0f64;
    for &(h, w) in &[(4usize, 4usize), (8, 8), (8, 16), (16, 4)] {
        for direction in [Direction::Forward, Direction::Inverse] {
            let x = rand_complex(&mut rng, &[h, w]);
            let fast = fft::fft2d(&x, direction).expect("pow2");
            let naive = naive_dft2d(&x, direction).expect("shape");
            worst = worst.max(max_complex_diff(&fast, &naive));
        }
    }
    out.push(CaseResult::check("fft.2d_matches_naive_dft", worst, 1e-9));

    // inverse(forward(x)) == x across the supported range
    let mut worst = 0.0f64;
    let mut n = 2;
    while n <= 256 {
        let x = rand_complex(&mut rng, &[n]);
        let y = fft::fft1d(&x, Direction::Forward).expect("pow2");
        let z = fft::fft1d(&y, Direction::Inverse).expect("pow2");
        worst = worst.max(max_complex_diff(&x, &z));
        n *= 2;
    }
    out.push(CaseResult::check("fft.round_trip_identity", worst, 1e-9));

    // Parseval: sum |x|^2 == sum |X|^2 / n
    let mut worst = 0.0f64;
    for &n in &[8usize, 64, 256] {
        let x = rand_complex(&mut rng, &[n]);
        let y = fft::fft1d(&x, Direction::Forward).expect("pow2");
        let ex: f64 = x.re.iter().zip(&x.im).map(|(r, i)| r * r + i * i).sum();
        let ey: f64 = y.re.iter().zip(&y.im).map(|(r, i)| r * r + i * i).sum::<f64>() / n as f64;
        worst = worst.max((ex - ey).abs());
    }
    out.push(CaseResult::check("fft.parseval", worst, 1e-9));

    let name = "fft.rejects_non_power_of_two";
    let bad = rand_complex(&mut rng, &[12]);
    out.push(if fft::fft1d(&bad, Direction::Forward).is_err() {
        CaseResult::pass(name, "length 12 rejected".into())
    } else {
        CaseResult::fail(name, "length 12 was accepted".into())
    });

    out
}

// ------------------------------------------------------------ conv suite

fn conv_suite() -> Vec<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0f);
    let mut out = Vec::new();

    // randomized agreement: 200 cases across sizes and kernel shapes
    let sizes = [8usize, 16, 32, 64];
    let mut worst = 0.0f64;
    for case in 0..200 {
        let h = sizes[case % sizes.len()];
        let w = sizes[(case / sizes.len()) % sizes.len()];
        let kh = if case % 7 == 0 { h } else { rng.gen_range(1..=h.min(9)) };
        let kw = if case % 11 == 0 { w } else { rng.gen_range(1..=w.min(9)) };
        let x = rand_real(&mut rng, &[h, w]);
        let k = rand_real(&mut rng, &[kh, kw]);
        let fast = fft::spectral_conv2d(&x, &k).expect("valid");
        let direct = circular_conv2d_direct(&x, &k).expect("valid");
        worst = worst.max(max_real_diff(&fast, &direct));
    }
    out.push(CaseResult::check(
        "conv.spectral_matches_direct_200_cases",
        worst,
        1e-9,
    ));

    // delta kernel at origin is the identity
    let x = rand_real(&mut rng, &[16, 16]);
    let delta = Tensor::from_vec(&[1, 1], vec![1.0]).expect("shape");
    let y = fft::spectral_conv2d(&x, &delta).expect("valid");
    out.push(CaseResult::check(
        "conv.delta_kernel_is_identity",
        max_real_diff(&x, &y),
        1e-10,
    ));

    // linearity in the kernel: conv(x, a+b) == conv(x,a) + conv(x,b)
    let a = rand_real(&mut rng, &[3, 3]);
    let b = rand_real(&mut rng, &[3, 3]);
    let sum = a.add(&b).expect("shape");
    let lhs = fft::spectral_conv2d(&x, &sum).expect("valid");
    let rhs = fft::spectral_conv2d(&x, &a)
        .expect("valid")
        .add(&fft::spectral_conv2d(&x, &b).expect("valid"))
        .expect("shape");
    out.push(CaseResult::check(
        "conv.linear_in_kernel",
        max_real_diff(&lhs, &rhs),
        1e-9,
    ));

    let name = "conv.rejects_oversized_kernel";
    let big = rand_real(&mut rng, &[17, 3]);
    out.push(if fft::spectral_conv2d(&x, &big).is_err() {
        CaseResult::pass(name, "17x3 kernel on 16x16 input rejected".into())
    } else {
        CaseResult::fail(name, "oversized kernel accepted".into())
    });

    out
}

// ------------------------------------------------------------ grad suite

const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_COORDS: usize = 10;

type LossBuilder<'a> = &'a dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>;

/// Compare the tape's analytic gradients at randomly chosen coordinates of
/// every input against central finite differences of the scalar loss.
/// `fault_scale != 1` perturbs the analytic side to simulate a broken rule.
pub fn check_gradients(
    name: &str,
    inputs: &[Tensor],
    build: LossBuilder,
    seed: u64,
    fault_scale: f64,
) -> CaseResult {
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        tape.value(loss).scalar_value()
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = match build(&mut tape, &ids) {
        Ok(l) => l,
        Err(e) => return CaseResult::fail(name, format!("forward failed: {e}")),
    };
    let grads = match tape.backward(loss) {
        Ok(g) => g,
        Err(e) => return CaseResult::fail(name, format!("backward failed: {e}")),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for (idx, input) in inputs.iter().enumerate() {
        let n = input.len();
        let coords: Vec<usize> = if n <= FD_COORDS {
            (0..n).collect()
        } else {
            (0..FD_COORDS).map(|_| rng.gen_range(0..n)).collect()
        };
        for &c in &coords {
            let analytic = grads[ids[idx].0]
                .as_ref()
                .map(|g| g.data()[c])
                .unwrap_or(0.0)
                * fault_scale;

            let mut plus = inputs.to_vec();
            plus[idx].data_mut()[c] += FD_EPS;
            let mut minus = inputs.to_vec();
            minus[idx].data_mut()[c] -= FD_EPS;
            let (lp, lm) = match (eval(&plus), eval(&minus)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => return CaseResult::fail(name, "perturbed forward failed".into()),
            };
            let numeric = (lp - lm) / (2.0 * FD_EPS);

            let denom = analytic.abs().max(numeric.abs());
            let rel = if denom < 1e-6 {
                if (analytic - numeric).abs() < 1e-8 { 0.0 } else { 1.0 }
            } else {
                (analytic - numeric).abs() / denom
            };
            worst = worst.max(rel);
        }
    }
    CaseResult::check(name, worst, FD_TOL)
}

fn grad_suite(fault: Option<&str>) -> Vec<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9afd);
    let mut out = Vec::new();
    let mut run = |name: &str, inputs: Vec<Tensor>, build: LossBuilder| {
        let scale = if fault == Some(name) { 1.001 } else { 1.0 };
        out.push(check_gradients(name, &inputs, build, 0x51ed, scale));
    };

    let r3 = rand_real(&mut rng, &[2, 4, 4]);
    let r3b = rand_real(&mut rng, &[2, 4, 4]);

    run(
        "grad.elementwise",
        vec![r3.clone(), r3b.clone()],
        &|tape, ids| {
            let s = tape.add(ids[0], ids[1])?;
            let d = tape.sub(s, ids[1])?;
            let m = tape.mul(d, ids[0])?;
            let sc = tape.scale(m, 0.7)?;
            tape.sum(sc)
        },
    );

    run("grad.mean", vec![r3.clone()], &|tape, ids| {
        let m = tape.mean(ids[0])?;
        tape.scale(m, 3.0)
    });

    run("grad.silu", vec![r3.clone()], &|tape, ids| {
        let y = tape.silu(ids[0])?;
        let sq = tape.mul(y, y)?;
        tape.sum(sq)
    });

    let x = rand_real(&mut rng, &[2, 6, 6]);
    let w = rand_real(&mut rng, &[3, 2, 3, 3]);
    let b = rand_real(&mut rng, &[3]);
    run("grad.conv2d", vec![x.clone(), w, b.clone()], &|tape, ids| {
        let y = tape.conv2d(ids[0], ids[1], Some(ids[2]), 2, 1)?;
        let sq = tape.mul(y, y)?;
        tape.sum(sq)
    });

    let dw = rand_real(&mut rng, &[2, 3, 3]);
    let db = rand_real(&mut rng, &[2]);
    run(
        "grad.depthwise_conv2d",
        vec![x.clone(), dw, db],
        &|tape, ids| {
            let y = tape.depthwise_conv2d(ids[0], ids[1], Some(ids[2]), 1, 1)?;
            let sq = tape.mul(y, y)?;
            tape.sum(sq)
        },
    );

    let lx = rand_real(&mut rng, &[5]);
    let lw = rand_real(&mut rng, &[5, 3]);
    let lb = rand_real(&mut rng, &[3]);
    run("grad.linear", vec![lx, lw, lb], &|tape, ids| {
        let y = tape.linear(ids[0], ids[1], ids[2])?;
        let sq = tape.mul(y, y)?;
        tape.sum(sq)
    });

    run(
        "grad.concat_channels",
        vec![r3.clone(), rand_real(&mut rng, &[3, 4, 4])],
        &|tape, ids| {
            let y = tape.concat_channels(ids[0], ids[1])?;
            let sq = tape.mul(y, y)?;
            tape.sum(sq)
        },
    );

    let gamma = rand_real(&mut rng, &[2]);
    let beta = rand_real(&mut rng, &[2]);
    run(
        "grad.instance_norm",
        vec![r3.clone(), gamma.clone(), beta.clone()],
        &|tape, ids| {
            let y = tape.instance_norm(ids[0], ids[1], ids[2], 1e-5)?;
            let sq = tape.mul(y, y)?;
            tape.sum(sq)
        },
    );

    run(
        "grad.layer_norm_channels",
        vec![r3.clone(), gamma, beta],
        &|tape, ids| {
            let y = tape.layer_norm_channels(ids[0], ids[1], ids[2], 1e-5)?;
            let sq = tape.mul(y, y)?;
            tape.sum(sq)
        },
    );

    run("grad.global_avg_pool", vec![r3.clone()], &|tape, ids| {
        let y = tape.global_avg_pool(ids[0])?;
        let sq = tape.mul(y, y)?;
        tape.sum(sq)
    });

    let mre = rand_real(&mut rng, &[2, 4, 4]);
    let mim = rand_real(&mut rng, &[2, 4, 4]);
    run(
        "grad.apply_mask",
        vec![r3.clone(), mre, mim],
        &|tape, ids| {
            let y = tape.apply_mask(ids[0], ids[1], ids[2])?;
            let sq = tape.mul(y, y)?;
            tape.sum(sq)
        },
    );

    let pred = rand_real(&mut rng, &[6]).scale(2.0);
    let target = rand_real(&mut rng, &[6]);
    run("grad.smooth_l1", vec![pred, target], &|tape, ids| {
        tape.smooth_l1(ids[0], ids[1], 1.0)
    });

    out
}

// --------------------------------------------------------- metrics suite

fn metrics_suite() -> Vec<CaseResult> {
    let mut out = Vec::new();

    // straight-ahead gaze maps to (0, 0, -1)
    let v = angles_to_vector(GazeAngles::new(0.0, 0.0)).expect("valid");
    let err = (v.g[0]).abs().max(v.g[1].abs()).max((v.g[2] + 1.0).abs());
    out.push(CaseResult::check("metrics.convention_anchor", err, 1e-12));

    let vec_of = |pitch: f64, yaw: f64| {
        angles_to_vector(GazeAngles::new(pitch, yaw)).expect("valid angles")
    };

    let zero = angular_error(vec_of(0.2, -0.4), vec_of(0.2, -0.4)).expect("valid");
    out.push(CaseResult::check("metrics.identical_is_zero", zero, 1e-9));

    let ninety =
        angular_error(vec_of(0.0, 0.0), vec_of(0.0, std::f64::consts::FRAC_PI_2)).expect("valid");
    out.push(CaseResult::check(
        "metrics.quarter_turn_is_90",
        (ninety - 90.0).abs(),
        1e-9,
    ));

    let opposite =
        angular_error(vec_of(0.0, 0.0), vec_of(0.0, std::f64::consts::PI)).expect("valid");
    out.push(CaseResult::check(
        "metrics.opposite_is_180",
        (opposite - 180.0).abs(),
        1e-9,
    ));

    let a = vec_of(0.3, 0.1);
    let b = vec_of(-0.2, 0.5);
    let sym = (angular_error(a, b).expect("valid") - angular_error(b, a).expect("valid")).abs();
    out.push(CaseResult::check("metrics.symmetric", sym, 1e-12));

    // scale invariance of the vector comparison
    let scaled = GazeVector {
        g: [a.g[0] * 3.5, a.g[1] * 3.5, a.g[2] * 3.5],
    };
    let inv = (angular_error(a, b).expect("valid") - angular_error(scaled, b).expect("valid")).abs();
    out.push(CaseResult::check("metrics.scale_invariant", inv, 1e-9));

    let mean = mean_angular_error(
        &[GazeAngles::new(0.0, 0.0), GazeAngles::new(0.0, 0.0)],
        &[
            GazeAngles::new(0.0, 10f64.to_radians()),
            GazeAngles::new(0.0, 20f64.to_radians()),
        ],
    )
    .expect("valid");
    out.push(CaseResult::check(
        "metrics.mean_is_arithmetic",
        (mean - 15.0).abs(),
        1e-9,
    ));

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_clean() {
        let results = run_all(None).unwrap();
        assert!(results.len() >= 20, "only {} cases", results.len());
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn fault_injection_is_detected_and_named() {
        let results = run_suite("grad", Some("grad.conv2d")).unwrap();
        let broken: Vec<_> = results.iter().filter(|r| !r.passed).collect();
        assert_eq!(broken.len(), 1);
        assert_eq!(broken[0].name, "grad.conv2d");
        // all other rules still verify
        assert_eq!(results.iter().filter(|r| r.passed).count(), results.len() - 1);
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(run_suite("nope", None).is_err());
    }

    #[test]
    fn direct_circular_conv_wraps() {
        // delta at (1,0) shifts the image down by one row, with wraparound
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::from_vec(&[2, 1], vec![0.0, 1.0]).unwrap();
        let y = circular_conv2d_direct(&x, &k).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0, 1.0, 2.0]);
    }
}
