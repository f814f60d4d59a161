//! Numerical integration helpers.

use crate::{Error, Result};

/// Abscissae of the 8-point Gauss–Legendre rule on `[-1, 1]` (positive half).
const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Number of nodes emitted by [`gl8_nodes`].
pub const GL8_LEN: usize = 8;

/// Nodes and weights of the 8-point Gauss–Legendre rule mapped to `[a, b]`.
/// Exact for polynomials of degree 15 or less.
pub fn gl8_nodes(a: f64, b: f64) -> [(f64, f64); GL8_LEN] {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); GL8_LEN];
    for k in 0..4 {
        let dx = half * GL8_NODES[k];
        let w = half * GL8_WEIGHTS[k];
        out[2 * k] = (mid - dx, w);
        out[2 * k + 1] = (mid + dx, w);
    }
    out
}

pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    gl8_nodes(a, b).iter().map(|&(x, w)| w * f(x)).sum()
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(mid);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(mid - dx) + f(mid + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature to absolute tolerance `tol`.
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut stack = vec![(a, b, tol, 0usize)];
    while let Some((lo, hi, eps, depth)) = stack.pop() {
        let (value, err) = gk15(&f, lo, hi);
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "integrand is not finite on [{lo}, {hi}]"
            )));
        }
        // At the depth limit the cell is ~2^-48 of the range; accept it.
        if err <= eps.max(1e-15 * value.abs()) || depth >= 48 {
            total += value;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * eps, depth + 1));
            stack.push((mid, hi, 0.5 * eps, depth + 1));
        }
    }
    Ok(total)
}

/// Trapezoidal rule over (possibly unevenly spaced) abscissae.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Cumulative trapezoid, starting at zero.
pub fn cumulative_trapezoid(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    if !xs.is_empty() {
        out.push(0.0);
    }
    for k in 1..xs.len() {
        acc += 0.5 * (xs[k] - xs[k - 1]) * (ys[k] + ys[k - 1]);
        out.push(acc);
    }
    out
}
