use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;

pub(crate) const LN_EPS: f64 = 1e-12;

/// `x @ w^T + b` for `x: [n, in]`, `w: [out, in]`.
pub(crate) fn linear(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    y += &b;
    y
}

/// Accumulates weight and bias gradients and returns `dx`.
pub(crate) fn linear_backward(
    dy: ArrayView2<f64>,
    x: ArrayView2<f64>,
    w: ArrayView2<f64>,
    mut gw: ArrayViewMut2<f64>,
    mut gb: ArrayViewMut1<f64>,
) -> Array2<f64> {
    general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut gw);
    gb += &dy.sum_axis(Axis(0));
    dy.dot(&w)
}

pub(crate) fn linear_vec(x: ArrayView1<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    w.dot(&x) + &b
}

pub(crate) fn linear_vec_backward(
    dy: ArrayView1<f64>,
    x: ArrayView1<f64>,
    w: ArrayView2<f64>,
    mut gw: ArrayViewMut2<f64>,
    mut gb: ArrayViewMut1<f64>,
) -> Array1<f64> {
    for (r, &d) in dy.iter().enumerate() {
        if d != 0.0 {
            gw.row_mut(r).scaled_add(d, &x);
        }
    }
    gb += &dy;
    w.t().dot(&dy)
}

pub(crate) struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Row-wise layer normalization.
pub(crate) fn layer_norm(
    x: ArrayView2<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.dot(&row) / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        row *= *inv;
    }
    let y = &xhat * &gamma + &beta;
    (y, LayerNormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(
    dy: ArrayView2<f64>,
    cache: &LayerNormCache,
    gamma: ArrayView1<f64>,
    mut gg: ArrayViewMut1<f64>,
    mut gb: ArrayViewMut1<f64>,
) -> Array2<f64> {
    gg += &(&dy * &cache.xhat).sum_axis(Axis(0));
    gb += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = &dy * &gamma;
    for ((mut row, xh), &inv) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let m1 = row.sum() / d;
        let m2 = row.dot(&xh) / d;
        row.zip_mut_with(&xh, |g, &h| *g = inv * (*g - m1 - h * m2));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 - p)`.
pub(crate) fn dropout_mask(n: usize, p: f64, rng: &mut impl Rng) -> Option<Array1<f64>> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array1::from_shape_fn(n, |_| if rng.gen::<f64>() < p { 0.0 } else { keep }))
}

pub(crate) fn apply_mask(x: &mut Array1<f64>, mask: &Option<Array1<f64>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

/// Output size of a 3x3, stride-2, pad-1 convolution.
pub(crate) fn conv_out(n: usize) -> usize {
    (n - 1) / 2 + 1
}

/// Unfolds a channel-major `[c, h, w]` tensor into `[c * 9, ho * wo]`
/// columns for a 3x3 stride-2 pad-1 convolution.
pub(crate) fn im2col(x: &[f64], c: usize, h: usize, w: usize) -> Array2<f64> {
    let (ho, wo) = (conv_out(h), conv_out(w));
    let mut cols = Array2::zeros((c * 9, ho * wo));
    let out = cols.as_slice_mut().expect("standard layout");
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut out[((ch * 9) + ky * 3 + kx) * ho * wo..][..ho * wo];
                for oy in 0..ho {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    let dst = &mut row[oy * wo..][..wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im(cols: &Array2<f64>, c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (conv_out(h), conv_out(w));
    let src = cols.as_slice().expect("standard layout");
    let mut x = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &src[((ch * 9) + ky * 3 + kx) * ho * wo..][..ho * wo];
                for oy in 0..ho {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..][..w];
                    for (ox, &g) in row[oy * wo..][..wo].iter().enumerate() {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gelu_grad_matches_difference() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = array![[1.0, 2.0, 3.0, 4.0], [10.0, 10.0, 10.0, 14.0]];
        let (y, _) = layer_norm(x.view(), Array1::ones(4).view(), Array1::zeros(4).view());
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
            assert!((row.dot(&row) / 4.0 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, h, w) = (2, 5, 7);
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let cols = im2col(&x, c, h, w);
        let y = Array2::from_shape_fn(cols.dim(), |(i, j)| ((i * 13 + j * 7) % 5) as f64 - 2.0);
        let lhs = (&cols * &y).sum();
        let back = col2im(&y, c, h, w);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn conv_output_sizes() {
        assert_eq!(conv_out(135), 68);
        assert_eq!(conv_out(240), 120);
        assert_eq!(conv_out(1), 1);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 1001.0]);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
        assert!(p[1] > p[0]);
    }
}
