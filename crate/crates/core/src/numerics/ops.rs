//! Convolution, softmax/cross-entropy and pointwise nonlinearities.
//!
//! The slice-level functions are what the models call in their inner loops;
//! the `Tensor` wrappers validate shapes and finiteness for external callers.

use crate::error::{check_index, Error, Result};

use super::scalar::{gemm, Mat};
use super::{Scalar, Tensor};

/// Geometry of a valid (unpadded, stride 1) 2-d convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn ho(&self) -> usize {
        self.h + 1 - self.kh
    }
    pub fn wo(&self) -> usize {
        self.w + 1 - self.kw
    }
    pub fn out_cells(&self) -> usize {
        self.ho() * self.wo()
    }
    pub fn out_len(&self) -> usize {
        self.c_out * self.out_cells()
    }
    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
    pub fn kernel_len(&self) -> usize {
        self.c_out * self.patch_len()
    }
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }
}

/// Unfold `input` (`c_in × h × w`) into `col` (`patch_len × out_cells`).
fn im2col<T: Scalar>(g: &ConvGeom, input: &[T], col: &mut Vec<T>) {
    let (ho, wo) = (g.ho(), g.wo());
    let n = ho * wo;
    col.clear();
    col.resize(g.patch_len() * n, T::zero());
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut col[row * n..(row + 1) * n];
                for y in 0..ho {
                    let src = &plane[(y + ky) * g.w + kx..(y + ky) * g.w + kx + wo];
                    dst[y * wo..(y + 1) * wo].copy_from_slice(src);
                }
                row += 1;
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeom, col: &[T], grad_in: &mut [T]) {
    let (ho, wo) = (g.ho(), g.wo());
    let n = ho * wo;
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &mut grad_in[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &col[row * n..(row + 1) * n];
                for y in 0..ho {
                    let dst = &mut plane[(y + ky) * g.w + kx..(y + ky) * g.w + kx + wo];
                    for (d, &s) in dst.iter_mut().zip(&src[y * wo..(y + 1) * wo]) {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scratch buffers reused across convolution calls.
#[derive(Default, Clone, Debug)]
pub struct ConvScratch<T> {
    col: Vec<T>,
    dcol: Vec<T>,
}

/// `out = kernels ⊛ input + bias`, writing `c_out × ho × wo` values.
pub fn conv2d_forward_raw<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    kernels: &[T],
    bias: &[T],
    out: &mut [T],
    scratch: &mut ConvScratch<T>,
) {
    debug_assert_eq!(input.len(), g.in_len());
    debug_assert_eq!(kernels.len(), g.kernel_len());
    debug_assert_eq!(bias.len(), g.c_out);
    debug_assert_eq!(out.len(), g.out_len());
    let n = g.out_cells();
    for (co, &b) in bias.iter().enumerate() {
        out[co * n..(co + 1) * n].iter_mut().for_each(|v| *v = b);
    }
    let k = Mat::new(kernels, g.c_out, g.patch_len());
    if g.pointwise() {
        gemm(k, Mat::new(input, g.c_in, n), out, T::one());
    } else {
        im2col(g, input, &mut scratch.col);
        gemm(k, Mat::new(&scratch.col, g.patch_len(), n), out, T::one());
    }
}

/// Accumulates kernel, bias and (optionally) input gradients of a valid convolution.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_raw<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    kernels: &[T],
    grad_out: &[T],
    grad_in: Option<&mut [T]>,
    grad_k: &mut [T],
    grad_b: &mut [T],
    scratch: &mut ConvScratch<T>,
) {
    let n = g.out_cells();
    let p = g.patch_len();
    for (co, gb) in grad_b.iter_mut().enumerate() {
        *gb += grad_out[co * n..(co + 1) * n].iter().copied().sum::<T>();
    }
    let dout = Mat::new(grad_out, g.c_out, n);
    if g.pointwise() {
        gemm(dout, Mat::t(input, g.c_in, n), grad_k, T::one());
        if let Some(gi) = grad_in {
            gemm(Mat::t(kernels, g.c_out, p), dout, gi, T::one());
        }
    } else {
        im2col(g, input, &mut scratch.col);
        gemm(dout, Mat::t(&scratch.col, p, n), grad_k, T::one());
        if let Some(gi) = grad_in {
            scratch.dcol.clear();
            scratch.dcol.resize(p * n, T::zero());
            gemm(Mat::t(kernels, g.c_out, p), dout, &mut scratch.dcol, T::zero());
            col2im_add(g, &scratch.dcol, gi);
        }
    }
}

fn conv_geom<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>, bias: &Tensor<T>) -> Result<ConvGeom> {
    let (is, ks) = (input.shape(), kernels.shape());
    if is.len() != 3 || ks.len() != 4 || bias.ndim() != 1 {
        return Err(Error::dim(format!(
            "conv2d expects input [C,H,W], kernels [Co,Ci,kh,kw], bias [Co]; got {is:?}, {ks:?}, {:?}",
            bias.shape()
        )));
    }
    let g = ConvGeom {
        c_in: is[0],
        h: is[1],
        w: is[2],
        c_out: ks[0],
        kh: ks[2],
        kw: ks[3],
    };
    if ks[1] != g.c_in || bias.len() != g.c_out {
        return Err(Error::dim(format!(
            "conv2d channel mismatch: input {is:?}, kernels {ks:?}, bias {:?}",
            bias.shape()
        )));
    }
    if g.kh > g.h || g.kw > g.w {
        return Err(Error::dim(format!(
            "kernel {}x{} larger than input {}x{}",
            g.kh, g.kw, g.h, g.w
        )));
    }
    Ok(g)
}

/// Valid 2-d convolution (cross-correlation, no padding, stride 1).
pub fn conv2d_valid<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let g = conv_geom(input, kernels, bias)?;
    let mut out = vec![T::zero(); g.out_len()];
    conv2d_forward_raw(
        &g,
        input.data(),
        kernels.data(),
        bias.data(),
        &mut out,
        &mut ConvScratch::default(),
    );
    let out = Tensor::from_vec(&[g.c_out, g.ho(), g.wo()], out)?;
    out.ensure_finite()?;
    Ok(out)
}

/// Gradients `(d input, d kernels, d bias)` of `<grad_out, conv2d_valid(input, kernels, bias)>`.
pub fn conv2d_valid_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let bias = Tensor::zeros(&[kernels.shape()[0]]);
    let g = conv_geom(input, kernels, &bias)?;
    if grad_out.shape() != [g.c_out, g.ho(), g.wo()] {
        return Err(Error::dim(format!(
            "grad_out shape {:?} does not match conv output",
            grad_out.shape()
        )));
    }
    let mut gi = Tensor::zeros(input.shape());
    let mut gk = Tensor::zeros(kernels.shape());
    let mut gb = Tensor::zeros(&[g.c_out]);
    conv2d_backward_raw(
        &g,
        input.data(),
        kernels.data(),
        grad_out.data(),
        Some(gi.data_mut()),
        gk.data_mut(),
        gb.data_mut(),
        &mut ConvScratch::default(),
    );
    Ok((gi, gk, gb))
}

pub fn logistic<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn logistic_in_place<T: Scalar>(xs: &mut [T]) {
    xs.iter_mut().for_each(|x| *x = logistic(*x));
}

/// `grad *= y (1 - y)` where `y` are logistic outputs.
pub fn logistic_backward_in_place<T: Scalar>(y: &[T], grad: &mut [T]) {
    for (g, &y) in grad.iter_mut().zip(y) {
        *g *= y * (T::one() - y);
    }
}

pub fn relu_in_place<T: Scalar>(xs: &mut [T]) {
    xs.iter_mut().for_each(|x| {
        if *x < T::zero() {
            *x = T::zero()
        }
    });
}

/// Zeroes `grad` wherever the ReLU output was not positive.
pub fn relu_backward_in_place<T: Scalar>(y: &[T], grad: &mut [T]) {
    for (g, &y) in grad.iter_mut().zip(y) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Natural-log softmax computed in double precision.
pub fn log_softmax_f64<T: Scalar>(logits: &[T], out: &mut [f64]) {
    let m = logits
        .iter()
        .map(|x| x.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|x| (x.as_f64() - m).exp()).sum::<f64>().ln();
    for (o, x) in out.iter_mut().zip(logits) {
        *o = x.as_f64() - lse;
    }
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    log_softmax_f64(logits, &mut out);
    out.iter_mut().for_each(|v| *v = v.exp());
    out
}

/// Cross-entropy (nats) of `target` under softmax(`logits`); writes
/// `scale · (softmax − one_hot)` into `grad`.
pub fn softmax_xent_raw<T: Scalar>(logits: &[T], target: usize, scale: T, grad: &mut [T]) -> f64 {
    let m = logits
        .iter()
        .map(|x| x.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (g, x) in grad.iter_mut().zip(logits) {
        let e = (x.as_f64() - m).exp();
        z += e;
        *g = T::lit(e);
    }
    let inv = 1.0 / z;
    for g in grad.iter_mut() {
        *g = T::lit(g.as_f64() * inv) * scale;
    }
    grad[target] -= scale;
    m + z.ln() - logits[target].as_f64()
}

/// Softmax cross-entropy loss in nats and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, target: usize) -> Result<(T, Tensor<T>)> {
    check_index("target", target, logits.len())?;
    logits.ensure_finite()?;
    let mut grad = Tensor::zeros(logits.shape());
    let loss = softmax_xent_raw(logits.data(), target, T::one(), grad.data_mut());
    Ok((T::lit(loss.max(0.0)), grad))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Independent sliding-window oracle.
    fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
        let (ho, wo) = (h - kh + 1, w - kw + 1);
        let mut out = Tensor::zeros(&[co, ho, wo]);
        for o in 0..co {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut s = b.at(&[o]);
                    for c in 0..ci {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                s += k.at(&[o, c, dy, dx]) * x.at(&[c, y + dy, xx + dx]);
                            }
                        }
                    }
                    out.set(&[o, y, xx], s);
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::<f32>::filled(&[1, 3, 3], 1.0);
        let k = Tensor::<f32>::filled(&[1, 1, 3, 3], 1.0);
        let b = Tensor::<f32>::zeros(&[1]);
        let y = conv2d_valid(&x, &k, &b).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn center_kernel_crops() {
        let x = Tensor::<f32>::from_vec(&[1, 5, 5], (0..25).map(|v| v as f32).collect()).unwrap();
        let mut k = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        k.set(&[0, 0, 1, 1], 1.0);
        let y = conv2d_valid(&x, &k, &Tensor::zeros(&[1])).unwrap();
        let want: Vec<f32> = (1..4)
            .flat_map(|r| (1..4).map(move |c| (r * 5 + c) as f32))
            .collect();
        assert_eq!(y.data(), &want[..]);
    }

    #[test]
    fn matches_sliding_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, &[2, 6, 6]);
        let k = rand_tensor(&mut rng, &[4, 2, 3, 3]);
        let b = rand_tensor(&mut rng, &[4]);
        let y = conv2d_valid(&x, &k, &b).unwrap();
        let want = conv_oracle(&x, &k, &b);
        for (a, o) in y.data().iter().zip(want.data()) {
            assert!((a - o).abs() <= 1e-6 * o.abs().max(1.0), "{a} vs {o}");
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::<f32>::zeros(&[2, 4, 4]);
        let b = Tensor::<f32>::zeros(&[1]);
        assert!(conv2d_valid(&x, &Tensor::zeros(&[1, 3, 3, 3]), &b).is_err());
        assert!(conv2d_valid(&x, &Tensor::zeros(&[1, 2, 5, 3]), &b).is_err());
        assert!(conv2d_valid(&x, &Tensor::zeros(&[1, 2, 3, 3]), &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[2, 5, 4]);
        let k = rand_tensor(&mut rng, &[3, 2, 3, 2]);
        let b = Tensor::zeros(&[3]);
        let dout = rand_tensor(&mut rng, &[3, 3, 3]);
        let f = |x: &Tensor<f64>, k: &Tensor<f64>| -> f64 {
            let y = conv2d_valid(x, k, &b).unwrap();
            y.data().iter().zip(dout.data()).map(|(a, b)| a * b).sum()
        };
        let (gi, gk, gb) = conv2d_valid_backward(&x, &k, &dout).unwrap();
        let eps = 1e-6;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += eps;
            xm.data_mut()[i] -= eps;
            let fd = (f(&xp, &k) - f(&xm, &k)) / (2.0 * eps);
            assert!((fd - gi.data()[i]).abs() < 1e-7);
        }
        for i in 0..k.len() {
            let (mut kp, mut km) = (k.clone(), k.clone());
            kp.data_mut()[i] += eps;
            km.data_mut()[i] -= eps;
            let fd = (f(&x, &kp) - f(&x, &km)) / (2.0 * eps);
            assert!((fd - gk.data()[i]).abs() < 1e-7);
        }
        for co in 0..3 {
            let s: f64 = dout.data()[co * 9..(co + 1) * 9].iter().sum();
            assert!((gb.data()[co] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let logits = Tensor::<f64>::zeros(&[4]);
        for t in 0..4 {
            let (loss, _) = softmax_cross_entropy(&logits, t).unwrap();
            assert!((loss - 4f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_correct_class_has_tiny_loss() {
        let logits = Tensor::<f64>::from_vec(&[3], vec![100.0, 0.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, 0).unwrap();
        assert!(loss < 1e-10);
    }

    #[test]
    fn xent_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = rand_tensor(&mut rng, &[10]);
        let target = 6;
        let (_, grad) = softmax_cross_entropy(&logits, target).unwrap();
        let h = 1e-5;
        for i in 0..10 {
            let (mut p, mut m) = (logits.clone(), logits.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (softmax_cross_entropy(&p, target).unwrap().0
                - softmax_cross_entropy(&m, target).unwrap().0)
                / (2.0 * h);
            assert!((fd - grad.data()[i]).abs() < 1e-5, "coord {i}");
        }
    }

    #[test]
    fn xent_target_out_of_range() {
        let logits = Tensor::<f32>::zeros(&[3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, 3),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5, 0.2]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }
}
