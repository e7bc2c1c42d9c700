//! Layer primitives with explicit forward and backward passes.
//!
//! Convolutions are stride-1, zero-padded to preserve spatial size, and run
//! as im2col + matrix multiply. All layers are generic over the element
//! type so the same code path trains in f32 and gradient-checks in f64.

use ndarray::{s, Array1, Array2, Array4, Array5, ArrayView3, ArrayView4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Element type for network math.
pub trait Scalar:
    ndarray::NdFloat + num_traits::FromPrimitive + num_traits::ToPrimitive + std::iter::Sum
{
    fn from_float(v: f64) -> Self {
        num_traits::FromPrimitive::from_f64(v).expect("finite f64 fits in scalar")
    }
    fn into_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar fits in f64")
    }
}

impl<T> Scalar for T where
    T: ndarray::NdFloat + num_traits::FromPrimitive + num_traits::ToPrimitive + std::iter::Sum
{
}

pub fn sigmoid<F: Scalar>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

/// Target im2col buffer size in elements; keeps peak memory bounded while
/// batching enough columns per matrix multiply.
const COL_BUDGET: usize = 4_000_000;

// ---------------------------------------------------------------------------
// 2D convolution (shared per-frame extractor)
// ---------------------------------------------------------------------------

/// Fill `col` (`cin*kh*kw` x `h*w`) with the patch matrix of one frame.
fn fill_col2d<F: Scalar>(
    x: &ArrayView3<'_, F>,
    col: &mut ndarray::ArrayViewMut2<'_, F>,
    kh: usize,
    kw: usize,
) {
    let (cin, h, w) = x.dim();
    let (pad_y, pad_x) = (kh / 2, kw / 2);
    col.fill(F::zero());
    for c in 0..cin {
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (c * kh + ky) * kw + kx;
                let mut dst = col.row_mut(r);
                // Valid output x-range for this kernel offset.
                let xa = pad_x.saturating_sub(kx);
                let xb = (w + pad_x).saturating_sub(kx).min(w);
                if xa >= xb {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad_y as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = x.slice(s![c, sy as usize, xa + kx - pad_x..xb + kx - pad_x]);
                    dst.slice_mut(s![y * w + xa..y * w + xb]).assign(&src);
                }
            }
        }
    }
}

/// Scatter-add the column gradient of one frame back into `dx`.
fn col2im2d_add<F: Scalar>(
    dcol: &ndarray::ArrayView2<'_, F>,
    dx: &mut ndarray::ArrayViewMut3<'_, F>,
    kh: usize,
    kw: usize,
) {
    let (cin, h, w) = dx.dim();
    let (pad_y, pad_x) = (kh / 2, kw / 2);
    for c in 0..cin {
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (c * kh + ky) * kw + kx;
                let src = dcol.row(r);
                let xa = pad_x.saturating_sub(kx);
                let xb = (w + pad_x).saturating_sub(kx).min(w);
                if xa >= xb {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad_y as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let mut dst =
                        dx.slice_mut(s![c, sy as usize, xa + kx - pad_x..xb + kx - pad_x]);
                    dst += &src.slice(s![y * w + xa..y * w + xb]);
                }
            }
        }
    }
}

/// `x`: (N, Cin, H, W); `w`: (Cout, Cin, kh, kw); same-size output.
pub fn conv2d_forward<F: Scalar>(x: &Array4<F>, w: &Array4<F>, b: &Array1<F>) -> Array4<F> {
    let (n, cin, h, wd) = x.dim();
    let (cout, cin_w, kh, kw) = w.dim();
    assert_eq!(cin, cin_w, "channel mismatch");
    let k = cin * kh * kw;
    let hw = h * wd;
    let wmat = w.view().into_shape_with_order((cout, k)).unwrap();
    let mut y = Array4::zeros((n, cout, h, wd));
    let group = (COL_BUDGET / (k * hw)).clamp(1, n.max(1));
    let mut col = Array2::<F>::zeros((k, group * hw));
    let mut start = 0;
    while start < n {
        let g = group.min(n - start);
        let mut cview = col.slice_mut(s![.., ..g * hw]);
        for gi in 0..g {
            fill_col2d(
                &x.index_axis(Axis(0), start + gi),
                &mut cview.slice_mut(s![.., gi * hw..(gi + 1) * hw]),
                kh,
                kw,
            );
        }
        let out = wmat.dot(&cview.view()); // (cout, g*hw)
        for gi in 0..g {
            for co in 0..cout {
                let mut dst = y.slice_mut(s![start + gi, co, .., ..]);
                let src = out.slice(s![co, gi * hw..(gi + 1) * hw]);
                dst.assign(&src.into_shape_with_order((h, wd)).unwrap());
                dst += b[co];
            }
        }
        start += g;
    }
    y
}

/// Gradients of [`conv2d_forward`]: returns `(dx, dw, db)`.
pub fn conv2d_backward<F: Scalar>(
    x: &Array4<F>,
    w: &Array4<F>,
    dy: &Array4<F>,
) -> (Array4<F>, Array4<F>, Array1<F>) {
    let (n, cin, h, wd) = x.dim();
    let (cout, _, kh, kw) = w.dim();
    let k = cin * kh * kw;
    let hw = h * wd;
    let wmat = w.view().into_shape_with_order((cout, k)).unwrap();
    let mut dx = Array4::zeros(x.dim());
    let mut dwmat = Array2::<F>::zeros((cout, k));
    let mut db = Array1::zeros(cout);
    let group = (COL_BUDGET / (k * hw)).clamp(1, n.max(1));
    let mut col = Array2::<F>::zeros((k, group * hw));
    let mut dymat = Array2::<F>::zeros((cout, group * hw));
    let mut start = 0;
    while start < n {
        let g = group.min(n - start);
        let mut cview = col.slice_mut(s![.., ..g * hw]);
        let mut dyview = dymat.slice_mut(s![.., ..g * hw]);
        for gi in 0..g {
            fill_col2d(
                &x.index_axis(Axis(0), start + gi),
                &mut cview.slice_mut(s![.., gi * hw..(gi + 1) * hw]),
                kh,
                kw,
            );
            for co in 0..cout {
                let src = dy.slice(s![start + gi, co, .., ..]);
                dyview
                    .slice_mut(s![co, gi * hw..(gi + 1) * hw])
                    .assign(&src.into_shape_with_order(hw).unwrap());
            }
        }
        dwmat += &dyview.view().dot(&cview.view().reversed_axes());
        for co in 0..cout {
            db[co] += dyview.slice(s![co, ..]).sum();
        }
        let dcol = wmat.t().dot(&dyview.view()); // (k, g*hw)
        for gi in 0..g {
            col2im2d_add(
                &dcol.slice(s![.., gi * hw..(gi + 1) * hw]),
                &mut dx.index_axis_mut(Axis(0), start + gi),
                kh,
                kw,
            );
        }
        start += g;
    }
    let dw = dwmat.into_shape_with_order(w.dim()).unwrap();
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// 3D convolution (single spatio-temporal volume)
// ---------------------------------------------------------------------------

fn fill_col3d<F: Scalar>(
    x: &ArrayView4<'_, F>,
    t_out: usize,
    col: &mut ndarray::ArrayViewMut2<'_, F>,
    kt: usize,
    kh: usize,
    kw: usize,
) {
    let (cin, t, h, w) = x.dim();
    let pad_t = kt / 2;
    col.fill(F::zero());
    for c in 0..cin {
        for dt in 0..kt {
            let st = t_out as isize + dt as isize - pad_t as isize;
            if st < 0 || st >= t as isize {
                continue;
            }
            let plane = x.index_axis(Axis(0), c);
            let plane = plane.index_axis(Axis(0), st as usize);
            for ky in 0..kh {
                for kx in 0..kw {
                    let r = ((c * kt + dt) * kh + ky) * kw + kx;
                    let pad_y = kh / 2;
                    let pad_x = kw / 2;
                    let mut dst = col.row_mut(r);
                    let xa = pad_x.saturating_sub(kx);
                    let xb = (w + pad_x).saturating_sub(kx).min(w);
                    if xa >= xb {
                        continue;
                    }
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad_y as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = plane.slice(s![sy as usize, xa + kx - pad_x..xb + kx - pad_x]);
                        dst.slice_mut(s![y * w + xa..y * w + xb]).assign(&src);
                    }
                }
            }
        }
    }
}

fn col2im3d_add<F: Scalar>(
    dcol: &ndarray::ArrayView2<'_, F>,
    t_out: usize,
    dx: &mut Array4<F>,
    kt: usize,
    kh: usize,
    kw: usize,
) {
    let (cin, t, h, w) = dx.dim();
    let (pad_t, pad_y, pad_x) = (kt / 2, kh / 2, kw / 2);
    for c in 0..cin {
        for dt in 0..kt {
            let st = t_out as isize + dt as isize - pad_t as isize;
            if st < 0 || st >= t as isize {
                continue;
            }
            for ky in 0..kh {
                for kx in 0..kw {
                    let r = ((c * kt + dt) * kh + ky) * kw + kx;
                    let src = dcol.row(r);
                    let xa = pad_x.saturating_sub(kx);
                    let xb = (w + pad_x).saturating_sub(kx).min(w);
                    if xa >= xb {
                        continue;
                    }
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad_y as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let mut dst = dx.slice_mut(s![
                            c,
                            st as usize,
                            sy as usize,
                            xa + kx - pad_x..xb + kx - pad_x
                        ]);
                        dst += &src.slice(s![y * w + xa..y * w + xb]);
                    }
                }
            }
        }
    }
}

/// `x`: (Cin, T, H, W); `w`: (Cout, Cin, kt, kh, kw); same-size output.
pub fn conv3d_forward<F: Scalar>(x: &Array4<F>, w: &Array5<F>, b: &Array1<F>) -> Array4<F> {
    let (cin, t, h, wd) = x.dim();
    let (cout, cin_w, kt, kh, kw) = w.dim();
    assert_eq!(cin, cin_w, "channel mismatch");
    let k = cin * kt * kh * kw;
    let hw = h * wd;
    let wmat = w.view().into_shape_with_order((cout, k)).unwrap();
    let mut y = Array4::zeros((cout, t, h, wd));
    let mut col = Array2::<F>::zeros((k, hw));
    for ti in 0..t {
        fill_col3d(&x.view(), ti, &mut col.view_mut(), kt, kh, kw);
        let out = wmat.dot(&col); // (cout, hw)
        for co in 0..cout {
            let mut dst = y.slice_mut(s![co, ti, .., ..]);
            dst.assign(
                &out.slice(s![co, ..])
                    .into_shape_with_order((h, wd))
                    .unwrap(),
            );
            dst += b[co];
        }
    }
    y
}

pub fn conv3d_backward<F: Scalar>(
    x: &Array4<F>,
    w: &Array5<F>,
    dy: &Array4<F>,
) -> (Array4<F>, Array5<F>, Array1<F>) {
    let (cin, t, h, wd) = x.dim();
    let (cout, _, kt, kh, kw) = w.dim();
    let k = cin * kt * kh * kw;
    let hw = h * wd;
    let wmat = w.view().into_shape_with_order((cout, k)).unwrap();
    let mut dx = Array4::zeros(x.dim());
    let mut dwmat = Array2::<F>::zeros((cout, k));
    let mut db = Array1::zeros(cout);
    let mut col = Array2::<F>::zeros((k, hw));
    let mut dymat = Array2::<F>::zeros((cout, hw));
    for ti in 0..t {
        fill_col3d(&x.view(), ti, &mut col.view_mut(), kt, kh, kw);
        for co in 0..cout {
            dymat.row_mut(co).assign(
                &dy.slice(s![co, ti, .., ..])
                    .into_shape_with_order(hw)
                    .unwrap(),
            );
            db[co] += dymat.row(co).sum();
        }
        dwmat += &dymat.dot(&col.view().reversed_axes());
        let dcol = wmat.t().dot(&dymat);
        col2im3d_add(&dcol.view(), ti, &mut dx, kt, kh, kw);
    }
    let dw = dwmat.into_shape_with_order(w.dim()).unwrap();
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

/// 2x2 max pooling, stride 2, floor semantics; `idx` stores the flat
/// `(y * W + x)` position of each maximum for the backward pass.
pub fn maxpool2d_forward<F: Scalar>(x: &Array4<F>) -> (Array4<F>, Array4<u32>) {
    let (n, c, h, w) = x.dim();
    let (h2, w2) = (h / 2, w / 2);
    let mut y = Array4::zeros((n, c, h2, w2));
    let mut idx = Array4::zeros((n, c, h2, w2));
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..h2 {
                for ox in 0..w2 {
                    let mut best = x[[ni, ci, 2 * oy, 2 * ox]];
                    let mut best_at = (2 * oy) * w + 2 * ox;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = x[[ni, ci, 2 * oy + dy, 2 * ox + dx]];
                            if v > best {
                                best = v;
                                best_at = (2 * oy + dy) * w + 2 * ox + dx;
                            }
                        }
                    }
                    y[[ni, ci, oy, ox]] = best;
                    idx[[ni, ci, oy, ox]] = best_at as u32;
                }
            }
        }
    }
    (y, idx)
}

pub fn maxpool2d_backward<F: Scalar>(
    dy: &Array4<F>,
    idx: &Array4<u32>,
    input_dim: (usize, usize, usize, usize),
) -> Array4<F> {
    let (_, _, h2, w2) = dy.dim();
    let (_, _, _, w) = input_dim;
    let mut dx = Array4::zeros(input_dim);
    for ((ni, ci, oy, ox), &g) in dy.indexed_iter() {
        let _ = (oy, ox, h2, w2);
        let flat = idx[[ni, ci, oy, ox]] as usize;
        dx[[ni, ci, flat / w, flat % w]] += g;
    }
    dx
}

/// 2x2x2 max pooling over (T, H, W) of a (C, T, H, W) volume.
pub fn maxpool3d_forward<F: Scalar>(x: &Array4<F>) -> (Array4<F>, Array4<u32>) {
    let (c, t, h, w) = x.dim();
    let (t2, h2, w2) = (t / 2, h / 2, w / 2);
    let mut y = Array4::zeros((c, t2, h2, w2));
    let mut idx = Array4::zeros((c, t2, h2, w2));
    for ci in 0..c {
        for ot in 0..t2 {
            for oy in 0..h2 {
                for ox in 0..w2 {
                    let mut best = x[[ci, 2 * ot, 2 * oy, 2 * ox]];
                    let mut best_at = ((2 * ot) * h + 2 * oy) * w + 2 * ox;
                    for dt in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let v = x[[ci, 2 * ot + dt, 2 * oy + dy, 2 * ox + dx]];
                                if v > best {
                                    best = v;
                                    best_at = ((2 * ot + dt) * h + 2 * oy + dy) * w + 2 * ox + dx;
                                }
                            }
                        }
                    }
                    y[[ci, ot, oy, ox]] = best;
                    idx[[ci, ot, oy, ox]] = best_at as u32;
                }
            }
        }
    }
    (y, idx)
}

pub fn maxpool3d_backward<F: Scalar>(
    dy: &Array4<F>,
    idx: &Array4<u32>,
    input_dim: (usize, usize, usize, usize),
) -> Array4<F> {
    let (_, _, h, w) = input_dim;
    let mut dx = Array4::zeros(input_dim);
    for ((ci, ot, oy, ox), &g) in dy.indexed_iter() {
        let flat = idx[[ci, ot, oy, ox]] as usize;
        dx[[ci, flat / (h * w), (flat / w) % h, flat % w]] += g;
    }
    dx
}

// ---------------------------------------------------------------------------
// ReLU and dropout
// ---------------------------------------------------------------------------

pub fn relu_inplace<F: Scalar, D: ndarray::Dimension>(a: &mut ndarray::Array<F, D>) {
    a.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Gradient gate of ReLU given the post-activation values.
pub fn relu_backward_inplace<F: Scalar, D: ndarray::Dimension>(
    grad: &mut ndarray::Array<F, D>,
    post: &ndarray::Array<F, D>,
) {
    ndarray::Zip::from(grad).and(post).for_each(|g, &p| {
        if p <= F::zero() {
            *g = F::zero();
        }
    });
}

/// Inverted-dropout mask: entries are `1/(1-p)` with probability `1-p`,
/// else 0. Inference applies no mask.
pub fn dropout_mask<F: Scalar, D: ndarray::Dimension>(
    shape: D,
    p: f64,
    rng: &mut ChaCha8Rng,
) -> ndarray::Array<F, D> {
    let keep = 1.0 - p;
    let scale = F::from_float(1.0 / keep);
    ndarray::Array::from_shape_simple_fn(shape, || {
        if rng.random_range(0.0..1.0) < keep {
            scale
        } else {
            F::zero()
        }
    })
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// Row-batched dense layer: `x` (N, In) -> (N, Out) with `w` (Out, In).
pub fn dense_forward<F: Scalar>(x: &Array2<F>, w: &Array2<F>, b: &Array1<F>) -> Array2<F> {
    let mut y = x.dot(&w.t());
    y += b;
    y
}

/// Gradients of [`dense_forward`]: returns `(dx, dw, db)`.
pub fn dense_backward<F: Scalar>(
    x: &Array2<F>,
    w: &Array2<F>,
    dy: &Array2<F>,
) -> (Array2<F>, Array2<F>, Array1<F>) {
    let dx = dy.dot(w);
    let dw = dy.t().dot(x);
    let db = dy.sum_axis(Axis(0));
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

/// Per-step cache of gate activations and states.
pub struct LstmCache<F> {
    /// h_0..h_T (T+1 entries).
    pub h: Vec<Array1<F>>,
    /// c_0..c_T.
    pub c: Vec<Array1<F>>,
    /// Per step: (i, f, g, o, tanh_c).
    pub gates: Vec<(Array1<F>, Array1<F>, Array1<F>, Array1<F>, Array1<F>)>,
}

/// Single-layer LSTM over `feats` (T, D); returns the final hidden state.
/// Gate weight rows are ordered `[input, forget, cell, output]`.
pub fn lstm_forward<F: Scalar>(
    feats: &Array2<F>,
    w_ih: &Array2<F>,
    w_hh: &Array2<F>,
    b: &Array1<F>,
) -> (Array1<F>, LstmCache<F>) {
    let (t, _d) = feats.dim();
    let hdim = w_hh.dim().1;
    let mut cache = LstmCache {
        h: vec![Array1::zeros(hdim)],
        c: vec![Array1::zeros(hdim)],
        gates: Vec::with_capacity(t),
    };
    for ti in 0..t {
        let x_t = feats.row(ti);
        let h_prev = cache.h[ti].view();
        let mut z = w_ih.dot(&x_t) + w_hh.dot(&h_prev);
        z += b;
        let i = z.slice(s![0..hdim]).mapv(sigmoid);
        let f = z.slice(s![hdim..2 * hdim]).mapv(sigmoid);
        let g = z.slice(s![2 * hdim..3 * hdim]).mapv(|v| v.tanh());
        let o = z.slice(s![3 * hdim..4 * hdim]).mapv(sigmoid);
        let c_new = &f * &cache.c[ti] + &i * &g;
        let tanh_c = c_new.mapv(|v| v.tanh());
        let h_new = &o * &tanh_c;
        cache.h.push(h_new);
        cache.c.push(c_new);
        cache.gates.push((i, f, g, o, tanh_c));
    }
    (cache.h[t].clone(), cache)
}

/// Backpropagation through time from the gradient at the final hidden state.
/// Returns `(dfeats, dw_ih, dw_hh, db)`.
pub fn lstm_backward<F: Scalar>(
    feats: &Array2<F>,
    cache: &LstmCache<F>,
    w_ih: &Array2<F>,
    w_hh: &Array2<F>,
    dh_last: &Array1<F>,
) -> (Array2<F>, Array2<F>, Array2<F>, Array1<F>) {
    let (t, d) = feats.dim();
    let hdim = w_hh.dim().1;
    let mut dfeats = Array2::zeros((t, d));
    let mut dw_ih = Array2::zeros(w_ih.dim());
    let mut dw_hh = Array2::zeros(w_hh.dim());
    let mut db = Array1::zeros(4 * hdim);
    let mut dh = dh_last.clone();
    let mut dc = Array1::<F>::zeros(hdim);
    let one = F::one();
    for ti in (0..t).rev() {
        let (i, f, g, o, tanh_c) = &cache.gates[ti];
        let c_prev = &cache.c[ti];
        let h_prev = &cache.h[ti];
        // dc accumulates the path through h_t = o * tanh(c_t).
        let dc_total = &dc + &(&dh * o * &tanh_c.mapv(|v| one - v * v));
        let d_o = &dh * tanh_c;
        let d_i = &dc_total * g;
        let d_g = &dc_total * i;
        let d_f = &dc_total * c_prev;
        // Pre-activation gradients.
        let dz_i = &d_i * i * &i.mapv(|v| one - v);
        let dz_f = &d_f * f * &f.mapv(|v| one - v);
        let dz_g = &d_g * &g.mapv(|v| one - v * v);
        let dz_o = &d_o * o * &o.mapv(|v| one - v);
        let mut dz = Array1::zeros(4 * hdim);
        dz.slice_mut(s![0..hdim]).assign(&dz_i);
        dz.slice_mut(s![hdim..2 * hdim]).assign(&dz_f);
        dz.slice_mut(s![2 * hdim..3 * hdim]).assign(&dz_g);
        dz.slice_mut(s![3 * hdim..4 * hdim]).assign(&dz_o);

        let x_t = feats.row(ti);
        dw_ih += &outer(&dz, &x_t);
        dw_hh += &outer(&dz, &h_prev.view());
        db += &dz;
        dfeats.row_mut(ti).assign(&w_ih.t().dot(&dz));
        dh = w_hh.t().dot(&dz);
        dc = &dc_total * f;
    }
    (dfeats, dw_ih, dw_hh, db)
}

fn outer<F: Scalar>(a: &Array1<F>, b: &ndarray::ArrayView1<'_, F>) -> Array2<F> {
    let (n, m) = (a.len(), b.len());
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        let ai = a[i];
        for j in 0..m {
            out[[i, j]] = ai * b[j];
        }
    }
    out
}
