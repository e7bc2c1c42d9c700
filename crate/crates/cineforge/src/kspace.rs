//! Forward/inverse 2D Fourier transforms between image space and k-space.
//!
//! The unitary convention is used in both directions (scale `1/sqrt(H*W)`
//! each way), so Parseval's identity holds exactly and a forward/inverse
//! pair is the identity. The DC component sits at index `(0, 0)`
//! (unshifted layout), matching line-by-line Cartesian k-space indexing.

use std::cell::RefCell;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::{num_complex::Complex, FftDirection, FftPlanner};

/// Complex 2D Fourier coefficients of one frame, DC at `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceFrame {
    pub coeffs: Array2<Complex64>,
}

impl KSpaceFrame {
    pub fn dims(&self) -> (usize, usize) {
        self.coeffs.dim()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_rows_inplace(data: &mut Array2<Complex64>, direction: FftDirection) {
    let (_, w) = data.dim();
    PLANNER.with(|p| {
        let fft = p.borrow_mut().plan_fft(w, direction);
        let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        for mut row in data.rows_mut() {
            let slice = row.as_slice_mut().expect("row-major layout");
            fft.process_with_scratch(slice, &mut scratch);
        }
    });
}

fn fft2_inplace(data: Array2<Complex64>, direction: FftDirection) -> Array2<Complex64> {
    let mut data = data;
    fft_rows_inplace(&mut data, direction);
    // Transpose so columns become contiguous rows, transform, transpose back.
    let mut t = data.reversed_axes().as_standard_layout().into_owned();
    fft_rows_inplace(&mut t, direction);
    t.reversed_axes().as_standard_layout().into_owned()
}

/// Unitary 2D DFT of a real-valued frame.
pub fn dft2(frame: ArrayView2<'_, f32>) -> KSpaceFrame {
    let (h, w) = frame.dim();
    let data = frame.mapv(|v| Complex64::new(v as f64, 0.0));
    let mut coeffs = fft2_inplace(data, FftDirection::Forward);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    coeffs.mapv_inplace(|c| c * scale);
    KSpaceFrame { coeffs }
}

/// Unitary inverse 2D DFT, returned as a complex field.
///
/// Corrupted spectra are generally not Hermitian, so the inverse has a
/// nonzero imaginary part; [`idft2`] takes the magnitude, which is what a
/// magnitude-image reconstruction pipeline produces.
pub fn idft2_complex(k: &KSpaceFrame) -> Array2<Complex64> {
    let (h, w) = k.dims();
    let mut out = fft2_inplace(k.coeffs.clone(), FftDirection::Inverse);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    out.mapv_inplace(|c| c * scale);
    out
}

/// Inverse transform followed by the complex magnitude.
pub fn idft2(k: &KSpaceFrame) -> Array2<f32> {
    idft2_complex(k).mapv(|c| c.norm() as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    use crate::rng::RngStream;

    fn random_frame(h: usize, w: usize, stream: &RngStream) -> Array2<f32> {
        let mut rng = stream.rng();
        Array2::from_shape_fn((h, w), |_| rng.random_range(0.0f32..1.0))
    }

    #[test]
    fn constant_frame_has_dc_only() {
        let v = 0.75f32;
        let frame = Array2::from_elem((16, 12), v);
        let k = dft2(frame.view());
        let expected_dc = v as f64 * (16.0f64 * 12.0).sqrt();
        assert!((k.coeffs[[0, 0]].re - expected_dc).abs() < 1e-9);
        assert!(k.coeffs[[0, 0]].im.abs() < 1e-9);
        for ((u, vv), c) in k.coeffs.indexed_iter() {
            if (u, vv) != (0, 0) {
                assert!(c.norm() < 1e-9, "nonzero at ({u},{vv}): {c}");
            }
        }
    }

    #[test]
    fn impulse_has_flat_magnitude() {
        let mut frame = Array2::zeros((10, 14));
        frame[[3, 5]] = 1.0f32;
        let k = dft2(frame.view());
        let expected = 1.0 / (10.0f64 * 14.0).sqrt();
        for c in k.coeffs.iter() {
            assert!((c.norm() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn parseval_holds_on_random_frames() {
        for trial in 0..5 {
            let frame = random_frame(80, 80, &RngStream::new(11, trial));
            let k = dft2(frame.view());
            let img_energy: f64 = frame.iter().map(|&v| (v as f64) * (v as f64)).sum();
            let k_energy: f64 = k.coeffs.iter().map(|c| c.norm_sqr()).sum();
            assert!(
                (img_energy - k_energy).abs() <= 1e-6 * img_energy,
                "Parseval violated: {img_energy} vs {k_energy}"
            );
        }
    }

    #[test]
    fn real_input_spectrum_is_hermitian() {
        let frame = random_frame(24, 20, &RngStream::new(3, 0));
        let k = dft2(frame.view());
        let (h, w) = k.dims();
        let peak = k.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for ((u, v), c) in k.coeffs.indexed_iter() {
            let mirror = k.coeffs[[(h - u) % h, (w - v) % w]].conj();
            assert!((c - mirror).norm() <= 1e-6 * peak);
        }
    }

    #[test]
    fn roundtrip_recovers_nonnegative_frame() {
        let frame = random_frame(33, 47, &RngStream::new(5, 0));
        let back = idft2(&dft2(frame.view()));
        let max_err = frame
            .iter()
            .zip(back.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err < 1e-5, "max err {max_err}");
    }

    #[test]
    fn zero_spectrum_gives_zero_frame() {
        let k = KSpaceFrame {
            coeffs: Array2::from_elem((8, 8), Complex64::new(0.0, 0.0)),
        };
        assert!(idft2(&k).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hermitian_symmetrized_spectrum_inverts_to_real() {
        // Oracle: symmetrize an arbitrary spectrum by averaging with its
        // mirrored conjugate, which forces a real-valued inverse.
        let mut rng = RngStream::new(9, 1).rng();
        let (h, w) = (16, 16);
        let raw = Array2::from_shape_fn((h, w), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let sym = Array2::from_shape_fn((h, w), |(u, v)| {
            0.5 * (raw[[u, v]] + raw[[(h - u) % h, (w - v) % w]].conj())
        });
        let inv = idft2_complex(&KSpaceFrame { coeffs: sym });
        let max_imag = inv.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
        assert!(max_imag < 1e-6, "imaginary residue {max_imag}");
    }
}
