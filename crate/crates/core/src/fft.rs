//! Multi-dimensional FFT over row-major complex buffers.
//!
//! Uses the scalar planner so results do not depend on the host's SIMD
//! features.

use rustfft::num_complex::Complex64;
use rustfft::FftPlannerScalar;

use crate::volume::strides;

/// In-place unnormalized n-D transform. The inverse is not scaled by 1/N.
pub(crate) fn fft_nd(buf: &mut [Complex64], dims: &[usize], inverse: bool) {
    let mut planner = FftPlannerScalar::<f64>::new();
    let st = strides(dims);
    let total: usize = dims.iter().product();
    debug_assert_eq!(buf.len(), total);
    for (axis, &n) in dims.iter().enumerate() {
        if n == 1 {
            continue;
        }
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let stride = st[axis];
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        // every line along `axis` starts at an index whose axis coordinate is 0
        for start in 0..total {
            if !(start / stride).is_multiple_of(n) {
                continue;
            }
            for (k, slot) in line.iter_mut().enumerate() {
                *slot = buf[start + k * stride];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (k, v) in line.iter().enumerate() {
                buf[start + k * stride] = *v;
            }
        }
    }
}

/// Signed integer frequency index for bin `k` of an `n`-point transform.
pub(crate) fn signed_freq(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}
