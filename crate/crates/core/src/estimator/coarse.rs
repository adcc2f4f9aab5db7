//! Non-coherent delay-Doppler map over segments.
//!
//! Each segment `Y_l` is transformed with an inverse FFT across subcarriers
//! (matching `conj(c(tau))`) and a zero-padded forward FFT across its
//! symbols (matching `conj(d(nu))`); squared magnitudes add over segments.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

/// Coarse map with its bin bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseMap {
    /// `N x Q` power map; `Q = padding x symbols per segment`.
    pub map: Array2<f64>,
    /// Delay bin width `1/(N df)`, seconds.
    pub delay_bin: f64,
    /// Doppler bin width `1/(Q T_s)`, hertz.
    pub doppler_bin: f64,
    pub peak: CoarsePeak,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarsePeak {
    pub delay_index: usize,
    pub doppler_index: usize,
    pub tau0: f64,
    /// Signed Doppler in `[-1/(2 T_s), 1/(2 T_s))`.
    pub nu0: f64,
}

/// FFT plans for one `(N, symbols per segment, padding)` shape.
#[derive(Clone)]
pub struct CoarsePlans {
    n: usize,
    reps: usize,
    q: usize,
    ifft_n: Arc<dyn Fft<f64>>,
    fft_q: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CoarsePlans {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoarsePlans")
            .field("n", &self.n)
            .field("reps", &self.reps)
            .field("q", &self.q)
            .finish()
    }
}

impl CoarsePlans {
    pub fn new(n: usize, reps: usize, padding: usize) -> Self {
        let q = reps * padding.max(1);
        let mut planner = FftPlanner::new();
        CoarsePlans {
            n,
            reps,
            q,
            ifft_n: planner.plan_fft_inverse(n),
            fft_q: planner.plan_fft_forward(q),
        }
    }

    pub fn doppler_bins(&self) -> usize {
        self.q
    }

    /// Delay-Doppler map summed over segments.
    pub fn map<'a, I>(&self, segments: I) -> Array2<f64>
    where
        I: IntoIterator<Item = ArrayView2<'a, Complex64>>,
    {
        let (n, r, q) = (self.n, self.reps, self.q);
        let mut map = Array2::<f64>::zeros((n, q));
        let mut cols = vec![Complex64::new(0.0, 0.0); n * r];
        let mut rows = vec![Complex64::new(0.0, 0.0); n * q];
        for seg in segments {
            assert_eq!(seg.dim(), (n, r), "segment shape");
            for k in 0..r {
                for i in 0..n {
                    cols[k * n + i] = seg[[i, k]];
                }
            }
            self.ifft_n.process(&mut cols);
            rows.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for i in 0..n {
                for k in 0..r {
                    rows[i * q + k] = cols[k * n + i];
                }
            }
            self.fft_q.process(&mut rows);
            for (dst, z) in map.iter_mut().zip(&rows) {
                *dst += z.norm_sqr();
            }
        }
        map
    }

    /// Delay-only profile `sum_l |IFFT(Y_l 1)|^2` (Doppler pinned to zero).
    pub fn delay_profile<'a, I>(&self, segments: I) -> Vec<f64>
    where
        I: IntoIterator<Item = ArrayView2<'a, Complex64>>,
    {
        let n = self.n;
        let mut out = vec![0.0; n];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for seg in segments {
            for (i, row) in seg.rows().into_iter().enumerate() {
                buf[i] = row.sum();
            }
            self.ifft_n.process(&mut buf);
            for (dst, z) in out.iter_mut().zip(&buf) {
                *dst += z.norm_sqr();
            }
        }
        out
    }
}

/// Row-major argmax; ties resolve to the lowest delay index, then the
/// lowest Doppler index.
pub fn argmax(map: &Array2<f64>) -> (usize, usize) {
    let mut best = (0, 0);
    let mut bv = f64::NEG_INFINITY;
    for ((i, j), &v) in map.indexed_iter() {
        if v > bv {
            bv = v;
            best = (i, j);
        }
    }
    best
}

/// Converts map indices into bin-center delay and signed Doppler.
pub fn bin_centers(
    delay_index: usize,
    doppler_index: usize,
    n: usize,
    q: usize,
    delta_f: f64,
    t_s: f64,
) -> (f64, f64) {
    let tau = delay_index as f64 / (n as f64 * delta_f);
    let signed = if 2 * doppler_index >= q {
        doppler_index as f64 - q as f64
    } else {
        doppler_index as f64
    };
    (tau, signed / (q as f64 * t_s))
}
