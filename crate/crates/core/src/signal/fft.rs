//! Radix-2 FFT, plus arbitrary-length DFT via Bluestein's chirp-z.

use std::f64::consts::PI;

use num_complex::Complex64;

/// In-place iterative radix-2 transform. `inverse` uses the `+i` kernel
/// and does not scale.
pub fn fft_pow2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "length {n} is not a power of two");
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    // twiddles for the largest stage, strided for the smaller ones
    let twiddles: Vec<Complex64> = (0..n / 2)
        .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / n as f64))
        .collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddles[k * step];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Exact-length forward DFT `X_k = Σ x_n e^(−2πi kn/N)` for any `N`.
pub fn dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    if n.is_power_of_two() || n == 0 {
        let mut buf = x.to_vec();
        if n > 0 {
            fft_pow2(&mut buf, false);
        }
        return buf;
    }
    // kn = (k² + n² − (k − n)²) / 2
    let chirp: Vec<Complex64> = (0..n)
        .map(|m| {
            let q = (m as u128 * m as u128 % (2 * n as u128)) as f64;
            Complex64::from_polar(1.0, PI * q / n as f64)
        })
        .collect();
    let m = (2 * n - 1).next_power_of_two();
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..n {
        a[i] = x[i] * chirp[i].conj();
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0];
    for i in 1..n {
        b[i] = chirp[i];
        b[m - i] = chirp[i];
    }
    fft_pow2(&mut a, false);
    fft_pow2(&mut b, false);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    fft_pow2(&mut a, true);
    let scale = 1.0 / m as f64;
    (0..n).map(|k| a[k] * scale * chirp[k].conj()).collect()
}

/// Exact-length inverse DFT, scaled by `1/N`.
pub fn idft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len() as f64;
    let conj: Vec<Complex64> = x.iter().map(|c| c.conj()).collect();
    dft(&conj).into_iter().map(|c| c.conj() / n).collect()
}

#[cfg(test)]
pub(crate) fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, v)| {
                    let r = (k * j % n) as f64;
                    v * Complex64::from_polar(1.0, -2.0 * PI * r / n as f64)
                })
                .sum()
        })
        .collect()
}
