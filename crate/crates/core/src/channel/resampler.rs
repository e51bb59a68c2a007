//! Kaiser-windowed sinc interpolator evaluated from a polyphase table.

use num_complex::Complex64;
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Number of taps per output sample.
pub const TAPS: usize = 32;
pub const HALF_TAPS: usize = TAPS / 2;
pub const KAISER_BETA: f64 = 8.0;
/// Table resolution; intermediate phases are linearly interpolated.
const PHASES: usize = 4096;

/// Zeroth-order modified Bessel function of the first kind (power series).
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn window(x: f64) -> f64 {
    let u = x / HALF_TAPS as f64;
    bessel_i0(KAISER_BETA * (1.0 - u * u).max(0.0).sqrt()) / bessel_i0(KAISER_BETA)
}

fn kernel(x: f64) -> f64 {
    if x.abs() > HALF_TAPS as f64 {
        return 0.0;
    }
    if x == 0.0 {
        return 1.0;
    }
    if x == x.round() {
        // exact zero crossings keep integer delays bit-exact
        return 0.0;
    }
    (PI * x).sin() / (PI * x) * window(x)
}

/// Adds `(a + b x) * window(x)` so the row reproduces constants and linear
/// ramps exactly. Without it the 32 taps straddle a fractional position
/// asymmetrically and the row carries a small group-delay bias.
fn correct_moments(row: &mut [f64; TAPS], x: &[f64; TAPS]) {
    let mut m = [[0.0; 2]; 2];
    let mut r = [1.0, 0.0];
    for i in 0..TAPS {
        let g = window(x[i]);
        m[0][0] += g;
        m[0][1] += g * x[i];
        m[1][1] += g * x[i] * x[i];
        r[0] -= row[i];
        r[1] -= row[i] * x[i];
    }
    m[1][0] = m[0][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let a = (r[0] * m[1][1] - r[1] * m[0][1]) / det;
    let b = (m[0][0] * r[1] - m[1][0] * r[0]) / det;
    for i in 0..TAPS {
        row[i] += (a + b * x[i]) * window(x[i]);
    }
}

/// Row `p` holds the weights for fractional position `p / PHASES`, applied
/// to samples `n0 - 15 ..= n0 + 16`. Every row has unit DC gain and zero
/// first moment.
fn table() -> &'static [[f64; TAPS]] {
    static TABLE: OnceLock<Vec<[f64; TAPS]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..=PHASES)
            .map(|p| {
                let frac = p as f64 / PHASES as f64;
                let mut row = [0.0; TAPS];
                if frac == 0.0 || frac == 1.0 {
                    // integer positions: a single unit tap
                    row[HALF_TAPS - 1 + p / PHASES] = 1.0;
                    return row;
                }
                let x: [f64; TAPS] =
                    std::array::from_fn(|i| frac + (HALF_TAPS - 1) as f64 - i as f64);
                for (w, &xi) in row.iter_mut().zip(&x) {
                    *w = kernel(xi);
                }
                correct_moments(&mut row, &x);
                row
            })
            .collect()
    })
}

/// Band-limited value of `samples` at fractional index `position`; samples
/// outside the slice count as zero.
pub fn interpolate(samples: &[Complex64], position: f64) -> Complex64 {
    let n0 = position.floor();
    let frac = position - n0;
    let n0 = n0 as i64;
    let first = n0 - (HALF_TAPS as i64 - 1);
    let last = n0 + HALF_TAPS as i64;
    if last < 0 || first >= samples.len() as i64 {
        return Complex64::new(0.0, 0.0);
    }

    let f = frac * PHASES as f64;
    let p = (f.floor() as usize).min(PHASES - 1);
    let t = f - p as f64;
    let table = table();
    let (lo, hi) = (&table[p], &table[p + 1]);

    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..TAPS {
        let n = first + i as i64;
        if n < 0 || n >= samples.len() as i64 {
            continue;
        }
        let w = if t == 0.0 {
            lo[i]
        } else {
            lo[i] + t * (hi[i] - lo[i])
        };
        if w != 0.0 {
            acc += samples[n as usize] * w;
        }
    }
    acc
}
