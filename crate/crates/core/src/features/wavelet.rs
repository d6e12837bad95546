//! Daubechies-5 wavelet function tabulated by the cascade algorithm.

/// Ten-tap Daubechies-5 low-pass filter, normalized to sum to sqrt(2).
pub const DB5_LOWPASS: [f64; 10] = [
    0.160_102_397_974_192_9,
    0.603_829_269_797_189_5,
    0.724_308_528_437_772_4,
    0.138_428_145_901_320_3,
    -0.242_294_887_066_382_3,
    -0.032_244_869_584_638_1,
    0.077_571_493_840_045_9,
    -0.006_241_490_212_798_3,
    -0.012_580_751_999_082_0,
    0.003_335_725_285_473_8,
];

/// Quadrature-mirror high-pass partner: `g[n] = (-1)^n h[N-1-n]`.
pub fn db5_highpass() -> [f64; 10] {
    let mut g = [0.0; 10];
    for (n, v) in g.iter_mut().enumerate() {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        *v = sign * DB5_LOWPASS[9 - n];
    }
    g
}

/// Wavelet function sampled on a dyadic grid and shifted so that its
/// support `[0, 9]` becomes `[-4.5, 4.5]`.
#[derive(Debug, Clone)]
pub struct TabulatedWavelet {
    values: Vec<f64>,
    /// Samples per unit time.
    density: f64,
    half_support: f64,
}

impl TabulatedWavelet {
    pub fn db5(iterations: u32) -> Self {
        let (phi, _) = cascade(&DB5_LOWPASS, iterations);
        let g = db5_highpass();
        let step = 1usize << iterations;
        let support = DB5_LOWPASS.len() - 1;
        let len = support * step + 1;
        // psi(t) = sqrt(2) sum_n g[n] phi(2t - n), evaluated at t = m / step
        let values = (0..len)
            .map(|m| {
                let mut acc = 0.0;
                for (n, gn) in g.iter().enumerate() {
                    let idx = 2 * m as isize - (n * step) as isize;
                    if idx >= 0 && (idx as usize) < phi.len() {
                        acc += gn * phi[idx as usize];
                    }
                }
                std::f64::consts::SQRT_2 * acc
            })
            .collect();
        Self {
            values,
            density: step as f64,
            half_support: support as f64 / 2.0,
        }
    }

    pub fn half_support(&self) -> f64 {
        self.half_support
    }

    pub fn grid_spacing(&self) -> f64 {
        1.0 / self.density
    }

    /// Tabulated samples on `[-half_support, half_support]`.
    pub fn samples(&self) -> &[f64] {
        &self.values
    }

    /// Linear interpolation of the centered wavelet; zero outside support.
    pub fn eval(&self, t: f64) -> f64 {
        let pos = (t + self.half_support) * self.density;
        if !(pos >= 0.0) {
            return 0.0;
        }
        let last = self.values.len() - 1;
        let base = pos.floor() as usize;
        if base >= last {
            return if pos == last as f64 { self.values[last] } else { 0.0 };
        }
        let frac = pos - base as f64;
        self.values[base] + (self.values[base + 1] - self.values[base]) * frac
    }
}

/// Scaling function by iterated refinement from a unit impulse. Returns
/// samples at spacing `2^-iterations` over `[0, N-1]` and that spacing's
/// inverse.
pub fn cascade(h: &[f64], iterations: u32) -> (Vec<f64>, usize) {
    let support = h.len() - 1;
    let mut phi = vec![0.0; support + 1];
    phi[0] = 1.0;
    let mut step = 1usize;
    for _ in 0..iterations {
        let next_len = support * 2 * step + 1;
        let mut next = vec![0.0; next_len];
        for (m, out) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (n, hn) in h.iter().enumerate() {
                let shift = n * step;
                if m >= shift && m - shift < phi.len() {
                    acc += hn * phi[m - shift];
                }
            }
            *out = std::f64::consts::SQRT_2 * acc;
        }
        phi = next;
        step *= 2;
    }
    (phi, step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_identities() {
        let h = DB5_LOWPASS;
        let sum: f64 = h.iter().sum();
        assert!((sum - std::f64::consts::SQRT_2).abs() < 1e-12);
        let energy: f64 = h.iter().map(|v| v * v).sum();
        assert!((energy - 1.0).abs() < 1e-12);
        for shift in 1..5 {
            let dot: f64 = (0..10 - 2 * shift).map(|n| h[n] * h[n + 2 * shift]).sum();
            assert!(dot.abs() < 1e-12, "shift {shift}: {dot}");
        }
        let g = db5_highpass();
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn cascade_integrates_to_one() {
        let (phi, step) = cascade(&DB5_LOWPASS, 8);
        assert_eq!(phi.len(), 9 * step + 1);
        let integral = phi.iter().sum::<f64>() / step as f64;
        assert!((integral - 1.0).abs() < 1e-9);
    }

    #[test]
    fn wavelet_moments() {
        let psi = TabulatedWavelet::db5(8);
        let dx = psi.grid_spacing();
        let mean: f64 = psi.samples().iter().sum::<f64>() * dx;
        let energy: f64 = psi.samples().iter().map(|v| v * v).sum::<f64>() * dx;
        assert!(mean.abs() < 1e-6, "{mean}");
        assert!((energy - 1.0).abs() < 1e-2, "{energy}");
        assert_eq!(psi.eval(-5.0), 0.0);
        assert_eq!(psi.eval(4.6), 0.0);
        let mid = psi.samples()[psi.samples().len() / 2];
        assert!((psi.eval(0.0) - mid).abs() < 1e-12);
    }
}
