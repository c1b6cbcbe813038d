//! Reference computations that share no code with `spsim-core`, used as
//! oracles by the acceptance suite.

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`,
/// from Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                x[i] = -z;
                x[n - 1 - i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                w[n - 1 - i] = w[i];
                break;
            }
        }
    }
    (x, w)
}

/// Adaptive bisection quadrature: a panel is accepted when the 20-point
/// Gauss-Legendre value on it agrees with the sum over its two halves.
pub struct Quadrature {
    x: Vec<f64>,
    w: Vec<f64>,
}

impl Default for Quadrature {
    fn default() -> Self {
        let (x, w) = gauss_legendre(20);
        Quadrature { x, w }
    }
}

impl Quadrature {
    fn panel(&self, f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        h * self
            .x
            .iter()
            .zip(&self.w)
            .map(|(x, w)| w * f(c + h * x))
            .sum::<f64>()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
        let whole = self.panel(&f, a, b);
        let mut stack = vec![(a, b, whole, 0)];
        let mut total = 0.0;
        let scale = whole.abs();
        while let Some((lo, hi, val, depth)) = stack.pop() {
            let mid = 0.5 * (lo + hi);
            let (l, r) = (self.panel(&f, lo, mid), self.panel(&f, mid, hi));
            // Panels whose halves agree to roundoff cannot improve further.
            let tol = (rel_tol * scale.max((l + r).abs()) * (hi - lo) / (b - a))
                .max(64.0 * f64::EPSILON * (l + r).abs());
            if (l + r - val).abs() <= tol || depth > 24 {
                total += l + r;
            } else {
                stack.push((lo, mid, l, depth + 1));
                stack.push((mid, hi, r, depth + 1));
            }
        }
        total
    }

    /// `int exp(-|t - u| / tau) N(u; 0, sigma) du`, split at the cusp and at
    /// the Gaussian's center and truncated at 14 sigma.
    pub fn exp_gauss_convolution(&self, t: f64, tau: f64, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return (-t.abs() / tau).exp();
        }
        let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let f = |u: f64| (-(t - u).abs() / tau - 0.5 * (u / sigma).powi(2)).exp() * norm;
        let edge = 14.0 * sigma;
        let mut cuts = vec![-edge, 0.0, edge];
        if t.abs() < edge {
            cuts.push(t);
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.windows(2)
            .map(|w| self.integrate(f, w[0], w[1], 1e-14))
            .sum()
    }
}

/// Ordered-pair delay histogram by double loop, bins `[lo + i w, lo + (i+1) w)`.
pub fn brute_force_histogram(a: &[u64], b: &[u64], lo: i64, hi: i64, width: i64) -> Vec<u64> {
    let mut counts = vec![0; ((hi - lo) / width) as usize];
    for &x in a {
        for &y in b {
            let d = y as i64 - x as i64;
            if d >= lo && d < hi {
                counts[(d - lo).div_euclid(width) as usize] += 1;
            }
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(20);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let m38: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(38)).sum();
        assert!((m38 - 2.0 / 39.0).abs() < 1e-14);
    }

    #[test]
    fn convolution_limits() {
        let q = Quadrature::default();
        let e = q.integrate(|x| (-x).exp(), 0.0, 30.0, 1e-14);
        assert!((e - (1.0 - (-30.0f64).exp())).abs() < 1e-14);
        // At t = 0 both halves of the cusp see the same Gaussian.
        let (tau, sigma) = (190.0, 50.0);
        let k0 = q.exp_gauss_convolution(0.0, tau, sigma);
        let x = sigma / tau;
        let reference = q.integrate(
            |u| 2.0 * (-u / tau - 0.5 * (u / sigma).powi(2)).exp(),
            0.0,
            14.0 * sigma,
            1e-14,
        ) / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        assert!((k0 / reference - 1.0).abs() < 1e-13);
        assert!(k0 < 1.0 && k0 > 1.0 - x);
    }

    #[test]
    fn brute_force_binning() {
        assert_eq!(brute_force_histogram(&[0], &[100], 0, 200, 10)[10], 1);
        assert_eq!(
            brute_force_histogram(&[10], &[9], -10, 10, 5),
            vec![0, 1, 0, 0]
        );
    }
}
