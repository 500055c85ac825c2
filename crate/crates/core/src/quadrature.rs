//! Quadrature and interpolation helpers shared by the spectral code.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[a, b]`, nodes increasing.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    for i in 0..(n + 1) / 2 {
        // Tricomi initial guess followed by Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, z);
                dp = d;
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = mid - half * z;
        x[n - 1 - i] = mid + half * z;
        w[i] = half * wi;
        w[n - 1 - i] = half * wi;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Neumaier compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for x in it {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Error-free sum: `a + b = s + e` exactly.
pub fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Error-free product: `a · b = p + e` exactly.
pub fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// `init + Σ a_j (hi_j + lo_j)` in doubled working precision.
pub fn dot2(init: f64, a: &[f64], hi: &[f64], lo: &[f64]) -> f64 {
    let mut s = init;
    let mut c = 0.0;
    for ((&x, &h), &l) in a.iter().zip(hi).zip(lo) {
        let (p, ep) = two_prod(x, h);
        let (t, es) = two_sum(s, p);
        s = t;
        c += ep + es + x * l;
    }
    s + c
}

/// Chebyshev interpolant of a smooth function on `[a, b]`.
#[derive(Debug, Clone)]
pub struct Chebyshev {
    a: f64,
    b: f64,
    coeffs: Vec<f64>,
}

impl Chebyshev {
    /// Chebyshev points of the first kind mapped to `[a, b]`.
    pub fn nodes(n: usize, a: f64, b: f64) -> Vec<f64> {
        (0..n)
            .map(|j| {
                let t = (PI * (j as f64 + 0.5) / n as f64).cos();
                0.5 * (a + b) + 0.5 * (b - a) * t
            })
            .collect()
    }

    /// Builds the interpolant from values at [`Chebyshev::nodes`].
    pub fn from_values(a: f64, b: f64, values: &[f64]) -> Self {
        let n = values.len();
        let coeffs = (0..n)
            .map(|k| {
                let s: f64 = values
                    .iter()
                    .enumerate()
                    .map(|(j, &f)| f * (PI * k as f64 * (j as f64 + 0.5) / n as f64).cos())
                    .sum();
                if k == 0 {
                    s / n as f64
                } else {
                    2.0 * s / n as f64
                }
            })
            .collect();
        Self { a, b, coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Largest magnitude among the trailing `count` coefficients.
    pub fn tail(&self, count: usize) -> f64 {
        let n = self.coeffs.len();
        self.coeffs[n.saturating_sub(count)..]
            .iter()
            .fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// Clenshaw evaluation; arguments are clamped to the domain.
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(self.a, self.b);
        let t = (2.0 * x - self.a - self.b) / (self.b - self.a);
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * t * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        t * b1 - b2 + self.coeffs[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubled_dot_recovers_cancelled_terms() {
        let a = [1.0, 1e16, -1e16];
        let hi = [1.0, 1.0 + f64::EPSILON, 1.0];
        let lo = [0.0, 0.0, 0.0];
        assert_eq!(dot2(0.0, &a, &hi, &lo), 1.0 + 1e16 * f64::EPSILON);
        assert_eq!(two_sum(1.0, 1e-17), (1.0, 1e-17));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(12, -1.0, 2.0);
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(22)).sum();
        let exact = (2f64.powi(23) + 1.0) / 23.0;
        assert!((q - exact).abs() / exact < 1e-13);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn gauss_legendre_large_order() {
        let (x, w) = gauss_legendre(256, 0.0, 3.0);
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.cos()).sum();
        assert!((q - 3f64.sin()).abs() < 1e-14);
        assert!(w.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn chebyshev_reproduces_smooth_function() {
        let f = |x: f64| (1.3 * x).cos() * (-0.2 * x).exp();
        let nodes = Chebyshev::nodes(40, 0.0, 3.0);
        let vals: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
        let c = Chebyshev::from_values(0.0, 3.0, &vals);
        for i in 0..50 {
            let x = 3.0 * i as f64 / 49.0;
            assert!((c.eval(x) - f(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }
}
