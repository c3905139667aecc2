//! Quadrature nodes and small statistics helpers shared by the oracle, the
//! sampler estimators and the criterion integrator.

use std::f64::consts::PI;

/// Gauss–Hermite nodes and weights for `∫ e^{-x²} f(x) dx`, ascending nodes.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            // Orthonormal Hermite recurrence.
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / (pp * pp);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..m {
        nodes[i] = -x[i];
        weights[i] = w[i];
        nodes[n - 1 - i] = x[i];
        weights[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending nodes.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = wi;
        weights[n - 1 - i] = wi;
    }
    (nodes, weights)
}

/// `∫_a^b f` by composite Gauss–Legendre with `cells` equal cells of `order` points.
pub fn integrate_gl(f: impl Fn(f64) -> f64, a: f64, b: f64, cells: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / cells as f64;
    let mut s = 0.0;
    for c in 0..cells {
        let lo = a + c as f64 * h;
        let mid = lo + 0.5 * h;
        for (xi, wi) in x.iter().zip(&w) {
            s += wi * 0.5 * h * f(mid + 0.5 * h * xi);
        }
    }
    s
}

/// `∫_0^∞ f` via `x = u/(1−u)` and composite Gauss–Legendre on `[0,1)`.
pub fn integrate_half_line(f: impl Fn(f64) -> f64, cells: usize, order: usize) -> f64 {
    integrate_gl(
        |u| {
            if u >= 1.0 {
                return 0.0;
            }
            let x = u / (1.0 - u);
            let jac = 1.0 / ((1.0 - u) * (1.0 - u));
            let v = f(x) * jac;
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        cells,
        order,
    )
}

/// Mean with batch-means standard error and effective sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub mean: f64,
    pub stderr: f64,
    pub ess: f64,
}

/// Batch means over `n_batches` contiguous blocks (trailing remainder dropped
/// from the error estimate but kept in the mean).
pub fn batch_means(series: &[f64], n_batches: usize) -> BatchStats {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let nb = n_batches.min(n).max(2);
    let b = n / nb;
    if b == 0 || n < 2 {
        return BatchStats { mean, stderr: f64::INFINITY, ess: 0.0 };
    }
    let bm: Vec<f64> = (0..nb)
        .map(|i| series[i * b..(i + 1) * b].iter().sum::<f64>() / b as f64)
        .collect();
    let bmean = bm.iter().sum::<f64>() / nb as f64;
    let var_bm = bm.iter().map(|v| (v - bmean).powi(2)).sum::<f64>() / (nb - 1) as f64;
    let stderr = (var_bm / nb as f64).sqrt();
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let ess = if stderr > 0.0 { (var / (stderr * stderr)).min(n as f64) } else { n as f64 };
    BatchStats { mean, stderr, ess }
}

/// Combine independent estimates (one per chain) into a pooled mean and error.
pub fn pool(stats: &[BatchStats]) -> BatchStats {
    let k = stats.len() as f64;
    let mean = stats.iter().map(|s| s.mean).sum::<f64>() / k;
    let stderr = stats.iter().map(|s| s.stderr * s.stderr).sum::<f64>().sqrt() / k;
    let ess = stats.iter().map(|s| s.ess).sum::<f64>();
    BatchStats { mean, stderr, ess }
}

/// Jackknife standard error of `statistic` over leave-one-out replicas.
/// `replicas[i]` is the statistic evaluated without block `i`.
pub fn jackknife_stderr(replicas: &[f64]) -> f64 {
    let n = replicas.len() as f64;
    if replicas.len() < 2 {
        return f64::INFINITY;
    }
    let m = replicas.iter().sum::<f64>() / n;
    ((n - 1.0) / n * replicas.iter().map(|r| (r - m).powi(2)).sum::<f64>()).sqrt()
}

/// `log Σ exp(a_i)` accumulated stably.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        LogSumExp { max: f64::NEG_INFINITY, sum: 0.0 }
    }
}

impl LogSumExp {
    pub fn add(&mut self, a: f64) {
        if a == f64::NEG_INFINITY {
            return;
        }
        if a > self.max {
            self.sum = self.sum * (self.max - a).exp() + 1.0;
            self.max = a;
        } else {
            self.sum += (a - self.max).exp();
        }
    }

    pub fn value(&self) -> f64 {
        self.max + self.sum.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_integrates_moments() {
        for n in [1, 2, 5, 32, 64, 128] {
            let (x, w) = gauss_hermite(n);
            let m0: f64 = w.iter().sum();
            assert!((m0 - PI.sqrt()).abs() < 1e-12, "n={n}");
            if n >= 3 {
                let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
                assert!((m2 - PI.sqrt() / 2.0).abs() < 1e-12);
                let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
                assert!((m4 - 0.75 * PI.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn legendre_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(4);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(6)).sum();
        assert!((s - 2.0 / 7.0).abs() < 1e-14);
        let v = integrate_half_line(|x| (-x).exp(), 64, 8);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_means_of_iid_constant_free_series() {
        let s: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let b = batch_means(&s, 20);
        assert_eq!(b.mean, 0.0);
        assert_eq!(b.stderr, 0.0);
    }

    #[test]
    fn logsumexp_matches_direct() {
        let mut l = LogSumExp::default();
        for a in [-1.0, 3.0, 0.5, -700.0] {
            l.add(a);
        }
        let direct = ((-1.0f64).exp() + 3.0f64.exp() + 0.5f64.exp()).ln();
        assert!((l.value() - direct).abs() < 1e-14);
    }
}
