//! Periodic lattice `Λ = L·T^d ∩ εZ^d`, its dual momenta, and ε-weighted
//! analysis on fields living on it.
//!
//! Sites are stored row-major over integer coordinates `0..n` (in units of
//! ε), last axis fastest. The Fourier pair is
//!
//! ```text
//!   f̂(k) = ε^d Σ_x e^{-ik·x} f(x),        f(x) = L^{-d} Σ_k e^{ik·x} f̂(k),
//! ```
//!
//! so that `(f ⋆ g)^ = f̂ ĝ` with `(f ⋆ g)(x) = ε^d Σ_y f(x-y) g(y)`, and a
//! kernel with multiplier `1/(m² + θ(k))` is literally `(-Δ^ε + m²)^{-1}(0,x)`.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Error, Result};

/// Torus geometry. Cheap to clone; the FFT plans are shared.
#[derive(Clone)]
pub struct LatticeSpec {
    d: usize,
    eps: f64,
    side: f64,
    n: usize,
    axis_theta: Vec<f64>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LatticeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatticeSpec")
            .field("d", &self.d)
            .field("eps", &self.eps)
            .field("side", &self.side)
            .field("n_per_side", &self.n)
            .finish()
    }
}

impl PartialEq for LatticeSpec {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.n == other.n && self.eps == other.eps && self.side == other.side
    }
}

/// A dual momentum `k ∈ (2π/L)Z^d ∩ (-π/ε, π/ε]^d` with its Laplacian eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct DualMode {
    pub k: Vec<f64>,
    pub theta: f64,
}

/// Real values indexed by site (or by displacement, for kernels).
#[derive(Debug, Clone, PartialEq)]
pub struct Field(pub Vec<f64>);

impl Field {
    pub fn zeros(len: usize) -> Self {
        Field(vec![0.0; len])
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Field(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        check_len(self.len(), other.len())?;
        Ok(Field(
            self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for Field {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Order of an ε-weighted norm; `f64::INFINITY` selects the sup norm.
pub fn lp_norm(f: &Field, p: f64, spec: &LatticeSpec) -> Result<f64> {
    check_len(spec.sites(), f.len())?;
    if p.is_nan() || p < 1.0 {
        return Err(Error::Domain(format!("L^p norm needs p >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(f.0.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
    }
    let w = spec.volume_weight();
    if p == 1.0 {
        return Ok(w * f.0.iter().map(|v| v.abs()).sum::<f64>());
    }
    if p == 2.0 {
        return Ok((w * f.0.iter().map(|v| v * v).sum::<f64>()).sqrt());
    }
    let s: f64 = f.0.iter().map(|v| v.abs().powf(p)).sum();
    Ok((w * s).powf(1.0 / p))
}

/// `(f ⋆ g)(x) = ε^d Σ_y f(x−y) g(y)`, computed through the transform.
pub fn convolve(f: &Field, g: &Field, spec: &LatticeSpec) -> Result<Field> {
    check_len(spec.sites(), f.len())?;
    check_len(spec.sites(), g.len())?;
    let mut fh = spec.forward(f);
    let gh = spec.forward(g);
    for (a, b) in fh.iter_mut().zip(&gh) {
        *a *= b;
    }
    Ok(spec.inverse_real(fh))
}

/// Sum of `f(x)·g(x)` with the ε^d weight, i.e. the `(·,·)_ε` inner product.
pub fn inner(f: &Field, g: &Field, spec: &LatticeSpec) -> Result<f64> {
    check_len(spec.sites(), f.len())?;
    check_len(spec.sites(), g.len())?;
    Ok(spec.volume_weight() * f.0.iter().zip(&g.0).map(|(a, b)| a * b).sum::<f64>())
}

/// Validated constructor.
pub fn build_lattice(d: usize, eps: f64, side: f64) -> Result<LatticeSpec> {
    LatticeSpec::new(d, eps, side)
}

impl LatticeSpec {
    pub fn new(d: usize, eps: f64, side: f64) -> Result<Self> {
        if !(d == 2 || d == 3) {
            return Err(Error::Config(format!("dimension must be 2 or 3, got {d}")));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::Config(format!("lattice spacing must be positive, got {eps}")));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::Config(format!("torus side must be positive, got {side}")));
        }
        let ratio = side / eps;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "torus side {side} is not a positive integer multiple of spacing {eps}"
            )));
        }
        let n = n as usize;
        let axis_theta = (0..n)
            .map(|j| {
                let s = (PI * j as f64 / n as f64).sin();
                4.0 / (eps * eps) * s * s
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(LatticeSpec {
            d,
            eps,
            side,
            n,
            axis_theta,
            fft_fwd: planner.plan_fft_forward(n),
            fft_inv: planner.plan_fft_inverse(n),
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn n_per_side(&self) -> usize {
        self.n
    }

    /// `|Λ| = n^d`.
    pub fn sites(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// `ε^d`.
    pub fn volume_weight(&self) -> f64 {
        self.eps.powi(self.d as i32)
    }

    /// `L^d`.
    pub fn volume(&self) -> f64 {
        self.side.powi(self.d as i32)
    }

    pub fn coords(&self, index: usize) -> Vec<usize> {
        let mut c = vec![0; self.d];
        let mut rest = index;
        for a in (0..self.d).rev() {
            c[a] = rest % self.n;
            rest /= self.n;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.n + c % self.n)
    }

    /// Index of `x + y` (mod L).
    pub fn add(&self, x: usize, y: usize) -> usize {
        let (cx, cy) = (self.coords(x), self.coords(y));
        let c: Vec<usize> = cx.iter().zip(&cy).map(|(a, b)| (a + b) % self.n).collect();
        self.index(&c)
    }

    /// Index of `x − y` (mod L).
    pub fn sub(&self, x: usize, y: usize) -> usize {
        let (cx, cy) = (self.coords(x), self.coords(y));
        let c: Vec<usize> = cx
            .iter()
            .zip(&cy)
            .map(|(a, b)| (a + self.n - b) % self.n)
            .collect();
        self.index(&c)
    }

    /// Index of `−x`.
    pub fn neg(&self, x: usize) -> usize {
        self.sub(0, x)
    }

    /// The `2d` nearest neighbours of a site, with repetition on tori with
    /// fewer than three sites per side.
    pub fn neighbours(&self, x: usize) -> Vec<usize> {
        let c = self.coords(x);
        let mut out = Vec::with_capacity(2 * self.d);
        for a in 0..self.d {
            for step in [1, self.n - 1] {
                let mut cc = c.clone();
                cc[a] = (cc[a] + step) % self.n;
                out.push(self.index(&cc));
            }
        }
        out
    }

    /// `shift[r][x] = x + r`, used by translation-averaged estimators.
    pub fn translation_table(&self) -> Vec<Vec<usize>> {
        let n = self.sites();
        (0..n).map(|r| (0..n).map(|x| self.add(x, r)).collect()).collect()
    }

    /// Signed mode number in `(-n/2, n/2]` for FFT bin `j`.
    fn mode_number(&self, j: usize) -> i64 {
        let n = self.n as i64;
        let j = j as i64;
        if 2 * j > n {
            j - n
        } else {
            j
        }
    }

    /// `θ(k)` for the mode stored at FFT index `index`.
    pub fn theta_at(&self, index: usize) -> f64 {
        let mut rest = index;
        let mut th = 0.0;
        for _ in 0..self.d {
            th += self.axis_theta[rest % self.n];
            rest /= self.n;
        }
        th
    }

    /// `θ(k)` for every mode, in FFT index order.
    pub fn thetas(&self) -> Vec<f64> {
        (0..self.sites()).map(|i| self.theta_at(i)).collect()
    }

    /// Momentum vector of the mode stored at FFT index `index`.
    pub fn momentum(&self, index: usize) -> Vec<f64> {
        self.coords(index)
            .into_iter()
            .map(|j| 2.0 * PI * self.mode_number(j) as f64 / self.side)
            .collect()
    }

    pub fn dual_modes(&self) -> impl Iterator<Item = DualMode> + '_ {
        (0..self.sites()).map(move |i| DualMode {
            k: self.momentum(i),
            theta: self.theta_at(i),
        })
    }

    /// Largest possible eigenvalue `4d/ε²`.
    pub fn theta_max(&self) -> f64 {
        4.0 * self.d as f64 / (self.eps * self.eps)
    }

    fn fft_in_place(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        if n == 1 {
            return;
        }
        let plan = if inverse { &self.fft_inv } else { &self.fft_fwd };
        let total = buf.len();
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for axis in 0..self.d {
            let stride = n.pow((self.d - 1 - axis) as u32);
            let block = stride * n;
            for start in (0..total).step_by(block) {
                for off in 0..stride {
                    let base = start + off;
                    for (j, v) in line.iter_mut().enumerate() {
                        *v = buf[base + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, v) in line.iter().enumerate() {
                        buf[base + j * stride] = *v;
                    }
                }
            }
        }
    }

    /// `f̂(k) = ε^d Σ_x e^{-ik·x} f(x)` in FFT index order.
    pub fn forward(&self, f: &Field) -> Vec<Complex64> {
        let w = self.volume_weight();
        let mut buf: Vec<Complex64> = f.0.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft_in_place(&mut buf, false);
        for v in &mut buf {
            *v *= w;
        }
        buf
    }

    /// `f(x) = L^{-d} Σ_k e^{ik·x} f̂(k)`, complex result.
    pub fn inverse(&self, mut fh: Vec<Complex64>) -> Vec<Complex64> {
        let w = 1.0 / self.volume();
        self.fft_in_place(&mut fh, true);
        for v in &mut fh {
            *v *= w;
        }
        fh
    }

    /// Inverse transform of a Hermitian spectrum, keeping the real part.
    pub fn inverse_real(&self, fh: Vec<Complex64>) -> Field {
        Field(self.inverse(fh).into_iter().map(|c| c.re).collect())
    }

    /// Real-space kernel whose transform is the real multiplier `m(θ(k))`.
    pub fn kernel_from_multiplier(&self, multiplier: impl Fn(f64) -> f64) -> Field {
        let spectrum = (0..self.sites())
            .map(|i| Complex64::new(multiplier(self.theta_at(i)), 0.0))
            .collect();
        self.inverse_real(spectrum)
    }

    /// Field CSV: header `coord_1,...,coord_d,value`, integer coordinates in
    /// units of ε, rows in site order.
    pub fn write_field_csv<W: Write>(&self, f: &Field, out: &mut W) -> Result<()> {
        check_len(self.sites(), f.len())?;
        let header: Vec<String> = (1..=self.d).map(|a| format!("coord_{a}")).collect();
        writeln!(out, "{},value", header.join(","))?;
        for (i, v) in f.0.iter().enumerate() {
            let c: Vec<String> = self.coords(i).iter().map(|c| c.to_string()).collect();
            writeln!(out, "{},{}", c.join(","), fmt_f64(*v))?;
        }
        Ok(())
    }

    pub fn read_field_csv<R: BufRead>(&self, input: R) -> Result<Field> {
        let mut values = vec![f64::NAN; self.sites()];
        let mut seen = vec![false; self.sites()];
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty field file".into()))??;
        let expected: Vec<String> = (1..=self.d)
            .map(|a| format!("coord_{a}"))
            .chain(std::iter::once("value".to_string()))
            .collect();
        if header.trim() != expected.join(",") {
            return Err(Error::Parse(format!("unexpected header `{}`", header.trim())));
        }
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != self.d + 1 {
                return Err(Error::Parse(format!("row {}: expected {} columns", lineno + 2, self.d + 1)));
            }
            let mut c = Vec::with_capacity(self.d);
            for s in &cols[..self.d] {
                let v: usize = s
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: bad coordinate `{s}`", lineno + 2)))?;
                if v >= self.n {
                    return Err(Error::Parse(format!("row {}: coordinate {v} out of range", lineno + 2)));
                }
                c.push(v);
            }
            let v: f64 = cols[self.d]
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad value `{}`", lineno + 2, cols[self.d])))?;
            if !v.is_finite() {
                return Err(Error::Parse(format!("row {}: non-finite value", lineno + 2)));
            }
            let i = self.index(&c);
            values[i] = v;
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Parse(format!("site {:?} missing", self.coords(missing))));
        }
        Ok(Field(values))
    }
}

/// Shortest round-trip decimal representation; deterministic across runs.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// `1^ε_0`: value `ε^{-d}` at the origin, zero elsewhere.
pub fn delta_at_origin(spec: &LatticeSpec) -> Field {
    let mut f = Field::zeros(spec.sites());
    f.0[0] = 1.0 / spec.volume_weight();
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_convolve(f: &Field, g: &Field, spec: &LatticeSpec) -> Field {
        let n = spec.sites();
        let w = spec.volume_weight();
        Field(
            (0..n)
                .map(|x| w * (0..n).map(|y| f[spec.sub(x, y)] * g[y]).sum::<f64>())
                .collect(),
        )
    }

    #[test]
    fn single_site_torus() {
        let spec = build_lattice(2, 1.0, 1.0).unwrap();
        assert_eq!(spec.sites(), 1);
        let modes: Vec<_> = spec.dual_modes().collect();
        assert_eq!(modes.len(), 1);
        assert_eq!(modes[0].theta, 0.0);
    }

    #[test]
    fn four_site_eigenvalues() {
        let spec = build_lattice(2, 1.0, 2.0).unwrap();
        let mut th = spec.thetas();
        th.sort_by(f64::total_cmp);
        for (a, b) in th.iter().zip([0.0, 4.0, 4.0, 8.0]) {
            assert!((a - b).abs() < 1e-12, "{th:?}");
        }
    }

    #[test]
    fn nyquist_axis_eigenvalue_3d() {
        let spec = build_lattice(3, 0.5, 1.0).unwrap();
        assert_eq!(spec.sites(), 8);
        let single_axis = spec
            .dual_modes()
            .filter(|m| m.k.iter().filter(|k| **k != 0.0).count() == 1)
            .map(|m| m.theta)
            .fold(0.0, f64::max);
        assert!((single_axis - 16.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(matches!(build_lattice(2, 0.3, 1.0), Err(Error::Config(_))));
        assert!(matches!(build_lattice(4, 1.0, 2.0), Err(Error::Config(_))));
        assert!(matches!(build_lattice(1, 1.0, 2.0), Err(Error::Config(_))));
        assert!(matches!(build_lattice(2, -1.0, 2.0), Err(Error::Config(_))));
        assert!(build_lattice(3, 0.125, 2.0).is_ok());
    }

    #[test]
    fn momenta_lie_in_brillouin_zone() {
        let spec = build_lattice(2, 0.5, 2.0).unwrap();
        let cut = PI / spec.eps();
        for m in spec.dual_modes() {
            for k in &m.k {
                assert!(*k > -cut - 1e-12 && *k <= cut + 1e-12);
            }
            let direct: f64 = m
                .k
                .iter()
                .map(|k| 4.0 / 0.25 * (k * 0.5 / 2.0).sin().powi(2))
                .sum();
            assert!((direct - m.theta).abs() < 1e-10);
        }
    }

    #[test]
    fn delta_is_convolution_identity() {
        let spec = build_lattice(2, 0.5, 2.0).unwrap();
        let g = Field((0..spec.sites()).map(|i| (i as f64 * 0.7).sin()).collect());
        let out = convolve(&delta_at_origin(&spec), &g, &spec).unwrap();
        for (a, b) in out.0.iter().zip(&g.0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_convolve_to_volume() {
        let spec = build_lattice(2, 1.0, 2.0).unwrap();
        let one = Field::constant(4, 1.0);
        let out = convolve(&one, &one, &spec).unwrap();
        for v in out.0 {
            assert!((v - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_matches_direct_sum() {
        for (d, eps, side) in [(2, 1.0, 2.0), (2, 0.5, 2.0), (3, 0.5, 1.5), (2, 0.25, 1.0)] {
            let spec = build_lattice(d, eps, side).unwrap();
            let n = spec.sites();
            let f = Field((0..n).map(|i| ((i * 7 + 3) % 11) as f64 - 4.2).collect());
            let g = Field((0..n).map(|i| ((i * 5 + 1) % 13) as f64 * 0.3).collect());
            let fast = convolve(&f, &g, &spec).unwrap();
            let slow = naive_convolve(&f, &g, &spec);
            let scale = slow.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            for (a, b) in fast.0.iter().zip(&slow.0) {
                assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn norms_follow_volume_normalisation() {
        let spec = build_lattice(2, 0.5, 1.0).unwrap();
        let one = Field::constant(spec.sites(), 1.0);
        assert!((lp_norm(&one, 1.0, &spec).unwrap() - 1.0).abs() < 1e-15);
        for s in [build_lattice(2, 0.5, 1.0).unwrap(), build_lattice(3, 0.25, 1.0).unwrap()] {
            let delta = delta_at_origin(&s);
            assert!((lp_norm(&delta, 1.0, &s).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(lp_norm(&one, 0.5, &spec), Err(Error::Domain(_))));
        let f = Field(vec![1.0, -3.0, 2.0, 0.5]);
        assert_eq!(lp_norm(&f, f64::INFINITY, &spec).unwrap(), 3.0);
    }

    #[test]
    fn parseval_with_module_convention() {
        let spec = build_lattice(2, 0.5, 2.0).unwrap();
        let f = Field((0..spec.sites()).map(|i| (i as f64).cos() + 0.1 * i as f64).collect());
        let l2 = lp_norm(&f, 2.0, &spec).unwrap();
        let direct = (0.25 * f.0.iter().map(|v| v * v).sum::<f64>()).sqrt();
        assert!((l2 - direct).abs() < 1e-14);
        // ‖f‖²_{L²} = L^{-d} Σ_k |f̂(k)|²
        let spectral: f64 =
            spec.forward(&f).iter().map(|c| c.norm_sqr()).sum::<f64>() / spec.volume();
        assert!((spectral.sqrt() - l2).abs() < 1e-12 * l2);
    }

    #[test]
    fn csv_roundtrip_and_layout() {
        let spec = build_lattice(2, 0.5, 1.0).unwrap();
        let f = Field(vec![1.0, 2.5, -3.0, 0.125]);
        let mut buf = Vec::new();
        spec.write_field_csv(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "coord_1,coord_2,value\n0,0,1.0\n0,1,2.5\n1,0,-3.0\n1,1,0.125\n");
        let back = spec.read_field_csv(&buf[..]).unwrap();
        assert_eq!(back, f);
        assert!(spec.read_field_csv(&b"coord_1,value\n0,1.0\n"[..]).is_err());
    }

    #[test]
    fn neighbour_multiplicity_on_small_tori() {
        let spec = build_lattice(2, 1.0, 2.0).unwrap();
        let nb = spec.neighbours(0);
        assert_eq!(nb.len(), 4);
        assert_eq!(nb.iter().filter(|&&y| y == 1).count(), 2);
        assert_eq!(nb.iter().filter(|&&y| y == 2).count(), 2);
        let one = build_lattice(3, 1.0, 1.0).unwrap();
        assert!(one.neighbours(0).iter().all(|&y| y == 0));
    }
}
