//! Candidate and validated majorizing kernels.
//!
//! A kernel is a positive function h on R^n, singular at worst on a union of
//! block coordinate subspaces, that either satisfies or is being tested
//! against the convolution inequality `h*h(xi) <= B |xi|^theta h(xi)`.
//! Validated kernels must have `theta < n/2`; candidates with larger
//! exponents are kept around deliberately so the nonexistence machinery can
//! demonstrate how they fail.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::quad::{self, linear_fit};

/// Surface measure of the unit sphere S^{n-1} in R^n.
pub fn sphere_area(n: usize) -> f64 {
    2.0 * std::f64::consts::PI.powf(n as f64 / 2.0) / gamma(n as f64 / 2.0)
}

/// Parametric form of a kernel. All forms except `Product` are radial.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum KernelForm {
    /// `|xi|^{-a}`
    PowerLaw { exponent: f64 },
    /// `|xi|^{-a_in}` inside the crossover radius, matched continuously to
    /// `|xi|^{-a_out}` outside.
    TruncatedPower {
        inner_exponent: f64,
        outer_exponent: f64,
        crossover_radius: f64,
    },
    /// `|xi|^{-a} e^{-c |xi|}`
    ExpDamped { exponent: f64, decay_rate: f64 },
    /// `prod_i r_i^{-(d_i - theta_i)}` over a partition of the coordinates
    /// into blocks of dimensions `d_i`, with `r_i` the block radii.
    Product { blocks: Vec<(usize, f64)> },
    /// Radial table, interpolated linearly in log-log coordinates and
    /// extrapolated with the boundary slopes. `log_values` holds ln h.
    TabulatedRadial { radii: Vec<f64>, log_values: Vec<f64> },
}

/// A candidate or validated majorizing kernel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Kernel {
    dim: usize,
    #[serde(flatten)]
    form: KernelForm,
    /// Overall positive prefactor; `standardize` rescales it.
    scale: f64,
    /// Claimed convolution-inequality exponent.
    theta: f64,
    /// Sharp constant estimate, once one has been computed or claimed.
    sharp_b: Option<f64>,
    /// Whether this kernel passed the validation gate.
    validated: bool,
}

impl Kernel {
    /// Build a candidate kernel. Checks parameter sanity but does not
    /// enforce the exponent gate, so nonexistence probes can construct
    /// candidates with any `theta >= 0`.
    pub fn candidate(dim: usize, form: KernelForm, scale: f64, theta: f64) -> Result<Kernel> {
        if dim == 0 {
            return Err(Error::Config("kernel dimension must be positive".into()));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Config(format!("kernel scale must be positive, got {scale}")));
        }
        if theta < 0.0 || !theta.is_finite() {
            return Err(Error::Config(format!("theta must be a nonnegative real, got {theta}")));
        }
        match &form {
            KernelForm::PowerLaw { exponent } => {
                if !exponent.is_finite() {
                    return Err(Error::Config("power-law exponent must be finite".into()));
                }
            }
            KernelForm::TruncatedPower {
                inner_exponent,
                outer_exponent,
                crossover_radius,
            } => {
                if !(crossover_radius > &0.0) {
                    return Err(Error::Config("crossover radius must be positive".into()));
                }
                if !inner_exponent.is_finite() || !outer_exponent.is_finite() {
                    return Err(Error::Config("truncated-power exponents must be finite".into()));
                }
            }
            KernelForm::ExpDamped { decay_rate, exponent } => {
                if !(decay_rate > &0.0) {
                    return Err(Error::Config(format!(
                        "exp-damped decay rate must be positive, got {decay_rate}"
                    )));
                }
                if !exponent.is_finite() {
                    return Err(Error::Config("exp-damped exponent must be finite".into()));
                }
            }
            KernelForm::Product { blocks } => {
                if blocks.len() < 2 {
                    return Err(Error::Config("product kernel needs at least two blocks".into()));
                }
                let total: usize = blocks.iter().map(|(d, _)| d).sum();
                if total != dim {
                    return Err(Error::Config(format!(
                        "product block dimensions sum to {total}, kernel dimension is {dim}"
                    )));
                }
                for &(d, th) in blocks {
                    if d == 0 {
                        return Err(Error::Config("product block dimension must be positive".into()));
                    }
                    if !(th > 0.0) || th >= d as f64 / 2.0 {
                        return Err(Error::Config(format!(
                            "block exponent theta_i = {th} violates 0 < theta_i < d_i/2 = {}",
                            d as f64 / 2.0
                        )));
                    }
                }
            }
            KernelForm::TabulatedRadial { radii, log_values } => {
                if radii.len() < 2 || radii.len() != log_values.len() {
                    return Err(Error::Config(
                        "tabulated kernel needs matching radius and value tables of length >= 2".into(),
                    ));
                }
                if !radii.windows(2).all(|w| w[0] > 0.0 && w[0] < w[1]) {
                    return Err(Error::Config("tabulated radii must be positive and strictly increasing".into()));
                }
                if log_values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config(
                        "tabulated kernel values must be strictly positive and finite".into(),
                    ));
                }
            }
        }
        Ok(Kernel {
            dim,
            form,
            scale,
            theta,
            sharp_b: None,
            validated: false,
        })
    }

    /// Build a validated kernel. Rejects `theta >= n/2` outright: no fully
    /// supported kernel can satisfy the inequality there.
    pub fn validated(dim: usize, form: KernelForm, scale: f64, theta: f64) -> Result<Kernel> {
        let half_n = dim as f64 / 2.0;
        if theta >= half_n {
            return Err(Error::TheoremGate { theta, half_n, dim });
        }
        let mut k = Kernel::candidate(dim, form, scale, theta)?;
        k.validated = true;
        Ok(k)
    }

    /// Tabulate h from positive values (checked finite), stored as logs.
    pub fn tabulated(dim: usize, radii: Vec<f64>, values: Vec<f64>, theta: f64) -> Result<Kernel> {
        if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(
                "tabulated kernel values must be strictly positive and finite".into(),
            ));
        }
        let log_values = values.iter().map(|v| v.ln()).collect();
        Kernel::candidate(dim, KernelForm::TabulatedRadial { radii, log_values }, 1.0, theta)
    }

    /// The Le Jan-Sznitman kernel `pi^{-3} |xi|^{-2}` on R^3, the standardized
    /// solution of `h*h = |xi| h`.
    pub fn ljs() -> Kernel {
        let mut k = Kernel::validated(
            3,
            KernelForm::PowerLaw { exponent: 2.0 },
            std::f64::consts::PI.powi(-3),
            1.0,
        )
        .expect("LJS kernel is valid");
        k.sharp_b = Some(1.0);
        k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn form(&self) -> &KernelForm {
        &self.form
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn sharp_b(&self) -> Option<f64> {
        self.sharp_b
    }

    pub fn set_sharp_b(&mut self, b: f64) {
        self.sharp_b = Some(b);
    }

    pub fn is_validated(&self) -> bool {
        self.validated
    }

    /// True for every form whose value depends on |xi| alone.
    pub fn is_radial(&self) -> bool {
        !matches!(self.form, KernelForm::Product { .. })
    }

    /// Multiply the kernel by a positive constant.
    pub fn scaled(&self, c: f64) -> Result<Kernel> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Config(format!("scaling constant must be positive, got {c}")));
        }
        let mut k = self.clone();
        k.scale *= c;
        k.sharp_b = self.sharp_b.map(|b| b * c);
        k
            .validate_scale()
            .map(|_| k)
    }

    fn validate_scale(&self) -> Result<()> {
        if self.scale.is_finite() && self.scale > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("kernel scale overflowed: {}", self.scale)))
        }
    }

    /// ln h along a ray, for radial forms. Works far outside f64 value range.
    pub fn log_eval_radial(&self, r: f64) -> f64 {
        debug_assert!(r > 0.0);
        let base = match &self.form {
            KernelForm::PowerLaw { exponent } => -exponent * r.ln(),
            KernelForm::TruncatedPower {
                inner_exponent,
                outer_exponent,
                crossover_radius,
            } => {
                if r <= *crossover_radius {
                    -inner_exponent * r.ln()
                } else {
                    // Continuous match at the crossover.
                    (outer_exponent - inner_exponent) * crossover_radius.ln() - outer_exponent * r.ln()
                }
            }
            KernelForm::ExpDamped { exponent, decay_rate } => -exponent * r.ln() - decay_rate * r,
            KernelForm::Product { .. } => {
                // Radial evaluation of a product kernel means the diagonal ray;
                // callers probing products use `log_eval` with full points.
                return self.log_eval(&self.diagonal_point(r));
            }
            KernelForm::TabulatedRadial { radii, log_values } => log_log_interp(radii, log_values, r),
        };
        base + self.scale.ln()
    }

    /// h(|xi|) for radial kernels; +inf if the log overflows.
    pub fn eval_radial(&self, r: f64) -> f64 {
        if r == 0.0 {
            return f64::INFINITY;
        }
        let l = self.log_eval_radial(r);
        if l > 709.0 {
            f64::INFINITY
        } else {
            l.exp()
        }
    }

    /// ln h(xi). Returns +inf exactly on the singular set.
    pub fn log_eval(&self, xi: &[f64]) -> f64 {
        assert_eq!(xi.len(), self.dim, "point dimension mismatch");
        match &self.form {
            KernelForm::Product { blocks } => {
                let mut acc = self.scale.ln();
                let mut offset = 0;
                for &(d, th) in blocks {
                    let r2: f64 = xi[offset..offset + d].iter().map(|x| x * x).sum();
                    if r2 == 0.0 {
                        return f64::INFINITY;
                    }
                    acc += -(d as f64 - th) * 0.5 * r2.ln();
                    offset += d;
                }
                acc
            }
            _ => {
                let r = norm(xi);
                if r == 0.0 {
                    f64::INFINITY
                } else {
                    self.log_eval_radial(r)
                }
            }
        }
    }

    /// h(xi), with +inf exactly on the declared singular set.
    pub fn eval(&self, xi: &[f64]) -> f64 {
        let l = self.log_eval(xi);
        if l > 709.0 {
            f64::INFINITY
        } else {
            l.exp()
        }
    }

    /// Point on the all-blocks-diagonal ray at distance r (identity ray for
    /// radial kernels). Used to probe product kernels along a fixed ray.
    pub fn diagonal_point(&self, r: f64) -> Vec<f64> {
        let n = self.dim;
        let c = r / (n as f64).sqrt();
        vec![c; n]
    }

    /// Algebraic exponent of h at the origin (along the diagonal ray for
    /// products; fitted from the table head for tabulated kernels).
    pub fn origin_exponent(&self) -> f64 {
        match &self.form {
            KernelForm::PowerLaw { exponent } => *exponent,
            KernelForm::TruncatedPower { inner_exponent, .. } => *inner_exponent,
            KernelForm::ExpDamped { exponent, .. } => *exponent,
            KernelForm::Product { blocks } => blocks.iter().map(|&(d, th)| d as f64 - th).sum(),
            KernelForm::TabulatedRadial { radii, log_values } => {
                let k = (radii.len() / 4).max(2).min(radii.len());
                let x: Vec<f64> = radii[..k].iter().map(|r| r.ln()).collect();
                let (slope, _, _) = linear_fit(&x, &log_values[..k]);
                -slope
            }
        }
    }

    /// Envelope `h(r) <= amp * r^{-exp}` valid for `r >= from`, used to bound
    /// far-field truncation errors. Conservative for exp-damped kernels.
    pub fn tail_envelope(&self) -> TailEnvelope {
        match &self.form {
            KernelForm::PowerLaw { exponent } => TailEnvelope {
                amp: self.scale,
                exp: *exponent,
                from: 0.0,
            },
            KernelForm::TruncatedPower {
                inner_exponent,
                outer_exponent,
                crossover_radius,
            } => TailEnvelope {
                amp: self.scale * crossover_radius.powf(outer_exponent - inner_exponent),
                exp: *outer_exponent,
                from: *crossover_radius,
            },
            KernelForm::ExpDamped { exponent, .. } => TailEnvelope {
                amp: self.scale,
                exp: *exponent,
                from: 0.0,
            },
            KernelForm::Product { blocks } => {
                // Along the diagonal ray; block radii scale with r.
                let total: f64 = blocks.iter().map(|&(d, th)| d as f64 - th).sum();
                let n = self.dim as f64;
                let geom: f64 = blocks
                    .iter()
                    .map(|&(d, th)| ((d as f64 / n).sqrt()).powf(-(d as f64 - th)))
                    .product();
                TailEnvelope {
                    amp: self.scale * geom,
                    exp: total,
                    from: 0.0,
                }
            }
            KernelForm::TabulatedRadial { radii, log_values } => {
                let len = radii.len();
                let k = (len / 4).max(2).min(len);
                let x: Vec<f64> = radii[len - k..].iter().map(|r| r.ln()).collect();
                let (slope, _, _) = linear_fit(&x, &log_values[len - k..]);
                let exp = -slope;
                let from = radii[len - k];
                let amp = radii[len - k..]
                    .iter()
                    .zip(&log_values[len - k..])
                    .map(|(r, lv)| (lv + exp * r.ln()).exp())
                    .fold(0.0f64, f64::max)
                    * 1.5;
                TailEnvelope { amp, exp, from }
            }
        }
    }

    /// Block structure for product kernels: `(offset, dim, theta_i)` per block.
    pub fn blocks(&self) -> Option<Vec<(usize, usize, f64)>> {
        match &self.form {
            KernelForm::Product { blocks } => {
                let mut out = Vec::new();
                let mut off = 0;
                for &(d, th) in blocks {
                    out.push((off, d, th));
                    off += d;
                }
                Some(out)
            }
            _ => None,
        }
    }

    /// Divide by the sharp constant, producing a kernel whose own sharp
    /// constant estimate is 1 within tolerance.
    pub fn standardize(&self) -> Result<Kernel> {
        let b = self
            .sharp_b
            .ok_or_else(|| Error::Precondition("standardize requires a sharp-constant estimate".into()))?;
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::Precondition(format!("sharp constant must be finite positive, got {b}")));
        }
        let mut k = self.clone();
        k.scale /= b;
        k.sharp_b = Some(1.0);
        Ok(k)
    }
}

/// Construct a product kernel from `(d_i, theta_i)` blocks. The kernel's
/// exponent is the sum of the block exponents, and each block must satisfy
/// `0 < theta_i < d_i / 2` in its own dimension.
pub fn make_product_kernel(blocks: &[(usize, f64)]) -> Result<Kernel> {
    if blocks.len() < 2 {
        return Err(Error::Config("product kernel needs k >= 2 blocks".into()));
    }
    let n: usize = blocks.iter().map(|(d, _)| d).sum();
    if n < 2 {
        return Err(Error::Config("product kernel needs total dimension n >= 2".into()));
    }
    let theta: f64 = blocks.iter().map(|(_, th)| th).sum();
    Kernel::candidate(
        n,
        KernelForm::Product {
            blocks: blocks.to_vec(),
        },
        1.0,
        theta,
    )
}

#[derive(Clone, Copy, Debug)]
pub struct TailEnvelope {
    pub amp: f64,
    pub exp: f64,
    pub from: f64,
}

impl TailEnvelope {
    /// Upper bound on h(r) for r >= max(self.from, r).
    pub fn bound(&self, r: f64) -> f64 {
        self.amp * r.powf(-self.exp)
    }
}

/// Piecewise-linear interpolation of (ln r, ln h), extrapolating with the
/// boundary segment slopes.
fn log_log_interp(radii: &[f64], log_values: &[f64], r: f64) -> f64 {
    let lr = r.ln();
    let n = radii.len();
    let lx: f64 = radii[0].ln();
    if lr <= lx {
        let slope = (log_values[1] - log_values[0]) / (radii[1].ln() - radii[0].ln());
        return log_values[0] + slope * (lr - lx);
    }
    let last = radii[n - 1].ln();
    if lr >= last {
        let slope = (log_values[n - 1] - log_values[n - 2]) / (radii[n - 1].ln() - radii[n - 2].ln());
        return log_values[n - 1] + slope * (lr - last);
    }
    // Binary search for the bracketing segment.
    let mut lo = 0usize;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if radii[mid] <= r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x0 = radii[lo].ln();
    let x1 = radii[hi].ln();
    let t = (lr - x0) / (x1 - x0);
    log_values[lo] * (1.0 - t) + log_values[hi] * t
}

pub fn norm(xi: &[f64]) -> f64 {
    xi.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Riesz composition: `|.|^{-a} * |.|^{-a} = c |.|^{n - 2a}` on R^n for
/// `n/2 < a < n`. Returns the constant c.
pub fn riesz_self_convolution_constant(n: usize, a: f64) -> Option<f64> {
    let nf = n as f64;
    if !(a > nf / 2.0 && a < nf) {
        return None;
    }
    // Work in logs: the gammas overflow quickly.
    let log_c = nf / 2.0 * std::f64::consts::PI.ln() + 2.0 * ln_gamma((nf - a) / 2.0)
        + ln_gamma(a - nf / 2.0)
        - 2.0 * ln_gamma(a / 2.0)
        - ln_gamma(nf - a);
    Some(log_c.exp())
}

/// Exponent estimates from log-log fits of h along a fixed ray, together
/// with the algebraic-behavior classification and the growth/decay
/// consistency checks against the kernel's claimed theta.
#[derive(Clone, Debug, Serialize)]
pub struct ExponentEstimate {
    pub alpha: f64,
    pub omega: f64,
    pub alpha_residual: f64,
    pub omega_residual: f64,
    /// Residual threshold used for the algebraic classification.
    pub residual_threshold: f64,
    pub algebraic_at_origin: bool,
    pub algebraic_at_infinity: bool,
    /// alpha <= n - theta (within fit tolerance).
    pub origin_bound_ok: bool,
    /// omega >= n - theta (within fit tolerance).
    pub infinity_bound_ok: bool,
}

impl ExponentEstimate {
    pub fn in_algebraic_class(&self) -> bool {
        self.algebraic_at_origin && self.algebraic_at_infinity
    }
}

/// Fit h ~ |xi|^{-alpha} near the origin and h ~ |xi|^{-omega} at infinity
/// by least squares on log-log samples along a fixed ray.
pub fn estimate_exponents(kernel: &Kernel) -> ExponentEstimate {
    let fit_window = |lo: f64, hi: f64| -> (f64, f64) {
        let m = 48;
        let mut xs = Vec::with_capacity(m);
        let mut ys = Vec::with_capacity(m);
        for i in 0..m {
            let t = i as f64 / (m - 1) as f64;
            let r = lo * (hi / lo).powf(t);
            let lv = if kernel.is_radial() {
                kernel.log_eval_radial(r)
            } else {
                kernel.log_eval(&kernel.diagonal_point(r))
            };
            xs.push(r.ln());
            ys.push(lv);
        }
        let (slope, _, rms) = linear_fit(&xs, &ys);
        (-slope, rms)
    };
    let (alpha, ar) = fit_window(1e-6, 1e-3);
    let (omega, wr) = fit_window(1e3, 1e6);
    let threshold = 0.05;
    let nt = kernel.dim() as f64 - kernel.theta();
    ExponentEstimate {
        alpha,
        omega,
        alpha_residual: ar,
        omega_residual: wr,
        residual_threshold: threshold,
        algebraic_at_origin: ar < threshold,
        algebraic_at_infinity: wr < threshold,
        origin_bound_ok: alpha <= nt + 0.05,
        infinity_bound_ok: omega >= nt - 0.05,
    }
}

/// Verdict of a truncated-integral convergence study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthVerdict {
    Convergent,
    Divergent,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct SplitIntegralLadder {
    /// Truncation radii, doubling.
    pub radii: Vec<f64>,
    /// Truncated integral values at each radius.
    pub values: Vec<f64>,
    pub verdict: GrowthVerdict,
}

/// L^1 + L^2 membership report: h 1[h >= M] tested in L^1 and h 1[h <= M]
/// tested in L^2 over a ladder of growing truncation domains.
#[derive(Clone, Debug, Serialize)]
pub struct L1L2Report {
    pub threshold: f64,
    pub l1_part: SplitIntegralLadder,
    pub l2_part: SplitIntegralLadder,
    pub member: Option<bool>,
}

fn classify_ladder(values: &[f64]) -> GrowthVerdict {
    let k = values.len();
    if k < 3 {
        return GrowthVerdict::Inconclusive;
    }
    let incs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let last = incs[incs.len() - 1];
    let scale = values[k - 1].abs().max(f64::MIN_POSITIVE);
    if last <= 1e-6 * scale {
        return GrowthVerdict::Convergent;
    }
    // Geometrically shrinking increments integrate to a finite limit; flat
    // (log-divergent) or growing increments do not. Compare the tail
    // increment against the largest one so mild quadrature drift near the
    // truncation corners cannot flip the verdict.
    let max_inc = incs.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let ratio = last / max_inc;
    if ratio < 0.1 {
        GrowthVerdict::Convergent
    } else if ratio > 0.5 {
        GrowthVerdict::Divergent
    } else {
        GrowthVerdict::Inconclusive
    }
}

/// Radii in `(lo, hi)` where h crosses the level M, located by a dense
/// log-scan plus bisection. Panel edges are split there so the indicator
/// integrands stay smooth inside every quadrature panel.
fn level_crossings(kernel: &Kernel, m: f64, lo: f64, hi: f64) -> Vec<f64> {
    let log_m = m.ln();
    let samples = 2048;
    let mut out = Vec::new();
    let mut prev_r = lo;
    let mut prev_s = kernel.log_eval_radial(prev_r) - log_m;
    for i in 1..=samples {
        let r = lo * (hi / lo).powf(i as f64 / samples as f64);
        let s = kernel.log_eval_radial(r) - log_m;
        if prev_s.signum() != s.signum() {
            let (mut a, mut b) = (prev_r, r);
            for _ in 0..80 {
                let mid = (a * b).sqrt();
                if (kernel.log_eval_radial(mid) - log_m).signum() == prev_s.signum() {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            out.push((a * b).sqrt());
        }
        prev_r = r;
        prev_s = s;
    }
    out
}

/// Numerically test membership of h in L^1 + L^2 by the split criterion at
/// level M: the heavy part `h 1[h >= M]` must be integrable, the light part
/// `h 1[h <= M]` square integrable. Both are evaluated over a ladder of
/// doubling truncation radii and classified from the growth of increments.
pub fn l1_plus_l2_report(kernel: &Kernel, m_threshold: f64) -> Result<L1L2Report> {
    if !(m_threshold > 0.0) {
        return Err(Error::Precondition("threshold M must be positive".into()));
    }
    let ladder: Vec<f64> = (0..9).map(|j| 16.0 * (2f64).powi(j)).collect();
    let (l1_values, l2_values) = if kernel.is_radial() {
        let n = kernel.dim();
        let area = sphere_area(n);
        let rmax_all = *ladder.last().unwrap();
        let mut splits = level_crossings(kernel, m_threshold, 1e-9, rmax_all);
        splits.retain(|r| r.is_finite());
        let integral = |rmax: f64, heavy: bool| -> f64 {
            let mut edges = quad::geometric_edges(1e-9, rmax, 4);
            edges.extend(splits.iter().copied().filter(|&r| r < rmax));
            edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
            quad::integrate_panels(
                |r| {
                    let h = kernel.eval_radial(r);
                    if !h.is_finite() {
                        return 0.0;
                    }
                    let keep = if heavy { h >= m_threshold } else { h <= m_threshold };
                    if keep {
                        let w = r.powi(n as i32 - 1) * area;
                        w * if heavy { h } else { h * h }
                    } else {
                        0.0
                    }
                },
                &edges,
                16,
            )
        };
        let l1 = ladder.iter().map(|&rm| integral(rm, true)).collect();
        let l2 = ladder.iter().map(|&rm| integral(rm, false)).collect();
        (l1, l2)
    } else {
        // Product kernel: reduce to the block-radius orthant; the angular
        // factors contribute prod_i S_{d_i - 1}.
        let blocks = kernel.blocks().expect("non-radial kernels are products");
        let c: f64 = blocks.iter().map(|&(_, d, _)| sphere_area(d)).product();
        let l1 = ladder
            .iter()
            .map(|&rmax| c * orthant_integral(kernel, rmax, m_threshold, true))
            .collect();
        let l2 = ladder
            .iter()
            .map(|&rmax| c * orthant_integral(kernel, rmax, m_threshold, false))
            .collect();
        (l1, l2)
    };
    let mut l1_part = SplitIntegralLadder {
        radii: ladder.clone(),
        values: l1_values,
        verdict: GrowthVerdict::Inconclusive,
    };
    let mut l2_part = SplitIntegralLadder {
        radii: ladder,
        values: l2_values,
        verdict: GrowthVerdict::Inconclusive,
    };
    l1_part.verdict = classify_ladder(&l1_part.values);
    l2_part.verdict = classify_ladder(&l2_part.values);
    let member = match (l1_part.verdict, l2_part.verdict) {
        (GrowthVerdict::Convergent, GrowthVerdict::Convergent) => Some(true),
        (GrowthVerdict::Divergent, _) | (_, GrowthVerdict::Divergent) => Some(false),
        _ => None,
    };
    Ok(L1L2Report {
        threshold: m_threshold,
        l1_part,
        l2_part,
        member,
    })
}

/// Nested quadrature over the block-radius orthant truncated at `rmax`.
/// After the angular reduction the heavy-part integrand is
/// `scale * prod r_i^{theta_i - 1}` on `{h >= M}` and the light part is
/// `scale^2 * prod r_i^{2 theta_i - d_i - 1}` on `{h <= M}`. The level
/// boundary `sum_i (d_i - theta_i) ln r_i = ln(scale / M)` is solved exactly
/// for the innermost radius so the indicator never cuts a panel interior.
fn orthant_integral(kernel: &Kernel, rmax: f64, m: f64, heavy: bool) -> f64 {
    let blocks = kernel.blocks().unwrap();
    let exps: Vec<f64> = blocks.iter().map(|&(_, d, th)| d as f64 - th).collect();
    let powers: Vec<f64> = blocks
        .iter()
        .map(|&(_, d, th)| if heavy { th - 1.0 } else { 2.0 * th - d as f64 - 1.0 })
        .collect();
    let k = blocks.len();
    let prefactor = if heavy {
        kernel.scale()
    } else {
        kernel.scale() * kernel.scale()
    };
    // h >= M  <=>  sum_i exps_i ln r_i <= ln(scale / M).
    let log_level = (kernel.scale() / m).ln();
    let r_lo = rmax * 1e-9;

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        level: usize,
        k: usize,
        r_lo: f64,
        rmax: f64,
        log_sum: f64,
        jac_partial: f64,
        exps: &[f64],
        powers: &[f64],
        log_level: f64,
        heavy: bool,
    ) -> f64 {
        if level + 1 == k {
            let a = exps[level];
            let r_star = ((log_level - log_sum) / a).exp();
            let (lo, hi) = if heavy {
                (r_lo, rmax.min(r_star))
            } else {
                (r_lo.max(r_star), rmax)
            };
            if !(hi > lo) {
                return 0.0;
            }
            let p = powers[level];
            let edges = quad::geometric_edges(lo, hi, 4);
            return jac_partial * quad::integrate_panels(|r| r.powf(p), &edges, 16);
        }
        let edges = quad::geometric_edges(r_lo, rmax, 4);
        quad::integrate_panels(
            |r| {
                recurse(
                    level + 1,
                    k,
                    r_lo,
                    rmax,
                    log_sum + exps[level] * r.ln(),
                    jac_partial * r.powf(powers[level]),
                    exps,
                    powers,
                    log_level,
                    heavy,
                )
            },
            &edges,
            16,
        )
    }

    prefactor * recurse(0, k, r_lo, rmax, 0.0, 1.0, &exps, &powers, log_level, heavy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn ljs_evaluates_to_pi_cubed_inverse_at_unit_radius() {
        let k = Kernel::ljs();
        let v = k.eval(&[1.0, 0.0, 0.0]);
        assert!((v - PI.powi(-3)).abs() < 1e-15);
        assert!((v - 0.0322515).abs() < 1e-6);
    }

    #[test]
    fn power_law_homogeneity() {
        let k = Kernel::candidate(3, KernelForm::PowerLaw { exponent: 1.7 }, 2.5, 0.5).unwrap();
        let xi = [0.3, -0.4, 1.1];
        let two_xi = [0.6, -0.8, 2.2];
        let ratio = k.eval(&two_xi) / k.eval(&xi);
        assert!((ratio - (2f64).powf(-1.7)).abs() < 1e-12);
    }

    #[test]
    fn exp_damped_matches_reference_value() {
        // (2 pi)^{-1} e^{-1} at |xi| = 1.
        let k = Kernel::candidate(
            3,
            KernelForm::ExpDamped { exponent: 1.0, decay_rate: 1.0 },
            1.0 / (2.0 * PI),
            1.0,
        )
        .unwrap();
        let v = k.eval(&[0.0, 0.0, 1.0]);
        assert!((v - (2.0 * PI).recip() * (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.05855).abs() < 5e-5);
    }

    #[test]
    fn theorem_gate_rejects_large_theta() {
        for dim in [1usize, 2, 3, 4] {
            let theta = dim as f64 / 2.0;
            let err = Kernel::validated(dim, KernelForm::PowerLaw { exponent: 1.0 }, 1.0, theta);
            assert!(matches!(err, Err(Error::TheoremGate { .. })), "dim {dim}");
            // Just below the gate is accepted.
            let ok = Kernel::validated(dim, KernelForm::PowerLaw { exponent: 1.0 }, 1.0, theta - 1e-9);
            assert!(ok.is_ok());
        }
    }

    #[test]
    fn nonpositive_decay_rate_is_a_configuration_error() {
        let err = Kernel::candidate(
            3,
            KernelForm::ExpDamped { exponent: 1.0, decay_rate: -1.0 },
            1.0,
            1.0,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn product_kernel_construction_and_bounds() {
        let k = make_product_kernel(&[(2, 0.5), (2, 0.5)]).unwrap();
        assert_eq!(k.dim(), 4);
        assert!((k.theta() - 1.0).abs() < 1e-15);
        // h = r1^{-1.5} r2^{-1.5}
        let v = k.eval(&[1.0, 0.0, 1.0, 0.0]);
        assert!((v - 1.0).abs() < 1e-12);
        let v2 = k.eval(&[2.0, 0.0, 1.0, 0.0]);
        assert!((v2 - (2f64).powf(-1.5)).abs() < 1e-12);
        // Singular on block subspaces.
        assert!(k.eval(&[0.0, 0.0, 1.0, 0.0]).is_infinite());

        let big = make_product_kernel(&[(3, 1.4), (3, 1.4)]).unwrap();
        assert!((big.theta() - 2.8).abs() < 1e-12);
        assert!(big.theta() < big.dim() as f64 / 2.0);

        let bad = make_product_kernel(&[(2, 1.0), (2, 0.5)]);
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn exponent_fit_recovers_power_laws() {
        let ljs = Kernel::ljs();
        let est = estimate_exponents(&ljs);
        assert!((est.alpha - 2.0).abs() < 0.05);
        assert!((est.omega - 2.0).abs() < 0.05);
        assert!(est.in_algebraic_class());
        assert!(est.origin_bound_ok && est.infinity_bound_ok);

        let tp = Kernel::candidate(
            2,
            KernelForm::TruncatedPower {
                inner_exponent: 1.0,
                outer_exponent: 3.0,
                crossover_radius: 1.0,
            },
            1.0,
            0.5,
        )
        .unwrap();
        let est = estimate_exponents(&tp);
        assert!((est.alpha - 1.0).abs() < 0.05);
        assert!((est.omega - 3.0).abs() < 0.05);
    }

    #[test]
    fn exp_damped_is_not_algebraic_at_infinity() {
        let k = Kernel::candidate(
            3,
            KernelForm::ExpDamped { exponent: 1.0, decay_rate: 1.0 },
            1.0 / (2.0 * PI),
            1.0,
        )
        .unwrap();
        let est = estimate_exponents(&k);
        assert!((est.alpha - 1.0).abs() < 0.05);
        assert!(est.algebraic_at_origin);
        assert!(!est.algebraic_at_infinity);
        // The fitted decay exceeds n - theta by a wide margin.
        assert!(est.omega > 100.0);
    }

    #[test]
    fn tabulated_round_trip_and_interpolation() {
        let radii: Vec<f64> = (0..64).map(|i| 1e-3 * (1e6f64).powf(i as f64 / 63.0)).collect();
        let values: Vec<f64> = radii.iter().map(|r| 0.7 * r.powf(-1.3)).collect();
        let k = Kernel::tabulated(2, radii, values, 0.5).unwrap();
        let v = k.eval(&[0.3, 0.4]); // |xi| = 0.5
        assert!((v - 0.7 * 0.5f64.powf(-1.3)).abs() < 1e-3 * v);
        let est = estimate_exponents(&k);
        assert!((est.alpha - 1.3).abs() < 0.05);
        assert!((est.omega - 1.3).abs() < 0.05);
    }

    #[test]
    fn riesz_constant_matches_ljs_identity() {
        // |.|^{-2} * |.|^{-2} = pi^3 |.|^{-1} on R^3.
        let c = riesz_self_convolution_constant(3, 2.0).unwrap();
        assert!((c - PI.powi(3)).abs() < 1e-9 * PI.powi(3));
        assert!(riesz_self_convolution_constant(3, 1.4).is_none());
    }

    #[test]
    fn ljs_is_member_of_l1_plus_l2() {
        let rep = l1_plus_l2_report(&Kernel::ljs(), 1.0).unwrap();
        assert_eq!(rep.l1_part.verdict, GrowthVerdict::Convergent);
        assert_eq!(rep.l2_part.verdict, GrowthVerdict::Convergent);
        assert_eq!(rep.member, Some(true));
    }

    #[test]
    fn product_kernel_l1_part_diverges() {
        let k = make_product_kernel(&[(2, 0.5), (2, 0.5)]).unwrap();
        let rep = l1_plus_l2_report(&k, 1.0).unwrap();
        assert_eq!(rep.l1_part.verdict, GrowthVerdict::Divergent);
        assert_eq!(rep.member, Some(false));
        // Monotone growth without flattening.
        let v = &rep.l1_part.values;
        for w in v.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn power_law_at_critical_exponent_is_member() {
        // a = n - theta = 2 in R^3: both split integrals converge.
        let k = Kernel::candidate(3, KernelForm::PowerLaw { exponent: 2.0 }, 1.0, 1.0).unwrap();
        let rep = l1_plus_l2_report(&k, 1.0).unwrap();
        assert_eq!(rep.member, Some(true));
        // Cross-check the converged values against the analytic radial
        // integrals: heavy part = area * r^{2}*r^{-2} on [0,1] = area;
        // light part = area * int_1^inf r^2 r^{-4} = area.
        let area = sphere_area(3);
        let l1 = *rep.l1_part.values.last().unwrap();
        let l2 = *rep.l2_part.values.last().unwrap();
        assert!((l1 - area).abs() < 0.01 * area, "l1 = {l1}, area = {area}");
        assert!((l2 - area).abs() < 0.01 * area, "l2 = {l2}");
    }

    #[test]
    fn standardize_requires_estimate_and_rescales() {
        let mut k = Kernel::ljs();
        assert!(k.standardize().is_ok());
        k.set_sharp_b(3.7);
        let s = k.standardize().unwrap();
        assert!((s.scale() - k.scale() / 3.7).abs() < 1e-15);
        let mut bare = Kernel::candidate(3, KernelForm::PowerLaw { exponent: 2.0 }, 1.0, 1.0).unwrap();
        bare.sharp_b = None;
        assert!(matches!(bare.standardize(), Err(Error::Precondition(_))));
    }
}
