//! Self-convolution of radial and product kernels, sharp constants, and
//! standardization.
//!
//! For a radial kernel the integral `h*h(xi) = ∫ h(eta) h(xi - eta) d eta`
//! has exactly two algebraic singularities, at `eta = 0` and `eta = xi`.
//! The domain is split into the two balls of radius `|xi|/2` around them
//! plus the exterior. Inside each ball the integral is reduced to polar
//! coordinates and the radial power `r^{-a}` is absorbed analytically by the
//! substitution `u = r^{n-a}`; by symmetry of the self-convolution the two
//! ball contributions are equal. The exterior is integrated in radial
//! octaves until the running total stabilizes, with an explicit power-law
//! envelope bound on everything beyond the last octave.
//!
//! Product kernels factor blockwise: `h*h` is the product of the per-block
//! self-convolutions evaluated at the block radii.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{norm, sphere_area, Kernel, KernelForm};
use crate::quad;

/// Quadrature configuration for convolution evaluations.
#[derive(Clone, Debug, Serialize)]
pub struct RadialQuadratureGrid {
    /// Inner resolution floor: singular panels start at `r_min` times the
    /// local scale.
    pub r_min: f64,
    /// Hard cap on the far-field truncation radius.
    pub r_max: f64,
    /// Log-spaced radial panels per octave.
    pub radial_per_octave: usize,
    /// Gauss order of the spherical rule.
    pub angular_order: usize,
    /// Relative tolerance for far-field octave accumulation.
    pub rel_tol: f64,
}

impl Default for RadialQuadratureGrid {
    fn default() -> Self {
        RadialQuadratureGrid {
            r_min: 1e-12,
            r_max: 1e24,
            radial_per_octave: 2,
            angular_order: 32,
            rel_tol: 1e-6,
        }
    }
}

impl RadialQuadratureGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min < self.r_max) {
            return Err(Error::Config("quadrature grid needs 0 < r_min < r_max".into()));
        }
        if self.radial_per_octave == 0 || self.angular_order == 0 {
            return Err(Error::Config("quadrature grid needs positive node counts".into()));
        }
        Ok(())
    }

    /// The log-spaced radial node sequence between `r_min` and `r_max`.
    pub fn radial_nodes(&self) -> Vec<f64> {
        quad::geometric_edges(self.r_min, self.r_max, self.radial_per_octave)
    }
}

/// One evaluated convolution point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConvolutionPoint {
    pub value: f64,
    pub tail_bound: f64,
    pub converged: bool,
}

/// Self-convolution values at a set of evaluation points. Values may be
/// `+inf`: non-integrable candidates genuinely convolve to infinity and the
/// probe modules consume that outcome.
#[derive(Clone, Debug, Serialize)]
pub struct ConvolutionResult {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub tail_bounds: Vec<f64>,
    pub converged: Vec<bool>,
    /// Max of the per-point far-field truncation bounds.
    pub tail_truncation_bound: f64,
}

/// Angular integral of `h(|xi - r omega|)` over unit directions `omega`,
/// with the polar cosine restricted to `c <= c_hi` (pass `1.0` for the full
/// sphere). `el` is `|xi|`.
fn angular_integral(kernel: &Kernel, el: f64, r: f64, c_hi: f64, order: usize) -> f64 {
    let n = kernel.dim();
    let s_at = |c: f64| (r * r + el * el - 2.0 * r * el * c).max(0.0).sqrt();
    match n {
        1 => {
            // Directions are just {+1, -1}.
            let mut acc = 0.0;
            if c_hi >= 1.0 {
                acc += kernel.eval_radial((el - r).abs().max(1e-300));
            }
            acc += kernel.eval_radial(el + r);
            acc
        }
        2 => {
            // In the angle t = arccos c the measure is flat: 2 ∫ h(s(t)) dt.
            let t_lo = c_hi.clamp(-1.0, 1.0).acos();
            2.0 * quad::integrate_gl(
                |t| kernel.eval_radial(s_at(t.cos()).max(1e-300)),
                t_lo,
                std::f64::consts::PI,
                order,
            )
        }
        _ => {
            // Weight (1 - c^2)^{(n-3)/2} is bounded for n >= 3.
            let w_pow = (n as f64 - 3.0) / 2.0;
            let area = sphere_area(n - 1);
            area * quad::integrate_gl(
                |c| {
                    let w = if w_pow == 0.0 {
                        1.0
                    } else {
                        (1.0 - c * c).max(0.0).powf(w_pow)
                    };
                    w * kernel.eval_radial(s_at(c).max(1e-300))
                },
                -1.0,
                c_hi.min(1.0),
                order,
            )
        }
    }
}

/// `∫_{|eta| < radius} h(eta) h(xi - eta) d eta` for a radial kernel, with
/// the `r^{-a}` singularity of the first factor absorbed analytically via
/// `u = r^{n-a}`. Requires `radius <= |xi|/2` so the second factor is smooth.
fn ball_integral(kernel: &Kernel, el: f64, radius: f64, grid: &RadialQuadratureGrid) -> f64 {
    let n = kernel.dim() as f64;
    let a = kernel.origin_exponent().min(n - 1e-9);
    let p = n - a;
    let u_max = radius.powf(p);
    let mut edges = quad::geometric_edges(u_max * 1e-12, u_max, grid.radial_per_octave.max(1));
    // Keep kernel breakpoints on panel boundaries.
    if let KernelForm::TruncatedPower { crossover_radius, .. } = kernel.form() {
        let uc = crossover_radius.powf(p);
        if uc > edges[0] && uc < u_max {
            edges.push(uc);
            edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
        }
    }
    quad::integrate_panels(
        |u| {
            let r = u.powf(1.0 / p);
            // phi(r) = h(r) r^a, slowly varying near the origin.
            let phi = (kernel.log_eval_radial(r) + a * r.ln()).exp();
            phi * angular_integral(kernel, el, r, 1.0, grid.angular_order) / p
        },
        &edges,
        16,
    )
}

/// Far-field bound from the power envelope: everything beyond `r_stop`.
fn envelope_tail_bound(kernel: &Kernel, el: f64, r_stop: f64) -> f64 {
    let env = kernel.tail_envelope();
    let n = kernel.dim() as f64;
    if let KernelForm::ExpDamped { exponent, decay_rate } = kernel.form() {
        let a2 = 2.0 * exponent;
        let c = *decay_rate;
        let pow = n - 1.0 - a2;
        let amp = sphere_area(kernel.dim())
            * kernel.scale()
            * kernel.scale()
            * (2f64).powf(*exponent)
            * (c * el).exp();
        let poly = if pow <= 0.0 {
            r_stop.powf(pow)
        } else {
            r_stop.powf(pow) * 2.0
        };
        return amp * poly * (-2.0 * c * r_stop).exp() / (2.0 * c);
    }
    let two_omega = 2.0 * env.exp;
    if two_omega <= n {
        return f64::INFINITY;
    }
    sphere_area(kernel.dim()) * env.amp * env.amp * (2f64).powf(env.exp) * r_stop.powf(n - two_omega)
        / (two_omega - n)
}

/// True when the `|eta| -> infinity` part of the self-convolution diverges.
fn tail_diverges(kernel: &Kernel) -> bool {
    if matches!(kernel.form(), KernelForm::ExpDamped { .. }) {
        return false;
    }
    2.0 * kernel.tail_envelope().exp <= kernel.dim() as f64
}

/// Self-convolution of a radial kernel at radius `el = |xi| > 0`.
pub fn self_convolve_radial_at(kernel: &Kernel, el: f64, grid: &RadialQuadratureGrid) -> ConvolutionPoint {
    debug_assert!(kernel.is_radial());
    let n = kernel.dim() as f64;
    let a = kernel.origin_exponent();
    if a >= n || tail_diverges(kernel) {
        return ConvolutionPoint {
            value: f64::INFINITY,
            tail_bound: f64::INFINITY,
            converged: true,
        };
    }
    // Two singular balls; by the eta -> xi - eta symmetry their
    // contributions coincide for a self-convolution.
    let ball = ball_integral(kernel, el, el / 2.0, grid);

    // Exterior: r > el/2 with the cosine restricted so |xi - eta| > el/2.
    let c_hi = |r: f64| ((r * r + 0.75 * el * el) / (2.0 * r * el)).min(1.0);
    let f_far = |r: f64| {
        r.powf(n - 1.0) * kernel.eval_radial(r) * angular_integral(kernel, el, r, c_hi(r), grid.angular_order)
    };
    // Near region with the c-limit kink at 3 el / 2 kept on a panel edge.
    let mut edges = quad::geometric_edges(el / 2.0, 2.0 * el, 4 * grid.radial_per_octave.max(1));
    edges.push(1.5 * el);
    if let KernelForm::TruncatedPower { crossover_radius, .. } = kernel.form() {
        if *crossover_radius > el / 2.0 && *crossover_radius < 2.0 * el {
            edges.push(*crossover_radius);
        }
    }
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let near = quad::integrate_panels(f_far, &edges, 16);

    // Dyadic octaves outward from 2 el until the increment is negligible.
    let max_octaves = ((grid.r_max / (2.0 * el)).log2().ceil() as usize).clamp(4, 400);
    let mut total = near;
    let mut lo = 2.0 * el;
    let mut converged = false;
    for _ in 0..max_octaves {
        let inc = quad::integrate_gl(f_far, lo, 2.0 * lo, 16);
        total += inc;
        lo *= 2.0;
        if inc.abs() <= grid.rel_tol * (total.abs() + 2.0 * ball.abs()).max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    let tail_bound = envelope_tail_bound(kernel, el, lo);
    ConvolutionPoint {
        value: 2.0 * ball + total,
        tail_bound,
        converged,
    }
}

/// Self-convolution at the origin: `∫ h(eta)^2 d eta`.
fn self_convolve_at_zero(kernel: &Kernel, grid: &RadialQuadratureGrid) -> ConvolutionPoint {
    let n = kernel.dim() as f64;
    let a = kernel.origin_exponent();
    if 2.0 * a >= n || tail_diverges(kernel) {
        return ConvolutionPoint {
            value: f64::INFINITY,
            tail_bound: f64::INFINITY,
            converged: true,
        };
    }
    let area = sphere_area(kernel.dim());
    let f = |r: f64| {
        let h = kernel.eval_radial(r);
        area * r.powf(n - 1.0) * h * h
    };
    let edges = quad::geometric_edges(grid.r_min, 1.0, grid.radial_per_octave.max(2));
    let head = quad::integrate_panels(f, &edges, 16);
    let (tail, converged, _) = quad::dyadic_tail(f, 1.0, grid.rel_tol, 16, 200);
    ConvolutionPoint {
        value: head + tail,
        tail_bound: 0.0,
        converged,
    }
}

/// h*h at one point, for radial or product kernels.
pub fn self_convolve_at(kernel: &Kernel, xi: &[f64], grid: &RadialQuadratureGrid) -> ConvolutionPoint {
    if let Some(blocks) = kernel.blocks() {
        // Blockwise factorization. Each block is a unit power law in its own
        // dimension; the kernel scale enters squared.
        let mut value = kernel.scale() * kernel.scale();
        let mut tail = 0.0f64;
        let mut converged = true;
        for (off, d, th) in blocks {
            let r_i = norm(&xi[off..off + d]);
            let block = Kernel::candidate(
                d,
                KernelForm::PowerLaw {
                    exponent: d as f64 - th,
                },
                1.0,
                th,
            )
            .expect("block kernel parameters are valid");
            let p = if r_i == 0.0 {
                self_convolve_at_zero(&block, grid)
            } else {
                self_convolve_radial_at(&block, r_i, grid)
            };
            value *= p.value;
            tail = tail.max(p.tail_bound);
            converged &= p.converged;
        }
        return ConvolutionPoint {
            value,
            tail_bound: tail,
            converged,
        };
    }
    let el = norm(xi);
    if el == 0.0 {
        self_convolve_at_zero(kernel, grid)
    } else {
        self_convolve_radial_at(kernel, el, grid)
    }
}

/// h*h at a list of points.
pub fn self_convolve(kernel: &Kernel, points: &[Vec<f64>], grid: &RadialQuadratureGrid) -> Result<ConvolutionResult> {
    grid.validate()?;
    let mut values = Vec::with_capacity(points.len());
    let mut tails = Vec::with_capacity(points.len());
    let mut conv = Vec::with_capacity(points.len());
    for xi in points {
        if xi.len() != kernel.dim() {
            return Err(Error::Precondition(format!(
                "evaluation point has dimension {}, kernel has {}",
                xi.len(),
                kernel.dim()
            )));
        }
        let p = self_convolve_at(kernel, xi, grid);
        values.push(p.value);
        tails.push(p.tail_bound);
        conv.push(p.converged);
    }
    let bound = tails.iter().cloned().filter(|t| t.is_finite()).fold(0.0, f64::max);
    Ok(ConvolutionResult {
        points: points.to_vec(),
        values,
        tail_bounds: tails,
        converged: conv,
        tail_truncation_bound: bound,
    })
}

/// Sharp-constant estimate over a set of probe points.
#[derive(Clone, Debug, Serialize)]
pub struct SharpConstantReport {
    pub b: f64,
    /// |B - 1| within the standardization tolerance.
    pub standardized: bool,
    pub tolerance: f64,
    pub argmax: Vec<f64>,
    pub probes: usize,
    /// Max far-field truncation bound among the probes, relative to the
    /// corresponding convolution values.
    pub max_relative_tail: f64,
}

pub const STANDARDIZATION_TOLERANCE: f64 = 0.02;

/// Estimate `B = sup h*h(xi) / (|xi|^theta h(xi))` over the probe points.
/// A divergent convolution at any probe certifies that the kernel is not a
/// majorizing kernel for this theta.
pub fn sharp_constant(
    kernel: &Kernel,
    theta: f64,
    probes: &[Vec<f64>],
    grid: &RadialQuadratureGrid,
) -> Result<SharpConstantReport> {
    if probes.is_empty() {
        return Err(Error::Precondition("sharp_constant needs at least one probe point".into()));
    }
    let mut best = f64::NEG_INFINITY;
    let mut argmax = probes[0].clone();
    let mut max_rel_tail = 0.0f64;
    for xi in probes {
        let el = norm(xi);
        if el == 0.0 {
            return Err(Error::Precondition("probe points must exclude the origin".into()));
        }
        let p = self_convolve_at(kernel, xi, grid);
        if !p.value.is_finite() {
            return Err(Error::NotMajorizing { theta, radius: el });
        }
        let denom = el.powf(theta) * kernel.eval(xi);
        if !denom.is_finite() || denom == 0.0 {
            continue; // singular-direction probe carries no information
        }
        let ratio = p.value / denom;
        if p.value > 0.0 {
            max_rel_tail = max_rel_tail.max(p.tail_bound / p.value);
        }
        if ratio > best {
            best = ratio;
            argmax = xi.clone();
        }
    }
    Ok(SharpConstantReport {
        b: best,
        standardized: (best - 1.0).abs() <= STANDARDIZATION_TOLERANCE,
        tolerance: STANDARDIZATION_TOLERANCE,
        argmax,
        probes: probes.len(),
        max_relative_tail: max_rel_tail,
    })
}

/// Default probe set: log-spaced radii in `[10^-3, 10^3]`, one direction for
/// radial kernels and 64 deterministic directions otherwise.
pub fn default_probe_points(kernel: &Kernel, count: usize) -> Vec<Vec<f64>> {
    let radii: Vec<f64> = (0..count)
        .map(|i| 1e-3 * (1e6f64).powf(i as f64 / (count.max(2) - 1) as f64))
        .collect();
    let n = kernel.dim();
    if kernel.is_radial() {
        radii
            .iter()
            .map(|&r| {
                let mut p = vec![0.0; n];
                p[0] = r;
                p
            })
            .collect()
    } else {
        let mut rng = crate::rng::CounterRng::new(0xF00D_CAFE);
        let dirs: Vec<Vec<f64>> = (0..64).map(|_| rng.unit_vector(n)).collect();
        let mut out = Vec::with_capacity(radii.len() * dirs.len());
        for &r in &radii {
            for d in &dirs {
                out.push(d.iter().map(|x| x * r).collect());
            }
        }
        out
    }
}
