//! Deterministic Picard iteration for the mild Fourier-space equations on a
//! truncated lattice.
//!
//! The mild form reads
//! `u(xi,t) = e^{-nu |xi|^2 t} u0(xi) + ∫_0^t e^{-nu |xi|^2 (t-s)} g(xi,s) ds
//!  + ∫_0^t e^{-nu |xi|^2 (t-s)} B[u,u](xi,s) ds`,
//! with the bilinear integrand
//! `B[u,v](xi) = (2 pi)^{-n/2} |xi| sum_eta dxi^n [-i (u(eta).e_xi)] P(xi) v(xi-eta)`.
//! The lattice convolution runs through a zero-padded fast transform (a
//! naive double loop is retained as the test oracle), and the Duhamel
//! integrals use exact integration of the stiff exponential against
//! piecewise-linear-in-time integrands.

use num_complex::Complex64;
use serde::Serialize;

use crate::cascade::{estimate_solution, lattice_data_map, Cascade, EvalOptions, TypeSpace};
use crate::error::{Error, Result};
use crate::fft;
use crate::kernel::Kernel;
use crate::lattice::{LatticeField, LatticeGeometry};
use crate::rng::CounterRng;

/// Majorization norm: `sup |u(xi)| / h(xi)` over nonzero in-cutoff sites.
pub fn fh_norm(field: &LatticeField, kernel: &Kernel) -> f64 {
    let geom = field.geom;
    let mut best = 0.0f64;
    for coords in geom.sites() {
        if LatticeGeometry::is_origin(&coords) || !geom.in_cutoff(&coords) {
            continue;
        }
        let site = geom.index_of(&coords);
        let u = field.get(site);
        let mag: f64 = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if mag == 0.0 {
            continue;
        }
        let h = kernel.eval(&geom.xi_of(&coords));
        if h.is_finite() && h > 0.0 {
            best = best.max(mag / h);
        }
    }
    best
}

/// A time-indexed family of lattice fields.
#[derive(Clone, Debug)]
pub struct MildTrajectory {
    pub times: Vec<f64>,
    pub fields: Vec<LatticeField>,
    pub iterate: usize,
}

impl MildTrajectory {
    pub fn geometry(&self) -> LatticeGeometry {
        self.fields[0].geom
    }
}

/// Path-space norm: `sup_t` of the majorization norm.
pub fn fht_norm(traj: &MildTrajectory, kernel: &Kernel) -> f64 {
    traj.fields.iter().map(|f| fh_norm(f, kernel)).fold(0.0, f64::max)
}

fn fht_diff_norm(a: &MildTrajectory, b: &MildTrajectory, kernel: &Kernel) -> f64 {
    a.fields
        .iter()
        .zip(&b.fields)
        .map(|(fa, fb)| {
            let mut d = fa.clone();
            for (x, y) in d.values.iter_mut().zip(&fb.values) {
                *x -= y;
            }
            fh_norm(&d, kernel)
        })
        .fold(0.0, f64::max)
}

/// The discrete convolution-in-xi integrand of the quadratic term, via
/// zero-padded fast transforms. Output is orthogonal to xi at every site
/// and masked outside the cutoff ball.
pub fn bilinear_term(u: &LatticeField, v: &LatticeField) -> Result<LatticeField> {
    let geom = u.geom;
    if v.geom != geom {
        return Err(Error::Geometry(format!("bilinear operands on different lattices: {:?} vs {:?}", geom, v.geom)));
    }
    let n = geom.dim;
    let sites = geom.site_count();
    // Forward transforms of every component (2n FFTs), then n^2 inverse
    // transforms for the pairwise convolutions C_jk = u_j * v_k.
    let fu: Vec<Vec<Complex64>> = (0..n)
        .map(|c| {
            let comp: Vec<Complex64> = (0..sites).map(|s| u.values[s * n + c]).collect();
            fft::pad_forward(&comp, &geom)
        })
        .collect();
    let fv: Vec<Vec<Complex64>> = (0..n)
        .map(|c| {
            let comp: Vec<Complex64> = (0..sites).map(|s| v.values[s * n + c]).collect();
            fft::pad_forward(&comp, &geom)
        })
        .collect();
    let mut conv = Vec::with_capacity(n * n);
    for j in 0..n {
        for k in 0..n {
            conv.push(fft::conv_from_transforms(&fu[j], &fv[k], &geom));
        }
    }
    let mut out = LatticeField::zero(geom);
    let vol = geom.spacing.powi(n as i32);
    let prefactor = (2.0 * std::f64::consts::PI).powf(-(n as f64) / 2.0);
    for coords in geom.sites() {
        if LatticeGeometry::is_origin(&coords) || !geom.in_cutoff(&coords) {
            continue;
        }
        let site = geom.index_of(&coords);
        let el = geom.xi_norm(&coords);
        let e: Vec<f64> = geom.xi_of(&coords).iter().map(|x| x / el).collect();
        // z_k = sum_j e_j C_jk(xi)
        let mut z = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for (k, zk) in z.iter_mut().enumerate() {
                *zk += conv[j * n + k][site] * e[j];
            }
        }
        let dot: Complex64 = e.iter().zip(&z).map(|(a, b)| b * *a).sum();
        let scale = Complex64::new(0.0, -1.0) * prefactor * el * vol;
        for k in 0..n {
            out.values[site * n + k] = (z[k] - dot * e[k]) * scale;
        }
    }
    out.divergence_free = true;
    Ok(out)
}

/// Reference double-loop evaluation of the same integrand.
pub fn bilinear_term_naive(u: &LatticeField, v: &LatticeField) -> Result<LatticeField> {
    let geom = u.geom;
    if v.geom != geom {
        return Err(Error::Geometry("bilinear operands on different lattices".into()));
    }
    let n = geom.dim;
    let mut out = LatticeField::zero(geom);
    let vol = geom.spacing.powi(n as i32);
    let prefactor = (2.0 * std::f64::consts::PI).powf(-(n as f64) / 2.0);
    for coords in geom.sites() {
        if LatticeGeometry::is_origin(&coords) || !geom.in_cutoff(&coords) {
            continue;
        }
        let site = geom.index_of(&coords);
        let el = geom.xi_norm(&coords);
        let e: Vec<f64> = geom.xi_of(&coords).iter().map(|x| x / el).collect();
        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        for ecoords in geom.sites() {
            let diff: Vec<i32> = coords.iter().zip(&ecoords).map(|(a, b)| a - b).collect();
            if diff.iter().any(|d| d.abs() > geom.half_extent) {
                continue;
            }
            let esite = geom.index_of(&ecoords);
            let dsite = geom.index_of(&diff);
            let ueta = u.get(esite);
            let vdiff = v.get(dsite);
            let dot: Complex64 = e.iter().zip(ueta).map(|(a, b)| b * *a).sum();
            for k in 0..n {
                acc[k] += dot * vdiff[k];
            }
        }
        let dot_e: Complex64 = e.iter().zip(&acc).map(|(a, b)| b * *a).sum();
        let scale = Complex64::new(0.0, -1.0) * prefactor * el * vol;
        for k in 0..n {
            out.values[site * n + k] = (acc[k] - dot_e * e[k]) * scale;
        }
    }
    out.divergence_free = true;
    Ok(out)
}

/// Exact integrals of `e^{-a tau}` and `tau e^{-a tau}` over `[0, delta]`,
/// with series fallbacks for small `a delta`.
fn exp_weights(a: f64, delta: f64) -> (f64, f64) {
    let z = a * delta;
    if z.abs() < 1e-4 {
        let g1 = delta * (1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0);
        let g2 = delta * delta * (0.5 - z / 3.0 + z * z / 8.0 - z * z * z / 30.0);
        (g1, g2)
    } else {
        let em = (-z).exp();
        ((1.0 - em) / a, (1.0 - (1.0 + z) * em) / (a * a))
    }
}

/// `∫_0^{t_j} e^{-a (t_j - s)} w(s) ds` for piecewise-linear `w` sampled on
/// the uniform grid `times`, evaluated for every site of the fields.
fn duhamel(w_nodes: &[LatticeField], times: &[f64], j: usize, nu: f64) -> LatticeField {
    let geom = w_nodes[0].geom;
    let n = geom.dim;
    let mut out = LatticeField::zero(geom);
    if j == 0 {
        return out;
    }
    let t_j = times[j];
    for coords in geom.sites() {
        if LatticeGeometry::is_origin(&coords) || !geom.in_cutoff(&coords) {
            continue;
        }
        let site = geom.index_of(&coords);
        let el = geom.xi_norm(&coords);
        let a = nu * el * el;
        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..j {
            let (s0, s1) = (times[i], times[i + 1]);
            let delta = s1 - s0;
            let (g1, g2) = exp_weights(a, delta);
            // w(s) = w1 + (w0 - w1)(tau/delta), tau = s1 - s.
            let head = (-a * (t_j - s1)).exp();
            let c1 = head * (g1 - g2 / delta);
            let c0 = head * (g2 / delta);
            let w0 = w_nodes[i].get(site);
            let w1 = w_nodes[i + 1].get(site);
            for k in 0..n {
                acc[k] += w1[k] * c1 + w0[k] * c0;
            }
        }
        out.set(site, &acc);
    }
    out.divergence_free = true;
    out
}

/// Options for the Picard iteration.
#[derive(Clone, Copy, Debug)]
pub struct PicardOptions {
    pub nu: f64,
    pub t_final: f64,
    /// Number of uniform time panels (nodes = panels + 1).
    pub time_nodes: usize,
    pub iterations: usize,
    /// Test mode: skip the quadratic term entirely (pure heat flow).
    pub disable_bilinear: bool,
    /// Abort when the path norm exceeds this guard.
    pub overflow_guard: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            nu: 1.0,
            t_final: 0.1,
            time_nodes: 16,
            iterations: 6,
            disable_bilinear: false,
            overflow_guard: 1e9,
        }
    }
}

/// Heat-plus-forcing base trajectory `u^{(0)}`.
fn base_trajectory(
    u0: &LatticeField,
    forcing: Option<&dyn Fn(&[f64], f64) -> Vec<Complex64>>,
    opts: &PicardOptions,
) -> MildTrajectory {
    let geom = u0.geom;
    let n = geom.dim;
    let m = opts.time_nodes;
    let times: Vec<f64> = (0..=m).map(|j| opts.t_final * j as f64 / m as f64).collect();
    // Forcing samples on the grid, reused across target times.
    let g_nodes: Option<Vec<LatticeField>> = forcing.map(|g| {
        times
            .iter()
            .map(|&s| {
                let mut f = LatticeField::zero(geom);
                for coords in geom.sites() {
                    if LatticeGeometry::is_origin(&coords) || !geom.in_cutoff(&coords) {
                        continue;
                    }
                    let site = geom.index_of(&coords);
                    let v = g(&geom.xi_of(&coords), s);
                    f.set(site, &v);
                }
                f
            })
            .collect()
    });
    let fields: Vec<LatticeField> = times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let mut f = LatticeField::zero(geom);
            for coords in geom.sites() {
                if LatticeGeometry::is_origin(&coords) || !geom.in_cutoff(&coords) {
                    continue;
                }
                let site = geom.index_of(&coords);
                let el = geom.xi_norm(&coords);
                let decay = (-opts.nu * el * el * t).exp();
                let mut v: Vec<Complex64> = u0.get(site).iter().map(|z| z * decay).collect();
                if let Some(gn) = &g_nodes {
                    let forced = duhamel(gn, &times, j, opts.nu);
                    for (k, fval) in forced.get(site).iter().enumerate() {
                        v[k] += fval;
                    }
                }
                f.set(site, &v);
            }
            let _ = n;
            f.divergence_free = true;
            f
        })
        .collect();
    MildTrajectory {
        times,
        fields,
        iterate: 0,
    }
}

/// Run the Picard iteration and return every iterate (index 0 is the
/// heat-plus-forcing trajectory).
pub fn picard_iterate(
    u0: &LatticeField,
    forcing: Option<&dyn Fn(&[f64], f64) -> Vec<Complex64>>,
    kernel: &Kernel,
    opts: &PicardOptions,
) -> Result<Vec<MildTrajectory>> {
    if opts.iterations == 0 {
        return Err(Error::Precondition("picard_iterate needs K >= 1".into()));
    }
    if u0.max_divergence() > 1e-8 {
        return Err(Error::Precondition("initial datum must be divergence-free".into()));
    }
    let base = base_trajectory(u0, forcing, opts);
    let mut iterates = vec![base];
    for k in 1..=opts.iterations {
        let prev = &iterates[k - 1];
        let next = if opts.disable_bilinear {
            let mut t = prev.clone();
            t.iterate = k;
            t
        } else {
            let w_nodes: Vec<LatticeField> = prev
                .fields
                .iter()
                .map(|f| bilinear_term(f, f))
                .collect::<Result<_>>()?;
            let times = prev.times.clone();
            let fields: Vec<LatticeField> = (0..times.len())
                .map(|j| {
                    let mut f = iterates[0].fields[j].clone();
                    let d = duhamel(&w_nodes, &times, j, opts.nu);
                    for (x, y) in f.values.iter_mut().zip(&d.values) {
                        *x += y;
                    }
                    f
                })
                .collect();
            MildTrajectory {
                times,
                fields,
                iterate: k,
            }
        };
        let norm_k = fht_norm(&next, kernel);
        if !norm_k.is_finite() || norm_k > opts.overflow_guard {
            return Err(Error::BlowUp {
                iterate: k,
                norm: norm_k,
            });
        }
        iterates.push(next);
    }
    Ok(iterates)
}

/// One application of the Picard map `Phi(u) = u^{(0)} + Duhamel B[u, u]`,
/// used to measure the fixed-point residual of a converged trajectory.
pub fn picard_map(
    traj: &MildTrajectory,
    base: &MildTrajectory,
    nu: f64,
) -> Result<MildTrajectory> {
    let w_nodes: Vec<LatticeField> = traj
        .fields
        .iter()
        .map(|f| bilinear_term(f, f))
        .collect::<Result<_>>()?;
    let fields: Vec<LatticeField> = (0..traj.times.len())
        .map(|j| {
            let mut f = base.fields[j].clone();
            let d = duhamel(&w_nodes, &traj.times, j, nu);
            for (x, y) in f.values.iter_mut().zip(&d.values) {
                *x += y;
            }
            f
        })
        .collect();
    Ok(MildTrajectory {
        times: traj.times.clone(),
        fields,
        iterate: traj.iterate + 1,
    })
}

/// Fixed-point residual `|| u - Phi(u) ||` in the path norm.
pub fn fixed_point_residual(
    traj: &MildTrajectory,
    base: &MildTrajectory,
    nu: f64,
    kernel: &Kernel,
) -> Result<f64> {
    let mapped = picard_map(traj, base, nu)?;
    Ok(fht_diff_norm(traj, &mapped, kernel))
}

/// Successive-difference diagnostics of a Picard run.
#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport {
    /// `d_k = || u^{(k+1)} - u^{(k)} ||` in the path norm.
    pub differences: Vec<f64>,
    /// `d_{k+1} / d_k` for k >= 1.
    pub ratios: Vec<f64>,
    pub contracting: bool,
}

pub fn contraction_report(iterates: &[MildTrajectory], kernel: &Kernel) -> Result<ContractionReport> {
    if iterates.len() < 3 {
        return Err(Error::Precondition("contraction report needs at least 3 iterates".into()));
    }
    let differences: Vec<f64> = iterates
        .windows(2)
        .map(|w| fht_diff_norm(&w[0], &w[1], kernel))
        .collect();
    let mut ratios = Vec::new();
    for k in 1..differences.len() {
        if differences[k - 1] > 0.0 {
            ratios.push(differences[k] / differences[k - 1]);
        }
    }
    let contracting = ratios.iter().all(|&r| r < 1.0);
    Ok(ContractionReport {
        differences,
        ratios,
        contracting,
    })
}

/// One row of the cascade-to-Picard comparison.
#[derive(Clone, Debug, Serialize)]
pub struct CorrespondenceRow {
    pub coords: Vec<i32>,
    pub t: f64,
    pub depth: usize,
    pub picard: Vec<Complex64>,
    pub cascade_mean: Vec<Complex64>,
    pub std_error: Vec<f64>,
    /// Max over components of |difference| / standard error.
    pub sigma_distance: f64,
}

/// Compare depth-truncated cascade expectations `h E(X; depth <= k)` against
/// the k-th Picard iterate at the lattice points `points` and horizon `t`
/// (the final node of the Picard grid). Both sides share the kernel, datum,
/// viscosity and lattice, with the discrete splitting normalizer on the
/// cascade side, so the two solve the same truncated system and differences
/// are pure Monte Carlo noise.
#[allow(clippy::too_many_arguments)]
pub fn cascade_correspondence(
    kernel: &Kernel,
    u0: &LatticeField,
    opts: &PicardOptions,
    points: &[Vec<i32>],
    depths: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<CorrespondenceRow>> {
    let geom = u0.geom;
    let max_depth = *depths.iter().max().unwrap_or(&0);
    let mut popts = *opts;
    popts.iterations = max_depth.max(1);
    let iterates = picard_iterate(u0, None, kernel, &popts)?;
    let cascade = Cascade::new(kernel.clone(), opts.nu, TypeSpace::Lattice(geom), 64)?;
    let chi0 = lattice_data_map(u0.clone(), kernel.clone());
    let phi = crate::cascade::zero_forcing(geom.dim);
    let t = opts.t_final;
    let j_last = popts.time_nodes;
    let mut rows = Vec::new();
    for coords in points {
        let xi = geom.xi_of(coords);
        let site = geom.index_of(coords);
        for &k in depths {
            let est = estimate_solution(
                &cascade,
                &xi,
                t,
                &chi0,
                &phi,
                EvalOptions {
                    disable_branching: false,
                    operational_depth_limit: Some(k),
                },
                n_samples,
                seed ^ ((k as u64) << 32) ^ site as u64,
            )?;
            let picard = iterates[k].fields[j_last].get(site).to_vec();
            let mut sigma = 0.0f64;
            for c in 0..geom.dim {
                let diff = (est.mean[c] - picard[c]).norm();
                let se = est.std_error[c];
                if se > 0.0 {
                    sigma = sigma.max(diff / se);
                } else if diff > 1e-12 {
                    sigma = f64::INFINITY;
                }
            }
            rows.push(CorrespondenceRow {
                coords: coords.clone(),
                t,
                depth: k,
                picard,
                cascade_mean: est.mean,
                std_error: est.std_error,
                sigma_distance: sigma,
            });
        }
    }
    Ok(rows)
}

/// Named initial data used by the command line and the test suites.
pub mod presets {
    use super::*;

    /// A single Fourier mode (plus its conjugate) with amplitude `eps`
    /// along a direction orthogonal to the mode: an exact shear flow whose
    /// nonlinear term vanishes identically.
    pub fn single_mode(geom: LatticeGeometry, eps: f64) -> Result<LatticeField> {
        let mut f = LatticeField::zero(geom);
        let mut coords = vec![0i32; geom.dim];
        coords[0] = 1;
        let mut dir = vec![Complex64::new(0.0, 0.0); geom.dim];
        dir[1] = Complex64::new(eps, 0.0);
        f.set(geom.index_of(&coords), &dir);
        let neg: Vec<i32> = coords.iter().map(|c| -c).collect();
        f.set(geom.index_of(&neg), &dir);
        f.apply_mask();
        f.divergence_free = true;
        Ok(f)
    }

    /// Two crossed modes along e1 and e2 with orthogonal polarizations:
    /// the smallest real divergence-free datum with a nondegenerate
    /// quadratic interaction.
    pub fn crossed_modes(geom: LatticeGeometry, eps: f64) -> Result<LatticeField> {
        if geom.dim < 3 {
            return Err(Error::Config("crossed modes need n >= 3".into()));
        }
        let mut f = LatticeField::zero(geom);
        let mut a = vec![0i32; geom.dim];
        a[0] = 1;
        let mut va = vec![Complex64::new(0.0, 0.0); geom.dim];
        va[1] = Complex64::new(eps, 0.0);
        f.set(geom.index_of(&a), &va);
        let an: Vec<i32> = a.iter().map(|c| -c).collect();
        f.set(geom.index_of(&an), &va);

        let mut b = vec![0i32; geom.dim];
        b[1] = 1;
        let mut vb = vec![Complex64::new(0.0, 0.0); geom.dim];
        vb[2] = Complex64::new(eps, 0.0);
        f.set(geom.index_of(&b), &vb);
        let bn: Vec<i32> = b.iter().map(|c| -c).collect();
        f.set(geom.index_of(&bn), &vb);
        f.apply_mask();
        f.divergence_free = true;
        Ok(f)
    }

    /// Random field with `|u(xi)| = eps h(xi)`, random transverse
    /// polarization and conjugate symmetry.
    pub fn random_fh_ball(geom: LatticeGeometry, kernel: &Kernel, eps: f64, seed: u64) -> LatticeField {
        let mut f = LatticeField::zero(geom);
        let mut rng = CounterRng::new(seed);
        for coords in geom.sites() {
            if LatticeGeometry::is_origin(&coords) || !geom.in_cutoff(&coords) {
                continue;
            }
            // Fill each conjugate pair once, keyed on lexicographic order.
            let neg: Vec<i32> = coords.iter().map(|c| -c).collect();
            if coords > neg {
                continue;
            }
            let xi = geom.xi_of(&coords);
            let h = kernel.eval(&xi);
            if !h.is_finite() {
                continue;
            }
            let dir = rng.unit_vector(geom.dim);
            let phase = 2.0 * std::f64::consts::PI * rng.uniform();
            let amp = Complex64::from_polar(eps * h, phase);
            let vraw: Vec<Complex64> = dir.iter().map(|d| amp * d).collect();
            let v = crate::cascade::leray_project(&xi, &vraw).unwrap();
            let vn: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if vn < 1e-14 {
                continue;
            }
            let v: Vec<Complex64> = v.iter().map(|z| z * (eps * h / vn)).collect();
            let site = geom.index_of(&coords);
            f.set(site, &v);
            let conj: Vec<Complex64> = v.iter().map(|z| z.conj()).collect();
            f.set(geom.index_of(&neg), &conj);
        }
        f.apply_mask();
        f.divergence_free = true;
        f
    }

    /// `u(xi) = eps h(xi) e^{i xi . shift} d(xi)` with a fixed real
    /// polarization vector projected transverse: the Fourier side of a
    /// kernel profile translated to `shift`. The physical field carries a
    /// coherent algebraic singularity there, which is exactly the
    /// configuration that saturates the Carleson-measure scaling of the
    /// horizon embeddings (random phases de-cohere the singular point and
    /// measure a steeper horizon exponent instead).
    pub fn translated_h_profile(
        geom: LatticeGeometry,
        kernel: &Kernel,
        eps: f64,
        shift: &[f64],
        seed: u64,
    ) -> LatticeField {
        let mut rng = CounterRng::new(seed);
        let pol = rng.unit_vector(geom.dim);
        let mut f = LatticeField::zero(geom);
        for coords in geom.sites() {
            if LatticeGeometry::is_origin(&coords) || !geom.in_cutoff(&coords) {
                continue;
            }
            let xi = geom.xi_of(&coords);
            let h = kernel.eval(&xi);
            if !h.is_finite() {
                continue;
            }
            let probe: Vec<Complex64> = pol.iter().map(|&p| Complex64::new(p, 0.0)).collect();
            let v = crate::cascade::leray_project(&xi, &probe).unwrap();
            let vn: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if vn < 1e-10 {
                continue;
            }
            let phase: f64 = xi.iter().zip(shift).map(|(a, b)| a * b).sum();
            let amp = Complex64::from_polar(eps * h / vn, phase);
            let v: Vec<Complex64> = v.iter().map(|z| z * amp).collect();
            f.set(geom.index_of(&coords), &v);
        }
        f.apply_mask();
        f.divergence_free = true;
        f
    }

    /// `u(xi) = eps h(xi) d(xi)` with a deterministic transverse direction.
    pub fn h_shaped(geom: LatticeGeometry, kernel: &Kernel, eps: f64) -> LatticeField {
        let mut f = LatticeField::zero(geom);
        for coords in geom.sites() {
            if LatticeGeometry::is_origin(&coords) || !geom.in_cutoff(&coords) {
                continue;
            }
            let xi = geom.xi_of(&coords);
            let h = kernel.eval(&xi);
            if !h.is_finite() {
                continue;
            }
            let mut probe = vec![Complex64::new(0.0, 0.0); geom.dim];
            probe[(coords[0].unsigned_abs() as usize + 1) % geom.dim] = Complex64::new(1.0, 0.0);
            let v = crate::cascade::leray_project(&xi, &probe).unwrap();
            let vn: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if vn < 1e-10 {
                continue;
            }
            let v: Vec<Complex64> = v.iter().map(|z| z * (eps * h / vn)).collect();
            f.set(geom.index_of(&coords), &v);
        }
        f.apply_mask();
        f.divergence_free = true;
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn small_geom() -> LatticeGeometry {
        LatticeGeometry::new(3, 3, 1.0, 3.0).unwrap()
    }

    #[test]
    fn fh_norm_of_h_shaped_field_is_eps() {
        let geom = small_geom();
        let k = Kernel::ljs();
        let f = presets::h_shaped(geom, &k, 0.25);
        let v = fh_norm(&f, &k);
        assert!((v - 0.25).abs() < 1e-12, "norm = {v}");
        let zero = LatticeField::zero(geom);
        assert_eq!(fh_norm(&zero, &k), 0.0);
    }

    #[test]
    fn fht_norm_of_heat_decay_attained_at_zero() {
        let geom = small_geom();
        let k = Kernel::ljs();
        let u0 = presets::h_shaped(geom, &k, 1.0);
        let opts = PicardOptions {
            disable_bilinear: true,
            iterations: 1,
            t_final: 0.5,
            time_nodes: 8,
            ..Default::default()
        };
        let iterates = picard_iterate(&u0, None, &k, &opts).unwrap();
        let traj = &iterates[0];
        let total = fht_norm(traj, &k);
        let at_zero = fh_norm(&traj.fields[0], &k);
        assert!((total - at_zero).abs() < 1e-12);
        assert!((at_zero - 1.0).abs() < 1e-12);
        // And the per-time norms decay monotonically.
        let norms: Vec<f64> = traj.fields.iter().map(|f| fh_norm(f, &k)).collect();
        for w in norms.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn bilinear_zero_and_single_mode_cases() {
        let geom = small_geom();
        let zero = LatticeField::zero(geom);
        let f = presets::crossed_modes(geom, 0.1).unwrap();
        let b = bilinear_term(&zero, &f).unwrap();
        assert!(b.values.iter().all(|z| z.norm() == 0.0));
        // Single mode against itself: shear flow, quadratic term vanishes.
        let s = presets::single_mode(geom, 0.1).unwrap();
        let bs = bilinear_term(&s, &s).unwrap();
        let mag: f64 = bs.values.iter().map(|z| z.norm()).sum();
        assert!(mag < 1e-14, "shear self-interaction = {mag}");
    }

    #[test]
    fn bilinear_hand_computed_two_mode_value() {
        // u on mode a = e1 with amplitude eps e2, v on mode b = e2 with
        // amplitude eps e3: the only contribution at xi = a + b comes from
        // eta = a, and equals -i (2pi)^{-3/2} |xi| (eps/sqrt2) eps e3 dxi^3
        // after projection (e3 is already orthogonal to xi).
        let geom = small_geom();
        let eps = 0.3;
        let mut u = LatticeField::zero(geom);
        u.set(geom.index_of(&[1, 0, 0]), &[c(0.0, 0.0), c(eps, 0.0), c(0.0, 0.0)]);
        let mut v = LatticeField::zero(geom);
        v.set(geom.index_of(&[0, 1, 0]), &[c(0.0, 0.0), c(0.0, 0.0), c(eps, 0.0)]);
        let b = bilinear_term(&u, &v).unwrap();
        let site = geom.index_of(&[1, 1, 0]);
        let got = b.get(site);
        let el = (2f64).sqrt();
        let expect = c(0.0, -1.0) * (2.0 * PI).powf(-1.5) * el * (eps / el) * eps;
        assert!((got[2] - expect).norm() < 1e-14, "{got:?} vs {expect}");
        assert!(got[0].norm() < 1e-15 && got[1].norm() < 1e-15);
        // Everything else is zero except xi = b - a type combinations.
        let other = b.get(geom.index_of(&[1, 0, 0])); // needs v at (0,0,0) or (2,0,0)... zero
        assert!(other.iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn fft_bilinear_matches_naive_oracle() {
        let geom = LatticeGeometry::new(3, 2, 0.5, 1.0).unwrap();
        let k = Kernel::ljs();
        let u = presets::random_fh_ball(geom, &k, 0.7, 11);
        let v = presets::random_fh_ball(geom, &k, 0.4, 22);
        let fast = bilinear_term(&u, &v).unwrap();
        let slow = bilinear_term_naive(&u, &v).unwrap();
        let scale: f64 = slow.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(scale > 0.0);
        for (a, b) in fast.values.iter().zip(&slow.values) {
            assert!((a - b).norm() <= 1e-12 * scale, "{a} vs {b}");
        }
        // Orthogonality site-wise.
        assert!(fast.max_divergence() < 1e-12);
    }

    #[test]
    fn heat_mode_is_exact_at_nodes() {
        let geom = small_geom();
        let k = Kernel::ljs();
        let u0 = presets::crossed_modes(geom, 0.2).unwrap();
        let opts = PicardOptions {
            disable_bilinear: true,
            iterations: 3,
            t_final: 0.25,
            time_nodes: 5,
            nu: 2.0,
            ..Default::default()
        };
        let iterates = picard_iterate(&u0, None, &k, &opts).unwrap();
        for traj in iterates.iter() {
            for (j, &t) in traj.times.iter().enumerate() {
                for coords in geom.sites() {
                    let site = geom.index_of(&coords);
                    let el = geom.xi_norm(&coords);
                    let decay = (-2.0 * el * el * t).exp();
                    for (a, b) in traj.fields[j].get(site).iter().zip(u0.get(site)) {
                        assert!((a - b * decay).norm() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_datum_iterates_stay_zero_and_contract() {
        let geom = small_geom();
        let k = Kernel::ljs();
        let u0 = LatticeField::zero(geom);
        let opts = PicardOptions {
            iterations: 3,
            ..Default::default()
        };
        let iterates = picard_iterate(&u0, None, &k, &opts).unwrap();
        for traj in &iterates {
            assert!(traj.fields.iter().all(|f| f.values.iter().all(|z| z.norm() == 0.0)));
        }
        let rep = contraction_report(&iterates, &k).unwrap();
        assert!(rep.contracting);
        assert!(rep.differences.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn duhamel_matches_analytic_single_mode_first_iterate() {
        // For the crossed-mode datum the first iterate at xi = (1,1,0) is
        // -i (2pi)^{-3/2} eps^2 t e^{-2t} e3 (nu = 1, unit spacing).
        let geom = small_geom();
        let k = Kernel::ljs();
        let eps = 0.05;
        let u0 = presets::crossed_modes(geom, eps).unwrap();
        let opts = PicardOptions {
            iterations: 1,
            t_final: 0.2,
            time_nodes: 64,
            ..Default::default()
        };
        let iterates = picard_iterate(&u0, None, &k, &opts).unwrap();
        let t = opts.t_final;
        let site = geom.index_of(&[1, 1, 0]);
        let got = iterates[1].fields[opts.time_nodes].get(site).to_vec();
        let expect = c(0.0, -1.0) * (2.0 * PI).powf(-1.5) * eps * eps * t * (-2.0 * t).exp();
        // Piecewise-linear interpolation of the integrand leaves an
        // O(dt^2) error, about 3e-6 relative at 64 panels.
        assert!(
            (got[2] - expect).norm() < 1e-5 * expect.norm(),
            "{:?} vs {expect}",
            got[2]
        );
    }

    #[test]
    fn small_datum_contracts_and_residual_vanishes() {
        let geom = small_geom();
        let k = Kernel::ljs();
        let u0 = presets::crossed_modes(geom, 0.05).unwrap();
        let opts = PicardOptions {
            iterations: 8,
            t_final: 0.2,
            time_nodes: 16,
            ..Default::default()
        };
        let iterates = picard_iterate(&u0, None, &k, &opts).unwrap();
        let rep = contraction_report(&iterates, &k).unwrap();
        assert!(rep.contracting, "ratios: {:?}", rep.ratios);
        let base = &iterates[0];
        let last = iterates.last().unwrap();
        let res = fixed_point_residual(last, base, opts.nu, &k).unwrap();
        assert!(res < 1e-8, "residual = {res}");
        // Divergence-free preservation.
        for traj in &iterates {
            for f in &traj.fields {
                assert!(f.max_divergence() < 1e-12);
            }
        }
    }

    #[test]
    fn scaling_relation_exact_on_matched_lattices() {
        // || lambda^theta f_lambda || = || f || exactly for the
        // (n - theta)-homogeneous LJS kernel.
        let geom = small_geom();
        let k = Kernel::ljs();
        let f = presets::random_fh_ball(geom, &k, 0.9, 5);
        let base = fh_norm(&f, &k);
        for lambda in [0.5, 2.0] {
            let scaled = f.rescaled(lambda, k.theta());
            let v = fh_norm(&scaled, &k);
            assert!(
                (v - base).abs() <= 1e-12 * base,
                "lambda = {lambda}: {v} vs {base}"
            );
        }
    }

    #[test]
    fn large_datum_fails_to_contract() {
        let geom = small_geom();
        let k = Kernel::ljs();
        // Scale the datum far beyond the small-data regime.
        let u0 = presets::h_shaped(geom, &k, 2000.0);
        let opts = PicardOptions {
            iterations: 6,
            t_final: 0.5,
            time_nodes: 12,
            overflow_guard: 1e12,
            ..Default::default()
        };
        match picard_iterate(&u0, None, &k, &opts) {
            Ok(iterates) => {
                let rep = contraction_report(&iterates, &k).unwrap();
                assert!(!rep.contracting, "ratios: {:?}", rep.ratios);
            }
            Err(Error::BlowUp { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
