//! n-dimensional FFT helpers: zero-padded lattice convolution and the
//! transform of a lattice field to the periodic physical box.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::lattice::{LatticeField, LatticeGeometry};

/// In-place FFT along every axis of a row-major n-dimensional array.
pub fn ndfft(data: &mut [Complex64], dims: &[usize], inverse: bool) {
    assert_eq!(data.len(), dims.iter().product::<usize>());
    let mut planner = FftPlanner::new();
    let total = data.len();
    for (axis, &len) in dims.iter().enumerate() {
        if len == 1 {
            continue;
        }
        let fft = if inverse {
            planner.plan_fft_inverse(len)
        } else {
            planner.plan_fft_forward(len)
        };
        // stride between consecutive elements along this axis
        let stride: usize = dims[axis + 1..].iter().product();
        let lines = total / len;
        let mut scratch = vec![Complex64::new(0.0, 0.0); len];
        for line in 0..lines {
            // Decompose the line index into (outer block, inner offset).
            let inner = line % stride;
            let outer = line / stride;
            let base = outer * stride * len + inner;
            for i in 0..len {
                scratch[i] = data[base + i * stride];
            }
            fft.process(&mut scratch);
            for i in 0..len {
                data[base + i * stride] = scratch[i];
            }
        }
    }
    if inverse {
        let scale = 1.0 / total as f64;
        for z in data.iter_mut() {
            *z *= scale;
        }
    }
}

/// Discrete linear convolution of two scalar lattice arrays indexed over
/// `{-m..m}^n`: `c[k] = sum_j a[j] b[k - j]`, restricted back to the same
/// index cube. Zero padding to side `2L` removes wrap-around entirely, so
/// products of in-cutoff modes never alias back.
pub fn lattice_convolve_scalar(
    a: &[Complex64],
    b: &[Complex64],
    geom: &LatticeGeometry,
) -> Vec<Complex64> {
    let n = geom.dim;
    let side = geom.side();
    let m = geom.half_extent as usize;
    let pad = 2 * side;
    let pdims: Vec<usize> = vec![pad; n];
    let ptotal = pad.pow(n as u32);
    let mut fa = vec![Complex64::new(0.0, 0.0); ptotal];
    let mut fb = vec![Complex64::new(0.0, 0.0); ptotal];
    // Embed with offset +m so indices are nonnegative.
    for (site, coords) in geom.sites().enumerate() {
        let mut pidx = 0usize;
        for &c in &coords {
            pidx = pidx * pad + (c + geom.half_extent) as usize;
        }
        fa[pidx] = a[site];
        fb[pidx] = b[site];
    }
    ndfft(&mut fa, &pdims, false);
    ndfft(&mut fb, &pdims, false);
    for i in 0..ptotal {
        fa[i] *= fb[i];
    }
    ndfft(&mut fa, &pdims, true);
    // Result index k sits at position k + 2m in each axis.
    let mut out = vec![Complex64::new(0.0, 0.0); geom.site_count()];
    for (site, coords) in geom.sites().enumerate() {
        let mut pidx = 0usize;
        for &c in &coords {
            pidx = pidx * pad + (c + 2 * m as i32) as usize;
        }
        out[site] = fa[pidx];
    }
    out
}

/// Evaluate one component of a field on the dual periodic grid:
/// `f(y_j) = (2 pi)^{-n/2} dxi^n sum_k u(k dxi) e^{i k dxi . y_j}` with
/// `y_j = j * box / (side * pad_factor)`. Returns the row-major physical
/// array of side `side * pad_factor` (trigonometric interpolation for
/// `pad_factor > 1`).
pub fn to_physical(
    component: &[Complex64],
    geom: &LatticeGeometry,
    pad_factor: usize,
) -> Vec<Complex64> {
    let n = geom.dim;
    let side = geom.side();
    let g = side * pad_factor.max(1);
    let dims: Vec<usize> = vec![g; n];
    let total = g.pow(n as u32);
    let mut arr = vec![Complex64::new(0.0, 0.0); total];
    for (site, coords) in geom.sites().enumerate() {
        // Frequency index k mod g.
        let mut idx = 0usize;
        for &c in &coords {
            let wrapped = ((c % g as i32) + g as i32) % g as i32;
            idx = idx * g + wrapped as usize;
        }
        arr[idx] += component[site];
    }
    // Unnormalized inverse DFT gives sum_k u_k e^{+2 pi i k j / g}.
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_inverse(g);
    let totaldims = total;
    let mut scratch = vec![Complex64::new(0.0, 0.0); g];
    for (axis, &len) in dims.iter().enumerate() {
        let stride: usize = dims[axis + 1..].iter().product();
        let lines = totaldims / len;
        for line in 0..lines {
            let inner = line % stride;
            let outer = line / stride;
            let base = outer * stride * len + inner;
            for i in 0..len {
                scratch[i] = arr[base + i * stride];
            }
            fft.process(&mut scratch);
            for i in 0..len {
                arr[base + i * stride] = scratch[i];
            }
        }
    }
    let factor = (2.0 * std::f64::consts::PI).powf(-(n as f64) / 2.0) * geom.spacing.powi(n as i32);
    for z in arr.iter_mut() {
        *z *= factor;
    }
    arr
}

/// All components of a field on the physical grid, component-major.
pub fn field_to_physical(field: &LatticeField, pad_factor: usize) -> Vec<Vec<Complex64>> {
    let n = field.geom.dim;
    let sites = field.geom.site_count();
    (0..n)
        .map(|c| {
            let comp: Vec<Complex64> = (0..sites).map(|s| field.values[s * n + c]).collect();
            to_physical(&comp, &field.geom, pad_factor)
        })
        .collect()
}


/// Forward transform of one scalar component embedded in the zero-padded
/// cube of side `2L`, reusable across several convolutions.
pub fn pad_forward(component: &[Complex64], geom: &LatticeGeometry) -> Vec<Complex64> {
    let n = geom.dim;
    let pad = 2 * geom.side();
    let pdims: Vec<usize> = vec![pad; n];
    let mut fa = vec![Complex64::new(0.0, 0.0); pad.pow(n as u32)];
    for (site, coords) in geom.sites().enumerate() {
        let mut pidx = 0usize;
        for &c in &coords {
            pidx = pidx * pad + (c + geom.half_extent) as usize;
        }
        fa[pidx] = component[site];
    }
    ndfft(&mut fa, &pdims, false);
    fa
}

/// Inverse step of the padded convolution: multiply two forward transforms
/// and read the result back on the index cube.
pub fn conv_from_transforms(
    fa: &[Complex64],
    fb: &[Complex64],
    geom: &LatticeGeometry,
) -> Vec<Complex64> {
    let n = geom.dim;
    let pad = 2 * geom.side();
    let pdims: Vec<usize> = vec![pad; n];
    let m = geom.half_extent as usize;
    let mut prod: Vec<Complex64> = fa.iter().zip(fb).map(|(a, b)| a * b).collect();
    ndfft(&mut prod, &pdims, true);
    let mut out = vec![Complex64::new(0.0, 0.0); geom.site_count()];
    for (site, coords) in geom.sites().enumerate() {
        let mut pidx = 0usize;
        for &c in &coords {
            pidx = pidx * pad + (c + 2 * m as i32) as usize;
        }
        out[site] = prod[pidx];
    }
    out
}
