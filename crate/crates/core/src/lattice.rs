//! Truncated uniform Fourier lattices and sampled complex vector fields.
//!
//! A `LatticeField` holds one complex n-vector per site of the cube
//! `{-m..m}^n` scaled by the spacing, with everything outside the cutoff
//! ball (and the origin site) held at zero. Site order is lexicographic in
//! the index cube, which is also the order of the binary field format.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeGeometry {
    pub dim: usize,
    /// Sites run over `{-half_extent ..= half_extent}` per axis.
    pub half_extent: i32,
    /// Lattice spacing (power of two keeps mode sums exact in f64).
    pub spacing: f64,
    /// Frequencies with `|xi| > cutoff` carry no data.
    pub cutoff: f64,
}

impl LatticeGeometry {
    pub fn new(dim: usize, half_extent: i32, spacing: f64, cutoff: f64) -> Result<Self> {
        if dim == 0 || half_extent < 1 || !(spacing > 0.0) || !(cutoff > 0.0) {
            return Err(Error::Config("invalid lattice geometry".into()));
        }
        Ok(LatticeGeometry {
            dim,
            half_extent,
            spacing,
            cutoff,
        })
    }

    pub fn side(&self) -> usize {
        (2 * self.half_extent + 1) as usize
    }

    pub fn site_count(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    /// Flattened index of a site given its integer coordinates.
    pub fn index_of(&self, coords: &[i32]) -> usize {
        let side = self.side() as i64;
        let m = self.half_extent as i64;
        let mut idx = 0i64;
        for &c in coords {
            debug_assert!((-m..=m).contains(&(c as i64)));
            idx = idx * side + (c as i64 + m);
        }
        idx as usize
    }

    /// Integer coordinates of a flattened site index.
    pub fn coords_of(&self, mut idx: usize) -> Vec<i32> {
        let side = self.side();
        let m = self.half_extent;
        let mut out = vec![0i32; self.dim];
        for d in (0..self.dim).rev() {
            out[d] = (idx % side) as i32 - m;
            idx /= side;
        }
        out
    }

    /// Frequency vector of a site.
    pub fn xi_of(&self, coords: &[i32]) -> Vec<f64> {
        coords.iter().map(|&c| c as f64 * self.spacing).collect()
    }

    pub fn xi_norm(&self, coords: &[i32]) -> f64 {
        (coords.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>()).sqrt() * self.spacing
    }

    pub fn in_cutoff(&self, coords: &[i32]) -> bool {
        self.xi_norm(coords) <= self.cutoff * (1.0 + 1e-12)
    }

    pub fn is_origin(coords: &[i32]) -> bool {
        coords.iter().all(|&c| c == 0)
    }

    /// Iterate all integer coordinate tuples in lexicographic order.
    pub fn sites(&self) -> SiteIter {
        SiteIter {
            geom: *self,
            next: Some(vec![-self.half_extent; self.dim]),
        }
    }

    /// Side length of the periodic physical box dual to this lattice.
    pub fn physical_box(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.spacing
    }
}

pub struct SiteIter {
    geom: LatticeGeometry,
    next: Option<Vec<i32>>,
}

impl Iterator for SiteIter {
    type Item = Vec<i32>;
    fn next(&mut self) -> Option<Vec<i32>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let m = self.geom.half_extent;
        for d in (0..self.geom.dim).rev() {
            if succ[d] < m {
                succ[d] += 1;
                self.next = Some(succ);
                break;
            }
            succ[d] = -m;
        }
        Some(current)
    }
}

/// A sampled complex vector field on a truncated Fourier lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeField {
    pub geom: LatticeGeometry,
    /// Site-major layout: `values[site * dim + component]`.
    pub values: Vec<Complex64>,
    pub divergence_free: bool,
}

impl LatticeField {
    pub fn zero(geom: LatticeGeometry) -> Self {
        let len = geom.site_count() * geom.dim;
        LatticeField {
            geom,
            values: vec![Complex64::new(0.0, 0.0); len],
            divergence_free: true,
        }
    }

    pub fn get(&self, site: usize) -> &[Complex64] {
        &self.values[site * self.geom.dim..(site + 1) * self.geom.dim]
    }

    pub fn set(&mut self, site: usize, v: &[Complex64]) {
        let n = self.geom.dim;
        self.values[site * n..(site + 1) * n].copy_from_slice(v);
    }

    /// Zero out the origin site and everything outside the cutoff ball.
    pub fn apply_mask(&mut self) {
        let geom = self.geom;
        for coords in geom.sites() {
            if LatticeGeometry::is_origin(&coords) || !geom.in_cutoff(&coords) {
                let site = geom.index_of(&coords);
                for c in 0..geom.dim {
                    self.values[site * geom.dim + c] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    /// Largest site-wise |xi . u(xi)| relative to |xi| |u(xi)|.
    pub fn max_divergence(&self) -> f64 {
        let geom = self.geom;
        let mut worst = 0.0f64;
        for coords in geom.sites() {
            if LatticeGeometry::is_origin(&coords) {
                continue;
            }
            let site = geom.index_of(&coords);
            let xi = geom.xi_of(&coords);
            let u = self.get(site);
            let dot: Complex64 = xi.iter().zip(u).map(|(x, z)| z * *x).sum();
            let norm_u: f64 = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let norm_xi = geom.xi_norm(&coords);
            if norm_u > 0.0 {
                worst = worst.max(dot.norm() / (norm_xi * norm_u));
            }
        }
        worst
    }

    /// Check conjugate symmetry `u(-xi) = conj(u(xi))` (a real field).
    pub fn is_real_field(&self, tol: f64) -> bool {
        let geom = self.geom;
        for coords in geom.sites() {
            let neg: Vec<i32> = coords.iter().map(|&c| -c).collect();
            let a = self.get(geom.index_of(&coords));
            let b = self.get(geom.index_of(&neg));
            for c in 0..geom.dim {
                if (a[c] - b[c].conj()).norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// The scaled field `lambda^theta f_lambda` on the matched lattice with
    /// spacing `lambda * spacing`: values pick up `lambda^{theta - n}` and
    /// the geometry dilates, leaving the majorization norm against a
    /// `(n-theta)`-homogeneous kernel exactly invariant.
    pub fn rescaled(&self, lambda: f64, theta: f64) -> LatticeField {
        let mut geom = self.geom;
        geom.spacing *= lambda;
        geom.cutoff *= lambda;
        let factor = lambda.powf(theta - self.geom.dim as f64);
        LatticeField {
            geom,
            values: self.values.iter().map(|z| z * factor).collect(),
            divergence_free: self.divergence_free,
        }
    }
}

const FIELD_MAGIC: &[u8; 8] = b"FNSFLD01";

/// Write the documented binary field format: header (magic, n, spacing,
/// cutoff, site count), then site-major complex components as little-endian
/// f64 pairs.
pub fn write_field<W: Write>(w: &mut W, field: &LatticeField) -> Result<()> {
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&(field.geom.dim as u32).to_le_bytes())?;
    w.write_all(&field.geom.spacing.to_le_bytes())?;
    w.write_all(&field.geom.cutoff.to_le_bytes())?;
    w.write_all(&(field.geom.site_count() as u64).to_le_bytes())?;
    for z in &field.values {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field<R: Read>(r: &mut R) -> Result<LatticeField> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(Error::Config("not a lattice field file".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let spacing = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let cutoff = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let site_count = u64::from_le_bytes(b8) as usize;
    // Recover the half extent from the site count.
    let side = (site_count as f64).powf(1.0 / dim as f64).round() as usize;
    if side % 2 != 1 || side.pow(dim as u32) != site_count {
        return Err(Error::Config(format!(
            "site count {site_count} is not an odd cube of dimension {dim}"
        )));
    }
    let geom = LatticeGeometry::new(dim, ((side - 1) / 2) as i32, spacing, cutoff)?;
    let mut values = Vec::with_capacity(site_count * dim);
    for _ in 0..site_count * dim {
        r.read_exact(&mut b8)?;
        let re = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let im = f64::from_le_bytes(b8);
        values.push(Complex64::new(re, im));
    }
    let mut field = LatticeField {
        geom,
        values,
        divergence_free: false,
    };
    field.divergence_free = field.max_divergence() < 1e-10;
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_indexing_round_trips() {
        let geom = LatticeGeometry::new(3, 2, 0.5, 1.0).unwrap();
        assert_eq!(geom.site_count(), 125);
        for (i, coords) in geom.sites().enumerate() {
            assert_eq!(geom.index_of(&coords), i);
            assert_eq!(geom.coords_of(i), coords);
        }
    }

    #[test]
    fn mask_zeroes_origin_and_outside_cutoff() {
        let geom = LatticeGeometry::new(2, 3, 1.0, 2.0).unwrap();
        let mut f = LatticeField::zero(geom);
        for i in 0..f.values.len() {
            f.values[i] = Complex64::new(1.0, -1.0);
        }
        f.apply_mask();
        let origin = geom.index_of(&[0, 0]);
        assert_eq!(f.get(origin)[0], Complex64::new(0.0, 0.0));
        let far = geom.index_of(&[3, 3]); // |xi| = 4.24 > 2
        assert_eq!(f.get(far)[0], Complex64::new(0.0, 0.0));
        let inside = geom.index_of(&[1, 1]);
        assert_eq!(f.get(inside)[0], Complex64::new(1.0, -1.0));
    }

    #[test]
    fn field_io_round_trip() {
        let geom = LatticeGeometry::new(3, 1, 0.5, 1.5).unwrap();
        let mut f = LatticeField::zero(geom);
        let site = geom.index_of(&[1, 0, -1]);
        f.set(
            site,
            &[
                Complex64::new(0.25, -1.5),
                Complex64::new(2.0, 0.0),
                Complex64::new(0.0, 3.5),
            ],
        );
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        let g = read_field(&mut buf.as_slice()).unwrap();
        assert_eq!(g.geom, geom);
        assert_eq!(g.values, f.values);
    }

    #[test]
    fn divergence_detects_non_solenoidal_fields() {
        let geom = LatticeGeometry::new(3, 1, 1.0, 2.0).unwrap();
        let mut f = LatticeField::zero(geom);
        let site = geom.index_of(&[1, 0, 0]);
        // Parallel to xi: fully non-solenoidal.
        f.set(
            site,
            &[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
        );
        assert!(f.max_divergence() > 0.99);
        // Orthogonal: solenoidal.
        f.set(
            site,
            &[Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
        );
        assert!(f.max_divergence() < 1e-14);
    }
}
