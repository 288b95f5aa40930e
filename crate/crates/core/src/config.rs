//! Declarative run configuration: a single TOML file with per-subcommand
//! sections, so cross-checks can share one kernel and datum definition.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::kernel::{make_product_kernel, Kernel, KernelForm};
use crate::lattice::LatticeGeometry;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootConfig {
    #[serde(default)]
    pub run: RunSection,
    pub kernel: Option<KernelConfig>,
    /// Candidate kernel for nonexistence probes; defaults to `[kernel]`.
    pub candidate: Option<KernelConfig>,
    pub probe: Option<ProbeConfig>,
    pub cascade: Option<CascadeConfig>,
    pub picard: Option<PicardConfig>,
    pub norms: Option<NormsConfig>,
    pub cross_check: Option<CrossCheckConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// 0 = let the runtime decide.
    #[serde(default)]
    pub workers: usize,
    pub out_dir: Option<String>,
}

fn default_seed() -> u64 {
    42
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: default_seed(),
            workers: 0,
            out_dir: None,
        }
    }
}

/// Kernel description: either a named preset or an explicit form.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub preset: Option<String>,
    pub dim: Option<usize>,
    pub form: Option<String>,
    pub exponent: Option<f64>,
    pub inner_exponent: Option<f64>,
    pub outer_exponent: Option<f64>,
    pub crossover_radius: Option<f64>,
    pub decay_rate: Option<f64>,
    pub blocks: Option<Vec<(usize, f64)>>,
    pub radii: Option<Vec<f64>>,
    pub values: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub scale: f64,
    pub theta: Option<f64>,
    #[serde(default)]
    pub validated: bool,
    pub claimed_sharp_b: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl KernelConfig {
    pub fn build(&self) -> Result<Kernel> {
        if let Some(p) = &self.preset {
            return match p.as_str() {
                "ljs" => Ok(Kernel::ljs()),
                other => Err(Error::Config(format!("unknown kernel preset '{other}'"))),
            };
        }
        let dim = self
            .dim
            .ok_or_else(|| Error::Config("kernel config needs 'dim'".into()))?;
        let theta = self
            .theta
            .ok_or_else(|| Error::Config("kernel config needs 'theta'".into()))?;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("kernel form needs '{name}'")))
        };
        let form = match self.form.as_deref() {
            Some("power_law") => KernelForm::PowerLaw {
                exponent: need(self.exponent, "exponent")?,
            },
            Some("truncated_power") => KernelForm::TruncatedPower {
                inner_exponent: need(self.inner_exponent, "inner_exponent")?,
                outer_exponent: need(self.outer_exponent, "outer_exponent")?,
                crossover_radius: need(self.crossover_radius, "crossover_radius")?,
            },
            Some("exp_damped") => KernelForm::ExpDamped {
                exponent: need(self.exponent, "exponent")?,
                decay_rate: need(self.decay_rate, "decay_rate")?,
            },
            Some("product") => {
                let blocks = self
                    .blocks
                    .clone()
                    .ok_or_else(|| Error::Config("product kernel needs 'blocks'".into()))?;
                let mut k = make_product_kernel(&blocks)?;
                if k.dim() != dim {
                    return Err(Error::Config(format!(
                        "product blocks span dimension {}, config says {dim}",
                        k.dim()
                    )));
                }
                if (k.theta() - theta).abs() > 1e-12 {
                    return Err(Error::Config(format!(
                        "product kernel theta is {} by construction, config says {theta}",
                        k.theta()
                    )));
                }
                if self.validated {
                    k = Kernel::validated(dim, k.form().clone(), self.scale, theta)?;
                }
                let mut k = k.scaled(self.scale)?;
                if let Some(b) = self.claimed_sharp_b {
                    k.set_sharp_b(b);
                }
                return Ok(k);
            }
            Some("tabulated_radial") => {
                let radii = self
                    .radii
                    .clone()
                    .ok_or_else(|| Error::Config("tabulated kernel needs 'radii'".into()))?;
                let values = self
                    .values
                    .clone()
                    .ok_or_else(|| Error::Config("tabulated kernel needs 'values'".into()))?;
                let k = Kernel::tabulated(dim, radii, values, theta)?;
                let form = k.form().clone();
                let mut k = if self.validated {
                    Kernel::validated(dim, form, self.scale, theta)?
                } else {
                    Kernel::candidate(dim, form, self.scale, theta)?
                };
                if let Some(b) = self.claimed_sharp_b {
                    k.set_sharp_b(b);
                }
                return Ok(k);
            }
            Some(other) => return Err(Error::Config(format!("unknown kernel form '{other}'"))),
            None => return Err(Error::Config("kernel config needs 'form' or 'preset'".into())),
        };
        let mut k = if self.validated {
            Kernel::validated(dim, form, self.scale, theta)?
        } else {
            Kernel::candidate(dim, form, self.scale, theta)?
        };
        if let Some(b) = self.claimed_sharp_b {
            k.set_sharp_b(b);
        }
        Ok(k)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub theta: f64,
    #[serde(default = "default_k_steps")]
    pub k_steps: usize,
    pub xi0: Option<Vec<f64>>,
}

fn default_k_steps() -> usize {
    6
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub dim: usize,
    pub half_extent: i32,
    pub spacing: f64,
    pub cutoff: f64,
}

impl LatticeConfig {
    pub fn build(&self) -> Result<LatticeGeometry> {
        LatticeGeometry::new(self.dim, self.half_extent, self.spacing, self.cutoff)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeConfig {
    /// Evaluation points.
    pub points: Vec<Vec<f64>>,
    /// Matching time horizons (single entry is broadcast).
    pub times: Vec<f64>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_depth_cap")]
    pub depth_cap: usize,
    #[serde(default = "one")]
    pub nu: f64,
    #[serde(default)]
    pub disable_branching: bool,
    /// Constant initial data value (per component) for the continuum runs.
    pub chi0_constant: Option<Vec<f64>>,
    /// Lattice mode: draw types from this lattice instead of the continuum.
    pub lattice: Option<LatticeConfig>,
}

fn default_samples() -> usize {
    10_000
}

fn default_depth_cap() -> usize {
    40
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    #[serde(default = "default_datum")]
    pub datum: String,
    #[serde(default = "default_eps")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub nu: f64,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_time_nodes")]
    pub time_nodes: usize,
    pub lattice: LatticeConfig,
}

fn default_datum() -> String {
    "crossed-modes".into()
}
fn default_eps() -> f64 {
    0.05
}
fn default_t_final() -> f64 {
    0.1
}
fn default_iterations() -> usize {
    6
}
fn default_time_nodes() -> usize {
    16
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormsConfig {
    /// "preset:<name>" (h-shaped, random-small, crossed-modes, single-mode)
    /// or "file:<path>" in the binary field format.
    pub field: String,
    #[serde(default = "default_eps")]
    pub amplitude: f64,
    pub lattice: Option<LatticeConfig>,
    pub kinds: Vec<String>,
    pub pm_a: Option<f64>,
    pub besov_alpha: Option<f64>,
    pub besov_p: Option<f64>,
    pub bmo_horizons: Option<Vec<f64>>,
    #[serde(default = "default_pad")]
    pub pad: usize,
}

fn default_pad() -> usize {
    2
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossCheckConfig {
    #[serde(default = "default_datum")]
    pub datum: String,
    #[serde(default = "default_eps")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub nu: f64,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_time_nodes")]
    pub time_nodes: usize,
    pub depths: Vec<usize>,
    /// Lattice coordinates of the comparison points.
    pub points: Vec<Vec<i32>>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    pub lattice: LatticeConfig,
}

/// Parse a TOML document with `key.path=value` overrides applied first.
pub fn parse_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<RootConfig> {
    Ok(resolve_with_overrides(text, overrides)?.0)
}

/// Same as [`parse_with_overrides`], also returning the resolved raw value
/// (for embedding into run manifests).
pub fn resolve_with_overrides(
    text: &str,
    overrides: &[(String, String)],
) -> Result<(RootConfig, toml::Value)> {
    let mut value: toml::Value = text
        .parse()
        .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
    for (path, raw) in overrides {
        apply_override(&mut value, path, raw)?;
    }
    let cfg: RootConfig = value
        .clone()
        .try_into()
        .map_err(|e| Error::Config(format!("config schema error: {e}")))?;
    Ok((cfg, value))
}

fn apply_override(value: &mut toml::Value, path: &str, raw: &str) -> Result<()> {
    fn go(cur: &mut toml::Value, parts: &[&str], raw: &str, path: &str) -> Result<()> {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path '{path}' crosses a non-table")))?;
        if parts.len() == 1 {
            // Parse the raw value as TOML, falling back to a string.
            let parsed: toml::Value = match format!("x = {raw}").parse::<toml::Value>() {
                Ok(v) => v.get("x").cloned().unwrap(),
                Err(_) => toml::Value::String(raw.to_string()),
            };
            table.insert(parts[0].to_string(), parsed);
            Ok(())
        } else {
            let next = table
                .entry(parts[0].to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
            go(next, &parts[1..], raw, path)
        }
    }
    let parts: Vec<&str> = path.split('.').collect();
    go(value, &parts, raw, path)
}
