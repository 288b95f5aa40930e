use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use num_complex::Complex64;

use fnslab_core::cascade::{Cascade, EvalOptions, TypeSpace};
use fnslab_core::config::{self, RootConfig};
use fnslab_core::convolve::{self, RadialQuadratureGrid};
use fnslab_core::error::Error as CoreError;
use fnslab_core::kernel::{estimate_exponents, l1_plus_l2_report};
use fnslab_core::lattice::{write_field, LatticeField};
use fnslab_core::picard::{self, presets, PicardOptions};
use fnslab_core::probe;
use fnslab_core::report::{fmt_f64, write_csv, write_json};
use fnslab_core::spaces;

use crate::manifest::ManifestBuilder;
use crate::{Cli, Command};

pub fn error_category(err: &anyhow::Error) -> &'static str {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::Config(_)) => "config",
        Some(CoreError::TheoremGate { .. }) => "kernel_validation",
        Some(CoreError::Precondition(_)) => "precondition",
        Some(CoreError::NotMajorizing { .. }) => "not_majorizing",
        Some(CoreError::Geometry(_)) => "geometry",
        Some(CoreError::BlowUp { .. }) => "blow_up",
        Some(CoreError::Io(_)) => "io",
        _ => "runtime",
    }
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::Config(_)) => 2,
        Some(CoreError::TheoremGate { .. }) => 3,
        Some(CoreError::Precondition(_)) => 4,
        Some(CoreError::NotMajorizing { .. }) => 5,
        _ => 1,
    }
}

struct Env {
    cfg: RootConfig,
    raw: toml::Value,
    seed: u64,
    workers: usize,
    out_dir: PathBuf,
}

fn prepare(cli: &Cli) -> anyhow::Result<Env> {
    let text = match &cli.config {
        Some(path) => fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => String::new(),
    };
    let overrides: Vec<(String, String)> = cli
        .overrides
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| anyhow!("override '{kv}' is not KEY=VALUE"))
        })
        .collect::<anyhow::Result<_>>()?;
    let (cfg, raw) = config::resolve_with_overrides(&text, &overrides)?;
    let seed = cli.seed.unwrap_or(cfg.run.seed);
    let workers = cli.workers.unwrap_or(cfg.run.workers);
    if workers > 0 {
        // Ignore the error if a pool already exists (tests call run twice).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| cfg.run.out_dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os("FNSLAB_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out_dir)?;
    Ok(Env {
        cfg,
        raw,
        seed,
        workers,
        out_dir,
    })
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let env = prepare(cli)?;
    let name = match cli.command {
        Command::VerifyKernel => "verify-kernel",
        Command::NonexistenceTrace => "nonexistence-trace",
        Command::CascadeSolve => "cascade-solve",
        Command::PicardSolve => "picard-solve",
        Command::Norms => "norms",
        Command::CrossCheck => "cross-check",
    };
    let mut mb = ManifestBuilder::new(
        name,
        serde_json::to_value(&env.raw)?,
        env.seed,
        env.workers,
    );
    match cli.command {
        Command::VerifyKernel => verify_kernel(&env, &mut mb)?,
        Command::NonexistenceTrace => nonexistence_trace(&env, &mut mb)?,
        Command::CascadeSolve => cascade_solve(&env, &mut mb)?,
        Command::PicardSolve => picard_solve(&env, &mut mb)?,
        Command::Norms => norms(&env, &mut mb)?,
        Command::CrossCheck => cross_check(&env, &mut mb)?,
    }
    let path = mb.write(&env.out_dir)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn kernel_of(env: &Env) -> anyhow::Result<fnslab_core::Kernel> {
    Ok(env
        .cfg
        .kernel
        .as_ref()
        .ok_or_else(|| CoreError::Config("missing [kernel] section".into()))?
        .build()?)
}

fn verify_kernel(env: &Env, mb: &mut ManifestBuilder) -> anyhow::Result<()> {
    let kernel = kernel_of(env)?;
    let grid = RadialQuadratureGrid::default();
    let probes = convolve::default_probe_points(&kernel, 200);
    let csv_probes: Vec<Vec<f64>> = probes.iter().step_by(probes.len().div_ceil(64)).cloned().collect();
    let conv = convolve::self_convolve(&kernel, &csv_probes, &grid)?;
    let rows: Vec<Vec<String>> = conv
        .points
        .iter()
        .zip(conv.values.iter().zip(&conv.tail_bounds))
        .enumerate()
        .map(|(i, (p, (v, tb)))| {
            let r = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            vec![fmt_f64(r), i.to_string(), fmt_f64(*v), fmt_f64(*tb)]
        })
        .collect();
    let conv_path = env.out_dir.join("convolution.csv");
    write_csv(&conv_path, &["xi_norm", "direction_index", "value", "tail_bound"], &rows)?;
    mb.record(&conv_path);

    let exponents = estimate_exponents(&kernel);
    let l1l2 = l1_plus_l2_report(&kernel, 1.0)?;
    let summary_path = env.out_dir.join("kernel_report.json");
    match convolve::sharp_constant(&kernel, kernel.theta(), &probes, &grid) {
        Ok(sharp) => {
            write_json(
                &summary_path,
                &serde_json::json!({
                    "dim": kernel.dim(),
                    "theta": kernel.theta(),
                    "b": sharp.b,
                    "standardized": sharp.standardized,
                    "probes": sharp.probes,
                    "max_relative_tail": sharp.max_relative_tail,
                    "alpha": exponents.alpha,
                    "omega": exponents.omega,
                    "algebraic_class": exponents.in_algebraic_class(),
                    "origin_bound_ok": exponents.origin_bound_ok,
                    "infinity_bound_ok": exponents.infinity_bound_ok,
                    "l1_plus_l2_member": l1l2.member,
                }),
            )?;
        }
        Err(CoreError::NotMajorizing { theta, radius }) => {
            write_json(
                &summary_path,
                &serde_json::json!({
                    "dim": kernel.dim(),
                    "theta": kernel.theta(),
                    "not_majorizing": true,
                    "certificate": format!("self-convolution diverges at |xi| = {radius} for theta = {theta}"),
                    "alpha": exponents.alpha,
                    "omega": exponents.omega,
                    "l1_plus_l2_member": l1l2.member,
                }),
            )?;
        }
        Err(e) => return Err(e.into()),
    }
    mb.record(&summary_path);
    Ok(())
}

/// Scientific-notation rendering of 2^log2x for values far past f64 range.
fn fmt_from_log2(log2x: f64) -> String {
    if log2x < 1000.0 {
        return fmt_f64((log2x * std::f64::consts::LN_2).exp());
    }
    let log10 = log2x * (2f64).log10();
    let exp = log10.floor();
    let mantissa = (10f64).powf(log10 - exp);
    format!("{mantissa:.6}e{exp}")
}

fn nonexistence_trace(env: &Env, mb: &mut ManifestBuilder) -> anyhow::Result<()> {
    let candidate = match (&env.cfg.candidate, &env.cfg.kernel) {
        (Some(c), _) => c.build()?,
        (None, Some(k)) => k.build()?,
        (None, None) => return Err(CoreError::Config("missing [candidate] or [kernel] section".into()).into()),
    };
    let pcfg = env
        .cfg
        .probe
        .as_ref()
        .ok_or_else(|| CoreError::Config("missing [probe] section".into()))?;
    let theta = pcfg.theta;
    let n = candidate.dim();

    let origin = probe::origin_classify(&candidate, theta);
    let trace = if theta >= n as f64 / 2.0 && theta < n as f64 {
        match probe::chain_sequence(n, theta, &candidate, pcfg.k_steps) {
            Ok(t) => Some(t),
            Err(CoreError::Precondition(msg)) if msg.starts_with("premise fails") => None,
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    if let Some(trace) = &trace {
        let rows: Vec<Vec<String>> = trace
            .entries
            .iter()
            .map(|e| {
                vec![
                    e.k.to_string(),
                    fmt_from_log2(e.x_log2),
                    fmt_f64(e.rho),
                    fmt_f64(e.lambda),
                    fmt_f64(e.lower_bound),
                ]
            })
            .collect();
        let path = env.out_dir.join("chaining_trace.csv");
        write_csv(&path, &["k", "x_k", "rho_k", "lambda_k", "lower_bound_k"], &rows)?;
        mb.record(&path);
    }
    let xi0 = pcfg.xi0.clone().unwrap_or_else(|| {
        let mut v = vec![0.0; n];
        v[0] = 1.0;
        v
    });
    let blowup = probe::blowup_certificate(&candidate, theta, &xi0, pcfg.k_steps)?;
    let verdict_path = env.out_dir.join("verdict.json");
    write_json(
        &verdict_path,
        &serde_json::json!({
            "theta": theta,
            "dim": n,
            "origin_class": origin,
            "chain_verdict": trace.as_ref().map(|t| &t.verdict),
            "chain_note": trace.as_ref().map(|t| &t.note),
            "blowup": blowup,
        }),
    )?;
    mb.record(&verdict_path);
    Ok(())
}

fn cascade_solve(env: &Env, mb: &mut ManifestBuilder) -> anyhow::Result<()> {
    let kernel = kernel_of(env)?;
    let ccfg = env
        .cfg
        .cascade
        .as_ref()
        .ok_or_else(|| CoreError::Config("missing [cascade] section".into()))?;
    let space = match &ccfg.lattice {
        Some(l) => TypeSpace::Lattice(l.build()?),
        None => TypeSpace::Continuum,
    };
    let cascade = Cascade::new(kernel.clone(), ccfg.nu, space, ccfg.depth_cap)?;
    let n = kernel.dim();
    let chi0_vals: Vec<Complex64> = ccfg
        .chi0_constant
        .clone()
        .unwrap_or_else(|| {
            let mut v = vec![0.0; n];
            v[0] = 1.0;
            v
        })
        .into_iter()
        .map(|x| Complex64::new(x, 0.0))
        .collect();
    let chi0 = move |_: &[f64]| chi0_vals.clone();
    let phi = fnslab_core::cascade::zero_forcing(n);
    let opts = EvalOptions {
        disable_branching: ccfg.disable_branching,
        operational_depth_limit: None,
    };
    let times: Vec<f64> = if ccfg.times.len() == 1 {
        vec![ccfg.times[0]; ccfg.points.len()]
    } else if ccfg.times.len() == ccfg.points.len() {
        ccfg.times.clone()
    } else {
        return Err(CoreError::Config("cascade times must have length 1 or match points".into()).into());
    };
    let mut rows = Vec::new();
    let mut estimates = Vec::new();
    for (i, (point, &t)) in ccfg.points.iter().zip(&times).enumerate() {
        let est = fnslab_core::cascade::estimate_solution(
            &cascade, point, t, &chi0, &phi, opts, ccfg.n_samples, env.seed,
        )?;
        for c in 0..n {
            rows.push(vec![
                i.to_string(),
                fmt_f64(t),
                c.to_string(),
                fmt_f64(est.mean[c].re),
                fmt_f64(est.mean[c].im),
                fmt_f64(est.std_error[c]),
                fmt_f64(est.depth_cap_fraction),
                fmt_f64(est.heavy_tail_diag),
            ]);
        }
        estimates.push(est);
    }
    let path = env.out_dir.join("cascade_estimates.csv");
    write_csv(
        &path,
        &[
            "point_index",
            "t",
            "component",
            "mean_re",
            "mean_im",
            "std_error",
            "depth_cap_fraction",
            "heavy_tail_diag",
        ],
        &rows,
    )?;
    mb.record(&path);
    let jpath = env.out_dir.join("cascade_estimates.json");
    write_json(&jpath, &estimates)?;
    mb.record(&jpath);
    Ok(())
}

fn datum_by_name(
    name: &str,
    geom: fnslab_core::lattice::LatticeGeometry,
    kernel: &fnslab_core::Kernel,
    eps: f64,
    seed: u64,
) -> anyhow::Result<LatticeField> {
    Ok(match name {
        "single-mode" => presets::single_mode(geom, eps)?,
        "crossed-modes" => presets::crossed_modes(geom, eps)?,
        "random-small" => presets::random_fh_ball(geom, kernel, eps, seed),
        "h-shaped" => presets::h_shaped(geom, kernel, eps),
        other => return Err(CoreError::Config(format!("unknown datum preset '{other}'")).into()),
    })
}

fn picard_solve(env: &Env, mb: &mut ManifestBuilder) -> anyhow::Result<()> {
    let kernel = kernel_of(env)?;
    let pcfg = env
        .cfg
        .picard
        .as_ref()
        .ok_or_else(|| CoreError::Config("missing [picard] section".into()))?;
    let geom = pcfg.lattice.build()?;
    let u0 = datum_by_name(&pcfg.datum, geom, &kernel, pcfg.amplitude, env.seed)?;
    let opts = PicardOptions {
        nu: pcfg.nu,
        t_final: pcfg.t_final,
        time_nodes: pcfg.time_nodes,
        iterations: pcfg.iterations,
        disable_bilinear: false,
        overflow_guard: 1e9,
    };
    let iterates = picard::picard_iterate(&u0, None, &kernel, &opts)?;
    let report = picard::contraction_report(&iterates, &kernel)?;
    let rows: Vec<Vec<String>> = iterates
        .iter()
        .map(|traj| {
            let k = traj.iterate;
            vec![
                k.to_string(),
                fmt_f64(picard::fht_norm(traj, &kernel)),
                if k < report.differences.len() {
                    fmt_f64(report.differences[k])
                } else {
                    String::new()
                },
            ]
        })
        .collect();
    let norms_path = env.out_dir.join("picard_norms.csv");
    write_csv(&norms_path, &["iterate", "fht_norm", "difference_to_next"], &rows)?;
    mb.record(&norms_path);
    let contraction_path = env.out_dir.join("contraction.json");
    write_json(&contraction_path, &report)?;
    mb.record(&contraction_path);
    let field_path = env.out_dir.join("field.bin");
    let last = iterates.last().unwrap();
    let mut w = BufWriter::new(File::create(&field_path)?);
    write_field(&mut w, last.fields.last().unwrap())?;
    drop(w);
    mb.record(&field_path);
    Ok(())
}

fn norms(env: &Env, mb: &mut ManifestBuilder) -> anyhow::Result<()> {
    let ncfg = env
        .cfg
        .norms
        .as_ref()
        .ok_or_else(|| CoreError::Config("missing [norms] section".into()))?;
    let kernel = kernel_of(env)?;
    let field: LatticeField = if let Some(path) = ncfg.field.strip_prefix("file:") {
        let mut f = File::open(Path::new(path)).with_context(|| format!("opening field {path}"))?;
        fnslab_core::lattice::read_field(&mut f)?
    } else if let Some(name) = ncfg.field.strip_prefix("preset:") {
        let geom = ncfg
            .lattice
            .as_ref()
            .ok_or_else(|| CoreError::Config("preset field needs [norms.lattice]".into()))?
            .build()?;
        datum_by_name(name, geom, &kernel, ncfg.amplitude, env.seed)?
    } else {
        return Err(CoreError::Config("norms field must be 'file:...' or 'preset:...'".into()).into());
    };
    fn push_report(rows: &mut Vec<Vec<String>>, rep: &spaces::NormReport) {
        rows.push(vec![
            rep.kind.to_string(),
            fmt_f64(rep.value),
            fmt_f64(rep.truncation_radius),
            fmt_f64(rep.error_estimate),
        ]);
    }
    let mut rows = Vec::new();
    for kind in &ncfg.kinds {
        match kind.as_str() {
            "pm" => {
                let a = ncfg.pm_a.unwrap_or(kernel.dim() as f64 - kernel.theta());
                push_report(&mut rows, &spaces::pm_norm(&field, a)?);
            }
            "fh" => {
                let v = picard::fh_norm(&field, &kernel);
                rows.push(vec![
                    "fh".into(),
                    fmt_f64(v),
                    fmt_f64(field.geom.cutoff),
                    String::from("0"),
                ]);
            }
            "besov" => {
                let alpha = ncfg.besov_alpha.unwrap_or(1.0);
                let p = ncfg.besov_p.unwrap_or(2.0);
                push_report(&mut rows, &spaces::besov_heat_norm(&field, alpha, p, ncfg.pad)?);
            }
            "bmo" => {
                let horizons = ncfg.bmo_horizons.clone().unwrap_or_else(|| vec![0.25]);
                for t in horizons {
                    let balls = spaces::BallFamily::default_for(&field.geom, Some(t));
                    push_report(&mut rows, &spaces::bmo_minus1_norm(&field, Some(t), &balls, ncfg.pad)?);
                }
            }
            other => return Err(CoreError::Config(format!("unknown norm kind '{other}'")).into()),
        }
    }
    let path = env.out_dir.join("norms.csv");
    write_csv(&path, &["kind", "value", "truncation_radius", "error_estimate"], &rows)?;
    mb.record(&path);
    Ok(())
}

fn cross_check(env: &Env, mb: &mut ManifestBuilder) -> anyhow::Result<()> {
    let kernel = kernel_of(env)?;
    let xcfg = env
        .cfg
        .cross_check
        .as_ref()
        .ok_or_else(|| CoreError::Config("missing [cross_check] section".into()))?;
    let geom = xcfg.lattice.build()?;
    let u0 = datum_by_name(&xcfg.datum, geom, &kernel, xcfg.amplitude, env.seed)?;
    let opts = PicardOptions {
        nu: xcfg.nu,
        t_final: xcfg.t_final,
        time_nodes: xcfg.time_nodes,
        iterations: xcfg.depths.iter().copied().max().unwrap_or(1).max(1),
        disable_bilinear: false,
        overflow_guard: 1e9,
    };
    let rows = picard::cascade_correspondence(
        &kernel,
        &u0,
        &opts,
        &xcfg.points,
        &xcfg.depths,
        xcfg.n_samples,
        env.seed,
    )?;
    let csv: Vec<Vec<String>> = rows
        .iter()
        .flat_map(|r| {
            (0..geom.dim).map(move |c| {
                vec![
                    r.coords
                        .iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join("|"),
                    fmt_f64(r.t),
                    r.depth.to_string(),
                    c.to_string(),
                    fmt_f64(r.picard[c].re),
                    fmt_f64(r.picard[c].im),
                    fmt_f64(r.cascade_mean[c].re),
                    fmt_f64(r.cascade_mean[c].im),
                    fmt_f64(r.std_error[c]),
                    fmt_f64(r.sigma_distance),
                ]
            })
        })
        .collect();
    let path = env.out_dir.join("cross_check.csv");
    write_csv(
        &path,
        &[
            "coords",
            "t",
            "depth",
            "component",
            "picard_re",
            "picard_im",
            "cascade_re",
            "cascade_im",
            "std_error",
            "sigma_distance",
        ],
        &csv,
    )?;
    mb.record(&path);
    let max_sigma = rows.iter().map(|r| r.sigma_distance).fold(0.0f64, f64::max);
    let jpath = env.out_dir.join("cross_check.json");
    write_json(
        &jpath,
        &serde_json::json!({
            "max_sigma_distance": max_sigma,
            "rows": rows.len(),
            "n_samples": xcfg.n_samples,
        }),
    )?;
    mb.record(&jpath);
    Ok(())
}
