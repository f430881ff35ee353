//! The commands behind the `levy-cox` binary. Each writes its outputs under
//! an output directory and stamps them with the config hash, seed and
//! version.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, VERSION};
use crate::crm::{harness_suite, CrmDraw, CrmSimulator, HarnessReport, DEFAULT_DROPPED_FRACTION};
use crate::data::{load_csv, Dataset};
use crate::error::{Error, Result};
use crate::kernel::{prior_predictive_stable_dl, Kernel};
use crate::levy::{BaseMeasure, Density, LevyFamily, ParamFn};
use crate::partition::{enumerate_partitions, esf_log_prob, Partition};
use crate::posterior::{prior_predictive, ModelSpec};
use crate::quadrature::integrate;
use crate::samplers::{mean_intensity, normalised_weights, replicate_rng, streams, weight_summary, Estimate, Sampler};

#[derive(Debug, Clone, Serialize)]
struct Stamp<'a> {
    config_hash: &'a str,
    seed: u64,
    version: &'a str,
}

fn stamp(cfg: &RunConfig) -> Stamp<'_> {
    Stamp {
        config_hash: &cfg.hash,
        seed: cfg.seed,
        version: VERSION,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Writes a CSV whose first line is the stamp comment.
fn write_csv(path: &Path, cfg: &RunConfig, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "{}", cfg.stamp())?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn hazard_rows(times: &[f64], est: &[Estimate]) -> Vec<Vec<f64>> {
    times.iter().zip(est).map(|(&t, e)| vec![t, e.value, e.se]).collect()
}

const HAZARD_HEADER: [&str; 3] = ["t", "posterior_mean_hazard", "mc_se"];

fn load_data(path: &Path) -> Result<Dataset> {
    let (data, warnings) = load_csv(path)?;
    for w in &warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(data)
}

fn build_model(cfg: &RunConfig, data: &Dataset) -> Result<ModelSpec> {
    ModelSpec::with_options(cfg.kernel, cfg.family.clone(), cfg.eta.clone(), data, cfg.model_options())
}

#[derive(Debug, Clone, Serialize)]
struct Timings {
    model_ms: u128,
    sampling_ms: u128,
    estimation_ms: u128,
    crm_ms: u128,
}

#[derive(Debug, Clone, Serialize)]
struct FitDiagnostics<'a> {
    #[serde(flatten)]
    stamp: Stamp<'a>,
    sampler: String,
    replicates: usize,
    workers: usize,
    events: usize,
    records: usize,
    data_hash: String,
    latent_grid_level: u32,
    ess: f64,
    log_weight_quantiles: Option<[f64; 5]>,
    crm_draws: usize,
    timings: Timings,
    notes: Vec<String>,
}

/// What a fit produced, for callers that want more than the files.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub times: Vec<f64>,
    pub hazard: Vec<Estimate>,
    pub hazard_csv: PathBuf,
    pub diagnostics_json: PathBuf,
}

/// Posterior mean hazard on the configured grid from the configured sampler.
pub fn fit(cfg: &RunConfig, data_path: &Path, out: &Path) -> Result<FitOutput> {
    fs::create_dir_all(out)?;
    let data = load_data(data_path)?;
    let times = cfg.grid.times();
    let t0 = Instant::now();
    let model = build_model(cfg, &data)?;
    let model_ms = t0.elapsed().as_millis();
    let sampler = Sampler::new(&model);
    let mut notes = Vec::new();

    let t1 = Instant::now();
    let draws = if model.n() == 0 {
        notes.push("no events: the posterior is the prior tilted by the censoring exposure".into());
        Vec::new()
    } else {
        sampler.run(&cfg.run_settings())?
    };
    let sampling_ms = t1.elapsed().as_millis();

    let t2 = Instant::now();
    let (hazard, ess, quantiles) = if draws.is_empty() {
        let h = times
            .iter()
            .map(|&x| {
                Ok(Estimate {
                    value: model.prior_mean_intensity(x)?,
                    se: 0.0,
                    ess: f64::INFINITY,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        (h, cfg.replicates as f64, None)
    } else {
        let summary = weight_summary(&draws)?;
        if summary.ess < 1.0 + 1e-9 && cfg.replicates > 1 && !matches!(cfg.sampler, crate::samplers::SamplerKind::Gibbs) {
            return Err(Error::Degenerate(format!(
                "effective sample size collapsed to {:.3} of {} replicates",
                summary.ess, cfg.replicates
            )));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::domain(format!("cannot start worker pool: {e}")))?;
        let h = pool.install(|| mean_intensity(&sampler, &draws, &times))?;
        (h, summary.ess, Some(summary.log_weight_quantiles))
    };
    let estimation_ms = t2.elapsed().as_millis();

    let t3 = Instant::now();
    if cfg.crm_draws > 0 {
        write_crm_draws(cfg, &model, &sampler, &draws, &out.join("crm_draws"))?;
    }
    let crm_ms = t3.elapsed().as_millis();

    let hazard_csv = out.join("hazard.csv");
    write_csv(&hazard_csv, cfg, &HAZARD_HEADER, &hazard_rows(&times, &hazard))?;
    let diagnostics_json = out.join("diagnostics.json");
    write_json(
        &diagnostics_json,
        &FitDiagnostics {
            stamp: stamp(cfg),
            sampler: cfg.sampler.to_string(),
            replicates: cfg.replicates,
            workers: cfg.workers,
            events: data.n(),
            records: data.m(),
            data_hash: data.content_hash(),
            latent_grid_level: model.grid_level(),
            ess,
            log_weight_quantiles: quantiles,
            crm_draws: cfg.crm_draws,
            timings: Timings {
                model_ms,
                sampling_ms,
                estimation_ms,
                crm_ms,
            },
            notes,
        },
    )?;
    Ok(FitOutput {
        times,
        hazard,
        hazard_csv,
        diagnostics_json,
    })
}

#[derive(Debug, Clone, Serialize)]
struct TruncationReport<'a> {
    #[serde(flatten)]
    stamp: Stamp<'a>,
    epsilon: f64,
    dropped_mass: f64,
    draws: Vec<DrawSummary>,
}

#[derive(Debug, Clone, Serialize)]
struct DrawSummary {
    file: String,
    source_replicate: usize,
    atoms: usize,
    total_mass: f64,
}

/// Full posterior measure draws: partitions are resampled by weight, then
/// each gets latent values and a tilted measure with fixed atoms.
fn write_crm_draws(
    cfg: &RunConfig,
    model: &ModelSpec,
    sampler: &Sampler<'_>,
    draws: &[crate::samplers::PosteriorDraw],
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let sim = CrmSimulator::for_model(model)?;
    let eps = match cfg.epsilon {
        Some(e) => e,
        None => sim.auto_epsilon(DEFAULT_DROPPED_FRACTION)?,
    };
    let prep = sim.prepare(eps)?;
    let cumulative: Vec<f64> = if draws.is_empty() {
        Vec::new()
    } else {
        normalised_weights(draws)?
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::domain(format!("cannot start worker pool: {e}")))?;
    let made: Vec<(usize, CrmDraw)> = pool.install(|| {
        (0..cfg.crm_draws as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = replicate_rng(cfg.seed, streams::CRM, i);
                if draws.is_empty() {
                    return Ok((0, sim.draw_tilted(&prep, &mut rng)?));
                }
                let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
                let b = cumulative.partition_point(|&c| c < u).min(draws.len() - 1);
                let d = &draws[b];
                let ystar = match &d.cell_values {
                    Some(v) => v.clone(),
                    None => sampler.draw_cell_values(&d.partition, &mut rng)?,
                };
                Ok((b, sim.draw_posterior(&prep, &d.partition, &ystar, &mut rng)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut summaries = Vec::with_capacity(made.len());
    for (i, (b, draw)) in made.iter().enumerate() {
        let name = format!("draw_{i:05}.csv");
        let mut f = fs::File::create(dir.join(&name))?;
        writeln!(f, "{}", cfg.stamp())?;
        draw.write_csv(f)?;
        summaries.push(DrawSummary {
            file: name,
            source_replicate: *b,
            atoms: draw.atoms.len(),
            total_mass: draw.total_mass(),
        });
    }
    write_json(
        &dir.join("truncation.json"),
        &TruncationReport {
            stamp: stamp(cfg),
            epsilon: prep.epsilon(),
            dropped_mass: prep.dropped_mass(),
            draws: summaries,
        },
    )
}

#[derive(Debug, Clone, Serialize)]
struct PartitionEntry {
    partition: Partition,
    log_weight: f64,
    probability: f64,
}

#[derive(Debug, Clone, Serialize)]
struct CellEntry {
    cell: Vec<usize>,
    probability: f64,
}

#[derive(Debug, Clone, Serialize)]
struct OracleReport<'a> {
    #[serde(flatten)]
    stamp: Stamp<'a>,
    events: usize,
    log_normalizer: f64,
    partitions: Vec<PartitionEntry>,
    cell_marginals: Vec<CellEntry>,
}

/// Exact partition posterior and predictive hazard by enumeration.
pub fn oracle(cfg: &RunConfig, data_path: &Path, out: &Path) -> Result<crate::posterior::PartitionPosterior> {
    fs::create_dir_all(out)?;
    let data = load_data(data_path)?;
    if data.n() > cfg.enumeration_cap {
        return Err(Error::CapExceeded {
            n: data.n(),
            cap: cfg.enumeration_cap,
        });
    }
    let model = build_model(cfg, &data)?;
    let post = model.exact_partition_posterior()?;
    let times = cfg.grid.times();
    let hazard = model.predictive_hazard(&times)?;
    let rows: Vec<Vec<f64>> = times.iter().zip(&hazard).map(|(&t, &h)| vec![t, h, 0.0]).collect();
    write_csv(&out.join("hazard.csv"), cfg, &HAZARD_HEADER, &rows)?;
    write_json(
        &out.join("partition_posterior.json"),
        &OracleReport {
            stamp: stamp(cfg),
            events: data.n(),
            log_normalizer: post.log_normalizer,
            partitions: post
                .entries
                .iter()
                .map(|e| PartitionEntry {
                    partition: e.partition.clone(),
                    log_weight: e.log_weight,
                    probability: e.probability,
                })
                .collect(),
            cell_marginals: post
                .cell_marginals()
                .into_iter()
                .map(|(cell, probability)| CellEntry {
                    cell: cell.iter().map(|i| i + 1).collect(),
                    probability,
                })
                .collect(),
        },
    )?;
    Ok(post)
}

/// One row of the Ewens check.
#[derive(Debug, Clone, Serialize)]
pub struct EsfRow {
    pub partition: Partition,
    /// The Ewens sampling formula.
    pub closed_form: f64,
    /// The same probability from gamma-process cumulants, integrating over
    /// the total mass.
    pub gamma_process: f64,
}

#[derive(Debug, Clone, Serialize)]
struct EsfReport<'a> {
    #[serde(flatten)]
    stamp: Stamp<'a>,
    mode: &'static str,
    theta: f64,
    n: usize,
    max_abs_difference: f64,
    partitions: Vec<EsfRow>,
}

/// Partition probabilities of a sample from the normalised gamma process
/// with total mass `theta`, computed from its cumulants and Laplace exponent,
/// next to the Ewens sampling formula.
pub fn esf_table(theta: f64, n: usize, cfg: &crate::quadrature::QuadConfig) -> Result<Vec<EsfRow>> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::domain(format!("ESF total mass must be positive, got {theta}")));
    }
    let family = LevyFamily::generalized_gamma(0.0, 1.0)?;
    let ln_gamma_n = statrs::function::gamma::ln_gamma(n as f64);
    enumerate_partitions(n)?
        .into_iter()
        .map(|p| {
            // E[Π P(C_j)^{e_j}] summed over distinct atoms, written as an
            // integral over u of u^{n-1} e^{-Ψ(u)} Π θ κ_{e_j}(u) / Γ(n).
            let lp = |u: f64| -> f64 {
                let psi = theta * family.inner_laplace_exponent(u, 0.0, cfg).unwrap_or(f64::INFINITY);
                let cells: f64 = p
                    .sizes()
                    .iter()
                    .map(|&e| theta.ln() + family.log_cumulant(e, u, 0.0).unwrap_or(f64::NEG_INFINITY))
                    .sum();
                ((n as f64 - 1.0) * u.ln() - psi + cells - ln_gamma_n).exp()
            };
            let gamma_process = integrate(lp, 0.0, f64::INFINITY, &[1.0], cfg)?;
            Ok(EsfRow {
                closed_form: esf_log_prob(&p, theta)?.exp(),
                gamma_process,
                partition: p,
            })
        })
        .collect()
}

/// Writes the Ewens check table.
pub fn oracle_esf(cfg: &RunConfig, theta: f64, n: usize, out: &Path) -> Result<Vec<EsfRow>> {
    fs::create_dir_all(out)?;
    let rows = esf_table(theta, n, &cfg.quad)?;
    let max_abs_difference = rows
        .iter()
        .map(|r| (r.closed_form - r.gamma_process).abs())
        .fold(0.0, f64::max);
    write_json(
        &out.join("partition_posterior.json"),
        &EsfReport {
            stamp: stamp(cfg),
            mode: "esf",
            theta,
            n,
            max_abs_difference,
            partitions: rows.clone(),
        },
    )?;
    Ok(rows)
}

/// Whether the closed-form stable prior predictive applies, and its index.
fn stable_dl_index(cfg: &RunConfig, t_max: f64) -> Option<f64> {
    match (&cfg.kernel, &cfg.family, &cfg.eta) {
        (
            Kernel::DykstraLaud,
            LevyFamily::GeneralizedGamma {
                alpha,
                b: ParamFn::Constant(b),
            },
            BaseMeasure::Continuous {
                lo,
                hi,
                density: Density::Lebesgue,
            },
        ) if *alpha > 0.0 && *b == 0.0 && *lo == 0.0 && *hi >= t_max => Some(*alpha),
        _ => None,
    }
}

/// Prior predictive hazard and survival on the grid, with closed-form
/// columns when the stable Dykstra–Laud case applies.
pub fn prior_predictive_curve(cfg: &RunConfig, out: &Path) -> Result<Vec<Vec<f64>>> {
    fs::create_dir_all(out)?;
    let times = cfg.grid.times();
    let closed = stable_dl_index(cfg, cfg.grid.t_max);
    let rows = times
        .par_iter()
        .map(|&t| {
            let (h, s) = prior_predictive(cfg.kernel, &cfg.family, &cfg.eta, t, &cfg.quad)?;
            let mut row = vec![t, h, s];
            if let Some(alpha) = closed {
                let (ch, cs) = prior_predictive_stable_dl(alpha, t)?;
                row.extend([ch, cs]);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut header = vec!["t", "hazard", "survival"];
    if closed.is_some() {
        header.extend(["closed_form_hazard", "closed_form_survival"]);
    }
    write_csv(&out.join("prior_predictive.csv"), cfg, &header, &rows)?;
    Ok(rows)
}

/// One validation check.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
struct ValidationReport<'a> {
    #[serde(flatten)]
    stamp: Stamp<'a>,
    passed: bool,
    checks: &'a [Check],
    harness: &'a [HarnessReport],
}

/// Cumulant closed forms of the configured family against quadrature, then
/// the Poisson calculus harness. Returns every check; the caller decides
/// the exit code.
pub fn validate(cfg: &RunConfig, out: &Path) -> Result<Vec<Check>> {
    fs::create_dir_all(out)?;
    let mut checks = Vec::new();
    let (lo, hi) = cfg.eta.support();
    let ys: Vec<f64> = if hi.is_finite() {
        (0..3).map(|i| lo + (hi - lo) * i as f64 / 2.0).collect()
    } else {
        vec![lo, lo + 1.0, lo + 10.0]
    };
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for &y in &ys {
        for &g in &[0.0, 1.0, 10.0] {
            for l in 1..=5 {
                let closed = cfg.family.log_cumulant(l, g, y);
                let quad = cfg.family.cumulant_by_quadrature(l, g, y, &cfg.quad);
                match (closed, quad) {
                    (Ok(c), Ok(q)) => {
                        worst = worst.max((c.exp() / q - 1.0).abs());
                        count += 1;
                    }
                    (Err(Error::Divergent(_)), Err(Error::Divergent(_))) => {}
                    (c, q) => checks.push(Check {
                        name: format!("cumulant l={l} g={g} y={y}"),
                        passed: false,
                        detail: format!("closed form {c:?} but quadrature {q:?}"),
                    }),
                }
            }
        }
    }
    checks.push(Check {
        name: "cumulants".into(),
        passed: worst <= 1e-8,
        detail: format!("{count} points, worst relative error {worst:.3e}"),
    });
    let harness = harness_suite(cfg.replicates, cfg.seed, cfg.quad)?;
    for r in &harness {
        checks.push(Check {
            name: r.name.clone(),
            passed: r.passed(),
            detail: format!(
                "z = {:.3} (Monte Carlo {:.6} ± {:.2e}, expected {:.6}, B = {})",
                r.z, r.monte_carlo, r.standard_error, r.expected, r.replicates
            ),
        });
    }
    write_json(
        &out.join("validation.json"),
        &ValidationReport {
            stamp: stamp(cfg),
            passed: checks.iter().all(|c| c.passed),
            checks: &checks,
            harness: &harness,
        },
    )?;
    Ok(checks)
}
