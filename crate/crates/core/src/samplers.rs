//! Monte Carlo over partitions and latent values: sequential importance
//! sampling of the latents, the Pólya-urn Gibbs sampler, and the weighted
//! Chinese restaurant sampler of partitions whose seating weights are
//! predictive hazards. Plus self-normalised estimation and diagnostics.
//!
//! Replicates are independent tasks, each with its own ChaCha stream derived
//! from the master seed, so results do not depend on the worker count.

use std::str::FromStr;
use std::sync::Arc;

use dashmap::DashMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::posterior::{CellPosterior, ModelSpec};

/// Stream families, kept apart in the high bits of the ChaCha stream id.
pub mod streams {
    pub const REPLICATE: u64 = 0;
    pub const GIBBS: u64 = 1;
    pub const CRM: u64 = 2;
    pub const LATENT: u64 = 3;
    pub const HARNESS: u64 = 4;
}

/// RNG for replicate `index` of the given stream family.
pub fn replicate_rng(seed: u64, family: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((family << 48) | index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Sis,
    Gibbs,
    Wcr,
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sis" => Ok(SamplerKind::Sis),
            "gibbs" => Ok(SamplerKind::Gibbs),
            "wcr" => Ok(SamplerKind::Wcr),
            other => Err(Error::domain(format!(
                "unknown sampler `{other}` (expected sis, gibbs or wcr)"
            ))),
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerKind::Sis => "sis",
            SamplerKind::Gibbs => "gibbs",
            SamplerKind::Wcr => "wcr",
        })
    }
}

/// Latent values for every event together with the partition of their ties.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDraw {
    pub partition: Partition,
    /// One latent value per cell, in cell order.
    pub cell_values: Vec<f64>,
    /// `Σ ln c_r`; zero for Gibbs states.
    pub log_weight: f64,
}

impl LatentDraw {
    /// Latent value of every event.
    pub fn values(&self) -> Vec<f64> {
        let labels = self.partition.labels();
        labels.iter().map(|&j| self.cell_values[j]).collect()
    }
}

/// A partition drawn by the weighted Chinese restaurant with `ln L(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WcrDraw {
    pub partition: Partition,
    pub log_weight: f64,
}

/// One weighted posterior draw, whatever the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub partition: Partition,
    pub cell_values: Option<Vec<f64>>,
    pub log_weight: f64,
}

/// Order in which a Gibbs sweep visits the events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrder {
    Forward,
    Reverse,
}

/// Run settings shared by the samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub kind: SamplerKind,
    pub replicates: usize,
    pub seed: u64,
    pub workers: usize,
    pub burn_in_fraction: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            kind: SamplerKind::Wcr,
            replicates: 10_000,
            seed: 1,
            workers: 1,
            burn_in_fraction: 0.1,
        }
    }
}

/// Samplers bound to a model, with caches of cell posteriors and
/// integrated jump terms.
pub struct Sampler<'m> {
    model: &'m ModelSpec,
    posteriors: DashMap<Vec<usize>, Arc<CellPosterior>>,
    jump_terms: DashMap<(Vec<usize>, u64), f64>,
}

fn pick<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Normalises log weights; returns `(ln Σ, probabilities)`.
fn normalise(log_w: &[f64]) -> Result<(f64, Vec<f64>)> {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Degenerate(
            "every seating option has zero weight".into(),
        ));
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok((m + s.ln(), w.into_iter().map(|x| x / s).collect()))
}

fn canonical(mut cells: Vec<(Vec<usize>, f64)>) -> Result<(Partition, Vec<f64>)> {
    for (c, _) in &mut cells {
        c.sort_unstable();
    }
    cells.sort_by_key(|(c, _)| c[0]);
    let values = cells.iter().map(|(_, v)| *v).collect();
    let p = Partition::from_cells(cells.into_iter().map(|(c, _)| c).collect())?;
    Ok((p, values))
}

impl<'m> Sampler<'m> {
    pub fn new(model: &'m ModelSpec) -> Self {
        Sampler {
            model,
            posteriors: DashMap::new(),
            jump_terms: DashMap::new(),
        }
    }

    pub fn model(&self) -> &ModelSpec {
        self.model
    }

    fn posterior(&self, cell: &[usize]) -> Result<Arc<CellPosterior>> {
        let mut key = cell.to_vec();
        key.sort_unstable();
        if let Some(p) = self.posteriors.get(&key) {
            return Ok(p.clone());
        }
        let p = Arc::new(self.model.cell_posterior(&key)?);
        self.posteriors.insert(key, p.clone());
        Ok(p)
    }

    fn check_events(&self) -> Result<usize> {
        match self.model.n() {
            0 => Err(Error::domain("samplers need at least one event")),
            n => Ok(n),
        }
    }

    /// ln weights for placing event `r` given occupied cells at `values`:
    /// index 0 is a new cell, `j + 1` joins cell `j`.
    fn latent_seating(&self, cells: &[Vec<usize>], values: &[f64], r: usize) -> Result<Vec<f64>> {
        let m = self.model;
        let x = m.events()[r];
        let mut lw = Vec::with_capacity(cells.len() + 1);
        lw.push(m.log_cell_integral(&[r])?);
        for (cell, &y) in cells.iter().zip(values) {
            let k = m.kernel().eval(x, y);
            if k == 0.0 {
                lw.push(f64::NEG_INFINITY);
                continue;
            }
            let e = cell.len();
            let g = m.exposure().eval(y);
            let fam = m.family();
            lw.push(k.ln() + fam.log_cumulant(e + 1, g, y)? - fam.log_cumulant(e, g, y)?);
        }
        Ok(lw)
    }

    /// Seating law of event `r` in the latent sampler: `(ln c_r, probs)`
    /// with the new-cell option first.
    pub fn sis_seating(&self, cells: &[Vec<usize>], values: &[f64], r: usize) -> Result<(f64, Vec<f64>)> {
        normalise(&self.latent_seating(cells, values, r)?)
    }

    /// One sequential importance draw of all latent values.
    pub fn sis_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LatentDraw> {
        let n = self.check_events()?;
        let mut cells: Vec<Vec<usize>> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut log_weight = 0.0;
        for r in 0..n {
            let (log_c, probs) = self.sis_seating(&cells, &values, r)?;
            log_weight += log_c;
            match pick(rng, &probs) {
                0 => {
                    values.push(self.posterior(&[r])?.sample(rng));
                    cells.push(vec![r]);
                }
                j => cells[j - 1].push(r),
            }
        }
        let (partition, cell_values) = canonical(cells.into_iter().zip(values).collect())?;
        Ok(LatentDraw {
            partition,
            cell_values,
            log_weight,
        })
    }

    /// One Gibbs sweep over all events followed by a refresh of every
    /// cell's latent value from its cell posterior.
    pub fn gibbs_sweep<R: Rng + ?Sized>(&self, state: &LatentDraw, order: SweepOrder, rng: &mut R) -> Result<LatentDraw> {
        let n = self.check_events()?;
        if state.partition.n() != n || state.cell_values.len() != state.partition.num_cells() {
            return Err(Error::domain("Gibbs state does not match the model"));
        }
        let mut cells: Vec<Vec<usize>> = state.partition.cells().to_vec();
        let mut values = state.cell_values.clone();
        let items: Vec<usize> = match order {
            SweepOrder::Forward => (0..n).collect(),
            SweepOrder::Reverse => (0..n).rev().collect(),
        };
        for r in items {
            let j = cells.iter().position(|c| c.contains(&r)).expect("every event is seated");
            cells[j].retain(|&i| i != r);
            if cells[j].is_empty() {
                cells.remove(j);
                values.remove(j);
            }
            let (_, probs) = self.sis_seating(&cells, &values, r)?;
            match pick(rng, &probs) {
                0 => {
                    values.push(self.posterior(&[r])?.sample(rng));
                    cells.push(vec![r]);
                }
                j => cells[j - 1].push(r),
            }
        }
        for (cell, v) in cells.iter().zip(values.iter_mut()) {
            *v = self.posterior(cell)?.sample(rng);
        }
        let (partition, cell_values) = canonical(cells.into_iter().zip(values).collect())?;
        Ok(LatentDraw {
            partition,
            cell_values,
            log_weight: 0.0,
        })
    }

    /// ln l_{j,r} for the weighted Chinese restaurant: index 0 is
    /// `ln I({r})`, `j + 1` is `ln I(C_j ∪ {r}) - ln I(C_j)`.
    pub fn wcr_seating(&self, p: &Partition) -> Result<Vec<f64>> {
        let m = self.model;
        let r = p.n();
        let mut lw = vec![m.log_cell_integral(&[r])?];
        for cell in p.cells() {
            let base = m.log_cell_integral(cell)?;
            let mut joined = cell.clone();
            joined.push(r);
            let v = m.log_cell_integral(&joined)?;
            lw.push(if v == f64::NEG_INFINITY { v } else { v - base });
        }
        Ok(lw)
    }

    /// One partition from the weighted Chinese restaurant.
    pub fn wcr_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<WcrDraw> {
        let n = self.check_events()?;
        let mut p = Partition::empty();
        let mut log_weight = 0.0;
        for _ in 0..n {
            let (log_l, probs) = normalise(&self.wcr_seating(&p)?)?;
            log_weight += log_l;
            p = p.grow(match pick(rng, &probs) {
                0 => crate::partition::Seat::New,
                j => crate::partition::Seat::Existing(j - 1),
            })?;
        }
        Ok(WcrDraw {
            partition: p,
            log_weight,
        })
    }

    /// `(ln q(p), ln L(p))` along the unique seating path of `p`.
    pub fn wcr_path_probability(&self, p: &Partition) -> Result<(f64, f64)> {
        if p.n() != self.model.n() {
            return Err(Error::domain("partition size differs from the number of events"));
        }
        let labels = p.labels();
        let mut partial = Partition::empty();
        let mut log_q = 0.0;
        let mut log_l = 0.0;
        for r in 0..p.n() {
            let (norm, probs) = normalise(&self.wcr_seating(&partial)?)?;
            log_l += norm;
            // labels are in order of first appearance, so a new label is
            // exactly the next cell index
            let seat = if labels[r] == partial.num_cells() {
                crate::partition::Seat::New
            } else {
                crate::partition::Seat::Existing(labels[r])
            };
            let idx = match seat {
                crate::partition::Seat::New => 0,
                crate::partition::Seat::Existing(j) => j + 1,
            };
            log_q += probs[idx].ln();
            partial = partial.grow(seat)?;
        }
        Ok((log_q, log_l))
    }

    /// Latent values for a partition drawn from the cell posteriors.
    pub fn draw_cell_values<R: Rng + ?Sized>(&self, p: &Partition, rng: &mut R) -> Result<Vec<f64>> {
        p.cells().iter().map(|c| Ok(self.posterior(c)?.sample(rng))).collect()
    }

    /// `∫ k(x|y) κ_{e+1}/κ_e π(dy|C)`, cached per cell and point.
    pub fn integrated_jump_term(&self, cell: &[usize], x: f64) -> Result<f64> {
        let key = (cell.to_vec(), x.to_bits());
        if let Some(v) = self.jump_terms.get(&key) {
            return Ok(*v);
        }
        let v = self.model.rao_blackwell_jump_term(cell, x)?;
        self.jump_terms.insert(key, v);
        Ok(v)
    }

    /// `E[λ(x) | X, draw]` minus the prior term: latent values are used when
    /// present, otherwise the cell posteriors are integrated out.
    pub fn jump_part(&self, draw: &PosteriorDraw, x: f64) -> Result<f64> {
        let mut v = 0.0;
        match &draw.cell_values {
            Some(ys) => {
                for (cell, &y) in draw.partition.cells().iter().zip(ys) {
                    v += self.model.jump_term(cell.len(), y, x)?;
                }
            }
            None => {
                for cell in draw.partition.cells() {
                    v += self.integrated_jump_term(cell, x)?;
                }
            }
        }
        Ok(v)
    }

    /// Draws `settings.replicates` weighted posterior draws in index order.
    pub fn run(&self, settings: &RunSettings) -> Result<Vec<PosteriorDraw>> {
        self.check_events()?;
        if settings.replicates < 1 {
            return Err(Error::domain("at least one replicate is required"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.workers.max(1))
            .build()
            .map_err(|e| Error::domain(format!("cannot start worker pool: {e}")))?;
        let seed = settings.seed;
        match settings.kind {
            SamplerKind::Sis => pool.install(|| {
                (0..settings.replicates as u64)
                    .into_par_iter()
                    .map(|b| {
                        let mut rng = replicate_rng(seed, streams::REPLICATE, b);
                        let d = self.sis_draw(&mut rng)?;
                        Ok(PosteriorDraw {
                            partition: d.partition,
                            cell_values: Some(d.cell_values),
                            log_weight: d.log_weight,
                        })
                    })
                    .collect()
            }),
            SamplerKind::Wcr => pool.install(|| {
                (0..settings.replicates as u64)
                    .into_par_iter()
                    .map(|b| {
                        let mut rng = replicate_rng(seed, streams::REPLICATE, b);
                        let d = self.wcr_draw(&mut rng)?;
                        Ok(PosteriorDraw {
                            partition: d.partition,
                            cell_values: None,
                            log_weight: d.log_weight,
                        })
                    })
                    .collect()
            }),
            SamplerKind::Gibbs => {
                let mut rng = replicate_rng(seed, streams::GIBBS, 0);
                let mut state = self.sis_draw(&mut rng)?;
                let burn = (settings.burn_in_fraction.max(0.0) * settings.replicates as f64).ceil() as usize;
                let mut out = Vec::with_capacity(settings.replicates);
                for s in 0..burn + settings.replicates {
                    state = self.gibbs_sweep(&state, SweepOrder::Forward, &mut rng)?;
                    if s >= burn {
                        out.push(PosteriorDraw {
                            partition: state.partition.clone(),
                            cell_values: Some(state.cell_values.clone()),
                            log_weight: 0.0,
                        });
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Self-normalised estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub ess: f64,
}

/// Diagnostics of a set of importance weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSummary {
    pub replicates: usize,
    pub ess: f64,
    /// Quantiles 0, 5, 50, 95 and 100% of the log weights.
    pub log_weight_quantiles: [f64; 5],
}

/// Normalised weights `w_b / Σ w` from log weights, after max-subtraction.
pub fn normalised_weights(draws: &[PosteriorDraw]) -> Result<Vec<f64>> {
    let m = draws.iter().map(|d| d.log_weight).fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Degenerate("all importance weights are zero".into()));
    }
    let w: Vec<f64> = draws.iter().map(|d| (d.log_weight - m).exp()).collect();
    let s = pairwise_sum(&w);
    Ok(w.into_iter().map(|x| x / s).collect())
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = pairwise_sum(weights);
    let s2: f64 = pairwise_sum(&weights.iter().map(|w| w * w).collect::<Vec<_>>());
    s * s / s2
}

pub fn weight_summary(draws: &[PosteriorDraw]) -> Result<WeightSummary> {
    let w = normalised_weights(draws)?;
    let mut lw: Vec<f64> = draws.iter().map(|d| d.log_weight).collect();
    lw.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| lw[((lw.len() - 1) as f64 * p).round() as usize];
    Ok(WeightSummary {
        replicates: draws.len(),
        ess: effective_sample_size(&w),
        log_weight_quantiles: [q(0.0), q(0.05), q(0.5), q(0.95), q(1.0)],
    })
}

/// Whether draws are equally weighted and serially dependent.
fn is_chain(draws: &[PosteriorDraw]) -> bool {
    draws.iter().all(|d| d.log_weight == 0.0)
}

/// Standard error of a chain mean by batch means with about √B batches.
fn batch_means_se(values: &[f64]) -> f64 {
    let n = values.len();
    let batches = (n as f64).sqrt().floor().max(2.0) as usize;
    let size = n / batches;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// Self-normalised estimate of `E[t | X]`; Gibbs chains (all weights one)
/// use batch means for the standard error.
pub fn estimate_values(draws: &[PosteriorDraw], values: &[f64]) -> Result<Estimate> {
    if draws.len() < 2 {
        return Err(Error::domain("estimation needs at least two replicates"));
    }
    let w = normalised_weights(draws)?;
    let value = pairwise_sum(&w.iter().zip(values).map(|(w, t)| w * t).collect::<Vec<_>>());
    let ess = effective_sample_size(&w);
    let se = if is_chain(draws) {
        batch_means_se(values)
    } else {
        pairwise_sum(
            &w.iter()
                .zip(values)
                .map(|(w, t)| (w * (t - value)).powi(2))
                .collect::<Vec<_>>(),
        )
        .sqrt()
    };
    Ok(Estimate { value, se, ess })
}

pub fn estimate<F: Fn(&PosteriorDraw) -> Result<f64>>(draws: &[PosteriorDraw], t: F) -> Result<Estimate> {
    let values: Vec<f64> = draws.iter().map(&t).collect::<Result<_>>()?;
    estimate_values(draws, &values)
}

/// Weighted frequency of every partition seen, with standard errors.
pub fn partition_frequencies(draws: &[PosteriorDraw]) -> Result<Vec<(Partition, Estimate)>> {
    let mut seen: Vec<Partition> = Vec::new();
    for d in draws {
        if !seen.contains(&d.partition) {
            seen.push(d.partition.clone());
        }
    }
    seen.into_iter()
        .map(|p| {
            let est = estimate(draws, |d| Ok((d.partition == p) as u8 as f64))?;
            Ok((p, est))
        })
        .collect()
}

/// Posterior mean intensity at each `x` with standard errors.
pub fn mean_intensity(sampler: &Sampler<'_>, draws: &[PosteriorDraw], xs: &[f64]) -> Result<Vec<Estimate>> {
    xs.iter()
        .map(|&x| {
            let prior = sampler.model().prior_mean_intensity(x)?;
            let est = estimate(draws, |d| sampler.jump_part(d, x))?;
            Ok(Estimate {
                value: prior + est.value,
                ..est
            })
        })
        .collect()
}
