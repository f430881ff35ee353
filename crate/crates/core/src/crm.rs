//! Simulation of the tilted completely random measure and of full posterior
//! draws, plus Monte Carlo checks of the Poisson calculus identities
//! (exponential tilting and the moment measure expansion).
//!
//! Atoms of the Poisson random measure with intensity `ρ(ds|y) η(dy)`
//! restricted to `s ≥ ε` are generated exactly, then each atom is kept with
//! probability `e^{-g(y) s}`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{DiscreteCDF, Poisson};
use statrs::function::gamma::{gamma, gamma_lr};

use crate::error::{Error, Result};
use crate::levy::{jump_posterior, BaseMeasure, Density, ExposureFn, LevyFamily};
use crate::partition::{enumerate_partitions, Partition};
use crate::posterior::ModelSpec;
use crate::quadrature::{integrate, panel_bins, panels, QuadConfig, Tabulated};
use crate::samplers::{replicate_rng, streams};

/// Target ratio of dropped to expected total mass when ε is chosen
/// automatically.
pub const DEFAULT_DROPPED_FRACTION: f64 = 1e-4;

/// Atoms `(jump, location)` of one draw and the truncation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrmDraw {
    pub atoms: Vec<(f64, f64)>,
    pub epsilon: f64,
    /// `∫∫_{s<ε} s e^{-g(y)s} ρ(ds|y) η(dy)`
    pub dropped_mass: f64,
}

impl CrmDraw {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.0).sum()
    }

    /// `μ(A)` for `A = [lo, hi]`.
    pub fn mass_in(&self, lo: f64, hi: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.1 >= lo && a.1 <= hi)
            .map(|a| a.0)
            .sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["s", "y"])?;
        for (s, y) in &self.atoms {
            out.write_record([s.to_string(), y.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Law of the location of an untilted atom.
#[derive(Debug, Clone)]
enum LocationLaw {
    Atom(f64),
    Uniform(f64, f64),
    TruncatedExponential { rate: f64, lo: f64, hi: f64 },
    TruncatedGamma { shape: f64, rate: f64, lo: f64, hi: f64 },
    Table(Tabulated),
}

impl LocationLaw {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LocationLaw::Atom(y) => *y,
            LocationLaw::Uniform(lo, hi) => lo + (hi - lo) * rng.random::<f64>(),
            LocationLaw::TruncatedExponential { rate, lo, hi } => {
                let span = -(-rate * (hi - lo)).exp_m1();
                lo - (-rng.random::<f64>() * span).ln_1p() / rate
            }
            LocationLaw::TruncatedGamma { shape, rate, lo, hi } => {
                let g = GammaDist::new(*shape, 1.0 / rate).expect("validated gamma density");
                loop {
                    let y = g.sample(rng);
                    if y >= *lo && y <= *hi {
                        return y;
                    }
                }
            }
            LocationLaw::Table(t) => t.sample(rng),
        }
    }
}

/// Smallest `k` with `P(N ≤ k) ≥ u` for `N ~ Poisson(rate)`.
fn poisson_quantile(rate: f64, u: f64) -> Result<u64> {
    let pois = Poisson::new(rate).map_err(|e| Error::domain(format!("Poisson rate {rate}: {e}")))?;
    let mut hi = (rate + 10.0 * rate.sqrt() + 10.0).ceil() as u64;
    while pois.cdf(hi) < u {
        hi *= 2;
    }
    let mut lo = 0u64;
    if pois.cdf(0) >= u {
        return Ok(0);
    }
    // invariant: cdf(lo) < u <= cdf(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if pois.cdf(mid) >= u {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Exact sampler of a jump from `ρ(ds|y)` restricted to `s ≥ ε`.
#[derive(Debug, Clone, Copy)]
enum TailSampler {
    /// `Gamma(shape, rate)` conditioned on `s ≥ ε`.
    Gamma { shape: f64, rate: f64, eps: f64 },
    /// `s^{-α-1}` on `[ε, ∞)`.
    Pareto { alpha: f64, eps: f64 },
    /// `s^{-α-1} e^{-b s}`, `0 ≤ α < 1`: power envelope on `[ε, s0]`,
    /// exponential envelope beyond.
    PowerExp { alpha: f64, b: f64, eps: f64, s0: f64, p_low: f64 },
    /// `s^{-1}(1-s)^{c-1}` on `[ε, 1)`: log-uniform envelope below `s0`,
    /// `(1-s)^{c-1}` envelope above.
    Beta { c: f64, eps: f64, s0: f64, cap: f64, p_low: f64 },
}

fn power_integral(alpha: f64, a: f64, b: f64) -> f64 {
    // ∫_a^b s^{-α-1} ds
    if alpha == 0.0 {
        (b / a).ln()
    } else {
        (a.powf(-alpha) - b.powf(-alpha)) / alpha
    }
}

fn power_inverse<R: Rng + ?Sized>(alpha: f64, a: f64, b: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    if alpha == 0.0 {
        a * (b / a).powf(u)
    } else {
        let (pa, pb) = (a.powf(-alpha), b.powf(-alpha));
        (pa - u * (pa - pb)).powf(-1.0 / alpha)
    }
}

impl TailSampler {
    fn new(family: &LevyFamily, y: f64, eps: f64) -> Result<Self> {
        match family {
            LevyFamily::GeneralizedGamma { alpha, b } => {
                let alpha = *alpha;
                let b = b.eval(y);
                if alpha < 0.0 {
                    Ok(TailSampler::Gamma { shape: -alpha, rate: b, eps })
                } else if b == 0.0 {
                    Ok(TailSampler::Pareto { alpha, eps })
                } else {
                    let s0 = eps.max(1.0 / b);
                    let env_low = if s0 > eps {
                        (-b * eps).exp() * power_integral(alpha, eps, s0)
                    } else {
                        0.0
                    };
                    let env_high = s0.powf(-alpha - 1.0) * (-b * s0).exp() / b;
                    Ok(TailSampler::PowerExp {
                        alpha,
                        b,
                        eps,
                        s0,
                        p_low: env_low / (env_low + env_high),
                    })
                }
            }
            LevyFamily::Beta { c } => {
                let c = c.eval(y);
                if eps <= 0.0 {
                    return Err(Error::domain("beta process jumps need ε > 0"));
                }
                let s0 = eps.max(0.5);
                let cap = if c >= 1.0 { 1.0 } else { 2f64.powf(1.0 - c) };
                let env_low = if s0 > eps { cap * (s0 / eps).ln() } else { 0.0 };
                let env_high = (1.0 - s0).powf(c) / (c * s0);
                Ok(TailSampler::Beta {
                    c,
                    eps,
                    s0,
                    cap,
                    p_low: env_low / (env_low + env_high),
                })
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            TailSampler::Gamma { shape, rate, eps } => {
                let g = GammaDist::new(shape, 1.0 / rate).expect("validated gamma parameters");
                loop {
                    let s = g.sample(rng);
                    if s >= eps && s > 0.0 {
                        return s;
                    }
                }
            }
            TailSampler::Pareto { alpha, eps } => eps * (1.0 - rng.random::<f64>()).powf(-1.0 / alpha),
            TailSampler::PowerExp { alpha, b, eps, s0, p_low } => loop {
                if rng.random::<f64>() < p_low {
                    let s = power_inverse(alpha, eps, s0, rng);
                    if rng.random::<f64>() < (-b * (s - eps)).exp() {
                        return s;
                    }
                } else {
                    let s = s0 - (1.0 - rng.random::<f64>()).ln() / b;
                    if rng.random::<f64>() < (s / s0).powf(-alpha - 1.0) {
                        return s;
                    }
                }
            },
            TailSampler::Beta { c, eps, s0, cap, p_low } => loop {
                if rng.random::<f64>() < p_low {
                    let s = eps * (s0 / eps).powf(rng.random::<f64>());
                    if rng.random::<f64>() * cap < (c - 1.0).mul_add((-s).ln_1p(), 0.0).exp() {
                        return s;
                    }
                } else {
                    let v = (1.0 - s0) * rng.random::<f64>().powf(1.0 / c);
                    let s = 1.0 - v;
                    if s < 1.0 && rng.random::<f64>() < s0 / s {
                        return s;
                    }
                }
            },
        }
    }
}

fn has_constant_parameters(family: &LevyFamily) -> bool {
    match family {
        LevyFamily::GeneralizedGamma { b, .. } => b.as_constant().is_some(),
        LevyFamily::Beta { c } => c.as_constant().is_some(),
    }
}

/// Simulator of the tilted random measure `e^{-g(y)s} ρ(ds|y) η(dy)`.
pub struct CrmSimulator {
    family: LevyFamily,
    eta: BaseMeasure,
    exposure: ExposureFn,
    breakpoints: Vec<f64>,
    quad: QuadConfig,
}

impl std::fmt::Debug for CrmSimulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CrmSimulator")
            .field("family", &self.family)
            .field("eta", &self.eta)
            .finish()
    }
}

/// Untilted restricted intensity, prepared for repeated draws.
#[derive(Debug, Clone)]
pub struct PreparedIntensity {
    epsilon: f64,
    total_rate: f64,
    locations: LocationLaw,
    constant_tail: Option<TailSampler>,
    dropped_mass: f64,
}

impl PreparedIntensity {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Expected number of untilted atoms with `s ≥ ε`.
    pub fn expected_atoms(&self) -> f64 {
        self.total_rate
    }

    pub fn dropped_mass(&self) -> f64 {
        self.dropped_mass
    }
}

impl CrmSimulator {
    pub fn new(family: LevyFamily, eta: BaseMeasure, exposure: ExposureFn, breakpoints: Vec<f64>, quad: QuadConfig) -> Result<Self> {
        eta.validate()?;
        let (lo, hi) = eta.support();
        family.validate_on(lo, hi)?;
        match eta.total_mass(&quad) {
            Ok(_) => {}
            Err(Error::Divergent(_)) => {
                return Err(Error::domain(
                    "simulation needs η with finite total mass; bound its support or use a normalisable density",
                ))
            }
            Err(e) => return Err(e),
        }
        Ok(CrmSimulator {
            family,
            eta,
            exposure,
            breakpoints,
            quad,
        })
    }

    /// Simulator for the tilted measure of a fitted model.
    pub fn for_model(model: &ModelSpec) -> Result<Self> {
        let exposure = model.exposure().clone();
        Self::new(
            model.family().clone(),
            model.eta().clone(),
            Arc::new(move |y| exposure.eval(y)),
            model.exposure().breakpoints(),
            *model.quad(),
        )
    }

    /// Untilted simulator (`g ≡ 0`).
    pub fn untilted(family: LevyFamily, eta: BaseMeasure, quad: QuadConfig) -> Result<Self> {
        Self::new(family, eta, Arc::new(|_| 0.0), Vec::new(), quad)
    }

    pub fn exposure(&self, y: f64) -> f64 {
        (self.exposure)(y)
    }

    /// `E[μ_g(A)] = ∫_A κ₁(g(y), y) η(dy)` for `A = [lo, hi]`.
    pub fn expected_mass(&self, lo: f64, hi: f64) -> Result<f64> {
        let mut bps = self.breakpoints.clone();
        bps.extend([lo, hi]);
        let fam = &self.family;
        let failure = std::cell::RefCell::new(None);
        let v = self.eta.integrate(
            |y| {
                if y < lo || y > hi {
                    return 0.0;
                }
                match fam.log_cumulant(1, self.exposure(y), y) {
                    Ok(l) => l.exp(),
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        0.0
                    }
                }
            },
            &bps,
            &self.quad,
        )?;
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok(v)
    }

    /// `∫_0^ε s e^{-g s} ρ(ds|y)`.
    fn dropped_at(&self, eps: f64, y: f64) -> Result<f64> {
        if eps == 0.0 {
            return Ok(0.0);
        }
        let g = self.exposure(y);
        match &self.family {
            LevyFamily::GeneralizedGamma { alpha, b } => {
                let rate = b.eval(y) + g;
                if rate == 0.0 {
                    Ok(eps.powf(1.0 - alpha) / gamma(2.0 - alpha))
                } else {
                    Ok(rate.powf(alpha - 1.0) * gamma_lr(1.0 - alpha, rate * eps))
                }
            }
            LevyFamily::Beta { c } => {
                let c = c.eval(y);
                let top = eps.min(1.0);
                integrate(|s| c * (-g * s).exp() * ((c - 1.0) * (-s).ln_1p()).exp(), 0.0, top, &[], &self.quad)
            }
        }
    }

    /// Expected mass carried by tilted atoms below `ε`.
    pub fn dropped_mass(&self, eps: f64) -> Result<f64> {
        let failure = std::cell::RefCell::new(None);
        let v = self.eta.integrate(
            |y| match self.dropped_at(eps, y) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            },
            &self.breakpoints,
            &self.quad,
        )?;
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok(v)
    }

    /// Largest power-of-two ε whose dropped mass is below `fraction` of the
    /// expected total mass; zero for finite-activity families.
    pub fn auto_epsilon(&self, fraction: f64) -> Result<f64> {
        if self.family.is_finite_activity() {
            return Ok(0.0);
        }
        let (lo, hi) = self.eta.support();
        let total = self.expected_mass(lo, hi)?;
        let mut eps: f64 = 0.5;
        for _ in 0..200 {
            if self.dropped_mass(eps)? <= fraction * total {
                return Ok(eps);
            }
            eps *= 0.5;
        }
        Err(Error::Numeric {
            msg: "no jump floor above 2^-200 keeps the dropped mass small enough".into(),
            residual: fraction,
        })
    }

    /// Precomputes the untilted intensity restricted to `s ≥ ε`.
    pub fn prepare(&self, eps: f64) -> Result<PreparedIntensity> {
        if !(eps >= 0.0) {
            return Err(Error::domain(format!("jump floor must be nonnegative, got {eps}")));
        }
        if eps == 0.0 && !self.family.is_finite_activity() {
            return Err(Error::domain(
                "infinite-activity family needs a positive jump floor ε",
            ));
        }
        let q = &self.quad;
        let fam = &self.family;
        let (locations, total_rate, constant_tail) = if has_constant_parameters(fam) {
            let (lo, _) = self.eta.support();
            let tail = fam.tail_mass(eps, lo, q)?;
            let mass = self.eta.total_mass(q)?;
            let law = match self.eta {
                BaseMeasure::Atom { at, .. } => LocationLaw::Atom(at),
                BaseMeasure::Continuous { lo, hi, density } => match density {
                    Density::Lebesgue | Density::Constant(_) => LocationLaw::Uniform(lo, hi),
                    Density::Exponential { rate } => LocationLaw::TruncatedExponential { rate, lo, hi },
                    Density::Gamma { shape, rate } => LocationLaw::TruncatedGamma { shape, rate, lo, hi },
                },
            };
            (law, tail * mass, Some(TailSampler::new(fam, lo, eps)?))
        } else {
            match self.eta {
                BaseMeasure::Atom { at, mass } => {
                    (LocationLaw::Atom(at), mass * fam.tail_mass(eps, at, q)?, None)
                }
                BaseMeasure::Continuous { lo, hi, .. } => {
                    let mut bins = Vec::new();
                    for p in panels(lo, hi, &[]) {
                        for (a, b, node) in panel_bins(p, 6, q.t_max) {
                            let w = node.w * self.eta.density(node.y) * fam.tail_mass(eps, node.y, q)?;
                            bins.push((a, b, w));
                        }
                    }
                    let table = Tabulated::from_bins(bins)?;
                    let total = table.total();
                    (LocationLaw::Table(table), total, None)
                }
            }
        };
        Ok(PreparedIntensity {
            epsilon: eps,
            total_rate,
            locations,
            constant_tail,
            dropped_mass: self.dropped_mass(eps)?,
        })
    }

    /// Atoms of the untilted restricted measure. The count is drawn first
    /// by inverse CDF from a single uniform, so it grows monotonically as ε
    /// shrinks under a shared stream.
    fn untilted_atoms<R: Rng + ?Sized>(&self, prep: &PreparedIntensity, rng: &mut R) -> Result<Vec<(f64, f64)>> {
        let u: f64 = rng.random();
        let count = if prep.total_rate > 0.0 {
            poisson_quantile(prep.total_rate, u)?
        } else {
            0
        };
        let mut atoms = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let y = prep.locations.sample(rng);
            let s = match prep.constant_tail {
                Some(t) => t.sample(rng),
                None => TailSampler::new(&self.family, y, prep.epsilon)?.sample(rng),
            };
            atoms.push((s, y));
        }
        Ok(atoms)
    }

    /// One draw of the tilted measure restricted to jumps `s ≥ ε`.
    pub fn draw_tilted<R: Rng + ?Sized>(&self, prep: &PreparedIntensity, rng: &mut R) -> Result<CrmDraw> {
        let atoms = self
            .untilted_atoms(prep, rng)?
            .into_iter()
            .filter(|&(s, y)| rng.random::<f64>() < (-self.exposure(y) * s).exp())
            .collect();
        Ok(CrmDraw {
            atoms,
            epsilon: prep.epsilon,
            dropped_mass: prep.dropped_mass,
        })
    }

    /// A posterior draw: the tilted measure plus one fixed atom per cell at
    /// its latent value with a jump from the fixed-jump posterior.
    pub fn draw_posterior<R: Rng + ?Sized>(
        &self,
        prep: &PreparedIntensity,
        p: &Partition,
        ystar: &[f64],
        rng: &mut R,
    ) -> Result<CrmDraw> {
        if ystar.len() != p.num_cells() {
            return Err(Error::domain(format!(
                "{} latent values for {} cells",
                ystar.len(),
                p.num_cells()
            )));
        }
        let mut draw = self.draw_tilted(prep, rng)?;
        for (cell, &y) in p.cells().iter().zip(ystar) {
            let law = jump_posterior(&self.family, cell.len(), self.exposure(y), y, &self.quad)?;
            draw.atoms.push((law.sample(rng), y));
        }
        Ok(draw)
    }
}

/// `draw_tilted_crm` for a model with the given (or automatic) jump floor.
pub fn draw_tilted_crm<R: Rng + ?Sized>(model: &ModelSpec, eps: Option<f64>, rng: &mut R) -> Result<CrmDraw> {
    let sim = CrmSimulator::for_model(model)?;
    let eps = match eps {
        Some(e) => e,
        None => sim.auto_epsilon(DEFAULT_DROPPED_FRACTION)?,
    };
    let prep = sim.prepare(eps)?;
    sim.draw_tilted(&prep, rng)
}

/// `draw_posterior_crm` for a model with the given (or automatic) jump floor.
pub fn draw_posterior_crm<R: Rng + ?Sized>(
    model: &ModelSpec,
    p: &Partition,
    ystar: &[f64],
    eps: Option<f64>,
    rng: &mut R,
) -> Result<CrmDraw> {
    let sim = CrmSimulator::for_model(model)?;
    let eps = match eps {
        Some(e) => e,
        None => sim.auto_epsilon(DEFAULT_DROPPED_FRACTION)?,
    };
    let prep = sim.prepare(eps)?;
    sim.draw_posterior(&prep, p, ystar, rng)
}

/// Outcome of one Monte Carlo identity check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarnessReport {
    pub name: String,
    pub monte_carlo: f64,
    pub standard_error: f64,
    pub expected: f64,
    pub z: f64,
    pub replicates: usize,
}

impl HarnessReport {
    /// Summarises Monte Carlo values against their expected mean.
    pub fn new(name: impl Into<String>, values: &[f64], expected: f64) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let z = if se > 0.0 {
            (mean - expected) / se
        } else if (mean - expected).abs() <= 1e-12 * expected.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        };
        HarnessReport {
            name: name.into(),
            monte_carlo: mean,
            standard_error: se,
            expected,
            z,
            replicates: values.len(),
        }
    }

    /// `|z| < 4`.
    pub fn passed(&self) -> bool {
        self.z.abs() < 4.0
    }
}

/// A function of an atom `(s, y)`.
pub type AtomFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Exact simulation of a finite-activity Poisson random measure for the
/// Poisson calculus checks.
pub struct PoissonHarness {
    sim: CrmSimulator,
    prep: PreparedIntensity,
    s_kinks: Vec<f64>,
    y_kinks: Vec<f64>,
}

impl PoissonHarness {
    pub fn new(family: LevyFamily, eta: BaseMeasure, quad: QuadConfig) -> Result<Self> {
        if !family.is_finite_activity() {
            return Err(Error::domain(
                "the Poisson calculus checks need a finite-activity family (generalized gamma with α < 0)",
            ));
        }
        let sim = CrmSimulator::untilted(family, eta, quad)?;
        let prep = sim.prepare(0.0)?;
        Ok(PoissonHarness {
            sim,
            prep,
            s_kinks: vec![1.0],
            y_kinks: vec![],
        })
    }

    /// Adds jump sizes and locations where test functions have kinks, so
    /// the quadrature splits there.
    pub fn with_kinks(mut self, s: &[f64], y: &[f64]) -> Self {
        self.s_kinks.extend_from_slice(s);
        self.y_kinks.extend_from_slice(y);
        self
    }

    /// `ν(f) = ∫∫ f(s, y) ρ(ds|y) η(dy)` by nested quadrature.
    pub fn mean_measure(&self, f: &(dyn Fn(f64, f64) -> f64 + Sync)) -> Result<f64> {
        let fam = &self.sim.family;
        let q = &self.sim.quad;
        let failure = std::cell::RefCell::new(None);
        let v = self.sim.eta.integrate(
            |y| {
                let inner = integrate(
                    |s| {
                        let v = f(s, y);
                        if v == 0.0 {
                            0.0
                        } else {
                            v * fam.levy_density(s, y)
                        }
                    },
                    0.0,
                    f64::INFINITY,
                    &self.s_kinks,
                    q,
                );
                match inner {
                    Ok(v) => v,
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        0.0
                    }
                }
            },
            &self.y_kinks,
            q,
        )?;
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok(v)
    }

    /// Laplace functional `exp(-ν(1 - e^{-f}))`.
    pub fn laplace_functional(&self, f: &(dyn Fn(f64, f64) -> f64 + Sync)) -> Result<f64> {
        Ok((-self.mean_measure(&|s, y| -(-f(s, y)).exp_m1())?).exp())
    }

    /// Atoms of one exact draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<(f64, f64)>> {
        self.sim.untilted_atoms(&self.prep, rng)
    }

    fn replicate<T: Send, F>(&self, replicates: usize, seed: u64, f: F) -> Result<Vec<T>>
    where
        F: Fn(&[(f64, f64)]) -> T + Sync + Send,
    {
        (0..replicates as u64)
            .into_par_iter()
            .map(|b| {
                let mut rng = replicate_rng(seed, streams::HARNESS, b);
                Ok(f(&self.draw(&mut rng)?))
            })
            .collect()
    }

    /// Checks `E[e^{-N(h)} e^{-N(f)}] = L(f|ν) L(h|e^{-f}ν)`, both
    /// Laplace functionals by quadrature.
    pub fn verify_tilting(&self, f: AtomFn, h: AtomFn, replicates: usize, seed: u64) -> Result<HarnessReport> {
        let lf = self.laplace_functional(&|s, y| f(s, y))?;
        let tilted = (-self.mean_measure(&|s, y| -(-h(s, y)).exp_m1() * (-f(s, y)).exp())?).exp();
        let values = self.replicate(replicates, seed, |atoms| {
            let n: f64 = atoms.iter().map(|&(s, y)| f(s, y) + h(s, y)).sum();
            (-n).exp()
        })?;
        Ok(HarnessReport::new("tilting", &values, lf * tilted))
    }

    /// Checks `E[Π_i N(g_i)] = Σ_p Π_{C∈p} ν(Π_{i∈C} g_i)` over all
    /// partitions of the factors (two terms for two factors, five for three).
    pub fn verify_moment_identity(&self, gs: &[AtomFn], replicates: usize, seed: u64) -> Result<HarnessReport> {
        if gs.is_empty() {
            return Err(Error::domain("moment identity needs at least one function"));
        }
        let mut expected = 0.0;
        for p in enumerate_partitions(gs.len())? {
            let mut term = 1.0;
            for cell in p.cells() {
                term *= self.mean_measure(&|s, y| cell.iter().map(|&i| gs[i](s, y)).product())?;
            }
            expected += term;
        }
        let values = self.replicate(replicates, seed, |atoms| {
            gs.iter()
                .map(|g| atoms.iter().map(|&(s, y)| g(s, y)).sum::<f64>())
                .product::<f64>()
        })?;
        Ok(HarnessReport::new(format!("moment-{}", gs.len()), &values, expected))
    }
}

/// The built-in battery of Poisson calculus checks: three tilting and three
/// moment identities over three finite-activity configurations.
pub fn harness_suite(replicates: usize, seed: u64, quad: QuadConfig) -> Result<Vec<HarnessReport>> {
    let interval = PoissonHarness::new(
        LevyFamily::generalized_gamma(-1.0, 1.0)?,
        BaseMeasure::lebesgue(0.0, 1.0),
        quad,
    )?
    .with_kinks(&[2.0, 3.0], &[0.5]);
    let atom = PoissonHarness::new(
        LevyFamily::generalized_gamma(-1.0, 1.0)?,
        BaseMeasure::Atom { at: 0.2, mass: 1.5 },
        quad,
    )?;
    let varying = PoissonHarness::new(
        LevyFamily::generalized_gamma(-2.5, crate::levy::ParamFn::Linear { intercept: 1.0, slope: 0.5 })?,
        BaseMeasure::lebesgue(0.0, 2.0),
        quad,
    )?;
    let f = |g: fn(f64, f64) -> f64| -> AtomFn { Arc::new(g) };
    let mut out = Vec::new();
    let checks: [(&str, &PoissonHarness, AtomFn, AtomFn); 3] = [
        ("tilting/interval", &interval, f(|_, _| 0.0), f(|s, _| 0.5 * s)),
        ("tilting/atom", &atom, f(|_, _| 0.3), f(|_, _| 0.5)),
        (
            "tilting/varying",
            &varying,
            f(|s, y| 0.4 * (1.0 + y) * -(-s).exp_m1()),
            f(|s, _| 0.7 * s.min(1.0)),
        ),
    ];
    for (k, (name, h, a, b)) in checks.into_iter().enumerate() {
        let mut r = h.verify_tilting(a, b, replicates, seed.wrapping_add(k as u64))?;
        r.name = name.into();
        out.push(r);
    }
    let moments: [(&str, &PoissonHarness, Vec<AtomFn>); 3] = [
        (
            "moment-2/interval",
            &interval,
            vec![f(|s, _| s.min(2.0)), f(|_, y| if y < 0.5 { 1.0 } else { 0.0 })],
        ),
        (
            "moment-2/varying",
            &varying,
            vec![f(|s, y| s.min(1.0) * (1.0 + y)), f(|_, y| y.cos())],
        ),
        (
            "moment-3/interval",
            &interval,
            vec![f(|_, _| 1.0), f(|s, _| s.min(3.0)), f(|_, y| y)],
        ),
    ];
    for (k, (name, h, gs)) in moments.into_iter().enumerate() {
        let mut r = h.verify_moment_identity(&gs, replicates, seed.wrapping_add(10 + k as u64))?;
        r.name = name.into();
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> QuadConfig {
        QuadConfig::default()
    }

    #[test]
    fn finite_activity_counts_are_poisson() {
        let fam = LevyFamily::generalized_gamma(-1.0, 1.0).unwrap();
        let eta = BaseMeasure::lebesgue(0.0, 1.0);
        let h = PoissonHarness::new(fam.clone(), eta, quad()).unwrap();
        // ∫∫ ρ η = ∫ e^{-s} ds = 1
        let mean = h.mean_measure(&|_, _| 1.0).unwrap();
        assert!((mean - 1.0).abs() < 1e-9);
        let counts = h.replicate(10_000, 1, |a| a.len() as f64).unwrap();
        let r = HarnessReport::new("count", &counts, mean);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn tilting_identity_examples() {
        let fam = LevyFamily::generalized_gamma(-1.0, 1.0).unwrap();
        let theta = 1.5;
        let h = PoissonHarness::new(fam, BaseMeasure::Atom { at: 0.2, mass: theta }, quad()).unwrap();
        let zero: AtomFn = Arc::new(|_, _| 0.0);
        let c: AtomFn = Arc::new(|_, _| 0.3);
        let d: AtomFn = Arc::new(|_, _| 0.5);
        let r = h.verify_tilting(zero.clone(), d.clone(), 20_000, 3).unwrap();
        assert!(r.passed(), "{r:?}");
        // count is Poisson(θ): E[e^{-(c+d)K}] = exp(-θ(1 - e^{-(c+d)}))
        let r = h.verify_tilting(c, d, 20_000, 4).unwrap();
        let closed = (-theta * (1.0 - (-0.8f64).exp())).exp();
        assert!((r.expected - closed).abs() < 1e-10);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn moment_identity_examples() {
        let fam = LevyFamily::generalized_gamma(-0.5, 2.0).unwrap();
        let h = PoissonHarness::new(fam, BaseMeasure::lebesgue(0.0, 2.0), quad()).unwrap();
        let g1: AtomFn = Arc::new(|s, y| s * (1.0 + y));
        let zero: AtomFn = Arc::new(|_, _| 0.0);
        let r = h.verify_moment_identity(&[g1.clone(), zero], 1000, 5).unwrap();
        assert_eq!((r.expected, r.monte_carlo), (0.0, 0.0));
        let g2: AtomFn = Arc::new(|s, _| s.min(1.0));
        let r = h.verify_moment_identity(&[g1, g2], 20_000, 6).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn zero_exposure_keeps_every_atom() {
        let fam = LevyFamily::generalized_gamma(0.0, 1.0).unwrap();
        let eta = BaseMeasure::lebesgue(0.0, 2.0);
        let sim = CrmSimulator::untilted(fam, eta, quad()).unwrap();
        let prep = sim.prepare(1e-3).unwrap();
        let mut a = replicate_rng(8, streams::CRM, 0);
        let mut b = replicate_rng(8, streams::CRM, 0);
        let tilted = sim.draw_tilted(&prep, &mut a).unwrap();
        let raw = sim.untilted_atoms(&prep, &mut b).unwrap();
        assert_eq!(tilted.atoms, raw);
    }

    #[test]
    fn suite_passes_at_moderate_size() {
        let reports = harness_suite(20_000, 11, quad()).unwrap();
        assert_eq!(reports.len(), 6);
        for r in reports {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn refusals() {
        let gg = LevyFamily::generalized_gamma(0.5, 1.0).unwrap();
        let sim = CrmSimulator::untilted(gg.clone(), BaseMeasure::lebesgue(0.0, 1.0), quad()).unwrap();
        assert!(sim.prepare(0.0).is_err());
        assert!(CrmSimulator::untilted(gg, BaseMeasure::lebesgue(0.0, f64::INFINITY), quad()).is_err());
    }

    #[test]
    fn halving_epsilon_never_loses_atoms() {
        let fam = LevyFamily::generalized_gamma(0.3, 1.0).unwrap();
        let sim = CrmSimulator::untilted(fam, BaseMeasure::lebesgue(0.0, 1.0), quad()).unwrap();
        let coarse = sim.prepare(1e-2).unwrap();
        let fine = sim.prepare(5e-3).unwrap();
        for i in 0..200 {
            let a = sim.draw_tilted(&coarse, &mut replicate_rng(2, streams::CRM, i)).unwrap();
            let b = sim.draw_tilted(&fine, &mut replicate_rng(2, streams::CRM, i)).unwrap();
            assert!(b.atoms.len() >= a.atoms.len());
        }
    }

    #[test]
    fn restricted_jump_samplers_match_their_means() {
        let eps = 0.01;
        let cases = [
            LevyFamily::generalized_gamma(-1.5, 2.0).unwrap(),
            LevyFamily::generalized_gamma(0.0, 1.0).unwrap(),
            LevyFamily::generalized_gamma(0.7, 0.5).unwrap(),
            LevyFamily::generalized_gamma(0.5, 0.0).unwrap(),
            LevyFamily::beta(0.5).unwrap(),
            LevyFamily::beta(3.0).unwrap(),
        ];
        for (k, fam) in cases.iter().enumerate() {
            let t = TailSampler::new(fam, 0.0, eps).unwrap();
            let mut rng = replicate_rng(10, streams::CRM, k as u64);
            let n = 40_000;
            // log jumps have finite variance even for the stable tail
            let xs: Vec<f64> = (0..n).map(|_| t.sample(&mut rng).ln()).collect();
            let top = match fam.jump_space() {
                crate::levy::JumpSpace::HalfLine => f64::INFINITY,
                crate::levy::JumpSpace::UnitInterval => 1.0,
            };
            let expect = integrate(|s| s.ln() * fam.levy_density(s, 0.0), eps, top, &[1.0, 0.5], &quad()).unwrap()
                / fam.tail_mass(eps, 0.0, &quad()).unwrap();
            let r = HarnessReport::new("log-jump", &xs, expect);
            assert!(r.passed(), "{fam}: {r:?}");
        }
    }

    #[test]
    fn dropped_mass_matches_quadrature() {
        let fam = LevyFamily::generalized_gamma(0.4, 1.0).unwrap();
        let g: ExposureFn = Arc::new(|y| 0.5 + y);
        let sim = CrmSimulator::new(fam.clone(), BaseMeasure::lebesgue(0.0, 1.0), g, vec![], quad()).unwrap();
        let eps = 0.05;
        let direct = integrate(
            |y| integrate(|s| (s.ln() - (0.5 + y) * s + fam.log_levy_density(s, y)).exp(), 0.0, eps, &[], &quad()).unwrap(),
            0.0,
            1.0,
            &[],
            &quad(),
        )
        .unwrap();
        assert!((sim.dropped_mass(eps).unwrap() / direct - 1.0).abs() < 1e-8);
    }

    #[test]
    fn mean_measure_of_tilted_draws() {
        let fam = LevyFamily::generalized_gamma(0.0, 1.0).unwrap();
        let g: ExposureFn = Arc::new(|y: f64| (2.0 - y).max(0.0));
        let sim = CrmSimulator::new(fam, BaseMeasure::lebesgue(0.0, 3.0), g, vec![2.0], quad()).unwrap();
        let eps = sim.auto_epsilon(DEFAULT_DROPPED_FRACTION).unwrap();
        let prep = sim.prepare(eps).unwrap();
        let expect = sim.expected_mass(0.5, 2.5).unwrap();
        assert!(prep.dropped_mass() < 1e-4 * sim.expected_mass(0.0, 3.0).unwrap());
        let values: Vec<f64> = (0..5_000)
            .map(|i| sim.draw_tilted(&prep, &mut replicate_rng(1, streams::CRM, i)).unwrap().mass_in(0.5, 2.5))
            .collect();
        let r = HarnessReport::new("mean", &values, expect);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn posterior_draw_adds_fixed_atoms() {
        use crate::data::Dataset;
        use crate::kernel::Kernel;
        let data = Dataset::from_pairs(&[(1.0, true), (2.0, true), (2.5, false)]).unwrap();
        let m = ModelSpec::new(
            Kernel::DykstraLaud,
            LevyFamily::generalized_gamma(-1.0, 1.0).unwrap(),
            BaseMeasure::lebesgue(0.0, 3.0),
            &data,
        )
        .unwrap();
        let p = Partition::from_labels(&[0, 0]);
        let mut rng = replicate_rng(4, streams::CRM, 0);
        let d = draw_posterior_crm(&m, &p, &[0.5], None, &mut rng).unwrap();
        assert_eq!(d.epsilon, 0.0);
        assert!(d.atoms.iter().any(|a| a.1 == 0.5));
        let empty = draw_posterior_crm(&m, &Partition::empty(), &[], None, &mut replicate_rng(4, streams::CRM, 1)).unwrap();
        let plain = draw_tilted_crm(&m, None, &mut replicate_rng(4, streams::CRM, 1)).unwrap();
        assert_eq!(empty, plain);
    }
}
