//! Deterministic posterior quantities for the kernel-mixture hazard model:
//! cell integrals, the exact partition posterior for small `n`, latent cell
//! posteriors, posterior mean intensities and the tilted moment measure.
//!
//! A cell `C` of event indices has integral
//! `I(C) = ∫ Πᵢ∈C k(Xᵢ|y) κ_|C|(g(y), y) η(dy)`, and the posterior over
//! partitions is proportional to `Π_j I(C_j)`.

use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::OnceLock;

use dashmap::DashMap;
use rand::Rng;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{Exposure, Kernel};
use crate::levy::{BaseMeasure, LevyFamily};
use crate::partition::{enumerate_partitions_capped, Partition};
use crate::quadrature::{panel_bins, panels, QuadConfig, Tabulated};

/// Default largest `n` for exhaustive enumeration of partitions.
pub const DEFAULT_ORACLE_CAP: usize = 8;

/// Knobs for building a [`ModelSpec`].
#[derive(Debug, Clone, Copy)]
pub struct ModelOptions {
    pub quad: QuadConfig,
    /// Fixed level of the latent grid; chosen automatically when `None`.
    pub grid_level: Option<u32>,
    pub enumeration_cap: usize,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            quad: QuadConfig::default(),
            grid_level: None,
            enumeration_cap: DEFAULT_ORACLE_CAP,
        }
    }
}

/// One node of the latent grid with the bin it stands for.
#[derive(Debug, Clone, Copy)]
struct GridNode {
    y: f64,
    lo: f64,
    hi: f64,
    /// ln of quadrature weight times η density
    log_w: f64,
    g: f64,
}

/// Kernel, Lévy family, base measure and the data-derived exposure.
pub struct ModelSpec {
    kernel: Kernel,
    family: LevyFamily,
    eta: BaseMeasure,
    exposure: Exposure,
    events: Vec<f64>,
    opts: ModelOptions,
    breakpoints: Vec<f64>,
    grid: Vec<GridNode>,
    grid_level: u32,
    kappa: Vec<OnceLock<Vec<f64>>>,
    cells: DashMap<Vec<usize>, f64>,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("kernel", &self.kernel)
            .field("family", &self.family)
            .field("eta", &self.eta)
            .field("n", &self.events.len())
            .field("records", &self.exposure.intervals().len())
            .field("grid_nodes", &self.grid.len())
            .finish()
    }
}

fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().filter(|x| *x > f64::NEG_INFINITY).collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl ModelSpec {
    pub fn new(kernel: Kernel, family: LevyFamily, eta: BaseMeasure, data: &Dataset) -> Result<Self> {
        Self::with_options(kernel, family, eta, data, ModelOptions::default())
    }

    pub fn with_options(
        kernel: Kernel,
        family: LevyFamily,
        eta: BaseMeasure,
        data: &Dataset,
        opts: ModelOptions,
    ) -> Result<Self> {
        let exposure = Exposure::from_data(kernel, data);
        Self::from_exposure(kernel, family, eta, exposure, data.event_times().to_vec(), opts)
    }

    pub fn from_exposure(
        kernel: Kernel,
        family: LevyFamily,
        eta: BaseMeasure,
        exposure: Exposure,
        events: Vec<f64>,
        opts: ModelOptions,
    ) -> Result<Self> {
        kernel.validate()?;
        eta.validate()?;
        let (lo, hi) = eta.support();
        kernel.check_support(lo, hi)?;
        family.validate_on(lo, hi)?;
        if exposure.kernel() != kernel {
            return Err(Error::domain("exposure was built with a different kernel"));
        }
        let mut breakpoints = exposure.breakpoints();
        for &x in &events {
            breakpoints.extend(kernel.eval_breakpoints(x));
        }
        breakpoints.retain(|b| b.is_finite());
        breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breakpoints.dedup();
        let n = events.len();
        let mut spec = ModelSpec {
            kernel,
            family,
            eta,
            exposure,
            events,
            opts,
            breakpoints,
            grid: Vec::new(),
            grid_level: 0,
            kappa: (0..n + 2).map(|_| OnceLock::new()).collect(),
            cells: DashMap::new(),
        };
        match opts.grid_level {
            Some(level) => spec.set_grid(level),
            None => spec.choose_grid_level()?,
        }
        spec.check_finiteness()?;
        Ok(spec)
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn family(&self) -> &LevyFamily {
        &self.family
    }

    pub fn eta(&self) -> &BaseMeasure {
        &self.eta
    }

    pub fn exposure(&self) -> &Exposure {
        &self.exposure
    }

    pub fn quad(&self) -> &QuadConfig {
        &self.opts.quad
    }

    pub fn enumeration_cap(&self) -> usize {
        self.opts.enumeration_cap
    }

    /// Number of exact events.
    pub fn n(&self) -> usize {
        self.events.len()
    }

    pub fn events(&self) -> &[f64] {
        &self.events
    }

    pub fn grid_level(&self) -> u32 {
        self.grid_level
    }

    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    /// Kinks and jumps of every integrand in `y`.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    fn set_grid(&mut self, level: u32) {
        self.grid_level = level;
        self.kappa = (0..self.events.len() + 2).map(|_| OnceLock::new()).collect();
        self.grid = match self.eta {
            BaseMeasure::Atom { at, mass } => vec![GridNode {
                y: at,
                lo: at,
                hi: at,
                log_w: mass.ln(),
                g: self.exposure.eval(at),
            }],
            BaseMeasure::Continuous { lo, hi, .. } => panels(lo, hi, &self.breakpoints)
                .into_iter()
                .flat_map(|p| panel_bins(p, level, self.opts.quad.t_max))
                .filter_map(|(a, b, node)| {
                    let d = self.eta.density(node.y);
                    (d > 0.0 && node.w > 0.0).then(|| GridNode {
                        y: node.y,
                        lo: a,
                        hi: b,
                        log_w: node.w.ln() + d.ln(),
                        g: self.exposure.eval(node.y),
                    })
                })
                .collect(),
        };
    }

    /// Smallest grid level at which grid sums of probe cells agree with
    /// adaptive quadrature to 1e-8 in log scale.
    fn choose_grid_level(&mut self) -> Result<()> {
        let n = self.events.len();
        let mut probes: Vec<Vec<usize>> = Vec::new();
        if n > 0 {
            let step = (n / 6).max(1);
            probes.extend((0..n).step_by(step).map(|i| vec![i]));
            probes.push(vec![n - 1]);
            probes.push((0..n.min(4)).collect());
        }
        probes.sort();
        probes.dedup();
        let exact: Vec<f64> = probes
            .iter()
            .map(|c| self.adaptive_log_cell_integral(c, 0, None))
            .collect::<Result<_>>()?;
        let mut level = 3;
        loop {
            self.set_grid(level);
            let worst = probes
                .iter()
                .zip(&exact)
                .map(|(c, &e)| {
                    let g = self.grid_log_cell_integral(c, 0);
                    if e == f64::NEG_INFINITY && g == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (g - e).abs()
                    }
                })
                .fold(0.0, f64::max);
            if worst <= 1e-8 || !matches!(self.eta, BaseMeasure::Continuous { .. }) {
                return Ok(());
            }
            if level >= 8 {
                log::warn!("latent grid stops at level {level} with log error {worst:e}");
                return Ok(());
            }
            level += 1;
        }
    }

    /// κ must be finite wherever some event kernel is positive.
    fn check_finiteness(&self) -> Result<()> {
        let n = self.events.len();
        if n == 0 {
            return Ok(());
        }
        for node in &self.grid {
            if self.events.iter().any(|&x| self.kernel.eval(x, node.y) > 0.0) {
                for l in [1, n] {
                    let v = self.family.log_cumulant(l, node.g, node.y)?;
                    if !v.is_finite() {
                        return Err(Error::Divergent(format!(
                            "κ_{l} is not finite at y = {}",
                            node.y
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// ln κ_l at the grid nodes (`+∞` where it diverges).
    fn grid_kappa(&self, l: usize) -> Cow<'_, [f64]> {
        let make = || -> Vec<f64> {
            self.grid
                .iter()
                .map(|n| self.family.log_cumulant(l, n.g, n.y).unwrap_or(f64::INFINITY))
                .collect()
        };
        match self.kappa.get(l) {
            Some(cell) => Cow::Borrowed(cell.get_or_init(make)),
            None => Cow::Owned(make()),
        }
    }

    fn log_kernel_product(&self, cell: &[usize], y: f64) -> f64 {
        let mut s = 0.0;
        for &i in cell {
            let k = self.kernel.eval(self.events[i], y);
            if k == 0.0 {
                return f64::NEG_INFINITY;
            }
            s += k.ln();
        }
        s
    }

    /// ln of `Π k(Xᵢ|y) κ_{|C|+shift}(g(y), y)`.
    pub fn log_cell_density(&self, cell: &[usize], shift: usize, y: f64) -> Result<f64> {
        let lk = self.log_kernel_product(cell, y);
        if lk == f64::NEG_INFINITY {
            return Ok(lk);
        }
        Ok(lk + self.family.log_cumulant(cell.len() + shift, self.exposure.eval(y), y)?)
    }

    fn grid_terms(&self, cell: &[usize], shift: usize) -> Vec<f64> {
        let kappa = self.grid_kappa(cell.len() + shift);
        self.grid
            .iter()
            .zip(kappa.iter())
            .map(|(node, &lk)| {
                let p = self.log_kernel_product(cell, node.y);
                if p == f64::NEG_INFINITY {
                    p
                } else {
                    p + lk + node.log_w
                }
            })
            .collect()
    }

    fn grid_log_cell_integral(&self, cell: &[usize], shift: usize) -> f64 {
        log_sum_exp(self.grid_terms(cell, shift))
    }

    /// Adaptive ln ∫ h(y) Π k(Xᵢ|y) κ_{|C|+shift} η(dy), with `h` the kernel
    /// at `x` when given.
    fn adaptive_log_cell_integral(&self, cell: &[usize], shift: usize, at: Option<f64>) -> Result<f64> {
        let mut bps = self.breakpoints.clone();
        if let Some(x) = at {
            bps.extend(self.kernel.eval_breakpoints(x));
        }
        let scale = if self.grid.is_empty() {
            0.0
        } else {
            let s = self.grid_log_cell_integral(cell, shift);
            if s.is_finite() {
                s
            } else {
                0.0
            }
        };
        let failure = std::cell::RefCell::new(None);
        let v = self.eta.integrate(
            |y| {
                let h = match at {
                    Some(x) => self.kernel.eval(x, y),
                    None => 1.0,
                };
                if h == 0.0 {
                    return 0.0;
                }
                match self.log_cell_density(cell, shift, y) {
                    Ok(l) => h * (l - scale).exp(),
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        0.0
                    }
                }
            },
            &bps,
            &self.opts.quad,
        )?;
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok(v.ln() + scale)
    }

    fn check_cell(&self, cell: &[usize]) -> Result<Vec<usize>> {
        if cell.is_empty() {
            return Err(Error::domain("cell must be nonempty"));
        }
        let mut key = cell.to_vec();
        key.sort_unstable();
        key.dedup();
        if key.len() != cell.len() {
            return Err(Error::domain("cell lists an event twice"));
        }
        if let Some(&bad) = key.iter().find(|&&i| i >= self.events.len()) {
            return Err(Error::OutOfRange {
                index: bad,
                cells: self.events.len(),
            });
        }
        Ok(key)
    }

    /// ln I(C) by adaptive quadrature, cached per cell. Returns `-∞` (with a
    /// logged diagnostic) when the kernels of the cell have no common
    /// support under η.
    pub fn log_cell_integral(&self, cell: &[usize]) -> Result<f64> {
        let key = self.check_cell(cell)?;
        if let Some(v) = self.cells.get(&key) {
            return Ok(*v);
        }
        let v = self.adaptive_log_cell_integral(&key, 0, None)?;
        if v == f64::NEG_INFINITY {
            log::warn!(
                "cell {:?} has zero integral: the kernels at its event times vanish on the support of η",
                key.iter().map(|i| i + 1).collect::<Vec<_>>()
            );
        }
        self.cells.insert(key, v);
        Ok(v)
    }

    /// Number of cached cell integrals.
    pub fn cached_cells(&self) -> usize {
        self.cells.len()
    }

    /// ln Π_j I(C_j).
    pub fn log_partition_weight(&self, p: &Partition) -> Result<f64> {
        if p.n() != self.n() {
            return Err(Error::domain(format!(
                "partition covers {} items but the model has {} events",
                p.n(),
                self.n()
            )));
        }
        p.cells().iter().map(|c| self.log_cell_integral(c)).sum()
    }

    /// Exhaustive partition posterior; the brute-force oracle for samplers.
    pub fn exact_partition_posterior(&self) -> Result<PartitionPosterior> {
        let n = self.n();
        let mut entries = Vec::new();
        for p in enumerate_partitions_capped(n, self.opts.enumeration_cap)? {
            let lw = self.log_partition_weight(&p)?;
            entries.push(PartitionProbability {
                partition: p,
                log_weight: lw,
                probability: 0.0,
            });
        }
        let log_norm = log_sum_exp(entries.iter().map(|e| e.log_weight));
        if !log_norm.is_finite() {
            return Err(Error::Degenerate(
                "every partition has zero posterior weight".into(),
            ));
        }
        for e in &mut entries {
            e.probability = (e.log_weight - log_norm).exp();
        }
        Ok(PartitionPosterior {
            entries,
            log_normalizer: log_norm,
        })
    }

    /// Posterior law of the latent value shared by a cell.
    pub fn cell_posterior(&self, cell: &[usize]) -> Result<CellPosterior> {
        let key = self.check_cell(cell)?;
        let log_norm = self.log_cell_integral(&key)?;
        if log_norm == f64::NEG_INFINITY {
            return Err(Error::Degenerate(format!(
                "cell {:?} has zero integral",
                key.iter().map(|i| i + 1).collect::<Vec<_>>()
            )));
        }
        let terms = self.grid_terms(&key, 0);
        let grid_norm = log_sum_exp(terms.iter().copied());
        let mut nodes = Vec::new();
        let mut bins = Vec::new();
        for (node, t) in self.grid.iter().zip(terms) {
            if t == f64::NEG_INFINITY {
                continue;
            }
            let p = (t - grid_norm).exp();
            nodes.push((node.y, p));
            bins.push((node.lo, node.hi, p));
        }
        Ok(CellPosterior {
            cell: key,
            log_normalizer: log_norm,
            nodes,
            table: Tabulated::from_bins(bins)?,
        })
    }

    /// `∫ k(x|y) κ₁(g(y), y) η(dy)`: the part of the mean intensity carried by
    /// the tilted prior.
    pub fn prior_mean_intensity(&self, x: f64) -> Result<f64> {
        let mut bps = self.breakpoints.clone();
        bps.extend(self.kernel.eval_breakpoints(x));
        let failure = std::cell::RefCell::new(None);
        let v = self.eta.integrate(
            |y| {
                let k = self.kernel.eval(x, y);
                if k == 0.0 {
                    return 0.0;
                }
                match self.family.log_cumulant(1, self.exposure.eval(y), y) {
                    Ok(l) => k * l.exp(),
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        0.0
                    }
                }
            },
            &bps,
            &self.opts.quad,
        )?;
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok(v)
    }

    /// Mean jump of a cell of size `e` at latent value `y`, `κ_{e+1}/κ_e`.
    pub fn jump_mean(&self, e: usize, y: f64) -> Result<f64> {
        self.family.jump_mean(e, self.exposure.eval(y), y)
    }

    /// `k(x|y) κ_{e+1}/κ_e` for a cell of size `e` sitting at `y`.
    pub fn jump_term(&self, e: usize, y: f64, x: f64) -> Result<f64> {
        let k = self.kernel.eval(x, y);
        if k == 0.0 {
            return Ok(0.0);
        }
        Ok(k * self.jump_mean(e, y)?)
    }

    /// The jump term averaged over the cell posterior:
    /// `∫ k(x|y) Π k(Xᵢ|y) κ_{e+1} η(dy) / I(C)`.
    pub fn rao_blackwell_jump_term(&self, cell: &[usize], x: f64) -> Result<f64> {
        let key = self.check_cell(cell)?;
        let denom = self.log_cell_integral(&key)?;
        if denom == f64::NEG_INFINITY {
            return Err(Error::Degenerate("cell has zero integral".into()));
        }
        let num = self.adaptive_log_cell_integral(&key, 1, Some(x))?;
        Ok((num - denom).exp())
    }

    /// `E[λ(x) | X, p, Y*]` at each point of `xs`.
    pub fn mean_intensity_given(&self, p: &Partition, ystar: &[f64], xs: &[f64]) -> Result<Vec<f64>> {
        if ystar.len() != p.num_cells() {
            return Err(Error::domain(format!(
                "{} latent values for {} cells",
                ystar.len(),
                p.num_cells()
            )));
        }
        xs.iter()
            .map(|&x| {
                let mut v = self.prior_mean_intensity(x)?;
                for (cell, &y) in p.cells().iter().zip(ystar) {
                    v += self.jump_term(cell.len(), y, x)?;
                }
                Ok(v)
            })
            .collect()
    }

    /// `E[λ(x) | X, p]` with the latent values integrated out.
    pub fn mean_intensity_given_partition(&self, p: &Partition, xs: &[f64]) -> Result<Vec<f64>> {
        xs.iter()
            .map(|&x| {
                let mut v = self.prior_mean_intensity(x)?;
                for cell in p.cells() {
                    v += self.rao_blackwell_jump_term(cell, x)?;
                }
                Ok(v)
            })
            .collect()
    }

    /// `E[λ(x) | X]` by full enumeration of partitions.
    pub fn predictive_hazard(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let prior: Vec<f64> = xs
            .iter()
            .map(|&x| self.prior_mean_intensity(x))
            .collect::<Result<_>>()?;
        if self.n() == 0 {
            return Ok(prior);
        }
        let post = self.exact_partition_posterior()?;
        let mut out = prior;
        for (cell, w) in post.cell_marginals() {
            for (o, &x) in out.iter_mut().zip(xs) {
                *o += w * self.rao_blackwell_jump_term(&cell, x)?;
            }
        }
        Ok(out)
    }

    /// ln Π_j κ_{e_j}(g(Y*_j), Y*_j) η(Y*_j) for the tie pattern of `ys`,
    /// with η read as a density (or atom mass).
    pub fn log_moment_measure(&self, ys: &[f64]) -> Result<f64> {
        let labels: Vec<usize> = ys
            .iter()
            .map(|y| ys.iter().position(|z| z == y).unwrap())
            .collect();
        let p = Partition::from_labels(&labels);
        let mut total = 0.0;
        for cell in p.cells() {
            let y = ys[cell[0]];
            let d = self.eta.density(y);
            if d == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += self.family.log_cumulant(cell.len(), self.exposure.eval(y), y)? + d.ln();
        }
        Ok(total)
    }

    /// Grid nodes as `(y, bin_lo, bin_hi)`.
    pub fn grid_nodes(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.grid.iter().map(|n| (n.y, n.lo, n.hi))
    }
}

/// A partition with its unnormalised log weight and posterior probability.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionProbability {
    pub partition: Partition,
    pub log_weight: f64,
    pub probability: f64,
}

/// The exact posterior over partitions.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionPosterior {
    pub entries: Vec<PartitionProbability>,
    pub log_normalizer: f64,
}

impl PartitionPosterior {
    pub fn probability(&self, p: &Partition) -> f64 {
        self.entries
            .iter()
            .find(|e| &e.partition == p)
            .map_or(0.0, |e| e.probability)
    }

    pub fn expectation<F: Fn(&Partition) -> f64>(&self, t: F) -> f64 {
        self.entries.iter().map(|e| e.probability * t(&e.partition)).sum()
    }

    /// Posterior probability that each cell appears in the partition.
    pub fn cell_marginals(&self) -> Vec<(Vec<usize>, f64)> {
        let mut map: HashMap<Vec<usize>, f64> = HashMap::new();
        for e in &self.entries {
            for c in e.partition.cells() {
                *map.entry(c.clone()).or_default() += e.probability;
            }
        }
        let mut out: Vec<_> = map.into_iter().collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn to_map(&self) -> HashMap<Partition, f64> {
        self.entries
            .iter()
            .map(|e| (e.partition.clone(), e.probability))
            .collect()
    }
}

/// Posterior law of the latent value of one cell, tabulated on the grid.
#[derive(Debug, Clone)]
pub struct CellPosterior {
    cell: Vec<usize>,
    log_normalizer: f64,
    nodes: Vec<(f64, f64)>,
    table: Tabulated,
}

impl CellPosterior {
    pub fn cell(&self) -> &[usize] {
        &self.cell
    }

    /// ln I(C).
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.table.sample(rng)
    }

    /// Posterior expectation of `f` by the grid rule.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().map(|&(y, p)| p * f(y)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|y| y)
    }

    /// `(y, probability)` of each grid node.
    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }
}

/// Hazard and survival of a single new time under the prior:
/// `∫ k(t|y) κ₁(K(t|y), y) η(dy)` and `exp(-Ψ(K(t|·)))`.
pub fn prior_predictive(
    kernel: Kernel,
    family: &LevyFamily,
    eta: &BaseMeasure,
    t: f64,
    cfg: &QuadConfig,
) -> Result<(f64, f64)> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("time must be nonnegative, got {t}")));
    }
    let mut bps = kernel.eval_breakpoints(t);
    bps.extend(kernel.cumulative_breakpoints(t));
    let failure = std::cell::RefCell::new(None);
    let hazard = eta.integrate(
        |y| {
            let k = kernel.eval(t, y);
            if k == 0.0 {
                return 0.0;
            }
            match family.log_cumulant(1, kernel.cumulative(t, y), y) {
                Ok(l) => k * l.exp(),
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        },
        &bps,
        cfg,
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let psi = crate::levy::laplace_exponent(family, eta, |y| kernel.cumulative(t, y), &bps, cfg)?;
    Ok((hazard, (-psi).exp()))
}
