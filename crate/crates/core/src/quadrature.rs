//! Composite tanh-sinh quadrature.
//!
//! Integration ranges are split into panels at caller-supplied breakpoints
//! (kernel discontinuities, data times) so that each panel carries a smooth
//! integrand, possibly with integrable endpoint singularities. Each panel uses
//! the tanh-sinh rule; halving the step doubles the node count, and
//! refinement stops once successive estimates agree to the relative
//! tolerance. Half-infinite panels are mapped onto (0, 1) by
//! `y = a + u / (1 - u)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HALF_PI: f64 = std::f64::consts::FRAC_PI_2;

/// Tail mass beyond `FAR_TAIL` that is not small against the mass between
/// `MID_TAIL` and `FAR_TAIL` means the integrand decays no faster than 1/y.
const MID_TAIL: f64 = 1e5;
const FAR_TAIL: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadConfig {
    /// Relative tolerance between successive refinements.
    pub tol: f64,
    pub min_level: u32,
    pub max_level: u32,
    /// Truncation of the tanh-sinh abscissa |t| ≤ t_max (whole part used).
    pub t_max: f64,
    /// Truncation used for the fixed posterior grids, whose integrands are
    /// bounded.
    pub grid_t_max: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            tol: 1e-9,
            min_level: 3,
            max_level: 10,
            t_max: 6.0,
            grid_t_max: 4.0,
        }
    }
}

/// One panel of a composite rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Panel {
    Finite(f64, f64),
    /// `(a, ∞)`
    Upper(f64),
    /// `(-∞, b)`
    Lower(f64),
}

impl Panel {
    pub fn is_infinite(&self) -> bool {
        !matches!(self, Panel::Finite(..))
    }

    fn anchor(&self) -> f64 {
        match *self {
            Panel::Finite(a, _) => a,
            Panel::Upper(a) => a,
            Panel::Lower(b) => b,
        }
    }
}

/// Splits `[lo, hi]` (either end may be infinite) at the breakpoints that
/// fall strictly inside it.
pub fn panels(lo: f64, hi: f64, breakpoints: &[f64]) -> Vec<Panel> {
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|b| b.is_finite() && *b > lo && *b < hi)
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs()));
    if lo == f64::NEG_INFINITY && hi == f64::INFINITY && cuts.is_empty() {
        cuts.push(0.0);
    }
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(lo);
    edges.extend(cuts);
    edges.push(hi);
    edges
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| match (w[0].is_finite(), w[1].is_finite()) {
            (true, true) => Panel::Finite(w[0], w[1]),
            (true, false) => Panel::Upper(w[0]),
            (false, true) => Panel::Lower(w[1]),
            (false, false) => unreachable!("whole line is split at 0"),
        })
        .collect()
}

/// A mapped node: abscissa and weight (Jacobian included).
#[derive(Debug, Clone, Copy)]
pub struct Node {
    pub y: f64,
    pub w: f64,
}

/// Node of the canonical rule on (-1, 1) at abscissa parameter `t`:
/// (distance to -1, distance to +1, weight).
fn canonical(t: f64) -> (f64, f64, f64) {
    let u = HALF_PI * t.sinh();
    let e = (-2.0 * u.abs()).exp();
    let gap = 2.0 * e / (1.0 + e);
    let w = HALF_PI * t.cosh() * 4.0 * e / ((1.0 + e) * (1.0 + e));
    if t >= 0.0 {
        (2.0 - gap, gap, w)
    } else {
        (gap, 2.0 - gap, w)
    }
}

fn map_node(panel: Panel, t: f64) -> Option<Node> {
    let (lo_gap, hi_gap, w) = canonical(t);
    if w == 0.0 || lo_gap == 0.0 || hi_gap == 0.0 {
        return None;
    }
    match panel {
        Panel::Finite(a, b) => {
            let hw = 0.5 * (b - a);
            let y = if t < 0.0 { a + hw * lo_gap } else { b - hw * hi_gap };
            if y <= a || y >= b {
                return None;
            }
            Some(Node { y, w: w * hw })
        }
        Panel::Upper(a) | Panel::Lower(a) => {
            // u in (0, 1): u = lo_gap / 2, 1 - u = hi_gap / 2
            let u = 0.5 * lo_gap;
            let v = 0.5 * hi_gap;
            let r = u / v;
            let jac = 0.5 / (v * v);
            if !r.is_finite() || !jac.is_finite() {
                return None;
            }
            let y = if matches!(panel, Panel::Upper(_)) { a + r } else { a - r };
            if y == a || !y.is_finite() {
                return None;
            }
            Some(Node { y, w: w * jac })
        }
    }
}

/// Nodes added at `level`: every abscissa `k h` for the first level,
/// odd multiples afterwards. Weights exclude the step `h`.
fn level_nodes(panel: Panel, level: u32, first: bool, t_max: f64) -> Vec<Node> {
    let h = (0.5f64).powi(level as i32);
    // integer truncation keeps the node sets of successive levels nested
    let kmax = (t_max.floor().max(1.0) as i64) << level;
    let step = if first { 1 } else { 2 };
    let start = if first { -kmax } else { -kmax + ((kmax + 1) % 2) };
    let mut out = Vec::new();
    let mut k = start;
    while k <= kmax {
        if first || k % 2 != 0 {
            if let Some(n) = map_node(panel, k as f64 * h) {
                out.push(n);
            }
        }
        k += step;
    }
    out
}

/// All nodes of one panel at a fixed level (weights include `h`).
pub fn panel_nodes(panel: Panel, level: u32, t_max: f64) -> Vec<Node> {
    let h = (0.5f64).powi(level as i32);
    let mut nodes = level_nodes(panel, level, true, t_max);
    for n in &mut nodes {
        n.w *= h;
    }
    nodes
}

/// Result of one panel integration.
#[derive(Debug, Clone, Copy)]
pub struct PanelEstimate {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

fn integrate_panel<F: Fn(f64) -> f64>(f: &F, panel: Panel, cfg: &QuadConfig) -> Result<PanelEstimate> {
    let mut sum = 0.0;
    let mut far = 0.0;
    let mut mid = 0.0;
    let mut prev: Option<f64> = None;
    let mut value = 0.0;
    let mut error = f64::INFINITY;
    let mut h = 1.0;
    for level in cfg.min_level..=cfg.max_level {
        let first = level == cfg.min_level;
        for node in level_nodes(panel, level, first, cfg.t_max) {
            let fy = f(node.y);
            if fy == 0.0 {
                continue;
            }
            if !fy.is_finite() {
                return Err(Error::Divergent(format!(
                    "integrand is {fy} at y = {:e}",
                    node.y
                )));
            }
            let c = fy * node.w;
            sum += c;
            if panel.is_infinite() {
                let d = (node.y - panel.anchor()).abs();
                if d > FAR_TAIL {
                    far += c.abs();
                } else if d > MID_TAIL {
                    mid += c.abs();
                }
            }
        }
        h = (0.5f64).powi(level as i32);
        value = sum * h;
        if let Some(p) = prev {
            error = (value - p).abs();
            if error <= cfg.tol * value.abs() || (value == 0.0 && p == 0.0) {
                break;
            }
        }
        prev = Some(value);
    }
    if far * h > 1e-8 * value.abs() && far > 0.1 * mid {
        return Err(Error::Divergent(format!(
            "integrand retains mass beyond |y| = {FAR_TAIL:e} on an unbounded panel"
        )));
    }
    let converged = error <= cfg.tol * value.abs() || value == 0.0;
    Ok(PanelEstimate {
        value,
        error,
        converged,
    })
}

/// ∫ f over `[lo, hi]` split at `breakpoints`.
///
/// Fails with [`Error::Divergent`] when the integrand blows up or keeps mass
/// at infinity, and with [`Error::Numeric`] when refinement stalls above
/// 1e-6 relative error.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    breakpoints: &[f64],
    cfg: &QuadConfig,
) -> Result<f64> {
    if !(hi > lo) {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut err = 0.0;
    for panel in panels(lo, hi, breakpoints) {
        let est = integrate_panel(&f, panel, cfg)?;
        total += est.value;
        err += est.error;
        if !est.converged {
            log::debug!("panel {panel:?} stopped at error {:e}", est.error);
        }
    }
    if err > 1e-6 * total.abs() && err > 1e-300 {
        return Err(Error::Numeric {
            msg: "quadrature refinement did not converge".into(),
            residual: err / total.abs().max(f64::MIN_POSITIVE),
        });
    }
    Ok(total)
}

/// Nodes of the composite rule at a fixed level.
pub fn composite_nodes(panels: &[Panel], level: u32, t_max: f64) -> Vec<(usize, Node)> {
    panels
        .iter()
        .enumerate()
        .flat_map(|(i, p)| panel_nodes(*p, level, t_max).into_iter().map(move |n| (i, n)))
        .collect()
}

/// Nodes of one panel at a fixed level, each with the bin it represents:
/// bin edges sit halfway between neighbouring nodes and at the panel ends.
pub fn panel_bins(panel: Panel, level: u32, t_max: f64) -> Vec<(f64, f64, Node)> {
    let mut nodes = panel_nodes(panel, level, t_max);
    nodes.sort_by(|a, b| a.y.partial_cmp(&b.y).unwrap());
    let m = nodes.len();
    if m == 0 {
        return Vec::new();
    }
    let (plo, phi) = match panel {
        Panel::Finite(a, b) => (a, b),
        Panel::Upper(a) => (a, f64::INFINITY),
        Panel::Lower(b) => (f64::NEG_INFINITY, b),
    };
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let lo = if i == 0 {
            if plo.is_finite() {
                plo
            } else if m > 1 {
                nodes[0].y - 0.5 * (nodes[1].y - nodes[0].y)
            } else {
                nodes[0].y
            }
        } else {
            0.5 * (nodes[i - 1].y + nodes[i].y)
        };
        let hi = if i + 1 == m {
            if phi.is_finite() {
                phi
            } else if m > 1 {
                nodes[m - 1].y + 0.5 * (nodes[m - 1].y - nodes[m - 2].y)
            } else {
                nodes[m - 1].y
            }
        } else {
            0.5 * (nodes[i].y + nodes[i + 1].y)
        };
        out.push((lo, hi, nodes[i]));
    }
    out
}

/// A piecewise-uniform law built from weighted bins; sampling picks a bin by
/// inverse CDF and a point uniformly inside it.
#[derive(Debug, Clone)]
pub struct Tabulated {
    lo: Vec<f64>,
    hi: Vec<f64>,
    cdf: Vec<f64>,
}

impl Tabulated {
    /// `bins` holds `(lo, hi, mass)` triples with nonnegative masses.
    pub fn from_bins(bins: impl IntoIterator<Item = (f64, f64, f64)>) -> Result<Self> {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut cdf = Vec::new();
        let mut acc = 0.0;
        for (a, b, m) in bins {
            if !(m >= 0.0) || !m.is_finite() {
                return Err(Error::Numeric {
                    msg: format!("bin [{a}, {b}] has mass {m}"),
                    residual: f64::NAN,
                });
            }
            if m == 0.0 {
                continue;
            }
            acc += m;
            lo.push(a);
            hi.push(b);
            cdf.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::Degenerate("tabulated law has zero mass".into()));
        }
        Ok(Tabulated { lo, hi, cdf })
    }

    /// Law on (0, 1) with unnormalised density `density(s, 1 - s)`; the upper
    /// half is tabulated in `1 - s` to keep endpoint precision.
    pub fn unit_interval<F: Fn(f64, f64) -> f64>(density: F, cfg: &QuadConfig) -> Result<Self> {
        let level = cfg.min_level.max(7);
        let half = Panel::Finite(0.0, 0.5);
        let lower = panel_bins(half, level, cfg.t_max)
            .into_iter()
            .map(|(a, b, n)| (a, b, n.w * density(n.y, 1.0 - n.y)));
        let upper = panel_bins(half, level, cfg.t_max)
            .into_iter()
            .map(|(a, b, n)| (1.0 - b, 1.0 - a, n.w * density(1.0 - n.y, n.y)));
        Tabulated::from_bins(lower.chain(upper))
    }

    pub fn total(&self) -> f64 {
        *self.cdf.last().expect("nonempty")
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = rng.random::<f64>() * self.total();
        let i = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let v: f64 = rng.random();
        self.lo[i] + v * (self.hi[i] - self.lo[i])
    }
}
