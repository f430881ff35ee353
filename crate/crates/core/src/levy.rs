//! Lévy intensities `ρ(ds|y) η(dy)`: the generalized gamma and beta-process
//! families, base measures, exponential tilting by an exposure, cumulants
//! `κ_l = ∫ s^l e^{-g s} ρ(ds|y)`, Laplace exponents and the posterior laws
//! of fixed jumps.
//!
//! Generalized gamma: `ρ(ds) = s^{-α-1} e^{-b s} ds / Γ(1-α)` with either
//! `0 < α < 1, b ≥ 0` or `α ≤ 0, b > 0`. Beta process:
//! `ρ(ds|y) = c(y) s^{-1} (1-s)^{c(y)-1} ds` on `(0, 1)`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma as GammaDist};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadConfig, Tabulated};
use crate::special::ln_hyp1f1;

/// A positive parameter that may vary with the location `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamFn {
    Constant(f64),
    /// `intercept + slope * y`
    Linear { intercept: f64, slope: f64 },
    /// `scale * exp(rate * y)`
    Exponential { scale: f64, rate: f64 },
    Shifted { base: Box<ParamFn>, by: f64 },
}

impl ParamFn {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            ParamFn::Constant(v) => *v,
            ParamFn::Linear { intercept, slope } => intercept + slope * y,
            ParamFn::Exponential { scale, rate } => scale * (rate * y).exp(),
            ParamFn::Shifted { base, by } => base.eval(y) + by,
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            ParamFn::Constant(v) => Some(*v),
            ParamFn::Shifted { base, by } => base.as_constant().map(|v| v + by),
            _ => None,
        }
    }

    pub fn shifted(&self, by: f64) -> ParamFn {
        match self {
            ParamFn::Constant(v) => ParamFn::Constant(v + by),
            ParamFn::Linear { intercept, slope } => ParamFn::Linear {
                intercept: intercept + by,
                slope: *slope,
            },
            other => ParamFn::Shifted {
                base: Box::new(other.clone()),
                by,
            },
        }
    }

    /// Smallest value over `[lo, hi]`. Every shape is monotone, so the ends
    /// suffice; infinite ends are evaluated as limits.
    pub fn min_on(&self, lo: f64, hi: f64) -> f64 {
        let at = |y: f64| {
            if y.is_finite() {
                self.eval(y)
            } else {
                self.limit(y)
            }
        };
        at(lo).min(at(hi))
    }

    fn limit(&self, y: f64) -> f64 {
        match self {
            ParamFn::Constant(v) => *v,
            ParamFn::Linear { intercept, slope } => {
                if *slope == 0.0 {
                    *intercept
                } else {
                    slope * y
                }
            }
            ParamFn::Exponential { scale, rate } => {
                if *rate == 0.0 {
                    *scale
                } else if (rate * y) > 0.0 {
                    scale * f64::INFINITY
                } else {
                    0.0
                }
            }
            ParamFn::Shifted { base, by } => base.limit(y) + by,
        }
    }

    /// Parses `1.5`, `constant(1.5)`, `linear(a, b)` or `exponential(s, r)`.
    pub fn parse(text: &str) -> Result<ParamFn> {
        let t = text.trim();
        if let Ok(v) = t.parse::<f64>() {
            return Ok(ParamFn::Constant(v));
        }
        let open = t
            .find('(')
            .filter(|_| t.ends_with(')'))
            .ok_or_else(|| Error::domain(format!("cannot parse parameter function `{t}`")))?;
        let name = t[..open].trim();
        let args: Vec<f64> = t[open + 1..t.len() - 1]
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::domain(format!("bad argument in `{t}`: {e}")))?;
        match (name, args.as_slice()) {
            ("constant", [v]) => Ok(ParamFn::Constant(*v)),
            ("linear", [a, b]) => Ok(ParamFn::Linear {
                intercept: *a,
                slope: *b,
            }),
            ("exponential", [s, r]) => Ok(ParamFn::Exponential { scale: *s, rate: *r }),
            _ => Err(Error::domain(format!(
                "unknown parameter function `{t}` (expected constant(v), linear(a, b) or exponential(s, r))"
            ))),
        }
    }
}

impl From<f64> for ParamFn {
    fn from(v: f64) -> Self {
        ParamFn::Constant(v)
    }
}

/// Density of the base measure η with respect to Lebesgue measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    Lebesgue,
    Constant(f64),
    /// `rate * exp(-rate * y)`
    Exponential { rate: f64 },
    /// Gamma(shape, rate) probability density.
    Gamma { shape: f64, rate: f64 },
}

impl Density {
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            Density::Lebesgue => 1.0,
            Density::Constant(c) => c,
            Density::Exponential { rate } => rate * (-rate * y).exp(),
            Density::Gamma { shape, rate } => {
                if y <= 0.0 {
                    0.0
                } else {
                    ((shape - 1.0) * y.ln() - rate * y + shape * rate.ln() - ln_gamma(shape)).exp()
                }
            }
        }
    }
}

/// The base measure η on the latent axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMeasure {
    Continuous { lo: f64, hi: f64, density: Density },
    Atom { at: f64, mass: f64 },
}

impl BaseMeasure {
    pub fn lebesgue(lo: f64, hi: f64) -> Self {
        BaseMeasure::Continuous {
            lo,
            hi,
            density: Density::Lebesgue,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaseMeasure::Continuous { lo, hi, density } => {
                if lo.is_nan() || hi.is_nan() || !(hi > lo) {
                    return Err(Error::domain(format!("η support [{lo}, {hi}] is empty")));
                }
                let ok = match *density {
                    Density::Lebesgue => true,
                    Density::Constant(c) => c > 0.0 && c.is_finite(),
                    Density::Exponential { rate } => rate > 0.0 && *lo >= 0.0,
                    Density::Gamma { shape, rate } => shape > 0.0 && rate > 0.0 && *lo >= 0.0,
                };
                if !ok {
                    return Err(Error::domain(format!(
                        "η density {density:?} is invalid on [{lo}, {hi}]"
                    )));
                }
                Ok(())
            }
            BaseMeasure::Atom { at, mass } => {
                if !(at.is_finite() && *mass > 0.0 && mass.is_finite()) {
                    return Err(Error::domain("η atom needs a finite location and positive mass"));
                }
                Ok(())
            }
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            BaseMeasure::Continuous { lo, hi, .. } => (lo, hi),
            BaseMeasure::Atom { at, .. } => (at, at),
        }
    }

    pub fn density(&self, y: f64) -> f64 {
        match self {
            BaseMeasure::Continuous { lo, hi, density } => {
                if y < *lo || y > *hi {
                    0.0
                } else {
                    density.eval(y)
                }
            }
            BaseMeasure::Atom { at, mass } => {
                if y == *at {
                    *mass
                } else {
                    0.0
                }
            }
        }
    }

    /// ∫ f dη, splitting at `breakpoints`.
    pub fn integrate<F: Fn(f64) -> f64>(
        &self,
        f: F,
        breakpoints: &[f64],
        cfg: &QuadConfig,
    ) -> Result<f64> {
        match self {
            BaseMeasure::Continuous { lo, hi, density } => {
                integrate(|y| {
                    let v = f(y);
                    if v == 0.0 {
                        0.0
                    } else {
                        v * density.eval(y)
                    }
                }, *lo, *hi, breakpoints, cfg)
            }
            BaseMeasure::Atom { at, mass } => Ok(mass * f(*at)),
        }
    }

    /// Total mass; [`Error::Divergent`] when infinite.
    pub fn total_mass(&self, cfg: &QuadConfig) -> Result<f64> {
        match self {
            BaseMeasure::Continuous { lo, hi, density } => match density {
                Density::Lebesgue | Density::Constant(_) if lo.is_infinite() || hi.is_infinite() => {
                    Err(Error::Divergent("η has infinite total mass".into()))
                }
                _ => self.integrate(|_| 1.0, &[], cfg),
            },
            BaseMeasure::Atom { mass, .. } => Ok(*mass),
        }
    }
}

/// The Lévy intensity family `ρ(ds|y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevyFamily {
    GeneralizedGamma { alpha: f64, b: ParamFn },
    Beta { c: ParamFn },
}

/// Where the jumps live.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JumpSpace {
    HalfLine,
    UnitInterval,
}

impl LevyFamily {
    pub fn generalized_gamma(alpha: f64, b: impl Into<ParamFn>) -> Result<Self> {
        let f = LevyFamily::GeneralizedGamma {
            alpha,
            b: b.into(),
        };
        f.validate()?;
        Ok(f)
    }

    pub fn beta(c: impl Into<ParamFn>) -> Result<Self> {
        let f = LevyFamily::Beta { c: c.into() };
        f.validate()?;
        Ok(f)
    }

    /// Checks the family invariants with parameters evaluated over `[lo, hi]`.
    pub fn validate_on(&self, lo: f64, hi: f64) -> Result<()> {
        match self {
            LevyFamily::GeneralizedGamma { alpha, b } => {
                let bmin = b.min_on(lo, hi);
                if !alpha.is_finite() || *alpha >= 1.0 {
                    return Err(Error::domain(format!(
                        "generalized gamma needs α < 1, got {alpha}"
                    )));
                }
                if *alpha > 0.0 && !(bmin >= 0.0) {
                    return Err(Error::domain(format!(
                        "generalized gamma with 0 < α < 1 needs b ≥ 0, got min b = {bmin}"
                    )));
                }
                if *alpha <= 0.0 && !(bmin > 0.0) {
                    return Err(Error::domain(format!(
                        "generalized gamma with α ≤ 0 needs b > 0, got min b = {bmin}"
                    )));
                }
                Ok(())
            }
            LevyFamily::Beta { c } => {
                let cmin = c.min_on(lo, hi);
                if !(cmin > 0.0) {
                    return Err(Error::domain(format!(
                        "beta process needs c > 0, got min c = {cmin}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Checks constant parameters; location-dependent ones are checked
    /// against the support of η by [`LevyFamily::validate_on`].
    pub fn validate(&self) -> Result<()> {
        let param = match self {
            LevyFamily::GeneralizedGamma { b, .. } => b,
            LevyFamily::Beta { c } => c,
        };
        match param.as_constant() {
            Some(_) => self.validate_on(0.0, 0.0),
            None => Ok(()),
        }
    }

    pub fn jump_space(&self) -> JumpSpace {
        match self {
            LevyFamily::GeneralizedGamma { .. } => JumpSpace::HalfLine,
            LevyFamily::Beta { .. } => JumpSpace::UnitInterval,
        }
    }

    /// True when `∫ ρ(ds|y) < ∞`, i.e. compound Poisson.
    pub fn is_finite_activity(&self) -> bool {
        matches!(self, LevyFamily::GeneralizedGamma { alpha, .. } if *alpha < 0.0)
    }

    /// Lévy density `ρ(s|y)`.
    pub fn levy_density(&self, s: f64, y: f64) -> f64 {
        self.log_levy_density(s, y).exp()
    }

    /// ln ρ(s|y); `-∞` outside the jump space.
    pub fn log_levy_density(&self, s: f64, y: f64) -> f64 {
        match self {
            LevyFamily::GeneralizedGamma { alpha, b } => {
                if s <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                (-alpha - 1.0) * s.ln() - b.eval(y) * s - ln_gamma(1.0 - alpha)
            }
            LevyFamily::Beta { c } => {
                if s <= 0.0 || s >= 1.0 {
                    return f64::NEG_INFINITY;
                }
                let c = c.eval(y);
                c.ln() + (c - 1.0) * (-s).ln_1p() - s.ln()
            }
        }
    }

    /// ln κ_l at exposure `g` and location `y`, in closed form.
    pub fn log_cumulant(&self, l: usize, g: f64, y: f64) -> Result<f64> {
        if l < 1 {
            return Err(Error::domain("cumulant order must be at least 1"));
        }
        if !(g >= 0.0) {
            return Err(Error::domain(format!("exposure must be nonnegative, got {g}")));
        }
        let l = l as f64;
        match self {
            LevyFamily::GeneralizedGamma { alpha, b } => {
                let rate = b.eval(y) + g;
                if !(rate > 0.0) {
                    return Err(Error::Divergent(format!(
                        "κ_{l} diverges for the generalized gamma family when b + g = 0 (y = {y})"
                    )));
                }
                Ok(ln_gamma(l - alpha) - ln_gamma(1.0 - alpha) - (l - alpha) * rate.ln())
            }
            LevyFamily::Beta { c } => {
                let c = c.eval(y);
                Ok(c.ln() + ln_gamma(l) + ln_gamma(c) - ln_gamma(l + c) + ln_hyp1f1(l, l + c, -g)?)
            }
        }
    }

    /// κ_l by direct quadrature of `∫ s^l e^{-g s} ρ(ds|y)`.
    pub fn cumulant_by_quadrature(&self, l: usize, g: f64, y: f64, cfg: &QuadConfig) -> Result<f64> {
        let lf = l as f64;
        match self {
            LevyFamily::GeneralizedGamma { alpha, b } => {
                let rate = b.eval(y) + g;
                let norm = gamma(1.0 - alpha);
                let scale = 1.0 / rate;
                let peak = (lf - alpha - 1.0).max(1.0) * scale;
                integrate(
                    |s| (((lf - alpha - 1.0) * s.ln()) - rate * s).exp() / norm,
                    0.0,
                    f64::INFINITY,
                    &[scale, peak],
                    cfg,
                )
            }
            LevyFamily::Beta { .. } => {
                let c = self.beta_c(y);
                unit_interval_integral(|s, v| (lf * s.ln() - g * s + log_beta_density(s, v, c)).exp(), cfg)
            }
        }
    }

    fn beta_c(&self, y: f64) -> f64 {
        match self {
            LevyFamily::Beta { c } => c.eval(y),
            _ => f64::NAN,
        }
    }

    /// Per-location Laplace exponent `ψ_y(f) = ∫ (1 - e^{-s f}) ρ(ds|y)`.
    pub fn inner_laplace_exponent(&self, f: f64, y: f64, cfg: &QuadConfig) -> Result<f64> {
        if f == 0.0 {
            return Ok(0.0);
        }
        match self {
            LevyFamily::GeneralizedGamma { alpha, b } => {
                let b = b.eval(y);
                if *alpha == 0.0 {
                    Ok((f / b).ln_1p())
                } else if b == 0.0 {
                    Ok(f.powf(*alpha) / alpha)
                } else {
                    // ((b + f)^α − b^α) / α without cancellation
                    Ok(b.powf(*alpha) * (alpha * (f / b).ln_1p()).exp_m1() / alpha)
                }
            }
            LevyFamily::Beta { c } => {
                let c = c.eval(y);
                let body = |s: f64, one_minus_s: f64| {
                    -(-s * f).exp_m1() * c * ((c - 1.0) * one_minus_s.ln()).exp() / s
                };
                let lower = integrate(|s| body(s, 1.0 - s), 0.0, 0.5, &[], cfg)?;
                let upper = integrate(|v| body(1.0 - v, v), 0.0, 0.5, &[], cfg)?;
                Ok(lower + upper)
            }
        }
    }

    /// Same quantity by quadrature over the jump axis (test oracle).
    pub fn inner_laplace_exponent_by_quadrature(&self, f: f64, y: f64, cfg: &QuadConfig) -> Result<f64> {
        match self.jump_space() {
            JumpSpace::HalfLine => integrate(
                |s| ((-(-s * f).exp_m1()).ln() + self.log_levy_density(s, y)).exp(),
                0.0,
                f64::INFINITY,
                &[1.0],
                cfg,
            ),
            JumpSpace::UnitInterval => {
                let c = self.beta_c(y);
                unit_interval_integral(|s, v| ((-(-s * f).exp_m1()).ln() + log_beta_density(s, v, c)).exp(), cfg)
            }
        }
    }

    /// Tail mass `∫_ε^∞ ρ(ds|y)` (finite for ε > 0, or for ε = 0 when the
    /// family has finite activity).
    pub fn tail_mass(&self, eps: f64, y: f64, cfg: &QuadConfig) -> Result<f64> {
        match self {
            LevyFamily::GeneralizedGamma { alpha, b } => {
                let b = b.eval(y);
                if eps == 0.0 {
                    if *alpha < 0.0 {
                        // Γ(-α) b^α / Γ(1-α) = b^α / (-α)
                        return Ok(b.powf(*alpha) / -alpha);
                    }
                    return Err(Error::Divergent(
                        "infinite-activity family has infinite mass near zero".into(),
                    ));
                }
                if b == 0.0 {
                    // stable: ε^{-α} / (α Γ(1-α))
                    return Ok(eps.powf(-alpha) / (alpha * gamma(1.0 - alpha)));
                }
                integrate(
                    |s| self.levy_density(s, y),
                    eps,
                    f64::INFINITY,
                    &[eps.max(1.0 / b)],
                    cfg,
                )
            }
            LevyFamily::Beta { c } => {
                if eps <= 0.0 {
                    return Err(Error::Divergent(
                        "beta process has infinite mass near zero".into(),
                    ));
                }
                if eps >= 1.0 {
                    return Ok(0.0);
                }
                let c = c.eval(y);
                let f = |s: f64, om: f64| c * ((c - 1.0) * om.ln()).exp() / s;
                let mid = eps.max(0.5);
                let lower = if eps < 0.5 {
                    integrate(|s| f(s, 1.0 - s), eps, 0.5, &[], cfg)?
                } else {
                    0.0
                };
                let upper = integrate(|v| f(1.0 - v, v), 0.0, 1.0 - mid, &[], cfg)?;
                Ok(lower + upper)
            }
        }
    }

    /// Posterior mean of a fixed jump, `κ_{e+1} / κ_e`.
    pub fn jump_mean(&self, e: usize, g: f64, y: f64) -> Result<f64> {
        Ok((self.log_cumulant(e + 1, g, y)? - self.log_cumulant(e, g, y)?).exp())
    }
}

/// ∫₀¹ f(s) ds evaluated as two halves, the upper one in `v = 1 - s` so that
/// `(1 - s)^{c-1}` singularities keep full precision.
/// `f` receives both `s` and `1 - s`.
fn unit_interval_integral<F: Fn(f64, f64) -> f64>(f: F, cfg: &QuadConfig) -> Result<f64> {
    let lower = integrate(|s| f(s, 1.0 - s), 0.0, 0.5, &[], cfg)?;
    let upper = integrate(|v| f(1.0 - v, v), 0.0, 0.5, &[], cfg)?;
    Ok(lower + upper)
}

/// ln of `c s^{-1} (1-s)^{c-1}` given `s` and `v = 1 - s`.
fn log_beta_density(s: f64, v: f64, c: f64) -> f64 {
    if s <= 0.0 || v <= 0.0 {
        return f64::NEG_INFINITY;
    }
    c.ln() - s.ln() + (c - 1.0) * v.ln()
}

impl fmt::Display for LevyFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevyFamily::GeneralizedGamma { alpha, b } => {
                write!(f, "generalized-gamma(α={alpha}, b={b:?})")
            }
            LevyFamily::Beta { c } => write!(f, "beta(c={c:?})"),
        }
    }
}

/// `κ_l(e^{-g s} ρ | y)` in log form.
pub fn cumulant_kappa(l: usize, family: &LevyFamily, g: f64, y: f64) -> Result<f64> {
    family.log_cumulant(l, g, y)
}

/// `∫_Y ∫ (1 - e^{-s f(y)}) ρ(ds|y) η(dy)`; `breakpoints` mark kinks of `f`.
pub fn laplace_exponent<F: Fn(f64) -> f64>(
    family: &LevyFamily,
    eta: &BaseMeasure,
    f: F,
    breakpoints: &[f64],
    cfg: &QuadConfig,
) -> Result<f64> {
    let (lo, hi) = eta.support();
    family.validate_on(lo, hi)?;
    let inner_err = std::cell::RefCell::new(None);
    let v = eta.integrate(
        |y| {
            let fy = f(y);
            match family.inner_laplace_exponent(fy, y, cfg) {
                Ok(v) => v,
                Err(e) => {
                    inner_err.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        },
        breakpoints,
        cfg,
    );
    if let Some(e) = inner_err.into_inner() {
        return Err(e);
    }
    match v {
        Err(Error::Divergent(msg)) => Err(Error::Divergent(format!(
            "Laplace exponent diverges: {msg}; bound the support of η or use an exposure that vanishes at infinity"
        ))),
        other => other,
    }
}

/// Exposure function usable as a tilt.
pub type ExposureFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The tilted intensity `e^{-g(y) s} ρ(ds|y) η(dy)`.
#[derive(Clone)]
pub struct TiltedLevy {
    family: LevyFamily,
    constant: f64,
    functions: Vec<ExposureFn>,
}

impl fmt::Debug for TiltedLevy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TiltedLevy")
            .field("family", &self.family)
            .field("constant", &self.constant)
            .field("functions", &self.functions.len())
            .finish()
    }
}

/// What to tilt by.
#[derive(Clone)]
pub enum Tilt {
    Constant(f64),
    Function(ExposureFn),
}

/// Exponential tilting of a family by a nonnegative exposure.
pub fn tilt(family: &LevyFamily, g: Tilt) -> TiltedLevy {
    TiltedLevy {
        family: family.clone(),
        constant: 0.0,
        functions: Vec::new(),
    }
    .tilt(g)
}

impl TiltedLevy {
    pub fn tilt(mut self, g: Tilt) -> TiltedLevy {
        match g {
            Tilt::Constant(c) => self.constant += c,
            Tilt::Function(f) => self.functions.push(f),
        }
        self
    }

    pub fn family(&self) -> &LevyFamily {
        &self.family
    }

    pub fn exposure(&self, y: f64) -> f64 {
        self.constant + self.functions.iter().map(|f| f(y)).sum::<f64>()
    }

    pub fn log_cumulant(&self, l: usize, y: f64) -> Result<f64> {
        self.family.log_cumulant(l, self.exposure(y), y)
    }

    /// A generalized gamma family tilted by a constant is again generalized
    /// gamma with `b` shifted; an untilted family is itself.
    pub fn as_family(&self) -> Option<LevyFamily> {
        if !self.functions.is_empty() {
            return None;
        }
        if self.constant == 0.0 {
            return Some(self.family.clone());
        }
        match &self.family {
            LevyFamily::GeneralizedGamma { alpha, b } => Some(LevyFamily::GeneralizedGamma {
                alpha: *alpha,
                b: b.shifted(self.constant),
            }),
            LevyFamily::Beta { .. } => None,
        }
    }
}

/// Law of a fixed jump `J` at a latent value, with density proportional to
/// `s^e e^{-g s} ρ(ds|y)`.
#[derive(Debug, Clone)]
pub struct JumpLaw {
    e: usize,
    g: f64,
    mean: f64,
    sampler: JumpSampler,
}

#[derive(Debug, Clone)]
enum JumpSampler {
    /// `Gamma(shape, 1) / rate`
    Gamma { shape: f64, rate: f64 },
    /// Beta(e, c) proposal thinned by `e^{-g s}`.
    BetaThinned { e: f64, c: f64, g: f64 },
    Table(Tabulated),
}

/// Builds the posterior law of a fixed jump for a cell of size `e`.
pub fn jump_posterior(family: &LevyFamily, e: usize, g: f64, y: f64, cfg: &QuadConfig) -> Result<JumpLaw> {
    if e < 1 {
        return Err(Error::domain("cell size must be at least 1"));
    }
    family.validate_on(y, y)?;
    let mean = family.jump_mean(e, g, y)?;
    let sampler = match family {
        LevyFamily::GeneralizedGamma { alpha, b } => JumpSampler::Gamma {
            shape: e as f64 - alpha,
            rate: b.eval(y) + g,
        },
        LevyFamily::Beta { c } => {
            let c = c.eval(y);
            let ef = e as f64;
            let acceptance = ln_hyp1f1(ef, ef + c, -g)?.exp();
            if acceptance >= 0.2 {
                JumpSampler::BetaThinned { e: ef, c, g }
            } else {
                let density = |s: f64, om: f64| {
                    ((ef - 1.0) * s.ln() - g * s + (c - 1.0) * om.ln()).exp()
                };
                JumpSampler::Table(Tabulated::unit_interval(density, cfg)?)
            }
        }
    };
    Ok(JumpLaw { e, g, mean, sampler })
}

impl JumpLaw {
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn cell_size(&self) -> usize {
        self.e
    }

    pub fn exposure(&self) -> f64 {
        self.g
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.sampler {
            JumpSampler::Gamma { shape, rate } => {
                GammaDist::new(*shape, 1.0).expect("validated shape").sample(rng) / rate
            }
            JumpSampler::BetaThinned { e, c, g } => {
                let beta = BetaDist::new(*e, *c).expect("validated beta parameters");
                loop {
                    let s = beta.sample(rng);
                    if rng.random::<f64>() < (-g * s).exp() {
                        return s;
                    }
                }
            }
            JumpSampler::Table(t) => t.sample(rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> QuadConfig {
        QuadConfig::default()
    }

    #[test]
    fn cumulant_examples() {
        let gg = LevyFamily::generalized_gamma(0.5, 1.0).unwrap();
        assert!(gg.log_cumulant(1, 0.0, 0.0).unwrap().abs() < 1e-14);
        let q = gg.cumulant_by_quadrature(1, 0.0, 0.0, &cfg()).unwrap();
        assert!((q - 1.0).abs() < 1e-10);

        let theta = 2.5;
        let beta = LevyFamily::beta(theta).unwrap();
        assert!(beta.log_cumulant(1, 0.0, 0.0).unwrap().abs() < 1e-14);
        let q = beta.cumulant_by_quadrature(1, 0.0, 0.0, &cfg()).unwrap();
        assert!((q - 1.0).abs() < 1e-10);

        for l in 1..5 {
            let c = 0.7;
            let b = LevyFamily::beta(c).unwrap();
            let expect = c * gamma(l as f64) * gamma(c) / gamma(l as f64 + c);
            assert!((b.log_cumulant(l, 0.0, 0.0).unwrap().exp() / expect - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cumulant_errors() {
        let gg = LevyFamily::generalized_gamma(0.5, 0.0).unwrap();
        assert!(matches!(gg.log_cumulant(1, 0.0, 0.0), Err(Error::Divergent(_))));
        assert!(gg.log_cumulant(0, 1.0, 0.0).is_err());
        assert!(gg.log_cumulant(1, 1.0, 0.0).is_ok());
    }

    #[test]
    fn family_invariants() {
        assert!(LevyFamily::generalized_gamma(0.5, 0.0).is_ok());
        assert!(LevyFamily::generalized_gamma(0.0, 0.0).is_err());
        assert!(LevyFamily::generalized_gamma(-1.0, 0.0).is_err());
        assert!(LevyFamily::generalized_gamma(1.0, 1.0).is_err());
        assert!(LevyFamily::generalized_gamma(0.5, -1.0).is_err());
        assert!(LevyFamily::beta(0.0).is_err());
        let lin = LevyFamily::GeneralizedGamma {
            alpha: 0.0,
            b: ParamFn::Linear { intercept: 1.0, slope: -1.0 },
        };
        assert!(lin.validate_on(0.0, 0.5).is_ok());
        assert!(lin.validate_on(0.0, 2.0).is_err());
    }

    #[test]
    fn gamma_process_cumulants() {
        let gg = LevyFamily::generalized_gamma(0.0, 1.0).unwrap();
        for l in 1..=5 {
            for &g in &[0.0, 0.5, 3.0] {
                let expect = ln_gamma(l as f64) - l as f64 * (1.0 + g as f64).ln();
                assert!((gg.log_cumulant(l, g, 0.0).unwrap() - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn laplace_exponent_examples() {
        let gg = LevyFamily::generalized_gamma(0.5, 0.0).unwrap();
        let atom = BaseMeasure::Atom { at: 0.3, mass: 1.0 };
        assert_eq!(laplace_exponent(&gg, &atom, |_| 0.0, &[], &cfg()).unwrap(), 0.0);
        let v = laplace_exponent(&gg, &atom, |_| 1.0, &[], &cfg()).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        let q = gg.inner_laplace_exponent_by_quadrature(1.0, 0.3, &cfg()).unwrap();
        assert!((q - 2.0).abs() < 1e-8, "{q}");
    }

    #[test]
    fn inner_laplace_closed_forms_match_quadrature() {
        let fams = [
            LevyFamily::generalized_gamma(0.5, 1.0).unwrap(),
            LevyFamily::generalized_gamma(0.0, 2.0).unwrap(),
            LevyFamily::generalized_gamma(-1.0, 0.5).unwrap(),
            LevyFamily::generalized_gamma(0.3, 0.0).unwrap(),
            LevyFamily::beta(0.5).unwrap(),
            LevyFamily::beta(3.0).unwrap(),
        ];
        for fam in &fams {
            for &f in &[0.01, 1.0, 7.0] {
                let a = fam.inner_laplace_exponent(f, 0.0, &cfg()).unwrap();
                let b = fam.inner_laplace_exponent_by_quadrature(f, 0.0, &cfg()).unwrap();
                assert!((a / b - 1.0).abs() < 1e-8, "{fam} f={f}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn stable_laplace_exponent_diverges_on_unbounded_support() {
        let gg = LevyFamily::generalized_gamma(0.5, 0.0).unwrap();
        let eta = BaseMeasure::lebesgue(0.0, f64::INFINITY);
        let r = laplace_exponent(&gg, &eta, |_| 1.0, &[], &cfg());
        assert!(matches!(r, Err(Error::Divergent(_))), "{r:?}");
    }

    #[test]
    fn tilting_shifts_b() {
        let gg = LevyFamily::generalized_gamma(0.25, 1.5).unwrap();
        let t = tilt(&gg, Tilt::Constant(0.75));
        let shifted = t.as_family().unwrap();
        assert_eq!(shifted, LevyFamily::generalized_gamma(0.25, 2.25).unwrap());
        for l in 1..=4 {
            let a = t.log_cumulant(l, 0.0).unwrap();
            let b = shifted.log_cumulant(l, 0.0, 0.0).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
        let identity = tilt(&gg, Tilt::Constant(0.0));
        assert_eq!(identity.as_family().unwrap(), gg);
    }

    #[test]
    fn tilting_composes() {
        let beta = LevyFamily::beta(2.0).unwrap();
        let g1: ExposureFn = Arc::new(|y: f64| 0.5 + y);
        let g2: ExposureFn = Arc::new(|y: f64| 2.0 * y);
        let twice = tilt(&beta, Tilt::Function(g1)).tilt(Tilt::Function(g2));
        let once = tilt(&beta, Tilt::Function(Arc::new(|y: f64| 0.5 + 3.0 * y)));
        for &y in &[0.0, 0.3, 2.0] {
            for l in 1..=4 {
                let a = twice.log_cumulant(l, y).unwrap();
                let b = once.log_cumulant(l, y).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jump_means() {
        let gg = LevyFamily::generalized_gamma(0.5, 1.5).unwrap();
        let law = jump_posterior(&gg, 2, 0.5, 0.0, &cfg()).unwrap();
        assert!((law.mean() - 0.75).abs() < 1e-12);
        let beta = LevyFamily::beta(2.0).unwrap();
        let law = jump_posterior(&beta, 3, 0.0, 0.0, &cfg()).unwrap();
        assert!((law.mean() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn jump_samples_match_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cases = [
            (LevyFamily::generalized_gamma(0.5, 1.0).unwrap(), 2, 1.0),
            (LevyFamily::beta(0.5).unwrap(), 1, 0.5),
            (LevyFamily::beta(2.0).unwrap(), 4, 10.0),
        ];
        for (fam, e, g) in cases {
            let law = jump_posterior(&fam, e, g, 0.0, &cfg()).unwrap();
            let n = 20_000;
            let xs: Vec<f64> = (0..n).map(|_| law.sample(&mut rng)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (v / n as f64).sqrt();
            assert!((m - law.mean()).abs() < 4.0 * se, "{fam}: {m} vs {}", law.mean());
        }
    }

    #[test]
    fn param_fn_parsing() {
        assert_eq!(ParamFn::parse("2.5").unwrap(), ParamFn::Constant(2.5));
        assert_eq!(
            ParamFn::parse("linear(1, -0.5)").unwrap(),
            ParamFn::Linear { intercept: 1.0, slope: -0.5 }
        );
        assert_eq!(
            ParamFn::parse(" exponential(2.0, 0.1) ").unwrap(),
            ParamFn::Exponential { scale: 2.0, rate: 0.1 }
        );
        assert!(ParamFn::parse("cubic(1)").is_err());
        assert!(ParamFn::parse("linear(1)").is_err());
    }

    #[test]
    fn tail_masses() {
        let gg = LevyFamily::generalized_gamma(-1.0, 2.0).unwrap();
        // ∫ e^{-2s} ds = 1/2
        assert!((gg.tail_mass(0.0, 0.0, &cfg()).unwrap() - 0.5).abs() < 1e-14);
        let q = gg.tail_mass(0.1, 0.0, &cfg()).unwrap();
        assert!((q - 0.5 * (-0.2f64).exp()).abs() < 1e-10);
        let stable = LevyFamily::generalized_gamma(0.5, 0.0).unwrap();
        let eps: f64 = 0.01;
        let expect = eps.powf(-0.5) / (0.5 * gamma(0.5));
        assert!((stable.tail_mass(eps, 0.0, &cfg()).unwrap() - expect).abs() < 1e-10);
        let beta = LevyFamily::beta(1.0).unwrap();
        // ∫_ε^1 s^{-1} ds = -ln ε
        assert!((beta.tail_mass(0.01, 0.0, &cfg()).unwrap() + 0.01f64.ln()).abs() < 1e-9);
    }
}
