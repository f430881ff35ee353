//! Smoothing kernels `k(x|y)`, their cumulatives `K(t|y) = ∫₀ᵗ k(x|y) dx`
//! and the censoring exposure `g(y) = Σᵢ K(tᵢ|y)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    /// `1{y ≤ x}`: monotone hazards.
    DykstraLaud,
    /// `e^{-x y}` for `y ≥ 0`.
    Exponential,
    /// `1{|x - y| ≤ bandwidth}` with the window centre as latent value.
    Rectangular { bandwidth: f64 },
}

impl Kernel {
    pub fn validate(&self) -> Result<()> {
        if let Kernel::Rectangular { bandwidth } = self {
            if !(*bandwidth > 0.0 && bandwidth.is_finite()) {
                return Err(Error::domain(format!(
                    "rectangular kernel needs a positive bandwidth, got {bandwidth}"
                )));
            }
        }
        Ok(())
    }

    /// Checks that the latent support `[lo, hi]` suits the kernel.
    pub fn check_support(&self, lo: f64, _hi: f64) -> Result<()> {
        if matches!(self, Kernel::Exponential) && lo < 0.0 {
            return Err(Error::domain(
                "exponential kernel needs latent values y ≥ 0",
            ));
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::DykstraLaud => "dykstra-laud",
            Kernel::Exponential => "exponential",
            Kernel::Rectangular { .. } => "rectangular",
        }
    }

    /// `k(x|y)`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            Kernel::DykstraLaud => {
                if y <= x {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Exponential => (-x * y).exp(),
            Kernel::Rectangular { bandwidth } => {
                if (x - y).abs() <= bandwidth {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `K(t|y) = ∫₀ᵗ k(x|y) dx`.
    pub fn cumulative(&self, t: f64, y: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match *self {
            Kernel::DykstraLaud => {
                if y < 0.0 {
                    t
                } else {
                    (t - y).max(0.0)
                }
            }
            Kernel::Exponential => {
                if t.is_infinite() {
                    if y > 0.0 {
                        1.0 / y
                    } else {
                        f64::INFINITY
                    }
                } else if y == 0.0 {
                    t
                } else {
                    -(-y * t).exp_m1() / y
                }
            }
            Kernel::Rectangular { bandwidth } => {
                let lo = (y - bandwidth).max(0.0);
                let hi = t.min(y + bandwidth);
                (hi - lo).max(0.0)
            }
        }
    }

    /// Increment `K(hi|y) - K(lo|y)` of a risk interval.
    pub fn interval(&self, lo: f64, hi: f64, y: f64) -> f64 {
        if lo <= 0.0 {
            self.cumulative(hi, y)
        } else {
            (self.cumulative(hi, y) - self.cumulative(lo, y)).max(0.0)
        }
    }

    /// Latent values where `y ↦ k(x|y)` is not smooth.
    pub fn eval_breakpoints(&self, x: f64) -> Vec<f64> {
        match *self {
            Kernel::DykstraLaud => vec![x],
            Kernel::Exponential => Vec::new(),
            Kernel::Rectangular { bandwidth } => vec![x - bandwidth, x + bandwidth],
        }
    }

    /// Latent values where `y ↦ K(t|y)` is not smooth.
    pub fn cumulative_breakpoints(&self, t: f64) -> Vec<f64> {
        match *self {
            Kernel::DykstraLaud => vec![0.0, t],
            Kernel::Exponential => Vec::new(),
            Kernel::Rectangular { bandwidth } => {
                vec![-bandwidth, bandwidth, t - bandwidth, t + bandwidth]
            }
        }
    }

    /// Observation times where `x ↦ k(x|y)` jumps.
    pub fn time_breakpoints(&self, y: f64) -> Vec<f64> {
        match *self {
            Kernel::DykstraLaud => vec![y],
            Kernel::Exponential => Vec::new(),
            Kernel::Rectangular { bandwidth } => vec![y - bandwidth, y + bandwidth],
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Rectangular { bandwidth } => write!(f, "rectangular(σ={bandwidth})"),
            k => f.write_str(k.name()),
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    /// Accepts `dykstra-laud`, `exponential`, or `rectangular` (whose
    /// bandwidth must then be set separately; it defaults to NaN and fails
    /// validation).
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dykstra-laud" => Ok(Kernel::DykstraLaud),
            "exponential" => Ok(Kernel::Exponential),
            "rectangular" => Ok(Kernel::Rectangular { bandwidth: f64::NAN }),
            other => Err(Error::domain(format!(
                "unknown kernel `{other}` (expected dykstra-laud, exponential or rectangular)"
            ))),
        }
    }
}

/// The exposure `g(y) = Σᵢ [K(hiᵢ|y) - K(loᵢ|y)]` accumulated over risk
/// intervals, with a record of where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    kernel: Kernel,
    intervals: Vec<(f64, f64)>,
    dataset_hash: String,
}

impl Exposure {
    /// Right-censored records contribute the interval `(0, time]`.
    pub fn from_data(kernel: Kernel, data: &Dataset) -> Exposure {
        Exposure {
            kernel,
            intervals: data.records().iter().map(|r| (0.0, r.time)).collect(),
            dataset_hash: data.content_hash(),
        }
    }

    /// Left-truncated risk intervals `(entry, exit]`.
    pub fn from_intervals(kernel: Kernel, intervals: Vec<(f64, f64)>) -> Result<Exposure> {
        for &(lo, hi) in &intervals {
            if !(lo >= 0.0 && hi > lo) {
                return Err(Error::domain(format!("risk interval ({lo}, {hi}] is empty")));
            }
        }
        Ok(Exposure {
            kernel,
            intervals,
            dataset_hash: String::new(),
        })
    }

    pub fn zero(kernel: Kernel) -> Exposure {
        Exposure {
            kernel,
            intervals: Vec::new(),
            dataset_hash: Dataset::default().content_hash(),
        }
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn dataset_hash(&self) -> &str {
        &self.dataset_hash
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_zero(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.intervals
            .iter()
            .map(|&(lo, hi)| self.kernel.interval(lo, hi, y))
            .sum()
    }

    /// Latent values where `g` is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .intervals
            .iter()
            .flat_map(|&(lo, hi)| {
                let mut b = self.kernel.cumulative_breakpoints(hi);
                if lo > 0.0 {
                    b.extend(self.kernel.cumulative_breakpoints(lo));
                }
                b
            })
            .collect();
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup();
        out
    }
}

/// Prior predictive hazard and survival of the stable process with the
/// Dykstra–Laud kernel and Lebesgue base measure on `[0, ∞)`:
/// `t^α / α` and `exp(-t^{α+1} / (α(α+1)))`.
pub fn prior_predictive_stable_dl(alpha: f64, t: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("stable index must lie in (0, 1), got {alpha}")));
    }
    if !(t >= 0.0) {
        return Err(Error::domain(format!("time must be nonnegative, got {t}")));
    }
    let hazard = t.powf(alpha) / alpha;
    let survival = (-t.powf(alpha + 1.0) / (alpha * (alpha + 1.0))).exp();
    Ok((hazard, survival))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, QuadConfig};

    const KERNELS: [Kernel; 3] = [
        Kernel::DykstraLaud,
        Kernel::Exponential,
        Kernel::Rectangular { bandwidth: 0.7 },
    ];

    #[test]
    fn kernel_examples() {
        assert_eq!(Kernel::DykstraLaud.eval(2.0, 1.0), 1.0);
        assert_eq!(Kernel::Exponential.eval(0.0, 3.7), 1.0);
        assert_eq!(Kernel::Rectangular { bandwidth: 1.0 }.eval(2.0, 0.0), 0.0);
        assert_eq!(Kernel::DykstraLaud.cumulative(3.0, 1.0), 2.0);
        assert_eq!(Kernel::Exponential.cumulative(f64::INFINITY, 2.0), 0.5);
        assert!((Kernel::Exponential.cumulative(1e6, 2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cumulatives_match_quadrature() {
        let cfg = QuadConfig::default();
        for k in KERNELS {
            for &t in &[0.2, 1.0, 3.5] {
                for &y in &[0.0, 0.1, 0.9, 2.0, 4.0] {
                    let q = integrate(|x| k.eval(x, y), 0.0, t, &k.time_breakpoints(y), &cfg).unwrap();
                    let c = k.cumulative(t, y);
                    assert!((q - c).abs() <= 1e-8 * c.max(1e-300) + 1e-14, "{k} t={t} y={y}: {q} vs {c}");
                }
            }
        }
    }

    #[test]
    fn exposure_examples() {
        let empty = Exposure::from_data(Kernel::DykstraLaud, &Dataset::default());
        assert_eq!(empty.eval(0.3), 0.0);
        let one = Dataset::from_pairs(&[(1.0, true)]).unwrap();
        let g = Exposure::from_data(Kernel::DykstraLaud, &one);
        for &y in &[0.0, 0.25, 0.5, 1.0, 1.5] {
            let expect = if y <= 1.0 { 1.0 - y } else { 0.0 };
            assert_eq!(g.eval(y), expect);
        }
    }

    #[test]
    fn exposure_is_additive() {
        let a = Dataset::from_pairs(&[(1.0, true), (2.5, false)]).unwrap();
        let b = Dataset::from_pairs(&[(0.3, false), (4.0, true)]).unwrap();
        for k in KERNELS {
            let ga = Exposure::from_data(k, &a);
            let gb = Exposure::from_data(k, &b);
            let gab = Exposure::from_data(k, &a.concat(&b));
            for i in 0..50 {
                let y = i as f64 * 0.1;
                assert!((gab.eval(y) - ga.eval(y) - gb.eval(y)).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn stable_prior_predictive() {
        let (h, s) = prior_predictive_stable_dl(0.5, 1.0).unwrap();
        assert!((h - 2.0).abs() < 1e-15);
        assert!((s - (-4.0f64 / 3.0).exp()).abs() < 1e-15);
        assert_eq!(prior_predictive_stable_dl(0.3, 0.0).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn stable_marginal_hazard_by_quadrature() {
        // ∫ k(t|y) K(t|y)^{α-1} dy over y ≥ 0
        let cfg = QuadConfig::default();
        let k = Kernel::DykstraLaud;
        for &alpha in &[0.3, 0.5, 0.8] {
            for &t in &[0.5, 1.0, 2.0] {
                let q = integrate(
                    |y| {
                        let kt = k.eval(t, y);
                        if kt == 0.0 {
                            0.0
                        } else {
                            kt * k.cumulative(t, y).powf(alpha - 1.0)
                        }
                    },
                    0.0,
                    f64::INFINITY,
                    &[t],
                    &cfg,
                )
                .unwrap();
                let (h, _) = prior_predictive_stable_dl(alpha, t).unwrap();
                assert!((q / h - 1.0).abs() < 1e-4, "α={alpha} t={t}: {q} vs {h}");
            }
        }
    }

    #[test]
    fn kernel_names_parse() {
        for k in KERNELS {
            let parsed: Kernel = k.name().parse().unwrap();
            assert_eq!(parsed.name(), k.name());
        }
        assert!("gaussian".parse::<Kernel>().is_err());
        assert!(Kernel::Rectangular { bandwidth: 0.0 }.validate().is_err());
    }
}
