//! Set partitions of `{0, …, n-1}`, exchangeable partition probability
//! functions, and Chinese-restaurant prediction rules derived from them.
//!
//! Partitions are kept in canonical order-of-appearance form: every cell is
//! sorted and cells are ordered by their smallest element. Internally items
//! are 0-based; the JSON form uses 1-based labels.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Default limit on `n` for exhaustive enumeration. Bell(10) = 115 975.
pub const DEFAULT_ENUMERATION_CAP: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    cells: Vec<Vec<usize>>,
    n: usize,
}

impl Partition {
    /// The partition of the empty set.
    pub fn empty() -> Self {
        Partition {
            cells: Vec::new(),
            n: 0,
        }
    }

    /// Builds a partition from per-item labels; equal labels share a cell.
    /// Label values are arbitrary, the result is canonical.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map: Vec<(usize, usize)> = Vec::new();
        let mut cells: Vec<Vec<usize>> = Vec::new();
        for (item, &label) in labels.iter().enumerate() {
            match map.iter().find(|(l, _)| *l == label) {
                Some(&(_, cell)) => cells[cell].push(item),
                None => {
                    map.push((label, cells.len()));
                    cells.push(vec![item]);
                }
            }
        }
        Partition {
            cells,
            n: labels.len(),
        }
    }

    /// Builds a partition from explicit cells of 0-based items and checks
    /// that they partition `{0, …, n-1}`.
    pub fn from_cells(cells: Vec<Vec<usize>>) -> Result<Self> {
        let n: usize = cells.iter().map(Vec::len).sum();
        let mut labels = vec![usize::MAX; n];
        for (j, cell) in cells.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::domain("partition cells must be nonempty"));
            }
            for &i in cell {
                if i >= n || labels[i] != usize::MAX {
                    return Err(Error::domain(format!(
                        "cells do not partition {{0..{n}}}: item {i} repeated or out of range"
                    )));
                }
                labels[i] = j;
            }
        }
        Ok(Self::from_labels(&labels))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    pub fn cell(&self, j: usize) -> &[usize] {
        &self.cells[j]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.cells.iter().map(Vec::len).collect()
    }

    /// Cell index of every item.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.n];
        for (j, cell) in self.cells.iter().enumerate() {
            for &i in cell {
                labels[i] = j;
            }
        }
        labels
    }

    /// Seats item `n` at an existing cell or at a new one.
    pub fn grow(&self, target: Seat) -> Result<Partition> {
        let mut next = self.clone();
        match target {
            Seat::New => next.cells.push(vec![self.n]),
            Seat::Existing(j) => {
                let cells = self.cells.len();
                next.cells
                    .get_mut(j)
                    .ok_or(Error::OutOfRange { index: j, cells })?
                    .push(self.n);
            }
        }
        next.n += 1;
        Ok(next)
    }

    /// Canonical nested-array form with 1-based labels.
    pub fn to_one_based(&self) -> Vec<Vec<usize>> {
        self.cells
            .iter()
            .map(|c| c.iter().map(|i| i + 1).collect())
            .collect()
    }
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (j, cell) in self.cells.iter().enumerate() {
            if j > 0 {
                write!(f, ",")?;
            }
            write!(f, "{{")?;
            for (k, i) in cell.iter().enumerate() {
                if k > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{}", i + 1)?;
            }
            write!(f, "}}")?;
        }
        write!(f, "}}")
    }
}

impl Serialize for Partition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Partition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw: Vec<Vec<usize>> = Vec::deserialize(d)?;
        let mut cells = Vec::with_capacity(raw.len());
        for cell in raw {
            let mut c = Vec::with_capacity(cell.len());
            for i in cell {
                if i == 0 {
                    return Err(serde::de::Error::custom("partition labels are 1-based"));
                }
                c.push(i - 1);
            }
            cells.push(c);
        }
        Partition::from_cells(cells).map_err(serde::de::Error::custom)
    }
}

/// Where the next item goes when a partition is grown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seat {
    New,
    Existing(usize),
}

/// Iterator over all set partitions of `{0, …, n-1}` in canonical form,
/// driven by restricted growth strings.
pub struct Partitions {
    rgs: Vec<usize>,
    maxes: Vec<usize>,
    done: bool,
}

impl Iterator for Partitions {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.done {
            return None;
        }
        let out = Partition::from_labels(&self.rgs);
        // advance: rightmost position that can be incremented
        let n = self.rgs.len();
        let mut i = n;
        loop {
            if i <= 1 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.rgs[i] <= self.maxes[i - 1] {
                self.rgs[i] += 1;
                let m = self.maxes[i - 1].max(self.rgs[i]);
                self.maxes[i] = m;
                for k in i + 1..n {
                    self.rgs[k] = 0;
                    self.maxes[k] = m;
                }
                break;
            }
        }
        Some(out)
    }
}

/// Enumerates every partition of `{0, …, n-1}` with the default cap.
pub fn enumerate_partitions(n: usize) -> Result<Partitions> {
    enumerate_partitions_capped(n, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_partitions_capped(n: usize, cap: usize) -> Result<Partitions> {
    if n == 0 {
        return Err(Error::domain("enumeration requires n >= 1"));
    }
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    Ok(Partitions {
        rgs: vec![0; n],
        maxes: vec![0; n],
        done: false,
    })
}

/// An exchangeable partition probability function, evaluated in log space
/// from cell sizes alone.
pub trait Eppf {
    fn log_prob(&self, sizes: &[usize]) -> f64;
}

impl<F: Fn(&[usize]) -> f64> Eppf for F {
    fn log_prob(&self, sizes: &[usize]) -> f64 {
        self(sizes)
    }
}

/// Ewens sampling formula with total mass `theta`.
#[derive(Debug, Clone, Copy)]
pub struct Ewens {
    theta: f64,
}

impl Ewens {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::domain(format!("ESF mass must be positive, got {theta}")));
        }
        Ok(Ewens { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

impl Eppf for Ewens {
    fn log_prob(&self, sizes: &[usize]) -> f64 {
        let n: usize = sizes.iter().sum();
        let theta = self.theta;
        sizes.len() as f64 * theta.ln() + ln_gamma(theta) - ln_gamma(theta + n as f64)
            + sizes.iter().map(|&e| ln_gamma(e as f64)).sum::<f64>()
    }
}

/// Log probability of `p` under the Ewens sampling formula.
pub fn esf_log_prob(p: &Partition, theta: f64) -> Result<f64> {
    Ok(Ewens::new(theta)?.log_prob(&p.sizes()))
}

/// Prediction rule for item `n + 1` given `p`: probability of opening a new
/// cell and of joining each existing cell.
pub fn crp_predictives<E: Eppf + ?Sized>(eppf: &E, p: &Partition) -> Result<(f64, Vec<f64>)> {
    let mut sizes = p.sizes();
    let base = eppf.log_prob(&sizes);
    if base == f64::NEG_INFINITY || base.is_nan() {
        return Err(Error::UndefinedConditional);
    }
    sizes.push(1);
    let q0 = (eppf.log_prob(&sizes) - base).exp();
    sizes.pop();
    let mut q = Vec::with_capacity(sizes.len());
    for j in 0..sizes.len() {
        sizes[j] += 1;
        q.push((eppf.log_prob(&sizes) - base).exp());
        sizes[j] -= 1;
    }
    Ok((q0, q))
}
