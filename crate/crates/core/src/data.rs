//! Right-censored survival records: CSV ingest and export, validation and a
//! synthetic generator drawing from the stable prior predictive.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadConfig};

/// One observation: the time `min(T, D)` and whether it is an exact event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub time: f64,
    pub event: bool,
}

impl SurvivalRecord {
    /// Censoring time: infinite for exact events.
    pub fn censor_time(&self) -> f64 {
        if self.event {
            f64::INFINITY
        } else {
            self.time
        }
    }
}

/// Validated records in input order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    records: Vec<SurvivalRecord>,
    events: Vec<f64>,
}

/// Non-fatal findings from loading.
#[derive(Debug, Clone, PartialEq)]
pub enum DataWarning {
    /// No exact events: the posterior is the tilted prior.
    NoEvents { records: usize },
}

impl fmt::Display for DataWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataWarning::NoEvents { records } => write!(
                f,
                "all {records} records are censored; the posterior reduces to the tilted prior"
            ),
        }
    }
}

impl Dataset {
    pub fn new(records: Vec<SurvivalRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            check_time(r.time, i + 1)?;
        }
        let events = records.iter().filter(|r| r.event).map(|r| r.time).collect();
        Ok(Dataset { records, events })
    }

    /// Convenience for `(time, event)` pairs.
    pub fn from_pairs(pairs: &[(f64, bool)]) -> Result<Self> {
        Dataset::new(
            pairs
                .iter()
                .map(|&(time, event)| SurvivalRecord { time, event })
                .collect(),
        )
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    /// Number of exact events.
    pub fn n(&self) -> usize {
        self.events.len()
    }

    /// Number of records.
    pub fn m(&self) -> usize {
        self.records.len()
    }

    /// Event times in input order.
    pub fn event_times(&self) -> &[f64] {
        &self.events
    }

    pub fn concat(&self, other: &Dataset) -> Dataset {
        let mut records = self.records.clone();
        records.extend_from_slice(&other.records);
        Dataset::new(records).expect("both halves already validated")
    }

    pub fn warnings(&self) -> Vec<DataWarning> {
        if self.n() == 0 && self.m() > 0 {
            vec![DataWarning::NoEvents { records: self.m() }]
        } else {
            Vec::new()
        }
    }

    /// SHA-256 over the exact bits of every record, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(r.time.to_bits().to_le_bytes());
            h.update([r.event as u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time", "event"])?;
        for r in &self.records {
            // `Display` for f64 prints the shortest string that parses back exactly
            out.write_record([r.time.to_string(), (r.event as u8).to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn check_time(t: f64, row: usize) -> Result<()> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::Parse {
            row,
            column: "time".into(),
            msg: format!("time must be positive and finite, got {t}"),
        });
    }
    Ok(())
}

/// Parses CSV with header `time,event`. Rows are numbered from 1 after the
/// header.
pub fn read_csv<R: Read>(reader: R) -> Result<(Dataset, Vec<DataWarning>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["time", "event"] {
        if names.iter().all(|h| h.is_empty()) {
            return Err(Error::EmptyFile);
        }
        return Err(Error::Parse {
            row: 0,
            column: "header".into(),
            msg: format!("expected header `time,event`, found `{}`", names.join(",")),
        });
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let field = |idx: usize, name: &str| -> Result<String> {
            match row.get(idx) {
                Some(v) if !v.is_empty() => Ok(v.to_string()),
                _ => Err(Error::Parse {
                    row: row_no,
                    column: name.into(),
                    msg: "missing value".into(),
                }),
            }
        };
        let time_text = field(0, "time")?;
        let time: f64 = time_text.parse().map_err(|_| Error::Parse {
            row: row_no,
            column: "time".into(),
            msg: format!("`{time_text}` is not a number"),
        })?;
        check_time(time, row_no)?;
        let event = match field(1, "event")?.as_str() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Parse {
                    row: row_no,
                    column: "event".into(),
                    msg: format!("event must be 0 or 1, got `{other}`"),
                })
            }
        };
        if row.len() > 2 {
            return Err(Error::Parse {
                row: row_no,
                column: "event".into(),
                msg: format!("expected 2 fields, found {}", row.len()),
            });
        }
        records.push(SurvivalRecord { time, event });
    }
    if records.is_empty() {
        return Err(Error::EmptyFile);
    }
    let ds = Dataset::new(records)?;
    let warnings = ds.warnings();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((ds, warnings))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<(Dataset, Vec<DataWarning>)> {
    read_csv(std::fs::File::open(path)?)
}

/// Survival function of the stable / Dykstra–Laud prior predictive,
/// `exp(-t^{α+1} / (α(α+1)))`.
fn stable_survival(alpha: f64, t: f64) -> f64 {
    (-t.powf(alpha + 1.0) / (alpha * (alpha + 1.0))).exp()
}

/// Width `c` of uniform censoring `U(0, c)` such that `P(D < T) = rate`,
/// using `P(D < T) = (1/c) ∫₀ᶜ S(t) dt`.
fn censoring_width(alpha: f64, rate: f64) -> Result<f64> {
    let cfg = QuadConfig::default();
    let p = |c: f64| -> Result<f64> {
        Ok(integrate(|t| stable_survival(alpha, t), 0.0, c, &[], &cfg)? / c)
    };
    let (mut lo, mut hi) = (1e-12, 1.0);
    while p(hi)? > rate {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p(mid)? > rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Draws `size` records from the stable prior predictive with independent
/// uniform right censoring tuned to `censor_rate`.
pub fn synth_weibull(alpha: f64, size: usize, censor_rate: f64, seed: u64) -> Result<Dataset> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("synthetic generator needs 0 < α < 1, got {alpha}")));
    }
    if size == 0 {
        return Err(Error::domain("synthetic dataset needs at least one record"));
    }
    if !(0.0..1.0).contains(&censor_rate) {
        return Err(Error::domain(format!("censor rate must lie in [0, 1), got {censor_rate}")));
    }
    let width = if censor_rate > 0.0 {
        Some(censoring_width(alpha, censor_rate)?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = alpha * (alpha + 1.0);
    let records = (0..size)
        .map(|_| {
            let e: f64 = Exp1.sample(&mut rng);
            let t = (scale * e).powf(1.0 / (alpha + 1.0));
            match width {
                Some(c) => {
                    let d = c * (1.0 - rng.random::<f64>());
                    if d < t {
                        SurvivalRecord { time: d, event: false }
                    } else {
                        SurvivalRecord { time: t, event: true }
                    }
                }
                None => SurvivalRecord { time: t, event: true },
            }
        })
        .collect();
    Dataset::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<(Dataset, Vec<DataWarning>)> {
        read_csv(text.as_bytes())
    }

    #[test]
    fn load_examples() {
        let (d, w) = parse("time,event\n1.0,1\n2.0,0\n").unwrap();
        assert_eq!((d.n(), d.m()), (1, 2));
        assert_eq!(d.event_times(), &[1.0]);
        assert!(w.is_empty());

        let (d, w) = parse("time,event\n1.0,0\n2.0,0\n").unwrap();
        assert_eq!((d.n(), d.m()), (0, 2));
        assert_eq!(w, vec![DataWarning::NoEvents { records: 2 }]);

        match parse("time,event\n-1.0,1\n") {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "time");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn load_rejects_bad_rows() {
        assert!(matches!(parse("time,event\n1,1\nabc,0\n"), Err(Error::Parse { row: 2, .. })));
        assert!(matches!(parse("time,event\n1,2\n"), Err(Error::Parse { row: 1, .. })));
        assert!(matches!(parse("time,event\n1,\n"), Err(Error::Parse { row: 1, .. })));
        assert!(matches!(parse("time,event\n0,1\n"), Err(Error::Parse { row: 1, .. })));
        assert!(matches!(parse("time,event\n"), Err(Error::EmptyFile)));
        assert!(matches!(parse(""), Err(Error::EmptyFile)));
        assert!(matches!(parse("t,e\n1,1\n"), Err(Error::Parse { row: 0, .. })));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let d = Dataset::from_pairs(&[(0.1, true), (1.0 / 3.0, false), (2.5e-7, true), (12345.678, false)])
            .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let (back, _) = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
        for (a, b) in back.records().iter().zip(d.records()) {
            assert_eq!(a.time.to_bits(), b.time.to_bits());
        }
    }

    #[test]
    fn synthetic_data_is_deterministic() {
        let a = synth_weibull(0.5, 200, 0.3, 11).unwrap();
        let b = synth_weibull(0.5, 200, 0.3, 11).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ba).unwrap();
        b.write_csv(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let c = synth_weibull(0.5, 50, 0.0, 1).unwrap();
        assert_eq!(c.n(), c.m());
    }

    #[test]
    fn censoring_rate_is_close_to_target() {
        let d = synth_weibull(0.4, 20_000, 0.3, 5).unwrap();
        let rate = 1.0 - d.n() as f64 / d.m() as f64;
        assert!((rate - 0.3).abs() < 0.02, "{rate}");
    }

    #[test]
    fn uncensored_draws_pass_kolmogorov_smirnov() {
        let alpha = 0.5;
        let d = synth_weibull(alpha, 10_000, 0.0, 2024).unwrap();
        let mut t: Vec<f64> = d.event_times().to_vec();
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = t.len() as f64;
        let stat = t
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = 1.0 - (-x.powf(1.5) / 0.75).exp();
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        // asymptotic 99% quantile of the KS statistic
        assert!(stat < 1.628 / n.sqrt(), "{stat}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = Dataset::from_pairs(&[(1.0, true)]).unwrap();
        let b = Dataset::from_pairs(&[(1.0, false)]).unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), a.clone().content_hash());
    }
}
