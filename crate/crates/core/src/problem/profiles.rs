//! Load/PV profile ingestion for the feeder scenario.
//!
//! CSV layout: header `t,load_1..load_m,pv_1..pv_n`, one row per slot,
//! comma-separated, UTF-8, decimal point. Values are interpolated linearly
//! in t and clamped at the ends of the recorded range.

use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

/// Time-indexed load and PV capability profiles.
#[derive(Clone, Debug)]
pub struct Profiles<R: Scalar> {
    times: Vec<R>,
    loads: Vec<DVector<R>>,
    pv: Vec<DVector<R>>,
}

impl<R: Scalar> Profiles<R> {
    pub fn new(times: Vec<R>, loads: Vec<DVector<R>>, pv: Vec<DVector<R>>) -> Result<Self> {
        if times.is_empty() || times.len() != loads.len() || times.len() != pv.len() {
            return Err(Error::Profile("profile columns have mismatched row counts".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Profile("profile times must be strictly increasing".into()));
        }
        Ok(Self { times, loads, pv })
    }

    pub fn rows(&self) -> usize {
        self.times.len()
    }

    pub fn buses(&self) -> usize {
        self.loads[0].len()
    }

    pub fn inverters(&self) -> usize {
        self.pv[0].len()
    }

    /// Linear interpolation of (loads, pv) at time `t`, clamped to the
    /// recorded range so the profiles stay Lipschitz on all of [0, S].
    pub fn interp(&self, t: R) -> (DVector<R>, DVector<R>) {
        let n = self.times.len();
        if t <= self.times[0] {
            return (self.loads[0].clone(), self.pv[0].clone());
        }
        if t >= self.times[n - 1] {
            return (self.loads[n - 1].clone(), self.pv[n - 1].clone());
        }
        let mut hi = self.times.partition_point(|&s| s < t);
        hi = hi.clamp(1, n - 1);
        let lo = hi - 1;
        let span = self.times[hi] - self.times[lo];
        let w = (t - self.times[lo]) / span;
        let loads = &self.loads[lo] * (R::one() - w) + &self.loads[hi] * w;
        let pv = &self.pv[lo] * (R::one() - w) + &self.pv[hi] * w;
        (loads, pv)
    }

    /// Reads profiles from CSV, validating the header shape.
    pub fn from_csv(path: &Path, buses: usize, inverters: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Profile(format!("{}: {e}", path.display())))?;

        let headers = reader
            .headers()
            .map_err(|e| Error::Profile(e.to_string()))?
            .clone();
        let mut expected = vec!["t".to_string()];
        expected.extend((1..=buses).map(|j| format!("load_{j}")));
        expected.extend((1..=inverters).map(|i| format!("pv_{i}")));
        let got: Vec<String> = headers.iter().map(|s| s.to_string()).collect();
        if got != expected {
            return Err(Error::Profile(format!(
                "unexpected CSV header: got [{}], expected [{}]",
                got.join(","),
                expected.join(",")
            )));
        }

        let mut times = Vec::new();
        let mut loads = Vec::new();
        let mut pv = Vec::new();
        for (row_idx, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Profile(e.to_string()))?;
            let parse = |field: usize| -> Result<R> {
                let raw = record.get(field).ok_or_else(|| {
                    Error::Profile(format!("row {}: missing field {}", row_idx + 2, field))
                })?;
                let v: f64 = raw.parse().map_err(|_| {
                    Error::Profile(format!("row {}: bad number {raw:?}", row_idx + 2))
                })?;
                if !v.is_finite() {
                    return Err(Error::Profile(format!(
                        "row {}: non-finite value",
                        row_idx + 2
                    )));
                }
                Ok(real::<R>(v))
            };
            times.push(parse(0)?);
            let mut load_row = DVector::zeros(buses);
            for j in 0..buses {
                load_row[j] = parse(1 + j)?;
            }
            loads.push(load_row);
            let mut pv_row = DVector::zeros(inverters);
            for i in 0..inverters {
                pv_row[i] = parse(1 + buses + i)?;
            }
            pv.push(pv_row);
        }
        Self::new(times, loads, pv)
    }

    /// Writes the profiles in the canonical CSV layout.
    pub fn to_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.buses()).map(|j| format!("load_{j}")));
        header.extend((1..=self.inverters()).map(|i| format!("pv_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.rows() {
            let mut row = vec![format!("{}", crate::scalar::as_f64(self.times[k]))];
            row.extend(self.loads[k].iter().map(|v| format!("{}", crate::scalar::as_f64(*v))));
            row.extend(self.pv[k].iter().map(|v| format!("{}", crate::scalar::as_f64(*v))));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Deterministic synthetic day profiles: sinusoidal loads around a base
    /// level and a bell-shaped PV capability, phase-jittered per unit from
    /// the seed.
    pub fn synthetic(buses: usize, inverters: usize, rows: usize, horizon: R, seed: u64) -> Self {
        assert!(rows >= 2, "need at least two profile rows");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let load_base: Vec<f64> = (0..buses).map(|_| 0.6 + 0.5 * rng.gen::<f64>()).collect();
        let load_phase: Vec<f64> = (0..buses)
            .map(|_| 2.0 * std::f64::consts::PI * rng.gen::<f64>())
            .collect();
        let pv_cap: Vec<f64> = (0..inverters).map(|_| 1.0 + 0.8 * rng.gen::<f64>()).collect();
        let pv_phase: Vec<f64> = (0..inverters).map(|_| 0.15 * (rng.gen::<f64>() - 0.5)).collect();

        let mut times = Vec::with_capacity(rows);
        let mut loads = Vec::with_capacity(rows);
        let mut pv = Vec::with_capacity(rows);
        let s = crate::scalar::as_f64(horizon);
        for k in 1..=rows {
            let frac = k as f64 / rows as f64;
            let t = frac * s;
            times.push(real::<R>(t));
            loads.push(DVector::from_fn(buses, |j, _| {
                let v = load_base[j]
                    * (1.0 + 0.35 * (2.0 * std::f64::consts::PI * (1.3 * frac) + load_phase[j]).sin());
                real::<R>(v.max(0.05))
            }));
            pv.push(DVector::from_fn(inverters, |i, _| {
                let day = (std::f64::consts::PI * (frac + pv_phase[i]).clamp(0.0, 1.0)).sin();
                real::<R>((pv_cap[i] * day * day).max(0.0))
            }));
        }
        Self::new(times, loads, pv).expect("synthetic profiles are well formed")
    }

    pub fn max_pv(&self) -> R {
        let mut worst = R::zero();
        for row in &self.pv {
            for v in row.iter() {
                worst = worst.max(*v);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    #[test]
    fn synthetic_round_trips_through_csv() {
        let p = Profiles::<f64>::synthetic(3, 2, 16, 1.0, 9);
        let mut buf = Vec::new();
        p.to_csv(&mut buf).unwrap();
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(&buf).unwrap();
        let q = Profiles::<f64>::from_csv(file.path(), 3, 2).unwrap();
        assert_eq!(q.rows(), p.rows());
        assert_relative_eq!(q.loads[5][1], p.loads[5][1]);
        assert_relative_eq!(q.pv[10][0], p.pv[10][0]);
    }

    #[test]
    fn interpolation_is_linear_and_clamped() {
        let p = Profiles::<f64>::new(
            vec![1.0, 2.0],
            vec![nalgebra::dvector![0.0], nalgebra::dvector![2.0]],
            vec![nalgebra::dvector![1.0], nalgebra::dvector![3.0]],
        )
        .unwrap();
        let (l, v) = p.interp(1.5);
        assert_relative_eq!(l[0], 1.0);
        assert_relative_eq!(v[0], 2.0);
        let (l, _) = p.interp(0.0);
        assert_relative_eq!(l[0], 0.0);
        let (l, _) = p.interp(5.0);
        assert_relative_eq!(l[0], 2.0);
    }

    #[test]
    fn bad_header_rejected() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "t,load_1,pv_1").unwrap();
        writeln!(file, "1.0,0.5,0.7").unwrap();
        assert!(Profiles::<f64>::from_csv(file.path(), 2, 1).is_err());
    }
}
