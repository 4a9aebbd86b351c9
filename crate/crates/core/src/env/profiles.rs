//! Load and renewable time series.
//!
//! CSV layout: a `step` column, then `load<i>_p`, `load<i>_q` for every load
//! and `ren<j>_pmax` for every renewable unit (case order).

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::GridCase;

pub const STEPS_PER_DAY: usize = 288;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    /// `load_p[load][step]` in MW.
    pub load_p: Vec<Vec<f64>>,
    pub load_q: Vec<Vec<f64>>,
    /// `renewable_p_max[unit][step]` in MW, renewable units in case order.
    pub renewable_p_max: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.load_p
            .first()
            .or(self.renewable_p_max.first())
            .map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_load(&self, step: usize) -> f64 {
        self.load_p.iter().map(|l| l[step]).sum()
    }

    pub fn total_renewable(&self, step: usize) -> f64 {
        self.renewable_p_max.iter().map(|r| r[step]).sum()
    }

    /// Check shape and ranges against `case`.
    pub fn validate(&self, case: &GridCase) -> Result<()> {
        let n = self.len();
        let bad = |m: String| Err(Error::InvalidSeries(m));
        if self.load_p.len() != case.n_load() || self.load_q.len() != case.n_load() {
            return bad(format!(
                "expected {} load columns, got {}",
                case.n_load(),
                self.load_p.len()
            ));
        }
        let ren = case.renewable_ids();
        if self.renewable_p_max.len() != ren.len() {
            return bad(format!(
                "expected {} renewable columns, got {}",
                ren.len(),
                self.renewable_p_max.len()
            ));
        }
        let all = self
            .load_p
            .iter()
            .chain(&self.load_q)
            .chain(&self.renewable_p_max);
        if all.clone().any(|c| c.len() != n) {
            return bad("columns differ in length".into());
        }
        if all.flatten().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        for (j, &g) in ren.iter().enumerate() {
            let cap = case.generators[g].p_max;
            if let Some(t) = self.renewable_p_max[j]
                .iter()
                .position(|&v| !(0.0..=cap).contains(&v))
            {
                return bad(format!("ren{j}_pmax at step {t} outside [0, {cap}]"));
            }
        }
        Ok(())
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["step".to_string()];
        for i in 0..self.load_p.len() {
            h.push(format!("load{i}_p"));
            h.push(format!("load{i}_q"));
        }
        for j in 0..self.renewable_p_max.len() {
            h.push(format!("ren{j}_pmax"));
        }
        h
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(self.header())?;
        for t in 0..self.len() {
            let mut row = vec![t.to_string()];
            for i in 0..self.load_p.len() {
                row.push(self.load_p[i][t].to_string());
                row.push(self.load_q[i][t].to_string());
            }
            for r in &self.renewable_p_max {
                row.push(r[t].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let n_load = header
            .iter()
            .filter(|h| h.ends_with("_p") && h.starts_with("load"))
            .count();
        let n_ren = header.iter().filter(|h| h.starts_with("ren")).count();
        let mut ts = TimeSeries {
            load_p: vec![Vec::new(); n_load],
            load_q: vec![Vec::new(); n_load],
            renewable_p_max: vec![Vec::new(); n_ren],
        };
        if header != ts.header() {
            return Err(Error::InvalidSeries(format!(
                "unexpected header {header:?}"
            )));
        }
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidSeries(format!("row {}: {e}", line + 2)))?;
            if vals.len() != 2 * n_load + n_ren {
                return Err(Error::InvalidSeries(format!(
                    "row {}: wrong arity",
                    line + 2
                )));
            }
            for i in 0..n_load {
                ts.load_p[i].push(vals[2 * i]);
                ts.load_q[i].push(vals[2 * i + 1]);
            }
            for j in 0..n_ren {
                ts.renewable_p_max[j].push(vals[2 * n_load + j]);
            }
        }
        Ok(ts)
    }
}

/// Fraction of a day in `[0, 1)` for a 5-minute step index.
pub fn day_fraction(step: usize) -> f64 {
    (step % STEPS_PER_DAY) as f64 / STEPS_PER_DAY as f64
}

/// Double-peak diurnal load shape with its maximum near 1 in the evening.
pub fn load_shape(hour: f64) -> f64 {
    let bump = |c: f64, w: f64| (-((hour - c) / w).powi(2)).exp();
    0.6 + 0.24 * bump(9.5, 2.2) + 0.17 * bump(13.5, 2.5) + 0.4 * bump(19.5, 2.4)
}

/// Clear-sky solar shape: zero outside [06:00, 18:30].
pub fn solar_shape(hour: f64) -> f64 {
    const RISE: f64 = 6.0;
    const SET: f64 = 18.5;
    if hour <= RISE || hour >= SET {
        0.0
    } else {
        (PI * (hour - RISE) / (SET - RISE)).sin()
    }
}

/// Synthetic 5-minute profiles for `days` days plus one trailing step.
///
/// Loads follow [`load_shape`] scaled by a daily factor with AR(1)
/// multiplicative noise at constant power factor. Even-numbered renewable
/// units are solar (daylight sinusoid times a daily clearness factor and
/// AR(1) cloud noise); odd-numbered units are wind (mean-reverting capacity
/// factor).
pub fn make_profiles(case: &GridCase, seed: u64, days: usize) -> TimeSeries {
    assert!(days >= 1, "at least one day");
    let steps = days * STEPS_PER_DAY + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");

    let day_scale: Vec<f64> = (0..=days)
        .map(|_| 1.0 + 0.03 * unit.sample(&mut rng))
        .collect();
    let hour = |t: usize| day_fraction(t) * 24.0;

    let mut load_p = Vec::with_capacity(case.n_load());
    let mut load_q = Vec::with_capacity(case.n_load());
    for load in &case.loads {
        let (phi, sigma) = (0.98f64, 0.02f64);
        let innov = sigma * (1.0 - phi * phi).sqrt();
        let mut eps = sigma * unit.sample(&mut rng);
        let pf = if load.base_p != 0.0 {
            load.base_q / load.base_p
        } else {
            0.0
        };
        let mut p = Vec::with_capacity(steps);
        for t in 0..steps {
            let v = load.base_p * load_shape(hour(t)) * day_scale[t / STEPS_PER_DAY] * (1.0 + eps);
            p.push(v.max(0.0));
            eps = phi * eps + innov * unit.sample(&mut rng);
        }
        load_q.push(p.iter().map(|v| v * pf).collect());
        load_p.push(p);
    }

    let mut renewable_p_max = Vec::new();
    for (j, &g) in case.renewable_ids().iter().enumerate() {
        let cap = case.generators[g].p_max;
        let mut series = Vec::with_capacity(steps);
        if j % 2 == 0 {
            let clearness: Vec<f64> = (0..=days).map(|_| rng.random_range(0.65..1.0)).collect();
            let (phi, sigma) = (0.95f64, 0.08f64);
            let innov = sigma * (1.0 - phi * phi).sqrt();
            let mut eps = 0.0;
            for t in 0..steps {
                let shape = solar_shape(hour(t));
                let v = cap * shape * clearness[t / STEPS_PER_DAY] * (1.0 + eps);
                series.push(if shape == 0.0 { 0.0 } else { v.clamp(0.0, cap) });
                eps = phi * eps + innov * unit.sample(&mut rng);
            }
        } else {
            let (mean, rate, sigma) = (0.45f64, 0.01f64, 0.025f64);
            let mut x: f64 = rng.random_range(0.25..0.65);
            for _ in 0..steps {
                series.push((x * cap).clamp(0.0, cap));
                x = (x + rate * (mean - x) + sigma * unit.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        renewable_p_max.push(series);
    }

    TimeSeries {
        load_p,
        load_q,
        renewable_p_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    #[test]
    fn deterministic_per_seed() {
        let case = cases::six_bus();
        assert_eq!(make_profiles(&case, 3, 2), make_profiles(&case, 3, 2));
        assert_ne!(make_profiles(&case, 3, 2), make_profiles(&case, 4, 2));
    }

    #[test]
    fn shape_and_validity() {
        let case = cases::six_bus();
        let ts = make_profiles(&case, 1, 3);
        assert_eq!(ts.len(), 3 * STEPS_PER_DAY + 1);
        ts.validate(&case).unwrap();
    }

    #[test]
    fn solar_is_dark_at_midnight() {
        let case = cases::six_bus();
        let ts = make_profiles(&case, 9, 4);
        for day in 0..4 {
            for t in day * STEPS_PER_DAY..day * STEPS_PER_DAY + 60 {
                assert_eq!(ts.renewable_p_max[0][t], 0.0);
            }
        }
    }

    #[test]
    fn renewable_share_reaches_sixty_percent_of_peak_load() {
        let case = cases::six_bus();
        let ts = make_profiles(&case, 0, 7);
        let peak_load = (0..ts.len()).map(|t| ts.total_load(t)).fold(0.0, f64::max);
        let peak_ren = (0..ts.len())
            .map(|t| ts.total_renewable(t))
            .fold(0.0, f64::max);
        assert!(peak_ren >= 0.6 * peak_load, "{peak_ren} vs {peak_load}");
    }

    #[test]
    fn csv_round_trip() {
        let case = cases::six_bus();
        let ts = make_profiles(&case, 5, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        ts.write_csv(&path).unwrap();
        let back = TimeSeries::read_csv(&path).unwrap();
        assert_eq!(back, ts);
        assert_eq!(
            back.header()[..4],
            ["step", "load0_p", "load0_q", "load1_p"].map(String::from)
        );
    }
}
