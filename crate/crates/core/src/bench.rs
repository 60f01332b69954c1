//! Scaling sweeps: per-step wall time of the reconstructor as one parameter
//! varies, with a per-stage breakdown.
//!
//! Timing covers `reconstruct_step` only. Each repetition runs `warmup`
//! untimed steps followed by `steps` timed ones on a fixed measurement
//! vector and reports the median step.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use crate::config::{DmSection, LayerSection, SystemGeometry};
use crate::error::{Error, Result};
use crate::reconstructor::Reconstructor;
use crate::sim::{generate_atmosphere, synthesize_measurements};

pub const CSV_HEADER: &str = "sweep_param,value,rep,step_time_us,stage1_us,stage2_us,stage3_us,pcg_us";

/// Nine-layer reference profile: heights in meters.
pub const PROFILE_HEIGHTS: [f64; 9] = [0.0, 140.0, 281.0, 562.0, 1125.0, 2250.0, 4500.0, 9000.0, 18000.0];
/// Fractional turbulence strength of each reference layer.
pub const PROFILE_STRENGTHS: [f64; 9] = [0.5224, 0.026, 0.0444, 0.116, 0.0989, 0.0295, 0.0598, 0.0430, 0.0600];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Layers,
    PcgIters,
    Subapertures,
    Threads,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::Layers => "layers",
            Self::PcgIters => "pcg_iters",
            Self::Subapertures => "subapertures",
            Self::Threads => "threads",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layers" => Ok(Self::Layers),
            "pcg_iters" => Ok(Self::PcgIters),
            "subapertures" => Ok(Self::Subapertures),
            "threads" => Ok(Self::Threads),
            other => Err(Error::Sweep(format!(
                "unknown sweep parameter {other:?} (expected layers, pcg_iters, subapertures or threads)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<usize>,
    pub repetitions: usize,
    /// Untimed steps before each repetition.
    pub warmup: usize,
    /// Timed steps per repetition.
    pub steps: usize,
}

impl SweepSpec {
    pub fn new(param: SweepParam, values: Vec<usize>) -> Self {
        Self {
            param,
            values,
            repetitions: 3,
            warmup: 10,
            steps: 10,
        }
    }

    /// Checks the spec against `base` by deriving every sweep point.
    pub fn validate(&self, base: &SystemGeometry) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Sweep("sweep needs at least one value".into()));
        }
        if self.repetitions < 3 {
            return Err(Error::Sweep(format!(
                "repetitions must be >= 3, got {}",
                self.repetitions
            )));
        }
        if self.steps == 0 {
            return Err(Error::Sweep(
                "at least one timed step per repetition is required".into(),
            ));
        }
        for &v in &self.values {
            sweep_point(base, self.param, v)?;
        }
        Ok(())
    }
}

/// Groups the nine reference layers into `n` contiguous bins. Each bin sits
/// at the strength-weighted mean height and carries the summed strength.
pub fn standard_profile(n: usize) -> Result<Vec<(f64, f64)>> {
    let total = PROFILE_HEIGHTS.len();
    if !(1..=total).contains(&n) {
        return Err(Error::Sweep(format!("layer count must be in 1..={total}, got {n}")));
    }
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|g| {
            let range = g * total / n..(g + 1) * total / n;
            let strength: f64 = PROFILE_STRENGTHS[range.clone()].iter().sum();
            let moment: f64 = range.map(|i| PROFILE_HEIGHTS[i] * PROFILE_STRENGTHS[i]).sum();
            ((moment / strength).round(), strength)
        })
        .collect();
    let sum: f64 = out.iter().map(|p| p.1).sum();
    out.iter_mut().for_each(|p| p.1 /= sum);
    Ok(out)
}

/// Actuators per side of the `k`-th DM in a reference-profile system.
pub fn profile_actuators(k: usize) -> usize {
    match k {
        0 => 81,
        1..=4 => 48,
        _ => 54,
    }
}

/// Parallelism degree and geometry for one sweep point.
pub fn sweep_point(base: &SystemGeometry, param: SweepParam, value: usize) -> Result<(SystemGeometry, Option<usize>)> {
    let illegal = |e: Error| Error::Sweep(format!("illegal {param} value {value}: {e}"));
    if value == 0 {
        return Err(Error::Sweep(format!("illegal {param} value 0")));
    }
    match param {
        SweepParam::Threads => Ok((base.clone(), Some(value))),
        SweepParam::PcgIters => {
            let g = base.with_config(|c| c.solver.pcg_max_iter = value).map_err(illegal)?;
            Ok((g, None))
        }
        SweepParam::Subapertures => {
            let widest = base.wfs_list.iter().map(|w| w.n_subap).max().unwrap_or(0);
            let g = base
                .with_config(|c| {
                    c.wfs
                        .iter_mut()
                        .filter(|w| w.n_subap == widest)
                        .for_each(|w| w.n_subap = value);
                })
                .map_err(illegal)?;
            Ok((g, None))
        }
        SweepParam::Layers => {
            let profile = standard_profile(value)?;
            let order = base.layers[0].grid_order;
            let g = base
                .with_config(|c| {
                    c.layers = profile
                        .iter()
                        .map(|&(height, relative_strength)| LayerSection {
                            height,
                            grid_order: order,
                            relative_strength,
                        })
                        .collect();
                    c.dms = profile
                        .iter()
                        .enumerate()
                        .map(|(k, &(h, _))| DmSection {
                            n_act: profile_actuators(k),
                            conjugation_height: h,
                        })
                        .collect();
                    if c.loop_.wind.len() != value {
                        c.loop_.wind.clear();
                    }
                })
                .map_err(illegal)?;
            Ok((g, None))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub param: SweepParam,
    pub value: usize,
    pub rep: usize,
    pub step_time_us: f64,
    pub stage1_us: f64,
    pub stage2_us: f64,
    pub stage3_us: f64,
    pub pcg_us: f64,
}

fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs the sweep. `threads` is the parallelism degree for every point
/// except a threads sweep.
pub fn run_sweep(base: &SystemGeometry, spec: &SweepSpec, threads: Option<usize>, seed: u64) -> Result<Vec<BenchRow>> {
    spec.validate(base)?;
    let mut rows = Vec::with_capacity(spec.values.len() * spec.repetitions);
    for &value in &spec.values {
        let (geometry, point_threads) = sweep_point(base, spec.param, value)?;
        let mut rec = Reconstructor::new(&geometry, point_threads.or(threads))?;
        let truth = generate_atmosphere(&geometry, seed)?;
        let s = synthesize_measurements(rec.ops(), &geometry, &truth.layers, None, None)?;
        log::info!("{} = {value}: {} threads", spec.param, rec.threads());
        for rep in 0..spec.repetitions {
            let mut state = rec.new_state();
            for _ in 0..spec.warmup {
                rec.reconstruct_step(&mut state, &s)?;
            }
            let mut cols: [Vec<f64>; 5] = Default::default();
            for _ in 0..spec.steps {
                let t = rec.reconstruct_step(&mut state, &s)?.telemetry;
                let sample = [t.total, t.stages.stage1, t.stages.stage2, t.stages.stage3, t.pcg];
                for (col, d) in cols.iter_mut().zip(sample) {
                    col.push(micros(d));
                }
            }
            let [total, s1, s2, s3, pcg] = cols.map(|mut c| median(&mut c));
            rows.push(BenchRow {
                param: spec.param,
                value,
                rep,
                step_time_us: total,
                stage1_us: s1,
                stage2_us: s2,
                stage3_us: s3,
                pcg_us: pcg,
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
            r.param, r.value, r.rep, r.step_time_us, r.stage1_us, r.stage2_us, r.stage3_us, r.pcg_us
        ));
    }
    out
}

/// Median and spread of the step time at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub value: usize,
    pub median_us: f64,
    pub min_us: f64,
    pub max_us: f64,
}

impl PointSummary {
    /// `(max - min) / median`.
    pub fn spread(&self) -> f64 {
        (self.max_us - self.min_us) / self.median_us
    }
}

/// One summary per sweep value, in the order values first appear.
pub fn summarize(rows: &[BenchRow]) -> Vec<PointSummary> {
    let mut values: Vec<usize> = Vec::new();
    for r in rows {
        if !values.contains(&r.value) {
            values.push(r.value);
        }
    }
    values
        .into_iter()
        .map(|value| {
            let mut t: Vec<f64> = rows
                .iter()
                .filter(|r| r.value == value)
                .map(|r| r.step_time_us)
                .collect();
            let min_us = t.iter().cloned().fold(f64::INFINITY, f64::min);
            let max_us = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            PointSummary {
                value,
                median_us: median(&mut t),
                min_us,
                max_us,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn profile_bins_conserve_strength() {
        for n in 1..=9 {
            let p = standard_profile(n).unwrap();
            assert_eq!(p.len(), n);
            let sum: f64 = p.iter().map(|x| x.1).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(p.windows(2).all(|w| w[1].0 > w[0].0));
        }
        assert_eq!(
            standard_profile(9).unwrap()[8],
            (18000.0, 0.06 / PROFILE_STRENGTHS.iter().sum::<f64>())
        );
        assert!(standard_profile(0).is_err());
        assert!(standard_profile(10).is_err());
    }

    #[test]
    fn six_bins_reproduce_the_shipped_maory_layers() {
        let g = presets::maory();
        let p = standard_profile(6).unwrap();
        for (layer, (h, s)) in g.layers.iter().zip(&p) {
            assert_eq!(layer.height, *h);
            assert!((layer.relative_strength - s).abs() < 1e-12);
        }
        let acts: Vec<usize> = g.dms.iter().map(|d| d.n_act).collect();
        assert_eq!(acts, (0..6).map(profile_actuators).collect::<Vec<_>>());
    }

    #[test]
    fn spec_validation() {
        let g = presets::mini();
        let mut spec = SweepSpec::new(SweepParam::PcgIters, vec![2, 4]);
        assert!(spec.validate(&g).is_ok());
        spec.repetitions = 2;
        assert!(matches!(spec.validate(&g), Err(Error::Sweep(_))));
        spec.repetitions = 3;
        spec.values = vec![0];
        assert!(spec.validate(&g).is_err());
        assert!("bogus".parse::<SweepParam>().is_err());
        assert_eq!("threads".parse::<SweepParam>().unwrap(), SweepParam::Threads);
    }

    #[test]
    fn small_sweep_writes_fixed_schema() {
        let g = presets::mini();
        let mut spec = SweepSpec::new(SweepParam::PcgIters, vec![1, 2]);
        spec.warmup = 1;
        spec.steps = 2;
        let rows = run_sweep(&g, &spec, Some(1), 3).unwrap();
        assert_eq!(rows.len(), 6);
        let csv = bench_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert!(lines.next().unwrap().starts_with("pcg_iters,1,0,"));
        let summary = summarize(&rows);
        assert_eq!(summary.iter().map(|s| s.value).collect::<Vec<_>>(), vec![1, 2]);
        assert!(summary
            .iter()
            .all(|s| s.min_us <= s.median_us && s.median_us <= s.max_us));
    }

    #[test]
    fn median_of_even_and_odd_sets() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
