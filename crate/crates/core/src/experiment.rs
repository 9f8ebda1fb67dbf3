//! Scaling experiments over the recurring operations (evidence generation
//! and on-chain verification). One-time setup is never timed.

use std::fmt;
use std::io;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::WorkflowError;
use crate::sensor::SignedBatch;
use crate::types::BackendId;
use crate::workflow::{Deployment, WorkflowConfig};

pub const CSV_HEADER: [&str; 6] = ["backend", "mode", "param", "mean_seconds", "stddev", "cost_units"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    /// One batch whose size is the parameter.
    Size,
    /// The parameter is the number of size-one batches.
    Count,
}

impl BenchMode {
    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Size => "size",
            BenchMode::Count => "count",
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "size" => Ok(BenchMode::Size),
            "count" => Ok(BenchMode::Count),
            other => Err(format!("unknown bench mode `{other}` (expected size or count)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub backend: BackendId,
    pub mode: BenchMode,
    pub param: usize,
    pub mean_seconds: f64,
    /// Sample standard deviation; only defined for more than one repetition.
    pub stddev: Option<f64>,
    /// On-chain cost of one repetition.
    pub cost_units: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchPlan {
    pub backend: BackendId,
    pub mode: BenchMode,
    pub repetitions: usize,
    /// Untimed runs before measuring.
    pub warmup: usize,
    pub seed: u64,
}

impl BenchPlan {
    pub fn new(backend: BackendId, mode: BenchMode, repetitions: usize) -> Self {
        BenchPlan { backend, mode, repetitions, warmup: 1, seed: 0 }
    }
}

/// Mean and sample standard deviation.
pub fn mean_stddev(samples: &[f64]) -> (f64, Option<f64>) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let stddev = (samples.len() > 1)
        .then(|| (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, stddev)
}

/// Runs one repetition: processes and submits every batch, returning the
/// elapsed time and the summed on-chain cost.
fn timed_run(d: &mut Deployment, batches: &[SignedBatch]) -> Result<(f64, u64), WorkflowError> {
    let start = Instant::now();
    let mut cost = 0;
    for b in batches {
        let receipt = d.run_batch(b)?;
        debug_assert!(receipt.accepted);
        cost += receipt.cost_units;
    }
    Ok((start.elapsed().as_secs_f64(), cost))
}

/// Repetitions are interleaved across parameters so that drift in machine
/// load affects every parameter alike.
pub fn run_bench(plan: &BenchPlan, params: &[usize]) -> Result<Vec<BenchRow>, WorkflowError> {
    let shape = |param: usize| match plan.mode {
        BenchMode::Size => (param, 1),
        BenchMode::Count => (1, param),
    };
    let mut deployments = params
        .iter()
        .map(|&p| Deployment::setup(WorkflowConfig::new(plan.backend, shape(p).0), plan.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let mut next_seed = plan.seed;
    let mut batches = |d: &mut Deployment, count: usize| -> Result<Vec<SignedBatch>, WorkflowError> {
        (0..count)
            .map(|_| {
                next_seed += 1;
                d.emit(next_seed)
            })
            .collect()
    };

    let reps = plan.repetitions.max(1);
    let mut samples = vec![Vec::with_capacity(reps); params.len()];
    let mut costs = vec![0; params.len()];
    for round in 0..plan.warmup + reps {
        for (i, d) in deployments.iter_mut().enumerate() {
            let b = batches(d, shape(params[i]).1)?;
            let (secs, cost) = timed_run(d, &b)?;
            if round >= plan.warmup {
                samples[i].push(secs);
                costs[i] = cost;
            }
        }
    }
    Ok(params
        .iter()
        .zip(samples.iter().zip(costs))
        .map(|(&param, (s, cost_units))| {
            let (mean_seconds, stddev) = mean_stddev(s);
            BenchRow { backend: plan.backend, mode: plan.mode, param, mean_seconds, stddev, cost_units }
        })
        .collect())
}

pub fn write_csv<W: io::Write>(rows: &[BenchRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.backend.short_name().to_string(),
            r.mode.name().to_string(),
            r.param.to_string(),
            format!("{:.9}", r.mean_seconds),
            r.stddev.map(|s| format!("{s:.9}")).unwrap_or_default(),
            r.cost_units.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<BenchRow>, String> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(format!("unexpected header {header:?}"));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            let field = |i: usize| rec.get(i).unwrap_or_default();
            let num = |i: usize| field(i).parse::<f64>().map_err(|e| format!("{}: {e}", CSV_HEADER[i]));
            Ok(BenchRow {
                backend: field(0).parse()?,
                mode: field(1).parse()?,
                param: field(2).parse().map_err(|e| format!("param: {e}"))?,
                mean_seconds: num(3)?,
                stddev: if field(4).is_empty() { None } else { Some(num(4)?) },
                cost_units: field(5).parse().map_err(|e| format!("cost_units: {e}"))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stddev_only_for_repetitions() {
        assert_eq!(mean_stddev(&[2.0]), (2.0, None));
        let (m, s) = mean_stddev(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s.unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn schema_is_stable_across_repetitions() {
        for reps in [1, 3] {
            let plan = BenchPlan::new(BackendId::Enclave, BenchMode::Count, reps);
            let rows = run_bench(&plan, &[1, 2]).unwrap();
            assert_eq!(rows.len(), 2);
            assert!(rows.iter().all(|r| r.stddev.is_some() == (reps > 1)));
            let mut buf = Vec::new();
            write_csv(&rows, &mut buf).unwrap();
            let text = String::from_utf8(buf.clone()).unwrap();
            assert!(text.starts_with("backend,mode,param,mean_seconds,stddev,cost_units\n"));
            let back = read_csv(&buf[..]).unwrap();
            let mut again = Vec::new();
            write_csv(&back, &mut again).unwrap();
            assert_eq!(buf, again);
        }
    }

    #[test]
    fn cost_is_linear_in_count() {
        let plan = BenchPlan::new(BackendId::ConstraintSystem, BenchMode::Count, 1);
        let rows = run_bench(&plan, &[1, 3]).unwrap();
        assert_eq!(rows[1].cost_units, 3 * rows[0].cost_units);
    }
}
