use thiserror::Error;

use super::{execute_trace, ConditionSet, ControllerError, ExecutionMode, Simulator};
use crate::distributions::Rng;
use crate::trace::Trace;
use crate::value::Value;

#[derive(Debug, Error)]
#[error("worker {worker} failed after {completed} trace(s): {source}")]
pub struct BatchError {
    pub worker: usize,
    pub completed: usize,
    #[source]
    pub source: ControllerError,
}

/// Produces `n` traces across the given simulators, one thread per simulator.
///
/// Trace `j` (0-based, global) always uses `Rng::split(seed, j)` and worker
/// `w` runs the contiguous block `[w·n/W, (w+1)·n/W)`, so the output is the
/// same sequence for any worker count when the simulators are deterministic.
pub fn run_batch<S: Simulator>(
    sims: &mut [S],
    mode: ExecutionMode<'_>,
    conditions: &ConditionSet,
    observation: Option<&Value>,
    n: usize,
    seed: u64,
) -> Result<Vec<Trace>, BatchError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    assert!(!sims.is_empty(), "run_batch needs at least one simulator");
    let workers = sims.len().min(n);
    let bounds: Vec<(usize, usize)> = (0..workers)
        .map(|w| (w * n / workers, (w + 1) * n / workers))
        .collect();
    let work = |w: usize, sim: &mut S| -> Result<Vec<Trace>, BatchError> {
        let (lo, hi) = bounds[w];
        let mut out = Vec::with_capacity(hi - lo);
        for j in lo..hi {
            let mut rng = Rng::split(seed, j as u64);
            let t = execute_trace(sim, mode, conditions, observation, &mut rng).map_err(|source| {
                BatchError {
                    worker: w,
                    completed: out.len(),
                    source,
                }
            })?;
            out.push(t);
        }
        Ok(out)
    };
    if workers == 1 {
        return work(0, &mut sims[0]);
    }
    let results: Vec<Result<Vec<Trace>, BatchError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sims[..workers]
            .iter_mut()
            .enumerate()
            .map(|(w, sim)| {
                let work = &work;
                scope.spawn(move || work(w, sim))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("batch worker panicked"))
            .collect()
    });
    let mut traces = Vec::with_capacity(n);
    for r in results {
        traces.extend(r?);
    }
    Ok(traces)
}
