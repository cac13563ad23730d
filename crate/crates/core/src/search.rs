//! Searching the tolerance β for a target compression ratio.
//!
//! Both searches take a callback that maps β to a bit assignment and its
//! compression ratio, so they can be driven by a real model, a cached ζ
//! table, or a synthetic oracle.

use alloc::vec::Vec;

use crate::assign::{assign_bits_with, BitAssignment, ZetaSource};
use crate::model::LayerSpec;
use crate::size::compression_ratio_for;
use crate::Error;

/// Termination band on `|CR − CR_target|`.
pub const CR_BAND: f64 = 0.01;
pub const BETA_FLOOR: f64 = 1e-3;
pub const DEFAULT_BETA_INIT: f64 = 0.01;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;
pub const DEFAULT_EXHAUSTIVE_STEP: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct SearchStep {
    pub iteration: usize,
    pub beta: f64,
    /// Increment in effect when this β was evaluated.
    pub alpha_beta: f64,
    pub cr: f64,
    pub bits: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchState {
    pub beta: f64,
    pub alpha_beta: f64,
    pub cr: f64,
    pub iteration: usize,
    pub history: Vec<SearchStep>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub assignment: BitAssignment,
    pub state: SearchState,
    pub converged: bool,
}

impl SearchResult {
    pub fn iterations(&self) -> usize {
        self.state.iteration
    }
}

fn check(cr_target: f64, beta_init: f64, max_iterations: usize) -> Result<(), Error> {
    if !(cr_target > 0.0 && cr_target <= 1.0) {
        return Err(Error::InvalidConfig(alloc::format!("cr_target must be in (0, 1], got {cr_target}")));
    }
    if !(beta_init > 0.0) {
        return Err(Error::InvalidConfig(alloc::format!("beta_init must be positive, got {beta_init}")));
    }
    if max_iterations == 0 {
        return Err(Error::InvalidConfig(alloc::string::String::from("max_iterations must be >= 1")));
    }
    Ok(())
}

/// Variable-step search. Starting from `α = 1`, `β = β_init`:
///
/// * stop when `|CR − target| ≤ 0.01`;
/// * if `CR ≤ target`, undo the last step (floored at `1e-3`), shrink `α`
///   tenfold and step again;
/// * otherwise grow `α` by 5 when the gap is at least 0.25, by 2 when it is
///   at least 0.10, and step.
pub fn adaptive_search<F>(
    mut evaluate: F,
    cr_target: f64,
    beta_init: f64,
    max_iterations: usize,
) -> Result<SearchResult, Error>
where
    F: FnMut(f64) -> Result<(BitAssignment, f64), Error>,
{
    check(cr_target, beta_init, max_iterations)?;
    let mut alpha = 1.0;
    let mut beta = beta_init;
    let mut history = Vec::new();
    let mut last = None;
    for iteration in 1..=max_iterations {
        let (assignment, cr) = evaluate(beta)?;
        history.push(SearchStep {
            iteration,
            beta,
            alpha_beta: alpha,
            cr,
            bits: assignment.bits.clone(),
        });
        let gap = (cr - cr_target).abs();
        if gap <= CR_BAND {
            return Ok(SearchResult {
                assignment,
                state: SearchState { beta, alpha_beta: alpha, cr, iteration, history },
                converged: true,
            });
        }
        let evaluated_beta = beta;
        if cr <= cr_target {
            beta = (beta - alpha).max(BETA_FLOOR);
            alpha *= 0.1;
            beta += alpha;
        } else {
            if gap >= 0.25 {
                alpha *= 5.0;
            } else if gap >= 0.10 {
                alpha *= 2.0;
            }
            beta += alpha;
        }
        last = Some((assignment, evaluated_beta, cr));
    }
    let (assignment, beta, cr) = last.expect("at least one iteration ran");
    Ok(SearchResult {
        assignment,
        state: SearchState {
            beta,
            alpha_beta: alpha,
            cr,
            iteration: max_iterations,
            history,
        },
        converged: false,
    })
}

/// Fixed-step sweep `β_init, β_init + step, …` with the same band test.
pub fn exhaustive_search<F>(
    mut evaluate: F,
    cr_target: f64,
    beta_init: f64,
    step: f64,
    max_iterations: usize,
) -> Result<SearchResult, Error>
where
    F: FnMut(f64) -> Result<(BitAssignment, f64), Error>,
{
    check(cr_target, beta_init, max_iterations)?;
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(alloc::format!("step must be positive, got {step}")));
    }
    let mut history = Vec::new();
    let mut last = None;
    for iteration in 1..=max_iterations {
        // computed from the index so long sweeps do not accumulate drift
        let beta = beta_init + (iteration - 1) as f64 * step;
        let (assignment, cr) = evaluate(beta)?;
        history.push(SearchStep {
            iteration,
            beta,
            alpha_beta: step,
            cr,
            bits: assignment.bits.clone(),
        });
        if (cr - cr_target).abs() <= CR_BAND {
            return Ok(SearchResult {
                assignment,
                state: SearchState { beta, alpha_beta: step, cr, iteration, history },
                converged: true,
            });
        }
        last = Some((assignment, beta, cr));
    }
    let (assignment, beta, cr) = last.expect("at least one iteration ran");
    Ok(SearchResult {
        assignment,
        state: SearchState {
            beta,
            alpha_beta: step,
            cr,
            iteration: max_iterations,
            history,
        },
        converged: false,
    })
}

/// Evaluate β through bit assignment on `source` and the compression ratio
/// of `layers`.
pub fn zeta_evaluator<'a, S: ZetaSource + ?Sized>(
    source: &'a mut S,
    layers: &'a [LayerSpec],
    b_max: u32,
) -> impl FnMut(f64) -> Result<(BitAssignment, f64), Error> + 'a {
    move |beta| {
        let a = assign_bits_with(source, beta, b_max)?;
        let cr = compression_ratio_for(layers, &a.bits);
        Ok((a, cr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn oracle(f: impl Fn(f64) -> f64) -> impl FnMut(f64) -> Result<(BitAssignment, f64), Error> {
        move |b| Ok((BitAssignment::new(vec![8], 8, b), f(b)))
    }

    #[test]
    fn immediate_termination() {
        let r = adaptive_search(oracle(|_| 0.995), 1.0, 0.01, 100).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations(), 1);
        let r = exhaustive_search(oracle(|_| 0.995), 1.0, 0.01, 0.01, 100).unwrap();
        assert_eq!(r.iterations(), 1);
    }

    #[test]
    fn exhaustive_counts_steps() {
        // in band from β = 0.07 = β_init + 6 steps
        let f = |b: f64| if b > 0.065 { 0.5 } else { 0.9 };
        let r = exhaustive_search(oracle(f), 0.5, 0.01, 0.01, 1000).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations(), 7);
    }

    #[test]
    fn linear_oracle_trace() {
        let f = |b: f64| (1.02 - 0.05 * b).max(0.3);
        let r = adaptive_search(oracle(f), 0.75, 0.01, 100).unwrap();
        assert!(r.converged);
        assert!((r.state.cr - 0.75).abs() <= CR_BAND);
        let h = &r.state.history;
        assert_eq!(h[0].beta, 0.01);
        assert_eq!(h[0].alpha_beta, 1.0);
        // gap 0.2695 ≥ 0.25 → α = 5, β = 5.01
        assert_eq!(h[1].alpha_beta, 5.0);
        assert!((h[1].beta - 5.01).abs() < 1e-12);
    }

    #[test]
    fn step_straddling_band_never_converges() {
        let f = |b: f64| if b < 3.0 { 0.80 } else { 0.70 };
        let r = adaptive_search(oracle(f), 0.75, 0.01, 40).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations(), 40);
        assert!(r.state.history.iter().all(|s| s.beta >= BETA_FLOOR));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(adaptive_search(oracle(|_| 1.0), 1.5, 0.01, 10).is_err());
        assert!(adaptive_search(oracle(|_| 1.0), 0.5, 0.0, 10).is_err());
        assert!(exhaustive_search(oracle(|_| 1.0), 0.5, 0.01, 0.0, 10).is_err());
    }
}
