//! Limited-memory BFGS with a strong-Wolfe line search, and a central
//! finite-difference gradient checker.
//!
//! The line search is the bracketing/zoom scheme with safeguarded cubic
//! interpolation. Accepted steps always satisfy both strong-Wolfe conditions,
//! so the recorded objective sequence is non-increasing.

use std::collections::VecDeque;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("objective is not finite at the starting point")]
    NonFiniteObjective,
    #[error("starting point has a non-finite coordinate")]
    NonFiniteStart,
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearchParams {
    pub c1: f64,
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_evals: usize,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            c2: 0.9,
            max_evals: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub memory: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
    pub line_search: LineSearchParams,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 500,
            grad_tol: 1e-5,
            f_tol: 1e-9,
            line_search: LineSearchParams::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let ls = &self.line_search;
        if self.memory == 0 {
            return Err(OptimizeError::InvalidConfig(
                "memory must be at least 1".into(),
            ));
        }
        if !(0.0 < ls.c1 && ls.c1 < ls.c2 && ls.c2 < 1.0) {
            return Err(OptimizeError::InvalidConfig(format!(
                "need 0 < c1 < c2 < 1, got c1={} c2={}",
                ls.c1, ls.c2
            )));
        }
        if !(self.grad_tol > 0.0 && self.f_tol > 0.0) {
            return Err(OptimizeError::InvalidConfig(
                "tolerances must be positive".into(),
            ));
        }
        if ls.max_evals == 0 {
            return Err(OptimizeError::InvalidConfig(
                "line search needs at least one evaluation".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// Gradient infinity-norm fell below `grad_tol`.
    GradientTolerance,
    /// Relative objective change fell below `f_tol`.
    FunctionTolerance,
    /// The step no longer moves the iterate in floating point.
    StepTolerance,
    MaxIterations,
    /// No strong-Wolfe step was found; the last accepted iterate is returned.
    LineSearchFailure,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::GradientTolerance => "gradient-tolerance",
            Termination::FunctionTolerance => "function-tolerance",
            Termination::StepTolerance => "step-tolerance",
            Termination::MaxIterations => "max-iterations",
            Termination::LineSearchFailure => "line-search-failure",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step: f64,
    /// Cumulative objective evaluations.
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    /// Record 0 is the starting point.
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
}

impl OptimizationTrace {
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn final_value(&self) -> f64 {
        self.records.last().map(|r| r.value).unwrap_or(f64::NAN)
    }

    pub fn is_monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[1].value <= w[0].value)
    }

    /// One line per iteration: `iteration f |g|_inf step`.
    pub fn to_log(&self) -> String {
        let mut out = String::from("# iteration f grad_inf step\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{} {:.17e} {:.6e} {:.6e}",
                r.iteration, r.value, r.grad_norm, r.step
            );
        }
        let _ = writeln!(out, "# termination {}", self.termination);
        out
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub trace: OptimizationTrace,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Probe {
    step: f64,
    value: f64,
    slope: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
}

/// Minimizer of the cubic through two points with known slopes, clamped to
/// `[lo, hi]`. Falls back to bisection when the cubic has no real minimizer.
fn cubic_min(a: &Probe, b: &Probe, lo: f64, hi: f64) -> f64 {
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.step - b.step);
    let disc = d1 * d1 - a.slope * b.slope;
    let t = if disc >= 0.0 {
        let d2 = (b.step - a.step).signum() * disc.sqrt();
        b.step - (b.step - a.step) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2)
    } else {
        f64::NAN
    };
    if t.is_finite() {
        t.clamp(lo, hi)
    } else {
        0.5 * (lo + hi)
    }
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    params: LineSearchParams,
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> LineSearch<'_, F> {
    fn probe(&mut self, step: f64) -> Probe {
        self.evals += 1;
        let x: Vec<f64> = self
            .x
            .iter()
            .zip(self.dir)
            .map(|(x, d)| x + step * d)
            .collect();
        let mut grad = vec![0.0; x.len()];
        let value = (self.f)(&x, &mut grad);
        let slope = dot(&grad, self.dir);
        Probe {
            step,
            value,
            slope,
            x,
            grad,
        }
    }

    fn armijo(&self, p: &Probe) -> bool {
        p.value <= self.f0 + self.params.c1 * p.step * self.slope0
    }

    fn curvature(&self, p: &Probe) -> bool {
        p.slope.abs() <= -self.params.c2 * self.slope0
    }

    fn finite(p: &Probe) -> bool {
        p.value.is_finite() && p.slope.is_finite()
    }

    fn run(&mut self, initial: f64) -> Option<Probe> {
        let mut prev = Probe {
            step: 0.0,
            value: self.f0,
            slope: self.slope0,
            x: Vec::new(),
            grad: Vec::new(),
        };
        let mut step = initial;
        let mut first = true;
        while self.evals < self.params.max_evals {
            let cur = self.probe(step);
            if !Self::finite(&cur) {
                // shrink back towards the last good point
                step = prev.step + 0.5 * (step - prev.step);
                continue;
            }
            if !self.armijo(&cur) || (!first && cur.value >= prev.value) {
                return self.zoom(prev, cur);
            }
            if self.curvature(&cur) {
                return Some(cur);
            }
            if cur.slope >= 0.0 {
                return self.zoom(cur, prev);
            }
            let lo = cur.step + 0.01 * (cur.step - prev.step);
            let hi = cur.step * 10.0;
            step = cubic_min(&prev, &cur, lo, hi);
            prev = cur;
            first = false;
        }
        None
    }

    /// `lo` satisfies Armijo and has the lowest value seen so far; the
    /// minimizer lies between `lo` and `hi`.
    fn zoom(&mut self, mut lo: Probe, mut hi: Probe) -> Option<Probe> {
        while self.evals < self.params.max_evals {
            let (a, b) = if lo.step < hi.step {
                (lo.step, hi.step)
            } else {
                (hi.step, lo.step)
            };
            let width = b - a;
            if width * inf_norm(self.dir) < 1e-16 * (1.0 + inf_norm(self.x)) {
                return None;
            }
            let step = if Self::finite(&hi) {
                cubic_min(&lo, &hi, a + 0.1 * width, b - 0.1 * width)
            } else {
                0.5 * (a + b)
            };
            let cur = self.probe(step);
            if !Self::finite(&cur) || !self.armijo(&cur) || cur.value >= lo.value {
                hi = cur;
            } else {
                if self.curvature(&cur) {
                    return Some(cur);
                }
                if cur.slope * (hi.step - lo.step) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
        }
        None
    }
}

/// Minimizes a smooth function given as `f(x, grad) -> value`, where the
/// callable writes the gradient at `x` into `grad`.
///
/// Line-search failure is not an error: the last accepted iterate is returned
/// with [`Termination::LineSearchFailure`] and a warning is logged.
pub fn minimize<F>(mut f: F, x0: &[f64], config: &OptimizerConfig) -> Result<Minimum, OptimizeError>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    config.validate()?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(OptimizeError::NonFiniteStart);
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; n];
    let mut value = f(&x, &mut grad);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(OptimizeError::NonFiniteObjective);
    }
    let mut evaluations = 1;
    let mut records = vec![IterationRecord {
        iteration: 0,
        value,
        grad_norm: inf_norm(&grad),
        step: 0.0,
        evaluations,
    }];
    if inf_norm(&grad) <= config.grad_tol {
        return Ok(Minimum {
            x,
            value,
            trace: OptimizationTrace {
                records,
                termination: Termination::GradientTolerance,
            },
        });
    }

    // (s, y, 1 / y.s)
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
    let mut dir = vec![0.0; n];
    let mut alpha = vec![0.0; config.memory];
    let mut termination = Termination::MaxIterations;

    for iter in 1..=config.max_iters {
        // two-loop recursion
        dir.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g);
        for (i, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha[i] = a;
            dir.iter_mut().zip(y).for_each(|(d, y)| *d -= a * y);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for (i, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &dir);
            let a = alpha[i];
            dir.iter_mut().zip(s).for_each(|(d, s)| *d += (a - b) * s);
        }
        let mut slope = dot(&grad, &dir);
        if slope.is_nan() || slope >= 0.0 {
            // curvature information went bad; restart from steepest descent
            history.clear();
            dir.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g);
            slope = dot(&grad, &dir);
        }

        let initial = if history.is_empty() {
            let g1: f64 = grad.iter().map(|g| g.abs()).sum();
            (1.0 / g1).min(1.0)
        } else {
            1.0
        };
        let mut search = LineSearch {
            f: &mut f,
            x: &x,
            dir: &dir,
            f0: value,
            slope0: slope,
            params: config.line_search,
            evals: 0,
        };
        let found = search.run(initial);
        evaluations += search.evals;
        let Some(probe) = found else {
            log::warn!("line search failed at iteration {iter}; returning best iterate");
            termination = Termination::LineSearchFailure;
            break;
        };

        let s: Vec<f64> = probe.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = probe.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let step_inf = inf_norm(&s);
        let prev_value = value;
        x = probe.x;
        grad = probe.grad;
        value = probe.value;
        let grad_norm = inf_norm(&grad);
        records.push(IterationRecord {
            iteration: iter,
            value,
            grad_norm,
            step: probe.step,
            evaluations,
        });

        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        if grad_norm <= config.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        if (prev_value - value).abs() <= config.f_tol * prev_value.abs().max(value.abs()).max(1.0) {
            termination = Termination::FunctionTolerance;
            break;
        }
        if step_inf <= 1e-15 * (1.0 + inf_norm(&x)) {
            termination = Termination::StepTolerance;
            break;
        }
    }

    Ok(Minimum {
        x,
        value,
        trace: OptimizationTrace {
            records,
            termination,
        },
    })
}

/// Largest `|analytic - central difference| / max(1, |analytic|)` over all
/// coordinates.
pub fn check_gradient<F>(mut f: F, w: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let n = w.len();
    let mut analytic = vec![0.0; n];
    f(w, &mut analytic);
    let mut scratch = vec![0.0; n];
    let mut point = w.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..n {
        point[k] = w[k] + step;
        let up = f(&point, &mut scratch);
        point[k] = w[k] - step;
        let down = f(&point, &mut scratch);
        point[k] = w[k];
        let numeric = (up - down) / (2.0 * step);
        let err = (analytic[k] - numeric).abs() / analytic[k].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
