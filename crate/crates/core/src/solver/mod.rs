//! Feasible initialization and the interior-point solve of the (L)DMAOP.

pub mod barrier;
pub mod local;
pub mod subgradient;

use std::time::Instant;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::dmaop::{objective, residuals, ConstraintResiduals, DecisionVector, Variant};
use crate::error::{invalid, Error, Result};
use crate::linalg::dot;
use crate::potential::normalizing_offset;
use crate::problem::{DensityKind, ProblemInstance};
use crate::Scalar;

use barrier::{BarrierProgram, StepOutcome};

/// Inner Newton loop ends when half the squared Newton decrement drops below
/// this value.
const NEWTON_TOL: f64 = 1e-9;
/// Line-search failures tolerated before switching to the fallback.
const MAX_STALLS: usize = 2;
const FALLBACK_ITERS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub variant: Variant,
    pub max_outer: usize,
    pub max_newton: usize,
    pub barrier_mu: f64,
    pub tol_cost: f64,
    pub tol_feas: f64,
    pub fallback: bool,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            variant: Variant::Ldmaop,
            max_outer: 30,
            max_newton: 50,
            barrier_mu: 5.0,
            tol_cost: 1e-7,
            tol_feas: 1e-8,
            fallback: true,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.barrier_mu > 1.0) {
            return invalid(format!("barrier_mu must exceed 1, got {}", self.barrier_mu));
        }
        if !(self.tol_cost > 0.0) || !(self.tol_feas > 0.0) {
            return invalid("tolerances must be positive");
        }
        if self.max_outer == 0 || self.max_newton == 0 {
            return invalid("iteration limits must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution<T> {
    pub dv: DecisionVector<T>,
    pub b_offset: T,
    pub cost: T,
    pub variant: Variant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Barrier gap bound below `tol_cost`.
    GapBelowTolerance,
    /// Objective itself below `tol_cost` (it is nonnegative).
    CostBelowTolerance,
    /// Fallback finished after the Newton iteration stalled.
    Fallback,
    /// `max_outer` stages used up.
    IterationCap,
}

impl StopReason {
    pub fn converged(self) -> bool {
        !matches!(self, StopReason::IterationCap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport<T> {
    pub cost: T,
    pub initial_cost: T,
    pub residuals: ConstraintResiduals<T>,
    pub outer_iters: usize,
    pub newton_iters: usize,
    pub subgrad_iters: usize,
    pub wall_time_s: f64,
    pub converged: bool,
    pub reason: StopReason,
    /// Best cost after each barrier stage (and after the fallback, if run).
    pub trace: Vec<T>,
}

/// Strictly feasible point from the quadratic minorant
/// `⟨y₀, x⟩ + β/2 |x|²` with `β = r / (2 max_j |x_j|)`.
pub fn feasible_init<T: Scalar>(inst: &ProblemInstance<T>) -> Result<DecisionVector<T>> {
    let (y0, r) = inst.target.interior_ball();
    if !(r > T::zero()) || !r.is_finite() {
        return invalid("target has no interior");
    }
    let mesh = &inst.mesh;
    let xmax = mesh.vertices().map(|x| dot(x, x).sqrt()).fold(T::zero(), T::max);
    if !xmax.is_finite() {
        return invalid("mesh vertices are not bounded");
    }
    let beta = if xmax > T::zero() { r / (T::lit(2.0) * xmax) } else { r / T::lit(2.0) };
    let mut psi = Vec::with_capacity(mesh.num_vertices());
    let mut eta = Vec::with_capacity(mesh.num_vertices() * mesh.dim());
    for x in mesh.vertices() {
        psi.push(dot(&y0, x) + beta / T::lit(2.0) * dot(x, x));
        eta.extend(y0.iter().zip(x).map(|(y, xc)| *y + beta * *xc));
    }
    DecisionVector::new(mesh.dim(), psi, eta)
}

fn check_solution<T: Scalar>(res: &ConstraintResiduals<T>, variant: Variant, tol: T) -> Result<()> {
    let ok = res.hyperplane_max <= tol
        && res.target_max <= tol
        && res.min_eig_h >= -tol
        && (variant == Variant::Dmaop || res.min_eig_h > T::zero());
    if ok {
        Ok(())
    } else {
        Err(Error::Solver(format!(
            "solution violates constraints: hyperplane {}, target {}, min eigenvalue {}",
            res.hyperplane_max, res.target_max, res.min_eig_h
        )))
    }
}

/// Minimizes the (L)DMAOP objective of a mass-normalized instance.
pub fn solve<T: Scalar>(inst: &ProblemInstance<T>, opts: &SolverOptions) -> Result<(Solution<T>, SolveReport<T>)> {
    opts.validate()?;
    if opts.variant != inst.variant {
        return invalid(format!(
            "solver variant {} does not match instance variant {}",
            opts.variant, inst.variant
        ));
    }
    if matches!(inst.g.kind, DensityKind::Grid(_)) {
        warn!("target density is a sampled grid; convexity of the program is not guaranteed");
    }
    let start = Instant::now();
    let variant = opts.variant;
    let mesh = &inst.mesh;
    mesh.check_nondegenerate()?;
    let tol_cost = T::lit(opts.tol_cost);
    let tol_feas = T::lit(opts.tol_feas);

    let init = feasible_init(inst)?;
    let init_res = residuals(mesh, &init, &inst.target)?;
    if !(init_res.hyperplane_max < T::zero() && init_res.target_max == T::zero() && init_res.min_eig_h > T::zero()) {
        return Err(Error::Solver("starting point is not strictly feasible".into()));
    }
    let initial_cost = objective(mesh, &init.eta, &inst.f, &inst.g, variant)?;
    let prog = BarrierProgram::new(inst, variant)?;
    let nu = prog.barrier_parameter();

    let mut z = prog.pack(&init);
    let mut best = (init.clone(), initial_cost);
    let mut trace = Vec::new();
    let mut newton_iters = 0;
    let mut outer_iters = 0;
    let mut stalls = 0;
    let mut reason = StopReason::IterationCap;

    if initial_cost <= tol_cost {
        reason = StopReason::CostBelowTolerance;
    } else {
        let mut tau = nu / initial_cost;
        'outer: for stage in 0..opts.max_outer {
            outer_iters = stage + 1;
            let mut f = prog
                .value(&z, tau)?
                .ok_or_else(|| Error::Solver("iterate left the barrier domain".into()))?;
            for _ in 0..opts.max_newton {
                let (dz, grad) = prog.newton_direction(&z, tau)?;
                newton_iters += 1;
                let slope = dot(&grad, &dz);
                if -slope / T::lit(2.0) <= T::lit(NEWTON_TOL) {
                    break;
                }
                match prog.line_search(&z, &dz, tau, f, slope)? {
                    StepOutcome::Accepted { alpha, value } => {
                        for k in 0..z.len() {
                            z[k] += alpha * dz[k];
                        }
                        f = value;
                    }
                    StepOutcome::Failed => {
                        stalls += 1;
                        debug!("line search failed at stage {stage} (stall {stalls})");
                        break;
                    }
                }
            }
            let dv = prog.unpack(&z);
            let cost = objective(mesh, &dv.eta, &inst.f, &inst.g, variant)?;
            if cost < best.1 {
                best = (dv, cost);
            }
            trace.push(best.1);
            debug!("stage {stage}: tau {tau:e}, cost {cost:e}, best {:e}", best.1);
            if best.1 <= tol_cost {
                reason = StopReason::CostBelowTolerance;
                break 'outer;
            }
            if nu / tau < tol_cost {
                reason = StopReason::GapBelowTolerance;
                break 'outer;
            }
            if stalls >= MAX_STALLS {
                break 'outer;
            }
            tau *= T::lit(opts.barrier_mu);
        }
    }

    let mut subgrad_iters = 0;
    if stalls >= MAX_STALLS && opts.fallback && reason == StopReason::IterationCap {
        info!("Newton iteration stalled; switching to projected subgradient");
        let data = barrier_data(inst)?;
        let (dv, cost, iters) = subgradient::projected_subgradient(inst, &data, variant, best.0.clone(), FALLBACK_ITERS)?;
        subgrad_iters = iters;
        if cost < best.1 {
            best = (dv, cost);
        }
        trace.push(best.1);
        reason = StopReason::Fallback;
    }

    let (dv, cost) = best;
    let res = residuals(mesh, &dv, &inst.target)?;
    check_solution(&res, variant, tol_feas)?;
    let b_offset = normalizing_offset(mesh, &dv);
    let report = SolveReport {
        cost,
        initial_cost,
        residuals: res,
        outer_iters,
        newton_iters,
        subgrad_iters,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged: reason.converged(),
        reason,
        trace,
    };
    info!(
        "solve finished: cost {cost:e} after {outer_iters} stages / {newton_iters} Newton steps ({reason:?})"
    );
    Ok((
        Solution {
            dv,
            b_offset,
            cost,
            variant,
        },
        report,
    ))
}

fn barrier_data<T: Scalar>(inst: &ProblemInstance<T>) -> Result<Vec<local::SimplexData<T>>> {
    local::SimplexData::build(&inst.mesh, &inst.f)
}
