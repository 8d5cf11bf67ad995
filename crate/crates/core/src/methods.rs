//! Named solver strategies behind a common interface.
//!
//! A [`MethodRegistry`] maps names such as `ibpdca-sc1` to boxed [`Method`]
//! implementations so drivers can select solvers at runtime. Starting points
//! come from a separate [`Initializer`], timed on its own.

use std::time::Instant;

use nalgebra::DVector;

use crate::baselines::{fista_l1ls, pdcae_solve, PdcaeParams};
use crate::con::{con_initial_point, ConProblem, ConSubsolver};
use crate::error::{Error, Result};
use crate::ibpdca::{self, Criterion, DcProblem, SolveReport, SolverParams};
use crate::reg::{RegProblem, RegSubsolver};
use crate::ssn::SsnParams;

/// Iteration cap used for the regularized problem.
pub const REG_MAX_ITER: usize = 30_000;
/// Iteration cap used for the constrained problem.
pub const CON_MAX_ITER: usize = 20_000;
/// Iterations spent by the default initializer.
pub const INIT_ITERS: usize = 200;

pub enum ProblemSetup {
    Reg(RegProblem),
    Con(ConProblem),
}

impl ProblemSetup {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemSetup::Reg(_) => "l12reg",
            ProblemSetup::Con(_) => "l12con",
        }
    }

    pub fn as_dc(&self) -> &dyn DcProblem {
        match self {
            ProblemSetup::Reg(p) => p,
            ProblemSetup::Con(p) => p,
        }
    }

    pub fn default_max_iter(&self) -> usize {
        match self {
            ProblemSetup::Reg(_) => REG_MAX_ITER,
            ProblemSetup::Con(_) => CON_MAX_ITER,
        }
    }
}

/// Overrides applied on top of each method's standard settings.
#[derive(Debug, Clone, Default)]
pub struct MethodOptions {
    pub max_iter: Option<usize>,
    pub sigma: Option<f64>,
    pub ssn: SsnParams,
}

pub trait Method: Send + Sync {
    fn name(&self) -> &str;
    fn supports(&self, setup: &ProblemSetup) -> bool;
    fn solve(&self, setup: &ProblemSetup, x0: &DVector<f64>, opts: &MethodOptions) -> Result<SolveReport>;
}

pub trait Initializer: Send + Sync {
    fn name(&self) -> &str;
    fn initial_point(&self, setup: &ProblemSetup) -> Result<DVector<f64>>;
}

/// FISTA with backtracking. For the regularized problem it uses the
/// problem's own `lambda`; for the constrained problem see
/// [`con_initial_point`].
#[derive(Debug, Clone)]
pub struct FistaInitializer {
    pub iters: usize,
}

impl Default for FistaInitializer {
    fn default() -> Self {
        Self { iters: INIT_ITERS }
    }
}

impl Initializer for FistaInitializer {
    fn name(&self) -> &str {
        "fista"
    }

    fn initial_point(&self, setup: &ProblemSetup) -> Result<DVector<f64>> {
        match setup {
            ProblemSetup::Reg(p) => Ok(fista_l1ls(p.a(), p.b(), p.lambda(), self.iters)?.x),
            ProblemSetup::Con(p) => con_initial_point(p, self.iters),
        }
    }
}

/// The inexact Bregman proximal DC method with a dual SSN subsolver.
#[derive(Debug, Clone)]
pub struct Ibpdca {
    criterion: Criterion,
    name: String,
}

impl Ibpdca {
    pub fn new(criterion: Criterion) -> Self {
        Self {
            criterion,
            name: format!("ibpdca-{criterion}"),
        }
    }

    pub fn params(&self, setup: &ProblemSetup, opts: &MethodOptions) -> SolverParams {
        let mut params = SolverParams::standard(self.criterion, opts.max_iter.unwrap_or(setup.default_max_iter()));
        if let Some(sigma) = opts.sigma {
            params.sigma = sigma;
        }
        params
    }
}

impl Method for Ibpdca {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports(&self, _setup: &ProblemSetup) -> bool {
        true
    }

    fn solve(&self, setup: &ProblemSetup, x0: &DVector<f64>, opts: &MethodOptions) -> Result<SolveReport> {
        let params = self.params(setup, opts);
        let result = match setup {
            ProblemSetup::Reg(p) => ibpdca::run(p, &mut RegSubsolver::new(p, opts.ssn.clone())?, &params, x0, None),
            ProblemSetup::Con(p) => ibpdca::run(p, &mut ConSubsolver::new(p, opts.ssn.clone())?, &params, x0, None),
        };
        match result {
            Ok(mut report) => {
                report.method = self.name.clone();
                Ok(report)
            }
            Err(Error::SubsolverStalled {
                outer_iter,
                inner_iters,
                partial,
            }) => Err(Error::SubsolverStalled {
                outer_iter,
                inner_iters,
                partial: partial.map(|mut r| {
                    r.method = self.name.clone();
                    r
                }),
            }),
            Err(e) => Err(e),
        }
    }
}

/// Proximal DC algorithm with extrapolation; regularized problem only.
#[derive(Debug, Clone, Default)]
pub struct Pdcae;

impl Method for Pdcae {
    fn name(&self) -> &str {
        "pdcae"
    }

    fn supports(&self, setup: &ProblemSetup) -> bool {
        matches!(setup, ProblemSetup::Reg(_))
    }

    fn solve(&self, setup: &ProblemSetup, x0: &DVector<f64>, opts: &MethodOptions) -> Result<SolveReport> {
        match setup {
            ProblemSetup::Reg(p) => {
                let params = PdcaeParams::standard(opts.max_iter.unwrap_or(REG_MAX_ITER));
                pdcae_solve(p, &params, x0)
            }
            ProblemSetup::Con(_) => Err(Error::InvalidParameter(
                "pdcae only handles the regularized problem".into(),
            )),
        }
    }
}

pub struct MethodRegistry {
    methods: Vec<Box<dyn Method>>,
}

impl Default for MethodRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Ibpdca::new(Criterion::Sc1)));
        r.register(Box::new(Ibpdca::new(Criterion::Sc2)));
        r.register(Box::new(Pdcae));
        r
    }
}

impl MethodRegistry {
    pub fn empty() -> Self {
        Self { methods: Vec::new() }
    }

    /// Adds `method`, replacing any existing entry with the same name.
    pub fn register(&mut self, method: Box<dyn Method>) {
        self.methods.retain(|m| m.name() != method.name());
        self.methods.push(method);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Method> {
        self.methods
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| {
                Error::InvalidParameter(format!("unknown method '{name}' (known: {})", self.names().join(", ")))
            })
    }

    pub fn names(&self) -> Vec<&str> {
        self.methods.iter().map(|m| m.name()).collect()
    }
}

/// A solve together with the time spent producing its starting point.
#[derive(Debug, Clone)]
pub struct TimedRun {
    pub report: SolveReport,
    pub x0: DVector<f64>,
    /// Initializer seconds.
    pub t0: f64,
}

/// Computes a starting point with `init` and runs `method` from it.
pub fn run_timed(
    method: &dyn Method,
    init: &dyn Initializer,
    setup: &ProblemSetup,
    opts: &MethodOptions,
) -> Result<TimedRun> {
    if !method.supports(setup) {
        return Err(Error::InvalidParameter(format!(
            "method '{}' does not support {}",
            method.name(),
            setup.kind()
        )));
    }
    let start = Instant::now();
    let x0 = init.initial_point(setup)?;
    let t0 = start.elapsed().as_secs_f64();
    let report = method.solve(setup, &x0, opts)?;
    Ok(TimedRun { report, x0, t0 })
}
