//! Monte Carlo paths of the CBI jump-diffusion, the split construction of
//! `X_{t+T}`, and sampling of perpetuities `Σ A^k C_k`.
//!
//! One step of length `h` from `X`:
//! the linear part `β + A X` with `A = B − diag(∫(z_ℓ∧1) μ_ℓ)` is advanced by
//! its exact flow, each type gets a square-root diffusion increment frozen at
//! the left endpoint, branching and immigration jumps arrive as Poisson
//! counts with left-endpoint rates, and the result is clamped at zero.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dvec};
use crate::measures::DiscreteMeasure;
use crate::model::{CbiParams, InitialState};
use crate::rng;

/// Which grid points a path keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Record {
    #[default]
    Terminal,
    Full,
    Stride(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub record: Record,
    #[serde(default)]
    pub log_jumps: bool,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64, n_paths: usize, seed: u64) -> Self {
        SimConfig {
            horizon,
            dt,
            n_paths,
            seed,
            record: Record::Terminal,
            log_jumps: false,
        }
    }

    pub fn with_record(mut self, record: Record) -> Self {
        self.record = record;
        self
    }

    pub fn with_jump_log(mut self) -> Self {
        self.log_jumps = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon T = {} must be positive", self.horizon));
        }
        if !(self.dt > 0.0 && self.dt <= self.horizon) {
            return bad(format!("dt = {} must lie in (0, T]", self.dt));
        }
        if self.n_paths == 0 {
            return bad("n_paths must be at least 1".into());
        }
        if self.record == Record::Stride(0) {
            return bad("record stride must be at least 1".into());
        }
        Ok(())
    }

    /// Number of steps and the step actually used (`T` divided evenly).
    pub fn grid(&self) -> (usize, f64) {
        time_grid(self.horizon, self.dt)
    }
}

pub fn time_grid(horizon: f64, dt: f64) -> (usize, f64) {
    let n = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    (n, horizon / n as f64)
}

/// `min(0.01, 0.01 / max(1, s))`
pub fn default_dt(s: f64) -> f64 {
    0.01f64.min(0.01 / s.max(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpSource {
    Branching(usize),
    Immigration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    /// Index of the step (its left endpoint is `step · h`).
    pub step: usize,
    pub time: f64,
    pub source: JumpSource,
    pub jump: Vec<f64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump_log: Option<Vec<JumpEvent>>,
}

impl Path {
    pub fn terminal(&self) -> DVector<f64> {
        DVector::from_vec(self.states.last().expect("path has states").clone())
    }

    pub fn initial(&self) -> DVector<f64> {
        DVector::from_vec(self.states[0].clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ensemble {
    pub paths: Vec<Path>,
    pub config: SimConfig,
    pub params_hash: String,
}

impl Ensemble {
    pub fn terminal(&self) -> Vec<DVector<f64>> {
        self.paths.iter().map(Path::terminal).collect()
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.paths.first().map_or(0, |p| p.states[0].len())
    }
}

/// Categorical sampler over the atoms of a finite measure.
#[derive(Debug, Clone)]
struct JumpLaw {
    total: f64,
    points: Vec<DVector<f64>>,
    probs: Vec<f64>,
}

impl JumpLaw {
    fn new(m: &DiscreteMeasure) -> Self {
        let total = m.total_mass();
        JumpLaw {
            total,
            points: m.atoms().iter().map(|a| DVector::from_vec(a.point.clone())).collect(),
            probs: m.atoms().iter().map(|a| a.mass / total).collect(),
        }
    }

    /// Splits `k` jumps over the atoms by sequential binomials; returns
    /// `(atom index, count)` for every atom that received jumps.
    fn split(&self, k: u64, rng: &mut ChaCha8Rng) -> Vec<(usize, u64)> {
        let mut out = Vec::new();
        let mut left = k;
        let mut rest = 1.0;
        for (i, p) in self.probs.iter().enumerate() {
            if left == 0 {
                break;
            }
            let n = if i + 1 == self.probs.len() {
                left
            } else {
                let q = (p / rest).clamp(0.0, 1.0);
                Binomial::new(left, q).expect("valid binomial").sample(rng)
            };
            if n > 0 {
                out.push((i, n));
            }
            left -= n;
            rest -= p;
        }
        out
    }
}

fn poisson(rate: f64, rng: &mut ChaCha8Rng) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("positive finite rate").sample(rng) as u64
}

/// Precomputed one-step quantities for a fixed parameter set and grid.
#[derive(Debug, Clone)]
pub struct Stepper {
    d: usize,
    steps: usize,
    h: f64,
    flow: DMatrix<f64>,
    offset: DVector<f64>,
    diffusion: Vec<f64>,
    branching: Vec<JumpLaw>,
    immigration: JumpLaw,
}

impl Stepper {
    pub fn new(params: &CbiParams, horizon: f64, dt: f64) -> Self {
        let (steps, h) = time_grid(horizon, dt);
        let (flow, offset) = linalg::affine_flow(&params.compensated_drift(), &params.beta_vec(), h);
        Stepper {
            d: params.d,
            steps,
            h,
            flow,
            offset,
            diffusion: params.c.iter().map(|c| 2.0 * c * h).collect(),
            branching: params.mu.iter().map(JumpLaw::new).collect(),
            immigration: JumpLaw::new(&params.nu),
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    fn step(
        &self,
        x: &DVector<f64>,
        k: usize,
        rng: &mut ChaCha8Rng,
        log: Option<&mut Vec<JumpEvent>>,
    ) -> DVector<f64> {
        let time = k as f64 * self.h;
        let mut next = &self.flow * x + &self.offset;
        for l in 0..self.d {
            if self.diffusion[l] > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                next[l] += (self.diffusion[l] * x[l].max(0.0)).sqrt() * z;
            }
        }
        let mut events = Vec::new();
        for (l, law) in self.branching.iter().enumerate() {
            let count = poisson(x[l].max(0.0) * law.total * self.h, rng);
            if count > 0 {
                for (i, n) in law.split(count, rng) {
                    next.axpy(n as f64, &law.points[i], 1.0);
                    events.push((JumpSource::Branching(l), i, n));
                }
            }
        }
        let count = poisson(self.immigration.total * self.h, rng);
        if count > 0 {
            for (i, n) in self.immigration.split(count, rng) {
                next.axpy(n as f64, &self.immigration.points[i], 1.0);
                events.push((JumpSource::Immigration, i, n));
            }
        }
        if let Some(log) = log {
            for (source, i, n) in events {
                let law = match source {
                    JumpSource::Branching(l) => &self.branching[l],
                    JumpSource::Immigration => &self.immigration,
                };
                log.push(JumpEvent {
                    step: k,
                    time,
                    source,
                    jump: law.points[i].as_slice().to_vec(),
                    count: n,
                });
            }
        }
        next.iter_mut().for_each(|v| *v = v.max(0.0));
        next
    }

    /// Runs one path from `x0`.
    pub fn run(
        &self,
        x0: &DVector<f64>,
        record: Record,
        log_jumps: bool,
        rng: &mut ChaCha8Rng,
        path_index: u64,
    ) -> Result<Path> {
        let keep = |k: usize| match record {
            Record::Terminal => k == 0 || k == self.steps,
            Record::Full => true,
            Record::Stride(m) => k.is_multiple_of(m) || k == self.steps,
        };
        let mut times = vec![0.0];
        let mut states = vec![x0.as_slice().to_vec()];
        let mut log = log_jumps.then(Vec::new);
        let mut x = x0.clone();
        for k in 0..self.steps {
            x = self.step(&x, k, rng, log.as_mut());
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState {
                    path_index,
                    time: (k + 1) as f64 * self.h,
                });
            }
            if keep(k + 1) {
                times.push((k + 1) as f64 * self.h);
                states.push(x.as_slice().to_vec());
            }
        }
        Ok(Path {
            times,
            states,
            jump_log: log,
        })
    }
}

fn sample_initial(x0: &InitialState, rng: &mut ChaCha8Rng) -> DVector<f64> {
    match x0 {
        InitialState::Deterministic(x) => DVector::from_vec(x.clone()),
        InitialState::Discrete { discrete } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for w in discrete {
                acc += w.prob;
                if u < acc {
                    return DVector::from_vec(w.point.clone());
                }
            }
            DVector::from_vec(discrete.last().expect("non-empty support").point.clone())
        }
    }
}

fn check_inputs(params: &CbiParams, x0: &InitialState, cfg: &SimConfig) -> Result<()> {
    params.ensure_valid()?;
    cfg.validate()?;
    let bad = x0.violations(params.d);
    if !bad.is_empty() {
        return Err(Error::InvalidConfig(bad.join("; ")));
    }
    Ok(())
}

/// Path `path_index` of the ensemble keyed by `cfg.seed`.
pub fn simulate_path(params: &CbiParams, x0: &InitialState, cfg: &SimConfig, path_index: u64) -> Result<Path> {
    check_inputs(params, x0, cfg)?;
    let stepper = Stepper::new(params, cfg.horizon, cfg.dt);
    let mut rng = rng::stream(cfg.seed, path_index);
    let start = sample_initial(x0, &mut rng);
    stepper.run(&start, cfg.record, cfg.log_jumps, &mut rng, path_index)
}

/// `cfg.n_paths` independent paths; identical output for any thread count.
pub fn simulate_ensemble(params: &CbiParams, x0: &InitialState, cfg: &SimConfig) -> Result<Ensemble> {
    check_inputs(params, x0, cfg)?;
    let stepper = Stepper::new(params, cfg.horizon, cfg.dt);
    let paths = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(cfg.seed, i);
            let start = sample_initial(x0, &mut rng);
            stepper.run(&start, cfg.record, cfg.log_jumps, &mut rng, i)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        paths,
        config: cfg.clone(),
        params_hash: params.hash(),
    })
}

/// As [`simulate_ensemble`], on a dedicated pool of `threads` workers.
pub fn simulate_ensemble_on(
    params: &CbiParams,
    x0: &InitialState,
    cfg: &SimConfig,
    threads: usize,
) -> Result<Ensemble> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    pool.install(|| simulate_ensemble(params, x0, cfg))
}

fn terminal_states(
    params: &CbiParams,
    starts: &[DVector<f64>],
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if horizon <= 0.0 {
        return Ok(starts.to_vec());
    }
    let stepper = Stepper::new(params, horizon, dt.min(horizon));
    starts
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = rng::stream(seed, i as u64);
            Ok(stepper.run(x, Record::Terminal, false, &mut rng, i as u64)?.terminal())
        })
        .collect()
}

/// Samples for comparing `X_{t+T}` with `X_t⁽¹⁾ + X_t⁽²ᵀ⁾`, where `X⁽¹⁾` is the
/// full process from zero and `X⁽²ᵀ⁾` is the immigration-free process started
/// from an independent copy of `X_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionSamples {
    pub direct: Vec<DVector<f64>>,
    pub split: Vec<DVector<f64>>,
}

pub fn simulate_decomposition_pair(
    params: &CbiParams,
    x0: &InitialState,
    t: f64,
    big_t: f64,
    cfg: &SimConfig,
) -> Result<DecompositionSamples> {
    params.ensure_valid()?;
    if !(t > 0.0 && big_t >= 0.0 && cfg.dt > 0.0 && cfg.n_paths > 0) {
        return Err(Error::InvalidConfig(format!(
            "decomposition needs t > 0, T >= 0, dt > 0 and paths > 0 (t={t}, T={big_t})"
        )));
    }
    let n = cfg.n_paths;
    let seed = cfg.seed;
    let draw_starts = |tag: u64| -> Vec<DVector<f64>> {
        (0..n as u64)
            .map(|i| sample_initial(x0, &mut rng::stream(rng::derive_seed(seed, tag + 100), i)))
            .collect()
    };
    let direct = terminal_states(params, &draw_starts(0), t + big_t, cfg.dt, rng::derive_seed(seed, 0))?;
    let at_big_t = terminal_states(params, &draw_starts(1), big_t, cfg.dt, rng::derive_seed(seed, 1))?;
    let zeros = vec![DVector::zeros(params.d); n];
    let first = terminal_states(params, &zeros, t, cfg.dt, rng::derive_seed(seed, 2))?;
    let second = terminal_states(
        &params.without_immigration(),
        &at_big_t,
        t,
        cfg.dt,
        rng::derive_seed(seed, 3),
    )?;
    let split = first.iter().zip(&second).map(|(a, b)| a + b).collect();
    Ok(DecompositionSamples { direct, split })
}

/// Finite law of the perpetuity summand `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummandLaw {
    pub outcomes: Vec<SummandOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummandOutcome {
    #[serde(with = "dvec")]
    pub value: DVector<f64>,
    pub prob: f64,
}

impl SummandLaw {
    pub fn new(outcomes: Vec<(DVector<f64>, f64)>) -> Self {
        SummandLaw {
            outcomes: outcomes
                .into_iter()
                .map(|(value, prob)| SummandOutcome { value, prob })
                .collect(),
        }
    }

    pub fn mean_norm(&self) -> f64 {
        self.outcomes.iter().map(|o| o.prob * o.value.norm()).sum()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> &DVector<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for o in &self.outcomes {
            acc += o.prob;
            if u < acc {
                return &o.value;
            }
        }
        &self.outcomes.last().expect("non-empty law").value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerpetuitySample {
    pub samples: Vec<DVector<f64>>,
    /// `A X + C` with a fresh `C` for every sample.
    pub swept: Vec<DVector<f64>>,
    pub n_terms: usize,
}

/// Smallest `n` with `‖Aⁿ‖ E‖C‖ < 1e−12`.
pub fn perpetuity_terms_needed(a: &DMatrix<f64>, mean_norm: f64) -> usize {
    let mut power = DMatrix::identity(a.nrows(), a.ncols());
    for n in 0..1_000_000 {
        if linalg::operator_norm(&power) * mean_norm < 1e-12 {
            return n.max(1);
        }
        power = &power * a;
    }
    1_000_000
}

pub fn perpetuity_sample(
    a: &DMatrix<f64>,
    law: &SummandLaw,
    n_terms: Option<usize>,
    n_samples: usize,
    seed: u64,
) -> Result<PerpetuitySample> {
    let dim = a.nrows();
    if a.ncols() != dim {
        return Err(Error::DimensionMismatch { what: "perpetuity coefficient", expected: dim, found: a.ncols() });
    }
    if law.outcomes.is_empty()
        || law.outcomes.iter().any(|o| o.value.len() != dim || !(o.prob >= 0.0))
        || (law.outcomes.iter().map(|o| o.prob).sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidConfig("summand law must be a probability vector over points of matching dimension".into()));
    }
    let radius = linalg::spectral_radius(a).ok_or(Error::EigenSolver)?;
    if radius >= 1.0 {
        return Err(Error::NotContracting(radius));
    }
    if a.determinant().abs() <= f64::EPSILON * linalg::operator_norm(a).powi(dim as i32) {
        return Err(Error::SingularCoefficient);
    }
    let required = perpetuity_terms_needed(a, law.mean_norm());
    let n_terms = match n_terms {
        Some(n) if n < required => {
            let bound = {
                let mut p = DMatrix::identity(dim, dim);
                for _ in 0..n {
                    p = &p * a;
                }
                linalg::operator_norm(&p) * law.mean_norm()
            };
            return Err(Error::TooFewTerms { requested: n, required, bound });
        }
        Some(n) => n,
        None => required,
    };
    let pairs: Vec<(DVector<f64>, DVector<f64>)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, i);
            let draws: Vec<&DVector<f64>> = (0..n_terms).map(|_| law.sample(&mut rng)).collect();
            let x = draws
                .iter()
                .rev()
                .fold(DVector::zeros(dim), |acc, c| a * acc + *c);
            let swept = a * &x + law.sample(&mut rng);
            (x, swept)
        })
        .collect();
    let (samples, swept) = pairs.into_iter().unzip();
    Ok(PerpetuitySample { samples, swept, n_terms })
}
