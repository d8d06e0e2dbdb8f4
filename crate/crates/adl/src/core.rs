//! Shared domain types: sampler state, dynamics parameters in raw and
//! normalized form, deterministic splittable randomness, and observables.
//!
//! Two parametrizations of the same dynamics are supported. The raw form
//! carries the thermostat mass `nu` and the noise amplitudes `sigma_a`
//! (applied) and `sigma_g` (gradient), with friction variable `zeta`. The
//! normalized form carries `gamma = beta (sigma_a^2 + sigma_g^2) / 2` and
//! `epsilon = sqrt(nu)`, with friction variable `xi = epsilon (zeta - gamma)`.
//! The invariant measure in normalized variables does not depend on
//! `(gamma, epsilon)`, which is what makes parameter sweeps meaningful.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use std::fmt;
use std::sync::Arc;

/// Which friction variable a [`SamplerState`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    /// Friction is `xi` (normalized dynamics).
    Normalized,
    /// Friction is `zeta` (raw dynamics).
    Raw,
}

/// One point of the extended phase space `(q, p, friction)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub friction: f64,
    pub form: Form,
}

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositiveParam { name: &'static str, value: f64 },
    #[error("degenerate noise: sigma_a = sigma_g = 0 gives gamma = 0, which is not admitted")]
    DegenerateNoise,
    #[error("raw parameter record required to convert to raw form")]
    MissingRaw,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("state entries must be finite")]
    NonFinite,
    #[error("state vectors must have length >= 1")]
    EmptyState,
}

impl SamplerState {
    pub fn new(q: Vec<f64>, p: Vec<f64>, friction: f64, form: Form) -> Result<Self, CoreError> {
        if q.is_empty() {
            return Err(CoreError::EmptyState);
        }
        if q.len() != p.len() {
            return Err(CoreError::DimensionMismatch {
                expected: q.len(),
                got: p.len(),
            });
        }
        let state = Self { q, p, friction, form };
        if !state.is_finite() {
            return Err(CoreError::NonFinite);
        }
        Ok(state)
    }

    pub fn normalized(q: Vec<f64>, p: Vec<f64>, xi: f64) -> Result<Self, CoreError> {
        Self::new(q, p, xi, Form::Normalized)
    }

    pub fn raw(q: Vec<f64>, p: Vec<f64>, zeta: f64) -> Result<Self, CoreError> {
        Self::new(q, p, zeta, Form::Raw)
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.friction.is_finite()
            && self.q.iter().all(|x| x.is_finite())
            && self.p.iter().all(|x| x.is_finite())
    }
}

/// Raw parametrization: thermostat mass and noise amplitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawParams {
    pub nu: f64,
    pub sigma_a: f64,
    pub sigma_g: f64,
}

/// Dynamics parameters in normalized form, optionally retaining the raw record.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsParams {
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub n: usize,
    pub raw: Option<RawParams>,
}

fn require_positive(name: &'static str, value: f64) -> Result<(), CoreError> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(CoreError::NonPositiveParam { name, value });
    }
    Ok(())
}

impl DynamicsParams {
    /// Parameters given directly in normalized form (no raw record).
    pub fn normalized(beta: f64, gamma: f64, epsilon: f64, n: usize) -> Result<Self, CoreError> {
        require_positive("beta", beta)?;
        require_positive("gamma", gamma)?;
        require_positive("epsilon", epsilon)?;
        if n == 0 {
            return Err(CoreError::EmptyState);
        }
        Ok(Self { beta, gamma, epsilon, n, raw: None })
    }

    /// Normalize raw parameters: `gamma = beta (sigma_a^2 + sigma_g^2) / 2`,
    /// `epsilon = sqrt(nu)`. The raw record is retained.
    pub fn from_raw(
        beta: f64,
        nu: f64,
        sigma_a: f64,
        sigma_g: f64,
        n: usize,
    ) -> Result<Self, CoreError> {
        require_positive("beta", beta)?;
        require_positive("nu", nu)?;
        if sigma_a < 0.0 || sigma_g < 0.0 || !sigma_a.is_finite() || !sigma_g.is_finite() {
            return Err(CoreError::NonPositiveParam {
                name: "sigma",
                value: sigma_a.min(sigma_g),
            });
        }
        let s2 = sigma_a * sigma_a + sigma_g * sigma_g;
        if s2 == 0.0 {
            return Err(CoreError::DegenerateNoise);
        }
        if n == 0 {
            return Err(CoreError::EmptyState);
        }
        Ok(Self {
            beta,
            gamma: beta * s2 / 2.0,
            epsilon: nu.sqrt(),
            n,
            raw: Some(RawParams { nu, sigma_a, sigma_g }),
        })
    }
}

/// Convert the friction variable between forms: `zeta = gamma + xi / epsilon`.
/// Positions and momenta are untouched.
pub fn friction_convert(
    state: &SamplerState,
    params: &DynamicsParams,
    target: Form,
) -> Result<SamplerState, CoreError> {
    if state.form == target {
        return Ok(state.clone());
    }
    let friction = match target {
        Form::Raw => {
            if params.raw.is_none() {
                return Err(CoreError::MissingRaw);
            }
            params.gamma + state.friction / params.epsilon
        }
        Form::Normalized => params.epsilon * (state.friction - params.gamma),
    };
    Ok(SamplerState {
        q: state.q.clone(),
        p: state.p.clone(),
        friction,
        form: target,
    })
}

/// Deterministic random stream keyed by `(seed, stream_id)`.
///
/// Backed by a counter-based generator, so identical keys give bit-identical
/// sequences regardless of thread scheduling, and distinct stream ids give
/// independent streams. Each replica of an ensemble derives its own stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn derive(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// One standard normal variate.
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// `count` standard normal variates.
    pub fn gaussian_vec(&mut self, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.standard_normal()).collect()
    }

    /// Uniform variate on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `0..bound`.
    pub fn uniform_index(&mut self, bound: usize) -> usize {
        self.rng.random_range(0..bound)
    }
}

type ObservableFn = Arc<dyn Fn(&SamplerState) -> f64 + Send + Sync>;

/// A named scalar function of the sampler state.
///
/// The polynomial shorthands (`q`, `q2`, ...) read the first coordinate,
/// matching the one-dimensional model experiments; `coord`/`coord2` select
/// a coordinate of a multivariate run, and `custom` wraps an arbitrary
/// closure (used e.g. for held-out likelihood observables).
#[derive(Clone)]
pub enum Observable {
    Q,
    Q2,
    P,
    P2,
    Xi,
    Xi2,
    QP,
    Coord(usize),
    CoordSq(usize),
    Custom { name: String, f: ObservableFn },
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::Q => "q".into(),
            Observable::Q2 => "q2".into(),
            Observable::P => "p".into(),
            Observable::P2 => "p2".into(),
            Observable::Xi => "xi".into(),
            Observable::Xi2 => "xi2".into(),
            Observable::QP => "qp".into(),
            Observable::Coord(i) => format!("q{i}"),
            Observable::CoordSq(i) => format!("q{i}sq"),
            Observable::Custom { name, .. } => name.clone(),
        }
    }

    pub fn eval(&self, s: &SamplerState) -> f64 {
        match self {
            Observable::Q => s.q[0],
            Observable::Q2 => s.q[0] * s.q[0],
            Observable::P => s.p[0],
            Observable::P2 => s.p[0] * s.p[0],
            Observable::Xi => s.friction,
            Observable::Xi2 => s.friction * s.friction,
            Observable::QP => s.q[0] * s.p[0],
            Observable::Coord(i) => s.q[*i],
            Observable::CoordSq(i) => s.q[*i] * s.q[*i],
            Observable::Custom { f, .. } => f(s),
        }
    }

    /// Parse a polynomial shorthand name.
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "q" => Some(Observable::Q),
            "q2" => Some(Observable::Q2),
            "p" => Some(Observable::P),
            "p2" => Some(Observable::P2),
            "xi" => Some(Observable::Xi),
            "xi2" => Some(Observable::Xi2),
            "qp" => Some(Observable::QP),
            _ => None,
        }
    }
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Observable({})", self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let p = DynamicsParams::from_raw(1.0, 1.0, 2.0_f64.sqrt(), 0.0, 1).unwrap();
        assert!((p.gamma - 1.0).abs() < 1e-15);
        assert!((p.epsilon - 1.0).abs() < 1e-15);

        let p = DynamicsParams::from_raw(2.0, 4.0, 1.0, 1.0, 1).unwrap();
        assert!((p.gamma - 2.0).abs() < 1e-15);
        assert!((p.epsilon - 2.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_rejects_degenerate_noise() {
        assert!(matches!(
            DynamicsParams::from_raw(1.0, 1.0, 0.0, 0.0, 1),
            Err(CoreError::DegenerateNoise)
        ));
    }

    #[test]
    fn normalize_rejects_nonpositive() {
        assert!(DynamicsParams::from_raw(-1.0, 1.0, 1.0, 0.0, 1).is_err());
        assert!(DynamicsParams::from_raw(1.0, 0.0, 1.0, 0.0, 1).is_err());
        assert!(DynamicsParams::normalized(1.0, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn raw_record_consistency() {
        let p = DynamicsParams::from_raw(1.7, 0.3, 0.4, 1.1, 2).unwrap();
        let raw = p.raw.unwrap();
        assert!((raw.nu - p.epsilon * p.epsilon).abs() <= 1e-12 * raw.nu);
        let g = p.beta * (raw.sigma_a.powi(2) + raw.sigma_g.powi(2)) / 2.0;
        assert!((g - p.gamma).abs() <= 1e-12 * g.abs());
    }

    #[test]
    fn friction_convert_examples() {
        let params = DynamicsParams::from_raw(1.0, 4.0, 1.0, 1.0, 1).unwrap();
        // gamma = 1, epsilon = 2
        let s = SamplerState::raw(vec![0.5], vec![-0.5], params.gamma).unwrap();
        let n = friction_convert(&s, &params, Form::Normalized).unwrap();
        assert_eq!(n.friction, 0.0);

        // (gamma=1, eps=2, xi=4) -> zeta = 3
        let s = SamplerState::normalized(vec![0.0], vec![0.0], 4.0).unwrap();
        let r = friction_convert(&s, &params, Form::Raw).unwrap();
        assert!((r.friction - 3.0).abs() < 1e-14);
    }

    #[test]
    fn friction_convert_requires_raw_record() {
        let params = DynamicsParams::normalized(1.0, 1.0, 1.0, 1).unwrap();
        let s = SamplerState::normalized(vec![0.0], vec![0.0], 1.0).unwrap();
        assert!(matches!(
            friction_convert(&s, &params, Form::Raw),
            Err(CoreError::MissingRaw)
        ));
    }

    #[test]
    fn rng_determinism_and_stream_separation() {
        let a: Vec<f64> = RngStream::derive(42, 0).gaussian_vec(64);
        let b: Vec<f64> = RngStream::derive(42, 0).gaussian_vec(64);
        assert_eq!(a, b);
        let c: Vec<f64> = RngStream::derive(42, 1).gaussian_vec(64);
        assert_ne!(a[0], c[0]);
    }

    #[test]
    fn rng_gaussian_moments() {
        let mut s = RngStream::derive(123, 7);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let x = s.standard_normal();
            sum += x;
            sum2 += x * x;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!(mean.abs() < 5e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-2, "var {var}");
    }

    #[test]
    fn state_invariants() {
        assert!(SamplerState::normalized(vec![], vec![], 0.0).is_err());
        assert!(SamplerState::normalized(vec![1.0], vec![1.0, 2.0], 0.0).is_err());
        assert!(SamplerState::normalized(vec![f64::NAN], vec![0.0], 0.0).is_err());
    }

    #[test]
    fn observable_names_and_eval() {
        let s = SamplerState::normalized(vec![2.0, 3.0], vec![-1.0, 0.5], 0.25).unwrap();
        assert_eq!(Observable::Q.eval(&s), 2.0);
        assert_eq!(Observable::Q2.eval(&s), 4.0);
        assert_eq!(Observable::P2.eval(&s), 1.0);
        assert_eq!(Observable::QP.eval(&s), -2.0);
        assert_eq!(Observable::Xi.eval(&s), 0.25);
        assert_eq!(Observable::Coord(1).eval(&s), 3.0);
        assert_eq!(Observable::parse("xi2").unwrap().name(), "xi2");
        assert!(Observable::parse("nope").is_none());
    }
}
