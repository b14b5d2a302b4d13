//! Markov transition kernels on the unit sphere.
//!
//! Every kernel proposes a new position, applies the Metropolis-Hastings test
//! `u < min(1, exp(H_init - H_prop))` and then the target's admission test
//! (the hard margin for OOD-ness targets). A proposal is kept only if both
//! pass; otherwise the chain stays where it was and the proposal is dropped.
//!
//! HMC, MALA, mMALA and RMHMC all run the spherical leapfrog integrator:
//! half momentum kick with the tangential gradient, a geodesic rotation of the
//! `(z, q)` pair, and a second half kick at the new position. MALA is HMC with
//! a single leapfrog step. RMHMC draws momentum from the empirical covariance
//! of the last `J + 1` accepted positions; mMALA is RMHMC with one step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::energy::{passes_margin, EnergyContext};
use crate::error::{Error, Result};
use crate::sphere::{geodesic_step, normalize, project_tangent, TangentVector, UnitVector};
use crate::store::ClusterPair;

/// Ridge added to the RMHMC momentum covariance.
pub const COVARIANCE_RIDGE: f64 = 1e-6;
/// Momentum redraws allowed per round after a degenerate evaluation.
pub const DEGENERATE_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    RandomWalk,
    #[default]
    Hmc,
    Mala,
    #[value(name = "mmala")]
    #[serde(rename = "mmala")]
    MMala,
    Rmhmc,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::RandomWalk,
        Variant::Hmc,
        Variant::Mala,
        Variant::MMala,
        Variant::Rmhmc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::RandomWalk => "random_walk",
            Variant::Hmc => "hmc",
            Variant::Mala => "mala",
            Variant::MMala => "mmala",
            Variant::Rmhmc => "rmhmc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    pub leapfrog_steps: usize,
    pub step_size: f64,
    pub rounds: usize,
    pub variant: Variant,
    pub seed: u64,
    /// Number of previous states feeding the RMHMC covariance.
    pub history_len: usize,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            leapfrog_steps: 3,
            step_size: 0.1,
            rounds: 5,
            variant: Variant::Hmc,
            seed: 0,
            history_len: 2,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.leapfrog_steps == 0 {
            return Err(Error::BadConfig("leapfrog_steps must be at least 1".into()));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::BadConfig(format!("step_size must be finite and >= 0, got {}", self.step_size)));
        }
        if self.rounds == 0 {
            return Err(Error::BadConfig("rounds must be at least 1".into()));
        }
        Ok(())
    }

    /// Leapfrog steps actually run; the Langevin variants force one.
    pub fn effective_steps(&self) -> usize {
        match self.variant {
            Variant::Mala | Variant::MMala => 1,
            _ => self.leapfrog_steps,
        }
    }
}

/// A potential on the sphere the kernels can sample from.
pub trait Target {
    fn potential(&self, z: &[f64]) -> Result<f64>;

    /// Potential and its ambient (unprojected) gradient.
    fn potential_and_gradient(&self, z: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Extra acceptance condition applied after the MH test.
    fn admits(&self, _z: &UnitVector, _t_minus: f64) -> Result<bool> {
        Ok(true)
    }
}

impl Target for EnergyContext<'_> {
    fn potential(&self, z: &[f64]) -> Result<f64> {
        let p = self.estimate(z)?.prob;
        if p <= 0.0 {
            return Err(Error::DegenerateDensity);
        }
        Ok(-p.ln())
    }

    fn potential_and_gradient(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        EnergyContext::potential_and_gradient(self, z)
    }

    fn admits(&self, z: &UnitVector, t_minus: f64) -> Result<bool> {
        passes_margin(self.store, z, self.kappa, t_minus)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub round: usize,
    pub position: UnitVector,
}

/// One Markov chain. Owns its random stream so chains can advance on
/// separate workers.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub position: UnitVector,
    pub pair: Option<ClusterPair>,
    pub t_minus: f64,
    /// Accepted positions, in order.
    pub history: Vec<HistoryEntry>,
    /// Rounds completed so far.
    pub round: usize,
    rng: ChaCha8Rng,
}

impl ChainState {
    /// A chain at `start` whose random stream is `(seed, stream)`.
    pub fn new(start: UnitVector, pair: Option<ClusterPair>, t_minus: f64, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        ChainState {
            position: start,
            pair,
            t_minus,
            history: Vec::new(),
            round: 0,
            rng,
        }
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub round: usize,
    pub proposed: UnitVector,
    pub h_init: f64,
    pub h_prop: f64,
    pub alpha: f64,
    pub mh_accept: bool,
    pub margin_pass: bool,
    pub accepted: bool,
    /// Momentum redraws caused by degenerate evaluations this round.
    pub retries: usize,
}

/// Standard normal momentum projected onto the tangent space at `z`.
pub fn draw_momentum(z: &UnitVector, rng: &mut impl Rng) -> TangentVector {
    let g: Vec<f64> = (0..z.dim()).map(|_| rng.sample(StandardNormal)).collect();
    project_tangent(&g, z)
}

/// `U(z) + |q|^2 / 2`.
pub fn hamiltonian(target: &impl Target, z: &UnitVector, q: &TangentVector) -> Result<f64> {
    Ok(target.potential(z.as_slice())? + 0.5 * q.norm_sq())
}

/// End state of a leapfrog trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub position: UnitVector,
    pub momentum: TangentVector,
    /// Potential at `position`.
    pub potential: f64,
}

/// `steps` spherical leapfrog steps of size `eps` from `(z0, q0)`.
pub fn leapfrog_trajectory(
    target: &impl Target,
    z0: &UnitVector,
    q0: &TangentVector,
    steps: usize,
    eps: f64,
) -> Result<(UnitVector, TangentVector)> {
    let (_, grad) = target.potential_and_gradient(z0.as_slice())?;
    let t = integrate(target, z0, q0, grad, steps, eps)?;
    Ok((t.position, t.momentum))
}

fn integrate(
    target: &impl Target,
    z0: &UnitVector,
    q0: &TangentVector,
    mut grad: Vec<f64>,
    steps: usize,
    eps: f64,
) -> Result<Trajectory> {
    let mut z = z0.clone();
    let mut q = q0.clone();
    let mut potential = f64::NAN;
    for _ in 0..steps {
        let half = q.kicked(&z, &grad, 0.5 * eps);
        let (z_next, q_rot) = geodesic_step(&z, &half, eps);
        let (u, g) = target.potential_and_gradient(z_next.as_slice())?;
        q = q_rot.kicked(&z_next, &g, 0.5 * eps);
        z = z_next;
        grad = g;
        potential = u;
    }
    if steps == 0 {
        potential = target.potential(z.as_slice())?;
    }
    Ok(Trajectory {
        position: z,
        momentum: q,
        potential,
    })
}

/// Momentum from `N(0, Sigma* + ridge I)` projected to the tangent space,
/// where `Sigma*` is the sample covariance of the last `history_len + 1`
/// accepted positions. With fewer than two accepted positions this is
/// [`draw_momentum`].
pub fn draw_covariant_momentum(
    z: &UnitVector,
    history: &[HistoryEntry],
    history_len: usize,
    rng: &mut impl Rng,
) -> TangentVector {
    let window = &history[history.len().saturating_sub(history_len + 1)..];
    if window.len() < 2 {
        return draw_momentum(z, rng);
    }
    let d = z.dim();
    let n = window.len();
    let mut mean = vec![0.0; d];
    for h in window {
        for (m, x) in mean.iter_mut().zip(h.position.as_slice()) {
            *m += x / n as f64;
        }
    }
    // Low-rank draw: sqrt(ridge) g + sum_i h_i (x_i - mean) / sqrt(n - 1) has
    // covariance ridge I + sample covariance.
    let mut q: Vec<f64> = (0..d)
        .map(|_| COVARIANCE_RIDGE.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let scale = 1.0 / ((n - 1) as f64).sqrt();
    for h in window {
        let w: f64 = rng.sample::<f64, _>(StandardNormal) * scale;
        for ((qi, x), m) in q.iter_mut().zip(h.position.as_slice()).zip(&mean) {
            *qi += w * (x - m);
        }
    }
    project_tangent(&q, z)
}

/// The covariance matrix [`draw_covariant_momentum`] samples from, before
/// tangent projection. `None` when the identity fallback applies.
pub fn momentum_covariance(history: &[HistoryEntry], history_len: usize) -> Option<Vec<Vec<f64>>> {
    let window = &history[history.len().saturating_sub(history_len + 1)..];
    if window.len() < 2 {
        return None;
    }
    let d = window[0].position.dim();
    let n = window.len() as f64;
    let mut mean = vec![0.0; d];
    for h in window {
        for (m, x) in mean.iter_mut().zip(h.position.as_slice()) {
            *m += x / n;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for h in window {
        let c: Vec<f64> = h.position.as_slice().iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += c[i] * c[j] / (n - 1.0);
            }
        }
    }
    for (i, row) in cov.iter_mut().enumerate() {
        row[i] += COVARIANCE_RIDGE;
    }
    Some(cov)
}

struct Proposal {
    position: UnitVector,
    h_init: f64,
    h_prop: f64,
}

fn gradient_proposal(
    target: &impl Target,
    state: &mut ChainState,
    cfg: &HmcConfig,
    covariant: bool,
) -> Result<Proposal> {
    let q0 = if covariant {
        draw_covariant_momentum(&state.position, &state.history, cfg.history_len, &mut state.rng)
    } else {
        draw_momentum(&state.position, &mut state.rng)
    };
    let (u0, g0) = target.potential_and_gradient(state.position.as_slice())?;
    let h_init = u0 + 0.5 * q0.norm_sq();
    let end = integrate(target, &state.position, &q0, g0, cfg.effective_steps(), cfg.step_size)?;
    Ok(Proposal {
        h_prop: end.potential + 0.5 * end.momentum.norm_sq(),
        position: end.position,
        h_init,
    })
}

fn random_walk_proposal(target: &impl Target, state: &mut ChainState, cfg: &HmcConfig) -> Result<Proposal> {
    let g: Vec<f64> = (0..state.position.dim())
        .map(|_| state.rng.sample(StandardNormal))
        .collect();
    let position = if cfg.step_size == 0.0 {
        state.position.clone()
    } else {
        let moved: Vec<f64> = state
            .position
            .as_slice()
            .iter()
            .zip(&g)
            .map(|(z, g)| z + cfg.step_size * g)
            .collect();
        normalize(&moved)?
    };
    let h_init = target.potential(state.position.as_slice())?;
    let h_prop = target.potential(position.as_slice())?;
    Ok(Proposal {
        position,
        h_init,
        h_prop,
    })
}

/// Runs one round with `propose`, redrawing on degenerate evaluations, then
/// applies the MH test and the target's admission test.
fn transition_with<T, F>(target: &T, state: &mut ChainState, mut propose: F) -> Result<TransitionRecord>
where
    T: Target,
    F: FnMut(&T, &mut ChainState) -> Result<Proposal>,
{
    let round = state.round + 1;
    let mut retries = 0;
    let proposal = loop {
        match propose(target, state) {
            Ok(p) => break Some(p),
            Err(Error::DegenerateDensity | Error::ZeroVector) if retries < DEGENERATE_RETRIES => retries += 1,
            Err(Error::DegenerateDensity | Error::ZeroVector) => break None,
            Err(e) => return Err(e),
        }
    };
    state.round = round;
    let Some(p) = proposal else {
        return Ok(TransitionRecord {
            round,
            proposed: state.position.clone(),
            h_init: 0.0,
            h_prop: 0.0,
            alpha: 0.0,
            mh_accept: false,
            margin_pass: false,
            accepted: false,
            retries,
        });
    };
    let alpha = (p.h_init - p.h_prop).exp();
    let draw: f64 = state.rng.sample(Uniform::new(0.0, 1.0).expect("valid range"));
    let mh_accept = alpha >= 1.0 || draw < alpha;
    let margin_pass = target.admits(&p.position, state.t_minus)?;
    let accepted = mh_accept && margin_pass;
    if accepted {
        state.position = p.position.clone();
        state.history.push(HistoryEntry {
            round,
            position: p.position.clone(),
        });
    }
    Ok(TransitionRecord {
        round,
        proposed: p.position,
        h_init: p.h_init,
        h_prop: p.h_prop,
        alpha,
        mh_accept,
        margin_pass,
        accepted,
        retries,
    })
}

/// Spherical HMC round (also serves MALA through `effective_steps`).
pub fn hmc_transition(target: &impl Target, state: &mut ChainState, cfg: &HmcConfig) -> Result<TransitionRecord> {
    transition_with(target, state, |t, s| gradient_proposal(t, s, cfg, false))
}

/// Random-walk Metropolis round: `normalize(z + eps g)`.
pub fn random_walk_transition(
    target: &impl Target,
    state: &mut ChainState,
    cfg: &HmcConfig,
) -> Result<TransitionRecord> {
    transition_with(target, state, |t, s| random_walk_proposal(t, s, cfg))
}

/// RMHMC round with the history-covariance momentum.
pub fn rmhmc_transition(target: &impl Target, state: &mut ChainState, cfg: &HmcConfig) -> Result<TransitionRecord> {
    transition_with(target, state, |t, s| gradient_proposal(t, s, cfg, true))
}

/// mMALA round: RMHMC restricted to a single leapfrog step.
pub fn mmala_transition(target: &impl Target, state: &mut ChainState, cfg: &HmcConfig) -> Result<TransitionRecord> {
    let single = HmcConfig {
        leapfrog_steps: 1,
        ..cfg.clone()
    };
    transition_with(target, state, |t, s| gradient_proposal(t, s, &single, true))
}

/// Dispatches on `cfg.variant`.
pub fn transition(target: &impl Target, state: &mut ChainState, cfg: &HmcConfig) -> Result<TransitionRecord> {
    match cfg.variant {
        Variant::RandomWalk => random_walk_transition(target, state, cfg),
        Variant::Hmc | Variant::Mala => hmc_transition(target, state, cfg),
        Variant::MMala => mmala_transition(target, state, cfg),
        Variant::Rmhmc => rmhmc_transition(target, state, cfg),
    }
}
