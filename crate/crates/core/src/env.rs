//! The allocation problem as an episodic MDP.
//!
//! # Action layout
//!
//! A raw action has `K + 2KM + N` entries in `[-1, 1]`:
//!
//! | block | length | decoded as |
//! |---|---|---|
//! | blocklength raws | `K` | `c_k` via the shared-budget map |
//! | beam magnitudes | `KM` (user-major) | `(a + 1) / 2` |
//! | beam angles | `KM` (user-major) | `pi * a` |
//! | RIS phases | `N` | `pi * a`, wrapped into `[-pi, pi)` |
//!
//! # State layout
//!
//! With `Y_k = g_k` the composite row of actuator `k` and
//! `Y_kj = g_k . w_j`, the state concatenates
//!
//! 1. `|Y_kj| / sigma` for all `K^2` pairs (`k` major), then `angle(Y_kj)` in the same order;
//! 2. `||Y_k|| sqrt(p_total) / sigma` (K), `||w_k|| / sqrt(p_total)` (K),
//!    `angle(Y_k)` (KM), `angle(H_tilde_k)` (KNM, row-major per `k`), `angle(w_k)` (KM);
//! 3. the `N` RIS phases;
//! 4. the previous (scaled) reward.
//!
//! Magnitudes are expressed against the noise floor so that the network sees
//! order-one values. The total length is `2K(K+1) + (N+1)(KM+1) + KM`.

use std::f64::consts::PI;

use rand::Rng;

use crate::channel::{draw_channels, ChannelSet};
use crate::cmat::{angle, dot, norm_sqr, C64};
use crate::error::{Error, Result};
use crate::fbl::{q_inv, shannon_sum, sinr_vector, total_objective};
use crate::precode::{equal_blocklengths, BeamformerSet};
use crate::ris::{amplitude_response, build_ris_state, cascaded_channels, composite_rows, RisState};
use crate::scenario::{geometry, noise_power, CblMode, Geometry, RisMode, ScenarioConfig};

/// Keeps the blocklength map finite when every raw is `-1`.
pub const CBL_GUARD: f64 = 1e-6;

/// Values this close below an integer are floored to that integer, so the
/// guard constant alone never costs a channel use. `K * ROUND_SLACK < 1`
/// keeps the sum within `C`.
const ROUND_SLACK: f64 = 1e-4;

pub fn action_len(cfg: &ScenarioConfig) -> usize {
    let (k, m, n) = (cfg.num_actuators, cfg.bs_antennas(), cfg.ris_elements());
    k + 2 * k * m + n
}

pub fn state_len(cfg: &ScenarioConfig) -> usize {
    let (k, m, n) = (cfg.num_actuators, cfg.bs_antennas(), cfg.ris_elements());
    2 * k * (k + 1) + (n + 1) * (k * m + 1) + k * m
}

/// The decision variables: reflection, beamformers and blocklengths.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationDecision {
    pub ris: RisState,
    pub bf: BeamformerSet,
    pub c: Vec<u32>,
}

impl AllocationDecision {
    /// Checks phase range, amplitude law, power budget and blocklength budget.
    pub fn check_constraints(&self, cfg: &ScenarioConfig) -> Result<()> {
        let violated = |what: &str| Err(Error::Domain(format!("decision violates {what}")));
        if self.ris.theta.iter().any(|t| !(-PI..PI).contains(t)) {
            return violated("phase range [-pi, pi)");
        }
        for (t, b) in self.ris.theta.iter().zip(&self.ris.beta) {
            let expect = match self.ris.mode {
                RisMode::Ideal => 1.0,
                RisMode::Practical => {
                    amplitude_response(*t, cfg.beta_min, cfg.alpha_steep, cfg.phi_shift)
                }
            };
            if *b != expect {
                return violated("amplitude law");
            }
        }
        let power = self.bf.total_power();
        if !(power <= cfg.p_total * (1.0 + 1e-12)) {
            return violated("power budget");
        }
        let total: u64 = self.c.iter().map(|&c| c as u64).sum();
        if total > cfg.total_blocklength as u64 {
            return violated("blocklength budget");
        }
        if self.c.iter().zip(&cfg.min_blocklength).any(|(c, m)| c < m) {
            return violated("minimum blocklength");
        }
        Ok(())
    }
}

fn blocklengths(raw: &[f64], cfg: &ScenarioConfig) -> Vec<u32> {
    let spare = cfg.total_blocklength as f64
        - cfg.min_blocklength.iter().map(|&c| c as f64).sum::<f64>();
    let shares: Vec<f64> = raw.iter().map(|a| (a + 1.0) / 2.0).collect();
    let denom = shares.iter().sum::<f64>() + CBL_GUARD;
    let mut c: Vec<u32> = shares
        .iter()
        .zip(&cfg.min_blocklength)
        .map(|(s, &min)| (spare / denom * s + min as f64 + ROUND_SLACK).floor() as u32)
        .collect();
    // unreachable with K * ROUND_SLACK < 1, kept as a hard stop
    while c.iter().sum::<u32>() > cfg.total_blocklength {
        let i = (0..c.len())
            .filter(|&i| c[i] > cfg.min_blocklength[i])
            .max_by_key(|&i| c[i])
            .expect("minima fit the budget");
        c[i] -= 1;
    }
    c
}

/// Maps a raw action onto a feasible decision.
pub fn decode_action(
    a: &[f64],
    cfg: &ScenarioConfig,
    cbl_mode: CblMode,
) -> Result<AllocationDecision> {
    let (k, m, n) = (cfg.num_actuators, cfg.bs_antennas(), cfg.ris_elements());
    if a.len() != action_len(cfg) {
        return Err(Error::Dimension(format!(
            "action has {} entries, expected {}",
            a.len(),
            action_len(cfg)
        )));
    }
    if let Some(i) = a.iter().position(|v| !(-1.0..=1.0).contains(v)) {
        return Err(Error::Domain(format!(
            "raw action entry {i} = {} outside [-1, 1]",
            a[i]
        )));
    }
    let (cbl_raw, rest) = a.split_at(k);
    let (mags, rest) = rest.split_at(k * m);
    let (angles, phases) = rest.split_at(k * m);

    let c = match cbl_mode {
        CblMode::Learned => blocklengths(cbl_raw, cfg),
        CblMode::Equal => equal_blocklengths(cfg.total_blocklength, k),
    };

    let all_off = mags.iter().all(|&v| v == -1.0);
    let mut w: Vec<Vec<C64>> = mags
        .chunks(m)
        .zip(angles.chunks(m))
        .map(|(mk, ak)| {
            mk.iter()
                .zip(ak)
                .map(|(&r, &t)| {
                    let r = if all_off { 1.0 } else { (r + 1.0) / 2.0 };
                    C64::from_polar(r, PI * t)
                })
                .collect()
        })
        .collect();
    let total: f64 = w.iter().map(|wk| norm_sqr(wk)).sum();
    let s = (cfg.p_total / total).sqrt();
    w.iter_mut().flatten().for_each(|z| *z *= s);

    let theta: Vec<f64> = phases.iter().map(|&p| PI * p).collect();
    let ris = build_ris_state(&theta, cfg);
    debug_assert_eq!(ris.len(), n);

    let decision = AllocationDecision {
        ris,
        bf: BeamformerSet { w },
        c,
    };
    decision.check_constraints(cfg)?;
    Ok(decision)
}

/// Rates of a decision on a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionScore {
    pub sinr: Vec<f64>,
    /// Finite-blocklength objective in bits.
    pub fbl: f64,
    /// `sum_k c_k log2(1 + sinr_k)`.
    pub shannon: f64,
}

pub fn score_decision(
    cfg: &ScenarioConfig,
    ch: &ChannelSet,
    decision: &AllocationDecision,
) -> Result<DecisionScore> {
    let g = composite_rows(&decision.ris, ch)?;
    let sinr = sinr_vector(&g, &decision.bf.w, noise_power(cfg));
    let fbl = total_objective(&sinr, &decision.c, cfg.eps_th)?.total;
    let shannon = shannon_sum(&sinr, &decision.c);
    Ok(DecisionScore { sinr, fbl, shannon })
}

fn cascaded_angles(ch: &ChannelSet) -> Vec<f64> {
    cascaded_channels(ch)
        .iter()
        .flat_map(|h| h.data().iter().map(|&z| angle(z)).collect::<Vec<_>>())
        .collect()
}

fn encode_with_angles(
    cfg: &ScenarioConfig,
    ch: &ChannelSet,
    cascaded: &[f64],
    decision: &AllocationDecision,
    prev_reward: f64,
) -> Result<Vec<f64>> {
    let sigma = noise_power(cfg).sqrt();
    let amp = cfg.p_total.sqrt() / sigma;
    let g = composite_rows(&decision.ris, ch)?;
    let w = &decision.bf.w;
    let mut s = Vec::with_capacity(state_len(cfg));

    let inner: Vec<C64> = g.iter().flat_map(|gk| w.iter().map(move |wj| dot(gk, wj))).collect();
    s.extend(inner.iter().map(|z| z.norm() / sigma));
    s.extend(inner.iter().map(|&z| angle(z)));

    s.extend(g.iter().map(|gk| norm_sqr(gk).sqrt() * amp));
    s.extend(w.iter().map(|wk| (norm_sqr(wk) / cfg.p_total).sqrt()));
    s.extend(g.iter().flatten().map(|&z| angle(z)));
    s.extend_from_slice(cascaded);
    s.extend(w.iter().flatten().map(|&z| angle(z)));

    s.extend_from_slice(&decision.ris.theta);
    s.push(prev_reward);

    if s.len() != state_len(cfg) {
        return Err(Error::Dimension(format!(
            "state has {} entries, expected {}",
            s.len(),
            state_len(cfg)
        )));
    }
    Ok(s)
}

/// Builds the observation that follows `decision` on channel `ch`.
pub fn encode_state(
    cfg: &ScenarioConfig,
    ch: &ChannelSet,
    decision: &AllocationDecision,
    prev_reward: f64,
) -> Result<Vec<f64>> {
    encode_with_angles(cfg, ch, &cascaded_angles(ch), decision, prev_reward)
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    /// Scaled reward fed to the learner.
    pub reward: f64,
    /// Unscaled objective in bits.
    pub objective: f64,
    pub shannon: f64,
}

/// Episodic environment; the channel is frozen between resets.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: ScenarioConfig,
    geom: Geometry,
    cbl_mode: CblMode,
    reward_scale: f64,
    n_steps: usize,
    channel: Option<ChannelSet>,
    cascaded: Vec<f64>,
    decision: Option<AllocationDecision>,
    prev_reward: f64,
    steps: usize,
}

impl Env {
    pub fn new(
        cfg: ScenarioConfig,
        cbl_mode: CblMode,
        reward_scale: f64,
        n_steps: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        q_inv(cfg.eps_th)?;
        let geom = geometry(&cfg)?;
        Ok(Self {
            cfg,
            geom,
            cbl_mode,
            reward_scale,
            n_steps,
            channel: None,
            cascaded: Vec::new(),
            decision: None,
            prev_reward: 0.0,
            steps: 0,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn channel(&self) -> Option<&ChannelSet> {
        self.channel.as_ref()
    }

    pub fn decision(&self) -> Option<&AllocationDecision> {
        self.decision.as_ref()
    }

    pub fn state_len(&self) -> usize {
        state_len(&self.cfg)
    }

    pub fn action_len(&self) -> usize {
        action_len(&self.cfg)
    }

    pub fn is_done(&self) -> bool {
        self.channel.is_none() || self.steps >= self.n_steps
    }

    pub fn set_episode_length(&mut self, n_steps: usize) {
        self.n_steps = n_steps;
    }

    /// Draws a fresh channel, then a uniformly random initial decision.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<f64>> {
        let ch = draw_channels(&self.cfg, &self.geom, rng)?;
        self.reset_with_channel(ch, rng)
    }

    /// Starts an episode on a given channel; `rng` only drives the initial decision.
    pub fn reset_with_channel<R: Rng + ?Sized>(
        &mut self,
        ch: ChannelSet,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let a: Vec<f64> = (0..self.action_len()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let decision = decode_action(&a, &self.cfg, self.cbl_mode)?;
        let score = score_decision(&self.cfg, &ch, &decision)?;
        self.cascaded = cascaded_angles(&ch);
        self.channel = Some(ch);
        self.prev_reward = self.reward_scale * score.fbl;
        self.steps = 0;
        let state = self.observe(&decision)?;
        self.decision = Some(decision);
        Ok(state)
    }

    fn observe(&self, decision: &AllocationDecision) -> Result<Vec<f64>> {
        let ch = self.channel.as_ref().ok_or(Error::EpisodeFinished)?;
        encode_with_angles(&self.cfg, ch, &self.cascaded, decision, self.prev_reward)
    }

    pub fn step(&mut self, a: &[f64]) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::EpisodeFinished);
        }
        let ch = self.channel.as_ref().ok_or(Error::EpisodeFinished)?;
        let decision = decode_action(a, &self.cfg, self.cbl_mode)?;
        let score = score_decision(&self.cfg, ch, &decision)?;
        self.prev_reward = self.reward_scale * score.fbl;
        self.steps += 1;
        let state = self.observe(&decision)?;
        self.decision = Some(decision);
        Ok(StepOutcome {
            state,
            reward: self.prev_reward,
            objective: score.fbl,
            shannon: score.shannon,
        })
    }
}
