//! TD3 learner: replay memory, actor, twin critics and their targets.
//!
//! The DDPG mode keeps one critic, drops target smoothing and updates the
//! actor on every step.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::channel::draw_channels;
use crate::env::{AllocationDecision, Env};
use crate::error::{Error, Result};
use crate::neural::{polyak_blend, Activation, Adam, DenseNet, ForwardCache, LayerSpec};
use crate::rng::{substream, Domain, StreamRng};
use crate::scenario::{geometry, AgentMode, CblMode, LearnConfig, ScenarioConfig};

const AGENT_MAGIC: &[u8; 8] = b"RISAGNT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
}

/// Column-stacked mini-batch, one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub size: usize,
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    s_dim: usize,
    a_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    len: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, s_dim: usize, a_dim: usize) -> Self {
        Self {
            capacity,
            s_dim,
            a_dim,
            states: vec![0.0; capacity * s_dim],
            actions: vec![0.0; capacity * a_dim],
            rewards: vec![0.0; capacity],
            next_states: vec![0.0; capacity * s_dim],
            len: 0,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.s.len() != self.s_dim || t.s_next.len() != self.s_dim || t.a.len() != self.a_dim {
            return Err(Error::Dimension("transition does not match buffer widths".into()));
        }
        let i = self.cursor;
        self.states[i * self.s_dim..(i + 1) * self.s_dim].copy_from_slice(&t.s);
        self.actions[i * self.a_dim..(i + 1) * self.a_dim].copy_from_slice(&t.a);
        self.rewards[i] = t.r;
        self.next_states[i * self.s_dim..(i + 1) * self.s_dim].copy_from_slice(&t.s_next);
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<Transition> {
        (i < self.len).then(|| Transition {
            s: self.states[i * self.s_dim..(i + 1) * self.s_dim].to_vec(),
            a: self.actions[i * self.a_dim..(i + 1) * self.a_dim].to_vec(),
            r: self.rewards[i],
            s_next: self.next_states[i * self.s_dim..(i + 1) * self.s_dim].to_vec(),
        })
    }

    /// Slot indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.len)).collect()
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let mut b = Batch {
            states: Vec::with_capacity(idx.len() * self.s_dim),
            actions: Vec::with_capacity(idx.len() * self.a_dim),
            rewards: Vec::with_capacity(idx.len()),
            next_states: Vec::with_capacity(idx.len() * self.s_dim),
            size: idx.len(),
        };
        for &i in idx {
            b.states.extend_from_slice(&self.states[i * self.s_dim..(i + 1) * self.s_dim]);
            b.actions.extend_from_slice(&self.actions[i * self.a_dim..(i + 1) * self.a_dim]);
            b.rewards.push(self.rewards[i]);
            b.next_states.extend_from_slice(&self.next_states[i * self.s_dim..(i + 1) * self.s_dim]);
        }
        b
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        if self.len < n || n == 0 {
            return Err(Error::Domain(format!(
                "cannot sample {n} transitions from a buffer holding {}",
                self.len
            )));
        }
        Ok(self.gather(&self.sample_indices(n, rng)))
    }
}

fn branch_specs(input: usize, widths: &[usize], layer_norm: bool) -> Vec<LayerSpec> {
    let mut prev = input;
    widths
        .iter()
        .map(|&w| {
            let s = LayerSpec::new(prev, w, layer_norm, Activation::Relu);
            prev = w;
            s
        })
        .collect()
}

/// State and action branches whose outputs are summed before a scalar head.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub state_branch: DenseNet,
    pub action_branch: DenseNet,
    pub head: DenseNet,
}

#[derive(Debug, Clone)]
pub struct CriticCache {
    state: ForwardCache,
    action: ForwardCache,
    head: ForwardCache,
}

impl CriticCache {
    pub fn q(&self) -> &[f64] {
        self.head.output()
    }
}

pub struct CriticGrads {
    pub state_branch: Vec<f64>,
    pub action_branch: Vec<f64>,
    pub head: Vec<f64>,
    pub action: Option<Vec<f64>>,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(
        s_dim: usize,
        a_dim: usize,
        trunk: &[usize],
        head: &[usize],
        layer_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if trunk.is_empty() {
            return Err(Error::Dimension("critic branches need at least one layer".into()));
        }
        let fused = *trunk.last().expect("non-empty");
        let mut head_specs = branch_specs(fused, head, layer_norm);
        head_specs.push(LayerSpec::new(
            head.last().copied().unwrap_or(fused),
            1,
            false,
            Activation::Identity,
        ));
        Ok(Self {
            state_branch: DenseNet::new(branch_specs(s_dim, trunk, layer_norm), None, rng)?,
            action_branch: DenseNet::new(branch_specs(a_dim, trunk, layer_norm), None, rng)?,
            head: DenseNet::new(head_specs, None, rng)?,
        })
    }

    pub fn forward(&self, s: &[f64], a: &[f64], batch: usize) -> Result<CriticCache> {
        let state = self.state_branch.forward(s, batch)?;
        let action = self.action_branch.forward(a, batch)?;
        let fused: Vec<f64> = state.output().iter().zip(action.output()).map(|(x, y)| x + y).collect();
        let head = self.head.forward(&fused, batch)?;
        Ok(CriticCache { state, action, head })
    }

    pub fn q_values(&self, s: &[f64], a: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.forward(s, a, batch)?.q().to_vec())
    }

    pub fn backward(&self, cache: &CriticCache, dq: &[f64], want_action: bool) -> Result<CriticGrads> {
        let head = self.head.backward(&cache.head, dq, true)?;
        let d_fused = head.input.expect("requested");
        let state = self.state_branch.backward(&cache.state, &d_fused, false)?;
        let action = self.action_branch.backward(&cache.action, &d_fused, want_action)?;
        Ok(CriticGrads {
            state_branch: state.params,
            action_branch: action.params,
            head: head.params,
            action: action.input,
        })
    }

    fn nets(&self) -> [&DenseNet; 3] {
        [&self.state_branch, &self.action_branch, &self.head]
    }

    fn nets_mut(&mut self) -> [&mut DenseNet; 3] {
        [&mut self.state_branch, &mut self.action_branch, &mut self.head]
    }

    pub fn param_count(&self) -> usize {
        self.nets().iter().map(|n| n.param_count()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CriticOpt([Adam; 3]);

impl CriticOpt {
    fn new(c: &Critic, lr: f64) -> Self {
        CriticOpt(c.nets().map(|n| Adam::new(n.param_count(), lr)))
    }

    fn step(&mut self, c: &mut Critic, g: &CriticGrads) -> Result<()> {
        let [s, a, h] = c.nets_mut();
        self.0[0].step(s, &g.state_branch)?;
        self.0[1].step(a, &g.action_branch)?;
        self.0[2].step(h, &g.head)
    }
}

fn blend_critic(target: &mut Critic, main: &Critic, tau: f64) -> Result<()> {
    polyak_blend(&mut target.state_branch, &main.state_branch, tau)?;
    polyak_blend(&mut target.action_branch, &main.action_branch, tau)?;
    polyak_blend(&mut target.head, &main.head, tau)
}

/// Smoothed target action entry: `clip(mu + clip(noise, -c, c), -1, 1)`.
pub fn smooth_target(mu: f64, noise: f64, clip: f64) -> f64 {
    (mu + noise.clamp(-clip, clip)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub mode: AgentMode,
    pub gamma: f64,
    pub tau: f64,
    pub sigma_explore: f64,
    pub sigma_smooth: f64,
    pub smooth_clip: f64,
    pub policy_delay: u64,
    s_dim: usize,
    a_dim: usize,
    pub actor: DenseNet,
    pub actor_target: DenseNet,
    pub critics: Vec<Critic>,
    pub critic_targets: Vec<Critic>,
    actor_opt: Adam,
    critic_opts: Vec<CriticOpt>,
    critic_updates: u64,
    actor_updates: u64,
}

impl Td3Agent {
    pub fn new<R: Rng + ?Sized>(s_dim: usize, a_dim: usize, learn: &LearnConfig, rng: &mut R) -> Result<Self> {
        learn.validate()?;
        let specs = crate::neural::mlp_specs(
            s_dim,
            &learn.actor_layers,
            a_dim,
            learn.layer_norm,
            Activation::Relu,
            Activation::Tanh,
        );
        let actor = DenseNet::new(specs, Some(learn.actor_output_init), rng)?;
        let n_critics = match learn.mode {
            AgentMode::Td3 => 2,
            AgentMode::Ddpg => 1,
        };
        let critics = (0..n_critics)
            .map(|_| Critic::new(s_dim, a_dim, &learn.critic_trunk, &learn.critic_head, learn.layer_norm, rng))
            .collect::<Result<Vec<_>>>()?;
        let critic_opts = critics.iter().map(|c| CriticOpt::new(c, learn.lr_critic)).collect();
        Ok(Self {
            mode: learn.mode,
            gamma: learn.gamma,
            tau: learn.tau,
            sigma_explore: learn.sigma_explore,
            sigma_smooth: learn.sigma_smooth,
            smooth_clip: learn.smooth_clip,
            policy_delay: match learn.mode {
                AgentMode::Td3 => learn.policy_delay,
                AgentMode::Ddpg => 1,
            },
            s_dim,
            a_dim,
            actor_target: actor.clone(),
            actor_opt: Adam::new(actor.param_count(), learn.lr_actor),
            actor,
            critic_targets: critics.clone(),
            critics,
            critic_opts,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.s_dim
    }

    pub fn action_dim(&self) -> usize {
        self.a_dim
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    /// `mu(s)`, plus clipped Gaussian exploration noise when `explore` is set.
    pub fn select_action<R: Rng + ?Sized>(&self, s: &[f64], explore: bool, rng: &mut R) -> Result<Vec<f64>> {
        let mut a = self.actor.predict(s)?;
        if explore {
            let noise = Normal::new(0.0, self.sigma_explore).map_err(|e| Error::Domain(e.to_string()))?;
            for v in &mut a {
                *v += noise.sample(rng);
            }
        }
        a.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        Ok(a)
    }

    /// Target-policy actions for a batch of next states.
    pub fn target_action<R: Rng + ?Sized>(&self, s_next: &[f64], batch: usize, rng: &mut R) -> Result<Vec<f64>> {
        let mut a = self.actor_target.forward(s_next, batch)?.output().to_vec();
        match self.mode {
            AgentMode::Td3 => {
                let noise = Normal::new(0.0, self.sigma_smooth).map_err(|e| Error::Domain(e.to_string()))?;
                for v in &mut a {
                    *v = smooth_target(*v, noise.sample(rng), self.smooth_clip);
                }
            }
            AgentMode::Ddpg => a.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0)),
        }
        Ok(a)
    }

    /// Bootstrapped targets `r + gamma * min_i Q_i'(s', a')` together with the
    /// first target critic's own targets.
    pub fn td_targets<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        let a_next = self.target_action(&batch.next_states, batch.size, rng)?;
        let qs = self
            .critic_targets
            .iter()
            .map(|c| c.q_values(&batch.next_states, &a_next, batch.size))
            .collect::<Result<Vec<_>>>()?;
        let mut clipped = Vec::with_capacity(batch.size);
        let mut first = Vec::with_capacity(batch.size);
        for i in 0..batch.size {
            let min = qs.iter().map(|q| q[i]).fold(f64::INFINITY, f64::min);
            clipped.push(batch.rewards[i] + self.gamma * min);
            first.push(batch.rewards[i] + self.gamma * qs[0][i]);
        }
        Ok((clipped, first))
    }

    /// One regression step of every critic towards the shared target; returns
    /// the mean squared errors before the step (second entry repeats the
    /// first in DDPG mode).
    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<(f64, f64)> {
        let (targets, _) = self.td_targets(batch, rng)?;
        let mut losses = Vec::with_capacity(self.critics.len());
        for (critic, opt) in self.critics.iter_mut().zip(&mut self.critic_opts) {
            let cache = critic.forward(&batch.states, &batch.actions, batch.size)?;
            let n = batch.size as f64;
            let mut loss = 0.0;
            let dq: Vec<f64> = cache
                .q()
                .iter()
                .zip(&targets)
                .map(|(q, y)| {
                    loss += (q - y) * (q - y) / n;
                    2.0 * (q - y) / n
                })
                .collect();
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: "critic loss",
                    index: losses.len(),
                });
            }
            let g = critic.backward(&cache, &dq, false)?;
            opt.step(critic, &g)?;
            losses.push(loss);
        }
        self.critic_updates += 1;
        Ok((losses[0], *losses.last().expect("at least one critic")))
    }

    /// Actor ascent on the first critic and polyak blending of all targets,
    /// applied when the critic update count is a multiple of the delay.
    pub fn policy_and_target_update(&mut self, batch: &Batch) -> Result<bool> {
        if self.critic_updates == 0 || self.critic_updates % self.policy_delay != 0 {
            return Ok(false);
        }
        let actor_cache = self.actor.forward(&batch.states, batch.size)?;
        let critic_cache = self.critics[0].forward(&batch.states, actor_cache.output(), batch.size)?;
        let dq = vec![-1.0 / batch.size as f64; batch.size];
        let g = self.critics[0].backward(&critic_cache, &dq, true)?;
        let da = g.action.expect("requested");
        let ga = self.actor.backward(&actor_cache, &da, false)?;
        self.actor_opt.step(&mut self.actor, &ga.params)?;
        self.actor_updates += 1;

        polyak_blend(&mut self.actor_target, &self.actor, self.tau)?;
        for (t, m) in self.critic_targets.iter_mut().zip(&self.critics) {
            blend_critic(t, m, self.tau)?;
        }
        Ok(true)
    }

    pub fn save<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(AGENT_MAGIC)?;
        out.write_all(&crate::neural::CHECKPOINT_VERSION.to_le_bytes())?;
        let mode = match self.mode {
            AgentMode::Td3 => 0u8,
            AgentMode::Ddpg => 1,
        };
        out.write_all(&[mode, self.critics.len() as u8])?;
        out.write_all(&self.critic_updates.to_le_bytes())?;
        out.write_all(&self.actor_updates.to_le_bytes())?;
        self.actor.write_to(out)?;
        self.actor_target.write_to(out)?;
        self.actor_opt.write_to(out)?;
        for ((c, t), o) in self.critics.iter().zip(&self.critic_targets).zip(&self.critic_opts) {
            for n in c.nets().into_iter().chain(t.nets()) {
                n.write_to(out)?;
            }
            for a in &o.0 {
                a.write_to(out)?;
            }
        }
        Ok(())
    }

    /// Restores weights, optimizer moments and counters into an agent built
    /// with the same configuration.
    pub fn load<R: Read>(&mut self, input: &mut R) -> Result<()> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != AGENT_MAGIC {
            return Err(Error::Checkpoint("not an agent checkpoint".into()));
        }
        let mut v = [0u8; 4];
        input.read_exact(&mut v)?;
        if u32::from_le_bytes(v) != crate::neural::CHECKPOINT_VERSION {
            return Err(Error::Checkpoint("unsupported agent checkpoint version".into()));
        }
        let mut hdr = [0u8; 2];
        input.read_exact(&mut hdr)?;
        let mode = if hdr[0] == 0 { AgentMode::Td3 } else { AgentMode::Ddpg };
        if mode != self.mode || hdr[1] as usize != self.critics.len() {
            return Err(Error::Checkpoint("agent mode mismatch".into()));
        }
        let mut u = [0u8; 8];
        input.read_exact(&mut u)?;
        let critic_updates = u64::from_le_bytes(u);
        input.read_exact(&mut u)?;
        let actor_updates = u64::from_le_bytes(u);

        let mut fresh = self.clone();
        let actor_specs = self.actor.specs().to_vec();
        fresh.actor = DenseNet::read_from(input, Some(&actor_specs))?;
        fresh.actor_target = DenseNet::read_from(input, Some(&actor_specs))?;
        fresh.actor_opt = Adam::read_from(input, self.actor.param_count())?;
        for i in 0..self.critics.len() {
            for which in 0..2 {
                let slot = if which == 0 { &mut fresh.critics[i] } else { &mut fresh.critic_targets[i] };
                for net in slot.nets_mut() {
                    let specs = net.specs().to_vec();
                    *net = DenseNet::read_from(input, Some(&specs))?;
                }
            }
            for (j, net) in self.critics[i].nets().iter().enumerate() {
                fresh.critic_opts[i].0[j] = Adam::read_from(input, net.param_count())?;
            }
        }
        fresh.critic_updates = critic_updates;
        fresh.actor_updates = actor_updates;
        *self = fresh;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Mean unscaled objective over the episode's steps.
    pub mean_objective: f64,
    /// Mean critic losses over the episode's updates; `None` before learning starts.
    pub critic_loss: Option<(f64, f64)>,
    pub actor_updates: u64,
    /// Transitions held by the replay memory at the end of the episode.
    pub buffer_len: usize,
    pub eval: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub realization: usize,
    pub fbl: f64,
    pub shannon: f64,
    pub decision: AllocationDecision,
}

/// Greedy roll-outs of the frozen actor on `realizations` channel draws from
/// the evaluation substreams of `seed`; each record scores the decision
/// reached after `steps` steps.
pub fn evaluate_policy(
    agent: &Td3Agent,
    cfg: &ScenarioConfig,
    cbl_mode: CblMode,
    seed: u64,
    realizations: usize,
    steps: usize,
) -> Result<Vec<EvalRecord>> {
    let geom = geometry(cfg)?;
    let mut env = Env::new(cfg.clone(), cbl_mode, 1.0, steps)?;
    let mut out = Vec::with_capacity(realizations);
    let mut unused = substream(seed, Domain::Scratch, u32::MAX as u64);
    for i in 0..realizations {
        let ch = draw_channels(cfg, &geom, &mut substream(seed, Domain::EvalChannel, i as u64))?;
        let mut s = env.reset_with_channel(ch, &mut substream(seed, Domain::EvalAux, i as u64))?;
        for _ in 0..steps {
            let a = agent.select_action(&s, false, &mut unused)?;
            s = env.step(&a)?.state;
        }
        let decision = env.decision().expect("reset sets a decision").clone();
        let score = crate::env::score_decision(cfg, env.channel().expect("active"), &decision)?;
        out.push(EvalRecord {
            realization: i,
            fbl: score.fbl,
            shannon: score.shannon,
            decision,
        });
    }
    Ok(out)
}

/// Training loop: `n_episodes` episodes of `n_steps` interactions. Episode
/// `e` draws its channel from the episode substream `e`; exploration,
/// sampling and smoothing use the single learner substream.
pub fn train(
    agent: &mut Td3Agent,
    cfg: &ScenarioConfig,
    learn: &LearnConfig,
    seed: u64,
    mut on_episode: impl FnMut(&EpisodeLog),
) -> Result<Vec<EpisodeLog>> {
    let mut env = Env::new(cfg.clone(), learn.cbl_mode, learn.reward_scale, learn.n_steps)?;
    let mut buffer = ReplayBuffer::new(learn.buffer_capacity, agent.state_dim(), agent.action_dim());
    let mut rng: StreamRng = substream(seed, Domain::Learner, 0);
    let mut logs = Vec::with_capacity(learn.n_episodes);
    let mut total_steps = 0usize;
    for e in 0..learn.n_episodes {
        let mut s = env.reset(&mut substream(seed, Domain::Episode, e as u64))?;
        let mut objective = 0.0;
        let (mut loss_sum, mut n_updates) = ((0.0, 0.0), 0usize);
        for _ in 0..learn.n_steps {
            let a = if total_steps < learn.warmup_steps {
                (0..agent.action_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect()
            } else {
                agent.select_action(&s, true, &mut rng)?
            };
            let out = env.step(&a)?;
            buffer.push(&Transition {
                s: std::mem::take(&mut s),
                a,
                r: out.reward,
                s_next: out.state.clone(),
            })?;
            s = out.state;
            objective += out.objective;
            total_steps += 1;
            if total_steps >= learn.warmup_steps && buffer.len() >= learn.batch_size {
                let batch = buffer.sample(learn.batch_size, &mut rng)?;
                let l = agent.critic_update(&batch, &mut rng)?;
                agent.policy_and_target_update(&batch)?;
                loss_sum.0 += l.0;
                loss_sum.1 += l.1;
                n_updates += 1;
            }
        }
        let periodic = learn.eval_interval > 0 && (e + 1) % learn.eval_interval == 0;
        let eval = if periodic || e + 1 == learn.n_episodes {
            let recs = evaluate_policy(agent, cfg, learn.cbl_mode, seed, learn.eval_realizations, learn.eval_steps)?;
            Some(recs.iter().map(|r| r.fbl).sum::<f64>() / recs.len().max(1) as f64)
        } else {
            None
        };
        let log = EpisodeLog {
            episode: e,
            mean_objective: objective / learn.n_steps.max(1) as f64,
            critic_loss: (n_updates > 0).then(|| (loss_sum.0 / n_updates as f64, loss_sum.1 / n_updates as f64)),
            actor_updates: agent.actor_updates(),
            buffer_len: buffer.len(),
            eval,
        };
        on_episode(&log);
        logs.push(log);
    }
    Ok(logs)
}
