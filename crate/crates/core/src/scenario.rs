//! Scenario and learning configuration.
//!
//! A configuration document is a TOML file with two optional tables,
//! `[scenario]` and `[learn]`. Every key is optional; missing keys take the
//! defaults of the selected [`Profile`]. Unknown keys are rejected.
//!
//! ```toml
//! [scenario]
//! num_actuators = 4
//! ris_array = [4, 4]
//! p_total = 1e-3
//!
//! [learn]
//! gamma = 0.99
//! policy_delay = 4
//! ```

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Amplitude model of the RIS elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RisMode {
    /// Unit amplitude regardless of phase.
    Ideal,
    /// Phase-dependent amplitude, see [`crate::ris::amplitude_response`].
    Practical,
}

/// Learner variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentMode {
    Td3,
    Ddpg,
}

/// How blocklengths are decided from an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CblMode {
    /// Blocklengths come from the first K action entries.
    Learned,
    /// Blocklength entries are ignored and `C` is split evenly.
    Equal,
}

/// Physical and geometric parameters of the downlink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// K.
    pub num_actuators: usize,
    /// BS uniform planar array, `[Mx, My]`.
    pub bs_array: [usize; 2],
    /// RIS uniform planar array, `[Nx, Ny]`.
    pub ris_array: [usize; 2],
    /// BS transmit power budget in watts.
    pub p_total: f64,
    /// Target block error probability for every actuator.
    pub eps_th: f64,
    /// Channel uses available per transmission interval.
    pub total_blocklength: u32,
    /// Minimum channel uses per actuator.
    pub min_blocklength: Vec<u32>,
    /// Hz.
    pub bandwidth: f64,
    /// dBm/Hz.
    pub noise_density_dbm: f64,
    /// dB.
    pub noise_figure_db: f64,
    /// Rician factor of the BS-RIS link (linear).
    pub rician_incident: f64,
    /// Rician factors of the RIS-actuator links (linear).
    pub rician_ris: Vec<f64>,
    pub beta_min: f64,
    pub alpha_steep: f64,
    pub phi_shift: f64,
    pub ris_mode: RisMode,
    /// Reference path loss at 1 m, dB.
    pub pl0_db: f64,
    pub pathloss_exponent: f64,
    /// Element spacing over wavelength.
    pub spacing_ratio: f64,
    pub bs_position: [f64; 2],
    pub ris_position: [f64; 2],
    pub actuator_positions: Vec<[f64; 2]>,
    pub bs_height: f64,
    pub ris_height: f64,
    pub actuator_height: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_actuators: 4,
            bs_array: [2, 2],
            ris_array: [4, 4],
            p_total: 1e-3,
            eps_th: 1e-8,
            total_blocklength: 100,
            min_blocklength: vec![10; 4],
            bandwidth: 1e5,
            noise_density_dbm: -174.0,
            noise_figure_db: 3.0,
            rician_incident: 10.0,
            rician_ris: vec![10.0; 4],
            beta_min: 0.4,
            alpha_steep: 1.9,
            phi_shift: 0.43 * PI,
            ris_mode: RisMode::Practical,
            pl0_db: -30.0,
            pathloss_exponent: 2.2,
            spacing_ratio: 0.5,
            bs_position: [0.0, 0.0],
            ris_position: [40.0, 0.0],
            actuator_positions: vec![[16.0, 40.0], [32.0, 40.0], [48.0, 40.0], [64.0, 40.0]],
            bs_height: 12.5,
            ris_height: 12.5,
            actuator_height: 1.5,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// M.
    pub fn bs_antennas(&self) -> usize {
        self.bs_array[0] * self.bs_array[1]
    }

    /// N.
    pub fn ris_elements(&self) -> usize {
        self.ris_array[0] * self.ris_array[1]
    }

    /// Replaces the RIS array with the most square `Nx x Ny` factorization of `n`.
    pub fn set_ris_elements(&mut self, n: usize) {
        let mut rows = 1;
        let mut d = 1;
        while d * d <= n {
            if n % d == 0 {
                rows = d;
            }
            d += 1;
        }
        self.ris_array = [rows, n.max(1) / rows];
    }

    /// Sets `C` keeping the per-actuator minima.
    pub fn set_total_blocklength(&mut self, c: u32) {
        self.total_blocklength = c;
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_actuators;
        if k == 0 {
            return Err(Error::config("num_actuators", "K must be at least 1"));
        }
        if self.bs_array.contains(&0) {
            return Err(Error::config("bs_array", "M must be at least 1"));
        }
        if self.ris_array.contains(&0) {
            return Err(Error::config("ris_array", "N must be at least 1"));
        }
        if !(self.p_total > 0.0 && self.p_total.is_finite()) {
            return Err(Error::config("p_total", "power budget must be positive"));
        }
        if !(self.eps_th > 0.0 && self.eps_th < 0.5) {
            return Err(Error::config("eps_th", "target BLER must lie in (0, 0.5)"));
        }
        if self.min_blocklength.len() != k {
            return Err(Error::config(
                "min_blocklength",
                format!("expected {k} entries, got {}", self.min_blocklength.len()),
            ));
        }
        if self.min_blocklength.iter().any(|&c| c < 1) {
            return Err(Error::config("min_blocklength", "every minimum must be at least 1"));
        }
        let floor: u64 = self.min_blocklength.iter().map(|&c| c as u64).sum();
        if floor > self.total_blocklength as u64 {
            return Err(Error::config(
                "min_blocklength",
                format!(
                    "sum of minima {floor} exceeds total_blocklength {}",
                    self.total_blocklength
                ),
            ));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::config("bandwidth", "must be positive"));
        }
        if !self.noise_density_dbm.is_finite() {
            return Err(Error::config("noise_density_dbm", "must be finite"));
        }
        if !self.noise_figure_db.is_finite() {
            return Err(Error::config("noise_figure_db", "must be finite"));
        }
        if !(self.rician_incident >= 0.0 && self.rician_incident.is_finite()) {
            return Err(Error::config("rician_incident", "must be a finite non-negative ratio"));
        }
        if self.rician_ris.len() != k {
            return Err(Error::config(
                "rician_ris",
                format!("expected {k} entries, got {}", self.rician_ris.len()),
            ));
        }
        if self.rician_ris.iter().any(|z| !(*z >= 0.0 && z.is_finite())) {
            return Err(Error::config("rician_ris", "must be finite non-negative ratios"));
        }
        if !(0.0..=1.0).contains(&self.beta_min) {
            return Err(Error::config("beta_min", "must lie in [0, 1]"));
        }
        if !(self.alpha_steep >= 0.0 && self.alpha_steep.is_finite()) {
            return Err(Error::config("alpha_steep", "must be non-negative"));
        }
        if !(self.phi_shift >= 0.0 && self.phi_shift.is_finite()) {
            return Err(Error::config("phi_shift", "must be non-negative"));
        }
        if !self.pl0_db.is_finite() {
            return Err(Error::config("pl0_db", "must be finite"));
        }
        if !(self.pathloss_exponent >= 0.0 && self.pathloss_exponent.is_finite()) {
            return Err(Error::config("pathloss_exponent", "must be non-negative"));
        }
        if !(self.spacing_ratio > 0.0 && self.spacing_ratio <= 0.5) {
            return Err(Error::config("spacing_ratio", "element spacing d/lambda must lie in (0, 0.5]"));
        }
        if self.actuator_positions.len() != k {
            return Err(Error::config(
                "actuator_positions",
                format!("expected {k} positions, got {}", self.actuator_positions.len()),
            ));
        }
        let heights = [self.bs_height, self.ris_height, self.actuator_height];
        let mut coords = self
            .actuator_positions
            .iter()
            .flatten()
            .chain(&self.bs_position)
            .chain(&self.ris_position)
            .chain(&heights);
        if coords.any(|v| !v.is_finite()) {
            return Err(Error::config("positions", "coordinates and heights must be finite"));
        }
        geometry(self).map(|_| ())
    }
}

/// Hyper-parameters of the learner and of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub mode: AgentMode,
    pub cbl_mode: CblMode,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub gamma: f64,
    pub tau: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Std of the exploration noise.
    pub sigma_explore: f64,
    /// Std of the target-policy smoothing noise.
    pub sigma_smooth: f64,
    pub smooth_clip: f64,
    pub policy_delay: u64,
    pub n_steps: usize,
    pub n_episodes: usize,
    /// Uniform-random steps before the first update.
    pub warmup_steps: usize,
    pub eval_realizations: usize,
    /// Steps per greedy evaluation episode.
    pub eval_steps: usize,
    /// Evaluate every this many episodes (the last episode is always evaluated). 0 disables periodic evaluation.
    pub eval_interval: usize,
    pub actor_layers: Vec<usize>,
    /// Widths applied separately to the state and the action before they are summed.
    pub critic_trunk: Vec<usize>,
    pub critic_head: Vec<usize>,
    pub layer_norm: bool,
    pub reward_scale: f64,
    /// Half-width of the uniform initialization of the actor's output layer.
    pub actor_output_init: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            mode: AgentMode::Td3,
            cbl_mode: CblMode::Learned,
            lr_actor: 1e-4,
            lr_critic: 1e-4,
            gamma: 0.99,
            tau: 0.005,
            buffer_capacity: 10_000,
            batch_size: 64,
            sigma_explore: 0.1f64.sqrt(),
            sigma_smooth: 0.1f64.sqrt(),
            smooth_clip: 0.5,
            policy_delay: 4,
            n_steps: 100,
            n_episodes: 5000,
            warmup_steps: 64,
            eval_realizations: 100,
            eval_steps: 100,
            eval_interval: 100,
            actor_layers: vec![800, 400, 200],
            critic_trunk: vec![800],
            critic_head: vec![600, 400],
            layer_norm: true,
            reward_scale: 0.01,
            actor_output_init: 1e-3,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::config(
                "gamma",
                "discount factor must lie in [0, 1) for clipped double-Q convergence",
            ));
        }
        for (name, lr) in [("lr_actor", self.lr_actor), ("lr_critic", self.lr_critic)] {
            if !(lr > 0.0 && lr <= 1.0) {
                return Err(Error::config(
                    name,
                    "learning rate must lie in (0, 1] for clipped double-Q convergence",
                ));
            }
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config("tau", "polyak coefficient must lie in (0, 1)"));
        }
        if self.policy_delay < 1 {
            return Err(Error::config("policy_delay", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.batch_size > self.buffer_capacity {
            return Err(Error::config("batch_size", "must not exceed buffer_capacity"));
        }
        for (name, v) in [
            ("sigma_explore", self.sigma_explore),
            ("sigma_smooth", self.sigma_smooth),
            ("smooth_clip", self.smooth_clip),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        if self.n_steps == 0 {
            return Err(Error::config("n_steps", "must be at least 1"));
        }
        if self.n_episodes == 0 {
            return Err(Error::config("n_episodes", "must be at least 1"));
        }
        if self.eval_realizations == 0 {
            return Err(Error::config("eval_realizations", "must be at least 1"));
        }
        if self.eval_steps == 0 {
            return Err(Error::config("eval_steps", "must be at least 1"));
        }
        for (name, widths) in [
            ("actor_layers", &self.actor_layers),
            ("critic_trunk", &self.critic_trunk),
            ("critic_head", &self.critic_head),
        ] {
            if widths.contains(&0) {
                return Err(Error::config(name, "layer widths must be positive"));
            }
        }
        if self.critic_trunk.is_empty() {
            return Err(Error::config("critic_trunk", "needs at least one layer"));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::config("reward_scale", "must be positive"));
        }
        if !(self.actor_output_init > 0.0 && self.actor_output_init.is_finite()) {
            return Err(Error::config("actor_output_init", "must be positive"));
        }
        Ok(())
    }
}

/// Default parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    /// Full-size networks and episode counts.
    #[default]
    Paper,
    /// Reduced networks and training length that run on a laptop in minutes.
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::config("profile", format!("unknown profile `{other}`"))),
        }
    }
}

/// The whole configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub learn: LearnConfig,
}

impl Config {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Config::default(),
            Profile::Desk => {
                let mut scenario = ScenarioConfig::default();
                scenario.set_ris_elements(8);
                let learn = LearnConfig {
                    lr_actor: 1e-3,
                    lr_critic: 1e-3,
                    sigma_explore: 0.1,
                    actor_output_init: 1.0,
                    n_steps: 50,
                    n_episodes: 200,
                    eval_realizations: 50,
                    eval_steps: 10,
                    eval_interval: 0,
                    actor_layers: vec![128, 64, 32],
                    critic_trunk: vec![128],
                    critic_head: vec![96, 64],
                    ..LearnConfig::default()
                };
                Config { scenario, learn }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.learn.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses a configuration document over the paper defaults.
pub fn load_config(source: &str) -> Result<(ScenarioConfig, LearnConfig)> {
    let cfg = load_config_with_profile(source, Profile::Paper)?;
    Ok((cfg.scenario, cfg.learn))
}

/// Parses a configuration document over the defaults of `profile` and validates it.
pub fn load_config_with_profile(source: &str, profile: Profile) -> Result<Config> {
    let doc: toml::Table = toml::from_str(source).map_err(|e| Error::Parse(e.to_string()))?;
    let mut base = toml::Table::try_from(Config::for_profile(profile))
        .map_err(|e| Error::Parse(e.to_string()))?;
    merge_tables(&mut base, doc);
    let cfg: Config = toml::Value::Table(base)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Receiver noise power in watts, `N0 * W` inflated by the noise figure.
pub fn noise_power(cfg: &ScenarioConfig) -> f64 {
    let dbm = cfg.noise_density_dbm + 10.0 * cfg.bandwidth.log10() + cfg.noise_figure_db;
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Distance and angles of a link, seen from its first endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub distance: f64,
    pub planar_distance: f64,
    /// Planar bearing from the global x axis, radians.
    pub azimuth: f64,
    /// Angle above the horizontal plane, radians.
    pub elevation: f64,
}

/// Builds the link from `(from, from_height)` to `(to, to_height)`.
///
/// Fails when both endpoints share a planar position: the bearing is undefined.
pub fn link(from: [f64; 2], from_height: f64, to: [f64; 2], to_height: f64) -> Result<Link> {
    let dx = to[0] - from[0];
    let dy = to[1] - from[1];
    let dz = to_height - from_height;
    let planar = dx.hypot(dy);
    if planar == 0.0 {
        return Err(Error::Geometry(format!(
            "endpoints {from:?} and {to:?} share a planar position; azimuth undefined"
        )));
    }
    Ok(Link {
        distance: planar.hypot(dz),
        planar_distance: planar,
        azimuth: dy.atan2(dx),
        elevation: dz.atan2(planar),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    /// Departure at the BS array toward the RIS.
    pub bs_to_ris: Link,
    /// Arrival at the RIS array from the BS.
    pub ris_to_bs: Link,
    pub ris_to_actuators: Vec<Link>,
}

pub fn geometry(cfg: &ScenarioConfig) -> Result<Geometry> {
    let bs_to_ris = link(cfg.bs_position, cfg.bs_height, cfg.ris_position, cfg.ris_height)?;
    let ris_to_bs = link(cfg.ris_position, cfg.ris_height, cfg.bs_position, cfg.bs_height)?;
    let ris_to_actuators = cfg
        .actuator_positions
        .iter()
        .map(|&p| link(cfg.ris_position, cfg.ris_height, p, cfg.actuator_height))
        .collect::<Result<Vec<_>>>()?;
    Ok(Geometry {
        bs_to_ris,
        ris_to_bs,
        ris_to_actuators,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_table_defaults() {
        let (s, l) = load_config("").unwrap();
        assert_eq!(s.num_actuators, 4);
        assert_eq!(s.bs_antennas(), 4);
        assert_eq!(s.ris_elements(), 16);
        assert_eq!(s.p_total, 1e-3);
        assert_eq!(s.eps_th, 1e-8);
        assert_eq!(s.total_blocklength, 100);
        assert_eq!(s.min_blocklength, vec![10; 4]);
        assert_eq!(s.bandwidth, 1e5);
        assert_eq!(s.noise_density_dbm, -174.0);
        assert_eq!(s.noise_figure_db, 3.0);
        assert_eq!(s.rician_incident, 10.0);
        assert_eq!(s.rician_ris, vec![10.0; 4]);
        assert_eq!((s.beta_min, s.alpha_steep), (0.4, 1.9));
        assert_eq!(s.phi_shift, 0.43 * PI);
        assert_eq!((s.pl0_db, s.pathloss_exponent), (-30.0, 2.2));
        assert_eq!(s.bs_position, [0.0, 0.0]);
        assert_eq!(s.ris_position, [40.0, 0.0]);
        assert_eq!(s.actuator_positions[3], [64.0, 40.0]);
        assert_eq!(s.bs_height, 12.5);
        assert_eq!(l.tau, 0.005);
        assert_eq!(l.buffer_capacity, 10_000);
        assert_eq!(l.batch_size, 64);
        assert_eq!(l.policy_delay, 4);
        assert_eq!(l.lr_actor, 1e-4);
        assert!((l.sigma_explore.powi(2) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn gamma_one_is_rejected() {
        let err = load_config("[learn]\ngamma = 1.0\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "gamma"), "{err}");
    }

    #[test]
    fn infeasible_minimum_blocklengths_rejected() {
        let err = load_config("[scenario]\nmin_blocklength = [30, 30, 30, 30]\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "min_blocklength"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(load_config("[scenario]\nbogus = 1\n"), Err(Error::Parse(_))));
        assert!(matches!(load_config("[extra]\nx = 1\n"), Err(Error::Parse(_))));
    }

    #[test]
    fn other_invariants() {
        for doc in [
            "[scenario]\nspacing_ratio = 0.6",
            "[scenario]\neps_th = 0.5",
            "[scenario]\nbeta_min = 1.5",
            "[scenario]\np_total = 0.0",
            "[learn]\nlr_actor = 0.0",
            "[learn]\ntau = 1.0",
            "[learn]\npolicy_delay = 0",
            "[learn]\nbatch_size = 20000",
        ] {
            assert!(load_config(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn load_is_idempotent() {
        let cfg = load_config_with_profile("[scenario]\np_total = 0.0031\n", Profile::Desk).unwrap();
        let again = load_config_with_profile(&cfg.to_toml(), Profile::Paper).unwrap();
        assert_eq!(cfg, again);
        let paper = Config::default();
        assert_eq!(load_config_with_profile(&paper.to_toml(), Profile::Desk).unwrap(), paper);
    }

    #[test]
    fn noise_power_values() {
        let cfg = ScenarioConfig::default();
        let p = noise_power(&cfg);
        assert!((p / 10f64.powf(-15.1) - 1.0).abs() < 1e-12);

        let unit = ScenarioConfig {
            noise_figure_db: 0.0,
            bandwidth: 1.0,
            ..cfg.clone()
        };
        assert!((noise_power(&unit) / 10f64.powf(-20.4) - 1.0).abs() < 1e-12);

        let wide = ScenarioConfig {
            bandwidth: 2e5,
            ..cfg
        };
        let gain_db = 10.0 * (noise_power(&wide) / p).log10();
        assert!((gain_db - 3.010_299_956_639_812).abs() < 1e-9);
    }

    #[test]
    fn geometry_examples() {
        let l = link([0.0, 0.0], 12.5, [40.0, 0.0], 12.5).unwrap();
        assert_eq!(l.distance, 40.0);
        assert_eq!(l.elevation, 0.0);

        let l = link([40.0, 0.0], 12.5, [40.0, 40.0], 1.5).unwrap();
        assert_eq!(l.planar_distance, 40.0);
        assert!((l.elevation - (-11.0f64 / 40.0).atan()).abs() < 1e-15);
        assert!((l.distance - (1600.0f64 + 121.0).sqrt()).abs() < 1e-12);

        assert!(matches!(
            link([40.0, 0.0], 12.5, [40.0, 0.0], 1.5),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn distances_are_symmetric() {
        let cfg = ScenarioConfig::default();
        let g = geometry(&cfg).unwrap();
        assert_eq!(g.bs_to_ris.distance, g.ris_to_bs.distance);
        for (k, p) in cfg.actuator_positions.iter().enumerate() {
            let back = link(*p, cfg.actuator_height, cfg.ris_position, cfg.ris_height).unwrap();
            assert_eq!(back.distance, g.ris_to_actuators[k].distance);
        }
    }

    #[test]
    fn ris_factorization() {
        let mut cfg = ScenarioConfig::default();
        for (n, dims) in [(4, [2, 2]), (8, [2, 4]), (16, [4, 4]), (36, [6, 6]), (7, [1, 7])] {
            cfg.set_ris_elements(n);
            assert_eq!(cfg.ris_array, dims);
        }
    }
}
