//! RIS reflection: phases, the phase-dependent amplitude law and the
//! composite channels it induces.

use std::f64::consts::PI;

use crate::channel::ChannelSet;
use crate::cmat::{dot, CMatrix, C64};
use crate::error::{Error, Result};
use crate::scenario::{RisMode, ScenarioConfig};

/// Amplitude of an element set to phase `theta`:
/// `(1 - beta_min) * ((sin(theta - phi) + 1) / 2)^alpha + beta_min`.
pub fn amplitude_response(theta: f64, beta_min: f64, alpha: f64, phi: f64) -> f64 {
    if beta_min == 1.0 {
        return 1.0;
    }
    let base = ((theta - phi).sin() + 1.0) / 2.0;
    (1.0 - beta_min) * base.clamp(0.0, 1.0).powf(alpha) + beta_min
}

/// Wraps into `[-pi, pi)`; `pi` maps to `-pi`.
pub fn wrap_phase(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RisState {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub mode: RisMode,
}

impl RisState {
    /// `beta_n e^{j theta_n}` per element, i.e. the row that left-multiplies `H_tilde_k`.
    pub fn reflection(&self) -> Vec<C64> {
        self.theta
            .iter()
            .zip(&self.beta)
            .map(|(&t, &b)| C64::from_polar(b, t))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

pub fn build_ris_state(theta: &[f64], cfg: &ScenarioConfig) -> RisState {
    let theta: Vec<f64> = theta.iter().map(|&t| wrap_phase(t)).collect();
    let beta = match cfg.ris_mode {
        RisMode::Ideal => vec![1.0; theta.len()],
        RisMode::Practical => theta
            .iter()
            .map(|&t| amplitude_response(t, cfg.beta_min, cfg.alpha_steep, cfg.phi_shift))
            .collect(),
    };
    RisState {
        theta,
        beta,
        mode: cfg.ris_mode,
    }
}

/// Per-actuator cascaded channels `H_tilde_k = diag(conj(h_k)) H` and the
/// composite rows `g_k = reflection * H_tilde_k` (length `M`).
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    pub h_tilde: Vec<CMatrix>,
    pub composite: Vec<Vec<C64>>,
}

pub fn cascaded_channels(ch: &ChannelSet) -> Vec<CMatrix> {
    let (n, m) = (ch.num_elements(), ch.num_antennas());
    ch.h_ris
        .iter()
        .map(|hk| {
            let mut out = CMatrix::zeros(n, m);
            for r in 0..n {
                let c = hk[r].conj();
                for col in 0..m {
                    out[(r, col)] = c * ch.h[(r, col)];
                }
            }
            out
        })
        .collect()
}

fn check_dims(ris: &RisState, ch: &ChannelSet) -> Result<()> {
    if ris.theta.len() != ris.beta.len() {
        return Err(Error::Dimension("RIS phase and amplitude lengths differ".into()));
    }
    if ris.len() != ch.num_elements() {
        return Err(Error::Dimension(format!(
            "RIS state has {} elements, channel has {}",
            ris.len(),
            ch.num_elements()
        )));
    }
    if ch.h_ris.iter().any(|h| h.len() != ch.num_elements()) {
        return Err(Error::Dimension("RIS-actuator vector length differs from N".into()));
    }
    Ok(())
}

pub fn effective_channels(ris: &RisState, ch: &ChannelSet) -> Result<EffectiveChannels> {
    check_dims(ris, ch)?;
    let h_tilde = cascaded_channels(ch);
    let refl = ris.reflection();
    let composite = h_tilde
        .iter()
        .map(|ht| {
            (0..ht.cols())
                .map(|col| (0..ht.rows()).map(|r| refl[r] * ht[(r, col)]).sum())
                .collect()
        })
        .collect();
    Ok(EffectiveChannels { h_tilde, composite })
}

/// Composite rows only, without materializing `H_tilde_k`.
pub fn composite_rows(ris: &RisState, ch: &ChannelSet) -> Result<Vec<Vec<C64>>> {
    check_dims(ris, ch)?;
    let refl = ris.reflection();
    let m = ch.num_antennas();
    Ok(ch
        .h_ris
        .iter()
        .map(|hk| {
            let mut g = vec![C64::new(0.0, 0.0); m];
            for (n, (r, h)) in refl.iter().zip(hk).enumerate() {
                let w = r * h.conj();
                for (gm, hm) in g.iter_mut().zip(ch.h.row(n)) {
                    *gm += w * hm;
                }
            }
            g
        })
        .collect())
}

/// `h_k^H Theta H w`, evaluated through the diagonal reflection matrix.
pub fn received_amplitude(ris: &RisState, ch: &ChannelSet, k: usize, w: &[C64]) -> Result<C64> {
    check_dims(ris, ch)?;
    let hw = ch.h.mul_vec(w)?;
    let theta_hw: Vec<C64> = ris.reflection().iter().zip(&hw).map(|(r, x)| r * x).collect();
    let hk_h: Vec<C64> = ch.h_ris[k].iter().map(|z| z.conj()).collect();
    Ok(dot(&hk_h, &theta_hw))
}
