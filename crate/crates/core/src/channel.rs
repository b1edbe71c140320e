//! Rician fading channels of the BS -> RIS -> actuator cascade.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cmat::{CMatrix, C64};
use crate::error::{Error, Result};
use crate::scenario::{Geometry, ScenarioConfig};

/// Uniform planar array response parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeringSpec {
    pub azimuth: f64,
    pub elevation: f64,
    pub n1: usize,
    pub n2: usize,
    pub spacing_ratio: f64,
}

/// Row-vectorized UPA response: entry `(i, j)` lands at `i * n2 + j` and has
/// phase `2 pi (d/lambda) [i cos(az) + j sin(az)] sin(el)`.
pub fn steering_vector(spec: &SteeringSpec) -> Vec<C64> {
    let (s_az, c_az) = spec.azimuth.sin_cos();
    let k = 2.0 * std::f64::consts::PI * spec.spacing_ratio * spec.elevation.sin();
    let mut out = Vec::with_capacity(spec.n1 * spec.n2);
    for i in 0..spec.n1 {
        for j in 0..spec.n2 {
            let g = k * (i as f64 * c_az + j as f64 * s_az);
            out.push(C64::from_polar(1.0, g));
        }
    }
    out
}

/// Large-scale power gain `10^((PL0 - 10 nu log10 D) / 10)`.
pub fn pathloss_linear(distance: f64, pl0_db: f64, nu: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {distance}")));
    }
    let db = pl0_db - 10.0 * nu * distance.log10();
    Ok(10f64.powf(db / 10.0))
}

/// One channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// BS -> RIS, `N x M`.
    pub h: CMatrix,
    /// RIS -> actuator `k`, length `N` each.
    pub h_ris: Vec<Vec<C64>>,
    pub pathloss_inc: f64,
    pub pathloss_ris: Vec<f64>,
}

impl ChannelSet {
    pub fn num_elements(&self) -> usize {
        self.h.rows()
    }

    pub fn num_antennas(&self) -> usize {
        self.h.cols()
    }

    pub fn num_actuators(&self) -> usize {
        self.h_ris.len()
    }

    const MAGIC: &'static [u8; 8] = b"RISCHAN1";

    /// Little-endian dump: magic, `N`, `M`, `K` as u64, the path-loss gains,
    /// then `H` row-major and each `h_k` as `(re, im)` f64 pairs.
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(Self::MAGIC)?;
        for d in [self.num_elements(), self.num_antennas(), self.num_actuators()] {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        out.write_all(&self.pathloss_inc.to_le_bytes())?;
        for g in &self.pathloss_ris {
            out.write_all(&g.to_le_bytes())?;
        }
        for z in self.h.data().iter().chain(self.h_ris.iter().flatten()) {
            out.write_all(&z.re.to_le_bytes())?;
            out.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Checkpoint("not a channel dump".into()));
        }
        let mut u = || -> Result<u64> {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let (n, m, k) = (u()? as usize, u()? as usize, u()? as usize);
        if n.saturating_mul(m).saturating_add(n.saturating_mul(k)) > 1 << 28 {
            return Err(Error::Checkpoint("implausible channel dimensions".into()));
        }
        let mut f = || -> Result<f64> {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let pathloss_inc = f()?;
        let pathloss_ris = (0..k).map(|_| f()).collect::<Result<Vec<_>>>()?;
        let mut c = || -> Result<C64> { Ok(C64::new(f()?, f()?)) };
        let h = CMatrix::from_vec(n, m, (0..n * m).map(|_| c()).collect::<Result<_>>()?)?;
        let h_ris = (0..k)
            .map(|_| (0..n).map(|_| c()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            h,
            h_ris,
            pathloss_inc,
            pathloss_ris,
        })
    }
}

fn path_gains(cfg: &ScenarioConfig, geom: &Geometry) -> Result<(f64, Vec<f64>)> {
    let inc = pathloss_linear(geom.bs_to_ris.distance, cfg.pl0_db, cfg.pathloss_exponent)?;
    let ris = geom
        .ris_to_actuators
        .iter()
        .map(|l| pathloss_linear(l.distance, cfg.pl0_db, cfg.pathloss_exponent))
        .collect::<Result<Vec<_>>>()?;
    Ok((inc, ris))
}

/// Deterministic line-of-sight parts (unit Rician weights).
pub fn los_channels(cfg: &ScenarioConfig, geom: &Geometry) -> Result<ChannelSet> {
    let (pathloss_inc, pathloss_ris) = path_gains(cfg, geom)?;
    let [nx, ny] = cfg.ris_array;
    let [mx, my] = cfg.bs_array;
    let at_ris = steering_vector(&SteeringSpec {
        azimuth: geom.ris_to_bs.azimuth,
        elevation: geom.ris_to_bs.elevation,
        n1: nx,
        n2: ny,
        spacing_ratio: cfg.spacing_ratio,
    });
    let at_bs = steering_vector(&SteeringSpec {
        azimuth: geom.bs_to_ris.azimuth,
        elevation: geom.bs_to_ris.elevation,
        n1: mx,
        n2: my,
        spacing_ratio: cfg.spacing_ratio,
    });
    let amp = pathloss_inc.sqrt();
    let mut h = CMatrix::zeros(at_ris.len(), at_bs.len());
    for (n, a) in at_ris.iter().enumerate() {
        for (m, b) in at_bs.iter().enumerate() {
            h[(n, m)] = a.conj() * b * amp;
        }
    }
    let h_ris = geom
        .ris_to_actuators
        .iter()
        .zip(&pathloss_ris)
        .map(|(l, g)| {
            let amp = g.sqrt();
            steering_vector(&SteeringSpec {
                azimuth: l.azimuth,
                elevation: l.elevation,
                n1: nx,
                n2: ny,
                spacing_ratio: cfg.spacing_ratio,
            })
            .into_iter()
            .map(|z| z * amp)
            .collect()
        })
        .collect();
    Ok(ChannelSet {
        h,
        h_ris,
        pathloss_inc,
        pathloss_ris,
    })
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

fn rician_weights(zeta: f64) -> (f64, f64) {
    ((zeta / (zeta + 1.0)).sqrt(), (1.0 / (zeta + 1.0)).sqrt())
}

/// Draws one Rician realization. NLoS entries of `H` are drawn row-major,
/// followed by each actuator vector in order.
pub fn draw_channels<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    geom: &Geometry,
    rng: &mut R,
) -> Result<ChannelSet> {
    let mut ch = los_channels(cfg, geom)?;
    let (los_w, nlos_w) = rician_weights(cfg.rician_incident);
    let var = ch.pathloss_inc;
    for z in ch.h.data_mut() {
        *z = *z * los_w + complex_gaussian(rng, var) * nlos_w;
    }
    for (k, hk) in ch.h_ris.iter_mut().enumerate() {
        let (los_w, nlos_w) = rician_weights(cfg.rician_ris[k]);
        let var = ch.pathloss_ris[k];
        for z in hk.iter_mut() {
            *z = *z * los_w + complex_gaussian(rng, var) * nlos_w;
        }
    }
    Ok(ch)
}
