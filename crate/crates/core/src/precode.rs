//! Linear precoding baselines: zero forcing and regularized (MMSE-style)
//! inversion of the stacked composite channel, plus random-phase and
//! equal-split comparators.

use std::f64::consts::PI;

use rand::Rng;

use crate::channel::ChannelSet;
use crate::cmat::{norm_sqr, CMatrix, C64};
use crate::env::AllocationDecision;
use crate::error::{Error, Result};
use crate::ris::{build_ris_state, composite_rows};
use crate::scenario::ScenarioConfig;

/// Beyond this 1-norm condition estimate a system is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Beamforming vectors, one per actuator, each of length `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub w: Vec<Vec<C64>>,
}

impl BeamformerSet {
    pub fn powers(&self) -> Vec<f64> {
        self.w.iter().map(|w| norm_sqr(w)).collect()
    }

    pub fn total_power(&self) -> f64 {
        self.powers().iter().sum()
    }

    pub fn zeros(k: usize, m: usize) -> Self {
        Self {
            w: vec![vec![C64::new(0.0, 0.0); m]; k],
        }
    }
}

struct Lu {
    lu: CMatrix,
    perm: Vec<usize>,
}

fn lu_factor(a: &CMatrix) -> Result<Lu> {
    let n = a.rows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| lu[(i, col)].norm().total_cmp(&lu[(j, col)].norm()))
            .unwrap_or(col);
        if lu[(pivot, col)].norm() == 0.0 {
            return Err(Error::Singular {
                condition: f64::INFINITY,
            });
        }
        if pivot != col {
            for c in 0..n {
                let tmp = lu[(col, c)];
                lu[(col, c)] = lu[(pivot, c)];
                lu[(pivot, c)] = tmp;
            }
            perm.swap(col, pivot);
        }
        let d = lu[(col, col)];
        for r in col + 1..n {
            let f = lu[(r, col)] / d;
            lu[(r, col)] = f;
            for c in col + 1..n {
                let sub = f * lu[(col, c)];
                lu[(r, c)] -= sub;
            }
        }
    }
    Ok(Lu { lu, perm })
}

fn lu_solve(f: &Lu, b: &CMatrix) -> CMatrix {
    let n = f.lu.rows();
    let mut x = CMatrix::zeros(n, b.cols());
    for c in 0..b.cols() {
        let mut y: Vec<C64> = f.perm.iter().map(|&p| b[(p, c)]).collect();
        for r in 0..n {
            for j in 0..r {
                let t = f.lu[(r, j)] * y[j];
                y[r] -= t;
            }
        }
        for r in (0..n).rev() {
            for j in r + 1..n {
                let t = f.lu[(r, j)] * y[j];
                y[r] -= t;
            }
            y[r] /= f.lu[(r, r)];
        }
        for r in 0..n {
            x[(r, c)] = y[r];
        }
    }
    x
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
///
/// `A` is typically the Hermitian Gram matrix `G G^H` but need not be.
/// Systems whose 1-norm condition estimate exceeds [`CONDITION_LIMIT`] are
/// rejected.
pub fn solve_hermitian(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.rows() != a.cols() || b.rows() != a.rows() {
        return Err(Error::Dimension(format!(
            "system {}x{} with right-hand side {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let f = lu_factor(a)?;
    let inv = lu_solve(&f, &CMatrix::identity(a.rows()));
    let condition = a.norm1() * inv.norm1();
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::Singular { condition });
    }
    Ok(lu_solve(&f, b))
}

fn check_rank(g: &[Vec<C64>]) -> Result<()> {
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(g.len());
    for (row, gk) in g.iter().enumerate() {
        let scale = norm_sqr(gk).sqrt();
        let mut r = gk.clone();
        for q in &basis {
            // projection coefficient <q, r> with q normalized
            let coef: C64 = q.iter().zip(&r).map(|(a, b)| a.conj() * b).sum();
            for (ri, qi) in r.iter_mut().zip(q) {
                *ri -= coef * qi;
            }
        }
        let res = norm_sqr(&r).sqrt();
        if scale == 0.0 || res <= 1e-10 * scale {
            return Err(Error::RankDeficient { row });
        }
        basis.push(r.into_iter().map(|z| z / res).collect());
    }
    Ok(())
}

fn regularized_inverse_precoder(g: &[Vec<C64>], p_total: f64, reg: f64) -> Result<BeamformerSet> {
    let k = g.len();
    let m = g.first().map_or(0, Vec::len);
    if k == 0 || k > m {
        return Err(Error::Dimension(format!(
            "linear precoding needs 1 <= K <= M, got K={k}, M={m}"
        )));
    }
    let gm = CMatrix::from_rows(g)?;
    let gh = gm.adjoint();
    let mut gram = gm.matmul(&gh)?;
    for i in 0..k {
        gram[(i, i)] += C64::new(reg, 0.0);
    }
    let x = solve_hermitian(&gram, &CMatrix::identity(k))?;
    let w_mat = gh.matmul(&x)?;
    let per_user = p_total / k as f64;
    let w = (0..k)
        .map(|c| {
            let col = w_mat.col(c);
            let s = (per_user / norm_sqr(&col)).sqrt();
            col.into_iter().map(|z| z * s).collect()
        })
        .collect();
    Ok(BeamformerSet { w })
}

/// Zero-forcing `W = G^H (G G^H)^-1`, columns rescaled to `p_total / K` each.
pub fn zf_precoder(g: &[Vec<C64>], p_total: f64) -> Result<BeamformerSet> {
    check_rank(g)?;
    regularized_inverse_precoder(g, p_total, 0.0)
}

/// Regularized inversion `W = G^H (G G^H + K sigma2 / p_total I)^-1`, equal power per user.
pub fn mmse_precoder(g: &[Vec<C64>], p_total: f64, sigma2: f64) -> Result<BeamformerSet> {
    let k = g.len() as f64;
    regularized_inverse_precoder(g, p_total, k * sigma2 / p_total)
}

/// `floor(C / K)` each, remainder handed to the lowest indices.
pub fn equal_blocklengths(total: u32, k: usize) -> Vec<u32> {
    let k32 = k as u32;
    let base = total / k32;
    let rem = (total % k32) as usize;
    (0..k).map(|i| base + u32::from(i < rem)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Precoder {
    ZeroForcing,
    Mmse { sigma2: f64 },
}

/// Uniformly random RIS phases, linear precoding on the resulting composite
/// channel, equal blocklength split.
pub fn random_phase_decision<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    ch: &ChannelSet,
    precoder: Precoder,
    rng: &mut R,
) -> Result<AllocationDecision> {
    let theta: Vec<f64> = (0..ch.num_elements()).map(|_| rng.random_range(-PI..PI)).collect();
    let ris = build_ris_state(&theta, cfg);
    let g = composite_rows(&ris, ch)?;
    let bf = match precoder {
        Precoder::ZeroForcing => zf_precoder(&g, cfg.p_total)?,
        Precoder::Mmse { sigma2 } => mmse_precoder(&g, cfg.p_total, sigma2)?,
    };
    let c = equal_blocklengths(cfg.total_blocklength, cfg.num_actuators);
    Ok(AllocationDecision { ris, bf, c })
}

pub fn random_phase_baseline<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    ch: &ChannelSet,
    rng: &mut R,
) -> Result<AllocationDecision> {
    random_phase_decision(cfg, ch, Precoder::ZeroForcing, rng)
}
