//! The estimator family: unconditional LMMSE, shift-conditional LMMSE, the
//! Gaussian shift posterior with its MAP and ψ-statistic synchronizers, the
//! plug-in MAP-QLMMSE, and the exact mixture MMSE.
//!
//! The signal of interest is assumed synchronized (k_s = 0) everywhere except
//! [`mmse_joint`], which sums over both shifts.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::covariance::CovBank;
use crate::error::{Error, Result};
use crate::signals::{ComplexSignal, C64};

/// Posterior weights below this are dropped from the MMSE sum; their
/// contribution is far below double precision of the result.
const NEGLIGIBLE_WEIGHT: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    MfOnly,
    Lmmse,
    Mmse,
    MapQlmmse,
    PsiQlmmse,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::MfOnly,
        Method::Lmmse,
        Method::Mmse,
        Method::MapQlmmse,
        Method::PsiQlmmse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::MfOnly => "MF",
            Method::Lmmse => "LMMSE",
            Method::Mmse => "MMSE",
            Method::MapQlmmse => "MAP-QLMMSE",
            Method::PsiQlmmse => "PSI-QLMMSE",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key || (key == "MF-ONLY" && *m == Method::MfOnly))
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Posterior over the interference shifts, uniform prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftPosterior {
    pub probs: Vec<f64>,
    /// Unnormalized Gaussian log-likelihoods, −yᴴC⁻¹y − log det C.
    pub log_likes: Vec<f64>,
}

impl ShiftPosterior {
    pub fn from_log_likes(log_likes: Vec<f64>) -> Result<Self> {
        if log_likes.is_empty() {
            return Err(Error::Empty("no shift hypotheses".into()));
        }
        if let Some(bad) = log_likes.iter().position(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("log-likelihood of shift {bad}")));
        }
        let max = log_likes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = log_likes.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        Ok(Self { probs, log_likes })
    }

    /// Most probable shift; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax_lowest(&self.log_likes)
    }
}

pub(crate) fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmin_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    pub s_hat: ComplexSignal,
    pub k_b_hat: Option<usize>,
    pub posterior: Option<ShiftPosterior>,
    pub method: Method,
}

fn check_block(y: &[C64], bank: &CovBank) -> Result<()> {
    if y.is_empty() || y.len() > bank.block_len() {
        return Err(Error::Length {
            expected: bank.block_len(),
            got: y.len(),
        });
    }
    Ok(())
}

fn check_shift(m: usize, bank: &CovBank) -> Result<()> {
    if m >= bank.num_shifts() {
        return Err(Error::OutOfRange {
            index: m,
            bound: bank.num_shifts(),
        });
    }
    Ok(())
}

fn to_vec(v: DVector<C64>) -> Vec<C64> {
    v.as_slice().to_vec()
}

/// Unconditional LMMSE, C_ss C̄_yy⁻¹ y, with C̄_yy the shift-averaged
/// mixture covariance.
pub fn lmmse(y: &[C64], bank: &CovBank) -> Result<Vec<C64>> {
    check_block(y, bank)?;
    let z = bank.c_yy_avg().solve(y)?;
    Ok(to_vec(bank.apply_c_ss(&z)))
}

/// LMMSE conditioned on interference shift `m`, C_ss C_yy(m)⁻¹ y.
pub fn lmmse_cond(y: &[C64], m: usize, bank: &CovBank) -> Result<Vec<C64>> {
    check_block(y, bank)?;
    check_shift(m, bank)?;
    let z = bank.c_yy(m)?.solve(y)?;
    Ok(to_vec(bank.apply_c_ss(&z)))
}

/// Whitened block and log-likelihood for every hypothesis `m`, evaluated at
/// the covariance of shift `(m + advance) mod K_b`.
fn whitened_all(y: &[C64], bank: &CovBank, advance: usize) -> Result<Vec<(DVector<C64>, f64)>> {
    let k = bank.num_shifts();
    (0..k)
        .map(|m| {
            let c = bank.c_yy((m + advance) % k)?;
            let u = c.whiten(y)?;
            let ll = -u.norm_squared() - c.logdet_prefix(y.len());
            Ok((u, ll))
        })
        .collect()
}

pub fn shift_posterior(y: &[C64], bank: &CovBank) -> Result<ShiftPosterior> {
    check_block(y, bank)?;
    let ll = whitened_all(y, bank, 0)?.into_iter().map(|(_, l)| l).collect();
    ShiftPosterior::from_log_likes(ll)
}

pub fn map_sync(y: &[C64], bank: &CovBank) -> Result<usize> {
    Ok(shift_posterior(y, bank)?.argmax())
}

/// Shift posterior and ψ(y, m) for every m from one whitening pass.
pub fn sync_statistics(y: &[C64], bank: &CovBank) -> Result<(ShiftPosterior, Vec<f64>)> {
    check_block(y, bank)?;
    let stats = whitened_all(y, bank, 0)?;
    let psi = stats
        .iter()
        .map(|(u, _)| u.norm_squared() / y.len() as f64 - 1.0)
        .collect();
    let post = ShiftPosterior::from_log_likes(stats.into_iter().map(|(_, l)| l).collect())?;
    Ok((post, psi))
}

/// ψ(y, m) = (1/L) yᴴ C_yy(m)⁻¹ y − 1, via the whitened vector.
pub fn psi_stat(y: &[C64], m: usize, bank: &CovBank) -> Result<f64> {
    check_block(y, bank)?;
    check_shift(m, bank)?;
    let u = bank.c_yy(m)?.whiten(y)?;
    Ok(u.norm_squared() / y.len() as f64 - 1.0)
}

/// argmin over m of |ψ(y, m)|, ties to the lowest index.
pub fn psi_sync(y: &[C64], bank: &CovBank) -> Result<usize> {
    check_block(y, bank)?;
    let psi = (0..bank.num_shifts())
        .map(|m| psi_stat(y, m, bank).map(f64::abs))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmin_lowest(&psi))
}

fn result(y: Vec<C64>, k_b_hat: Option<usize>, posterior: Option<ShiftPosterior>, method: Method) -> SeparationResult {
    SeparationResult {
        s_hat: ComplexSignal::new(y),
        k_b_hat,
        posterior,
        method,
    }
}

/// Synchronize with the MAP rule, then apply the LMMSE conditioned on the
/// estimated shift.
pub fn map_qlmmse(y: &[C64], bank: &CovBank) -> Result<SeparationResult> {
    let post = shift_posterior(y, bank)?;
    let k = post.argmax();
    let s = lmmse_cond(y, k, bank)?;
    Ok(result(s, Some(k), Some(post), Method::MapQlmmse))
}

pub fn psi_qlmmse(y: &[C64], bank: &CovBank) -> Result<SeparationResult> {
    let k = psi_sync(y, bank)?;
    let s = lmmse_cond(y, k, bank)?;
    Ok(result(s, Some(k), None, Method::PsiQlmmse))
}

/// Posterior-weighted sum of the conditional LMMSE estimates,
/// C_ss Σ_m P(m|y) C_yy(m)⁻¹ y.
pub fn mmse(y: &[C64], bank: &CovBank) -> Result<SeparationResult> {
    check_block(y, bank)?;
    let stats = whitened_all(y, bank, 0)?;
    let ll: Vec<f64> = stats.iter().map(|(_, l)| *l).collect();
    let post = ShiftPosterior::from_log_likes(ll)?;
    let z = weighted_inverse(y.len(), bank, stats, &post.probs, 0)?;
    let k = post.argmax();
    Ok(result(to_vec(bank.apply_c_ss(&z)), Some(k), Some(post), Method::Mmse))
}

/// Σ_m w_m C_yy(m + advance)⁻¹ y given the whitened vectors Γ⁻¹y.
fn weighted_inverse(
    len: usize,
    bank: &CovBank,
    whitened: Vec<(DVector<C64>, f64)>,
    weights: &[f64],
    advance: usize,
) -> Result<DVector<C64>> {
    let k = bank.num_shifts();
    let mut acc = DVector::from_element(len, C64::new(0.0, 0.0));
    for (m, ((mut u, _), &w)) in whitened.into_iter().zip(weights).enumerate() {
        if w < NEGLIGIBLE_WEIGHT {
            continue;
        }
        let f = bank.c_yy((m + advance) % k)?.factor().view((0, 0), (len, len));
        if !f.ad_solve_lower_triangular_mut(&mut u) {
            return Err(Error::Domain("singular Cholesky factor".into()));
        }
        acc.axpy(C64::new(w, 0.0), &u, C64::new(1.0, 0.0));
    }
    Ok(acc)
}

/// Exact MMSE with both shifts unknown. `banks[m_s]` holds the covariances
/// conditioned on signal-of-interest shift `m_s`. Returns the estimate and the
/// joint posterior, row-major over (m_s, m_b).
pub fn mmse_joint(y: &[C64], banks: &[CovBank]) -> Result<(Vec<C64>, Vec<f64>)> {
    let first = banks
        .first()
        .ok_or_else(|| Error::Empty("no signal-of-interest shifts".into()))?;
    let k_b = first.num_shifts();
    let mut lls = Vec::with_capacity(banks.len() * k_b);
    let mut stats = Vec::with_capacity(banks.len());
    for bank in banks {
        check_block(y, bank)?;
        if bank.num_shifts() != k_b {
            return Err(Error::Length {
                expected: k_b,
                got: bank.num_shifts(),
            });
        }
        let s = whitened_all(y, bank, 0)?;
        lls.extend(s.iter().map(|(_, l)| *l));
        stats.push(s);
    }
    let post = ShiftPosterior::from_log_likes(lls)?;
    let mut acc = DVector::from_element(y.len(), C64::new(0.0, 0.0));
    for (ms, (bank, s)) in banks.iter().zip(stats).enumerate() {
        let w = &post.probs[ms * k_b..(ms + 1) * k_b];
        if w.iter().all(|&p| p < NEGLIGIBLE_WEIGHT) {
            continue;
        }
        let z = weighted_inverse(y.len(), bank, s, w, 0)?;
        acc += bank.apply_c_ss(&z);
    }
    Ok((to_vec(acc), post.probs))
}

/// Shift posterior and ψ for a window spanning several blocks. Block `j`
/// contributes its evidence for hypothesis `m` at shift `(m + jL) mod K_b`;
/// the ψ energies are pooled over the whole window.
pub fn sync_blocks(y: &[C64], bank: &CovBank) -> Result<(ShiftPosterior, Vec<f64>)> {
    if y.is_empty() {
        return Err(Error::Empty("empty synchronization window".into()));
    }
    let l = bank.block_len();
    let k = bank.num_shifts();
    let mut ll = vec![0.0; k];
    let mut energy = vec![0.0; k];
    for (j, block) in y.chunks(l).enumerate() {
        for (m, (u, l_m)) in whitened_all(block, bank, (j * l) % k)?.into_iter().enumerate() {
            ll[m] += l_m;
            energy[m] += u.norm_squared();
        }
    }
    let psi = energy.iter().map(|e| e / y.len() as f64 - 1.0).collect();
    Ok((ShiftPosterior::from_log_likes(ll)?, psi))
}

/// Every requested single-block estimate, sharing one whitening pass.
pub fn separate_block(y: &[C64], bank: &CovBank, methods: &[Method]) -> Result<Vec<SeparationResult>> {
    check_block(y, bank)?;
    let needs_sync = methods
        .iter()
        .any(|m| matches!(m, Method::Mmse | Method::MapQlmmse | Method::PsiQlmmse));
    let stats = if needs_sync { whitened_all(y, bank, 0)? } else { Vec::new() };
    let post = if needs_sync {
        Some(ShiftPosterior::from_log_likes(stats.iter().map(|(_, l)| *l).collect())?)
    } else {
        None
    };
    let cond = |m: usize| -> Result<Vec<C64>> {
        let z = bank.c_yy(m)?.solve_whitened(stats[m].0.clone())?;
        Ok(to_vec(bank.apply_c_ss(&z)))
    };
    methods
        .iter()
        .map(|&method| {
            Ok(match method {
                Method::MfOnly => result(y.to_vec(), None, None, method),
                Method::Lmmse => result(lmmse(y, bank)?, None, None, method),
                Method::MapQlmmse => {
                    let p = post.clone().unwrap();
                    let k = p.argmax();
                    result(cond(k)?, Some(k), Some(p), method)
                }
                Method::PsiQlmmse => {
                    let psi: Vec<f64> = stats
                        .iter()
                        .map(|(u, _)| (u.norm_squared() / y.len() as f64 - 1.0).abs())
                        .collect();
                    let k = argmin_lowest(&psi);
                    result(cond(k)?, Some(k), None, method)
                }
                Method::Mmse => {
                    let p = post.clone().unwrap();
                    let z = weighted_inverse(y.len(), bank, stats.clone(), &p.probs, 0)?;
                    let k = p.argmax();
                    result(to_vec(bank.apply_c_ss(&z)), Some(k), Some(p), method)
                }
            })
        })
        .collect()
}

/// Block processing of a long mixture.
///
/// The shift is estimated once from the first `sync_window` samples: block
/// `j` of the window contributes its evidence for hypothesis `m` at shift
/// `(m + jL) mod K_b`. Every length-`L` block `j` of `y` is then separated
/// assuming shift `(k̂ + jL) mod K_b`. A trailing partial block uses the
/// leading sub-block of each covariance. The block length must be a multiple
/// of the signal-of-interest period so that every block sees C_ss at shift 0.
pub fn separate_long(y: &ComplexSignal, bank: &CovBank, method: Method, sync_window: usize) -> Result<SeparationResult> {
    let l = bank.block_len();
    let k = bank.num_shifts();
    let n = y.len();
    if sync_window == 0 || sync_window % l != 0 {
        return Err(Error::Config(format!(
            "sync window {sync_window} must be a positive multiple of the block length {l}"
        )));
    }
    if n < sync_window {
        return Err(Error::Length {
            expected: sync_window,
            got: n,
        });
    }
    let samples = &y.samples;
    let needs_sync = matches!(method, Method::Mmse | Method::MapQlmmse | Method::PsiQlmmse);

    let mut posterior = None;
    let mut k_hat = None;
    if needs_sync {
        let (post, psi) = sync_blocks(&samples[..sync_window], bank)?;
        k_hat = Some(match method {
            Method::PsiQlmmse => argmin_lowest(&psi.iter().map(|p| p.abs()).collect::<Vec<_>>()),
            _ => post.argmax(),
        });
        posterior = Some(post);
    }

    let mut out = Vec::with_capacity(n);
    for (j, block) in samples.chunks(l).enumerate() {
        let advance = (j * l) % k;
        let est = match method {
            Method::MfOnly => block.to_vec(),
            Method::Lmmse => lmmse(block, bank)?,
            Method::MapQlmmse | Method::PsiQlmmse => {
                lmmse_cond(block, (k_hat.unwrap() + advance) % k, bank)?
            }
            Method::Mmse => {
                let post = posterior.as_ref().unwrap();
                let whitened = (0..k)
                    .map(|m| {
                        let c = bank.c_yy((m + advance) % k)?;
                        Ok((c.whiten(block)?, 0.0))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let z = weighted_inverse(block.len(), bank, whitened, &post.probs, advance)?;
                to_vec(bank.apply_c_ss(&z))
            }
        };
        out.extend(est);
    }
    let mut s_hat = ComplexSignal::new(out);
    s_hat.meta = y.meta.clone();
    Ok(SeparationResult {
        s_hat,
        k_b_hat: k_hat,
        posterior: if method == Method::PsiQlmmse { None } else { posterior },
        method,
    })
}
