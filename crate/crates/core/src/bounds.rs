//! Moment generating function of the ψ-statistic, Chernoff tail bounds and
//! the synchronization error decay experiment.

use rayon::prelude::*;

use crate::covariance::{build_bank, CMat, CovBank, InterferenceSource, SoiSource, DEFAULT_EPSILON_SCALE};
use crate::error::{Error, Result};
use crate::estimators::{argmax_lowest, argmin_lowest};
use crate::mixture::{gen_record, record_rng, MixtureParams};
use crate::signals::{OfdmSpec, QpskSpec};

pub const DEFAULT_BOUND_EPS: f64 = 0.1;
/// Mixtures whitened together per factor pass in the decay experiment.
const SYNC_BATCH: usize = 64;
/// Two-sided 95% normal quantile used for Wilson intervals.
pub const WILSON_Z: f64 = 1.96;

/// log E[exp(τ ψ_N)] = −N ln(1 − τ/N) − τ.
pub fn log_mgf_psi(tau: f64, n: usize) -> Result<f64> {
    let nf = check_n(n)? as f64;
    if !tau.is_finite() || tau >= nf {
        return Err(Error::Domain(format!("MGF needs tau < N (tau = {tau}, N = {n})")));
    }
    Ok(-nf * (-tau / nf).ln_1p() - tau)
}

/// E[exp(τ ψ_N)] = (1 − τ/N)^(−N) e^(−τ) for τ < N.
pub fn mgf_psi_analytic(tau: f64, n: usize) -> Result<f64> {
    Ok(log_mgf_psi(tau, n)?.exp())
}

fn check_n(n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::Domain("N must be positive".into()));
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChernoffParams {
    pub n: usize,
    pub tau: f64,
    pub a: f64,
    pub eps: f64,
}

impl ChernoffParams {
    pub fn new(n: usize, tau: f64, a: f64) -> Self {
        Self {
            n,
            tau,
            a,
            eps: DEFAULT_BOUND_EPS,
        }
    }

    /// Parameters with the threshold a = N^−(0.5−ε).
    pub fn from_eps(n: usize, tau: f64, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        Ok(Self {
            n,
            tau,
            a: threshold(n, eps),
            eps,
        })
    }

    fn check_a(&self) -> Result<()> {
        if !(self.a > 0.0) || !self.a.is_finite() {
            return Err(Error::Domain(format!("threshold a must be positive, got {}", self.a)));
        }
        Ok(())
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Domain(format!("eps must lie in (0, 0.5), got {eps}")));
    }
    Ok(())
}

pub fn threshold(n: usize, eps: f64) -> f64 {
    (n as f64).powf(-(0.5 - eps))
}

/// ln B₁(t, a) = −N ln(1 − t/N) − t(1 + a), bounding P[ψ > a].
pub fn log_chernoff_b1(p: &ChernoffParams) -> Result<f64> {
    p.check_a()?;
    Ok(log_mgf_psi(p.tau, p.n)? + p.tau - p.tau * (1.0 + p.a))
}

/// ln B₂(t, a) = −N ln(1 + t/N) + t(1 − a), bounding P[ψ < −a].
pub fn log_chernoff_b2(p: &ChernoffParams) -> Result<f64> {
    p.check_a()?;
    if p.tau <= -(check_n(p.n)? as f64) || !p.tau.is_finite() {
        return Err(Error::Domain(format!("B2 needs tau > -N (tau = {}, N = {})", p.tau, p.n)));
    }
    Ok(log_mgf_psi(-p.tau, p.n)? - p.tau + p.tau * (1.0 - p.a))
}

pub fn chernoff_b1(p: &ChernoffParams) -> Result<f64> {
    Ok(log_chernoff_b1(p)?.exp())
}

pub fn chernoff_b2(p: &ChernoffParams) -> Result<f64> {
    Ok(log_chernoff_b2(p)?.exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizedBounds {
    pub b1_star: f64,
    pub b2_star: f64,
    pub log10_b1_star: f64,
    pub log10_b2_star: f64,
    /// Minimizers t₁* = Na/(1+a) and t₂* = Na/(1−a).
    pub t1: f64,
    pub t2: f64,
}

/// Bounds minimized over t at a fixed threshold:
/// B₁* = (1 + a)^N e^(−Na) and B₂* = (1 − a)^N e^(Na). For a ≥ 1 the lower
/// tail is empty and B₂* = 0.
pub fn optimized_bounds(n: usize, a: f64) -> Result<OptimizedBounds> {
    let nf = check_n(n)? as f64;
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("threshold a must be positive, got {a}")));
    }
    let ln1 = nf * (a.ln_1p() - a);
    let (ln2, t2) = if a < 1.0 {
        (nf * ((-a).ln_1p() + a), nf * a / (1.0 - a))
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };
    Ok(OptimizedBounds {
        b1_star: ln1.exp(),
        b2_star: ln2.exp(),
        log10_b1_star: ln1 / std::f64::consts::LN_10,
        log10_b2_star: ln2 / std::f64::consts::LN_10,
        t1: nf * a / (1.0 + a),
        t2,
    })
}

/// Optimized bounds on the threshold family a = N^−(0.5−ε).
pub fn chernoff_opt(n: usize, eps: f64) -> Result<OptimizedBounds> {
    check_eps(eps)?;
    optimized_bounds(n, threshold(check_n(n)?, eps))
}

/// Wilson score interval for `errors` out of `trials`.
pub fn wilson_interval(errors: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Mixture model used by the ψ and synchronization experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncSetup {
    pub qpsk: QpskSpec,
    pub ofdm: OfdmSpec,
    pub sir_db: f64,
    pub snr_db: f64,
    pub epsilon_scale: f64,
}

impl SyncSetup {
    /// Gaussian surrogates for both sources.
    pub fn gaussian(sir_db: f64, snr_db: f64) -> Self {
        Self {
            qpsk: QpskSpec::gaussian(),
            ofdm: OfdmSpec::gaussian(),
            sir_db,
            snr_db,
            epsilon_scale: DEFAULT_EPSILON_SCALE,
        }
    }

    pub fn params(&self, n: usize) -> MixtureParams {
        MixtureParams::new(n, self.sir_db, self.snr_db, &self.qpsk, &self.ofdm)
    }

    /// Bank of analytic covariances for windows of length `n`.
    pub fn analytic_bank(&self, n: usize) -> Result<CovBank> {
        build_bank(
            &SoiSource::Analytic(self.qpsk.clone()),
            &InterferenceSource::Analytic(self.ofdm.clone()),
            self.sir_db,
            self.snr_db,
            n,
            self.ofdm.period(),
            self.epsilon_scale,
        )
    }
}

/// ψ evaluated at the true interference shift for `trials` fresh mixtures of
/// length `bank.block_len()`. Trial `i` uses stream `i` of `seed`.
pub fn true_shift_psi(setup: &SyncSetup, bank: &CovBank, trials: usize, seed: u64) -> Result<Vec<f64>> {
    let n = bank.block_len();
    let params = setup.params(n);
    params.validate()?;
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let rec = gen_record(&setup.qpsk, &setup.ofdm, &params, &mut record_rng(seed, i as u64))?;
            let u = bank.c_yy(rec.k_b)?.whiten(&rec.y.samples)?;
            Ok(u.norm_squared() / n as f64 - 1.0)
        })
        .collect()
}

/// Sample mean and standard error.
pub fn mean_se(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(Error::Empty("need at least two samples".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Monte-Carlo estimate of E[exp(τψ)] with its standard error.
pub fn mgf_estimate(psi: &[f64], tau: f64) -> Result<(f64, f64)> {
    let e: Vec<f64> = psi.iter().map(|p| (tau * p).exp()).collect();
    mean_se(&e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimate {
    pub upper: f64,
    pub upper_se: f64,
    pub lower: f64,
    pub lower_se: f64,
}

/// Empirical P[ψ > a] and P[ψ < −a] with binomial standard errors.
pub fn tail_estimate(psi: &[f64], a: f64) -> Result<TailEstimate> {
    if psi.is_empty() {
        return Err(Error::Empty("no ψ samples".into()));
    }
    let n = psi.len() as f64;
    let up = psi.iter().filter(|&&p| p > a).count() as f64 / n;
    let lo = psi.iter().filter(|&&p| p < -a).count() as f64 / n;
    Ok(TailEstimate {
        upper: up,
        upper_se: (up * (1.0 - up) / n).sqrt(),
        lower: lo,
        lower_se: (lo * (1.0 - lo) / n).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    pub n_values: Vec<usize>,
    pub trials: usize,
    pub errors: Vec<usize>,
    pub err_prob: Vec<f64>,
    pub conf_lo: Vec<f64>,
    pub conf_hi: Vec<f64>,
    /// Error rate of the ψ synchronizer on the same mixtures.
    pub psi_err_prob: Vec<f64>,
    pub log10_b1_star: Vec<f64>,
    pub log10_b2_star: Vec<f64>,
    /// log₁₀ of (K_b − 1)(B₁* + B₂*), capped at 0.
    pub log10_union: Vec<f64>,
}

impl DecayCurve {
    /// Half-widths of the Wilson intervals around each error rate.
    pub fn conf(&self) -> Vec<f64> {
        self.conf_lo
            .iter()
            .zip(&self.conf_hi)
            .map(|(lo, hi)| (hi - lo) / 2.0)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,err_prob,conf_lo,conf_hi,log10_b1_star,log10_b2_star\n");
        for i in 0..self.n_values.len() {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e}\n",
                self.n_values[i],
                self.err_prob[i],
                self.conf_lo[i],
                self.conf_hi[i],
                self.log10_b1_star[i],
                self.log10_b2_star[i]
            ));
        }
        s
    }
}

/// MAP and ψ synchronization error rates over mixtures with uniformly drawn
/// interference shift, one point per window length. `bank_builder(n)` supplies
/// the covariances for windows of length `n`; banks are built one at a time.
pub fn sync_decay_experiment<F>(
    bank_builder: F,
    setup: &SyncSetup,
    n_values: &[usize],
    trials: usize,
    seed: u64,
) -> Result<DecayCurve>
where
    F: Fn(usize) -> Result<CovBank>,
{
    if trials == 0 || n_values.is_empty() {
        return Err(Error::Empty("decay curve needs trials and window lengths".into()));
    }
    let k_b = setup.ofdm.period();
    let mut curve = DecayCurve {
        n_values: n_values.to_vec(),
        trials,
        errors: Vec::new(),
        err_prob: Vec::new(),
        conf_lo: Vec::new(),
        conf_hi: Vec::new(),
        psi_err_prob: Vec::new(),
        log10_b1_star: Vec::new(),
        log10_b2_star: Vec::new(),
        log10_union: Vec::new(),
    };
    for (point, &n) in n_values.iter().enumerate() {
        let bank = bank_builder(n)?;
        if bank.block_len() != n || bank.num_shifts() != k_b {
            return Err(Error::Config(format!(
                "bank for N = {n} has L = {} and K_b = {}",
                bank.block_len(),
                bank.num_shifts()
            )));
        }
        let params = setup.params(n);
        params.validate()?;
        let point_seed = seed.wrapping_add(point as u64);
        let ids: Vec<usize> = (0..trials).collect();
        let outcomes: Vec<(bool, bool)> = ids
            .par_chunks(SYNC_BATCH)
            .map(|chunk| -> Result<Vec<(bool, bool)>> {
                let recs = chunk
                    .iter()
                    .map(|&i| gen_record(&setup.qpsk, &setup.ofdm, &params, &mut record_rng(point_seed, i as u64)))
                    .collect::<Result<Vec<_>>>()?;
                let y = CMat::from_fn(recs.len(), n, |r, c| recs[r].y.samples[c]);
                let mut ll = vec![vec![0.0; k_b]; recs.len()];
                let mut psi = vec![vec![0.0; k_b]; recs.len()];
                for m in 0..k_b {
                    let c = bank.c_yy(m)?;
                    let mut w = y.clone();
                    c.whiten_rows(&mut w)?;
                    for r in 0..recs.len() {
                        let e = w.row(r).norm_squared();
                        ll[r][m] = -e - c.logdet();
                        psi[r][m] = (e / n as f64 - 1.0).abs();
                    }
                }
                Ok(recs
                    .iter()
                    .enumerate()
                    .map(|(r, rec)| (argmax_lowest(&ll[r]) != rec.k_b, argmin_lowest(&psi[r]) != rec.k_b))
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        drop(bank);
        let errs = outcomes.iter().filter(|o| o.0).count();
        let psi_errs = outcomes.iter().filter(|o| o.1).count();
        let (lo, hi) = wilson_interval(errs, trials, WILSON_Z);
        let b = chernoff_opt(n, DEFAULT_BOUND_EPS)?;
        let union = ((k_b - 1) as f64 * (b.b1_star + b.b2_star)).min(1.0);
        curve.errors.push(errs);
        curve.err_prob.push(errs as f64 / trials as f64);
        curve.conf_lo.push(lo);
        curve.conf_hi.push(hi);
        curve.psi_err_prob.push(psi_errs as f64 / trials as f64);
        curve.log10_b1_star.push(b.log10_b1_star);
        curve.log10_b2_star.push(b.log10_b2_star);
        curve.log10_union.push(union.log10());
    }
    Ok(curve)
}
