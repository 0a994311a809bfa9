//! Experiment harness: MSE, BER and regret sweeps, synchronizer scoring and
//! the CSV result format shared by every subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bounds::{mean_se, SyncSetup};
use crate::covariance::{CovBank, DEFAULT_BLOCK_LEN, DEFAULT_EPSILON_SCALE};
use crate::demod::{count_valid_errors, demodulate};
use crate::error::{Error, Result};
use crate::estimators::{argmin_lowest, separate_block, separate_long, sync_blocks, Method};
use crate::mixture::{gen_record, read_dataset, read_predictions, record_rng, soi_symbol_offset, FLAG_BITS, FLAG_SHAT};
use crate::signals::{ComplexSignal, OfdmSpec, QpskSpec, C64};

pub const CSV_HEADER: &str = "sir_db,snr_db,n,method,metric,value,stderr,trials";
pub const DEFAULT_BER_N: usize = 10_240;
pub const DEFAULT_SYNC_WINDOW: usize = 640;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub sir_db: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub n: Vec<usize>,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub master_seed: u64,
    pub block_len: usize,
    pub sync_window: usize,
    pub epsilon_scale: f64,
    pub out: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sir_db: vec![-10.0],
            snr_db: vec![20.0],
            n: vec![DEFAULT_BLOCK_LEN],
            methods: vec![Method::Lmmse, Method::MapQlmmse, Method::PsiQlmmse, Method::Mmse],
            trials: 200,
            master_seed: 0,
            block_len: DEFAULT_BLOCK_LEN,
            sync_window: DEFAULT_SYNC_WINDOW,
            epsilon_scale: DEFAULT_EPSILON_SCALE,
            out: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sir_db.is_empty() || self.snr_db.is_empty() || self.n.is_empty() {
            return Err(Error::Config("empty SIR, SNR or N grid".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.n.contains(&0) || self.block_len == 0 || self.sync_window == 0 {
            return Err(Error::Config("N, block length and sync window must be positive".into()));
        }
        if self.sir_db.iter().chain(&self.snr_db).any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(Error::Config("SIR/SNR must be numbers or +inf".into()));
        }
        if !(self.epsilon_scale >= 0.0) {
            return Err(Error::Config("eps scale must be non-negative".into()));
        }
        Ok(())
    }

    fn grid(&self) -> Vec<(f64, f64, usize)> {
        let mut g = Vec::new();
        for &sir in &self.sir_db {
            for &snr in &self.snr_db {
                for &n in &self.n {
                    g.push((sir, snr, n));
                }
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sir_db: f64,
    pub snr_db: f64,
    pub n: usize,
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    /// Provenance lines, written as `# ...` before the header.
    pub comments: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    fn push(&mut self, (sir, snr, n): (f64, f64, usize), method: &str, metric: &str, (value, stderr): (f64, f64), trials: usize) {
        self.rows.push(SweepRow {
            sir_db: sir,
            snr_db: snr,
            n,
            method: method.to_string(),
            metric: metric.to_string(),
            value,
            stderr,
            trials,
        });
    }

    pub fn find(&self, sir_db: f64, n: usize, method: &str, metric: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.sir_db == sir_db && r.n == n && r.method == method && r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for c in &self.comments {
            let _ = writeln!(s, "# {c}");
        }
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.sir_db, r.snr_db, r.n, r.method, r.metric, r.value, r.stderr, r.trials
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn trial_rng(seed: u64, point: usize, trial: usize) -> ChaCha8Rng {
    record_rng(seed, ((point as u64) << 32) | trial as u64)
}

/// Mean squared error per sample.
pub fn mse(s_hat: &[C64], s: &[C64]) -> f64 {
    s_hat.iter().zip(s).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / s.len() as f64
}

/// Per-trial normalized squared errors, `errors[t][i]` for `methods[i]`,
/// on single-block mixtures of length `bank.block_len()`.
pub fn mse_trials(
    setup: &SyncSetup,
    bank: &CovBank,
    methods: &[Method],
    trials: usize,
    seed: u64,
    point: usize,
) -> Result<Vec<Vec<f64>>> {
    let params = setup.params(bank.block_len());
    params.validate()?;
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let rec = gen_record(&setup.qpsk, &setup.ofdm, &params, &mut trial_rng(seed, point, t))?;
            let s = rec.s.as_ref().expect("components are always generated");
            separate_block(&rec.y.samples, bank, methods)
                .map(|res| res.iter().map(|r| mse(&r.s_hat.samples, &s.samples)).collect())
        })
        .collect()
}

fn column(rows: &[Vec<f64>], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i]).collect()
}

fn stats(xs: &[f64]) -> (f64, f64) {
    match mean_se(xs) {
        Ok(v) => v,
        Err(_) => (xs.iter().sum::<f64>() / xs.len().max(1) as f64, f64::NAN),
    }
}

/// Average ‖ŝ − s‖²/N per method on Gaussian-surrogate mixtures, one block of
/// length N per trial.
pub fn run_mse_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let mut out = SweepResult::default();
    for (point, (sir, snr, n)) in cfg.grid().into_iter().enumerate() {
        let mut setup = SyncSetup::gaussian(sir, snr);
        setup.epsilon_scale = cfg.epsilon_scale;
        let bank = setup.analytic_bank(n)?;
        let errs = mse_trials(&setup, &bank, &cfg.methods, cfg.trials, cfg.master_seed, point)?;
        for (i, m) in cfg.methods.iter().enumerate() {
            out.push((sir, snr, n), m.name(), "mse", stats(&column(&errs, i)), cfg.trials);
        }
    }
    Ok(out)
}

/// Extra constraints of the BER sweep: whole symbols per block and records
/// at least one sync window long.
pub fn validate_ber(cfg: &SweepConfig) -> Result<()> {
    cfg.validate()?;
    let period = QpskSpec::default().period();
    if cfg.block_len % period != 0 {
        return Err(Error::Config(format!(
            "block length {} must be a multiple of the symbol period {period}",
            cfg.block_len
        )));
    }
    if let Some(&n) = cfg.n.iter().find(|&&n| n < cfg.sync_window) {
        return Err(Error::Config(format!("N = {n} is shorter than the sync window {}", cfg.sync_window)));
    }
    Ok(())
}

/// Bit error rate after block separation and matched-filter detection, on
/// QPSK / 16-QAM mixtures of length N.
pub fn run_ber_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    validate_ber(cfg)?;
    let qpsk = QpskSpec::default();
    let ofdm = OfdmSpec::default();
    let mut out = SweepResult::default();
    for (point, (sir, snr, n)) in cfg.grid().into_iter().enumerate() {
        let setup = SyncSetup {
            qpsk: qpsk.clone(),
            ofdm: ofdm.clone(),
            sir_db: sir,
            snr_db: snr,
            epsilon_scale: cfg.epsilon_scale,
        };
        let bank = setup.analytic_bank(cfg.block_len)?;
        let params = setup.params(n);
        params.validate()?;
        // per trial: (per-method BER, per-method sync error)
        let per_trial = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let rec = gen_record(&qpsk, &ofdm, &params, &mut trial_rng(cfg.master_seed, point, t))?;
                cfg.methods
                    .iter()
                    .map(|&m| {
                        let res = separate_long(&rec.y, &bank, m, cfg.sync_window)?;
                        let d = demodulate(&res.s_hat, &qpsk)?;
                        let (e, total) = count_valid_errors(&d, &rec.bits, qpsk.alphabet)?;
                        if total == 0 {
                            return Err(Error::Config(format!("N = {n} leaves no fully supported symbols")));
                        }
                        let sync_err = res.k_b_hat.map(|k| (k != rec.k_b) as u8 as f64);
                        Ok((e as f64 / total as f64, sync_err))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, m) in cfg.methods.iter().enumerate() {
            let ber: Vec<f64> = per_trial.iter().map(|r| r[i].0).collect();
            out.push((sir, snr, n), m.name(), "ber", stats(&ber), cfg.trials);
            if per_trial[0][i].1.is_some() {
                let se: Vec<f64> = per_trial.iter().map(|r| r[i].1.unwrap_or(0.0)).collect();
                out.push((sir, snr, n), m.name(), "sync_err", stats(&se), cfg.trials);
            }
        }
    }
    Ok(out)
}

/// SIR at which a metric curve first falls to `target`, interpolating
/// log₁₀(value) linearly between adjacent grid points. `points` must be
/// sorted by SIR. Returns `None` when the curve never crosses.
pub fn crossing_sir(points: &[(f64, f64)], target: f64) -> Option<f64> {
    let lt = target.log10();
    points.windows(2).find_map(|w| {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        if y0 >= target && y1 <= target {
            if y1 <= 0.0 {
                return Some(if y0 == target { x0 } else { x1 });
            }
            let (l0, l1) = (y0.log10(), y1.log10());
            if l0 == l1 {
                return Some(x0);
            }
            Some(x0 + (lt - l0) * (x1 - x0) / (l1 - l0))
        } else {
            None
        }
    })
}

/// MMSE versus MAP-QLMMSE at each N: both errors, their ratio, the regret
/// E‖ŝ_MMSE − ŝ_MAP‖²/N and the residual of
/// ε²_MAP − ε²_MMSE − regret, which has zero mean.
pub fn run_theorem1_check(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    if cfg.n.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("N list must be strictly ascending".into()));
    }
    let methods = [Method::Mmse, Method::MapQlmmse];
    let mut out = SweepResult::default();
    for (point, (sir, snr, n)) in cfg.grid().into_iter().enumerate() {
        let mut setup = SyncSetup::gaussian(sir, snr);
        setup.epsilon_scale = cfg.epsilon_scale;
        let bank = setup.analytic_bank(n)?;
        let params = setup.params(n);
        let rows = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let rec = gen_record(&setup.qpsk, &setup.ofdm, &params, &mut trial_rng(cfg.master_seed, point, t))?;
                let s = &rec.s.as_ref().expect("components are always generated").samples;
                let res = separate_block(&rec.y.samples, &bank, &methods)?;
                let e_mmse = mse(&res[0].s_hat.samples, s);
                let e_map = mse(&res[1].s_hat.samples, s);
                let regret = mse(&res[0].s_hat.samples, &res[1].s_hat.samples);
                Ok([e_mmse, e_map, regret])
            })
            .collect::<Result<Vec<_>>>()?;
        let col = |i: usize| -> Vec<f64> { rows.iter().map(|r| r[i]).collect() };
        let (m1, se1) = stats(&col(0));
        let (m2, se2) = stats(&col(1));
        let p = (sir, snr, n);
        out.push(p, "MMSE", "mse", (m1, se1), cfg.trials);
        out.push(p, "MAP-QLMMSE", "mse", (m2, se2), cfg.trials);
        out.push(p, "MMSE/MAP-QLMMSE", "ratio", ratio_stats(&col(0), &col(1)), cfg.trials);
        out.push(p, "MMSE/MAP-QLMMSE", "regret", stats(&col(2)), cfg.trials);
        let resid: Vec<f64> = rows.iter().map(|r| r[1] - r[0] - r[2]).collect();
        out.push(p, "MMSE/MAP-QLMMSE", "identity_residual", stats(&resid), cfg.trials);
    }
    Ok(out)
}

/// Ratio of means with its delta-method standard error.
pub fn ratio_stats(num: &[f64], den: &[f64]) -> (f64, f64) {
    let t = num.len() as f64;
    let m1 = num.iter().sum::<f64>() / t;
    let m2 = den.iter().sum::<f64>() / t;
    let r = m1 / m2;
    if num.len() < 2 {
        return (r, f64::NAN);
    }
    let (mut v1, mut v2, mut c) = (0.0, 0.0, 0.0);
    for (a, b) in num.iter().zip(den) {
        v1 += (a - m1).powi(2);
        v2 += (b - m2).powi(2);
        c += (a - m1) * (b - m2);
    }
    let d = t - 1.0;
    let var = (v1 / d - 2.0 * r * c / d + r * r * v2 / d) / (m2 * m2 * t);
    (r, var.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncRule {
    Map,
    Psi,
}

impl SyncRule {
    pub fn name(self) -> &'static str {
        match self {
            SyncRule::Map => "MAP",
            SyncRule::Psi => "PSI",
        }
    }
}

impl std::str::FromStr for SyncRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "map" => Ok(SyncRule::Map),
            "psi" => Ok(SyncRule::Psi),
            _ => Err(Error::Config(format!("unknown sync rule '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncEvalConfig {
    pub dataset: PathBuf,
    /// External synchronizer output; the internal rule is used when absent.
    pub predictions: Option<PathBuf>,
    pub rule: SyncRule,
    pub block_len: usize,
    pub epsilon_scale: f64,
}

fn circular_distance(a: usize, b: usize, k: usize) -> usize {
    let d = a.abs_diff(b) % k;
    d.min(k - d)
}

/// Scores shift estimates against the labels of a dataset: accuracy, error
/// rate and mean circular shift error, plus BER when the prediction file
/// carries separated signals and the dataset carries bits.
pub fn run_sync_eval(cfg: &SyncEvalConfig) -> Result<SweepResult> {
    let data = read_dataset(&cfg.dataset)?;
    let h = &data.header;
    let k_b = h.k_b_period;
    let labels: Vec<usize> = data.records.iter().map(|r| r.k_b).collect();
    let mut s_hats = None;
    let (method, estimates) = match &cfg.predictions {
        Some(p) => {
            let (ph, preds) = read_predictions(p)?;
            if preds.len() != labels.len() {
                return Err(Error::Length {
                    expected: labels.len(),
                    got: preds.len(),
                });
            }
            if ph.n != h.n || ph.k_b_period != k_b {
                return Err(Error::Format(format!(
                    "prediction file has N = {}, K_b = {}; dataset has N = {}, K_b = {k_b}",
                    ph.n, ph.k_b_period, h.n
                )));
            }
            if let Some(bad) = preds.iter().find(|p| p.k_b_hat >= k_b) {
                return Err(Error::OutOfRange {
                    index: bad.k_b_hat,
                    bound: k_b,
                });
            }
            if ph.flags & FLAG_SHAT != 0 {
                s_hats = Some(preds.iter().map(|p| p.s_hat.clone()).collect::<Vec<_>>());
            }
            ("FILE", preds.iter().map(|p| p.k_b_hat).collect::<Vec<_>>())
        }
        None => {
            let setup = SyncSetup {
                qpsk: QpskSpec::default(),
                ofdm: OfdmSpec::default(),
                sir_db: h.sir_db,
                snr_db: h.snr_db,
                epsilon_scale: cfg.epsilon_scale,
            };
            if setup.ofdm.period() != k_b {
                return Err(Error::Format(format!("dataset K_b = {k_b} does not match the OFDM period")));
            }
            let bank = setup.analytic_bank(cfg.block_len.min(h.n))?;
            let est = data
                .records
                .par_iter()
                .map(|r| {
                    let (post, psi) = sync_blocks(&r.y.samples, &bank)?;
                    Ok(match cfg.rule {
                        SyncRule::Map => post.argmax(),
                        SyncRule::Psi => argmin_lowest(&psi.iter().map(|p| p.abs()).collect::<Vec<_>>()),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (cfg.rule.name(), est)
        }
    };
    let t = labels.len();
    let correct: Vec<f64> = labels
        .iter()
        .zip(&estimates)
        .map(|(a, b)| (a == b) as u8 as f64)
        .collect();
    let dist: Vec<f64> = labels
        .iter()
        .zip(&estimates)
        .map(|(&a, &b)| circular_distance(a, b, k_b) as f64)
        .collect();
    let p = (h.sir_db, h.snr_db, h.n);
    let mut out = SweepResult::default();
    let (acc, acc_se) = stats(&correct);
    out.push(p, method, "accuracy", (acc, acc_se), t);
    out.push(p, method, "sync_err", (1.0 - acc, acc_se), t);
    out.push(p, method, "mean_abs_shift_err", stats(&dist), t);
    out.push(p, method, "chance", (1.0 / k_b as f64, 0.0), t);

    if let Some(s_hats) = s_hats {
        if h.flags & FLAG_BITS == 0 {
            return Err(Error::Format("dataset has no bits to score separated signals".into()));
        }
        let qpsk = QpskSpec::default();
        let bers = data
            .records
            .par_iter()
            .zip(s_hats.par_iter())
            .map(|(r, s)| {
                let s = s.as_ref().ok_or_else(|| Error::Format("missing s_hat".into()))?;
                let mut sig = ComplexSignal::new(s.clone());
                sig.meta.symbol_offset = Some(soi_symbol_offset(&qpsk, r.k_s));
                let d = demodulate(&sig, &qpsk)?;
                let (e, total) = count_valid_errors(&d, &r.bits, qpsk.alphabet)?;
                if total == 0 {
                    return Err(Error::Config("window leaves no fully supported symbols".into()));
                }
                Ok(e as f64 / total as f64)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(p, method, "ber", stats(&bers), t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut r = SweepResult::default();
        r.comments.push("seed=7".into());
        r.push((-10.0, f64::INFINITY, 320), "MF", "ber", (0.25, 0.01), 5);
        assert_eq!(
            r.to_csv(),
            "# seed=7\nsir_db,snr_db,n,method,metric,value,stderr,trials\n-10,inf,320,MF,ber,0.25,0.01,5\n"
        );
        assert!(r.find(-10.0, 320, "MF", "ber").is_some());
    }

    #[test]
    fn crossing_interpolates_in_log() {
        let pts = [(-8.0, 1e-1), (-6.0, 1e-2), (-4.0, 1e-4)];
        assert!((crossing_sir(&pts, 1e-2).unwrap() + 6.0).abs() < 1e-12);
        assert!((crossing_sir(&pts, 1e-3).unwrap() + 5.0).abs() < 1e-12);
        assert!(crossing_sir(&pts, 1e-6).is_none());
        assert_eq!(crossing_sir(&[(-2.0, 1e-2), (0.0, 0.0)], 1e-3), Some(0.0));
    }

    #[test]
    fn ratio_of_constants() {
        let (r, se) = ratio_stats(&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0]);
        assert_eq!((r, se), (0.5, 0.0));
    }

    #[test]
    fn config_validation() {
        let mut c = SweepConfig::default();
        assert!(c.validate().is_ok());
        c.trials = 0;
        assert!(c.validate().is_err());
        let c = SweepConfig {
            sir_db: vec![],
            ..SweepConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn circular_shift_distance() {
        assert_eq!(circular_distance(1, 79, 80), 2);
        assert_eq!(circular_distance(5, 5, 80), 0);
        assert_eq!(circular_distance(0, 40, 80), 40);
    }

    #[test]
    fn no_interference_methods_agree() {
        let cfg = SweepConfig {
            sir_db: vec![f64::INFINITY],
            snr_db: vec![10.0],
            n: vec![32],
            trials: 40,
            ..SweepConfig::default()
        };
        let r = run_mse_sweep(&cfg).unwrap();
        let v: Vec<f64> = r.rows.iter().map(|r| r.value).collect();
        for x in &v {
            assert!((x - v[0]).abs() < 1e-9 * v[0]);
        }
    }
}
