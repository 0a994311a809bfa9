//! Shift-conditional second-order statistics of the mixture, analytic and
//! empirical, with the Cholesky machinery used by the estimators.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mixture::{db_to_inv_power, put_complex, ByteReader};
use crate::signals::{ComplexSignal, OfdmSpec, QpskSpec, C64};

pub type CMat = DMatrix<C64>;

pub const DEFAULT_EPSILON_SCALE: f64 = 1e-9;
pub const DEFAULT_BLOCK_LEN: usize = 320;
/// Number of times the diagonal load is doubled before giving up.
pub const MAX_REGULARIZATION_DOUBLINGS: u32 = 8;

pub const COV_MAGIC: &[u8; 4] = b"SCOV";
pub const COV_VERSION: u16 = 1;

/// (C + Cᴴ)/2 in place.
pub fn hermitian_part(c: &mut CMat) {
    let n = c.nrows();
    for i in 0..n {
        c[(i, i)] = C64::new(c[(i, i)].re, 0.0);
        for j in 0..i {
            let v = (c[(i, j)] + c[(j, i)].conj()) * 0.5;
            c[(i, j)] = v;
            c[(j, i)] = v.conj();
        }
    }
}

/// Regularized Hermitian positive-definite matrix held through its lower
/// Cholesky factor Γ, so that ΓΓᴴ = C + εI.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    factor: CMat,
    epsilon: f64,
    logdet: f64,
}

impl CovMatrix {
    /// Symmetrizes `raw`, loads the diagonal with
    /// `epsilon_scale * trace(C) / L` and factors, doubling the load on failure.
    pub fn factorize(mut raw: CMat, epsilon_scale: f64) -> Result<Self> {
        let n = raw.nrows();
        if n == 0 || raw.ncols() != n {
            return Err(Error::Domain(format!(
                "covariance must be square and nonempty, got {}x{}",
                raw.nrows(),
                raw.ncols()
            )));
        }
        if raw.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
            return Err(Error::NonFinite("covariance entry".into()));
        }
        hermitian_part(&mut raw);
        let trace: f64 = (0..n).map(|i| raw[(i, i)].re).sum();
        let reference = if trace > 0.0 { trace / n as f64 } else { 1.0 };
        let mut epsilon = epsilon_scale * reference;
        for _ in 0..=MAX_REGULARIZATION_DOUBLINGS {
            let mut m = raw.clone();
            for i in 0..n {
                m[(i, i)] += epsilon;
            }
            if let Some(ch) = Cholesky::new(m) {
                let factor = ch.unpack();
                let logdet = 2.0 * (0..n).map(|i| factor[(i, i)].re.ln()).sum::<f64>();
                if logdet.is_finite() {
                    return Ok(Self {
                        factor,
                        epsilon,
                        logdet,
                    });
                }
            }
            epsilon = if epsilon > 0.0 { 2.0 * epsilon } else { f64::MIN_POSITIVE };
        }
        Err(Error::Factorization {
            attempts: MAX_REGULARIZATION_DOUBLINGS + 1,
        })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// Diagonal load that was added before factoring.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Log-determinant of the leading `len`×`len` block.
    pub fn logdet_prefix(&self, len: usize) -> f64 {
        if len == self.dim() {
            return self.logdet;
        }
        2.0 * (0..len).map(|i| self.factor[(i, i)].re.ln()).sum::<f64>()
    }

    /// Lower Cholesky factor Γ.
    pub fn factor(&self) -> &CMat {
        &self.factor
    }

    /// Regularized entries ΓΓᴴ.
    pub fn entries(&self) -> CMat {
        &self.factor * self.factor.adjoint()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == 0 || len > self.dim() {
            return Err(Error::Length {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    /// Γ⁻¹y. A vector shorter than the matrix is whitened against the leading
    /// block, which is the covariance of the same window cropped to that length.
    pub fn whiten(&self, y: &[C64]) -> Result<DVector<C64>> {
        self.check_len(y.len())?;
        let l = y.len();
        let mut u = DVector::from_column_slice(y);
        let ok = self
            .factor
            .view((0, 0), (l, l))
            .solve_lower_triangular_mut(&mut u);
        if !ok {
            return Err(Error::Domain("singular Cholesky factor".into()));
        }
        Ok(u)
    }

    /// Whitens every row of `rows` in place (row r becomes (Γ⁻¹ yᵣ)ᵀ). Each
    /// factor entry is read once per call, which pays off for many vectors.
    pub fn whiten_rows(&self, rows: &mut CMat) -> Result<()> {
        let l = rows.ncols();
        self.check_len(l)?;
        let b = rows.nrows();
        if b == 0 {
            return Ok(());
        }
        let ys = rows.as_mut_slice();
        for j in 0..l {
            let (head, tail) = ys.split_at_mut((j + 1) * b);
            let xj = &mut head[j * b..];
            let d = self.factor[(j, j)];
            if d.norm() == 0.0 {
                return Err(Error::Domain("singular Cholesky factor".into()));
            }
            let inv = d.inv();
            xj.iter_mut().for_each(|x| *x *= inv);
            let col = self.factor.column(j);
            for (i, chunk) in tail.chunks_exact_mut(b).take(l - j - 1).enumerate() {
                let lij = col[j + 1 + i];
                for (y, x) in chunk.iter_mut().zip(xj.iter()) {
                    *y -= lij * x;
                }
            }
        }
        Ok(())
    }

    /// C⁻¹y, with the same cropping rule as [`CovMatrix::whiten`].
    pub fn solve(&self, y: &[C64]) -> Result<DVector<C64>> {
        self.solve_whitened(self.whiten(y)?)
    }

    /// Γ⁻ᴴu, turning a whitened vector into C⁻¹y.
    pub fn solve_whitened(&self, mut u: DVector<C64>) -> Result<DVector<C64>> {
        let l = u.len();
        self.check_len(l)?;
        let ok = self
            .factor
            .view((0, 0), (l, l))
            .ad_solve_lower_triangular_mut(&mut u);
        if !ok {
            return Err(Error::Domain("singular Cholesky factor".into()));
        }
        Ok(u)
    }

    /// yᴴC⁻¹y.
    pub fn quad_form(&self, y: &[C64]) -> Result<f64> {
        Ok(self.whiten(y)?.norm_squared())
    }
}

/// Γ⁻¹y for a factored covariance.
pub fn whiten(y: &[C64], c: &CovMatrix) -> Result<DVector<C64>> {
    c.whiten(y)
}

/// (1/count) Σ x xᴴ over the given vectors, before regularization.
pub fn empirical_cov_matrix<'a, I>(samples: I) -> Result<CMat>
where
    I: IntoIterator<Item = &'a [C64]>,
{
    let mut acc: Option<CMat> = None;
    let mut count = 0usize;
    for x in samples {
        let l = x.len();
        let m = acc.get_or_insert_with(|| CMat::zeros(l, l));
        if m.nrows() != l {
            return Err(Error::Length {
                expected: m.nrows(),
                got: l,
            });
        }
        let v = DVector::from_column_slice(x);
        m.ger(C64::new(1.0, 0.0), &v, &v.conjugate(), C64::new(1.0, 0.0));
        count += 1;
    }
    let mut m = acc.ok_or_else(|| Error::Empty("no samples for covariance estimate".into()))?;
    m /= C64::new(count as f64, 0.0);
    Ok(m)
}

pub fn empirical_cov<'a, I>(samples: I, epsilon_scale: f64) -> Result<CovMatrix>
where
    I: IntoIterator<Item = &'a [C64]>,
{
    CovMatrix::factorize(empirical_cov_matrix(samples)?, epsilon_scale)
}

/// Exact covariance of a length-`l` window of the shaped signal of interest
/// at shift `k_s`: G Gᴴ, with one column per symbol whose pulse meets the window.
pub fn soi_cov_matrix(spec: &QpskSpec, l: usize, k_s: usize) -> Result<CMat> {
    let pulse = spec.pulse()?;
    let taps = pulse.taps();
    let os = spec.oversampling as isize;
    let k = (k_s % spec.oversampling) as isize;
    let amp2 = spec.amplitude().powi(2);
    let tl = taps.len() as isize;
    let mut c = CMat::zeros(l, l);
    // pulse of symbol i occupies window samples n with 0 <= n + k - os*i < taps.len()
    let i_lo = (k - tl + 1).div_euclid(os);
    let i_hi = (k + l as isize - 1).div_euclid(os);
    let mut g = vec![0.0f64; l];
    for i in i_lo..=i_hi {
        let mut support = (usize::MAX, 0usize);
        for (n, gn) in g.iter_mut().enumerate() {
            let t = n as isize + k - os * i;
            *gn = if (0..tl).contains(&t) {
                support.0 = support.0.min(n);
                support.1 = n + 1;
                taps[t as usize]
            } else {
                0.0
            };
        }
        if support.0 >= support.1 {
            continue;
        }
        for a in support.0..support.1 {
            for b in support.0..support.1 {
                c[(a, b)].re += amp2 * g[a] * g[b];
            }
        }
    }
    Ok(c)
}

pub fn analytic_cov_soi(spec: &QpskSpec, l: usize, k_s: usize, epsilon_scale: f64) -> Result<CovMatrix> {
    CovMatrix::factorize(soi_cov_matrix(spec, l, k_s)?, epsilon_scale)
}

/// Exact covariance of a length-`l` OFDM window at shift `k_b`: samples are
/// correlated (with unit correlation) exactly when they belong to the same
/// OFDM symbol and map to the same inverse-DFT output, i.e. a prefix sample
/// and its source at distance `fft_size`.
pub fn ofdm_cov_matrix(spec: &OfdmSpec, l: usize, k_b: usize) -> CMat {
    let p = spec.symbol_len();
    let n = spec.fft_size;
    let cp = spec.cp_len;
    let k = k_b % p;
    let locate = |idx: usize| {
        let j = idx + k;
        let t = j % p;
        let body = if t < cp { t + n - cp } else { t - cp };
        (j / p, body)
    };
    let mut c = CMat::zeros(l, l);
    for a in 0..l {
        c[(a, a)] = C64::new(1.0, 0.0);
        let (sym, body) = locate(a);
        // only partner of a prefix sample is fft_size ahead and vice versa
        for b in [a.checked_sub(n), a.checked_add(n)].into_iter().flatten() {
            if b < l && locate(b) == (sym, body) {
                c[(a, b)] = C64::new(1.0, 0.0);
            }
        }
    }
    c
}

pub fn analytic_cov_ofdm(spec: &OfdmSpec, l: usize, k_b: usize, epsilon_scale: f64) -> Result<CovMatrix> {
    CovMatrix::factorize(ofdm_cov_matrix(spec, l, k_b), epsilon_scale)
}

/// Where the covariance of the signal of interest (shift 0) comes from.
#[derive(Debug, Clone)]
pub enum SoiSource<'a> {
    Analytic(QpskSpec),
    /// Windows aligned to shift 0; each contributes its length-`L` blocks
    /// whose start is a multiple of the cyclic period.
    Empirical {
        windows: &'a [ComplexSignal],
        period: usize,
    },
    Matrix(CMat),
}

/// Where the shift-conditional interference covariances come from.
#[derive(Debug, Clone)]
pub enum InterferenceSource<'a> {
    Analytic(OfdmSpec),
    /// Interference windows with their stored shift labels; block `j` of a
    /// window with label `k` is a sample for shift `(k + jL) mod K_b`.
    Empirical { windows: &'a [(ComplexSignal, usize)] },
    Matrices(Vec<CMat>),
}

/// Per-shift conditional covariances of the mixture for one SIR/SNR point.
#[derive(Debug, Clone)]
pub struct CovBank {
    block_len: usize,
    k_b: usize,
    epsilon_scale: f64,
    c_ss: CovMatrix,
    /// Symmetrized, unregularized C_ss used in C_ss C_yy⁻¹ y.
    c_ss_raw: CMat,
    c_yy: Vec<CovMatrix>,
    c_yy_avg: CovMatrix,
}

impl CovBank {
    /// Builds a bank from C_ss and the per-shift equivalent-noise covariances
    /// C_vv(m); C_yy(m) = C_ss + C_vv(m).
    pub fn from_matrices(c_ss: CMat, c_vv: Vec<CMat>, epsilon_scale: f64) -> Result<Self> {
        let l = c_ss.nrows();
        let k_b = c_vv.len();
        Self::from_fn(c_ss, k_b, |m| Ok(c_vv[m].clone()), epsilon_scale).and_then(|b| {
            if b.block_len != l {
                Err(Error::Length {
                    expected: l,
                    got: b.block_len,
                })
            } else {
                Ok(b)
            }
        })
    }

    fn from_fn<F>(mut c_ss: CMat, k_b: usize, c_vv: F, epsilon_scale: f64) -> Result<Self>
    where
        F: Fn(usize) -> Result<CMat> + Sync,
    {
        if k_b == 0 {
            return Err(Error::Empty("bank needs at least one shift".into()));
        }
        let l = c_ss.nrows();
        hermitian_part(&mut c_ss);
        let mut avg = CMat::zeros(l, l);
        for m in 0..k_b {
            let v = c_vv(m)?;
            if v.shape() != (l, l) {
                return Err(Error::Length {
                    expected: l,
                    got: v.nrows(),
                });
            }
            avg += v;
        }
        avg /= C64::new(k_b as f64, 0.0);
        avg += &c_ss;
        let c_yy = (0..k_b)
            .into_par_iter()
            .map(|m| {
                let v = c_vv(m)?;
                CovMatrix::factorize(&c_ss + v, epsilon_scale)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            block_len: l,
            k_b,
            epsilon_scale,
            c_ss: CovMatrix::factorize(c_ss.clone(), epsilon_scale)?,
            c_ss_raw: c_ss,
            c_yy,
            c_yy_avg: CovMatrix::factorize(avg, epsilon_scale)?,
        })
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn num_shifts(&self) -> usize {
        self.k_b
    }

    pub fn epsilon_scale(&self) -> f64 {
        self.epsilon_scale
    }

    pub fn c_ss(&self) -> &CovMatrix {
        &self.c_ss
    }

    pub fn c_ss_raw(&self) -> &CMat {
        &self.c_ss_raw
    }

    pub fn c_yy(&self, m: usize) -> Result<&CovMatrix> {
        self.c_yy.get(m).ok_or(Error::OutOfRange {
            index: m,
            bound: self.k_b,
        })
    }

    pub fn c_yy_avg(&self) -> &CovMatrix {
        &self.c_yy_avg
    }

    /// Equivalent-noise covariance C_vv(m), recovered as C_yy(m) - C_ss
    /// without the diagonal load.
    pub fn c_vv(&self, m: usize) -> Result<CMat> {
        let c = self.c_yy(m)?;
        let mut v = c.entries() - &self.c_ss_raw;
        for i in 0..self.block_len {
            v[(i, i)] -= c.epsilon();
        }
        hermitian_part(&mut v);
        Ok(v)
    }

    /// C_ss z for the leading `z.len()` samples.
    pub(crate) fn apply_c_ss(&self, z: &DVector<C64>) -> DVector<C64> {
        let l = z.len();
        if l == self.block_len {
            &self.c_ss_raw * z
        } else {
            self.c_ss_raw.view((0, 0), (l, l)) * z
        }
    }
}

/// Builds every shift-conditional covariance for one SIR/SNR operating point:
/// C_vv(m) = ρ_SIR⁻¹ C_bb(m) + ρ_SNR⁻¹ I.
pub fn build_bank(
    c_ss_source: &SoiSource<'_>,
    c_bb_source: &InterferenceSource<'_>,
    sir_db: f64,
    snr_db: f64,
    l: usize,
    k_b: usize,
    epsilon_scale: f64,
) -> Result<CovBank> {
    if l == 0 || k_b == 0 {
        return Err(Error::Config("block length and K_b must be positive".into()));
    }
    let c_ss = match c_ss_source {
        SoiSource::Analytic(spec) => soi_cov_matrix(spec, l, 0)?,
        SoiSource::Matrix(m) => m.clone(),
        SoiSource::Empirical { windows, period } => {
            let blocks = aligned_blocks(windows.iter().map(|w| (w, 0usize)), l, *period, 0)?;
            empirical_cov_matrix(blocks.iter().flat_map(|b| b.iter().map(|v| v.as_slice())))?
        }
    };
    if c_ss.shape() != (l, l) {
        return Err(Error::Length {
            expected: l,
            got: c_ss.nrows(),
        });
    }
    let sir_inv = db_to_inv_power(sir_db);
    let snr_inv = db_to_inv_power(snr_db);
    let to_vv = move |mut c: CMat| {
        c *= C64::new(sir_inv, 0.0);
        for i in 0..l {
            c[(i, i)] += snr_inv;
        }
        c
    };
    match c_bb_source {
        InterferenceSource::Analytic(spec) => {
            if spec.period() != k_b {
                return Err(Error::Config(format!(
                    "K_b = {k_b} but the OFDM period is {}",
                    spec.period()
                )));
            }
            CovBank::from_fn(c_ss, k_b, |m| Ok(to_vv(ofdm_cov_matrix(spec, l, m))), epsilon_scale)
        }
        InterferenceSource::Matrices(ms) => {
            if ms.len() != k_b {
                return Err(Error::Length {
                    expected: k_b,
                    got: ms.len(),
                });
            }
            CovBank::from_fn(c_ss, k_b, |m| Ok(to_vv(ms[m].clone())), epsilon_scale)
        }
        InterferenceSource::Empirical { windows } => {
            let grouped = aligned_blocks(windows.iter().map(|(w, k)| (w, *k)), l, k_b, k_b)?;
            let c_bb = grouped
                .par_iter()
                .enumerate()
                .map(|(m, blocks)| {
                    empirical_cov_matrix(blocks.iter().map(|v| v.as_slice())).map_err(|_| {
                        Error::Empty(format!("no training blocks for interference shift {m}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            CovBank::from_fn(c_ss, k_b, |m| Ok(to_vv(c_bb[m].clone())), epsilon_scale)
        }
    }
}

/// Splits labeled windows into length-`l` blocks grouped by the shift each
/// block starts at. With `groups == 0` every block whose phase is zero is
/// collected into a single group.
fn aligned_blocks<'a, I>(windows: I, l: usize, period: usize, groups: usize) -> Result<Vec<Vec<Vec<C64>>>>
where
    I: Iterator<Item = (&'a ComplexSignal, usize)>,
{
    let mut out: Vec<Vec<Vec<C64>>> = vec![Vec::new(); groups.max(1)];
    for (w, k) in windows {
        let mut start = 0;
        while start + l <= w.len() {
            let shift = (k + start) % period;
            let block = w.samples[start..start + l].to_vec();
            if groups == 0 {
                if shift == 0 {
                    out[0].push(block);
                }
            } else {
                out[shift].push(block);
            }
            start += l;
        }
    }
    Ok(out)
}

fn write_matrix(w: &mut impl Write, m: &CMat) -> Result<()> {
    // row-major
    for i in 0..m.nrows() {
        let row: Vec<C64> = m.row(i).iter().copied().collect();
        put_complex(w, &row)?;
    }
    Ok(())
}

/// Covariance cache: magic "SCOV", version u16, L u32, K_b u16, SIR f64,
/// SNR f64, ε scale f64, then C_ss and K_b matrices C_vv(m), each L×L
/// complex128 row-major, little-endian.
pub fn write_bank(bank: &CovBank, sir_db: f64, snr_db: f64, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(COV_MAGIC)?;
    w.write_all(&COV_VERSION.to_le_bytes())?;
    w.write_all(&(bank.block_len as u32).to_le_bytes())?;
    let k_b = u16::try_from(bank.k_b).map_err(|_| Error::Format("K_b exceeds u16".into()))?;
    w.write_all(&k_b.to_le_bytes())?;
    w.write_all(&sir_db.to_le_bytes())?;
    w.write_all(&snr_db.to_le_bytes())?;
    w.write_all(&bank.epsilon_scale.to_le_bytes())?;
    write_matrix(&mut w, &bank.c_ss_raw)?;
    for m in 0..bank.k_b {
        write_matrix(&mut w, &bank.c_vv(m)?)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a covariance cache and refactors it; returns the bank with its
/// stored SIR and SNR.
pub fn read_bank(path: &Path) -> Result<(CovBank, f64, f64)> {
    let mut r = ByteReader::open(path)?;
    r.expect_magic(COV_MAGIC)?;
    let version = r.u16()?;
    if version != COV_VERSION {
        return Err(Error::Format(format!("unsupported covariance cache version {version}")));
    }
    let l = r.u32()? as usize;
    let k_b = r.u16()? as usize;
    let sir = r.f64()?;
    let snr = r.f64()?;
    let eps = r.f64()?;
    let read_matrix = |r: &mut ByteReader| -> Result<CMat> {
        let v = r.complex(l * l)?;
        Ok(CMat::from_row_slice(l, l, &v))
    };
    let c_ss = read_matrix(&mut r)?;
    let c_vv = (0..k_b).map(|_| read_matrix(&mut r)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok((CovBank::from_matrices(c_ss, c_vv, eps)?, sir, snr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::record_rng;
    use crate::signals::complex_normal_vec;

    fn eye(l: usize, s: f64) -> CMat {
        CMat::from_diagonal_element(l, l, C64::new(s, 0.0))
    }

    #[test]
    fn zero_samples_give_epsilon_floor() {
        let z = vec![vec![C64::new(0.0, 0.0); 2]; 3];
        let c = empirical_cov(z.iter().map(|v| v.as_slice()), 1e-9).unwrap();
        let e = c.entries();
        assert!((e[(0, 0)].re - 1e-9).abs() < 1e-20);
        assert!(e[(0, 1)].norm() < 1e-20);
        assert!(matches!(
            empirical_cov(std::iter::empty::<&[C64]>(), 1e-9),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn rank_one_is_regularized_pd() {
        let x = vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.1), C64::new(0.0, 1.0)];
        let c = empirical_cov([x.as_slice()], 1e-9).unwrap();
        assert!(c.epsilon() > 0.0);
        let e = c.entries();
        for i in 0..3 {
            for j in 0..3 {
                let expect = x[i] * x[j].conj() + if i == j { c.epsilon() } else { 0.0 };
                assert!((e[(i, j)] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn empirical_identity() {
        let mut rng = record_rng(3, 0);
        let n = 100_000;
        let xs: Vec<Vec<C64>> = (0..n).map(|_| complex_normal_vec(&mut rng, 4)).collect();
        let c = empirical_cov_matrix(xs.iter().map(|v| v.as_slice())).unwrap();
        // entry variance: |x_i x_j*|² has mean 1 (off-diagonal) and var(|x|²) = 1 on the diagonal
        let sigma = (1.0 / n as f64).sqrt();
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((c[(i, j)].re - target).abs() < 4.0 * sigma, "{i},{j}");
                assert!(c[(i, j)].im.abs() < 4.0 * sigma);
            }
        }
    }

    #[test]
    fn whitening_identity_and_scalar() {
        let y = vec![C64::new(1.0, -2.0), C64::new(0.5, 0.25)];
        let c = CovMatrix::factorize(eye(2, 1.0), 0.0).unwrap();
        let u = c.whiten(&y).unwrap();
        assert!((u[0] - y[0]).norm() < 1e-15 && (u[1] - y[1]).norm() < 1e-15);
        let c = CovMatrix::factorize(eye(2, 4.0), 0.0).unwrap();
        let u = whiten(&y, &c).unwrap();
        assert!((u[0] - y[0] / 2.0).norm() < 1e-15);
        assert!((c.logdet() - 2.0 * 4f64.ln()).abs() < 1e-14);
        assert!(c.whiten(&[]).is_err());
    }

    #[test]
    fn row_whitening_matches_vector_whitening() {
        let raw = soi_cov_matrix(&QpskSpec::default(), 48, 0).unwrap()
            + ofdm_cov_matrix(&OfdmSpec::default(), 48, 70);
        let c = CovMatrix::factorize(raw, 1e-6).unwrap();
        let rows = CMat::from_fn(5, 48, |r, j| C64::new((r * 7 + j) as f64 % 3.0 - 1.0, (j as f64).sin()));
        let mut w = rows.clone();
        c.whiten_rows(&mut w).unwrap();
        for r in 0..5 {
            let y: Vec<C64> = rows.row(r).iter().copied().collect();
            let u = c.whiten(&y).unwrap();
            for j in 0..48 {
                assert!((w[(r, j)] - u[j]).norm() < 1e-9 * (1.0 + u[j].norm()));
            }
        }
    }

    #[test]
    fn cholesky_reconstructs() {
        let q = QpskSpec::default();
        let raw = soi_cov_matrix(&q, 96, 3).unwrap() + ofdm_cov_matrix(&OfdmSpec::default(), 96, 40);
        let c = CovMatrix::factorize(raw.clone(), 1e-9).unwrap();
        let mut target = raw.clone();
        for i in 0..96 {
            target[(i, i)] += c.epsilon();
        }
        let rel = (c.entries() - &target).norm() / target.norm();
        assert!(rel < 1e-8);
    }

    #[test]
    fn soi_cov_periodic_and_nonnegative() {
        let q = QpskSpec::default();
        for k in 0..16 {
            let c = soi_cov_matrix(&q, 1, k).unwrap();
            assert!(c[(0, 0)].re >= 0.0);
        }
        let a = soi_cov_matrix(&q, 40, 5).unwrap();
        let b = soi_cov_matrix(&q, 40, 21).unwrap();
        assert_eq!(a, b);
        // average power over a period is one
        let c = soi_cov_matrix(&q, 16, 0).unwrap();
        let mean: f64 = (0..16).map(|i| c[(i, i)].re).sum::<f64>() / 16.0;
        assert!((mean - 1.0).abs() < 1e-3, "{mean}");
    }

    #[test]
    fn ofdm_cov_structure() {
        let o = OfdmSpec::default();
        let c = ofdm_cov_matrix(&o, 80, 0);
        assert_eq!(c[(0, 64)], c[(0, 0)]);
        assert_eq!(c[(15, 79)].re, 1.0);
        assert_eq!(c[(16, 80 - 1)].re, 0.0);
        assert_eq!(ofdm_cov_matrix(&o, 100, 7), ofdm_cov_matrix(&o, 100, 87));
        let nocp = OfdmSpec {
            cp_len: 0,
            ..o
        };
        assert_eq!(ofdm_cov_matrix(&nocp, 64, 0), eye(64, 1.0));
        // windows shorter than the DFT never see both ends of a prefix pair
        assert_eq!(ofdm_cov_matrix(&o, 40, 3), eye(40, 1.0));
    }

    #[test]
    fn bank_limits() {
        let q = QpskSpec::default();
        let o = OfdmSpec::default();
        let zero_bb = InterferenceSource::Matrices(vec![CMat::zeros(8, 8); 3]);
        let bank = build_bank(&SoiSource::Analytic(q), &zero_bb, 0.0, 0.0, 8, 3, 1e-9).unwrap();
        for m in 0..3 {
            let v = bank.c_vv(m).unwrap();
            assert!((v - eye(8, 1.0)).norm() < 1e-9);
        }
        let bank = build_bank(
            &SoiSource::Analytic(q),
            &InterferenceSource::Analytic(o),
            0.0,
            f64::INFINITY,
            96,
            80,
            1e-9,
        )
        .unwrap();
        for m in [0usize, 17, 79] {
            let v = bank.c_vv(m).unwrap();
            assert!((v - ofdm_cov_matrix(&o, 96, m)).norm() < 1e-8);
        }
        assert!(build_bank(&SoiSource::Analytic(q), &InterferenceSource::Analytic(o), 0.0, 0.0, 8, 79, 1e-9).is_err());
    }

    #[test]
    fn average_covariance_is_mean_of_shifts() {
        let q = QpskSpec::default();
        let o = OfdmSpec::default();
        let bank = build_bank(&SoiSource::Analytic(q), &InterferenceSource::Analytic(o), -3.0, 10.0, 48, 80, 1e-9).unwrap();
        let mut avg = CMat::zeros(48, 48);
        for m in 0..80 {
            avg += bank.c_yy(m).unwrap().entries();
        }
        avg /= C64::new(80.0, 0.0);
        let rel = (bank.c_yy_avg().entries() - avg).norm() / bank.c_yy_avg().entries().norm();
        assert!(rel < 1e-8);
    }
}
