//! Noisy two-source mixtures with random cyclic time-shifts, and the binary
//! dataset container shared with external tooling.
//!
//! Shifts are 0-based: a window with shift `k` starts `k` samples into the
//! cyclic period of its source, so sample `n` of the window sits at cycle
//! phase `(n + k) mod K`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::signals::{
    complex_normal_vec, gen_ofdm, gen_symbols_with_bits, pulse_shape, ComplexSignal, OfdmSpec,
    QpskSpec, C64,
};

pub const DATASET_MAGIC: &[u8; 4] = b"SCSS";
pub const FORMAT_VERSION: u16 = 1;

pub const FLAG_COMPONENTS: u32 = 1 << 0;
pub const FLAG_BITS: u32 = 1 << 1;
pub const FLAG_PREDICTIONS: u32 = 1 << 2;
pub const FLAG_SHAT: u32 = 1 << 3;

/// Linear amplitude 10^(-dB/20); +inf dB maps to 0.
pub fn db_to_amplitude(db: f64) -> f64 {
    if db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-db / 20.0)
    }
}

/// Linear power 10^(-dB/10); +inf dB maps to 0.
pub fn db_to_inv_power(db: f64) -> f64 {
    if db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-db / 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftMode {
    Fixed(usize),
    Uniform,
}

impl ShiftMode {
    fn draw<R: Rng + ?Sized>(self, period: usize, rng: &mut R) -> usize {
        match self {
            ShiftMode::Fixed(m) => m % period,
            ShiftMode::Uniform => rng.random_range(0..period),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub n_samples: usize,
    pub sir_db: f64,
    /// `f64::INFINITY` for the noiseless setting.
    pub snr_db: f64,
    pub k_s_mode: ShiftMode,
    pub k_b_mode: ShiftMode,
    pub k_s_period: usize,
    pub k_b_period: usize,
}

impl MixtureParams {
    /// Receiver synchronized to the signal of interest, uniform interference shift.
    pub fn new(n_samples: usize, sir_db: f64, snr_db: f64, qpsk: &QpskSpec, ofdm: &OfdmSpec) -> Self {
        Self {
            n_samples,
            sir_db,
            snr_db,
            k_s_mode: ShiftMode::Fixed(0),
            k_b_mode: ShiftMode::Uniform,
            k_s_period: qpsk.period(),
            k_b_period: ofdm.period(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.k_s_period == 0 || self.k_b_period == 0 {
            return Err(Error::Config("N, K_s and K_b must be positive".into()));
        }
        if self.sir_db.is_nan() || self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::Config("SIR/SNR must be numbers or +inf".into()));
        }
        Ok(())
    }
}

/// Returns the window `x[k .. k + n_out]`.
pub fn apply_shift(x: &ComplexSignal, k: usize, n_out: usize) -> Result<ComplexSignal> {
    if x.len() < n_out + k {
        return Err(Error::Length {
            expected: n_out + k,
            got: x.len(),
        });
    }
    let mut out = ComplexSignal::new(x.samples[k..k + n_out].to_vec());
    out.meta.origin = x.meta.origin.clone();
    Ok(out)
}

/// y = s + 10^(-SIR/20) b + 10^(-SNR/20) w. With SNR = +inf `w` is ignored
/// and may be empty.
pub fn mix(s: &[C64], b: &[C64], w: &[C64], sir_db: f64, snr_db: f64) -> Result<Vec<C64>> {
    if b.len() != s.len() {
        return Err(Error::Length {
            expected: s.len(),
            got: b.len(),
        });
    }
    let gb = db_to_amplitude(sir_db);
    let gw = db_to_amplitude(snr_db);
    if gw == 0.0 {
        return Ok(s.iter().zip(b).map(|(&s, &b)| s + b * gb).collect());
    }
    if w.len() != s.len() {
        return Err(Error::Length {
            expected: s.len(),
            got: w.len(),
        });
    }
    Ok(s.iter()
        .zip(b)
        .zip(w)
        .map(|((&s, &b), &w)| s + b * gb + w * gw)
        .collect())
}

/// Index of the first symbol center inside a window of the signal of interest
/// taken with shift `k_s`.
pub fn soi_symbol_offset(spec: &QpskSpec, k_s: usize) -> usize {
    let gd = (spec.span_symbols * spec.oversampling) / 2;
    (gd as isize - k_s as isize).rem_euclid(spec.oversampling as isize) as usize
}

/// Steady-state window of the pulse-shaped signal of interest, unit power,
/// together with the bits of every symbol whose center lies in the window.
pub fn soi_window<R: Rng + ?Sized>(
    spec: &QpskSpec,
    n: usize,
    k_s: usize,
    rng: &mut R,
) -> Result<(ComplexSignal, Vec<u8>)> {
    let os = spec.oversampling;
    let span = spec.span_symbols;
    let pulse = spec.pulse()?;
    let nsym = span + (n + k_s).div_ceil(os);
    let (symbols, bits) = gen_symbols_with_bits(spec.alphabet, nsym, rng);
    let full = pulse_shape(&symbols, &pulse);
    let amp = spec.amplitude();
    let skip = span * os;
    let steady: Vec<C64> = full.samples[skip..skip + n + k_s].iter().map(|x| x * amp).collect();
    let mut win = ComplexSignal::new(steady[k_s..].to_vec()).with_origin("soi");
    let offset = soi_symbol_offset(spec, k_s);
    win.meta.symbol_offset = Some(offset);

    let bps = spec.alphabet.bits_per_symbol();
    let window_bits = if bps == 0 {
        Vec::new()
    } else {
        // symbol i is centered at steady index gd + os*i - span*os
        let gd = pulse.group_delay();
        let first = (offset + k_s + skip - gd) / os;
        let count = n.saturating_sub(offset).div_ceil(os);
        bits[first * bps..(first + count) * bps].to_vec()
    };
    Ok((win, window_bits))
}

/// Window of the OFDM interference with shift `k_b`.
pub fn interference_window<R: Rng + ?Sized>(
    spec: &OfdmSpec,
    n: usize,
    k_b: usize,
    rng: &mut R,
) -> Result<ComplexSignal> {
    let nsym = (n + k_b).div_ceil(spec.symbol_len()).max(1);
    let full = gen_ofdm(spec, nsym, rng);
    apply_shift(&full, k_b, n)
}

/// One labeled realization.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureRecord {
    pub y: ComplexSignal,
    pub s: Option<ComplexSignal>,
    pub b: Option<ComplexSignal>,
    /// Unit-variance white noise, kept in memory only.
    pub noise: Option<Vec<C64>>,
    pub k_s: usize,
    pub k_b: usize,
    pub bits: Vec<u8>,
}

pub fn gen_record<R: Rng + ?Sized>(
    qpsk: &QpskSpec,
    ofdm: &OfdmSpec,
    params: &MixtureParams,
    rng: &mut R,
) -> Result<MixtureRecord> {
    let n = params.n_samples;
    let k_s = params.k_s_mode.draw(params.k_s_period, rng);
    let k_b = params.k_b_mode.draw(params.k_b_period, rng);
    let (s, bits) = soi_window(qpsk, n, k_s, rng)?;
    let b = interference_window(ofdm, n, k_b, rng)?;
    let noise = (params.snr_db != f64::INFINITY).then(|| complex_normal_vec(rng, n));
    let y = mix(
        &s.samples,
        &b.samples,
        noise.as_deref().unwrap_or(&[]),
        params.sir_db,
        params.snr_db,
    )?;
    let mut y = ComplexSignal::new(y).with_origin("mixture");
    y.meta.symbol_offset = s.meta.symbol_offset;
    Ok(MixtureRecord {
        y,
        s: Some(s),
        b: Some(b),
        noise,
        k_s,
        k_b,
        bits,
    })
}

/// Independent stream for record `index` under `master_seed`.
pub fn record_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub version: u16,
    pub n: usize,
    pub k_s_period: usize,
    pub k_b_period: usize,
    pub count: usize,
    pub sir_db: f64,
    pub snr_db: f64,
    pub flags: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<MixtureRecord>,
}

pub fn gen_dataset(
    qpsk: &QpskSpec,
    ofdm: &OfdmSpec,
    params: &MixtureParams,
    count: usize,
    master_seed: u64,
) -> Result<Dataset> {
    params.validate()?;
    if count == 0 {
        return Err(Error::Config("dataset count must be at least 1".into()));
    }
    let records = (0..count)
        .into_par_iter()
        .map(|i| gen_record(qpsk, ofdm, params, &mut record_rng(master_seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut flags = FLAG_COMPONENTS;
    if qpsk.alphabet.is_discrete() {
        flags |= FLAG_BITS;
    }
    Ok(Dataset {
        header: DatasetHeader {
            version: FORMAT_VERSION,
            n: params.n_samples,
            k_s_period: params.k_s_period,
            k_b_period: params.k_b_period,
            count,
            sir_db: params.sir_db,
            snr_db: params.snr_db,
            flags,
        },
        records,
    })
}

fn put_u16(w: &mut impl Write, v: usize, what: &str) -> Result<()> {
    let v = u16::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u16")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u32(w: &mut impl Write, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_complex(w: &mut impl Write, xs: &[C64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.re.to_le_bytes())?;
        w.write_all(&x.im.to_le_bytes())?;
    }
    Ok(())
}

/// Bounds-checked little-endian cursor.
pub(crate) struct ByteReader {
    buf: Vec<u8>,
    pos: usize,
}

impl ByteReader {
    pub(crate) fn open(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
        Ok(Self { buf, pos: 0 })
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated: need {n} bytes at offset {}, {} available",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn complex(&mut self, n: usize) -> Result<Vec<C64>> {
        let raw = self.take(n * 16)?;
        Ok(raw
            .chunks_exact(16)
            .map(|c| {
                C64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect())
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn pack_bits(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b != 0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(packed: &[u8], len: usize) -> Vec<u8> {
    (0..len).map(|i| (packed[i / 8] >> (i % 8)) & 1).collect()
}

fn write_header(w: &mut impl Write, h: &DatasetHeader) -> Result<()> {
    if h.snr_db.is_nan() || h.sir_db.is_nan() {
        return Err(Error::Format("NaN SIR/SNR cannot be stored".into()));
    }
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&h.version.to_le_bytes())?;
    put_u32(w, h.n, "N")?;
    put_u16(w, h.k_s_period, "K_s")?;
    put_u16(w, h.k_b_period, "K_b")?;
    put_u32(w, h.count, "count")?;
    w.write_all(&h.sir_db.to_le_bytes())?;
    w.write_all(&h.snr_db.to_le_bytes())?;
    w.write_all(&h.flags.to_le_bytes())?;
    Ok(())
}

fn read_header(r: &mut ByteReader) -> Result<DatasetHeader> {
    r.expect_magic(DATASET_MAGIC)?;
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let h = DatasetHeader {
        version,
        n: r.u32()? as usize,
        k_s_period: r.u16()? as usize,
        k_b_period: r.u16()? as usize,
        count: r.u32()? as usize,
        sir_db: r.f64()?,
        snr_db: r.f64()?,
        flags: r.u32()?,
    };
    if h.sir_db.is_nan() || h.snr_db.is_nan() {
        return Err(Error::Format("NaN SIR/SNR in header".into()));
    }
    Ok(h)
}

pub fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let h = &d.header;
    if h.flags & FLAG_PREDICTIONS != 0 {
        return Err(Error::Format("prediction flag set on a dataset".into()));
    }
    if d.records.len() != h.count {
        return Err(Error::Length {
            expected: h.count,
            got: d.records.len(),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, h)?;
    for rec in &d.records {
        put_u16(&mut w, rec.k_s, "k_s")?;
        put_u16(&mut w, rec.k_b, "k_b")?;
        if rec.y.len() != h.n {
            return Err(Error::Length {
                expected: h.n,
                got: rec.y.len(),
            });
        }
        put_complex(&mut w, &rec.y.samples)?;
        if h.flags & FLAG_COMPONENTS != 0 {
            for comp in [&rec.s, &rec.b] {
                let c = comp
                    .as_ref()
                    .ok_or_else(|| Error::Format("components flagged but missing".into()))?;
                if c.len() != h.n {
                    return Err(Error::Length {
                        expected: h.n,
                        got: c.len(),
                    });
                }
                put_complex(&mut w, &c.samples)?;
            }
        }
        if h.flags & FLAG_BITS != 0 {
            put_u32(&mut w, rec.bits.len(), "bit count")?;
            w.write_all(&pack_bits(&rec.bits))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = ByteReader::open(path)?;
    let header = read_header(&mut r)?;
    if header.flags & FLAG_PREDICTIONS != 0 {
        return Err(Error::Format("file is a prediction file, not a dataset".into()));
    }
    let n = header.n;
    let mut records = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        let k_s = r.u16()? as usize;
        let k_b = r.u16()? as usize;
        let y = ComplexSignal::new(r.complex(n)?);
        let (s, b) = if header.flags & FLAG_COMPONENTS != 0 {
            (
                Some(ComplexSignal::new(r.complex(n)?)),
                Some(ComplexSignal::new(r.complex(n)?)),
            )
        } else {
            (None, None)
        };
        let bits = if header.flags & FLAG_BITS != 0 {
            let len = r.u32()? as usize;
            unpack_bits(r.take(len.div_ceil(8))?, len)
        } else {
            Vec::new()
        };
        records.push(MixtureRecord {
            y,
            s,
            b,
            noise: None,
            k_s,
            k_b,
            bits,
        });
    }
    r.finish()?;
    Ok(Dataset { header, records })
}

/// Output of an external synchronizer or separator for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub k_s: usize,
    pub k_b: usize,
    pub k_b_hat: usize,
    pub s_hat: Option<Vec<C64>>,
}

/// Prediction file: the dataset header with [`FLAG_PREDICTIONS`] set, then per
/// record `k_s u16, k_b u16, k_b_hat u16` and, when [`FLAG_SHAT`] is set,
/// `s_hat` as N complex128.
pub fn write_predictions(header: &DatasetHeader, preds: &[Prediction], path: &Path) -> Result<()> {
    let with_shat = preds.first().is_some_and(|p| p.s_hat.is_some());
    let mut h = header.clone();
    h.count = preds.len();
    h.flags = FLAG_PREDICTIONS | if with_shat { FLAG_SHAT } else { 0 };
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, &h)?;
    for p in preds {
        put_u16(&mut w, p.k_s, "k_s")?;
        put_u16(&mut w, p.k_b, "k_b")?;
        put_u16(&mut w, p.k_b_hat, "k_b_hat")?;
        match (&p.s_hat, with_shat) {
            (Some(s), true) if s.len() == h.n => put_complex(&mut w, s)?,
            (None, false) => {}
            _ => return Err(Error::Format("inconsistent s_hat payloads".into())),
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<(DatasetHeader, Vec<Prediction>)> {
    let mut r = ByteReader::open(path)?;
    let header = read_header(&mut r)?;
    if header.flags & FLAG_PREDICTIONS == 0 {
        return Err(Error::Format("prediction flag (bit 2) not set".into()));
    }
    let mut preds = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        let k_s = r.u16()? as usize;
        let k_b = r.u16()? as usize;
        let k_b_hat = r.u16()? as usize;
        let s_hat = if header.flags & FLAG_SHAT != 0 {
            Some(r.complex(header.n)?)
        } else {
            None
        };
        preds.push(Prediction {
            k_s,
            k_b,
            k_b_hat,
            s_hat,
        });
    }
    r.finish()?;
    Ok((header, preds))
}
