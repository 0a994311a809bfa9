//! Waveform generators: RRC-shaped single-carrier symbols for the signal of
//! interest and CP-OFDM for the interference, with Gaussian surrogates of both
//! alphabets.
//!
//! Power is normalized analytically: alphabets have unit average power, pulses
//! have unit energy and the OFDM inverse transform is unitary. Nothing is
//! rescaled per realization.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Symbol alphabet of a waveform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Alphabet {
    Qpsk,
    Qam16,
    /// Standard circularly-symmetric complex normal symbols.
    GaussianIid,
}

impl Alphabet {
    /// Bits carried per symbol; zero for the Gaussian surrogate.
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Alphabet::Qpsk => 2,
            Alphabet::Qam16 => 4,
            Alphabet::GaussianIid => 0,
        }
    }

    pub fn is_discrete(self) -> bool {
        self != Alphabet::GaussianIid
    }
}

/// Real, symmetric FIR pulse with unit energy.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseShape {
    taps: Vec<f64>,
    oversampling: usize,
    span_symbols: usize,
}

impl PulseShape {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn oversampling(&self) -> usize {
        self.oversampling
    }

    pub fn span_symbols(&self) -> usize {
        self.span_symbols
    }

    /// Index of the tap peak, i.e. the delay between a symbol and its pulse center.
    pub fn group_delay(&self) -> usize {
        self.taps.len() / 2
    }
}

/// Root-raised-cosine taps sampled at `oversampling` samples per symbol and
/// truncated to `span_symbols` symbols, normalized to unit energy.
pub fn rrc_taps(rolloff: f64, span_symbols: usize, oversampling: usize) -> Result<PulseShape> {
    if !(rolloff > 0.0 && rolloff <= 1.0) {
        return Err(Error::Domain(format!("rolloff {rolloff} outside (0, 1]")));
    }
    if span_symbols == 0 || oversampling == 0 {
        return Err(Error::Domain(
            "span_symbols and oversampling must be positive".into(),
        ));
    }
    let len = span_symbols * oversampling + 1;
    let center = (len / 2) as f64;
    let beta = rolloff;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| rrc_impulse((i as f64 - center) / oversampling as f64, beta))
        .collect();
    let energy: f64 = taps.iter().map(|t| t * t).sum();
    let norm = energy.sqrt();
    taps.iter_mut().for_each(|t| *t /= norm);
    Ok(PulseShape {
        taps,
        oversampling,
        span_symbols,
    })
}

/// Unnormalized RRC impulse response at `t` symbol periods.
fn rrc_impulse(t: f64, beta: f64) -> f64 {
    const TOL: f64 = 1e-10;
    if t.abs() < TOL {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    let quarter = 1.0 / (4.0 * beta);
    if (t.abs() - quarter).abs() < TOL {
        let arg = PI / (4.0 * beta);
        return beta / 2f64.sqrt()
            * ((1.0 + 2.0 / PI) * arg.sin() + (1.0 - 2.0 / PI) * arg.cos());
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
    num / den
}

/// Single-carrier waveform of the signal of interest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpskSpec {
    pub rolloff: f64,
    pub span_symbols: usize,
    pub oversampling: usize,
    pub alphabet: Alphabet,
}

impl Default for QpskSpec {
    fn default() -> Self {
        Self {
            rolloff: 0.5,
            span_symbols: 8,
            oversampling: 16,
            alphabet: Alphabet::Qpsk,
        }
    }
}

impl QpskSpec {
    pub fn gaussian() -> Self {
        Self {
            alphabet: Alphabet::GaussianIid,
            ..Self::default()
        }
    }

    /// Fundamental cyclic period.
    pub fn period(&self) -> usize {
        self.oversampling
    }

    pub fn pulse(&self) -> Result<PulseShape> {
        rrc_taps(self.rolloff, self.span_symbols, self.oversampling)
    }

    /// Amplitude applied on top of the unit-energy pulse so that the shaped
    /// waveform has unit average power per sample.
    pub fn amplitude(&self) -> f64 {
        (self.oversampling as f64).sqrt()
    }
}

/// CP-OFDM interference waveform; every subcarrier is active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfdmSpec {
    pub fft_size: usize,
    pub cp_len: usize,
    pub alphabet: Alphabet,
}

impl Default for OfdmSpec {
    fn default() -> Self {
        Self {
            fft_size: 64,
            cp_len: 16,
            alphabet: Alphabet::Qam16,
        }
    }
}

impl OfdmSpec {
    pub fn gaussian() -> Self {
        Self {
            alphabet: Alphabet::GaussianIid,
            ..Self::default()
        }
    }

    pub fn symbol_len(&self) -> usize {
        self.fft_size + self.cp_len
    }

    /// Fundamental cyclic period.
    pub fn period(&self) -> usize {
        self.symbol_len()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignalMeta {
    pub origin: Option<String>,
    /// Sample index of the first symbol center, when the signal is pulse shaped.
    pub symbol_offset: Option<usize>,
}

/// Complex baseband samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComplexSignal {
    pub samples: Vec<C64>,
    pub meta: SignalMeta,
}

impl ComplexSignal {
    pub fn new(samples: Vec<C64>) -> Self {
        Self {
            samples,
            meta: SignalMeta::default(),
        }
    }

    pub fn with_origin(mut self, origin: &str) -> Self {
        self.meta.origin = Some(origin.to_string());
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean of |x[n]|².
    pub fn average_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|x| x.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }
}

/// Standard complex normal draw, E|z|² = 1.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * FRAC_1_SQRT_2
}

pub fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<C64> {
    (0..count).map(|_| complex_normal(rng)).collect()
}

/// Gray level on one axis of 16-QAM: 00 → -3, 01 → -1, 11 → +1, 10 → +3.
pub(crate) fn qam16_level(hi: u8, lo: u8) -> f64 {
    match (hi, lo) {
        (0, 0) => -3.0,
        (0, 1) => -1.0,
        (1, 1) => 1.0,
        _ => 3.0,
    }
}

pub(crate) const QAM16_SCALE: f64 = 0.316_227_766_016_837_94; // 1/sqrt(10)

/// Gray-maps bits to unit-power symbols, in-phase bits first.
pub fn map_bits(alphabet: Alphabet, bits: &[u8]) -> Result<Vec<C64>> {
    let k = alphabet.bits_per_symbol();
    if k == 0 {
        return Err(Error::Domain("the Gaussian alphabet carries no bits".into()));
    }
    if bits.len() % k != 0 {
        return Err(Error::Length {
            expected: bits.len().div_ceil(k) * k,
            got: bits.len(),
        });
    }
    let sign = |b: u8| if b == 0 { 1.0 } else { -1.0 };
    Ok(bits
        .chunks_exact(k)
        .map(|c| match alphabet {
            Alphabet::Qpsk => C64::new(sign(c[0]), sign(c[1])) * FRAC_1_SQRT_2,
            _ => C64::new(qam16_level(c[0], c[1]), qam16_level(c[2], c[3])) * QAM16_SCALE,
        })
        .collect())
}

pub fn gen_bits<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<u8> {
    (0..count).map(|_| rng.random::<bool>() as u8).collect()
}

/// Draws `count` i.i.d. unit-power symbols together with the bits they carry
/// (empty for the Gaussian alphabet).
pub fn gen_symbols_with_bits<R: Rng + ?Sized>(
    alphabet: Alphabet,
    count: usize,
    rng: &mut R,
) -> (Vec<C64>, Vec<u8>) {
    match alphabet {
        Alphabet::GaussianIid => (complex_normal_vec(rng, count), Vec::new()),
        _ => {
            let bits = gen_bits(rng, count * alphabet.bits_per_symbol());
            let symbols = map_bits(alphabet, &bits).expect("bit count matches alphabet");
            (symbols, bits)
        }
    }
}

pub fn gen_symbols<R: Rng + ?Sized>(alphabet: Alphabet, count: usize, rng: &mut R) -> Vec<C64> {
    gen_symbols_with_bits(alphabet, count, rng).0
}

/// Upsamples by the pulse oversampling factor and filters with the taps.
///
/// The output is the full convolution, `(symbols.len() - 1) * L + taps.len()`
/// samples long; symbol `i` peaks at `group_delay + i * L`.
pub fn pulse_shape(symbols: &[C64], pulse: &PulseShape) -> ComplexSignal {
    let os = pulse.oversampling;
    let taps = &pulse.taps;
    if symbols.is_empty() {
        return ComplexSignal::new(Vec::new());
    }
    let len = (symbols.len() - 1) * os + taps.len();
    let mut out = vec![C64::new(0.0, 0.0); len];
    for (i, &a) in symbols.iter().enumerate() {
        let base = i * os;
        for (t, &h) in taps.iter().enumerate() {
            out[base + t] += a * h;
        }
    }
    let mut sig = ComplexSignal::new(out).with_origin("pulse_shape");
    sig.meta.symbol_offset = Some(pulse.group_delay());
    sig
}

/// Concatenated CP-OFDM symbols with unit average power.
pub fn gen_ofdm<R: Rng + ?Sized>(spec: &OfdmSpec, num_symbols: usize, rng: &mut R) -> ComplexSignal {
    let n = spec.fft_size;
    let cp = spec.cp_len;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let scale = 1.0 / (n as f64).sqrt();
    let mut out = Vec::with_capacity(num_symbols * spec.symbol_len());
    let mut body = vec![C64::new(0.0, 0.0); n];
    for _ in 0..num_symbols {
        let sc = gen_symbols(spec.alphabet, n, rng);
        body.copy_from_slice(&sc);
        ifft.process(&mut body);
        body.iter_mut().for_each(|x| *x *= scale);
        out.extend_from_slice(&body[n - cp..]);
        out.extend_from_slice(&body);
    }
    ComplexSignal::new(out).with_origin("ofdm")
}
