//! Matched-filter detection, minimum-distance hard decisions and BER.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::signals::{qam16_level, Alphabet, ComplexSignal, PulseShape, QpskSpec, C64, QAM16_SCALE};

#[derive(Debug, Clone, PartialEq)]
pub struct DemodResult {
    /// Matched-filter outputs at the symbol instants, scaled to the unit-power alphabet.
    pub symbols: Vec<C64>,
    pub bits: Vec<u8>,
    /// Sample index of the first symbol center.
    pub delay_used: usize,
    /// Symbols whose pulse support lies entirely inside the window.
    pub valid: Range<usize>,
}

/// Correlates with the (real, symmetric) taps and samples at every symbol
/// center inside the window. Symbol centers start at the signal's recorded
/// offset, or at the pulse group delay when none is recorded.
pub fn matched_filter(s_hat: &ComplexSignal, pulse: &PulseShape) -> Result<Vec<C64>> {
    let offset = s_hat.meta.symbol_offset.unwrap_or(pulse.group_delay());
    mf_at(&s_hat.samples, pulse, offset)
}

fn mf_at(x: &[C64], pulse: &PulseShape, offset: usize) -> Result<Vec<C64>> {
    if offset >= x.len() {
        return Err(Error::Length {
            expected: offset + 1,
            got: x.len(),
        });
    }
    let taps = pulse.taps();
    let gd = pulse.group_delay() as isize;
    let n = x.len() as isize;
    Ok((offset..x.len())
        .step_by(pulse.oversampling())
        .map(|c| {
            let start = c as isize - gd;
            let lo = (-start).max(0) as usize;
            let hi = (n - start).min(taps.len() as isize) as usize;
            (lo..hi)
                .map(|t| x[(start + t as isize) as usize] * taps[t])
                .sum()
        })
        .collect())
}

/// Nearest-point decision with Gray demapping, in-phase bits first. Exact
/// ties resolve to the lexicographically smallest bit pattern.
pub fn hard_decision(symbols: &[C64], alphabet: Alphabet) -> Result<Vec<u8>> {
    let mut bits = Vec::with_capacity(symbols.len() * alphabet.bits_per_symbol());
    match alphabet {
        Alphabet::Qpsk => {
            for s in symbols {
                bits.push((s.re < 0.0) as u8);
                bits.push((s.im < 0.0) as u8);
            }
        }
        Alphabet::Qam16 => {
            for s in symbols {
                bits.extend(qam16_axis(s.re));
                bits.extend(qam16_axis(s.im));
            }
        }
        Alphabet::GaussianIid => {
            return Err(Error::Domain("no hard decisions for the Gaussian alphabet".into()))
        }
    }
    Ok(bits)
}

fn qam16_axis(v: f64) -> [u8; 2] {
    let mut best = ([1u8, 1u8], f64::INFINITY);
    for pattern in [[0u8, 0u8], [0, 1], [1, 0], [1, 1]] {
        let d = (v - qam16_level(pattern[0], pattern[1]) * QAM16_SCALE).abs();
        if d < best.1 || (d == best.1 && pattern < best.0) {
            best = (pattern, d);
        }
    }
    best.0
}

/// Fraction of differing bits.
pub fn ber(bits: &[u8], ref_bits: &[u8]) -> Result<f64> {
    Ok(bit_errors(bits, ref_bits)? as f64 / bits.len() as f64)
}

pub fn bit_errors(bits: &[u8], ref_bits: &[u8]) -> Result<usize> {
    if bits.len() != ref_bits.len() {
        return Err(Error::Length {
            expected: ref_bits.len(),
            got: bits.len(),
        });
    }
    if bits.is_empty() {
        return Err(Error::Empty("no bits to compare".into()));
    }
    Ok(bits.iter().zip(ref_bits).filter(|(a, b)| a != b).count())
}

/// Full detection chain for an estimate of the signal of interest.
pub fn demodulate(s_hat: &ComplexSignal, spec: &QpskSpec) -> Result<DemodResult> {
    let pulse = spec.pulse()?;
    let gd = pulse.group_delay();
    let offset = s_hat.meta.symbol_offset.unwrap_or(gd);
    let scale = 1.0 / spec.amplitude();
    let symbols: Vec<C64> = mf_at(&s_hat.samples, &pulse, offset)?
        .into_iter()
        .map(|x| x * scale)
        .collect();
    let bits = hard_decision(&symbols, spec.alphabet)?;
    let os = spec.oversampling;
    let len = s_hat.len();
    // center c = offset + i*os needs c >= gd and c + gd < len
    let first = gd.saturating_sub(offset).div_ceil(os);
    let end = if len > gd + offset {
        ((len - gd - offset - 1) / os + 1).min(symbols.len())
    } else {
        0
    };
    Ok(DemodResult {
        symbols,
        bits,
        delay_used: offset,
        valid: first..end.max(first),
    })
}

/// Bit errors and compared bits over the fully supported symbols.
pub fn count_valid_errors(d: &DemodResult, ref_bits: &[u8], alphabet: Alphabet) -> Result<(usize, usize)> {
    let k = alphabet.bits_per_symbol();
    let r = d.valid.start * k..d.valid.end * k;
    if ref_bits.len() < r.end || d.bits.len() < r.end {
        return Err(Error::Length {
            expected: r.end,
            got: ref_bits.len().min(d.bits.len()),
        });
    }
    if r.is_empty() {
        return Ok((0, 0));
    }
    Ok((bit_errors(&d.bits[r.clone()], &ref_bits[r.clone()])?, r.len()))
}
