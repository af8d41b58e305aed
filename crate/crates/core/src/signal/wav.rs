use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{quantize_i16, Waveform};
use crate::error::{Error, Result};

/// A decoded recording plus anything noteworthy about the source file.
#[derive(Debug, Clone)]
pub struct DecodedWav {
    pub waveform: Waveform,
    pub channels: u16,
    pub bits_per_sample: u16,
    pub warnings: Vec<String>,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<DecodedWav> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Decode an in-memory PCM or IEEE-float WAV file into a mono waveform.
///
/// Integer samples are scaled by the format's full-scale value
/// `2^(bits-1)`, so a 16-bit `32767` becomes `32767 / 32768`. Only channel 0
/// of a multi-channel file is kept.
pub fn decode_wav(bytes: &[u8]) -> Result<DecodedWav> {
    let reader = WavReader::new(Cursor::new(bytes)).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(Error::WavFormat("zero channels".into()));
    }
    if spec.sample_rate == 0 {
        return Err(Error::WavFormat("zero sample rate".into()));
    }
    let mut warnings = Vec::new();
    if spec.channels > 1 {
        let msg = format!("{} channels in file; using channel 0", spec.channels);
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let stride = spec.channels as usize;
    // The header's declared length is untrusted; never reserve more than the
    // payload could possibly hold.
    let cap = (reader.len() as usize).min(bytes.len()) / stride;
    let mut samples = Vec::with_capacity(cap);
    let mut clipped = 0usize;
    match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ 1..=32) => {
            let full_scale = (1u64 << (bits - 1)) as f64;
            for (i, s) in reader.into_samples::<i32>().enumerate() {
                let s = s.map_err(wav_err)?;
                if i % stride == 0 {
                    samples.push((s as f64 / full_scale).clamp(-1.0, 1.0));
                }
            }
        }
        (SampleFormat::Float, 32) => {
            for (i, s) in reader.into_samples::<f32>().enumerate() {
                let s = s.map_err(wav_err)?;
                if i % stride == 0 {
                    if !s.is_finite() {
                        return Err(Error::WavFormat(format!("non-finite sample at frame {}", i / stride)));
                    }
                    let v = s as f64;
                    if v.abs() > 1.0 {
                        clipped += 1;
                    }
                    samples.push(v.clamp(-1.0, 1.0));
                }
            }
        }
        (fmt, bits) => {
            return Err(Error::WavFormat(format!(
                "unsupported sample format {fmt:?} with {bits} bits"
            )))
        }
    }
    if clipped > 0 {
        let msg = format!("{clipped} float samples outside [-1, 1] were clipped");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("WAV file contains no samples".into()));
    }
    Ok(DecodedWav {
        waveform: Waveform::new(samples, spec.sample_rate)?,
        channels: spec.channels,
        bits_per_sample: spec.bits_per_sample,
        warnings,
    })
}

fn wav_err(e: hound::Error) -> Error {
    Error::WavFormat(e.to_string())
}

fn spec16(rate: u32) -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

/// Encode as mono 16-bit PCM. Samples already on the 16-bit lattice
/// survive a decode round trip bit-for-bit.
pub fn encode_wav16(w: &Waveform) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    {
        let mut writer = WavWriter::new(&mut buf, spec16(w.sample_rate_hz())).map_err(wav_err)?;
        for &s in w.samples() {
            writer.write_sample(quantize_i16(s)).map_err(wav_err)?;
        }
        writer.finalize().map_err(wav_err)?;
    }
    Ok(buf.into_inner())
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav16(w)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
