//! 16-bit PCM mono WAV at 16 kHz.

use std::io::{Read, Seek, Write};
use std::path::Path;

use avsm_core::dsp::AudioBuffer;

use crate::error::{Error, Result};

pub const WAV_SAMPLE_RATE: u32 = 16_000;

/// `x·32768` rounded, clipped symmetrically to `±32767`. NaN maps to 0.
pub fn to_pcm16(x: f64) -> i16 {
    if x.is_nan() {
        return 0;
    }
    (x * 32768.0).round().clamp(-32767.0, 32767.0) as i16
}

pub fn from_pcm16(v: i16) -> f64 {
    v as f64 / 32768.0
}

fn spec() -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate: WAV_SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_wav_from(std::io::BufReader::new(file), path)
}

/// Reads from any byte source; `path` only labels errors.
pub fn read_wav_from<R: Read>(reader: R, path: &Path) -> Result<AudioBuffer> {
    let wav_err = |reason: String| Error::Wav { path: path.to_path_buf(), reason };
    let reader = hound::WavReader::new(reader).map_err(|e| wav_err(e.to_string()))?;
    let s = reader.spec();
    if s.sample_format != hound::SampleFormat::Int || s.bits_per_sample != 16 {
        return Err(wav_err(format!(
            "expected 16-bit integer PCM, found {}-bit {:?}",
            s.bits_per_sample, s.sample_format
        )));
    }
    if s.channels != 1 {
        return Err(wav_err(format!("expected mono, found {} channels", s.channels)));
    }
    if s.sample_rate != WAV_SAMPLE_RATE {
        return Err(Error::ResampleRequired {
            path: path.to_path_buf(),
            found: s.sample_rate,
            expected: WAV_SAMPLE_RATE,
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|v| v.map(from_pcm16))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(e.to_string()))?;
    Ok(AudioBuffer::new(samples, WAV_SAMPLE_RATE)?)
}

pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_wav_to(std::io::BufWriter::new(file), audio, path)
}

pub fn write_wav_to<W: Write + Seek>(writer: W, audio: &AudioBuffer, path: &Path) -> Result<()> {
    let wav_err = |e: hound::Error| Error::Wav { path: path.to_path_buf(), reason: e.to_string() };
    if audio.sample_rate != WAV_SAMPLE_RATE {
        return Err(Error::ResampleRequired {
            path: path.to_path_buf(),
            found: audio.sample_rate,
            expected: WAV_SAMPLE_RATE,
        });
    }
    let mut w = hound::WavWriter::new(writer, spec()).map_err(wav_err)?;
    for &x in &audio.samples {
        w.write_sample(to_pcm16(x)).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}
