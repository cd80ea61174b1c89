use std::io::Cursor;
use std::path::Path;

use super::{AugLabel, DspError, Utterance, SAMPLE_RATE};

fn corrupt(path: &str, reason: impl Into<String>) -> DspError {
    DspError::CorruptFile {
        path: path.to_string(),
        reason: reason.into(),
    }
}

/// Reads a 16-bit PCM WAV at 16 kHz. Multi-channel files are downmixed by
/// averaging. Speaker and utterance ids are left for the caller to fill in.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Utterance, DspError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| DspError::Io {
        path: name.clone(),
        source,
    })?;
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(DspError::UnsupportedFormat {
            path: name,
            reason: "not a RIFF/WAVE file".into(),
        });
    }
    let riff_len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    if riff_len + 8 != bytes.len() {
        return Err(corrupt(
            &name,
            format!("header reports {} bytes, file has {}", riff_len + 8, bytes.len()),
        ));
    }
    let reader = hound::WavReader::new(Cursor::new(&bytes[..])).map_err(|e| match e {
        hound::Error::Unsupported => DspError::UnsupportedFormat {
            path: name.clone(),
            reason: "unsupported WAV encoding".into(),
        },
        other => corrupt(&name, other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(DspError::UnsupportedFormat {
            path: name,
            reason: format!("{:?} {}-bit (expected 16-bit PCM)", spec.sample_format, spec.bits_per_sample),
        });
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(DspError::UnsupportedRate {
            path: name,
            rate: spec.sample_rate,
        });
    }
    let channels = spec.channels.max(1) as usize;
    let expected = reader.len() as usize;
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<Result<_, _>>()
        .map_err(|e| corrupt(&name, e.to_string()))?;
    if raw.len() != expected || raw.len() % channels != 0 {
        return Err(corrupt(
            &name,
            format!("data chunk holds {} samples, header reports {expected}", raw.len()),
        ));
    }
    if raw.is_empty() {
        return Err(corrupt(&name, "no samples"));
    }
    let scale = 1.0 / (32768.0 * channels as f32);
    let samples = raw
        .chunks_exact(channels)
        .map(|frame| frame.iter().map(|&s| s as f32).sum::<f32>() * scale)
        .collect();
    Ok(Utterance {
        utt_id: String::new(),
        samples,
        sample_rate: SAMPLE_RATE,
        speaker_id: 0,
        aug_label: AugLabel::Raw,
        source_path: name,
    })
}

/// Writes mono 16-bit PCM at 16 kHz, clipping to the representable range.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f32]) -> Result<(), DspError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let io = |e: hound::Error| match e {
        hound::Error::IoError(source) => DspError::Io {
            path: name.clone(),
            source,
        },
        other => corrupt(&name, other.to_string()),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(io)?;
    for &s in samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(q).map_err(io)?;
    }
    w.finalize().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, rate: u32, channels: u16, samples: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn one_second_of_silence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_raw(&p, 16000, 1, &vec![0; 16000]);
        let u = load_wav(&p).unwrap();
        assert_eq!(u.samples.len(), 16000);
        assert!(u.samples.iter().all(|&s| s == 0.0));
        assert_eq!(u.sample_rate, 16000);
    }

    #[test]
    fn full_scale_square_wave_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sq.wav");
        let sq: Vec<i16> = (0..1600).map(|i| if (i / 40) % 2 == 0 { 32767 } else { -32767 }).collect();
        write_raw(&p, 16000, 1, &sq);
        let u = load_wav(&p).unwrap();
        assert!((u.samples[0] - 32767.0 / 32768.0).abs() < 1e-7);
        assert!((u.samples[0] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn stereo_is_downmixed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        write_raw(&p, 16000, 2, &[16384, 0, -16384, -16384]);
        let u = load_wav(&p).unwrap();
        assert_eq!(u.samples, vec![0.25, -0.5]);
    }

    #[test]
    fn other_rates_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.wav");
        write_raw(&p, 8000, 1, &[0; 800]);
        assert!(matches!(load_wav(&p), Err(DspError::UnsupportedRate { rate: 8000, .. })));
    }

    #[test]
    fn length_mismatch_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        write_raw(&p, 16000, 1, &[1; 1000]);
        let mut bytes = std::fs::read(&p).unwrap();
        // drop the tail of the data chunk; the header still claims 1000 samples
        bytes.truncate(bytes.len() - 100);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_wav(&p), Err(DspError::CorruptFile { .. })));
        // now also patch the RIFF size so only the data chunk disagrees
        let riff = (bytes.len() - 8) as u32;
        bytes[4..8].copy_from_slice(&riff.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_wav(&p), Err(DspError::CorruptFile { .. })));
    }

    #[test]
    fn non_wav_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        std::fs::write(&p, b"hello world, not audio").unwrap();
        assert!(matches!(load_wav(&p), Err(DspError::UnsupportedFormat { .. })));
    }

    #[test]
    fn write_then_load_round_trips_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.wav");
        let s: Vec<f32> = (0..500).map(|i| ((i as f32) * 0.01).sin() * 0.5).collect();
        write_wav(&p, &s).unwrap();
        let u = load_wav(&p).unwrap();
        for (a, b) in s.iter().zip(&u.samples) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-7);
        }
    }
}
