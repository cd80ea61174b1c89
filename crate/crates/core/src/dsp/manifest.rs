//! Tab-separated dataset and noise manifests.
//!
//! Relative WAV paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use super::{DspError, NoiseSplit};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub utt_id: String,
    pub speaker_id: String,
    pub wav_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseRecord {
    pub noise_id: String,
    pub category: String,
    pub split: NoiseSplit,
    pub wav_path: PathBuf,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, DspError> {
    let text = std::fs::read_to_string(path).map_err(|source| DspError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').to_string()))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .collect())
}

fn resolve(manifest: &Path, wav: &str) -> PathBuf {
    let p = PathBuf::from(wav);
    if p.is_absolute() {
        p
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn fields<'a>(
    path: &Path,
    line: usize,
    text: &'a str,
    want: usize,
) -> Result<Vec<&'a str>, DspError> {
    let cols: Vec<&str> = text.split('\t').collect();
    if cols.len() != want || cols.iter().any(|c| c.is_empty()) {
        return Err(DspError::Manifest {
            path: path.display().to_string(),
            line,
            reason: format!("expected {want} non-empty tab-separated fields, got {}", cols.len()),
        });
    }
    Ok(cols)
}

/// `utt_id<TAB>speaker_id<TAB>wav_path` per line. Utterance ids must be
/// unique.
pub fn read_dataset_manifest(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, DspError> {
    let path = path.as_ref();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (line, text) in read_lines(path)? {
        let c = fields(path, line, &text, 3)?;
        if !seen.insert(c[0].to_string()) {
            return Err(DspError::Manifest {
                path: path.display().to_string(),
                line,
                reason: format!("duplicate utterance id `{}`", c[0]),
            });
        }
        out.push(DatasetRecord {
            utt_id: c[0].to_string(),
            speaker_id: c[1].to_string(),
            wav_path: resolve(path, c[2]),
        });
    }
    Ok(out)
}

/// `noise_id<TAB>category<TAB>split<TAB>wav_path` per line, with split one
/// of `train`, `test-seen`, `test-unseen`.
pub fn read_noise_manifest(path: impl AsRef<Path>) -> Result<Vec<NoiseRecord>, DspError> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (line, text) in read_lines(path)? {
        let c = fields(path, line, &text, 4)?;
        let split = c[2].parse::<NoiseSplit>().map_err(|reason| DspError::Manifest {
            path: path.display().to_string(),
            line,
            reason,
        })?;
        out.push(NoiseRecord {
            noise_id: c[0].to_string(),
            category: c[1].to_string(),
            split,
            wav_path: resolve(path, c[3]),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("train.lst");
        std::fs::write(&m, "# header\nu1\tspk0\twav/u1.wav\nu2\tspk1\t/abs/u2.wav\n\n").unwrap();
        let recs = read_dataset_manifest(&m).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].wav_path, dir.path().join("wav/u1.wav"));
        assert_eq!(recs[1].wav_path, PathBuf::from("/abs/u2.wav"));
        assert_eq!(recs[1].speaker_id, "spk1");
    }

    #[test]
    fn malformed_lines_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("bad.lst");
        std::fs::write(&m, "u1\tspk0\ta.wav\nu2 spk0 b.wav\n").unwrap();
        match read_dataset_manifest(&m) {
            Err(DspError::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&m, "u1\tspk0\ta.wav\nu1\tspk1\tb.wav\n").unwrap();
        assert!(read_dataset_manifest(&m).is_err());
    }

    #[test]
    fn noise_splits_parse() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("noise.lst");
        std::fs::write(
            &m,
            "n1\tpink\ttrain\ta.wav\nn2\tpink\ttest-seen\tb.wav\nn3\twhite\ttest-unseen\tc.wav\n",
        )
        .unwrap();
        let recs = read_noise_manifest(&m).unwrap();
        assert_eq!(
            recs.iter().map(|r| r.split).collect::<Vec<_>>(),
            vec![NoiseSplit::Train, NoiseSplit::TestSeen, NoiseSplit::TestUnseen]
        );
        std::fs::write(&m, "n1\tpink\tdev\ta.wav\n").unwrap();
        assert!(read_noise_manifest(&m).is_err());
    }
}
