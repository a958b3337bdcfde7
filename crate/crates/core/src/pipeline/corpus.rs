use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub subject: i64,
    /// `<subject>/<file name>`.
    pub name: String,
    pub path: PathBuf,
}

/// Samples laid out as `<dir>/<subjectId>/<name>.csv` (or `.raw`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn scan(dir: &Path, format: u8) -> Result<Corpus, PipelineError> {
        let ext = match format {
            1 => "csv",
            2 => "raw",
            other => return Err(PipelineError::Format(format!("unknown sample format {other}"))),
        };
        let err = |e: std::io::Error| PipelineError::Corpus(format!("{}: {e}", dir.display()));
        let mut entries = Vec::new();
        for sub in std::fs::read_dir(dir).map_err(err)? {
            let sub = sub.map_err(err)?;
            if !sub.file_type().map_err(err)?.is_dir() {
                continue;
            }
            let dname = sub.file_name().to_string_lossy().into_owned();
            let subject: i64 = dname
                .parse()
                .map_err(|_| PipelineError::Corpus(format!("directory `{dname}` is not a subject id")))?;
            for f in std::fs::read_dir(sub.path()).map_err(err)? {
                let path = f.map_err(err)?.path();
                if path.extension().is_some_and(|e| e == ext) {
                    let file = path.file_name().unwrap().to_string_lossy().into_owned();
                    entries.push(CorpusEntry { subject, name: format!("{dname}/{file}"), path });
                }
            }
        }
        if entries.is_empty() {
            return Err(PipelineError::Corpus(format!("no .{ext} samples under {}", dir.display())));
        }
        entries.sort_by(|a, b| a.subject.cmp(&b.subject).then_with(|| a.name.cmp(&b.name)));
        Ok(Corpus { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub per_subject: usize,
    /// Amplitude of the uniform noise added to every sample.
    pub noise: f64,
    pub length: usize,
    pub rate: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { seed: 1, per_subject: 3, noise: 0.0, length: 256, rate: 8000 }
    }
}

/// One waveform family per subject 1..=4, phase varied per sample.
fn waveform(subject: i64, phase: f64, t: f64) -> f64 {
    match subject {
        // sine, 8 cycles
        1 => (TAU * (8.0 * t + phase)).sin(),
        // square, 5 cycles
        2 => {
            if (5.0 * t + phase).fract() < 0.5 {
                0.8
            } else {
                -0.8
            }
        }
        // sawtooth, 11 cycles
        3 => 2.0 * (11.0 * t + phase).fract() - 1.0,
        // rectified sine riding on an offset, 6 cycles
        _ => 0.3 + 0.6 * (TAU * (6.0 * t + phase)).sin().abs(),
    }
}

/// Writes a four-subject CSV corpus under `dir`.
pub fn synthesize(dir: &Path, spec: SynthSpec) -> std::io::Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for subject in 1..=4i64 {
        let sub = dir.join(subject.to_string());
        std::fs::create_dir_all(&sub)?;
        for k in 0..spec.per_subject {
            let phase: f64 = rng.random_range(0.0..1.0);
            let mut text = format!("rate={}\n", spec.rate);
            for i in 0..spec.length {
                let t = i as f64 / spec.length as f64;
                let noise = if spec.noise > 0.0 { rng.random_range(-spec.noise..=spec.noise) } else { 0.0 };
                text += &format!("{}\n", waveform(subject, phase, t) + noise);
            }
            std::fs::write(sub.join(format!("s{k:02}.csv")), text)?;
        }
    }
    Corpus::scan(dir, 1).map_err(|e| std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthesized_corpus_layout() {
        let dir = tempfile::tempdir().unwrap();
        let c = synthesize(dir.path(), SynthSpec::default()).unwrap();
        assert_eq!(c.len(), 12);
        assert_eq!(c.entries[0].name, "1/s00.csv");
        assert_eq!(c.entries[11].subject, 4);
        let again = tempfile::tempdir().unwrap();
        synthesize(again.path(), SynthSpec::default()).unwrap();
        let a = std::fs::read(dir.path().join("3/s01.csv")).unwrap();
        assert_eq!(a, std::fs::read(again.path().join("3/s01.csv")).unwrap());
    }

    #[test]
    fn bad_layouts() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Corpus::scan(&dir.path().join("missing"), 1), Err(PipelineError::Corpus(_))));
        assert!(matches!(Corpus::scan(dir.path(), 1), Err(PipelineError::Corpus(_))));
        std::fs::create_dir(dir.path().join("alice")).unwrap();
        assert!(matches!(Corpus::scan(dir.path(), 1), Err(PipelineError::Corpus(_))));
    }
}
