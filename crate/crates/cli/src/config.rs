//! Run configuration.
//!
//! Settings come from built-in defaults, then an optional TOML file, then
//! `--set key=value` overrides, then dedicated flags. Relative paths in the
//! file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use homc_core::{Alphabet, Format, RatioMode, Schedule};

use crate::failure::Failure;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub snapshots: SnapshotSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub test: TestSection,
    #[serde(default)]
    pub predict: PredictSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    /// `plain`, `csv` or `fasta`.
    pub format: Option<String>,
    pub header: Option<bool>,
    pub alphabet: Option<Vec<String>>,
    pub max_order: Option<usize>,
    /// Trailing points withheld from fitting and used for prediction.
    pub holdout: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Shared(f64),
    PerLag(Vec<f64>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub alpha: Option<f64>,
    pub alpha0: Option<f64>,
    pub gamma: Option<GammaSpec>,
    pub phi: Option<f64>,
    pub truncation: Option<usize>,
    pub stirling: Option<bool>,
    pub init_iters: Option<usize>,
    pub audit: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub n_iter: Option<usize>,
    pub n_burn: Option<usize>,
    pub thin: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotSection {
    /// File of extra contexts whose transition vectors are recorded.
    pub contexts: Option<PathBuf>,
    pub full_tensor: Option<bool>,
    pub tensor_cap: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub batch_len: Option<usize>,
    pub quantiles: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSection {
    pub hypotheses: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    pub contexts: Option<PathBuf>,
    pub horizon: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub case: Option<String>,
    pub train: Option<usize>,
    pub test: Option<usize>,
    pub reps: Option<usize>,
    pub smoothing: Option<f64>,
}

/// Global flags shared by every subcommand.
#[derive(Debug, Default, Clone)]
pub struct GlobalFlags {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub stirling: bool,
    pub schedule: Option<Schedule>,
    pub set: Vec<String>,
}

/// File settings merged with the global flags.
#[derive(Debug)]
pub struct Settings {
    pub file: FileConfig,
    base_dir: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub mode: RatioMode,
    schedule_flag: Option<Schedule>,
}

pub const DEFAULT_OUT: &str = "homc-out";
pub const DEFAULT_BATCH_LEN: usize = 50;
pub const DEFAULT_QUANTILES: [f64; 3] = [0.025, 0.5, 0.975];

impl Settings {
    pub fn load(flags: &GlobalFlags) -> Result<Self, Failure> {
        let (mut table, base_dir) = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Failure::io(format!("cannot read config {}: {e}", path.display()))
                })?;
                let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
                    Failure::validation(format!("config {}: {}", path.display(), e.message()))
                })?;
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (table, dir)
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for assignment in &flags.set {
            apply_override(&mut table, assignment)?;
        }
        let file: FileConfig =
            toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| {
                    Failure::validation(format!("config: {}", e.message()))
                })?;
        let threads = flags.threads.or(file.threads);
        if threads == Some(0) {
            return Err(Failure::validation("threads must be at least 1"));
        }
        let out = match (&flags.out, &file.out) {
            (Some(p), _) => p.clone(),
            (None, Some(p)) => base_dir.join(p),
            (None, None) => PathBuf::from(DEFAULT_OUT),
        };
        let mode = if flags.stirling || file.model.stirling == Some(true) {
            RatioMode::Stirling
        } else {
            RatioMode::Exact
        };
        Ok(Self {
            seed: flags.seed.or(file.seed).unwrap_or(0),
            out,
            threads,
            mode,
            schedule_flag: flags.schedule,
            file,
            base_dir,
        })
    }

    /// A path taken from the config file.
    pub fn file_path(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// Schedule from the flag, else the file fields laid over `default`.
    pub fn schedule(&self, default: Schedule) -> Result<Schedule, Failure> {
        let s = self.schedule_flag.unwrap_or_else(|| {
            let f = &self.file.schedule;
            Schedule::new(
                f.n_iter.unwrap_or(default.n_iter),
                f.n_burn.unwrap_or(default.n_burn),
                f.thin.unwrap_or(default.thin),
            )
        });
        s.validate().map_err(Failure::from)?;
        Ok(s)
    }

    pub fn init_iters(&self) -> usize {
        self.file.model.init_iters.unwrap_or(100)
    }

    pub fn batch_len(&self, flag: Option<usize>) -> Result<usize, Failure> {
        let b = flag
            .or(self.file.diagnostics.batch_len)
            .unwrap_or(DEFAULT_BATCH_LEN);
        if b == 0 {
            return Err(Failure::validation("batch_len must be at least 1"));
        }
        Ok(b)
    }

    pub fn quantiles(&self) -> Result<Vec<f64>, Failure> {
        let q = self
            .file
            .diagnostics
            .quantiles
            .clone()
            .unwrap_or_else(|| DEFAULT_QUANTILES.to_vec());
        if q.is_empty() || q.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Failure::validation("quantiles must lie in [0, 1]"));
        }
        Ok(q)
    }

    pub fn data_format(&self) -> Result<Format, Failure> {
        let d = &self.file.data;
        match d.format.as_deref().unwrap_or("plain") {
            "plain" => Ok(Format::Plain),
            "csv" => Ok(Format::Csv {
                header: d.header.unwrap_or(false),
            }),
            "fasta" => Ok(Format::Fasta),
            other => Err(Failure::validation(format!(
                "unknown data format '{other}'; use plain, csv or fasta"
            ))),
        }
    }

    pub fn alphabet(&self) -> Result<Option<Alphabet>, Failure> {
        self.file
            .data
            .alphabet
            .as_ref()
            .map(|s| Alphabet::new(s.iter().cloned()).map_err(Failure::from))
            .transpose()
    }
}

/// Parse `--schedule n_iter,n_burn,thin`.
pub fn parse_schedule(text: &str) -> Result<Schedule, String> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [a, b, c] = parts[..] else {
        return Err("expected n_iter,n_burn,thin".into());
    };
    let num = |s: &str| s.parse::<usize>().map_err(|e| format!("'{s}': {e}"));
    let s = Schedule::new(num(a)?, num(b)?, num(c)?);
    s.validate().map_err(|e| e.to_string())?;
    Ok(s)
}

/// Apply one `a.b.c=value` assignment. Values are read as TOML and fall
/// back to a plain string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), Failure> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        Failure::validation(format!("--set expects key=value, got '{assignment}'"))
    })?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Failure::validation(format!("invalid key '{key}'")));
    }
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Failure::validation(format!("'{part}' in '{key}' is not a table")))?;
    }
    node.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags_with(set: &[&str]) -> GlobalFlags {
        GlobalFlags {
            set: set.iter().map(|s| s.to_string()).collect(),
            ..GlobalFlags::default()
        }
    }

    #[test]
    fn schedule_flag_parses() {
        assert_eq!(
            parse_schedule("100, 20,5").unwrap(),
            Schedule::new(100, 20, 5)
        );
        assert!(parse_schedule("100,20").is_err());
        assert!(parse_schedule("10,20,1").is_err());
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let s = Settings::load(&flags_with(&[
            "model.alpha=0.25",
            "data.path=seq.txt",
            "seed=9",
        ]))
        .unwrap();
        assert_eq!(s.file.model.alpha, Some(0.25));
        assert_eq!(s.file.data.path, Some(PathBuf::from("seq.txt")));
        assert_eq!(s.seed, 9);
    }

    #[test]
    fn flags_beat_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "seed = 3\nout = \"res\"\n[schedule]\nn_iter = 50\n").unwrap();
        let mut flags = GlobalFlags {
            config: Some(cfg.clone()),
            ..GlobalFlags::default()
        };
        let s = Settings::load(&flags).unwrap();
        assert_eq!(s.seed, 3);
        assert_eq!(s.out, dir.path().join("res"));
        assert_eq!(
            s.schedule(Schedule::new(10, 2, 1)).unwrap(),
            Schedule::new(50, 2, 1)
        );
        flags.seed = Some(4);
        flags.schedule = Some(Schedule::new(7, 1, 1));
        let s = Settings::load(&flags).unwrap();
        assert_eq!(s.seed, 4);
        assert_eq!(
            s.schedule(Schedule::desk()).unwrap(),
            Schedule::new(7, 1, 1)
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = Settings::load(&flags_with(&["model.alpah=1"])).unwrap_err();
        assert_eq!(err.code(), 2);
    }

    #[test]
    fn shared_and_per_lag_gamma() {
        let s = Settings::load(&flags_with(&["model.gamma=0.5"])).unwrap();
        assert!(matches!(s.file.model.gamma, Some(GammaSpec::Shared(g)) if g == 0.5));
        let s = Settings::load(&flags_with(&["model.gamma=[0.5, 0.25]"])).unwrap();
        assert!(matches!(s.file.model.gamma, Some(GammaSpec::PerLag(ref g)) if g.len() == 2));
    }
}
