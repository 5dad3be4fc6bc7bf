//! Exit codes, input loading, atomic writes and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use dualte::manifest::RunManifest;
use dualte::model::{Model, ModelCheckpoint};
use dualte::network::{PathSet, PathSetFile, Topology};
use dualte::traffic::TrafficTrace;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

/// Environment variable that redirects relative output paths.
pub const OUT_DIR_VAR: &str = "DUALTE_OUT_DIR";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn infeasible(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INFEASIBLE,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }
}

impl From<dualte::Error> for Failure {
    fn from(e: dualte::Error) -> Self {
        let code = match e {
            dualte::Error::Infeasible(_) => EXIT_INFEASIBLE,
            dualte::Error::Numerical(_) | dualte::Error::Tape(_) => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

/// Parses JSON, naming the offending field, line and column on error.
pub fn parse_json<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> CliResult<T> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        Failure::config(format!("{}: field `{field}`: {}", path.display(), e.into_inner()))
    })?;
    de.end()
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    Ok(value)
}

/// Where a relative output path lands: under `DUALTE_OUT_DIR` when set,
/// else under `base`.
pub fn out_path(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_VAR) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(path),
        _ => base.join(path),
    }
}

/// `<out>.manifest.json` next to a file output, else
/// `<command>.manifest.json` in the output directory.
pub fn manifest_path(out: Option<&Path>, command: &str) -> PathBuf {
    match out {
        Some(p) => {
            let mut name = p.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            p.with_file_name(name)
        }
        None => out_path(Path::new(""), Path::new(&format!("{command}.manifest.json"))),
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let fail = |e: std::io::Error| Failure::config(format!("{}: {e}", path.display()));
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(fail)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Failure::config(format!("{}: not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(fail)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        fail(e)
    })
}

enum Sink {
    File(PathBuf),
    Stdout,
}

/// Collects the outputs of one command and writes them, followed by its
/// manifest, only once the command has succeeded.
pub struct Run {
    manifest: RunManifest,
    manifest_path: PathBuf,
    outputs: Vec<(Sink, Vec<u8>)>,
}

impl Run {
    /// `config` is the effective configuration; it is hashed and echoed.
    pub fn new<C: Serialize>(command: &str, config: &C, manifest_path: PathBuf) -> Self {
        let bytes = serde_json::to_vec(config).expect("config serializes");
        Self {
            manifest: RunManifest::new(command, &bytes),
            manifest_path,
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.manifest.seed(name, seed);
    }

    pub fn read_input(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = read(path)?;
        self.manifest.input(&path.display().to_string(), &bytes);
        Ok(bytes)
    }

    pub fn topology(&mut self, path: &Path) -> CliResult<Topology> {
        let bytes = self.read_input(path)?;
        parse_json(path, &bytes)
    }

    pub fn pathset(&mut self, path: &Path, topology: &Topology) -> CliResult<PathSet> {
        let bytes = self.read_input(path)?;
        let file: PathSetFile = parse_json(path, &bytes)?;
        PathSet::from_file(file, topology).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }

    pub fn trace(&mut self, path: &Path) -> CliResult<TrafficTrace> {
        let bytes = self.read_input(path)?;
        let text = String::from_utf8(bytes).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        TrafficTrace::from_csv(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }

    pub fn model(&mut self, path: &Path) -> CliResult<Model> {
        let bytes = self.read_input(path)?;
        let text = String::from_utf8(bytes).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let checkpoint =
            ModelCheckpoint::from_json(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        Ok(checkpoint.to_model()?)
    }

    /// Queues a file output. Outputs carrying wall-clock measurements get
    /// no digest.
    pub fn output(&mut self, path: PathBuf, bytes: Vec<u8>, reproducible: bool) {
        let shown = self.display_output(&path);
        self.manifest.output(&shown, reproducible.then_some(bytes.as_slice()));
        self.outputs.push((Sink::File(path), bytes));
    }

    /// Queues output for standard output, or for `out` when given.
    pub fn emit(&mut self, out: Option<PathBuf>, bytes: Vec<u8>, reproducible: bool) {
        match out {
            Some(p) => self.output(p, bytes, reproducible),
            None => {
                self.manifest.output("<stdout>", reproducible.then_some(bytes.as_slice()));
                self.outputs.push((Sink::Stdout, bytes));
            }
        }
    }

    /// Output paths are recorded relative to the manifest when they sit
    /// beside it.
    fn display_output(&self, path: &Path) -> String {
        let dir = self.manifest_path.parent().unwrap_or(Path::new(""));
        match path.strip_prefix(dir) {
            Ok(rel) if !dir.as_os_str().is_empty() => rel.display().to_string(),
            _ => path.display().to_string(),
        }
    }

    pub fn finish(self) -> CliResult<()> {
        use std::io::Write;
        for (sink, bytes) in &self.outputs {
            match sink {
                Sink::File(path) => write_atomic(path, bytes)?,
                Sink::Stdout => {
                    let mut out = std::io::stdout().lock();
                    out.write_all(bytes)
                        .and_then(|_| out.flush())
                        .map_err(|e| Failure::config(format!("stdout: {e}")))?;
                }
            }
        }
        write_atomic(&self.manifest_path, self.manifest.to_json().as_bytes())
    }
}
