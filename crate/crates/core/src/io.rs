//! Binary matrix files and the flat `key = value` run configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::init::InitConfig;
use crate::types::{Hyperparameters, RawWeights, Variant};

const MAGIC: &[u8; 4] = b"COFA";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 14;

fn io_error(path: &Path, err: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), message: err.to_string() }
}

/// Serializes a matrix: magic, version, rows, cols (little-endian), then
/// row-major binary64 values.
pub fn encode_matrix(matrix: &Array2<f64>) -> Result<Vec<u8>> {
    let (rows, cols) = matrix.dim();
    let rows32 = u32::try_from(rows).map_err(|_| Error::InvalidParameter(format!("{rows} rows exceed u32")))?;
    let cols32 = u32::try_from(cols).map_err(|_| Error::InvalidParameter(format!("{cols} cols exceed u32")))?;
    let mut bytes = Vec::with_capacity(HEADER_LEN + 8 * rows * cols);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&rows32.to_le_bytes());
    bytes.extend_from_slice(&cols32.to_le_bytes());
    for v in matrix.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(bytes)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        return Err(Error::TruncatedFile { expected: HEADER_LEN, found: bytes.len() });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    let expected = HEADER_LEN + 8 * rows * cols;
    if bytes.len() != expected {
        return Err(Error::TruncatedFile { expected, found: bytes.len() });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    decode_matrix(&bytes)
}

pub fn write_matrix(path: impl AsRef<Path>, matrix: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_matrix(matrix)?).map_err(|e| io_error(path, e))
}

/// Human-readable copy; one matrix row per line.
pub fn write_matrix_csv(path: impl AsRef<Path>, matrix: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for row in matrix.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_error(path, e))
}

/// How the starting point is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Use the scene dictionary `W.cofa`.
    Dictionary,
    /// Build the dictionary from labeled pixels.
    SelfDictionary,
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMode::Dictionary => "dictionary",
            InitMode::SelfDictionary => "self_dictionary",
        })
    }
}

impl std::str::FromStr for InitMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dictionary" => Ok(InitMode::Dictionary),
            "self_dictionary" => Ok(InitMode::SelfDictionary),
            other => Err(format!("unknown init mode `{other}`")),
        }
    }
}

/// Parsed run configuration. Every key is optional; see [`RunConfig::default`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub lambda0_tilde: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_h: f64,
    pub lambda_q_tilde: f64,
    pub lambda_c_tilde: f64,
    pub epsilon_tv: f64,
    pub sigma_beta: f64,
    pub alpha: f64,
    pub stop_tol: f64,
    pub max_iters: usize,
    pub k: usize,
    pub j: usize,
    /// `None` selects the data-driven default.
    pub alpha_group: Option<f64>,
    pub seed: u64,
    pub classes: usize,
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub endmembers: usize,
    pub extra_endmembers: usize,
    pub snr_db: f64,
    pub train_fraction: f64,
    pub init: InitMode,
    pub scene_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Directory relative paths are resolved against; not serialized.
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let raw = RawWeights::default();
        let hyper = Hyperparameters::default();
        Self {
            variant: Variant::Quadratic,
            lambda0_tilde: raw.lambda0_tilde,
            lambda1: raw.lambda1,
            lambda2: raw.lambda2,
            lambda_h: raw.lambda_h,
            lambda_q_tilde: raw.lambda_q_tilde,
            lambda_c_tilde: raw.lambda_c,
            epsilon_tv: hyper.epsilon_tv,
            sigma_beta: hyper.sigma_beta,
            alpha: hyper.alpha,
            stop_tol: hyper.stop_tol,
            max_iters: hyper.max_iters,
            k: 10,
            j: 4,
            alpha_group: None,
            seed: 0,
            classes: 4,
            rows: 50,
            cols: 50,
            bands: 64,
            endmembers: 6,
            extra_endmembers: 9,
            snr_db: 30.0,
            train_fraction: 0.1,
            init: InitMode::Dictionary,
            scene_dir: PathBuf::from("scene"),
            output_dir: PathBuf::from("out"),
            base_dir: PathBuf::new(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config { line, message: format!("bad value `{value}` for {key}: {e}") })
}

impl RunConfig {
    /// Parses config text. Duplicate and unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config { line, message: format!("expected `key = value`, got `{content}`") })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config { line, message: format!("duplicate key `{key}`") });
            }
            config.set(line, key, value)?;
        }
        Ok(config)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        match key {
            "variant" => self.variant = parse_value(line, key, value)?,
            "lambda0_tilde" => self.lambda0_tilde = parse_value(line, key, value)?,
            "lambda1" => self.lambda1 = parse_value(line, key, value)?,
            "lambda2" => self.lambda2 = parse_value(line, key, value)?,
            "lambda_h" => self.lambda_h = parse_value(line, key, value)?,
            "lambda_q_tilde" => self.lambda_q_tilde = parse_value(line, key, value)?,
            "lambda_c_tilde" => self.lambda_c_tilde = parse_value(line, key, value)?,
            "epsilon_tv" => self.epsilon_tv = parse_value(line, key, value)?,
            "sigma_beta" => self.sigma_beta = parse_value(line, key, value)?,
            "alpha" => self.alpha = parse_value(line, key, value)?,
            "stop_tol" => self.stop_tol = parse_value(line, key, value)?,
            "max_iters" => self.max_iters = parse_value(line, key, value)?,
            "K" => self.k = parse_value(line, key, value)?,
            "J" => self.j = parse_value(line, key, value)?,
            "alpha_group" => {
                self.alpha_group = if value == "auto" { None } else { Some(parse_value(line, key, value)?) }
            }
            "seed" => self.seed = parse_value(line, key, value)?,
            "classes" => self.classes = parse_value(line, key, value)?,
            "rows" => self.rows = parse_value(line, key, value)?,
            "cols" => self.cols = parse_value(line, key, value)?,
            "bands" => self.bands = parse_value(line, key, value)?,
            "endmembers" => self.endmembers = parse_value(line, key, value)?,
            "extra_endmembers" => self.extra_endmembers = parse_value(line, key, value)?,
            "snr_db" => self.snr_db = parse_value(line, key, value)?,
            "train_fraction" => self.train_fraction = parse_value(line, key, value)?,
            "init" => self.init = parse_value(line, key, value)?,
            "scene_dir" => self.scene_dir = PathBuf::from(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            other => return Err(Error::Config { line, message: format!("unknown key `{other}`") }),
        }
        Ok(())
    }

    /// Reads a config file; relative paths inside resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let mut config = Self::parse(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn scene_path(&self) -> PathBuf {
        self.base_dir.join(&self.scene_dir)
    }

    pub fn output_path(&self) -> PathBuf {
        self.base_dir.join(&self.output_dir)
    }

    pub fn raw_weights(&self) -> RawWeights {
        RawWeights {
            lambda0_tilde: self.lambda0_tilde,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda_h: self.lambda_h,
            lambda_q_tilde: self.lambda_q_tilde,
            lambda_c: self.lambda_c_tilde,
        }
    }

    /// Solver settings; the weights are filled in by the caller's scaling.
    pub fn base_hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            epsilon_tv: self.epsilon_tv,
            sigma_beta: self.sigma_beta,
            stop_tol: self.stop_tol,
            max_iters: self.max_iters,
            alpha: self.alpha,
            seed: self.seed,
            ..Hyperparameters::default()
        }
    }

    pub fn init_config(&self) -> InitConfig {
        InitConfig { j: self.j, alpha_group: self.alpha_group, seed: self.seed, ..InitConfig::default() }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant = {}", self.variant)?;
        writeln!(f, "lambda0_tilde = {}", self.lambda0_tilde)?;
        writeln!(f, "lambda1 = {}", self.lambda1)?;
        writeln!(f, "lambda2 = {}", self.lambda2)?;
        writeln!(f, "lambda_h = {}", self.lambda_h)?;
        writeln!(f, "lambda_q_tilde = {}", self.lambda_q_tilde)?;
        writeln!(f, "lambda_c_tilde = {}", self.lambda_c_tilde)?;
        writeln!(f, "epsilon_tv = {}", self.epsilon_tv)?;
        writeln!(f, "sigma_beta = {}", self.sigma_beta)?;
        writeln!(f, "alpha = {}", self.alpha)?;
        writeln!(f, "stop_tol = {}", self.stop_tol)?;
        writeln!(f, "max_iters = {}", self.max_iters)?;
        writeln!(f, "K = {}", self.k)?;
        writeln!(f, "J = {}", self.j)?;
        match self.alpha_group {
            Some(a) => writeln!(f, "alpha_group = {a}")?,
            None => writeln!(f, "alpha_group = auto")?,
        }
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "classes = {}", self.classes)?;
        writeln!(f, "rows = {}", self.rows)?;
        writeln!(f, "cols = {}", self.cols)?;
        writeln!(f, "bands = {}", self.bands)?;
        writeln!(f, "endmembers = {}", self.endmembers)?;
        writeln!(f, "extra_endmembers = {}", self.extra_endmembers)?;
        writeln!(f, "snr_db = {}", self.snr_db)?;
        writeln!(f, "train_fraction = {}", self.train_fraction)?;
        writeln!(f, "init = {}", self.init)?;
        writeln!(f, "scene_dir = {}", self.scene_dir.display())?;
        writeln!(f, "output_dir = {}", self.output_dir.display())
    }
}

/// Row-major `rows × cols` map of 1-based class ids with `0` for "none".
pub fn classes_to_map(classes: &[Option<usize>], rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(m, n)| classes[m * cols + n].map_or(0.0, |c| (c + 1) as f64))
}

/// Inverse of [`classes_to_map`]; entries must be whole numbers in `0..=num_classes`.
pub fn map_to_classes(map: &Array2<f64>, num_classes: usize) -> Result<Vec<Option<usize>>> {
    map.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v.fract() != 0.0 || v < 0.0 || v > num_classes as f64 {
                let (m, n) = (i / map.ncols(), i % map.ncols());
                return Err(Error::InvalidParameter(format!("class map entry ({m}, {n}) = {v} is not in 0..={num_classes}")));
            }
            Ok(if v == 0.0 { None } else { Some(v as usize - 1) })
        })
        .collect()
}
