//! The `.ost` tensor container format, block serialization on top of it,
//! and the synthetic calibration generator.
//!
//! Container layout, bit-exact:
//! 1. 8-byte magic `OSPTENS1`;
//! 2. a little-endian u32 byte length followed by that many bytes of UTF-8
//!    header text: `name=<name> rows=<rows> cols=<cols> dtype=<f32|f64>`
//!    (single space separators, name free of whitespace);
//! 3. the payload: rows x cols IEEE-754 values, row-major, little-endian,
//!    at the header's dtype. Writing f64 data as f32 rounds each value to
//!    nearest-even exactly once.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::blocks::{BlockBody, BlockGraph, LayerNormParams};
use crate::error::{ContainerError, Error, Result};
use crate::rng::Rng;
use crate::tensor::Matrix;
use crate::transform::LinearLayer;

pub const MAGIC: [u8; 8] = *b"OSPTENS1";

/// Payload element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, source: ContainerError) -> Error {
    Error::Container {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `m` to `path` under `name` at the given dtype.
pub fn write_container(path: &Path, name: &str, m: &Matrix, dtype: Dtype) -> Result<()> {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(Error::Parameter(format!(
            "tensor name must be nonempty without whitespace, got {name:?}"
        )));
    }
    let header = format!(
        "name={name} rows={} cols={} dtype={}",
        m.rows(),
        m.cols(),
        dtype.name()
    );
    let mut bytes = Vec::with_capacity(8 + 4 + header.len() + m.data().len() * dtype.width());
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    match dtype {
        Dtype::F32 => {
            for &v in m.data() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in m.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn parse_header(text: &str) -> std::result::Result<(String, usize, usize, Dtype), ContainerError> {
    let mut name = None;
    let mut rows = None;
    let mut cols = None;
    let mut dtype = None;
    for field in text.split(' ') {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| ContainerError::Header(format!("field {field:?} missing '='")))?;
        match key {
            "name" => name = Some(value.to_string()),
            "rows" => {
                rows = Some(value.parse::<usize>().map_err(|_| {
                    ContainerError::Header(format!("rows is not a count: {value:?}"))
                })?)
            }
            "cols" => {
                cols = Some(value.parse::<usize>().map_err(|_| {
                    ContainerError::Header(format!("cols is not a count: {value:?}"))
                })?)
            }
            "dtype" => {
                dtype = Some(match value {
                    "f32" => Dtype::F32,
                    "f64" => Dtype::F64,
                    other => {
                        return Err(ContainerError::Header(format!("unknown dtype {other:?}")))
                    }
                })
            }
            other => return Err(ContainerError::Header(format!("unknown key {other:?}"))),
        }
    }
    match (name, rows, cols, dtype) {
        (Some(n), Some(r), Some(c), Some(d)) => Ok((n, r, c, d)),
        _ => Err(ContainerError::Header(
            "header must carry name, rows, cols, dtype".into(),
        )),
    }
}

/// Reads a container, returning the stored name and matrix.
pub fn read_container_entry(path: &Path) -> Result<(String, Matrix)> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;

    if bytes.len() < 8 || bytes[..8] != MAGIC {
        return Err(parse_err(
            path,
            ContainerError::BadMagic {
                expected: MAGIC,
                found: bytes[..bytes.len().min(8)].to_vec(),
            },
        ));
    }
    if bytes.len() < 12 {
        return Err(parse_err(
            path,
            ContainerError::TruncatedHeader {
                expected: 12,
                actual: bytes.len() as u64,
            },
        ));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12 + header_len;
    if bytes.len() < header_end {
        return Err(parse_err(
            path,
            ContainerError::TruncatedHeader {
                expected: header_end as u64,
                actual: bytes.len() as u64,
            },
        ));
    }
    let header_text = std::str::from_utf8(&bytes[12..header_end])
        .map_err(|_| parse_err(path, ContainerError::Header("header is not UTF-8".into())))?;
    let (name, rows, cols, dtype) = parse_header(header_text).map_err(|e| parse_err(path, e))?;

    let expected_payload = rows * cols * dtype.width();
    let expected_total = (header_end + expected_payload) as u64;
    let actual_total = bytes.len() as u64;
    if actual_total < expected_total {
        return Err(parse_err(
            path,
            ContainerError::TruncatedPayload {
                expected: expected_payload as u64,
                actual: actual_total - header_end as u64,
            },
        ));
    }
    if actual_total > expected_total {
        return Err(parse_err(
            path,
            ContainerError::TrailingData {
                expected: expected_total,
                actual: actual_total,
            },
        ));
    }

    let payload = &bytes[header_end..];
    let mut data = Vec::with_capacity(rows * cols);
    match dtype {
        Dtype::F32 => {
            for chunk in payload.chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
        }
        Dtype::F64 => {
            for chunk in payload.chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(parse_err(
            path,
            ContainerError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            },
        ));
    }
    Ok((name, Matrix::from_vec(rows, cols, data)?))
}

/// Reads a container, discarding the stored name.
pub fn read_container(path: &Path) -> Result<Matrix> {
    read_container_entry(path).map(|(_, m)| m)
}

// ---------------------------------------------------------------------------
// Block serialization: a directory of .ost tensors plus a block.cfg manifest.

fn vec_as_row(v: &[f64]) -> Matrix {
    Matrix::from_raw(1, v.len(), v.to_vec())
}

fn write_tensor(dir: &Path, file: &str, name: &str, m: &Matrix) -> Result<()> {
    write_container(&dir.join(file), name, m, Dtype::F64)
}

fn write_vec(dir: &Path, file: &str, name: &str, v: &[f64]) -> Result<()> {
    write_tensor(dir, file, name, &vec_as_row(v))
}

/// Saves a block as a directory: `block.cfg` (key=value lines) plus one
/// `.ost` file per parameter tensor.
pub fn save_block(dir: &Path, block: &BlockGraph) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut cfg = format!("kind={}\n", block.kind());
    cfg.push_str(&format!("eps={:e}\n", block.ln.eps));
    cfg.push_str(&format!("residual={}\n", block.residual));
    write_vec(dir, "ln_gamma.ost", "ln_gamma", &block.ln.gamma)?;
    write_vec(dir, "ln_beta.ost", "ln_beta", &block.ln.beta)?;
    match &block.body {
        BlockBody::Mha {
            q,
            k,
            v,
            out,
            head_dim,
            causal,
        } => {
            cfg.push_str(&format!("head_dim={head_dim}\ncausal={causal}\n"));
            for (tag, layer) in [("q", q), ("k", k), ("v", v), ("out", out)] {
                write_tensor(
                    dir,
                    &format!("w_{tag}.ost"),
                    &format!("w_{tag}"),
                    &layer.weight,
                )?;
                write_vec(
                    dir,
                    &format!("b_{tag}.ost"),
                    &format!("b_{tag}"),
                    &layer.bias,
                )?;
            }
        }
        BlockBody::Ffn { up, down } => {
            for (tag, layer) in [("up", up), ("down", down)] {
                write_tensor(
                    dir,
                    &format!("w_{tag}.ost"),
                    &format!("w_{tag}"),
                    &layer.weight,
                )?;
                write_vec(
                    dir,
                    &format!("b_{tag}.ost"),
                    &format!("b_{tag}"),
                    &layer.bias,
                )?;
            }
        }
        BlockBody::LinearChain { layers } => {
            cfg.push_str(&format!("chain_len={}\n", layers.len()));
            for (i, layer) in layers.iter().enumerate() {
                write_tensor(dir, &format!("w_{i}.ost"), &format!("w_{i}"), &layer.weight)?;
                write_vec(dir, &format!("b_{i}.ost"), &format!("b_{i}"), &layer.bias)?;
            }
        }
    }
    if let Some(fix) = &block.residual_fix {
        write_vec(dir, "residual_scale.ost", "residual_scale", &fix.scale)?;
        write_vec(dir, "residual_shift.ost", "residual_shift", &fix.shift)?;
    }
    fs::write(dir.join("block.cfg"), cfg).map_err(|e| io_err(dir, e))
}

fn read_vec(dir: &Path, file: &str) -> Result<Vec<f64>> {
    Ok(read_container(&dir.join(file))?.data().to_vec())
}

fn read_layer(dir: &Path, w: &str, b: &str) -> Result<LinearLayer> {
    LinearLayer::new(read_container(&dir.join(w))?, read_vec(dir, b)?)
}

/// Loads a block saved by [`save_block`].
pub fn load_block(dir: &Path) -> Result<BlockGraph> {
    let cfg_path = dir.join("block.cfg");
    let text = fs::read_to_string(&cfg_path).map_err(|e| io_err(&cfg_path, e))?;
    let mut kv = std::collections::BTreeMap::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("block.cfg line missing '=': {line:?}")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let kind = kv
        .get("kind")
        .ok_or_else(|| Error::Config("block.cfg missing kind".into()))?
        .clone();
    let eps: f64 = kv
        .get("eps")
        .map(|v| v.parse())
        .transpose()
        .map_err(|_| Error::Config("block.cfg eps is not a number".into()))?
        .unwrap_or(1e-5);
    let ln = LayerNormParams {
        gamma: read_vec(dir, "ln_gamma.ost")?,
        beta: read_vec(dir, "ln_beta.ost")?,
        eps,
    };
    let fix_scale = dir.join("residual_scale.ost");
    let residual_fix = if fix_scale.exists() {
        Some(crate::blocks::ResidualFix {
            scale: read_vec(dir, "residual_scale.ost")?,
            shift: read_vec(dir, "residual_shift.ost")?,
        })
    } else {
        None
    };
    let mut block = match kind.as_str() {
        "pre_ln_mha" => {
            let head_dim: usize = kv
                .get("head_dim")
                .ok_or_else(|| Error::Config("mha block.cfg missing head_dim".into()))?
                .parse()
                .map_err(|_| Error::Config("head_dim is not a count".into()))?;
            let causal = kv.get("causal").map(|v| v == "true").unwrap_or(false);
            BlockGraph::pre_ln_mha(
                ln,
                read_layer(dir, "w_q.ost", "b_q.ost")?,
                read_layer(dir, "w_k.ost", "b_k.ost")?,
                read_layer(dir, "w_v.ost", "b_v.ost")?,
                read_layer(dir, "w_out.ost", "b_out.ost")?,
                head_dim,
                causal,
            )?
        }
        "post_ln_ffn" => BlockGraph::post_ln_ffn(
            ln,
            read_layer(dir, "w_up.ost", "b_up.ost")?,
            read_layer(dir, "w_down.ost", "b_down.ost")?,
        )?,
        "linear_chain" => {
            let n: usize = kv
                .get("chain_len")
                .ok_or_else(|| Error::Config("chain block.cfg missing chain_len".into()))?
                .parse()
                .map_err(|_| Error::Config("chain_len is not a count".into()))?;
            let layers = (0..n)
                .map(|i| read_layer(dir, &format!("w_{i}.ost"), &format!("b_{i}.ost")))
                .collect::<Result<Vec<_>>>()?;
            BlockGraph::linear_chain(ln, layers)?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown block kind {other:?} (expected pre_ln_mha, post_ln_ffn, linear_chain)"
            )))
        }
    };
    block.residual_fix = residual_fix;
    Ok(block)
}

// ---------------------------------------------------------------------------
// Synthetic calibration data.

/// Recipe for a calibration tensor with planted outlier channels: most
/// channels draw from N(0, base_sigma²); each outlier channel draws
/// uniformly from [center - half_range, center + half_range] with centers
/// cycling through `outlier_centers`. Outlier channel indices are picked
/// from the seeded stream, then values are filled row-major, one draw per
/// element.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub cols: usize,
    pub n_outlier_channels: usize,
    pub outlier_centers: Vec<f64>,
    pub outlier_half_range: f64,
    pub base_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The canonical asymmetric-outlier profile: two channels spanning
    /// roughly (-97, -58) and (4.5, 43.5), so the whole tensor covers about
    /// (-97, 43) while every other channel stays near zero.
    pub fn asymmetric_outliers(rows: usize, cols: usize, seed: u64) -> Self {
        SyntheticSpec {
            rows,
            cols,
            n_outlier_channels: 2,
            outlier_centers: vec![-77.5, 24.0],
            outlier_half_range: 19.5,
            base_sigma: 0.25,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_outlier_channels > self.cols {
            return Err(Error::Parameter(format!(
                "{} outlier channels cannot fit in {} columns",
                self.n_outlier_channels, self.cols
            )));
        }
        if self.n_outlier_channels > 0 && self.outlier_centers.is_empty() {
            return Err(Error::Parameter(
                "outlier channels requested but no centers given".into(),
            ));
        }
        if self.outlier_half_range.is_nan() || self.outlier_half_range <= 0.0 {
            return Err(Error::Parameter(format!(
                "outlier_half_range must be positive, got {}",
                self.outlier_half_range
            )));
        }
        if self.base_sigma < 0.0 {
            return Err(Error::Parameter("base_sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Generates the calibration tensor described by `spec`, deterministically
/// for a fixed seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Matrix> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let outlier_cols = rng.distinct_indices(spec.cols.max(1), spec.n_outlier_channels);
    let mut center_of = vec![None; spec.cols];
    for (i, &c) in outlier_cols.iter().enumerate() {
        center_of[c] = Some(spec.outlier_centers[i % spec.outlier_centers.len()]);
    }
    Ok(Matrix::from_fn(
        spec.rows,
        spec.cols,
        |_, c| match center_of[c] {
            Some(center) => rng.uniform_in(
                center - spec.outlier_half_range,
                center + spec.outlier_half_range,
            ),
            None => rng.normal_scaled(0.0, spec.base_sigma),
        },
    ))
}

/// Outlier channel indices the generator picked for `spec`, ascending.
pub fn synthetic_outlier_channels(spec: &SyntheticSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    Ok(rng.distinct_indices(spec.cols.max(1), spec.n_outlier_channels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::channel_stats;
    use crate::transform::{apply_transform, compute_shift, TransformVectors};

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn f64_round_trip_is_bit_identical() {
        let dir = tmpdir();
        let path = dir.path().join("t.ost");
        let mut rng = Rng::new(401);
        let m = Matrix::from_fn(7, 13, |_, _| rng.uniform_in(-5.0, 5.0));
        write_container(&path, "acts", &m, Dtype::F64).unwrap();
        let (name, back) = read_container_entry(&path).unwrap();
        assert_eq!(name, "acts");
        assert_eq!(back.rows(), 7);
        assert_eq!(back.cols(), 13);
        for (a, b) in m.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn f32_round_trip_rounds_once() {
        let dir = tmpdir();
        let path = dir.path().join("t.ost");
        let m = Matrix::from_vec(1, 1, vec![0.1]).unwrap();
        write_container(&path, "v", &m, Dtype::F32).unwrap();
        let back = read_container(&path).unwrap();
        assert_eq!(back.get(0, 0), 0.1f32 as f64);
        assert_ne!(back.get(0, 0), 0.1f64);
    }

    #[test]
    fn corruption_cases_are_distinct() {
        let dir = tmpdir();
        let path = dir.path().join("t.ost");
        let m = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        write_container(&path, "x", &m, Dtype::F64).unwrap();
        let bytes = fs::read(&path).unwrap();

        // bad magic
        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        match read_container(&path).unwrap_err() {
            Error::Container {
                source: ContainerError::BadMagic { .. },
                ..
            } => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }

        // truncated payload, names expected vs actual
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        match read_container(&path).unwrap_err() {
            Error::Container {
                source: ContainerError::TruncatedPayload { expected, actual },
                ..
            } => {
                assert_eq!(expected, 32);
                assert_eq!(actual, 31);
            }
            other => panic!("expected TruncatedPayload, got {other:?}"),
        }

        // trailing bytes
        let mut long = bytes.clone();
        long.push(0);
        fs::write(&path, &long).unwrap();
        match read_container(&path).unwrap_err() {
            Error::Container {
                source: ContainerError::TrailingData { .. },
                ..
            } => {}
            other => panic!("expected TrailingData, got {other:?}"),
        }

        // header shape mismatch: claim 3x2 over a 2x2 payload
        let header = b"name=x rows=3 cols=2 dtype=f64";
        let mut mismatch = Vec::new();
        mismatch.extend_from_slice(&MAGIC);
        mismatch.extend_from_slice(&(header.len() as u32).to_le_bytes());
        mismatch.extend_from_slice(header);
        mismatch.extend_from_slice(&bytes[12 + 30..]);
        fs::write(&path, &mismatch).unwrap();
        match read_container(&path).unwrap_err() {
            Error::Container {
                source: ContainerError::TruncatedPayload { .. },
                ..
            } => {}
            other => panic!("expected TruncatedPayload for shape mismatch, got {other:?}"),
        }

        // unparseable header
        let header = b"rows=2 cols=2 dtype=f64";
        let mut noname = Vec::new();
        noname.extend_from_slice(&MAGIC);
        noname.extend_from_slice(&(header.len() as u32).to_le_bytes());
        noname.extend_from_slice(header);
        noname.extend_from_slice(&bytes[12 + 30..]);
        fs::write(&path, &noname).unwrap();
        match read_container(&path).unwrap_err() {
            Error::Container {
                source: ContainerError::Header(_),
                ..
            } => {}
            other => panic!("expected Header, got {other:?}"),
        }
    }

    #[test]
    fn nonfinite_payload_rejected() {
        let dir = tmpdir();
        let path = dir.path().join("t.ost");
        let header = b"name=x rows=1 cols=1 dtype=f64";
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&f64::NAN.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        match read_container(&path).unwrap_err() {
            Error::Container {
                source: ContainerError::NonFinite { row: 0, col: 0 },
                ..
            } => {}
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = SyntheticSpec::asymmetric_outliers(32, 64, 20240001);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generator_hits_the_target_profile() {
        let spec = SyntheticSpec::asymmetric_outliers(256, 64, 20240001);
        let x = generate_synthetic(&spec).unwrap();
        let (lo, hi) = x.value_range().unwrap();
        assert!((lo + 97.0).abs() <= 2.0, "min {lo}");
        assert!((hi - 43.0).abs() <= 2.0, "max {hi}");
    }

    #[test]
    fn benign_generator_range_stays_tight() {
        let spec = SyntheticSpec {
            rows: 1024,
            cols: 16,
            n_outlier_channels: 0,
            outlier_centers: vec![],
            outlier_half_range: 1.0,
            base_sigma: 0.5,
            seed: 7,
        };
        let x = generate_synthetic(&spec).unwrap();
        for (lo, hi) in channel_stats(&x).unwrap() {
            assert!(hi - lo < 8.0 * spec.base_sigma, "range {}", hi - lo);
        }
    }

    #[test]
    fn shifted_tensor_range_equals_max_channel_range() {
        let spec = SyntheticSpec::asymmetric_outliers(32, 64, 99);
        let x = generate_synthetic(&spec).unwrap();
        let z = compute_shift(&x).unwrap();
        let tv = TransformVectors::new(z, vec![1.0; 64], 1.0).unwrap();
        let shifted = apply_transform(&x, &tv).unwrap();
        let (lo, hi) = shifted.value_range().unwrap();
        let max_channel_range = channel_stats(&x)
            .unwrap()
            .iter()
            .map(|(l, h)| h - l)
            .fold(0.0f64, f64::max);
        assert!(((hi - lo) - max_channel_range).abs() <= 1e-12);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SyntheticSpec::asymmetric_outliers(4, 4, 1);
        spec.n_outlier_channels = 5;
        assert!(matches!(
            generate_synthetic(&spec),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn block_round_trip() {
        let mut rng = Rng::new(402);
        let layer = |o: usize, i: usize, rng: &mut Rng| {
            LinearLayer::new(
                Matrix::from_fn(o, i, |_, _| rng.normal_scaled(0.0, 0.1)),
                (0..o).map(|_| rng.uniform_in(-0.1, 0.1)).collect(),
            )
            .unwrap()
        };
        let mha = BlockGraph::pre_ln_mha(
            LayerNormParams::unit(8),
            layer(8, 8, &mut rng),
            layer(8, 8, &mut rng),
            layer(8, 8, &mut rng),
            layer(8, 8, &mut rng),
            2,
            true,
        )
        .unwrap();
        let dir = tmpdir();
        save_block(dir.path(), &mha).unwrap();
        let back = load_block(dir.path()).unwrap();
        assert_eq!(back, mha);

        let ffn = BlockGraph::post_ln_ffn(
            LayerNormParams::unit(4),
            layer(16, 4, &mut rng),
            layer(4, 16, &mut rng),
        )
        .unwrap();
        let fused = crate::blocks::fuse_block(
            &ffn,
            &TransformVectors::new(vec![1.0; 4], vec![2.0; 4], 3.0).unwrap(),
        )
        .unwrap();
        let dir2 = tmpdir();
        save_block(dir2.path(), &fused).unwrap();
        let back = load_block(dir2.path()).unwrap();
        assert_eq!(back, fused);
        assert_eq!(back.residual_op_count(), 1);
    }
}
