//! Simulated training data with a known bit budget.
//!
//! Gaussian samples `X` are scalar-quantized to the target `X_q`, which is
//! rotated by an orthogonal matrix to form the network input `Y = Q·X_q`.
//! The target is recoverable exactly as `Qᵀ·Y`, so every frame carries
//! `P · log2(levels)` bits.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numerics::{gaussian_matrix, qr_rotation, Matrix, Prng, RotationMatrix};

/// The four-level set used for 2 bits per value.
pub const LEVELS_2BIT: [f64; 4] = [-1.5, -0.5, 0.5, 1.5];

/// Level set for a given bit depth: 2 bits uses unit spacing, 4 bits a
/// centered grid with spacing 0.5 (`-3.75 ..= 3.75`).
pub fn levels_for_bits(bits: u32) -> Result<Vec<f64>> {
    match bits {
        2 => Ok(LEVELS_2BIT.to_vec()),
        4 => Ok((0..16).map(|i| -3.75 + 0.5 * i as f64).collect()),
        other => Err(Error::Config(format!(
            "unsupported bits per value {other}; expected 2 or 4"
        ))),
    }
}

/// Checks that `levels` is non-empty and strictly increasing.
pub fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Contract("level set is empty".into()));
    }
    if levels.iter().any(|l| !l.is_finite()) {
        return Err(Error::Contract(
            "level set contains a non-finite value".into(),
        ));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Contract("levels must be strictly increasing".into()));
    }
    Ok(())
}

/// `log2(|levels|)`, or a contract error when the count is not a power of two.
pub fn bits_per_value(levels: &[f64]) -> Result<u32> {
    let n = levels.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Contract(format!(
            "level count {n} is not a power of two"
        )));
    }
    Ok(n.trailing_zeros())
}

/// Nearest-level lookup for a sorted level set. Exact midpoints go to the
/// higher level.
#[derive(Debug, Clone)]
pub struct LevelTable {
    levels: Vec<f64>,
    thresholds: Vec<f64>,
}

impl LevelTable {
    pub fn new(levels: &[f64]) -> Result<Self> {
        validate_levels(levels)?;
        let thresholds = levels.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Ok(Self {
            levels: levels.to_vec(),
            thresholds,
        })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    #[inline]
    pub fn index_of(&self, x: f64) -> usize {
        self.thresholds.partition_point(|&t| t <= x)
    }

    #[inline]
    pub fn quantize(&self, x: f64) -> f64 {
        self.levels[self.index_of(x)]
    }

    pub fn quantize_matrix(&self, x: &Matrix) -> Matrix {
        x.map(|v| self.quantize(v))
    }
}

/// Maps each entry to its nearest level (ties to the higher level).
pub fn scalar_quantize(x: &Matrix, levels: &[f64]) -> Result<Matrix> {
    Ok(LevelTable::new(levels)?.quantize_matrix(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub p: usize,
    pub n: usize,
    pub levels: Vec<f64>,
    pub seed: u64,
    /// Draw a fresh `X` for every batch.
    pub resample_x: bool,
    /// Draw a fresh rotation for every batch.
    pub resample_q: bool,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            p: 30,
            n: 2000,
            levels: LEVELS_2BIT.to_vec(),
            seed: 0,
            resample_x: true,
            resample_q: false,
        }
    }
}

impl DataSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n == 0 {
            return Err(Error::Config("data dimensions must be positive".into()));
        }
        validate_levels(&self.levels)?;
        bits_per_value(&self.levels)?;
        Ok(())
    }
}

/// `P × log2(|levels|)`.
pub fn bits_per_frame(spec: &DataSpec) -> Result<usize> {
    Ok(spec.p * bits_per_value(&spec.levels)? as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    /// Network input, `P×N`.
    pub y: Matrix,
    /// Quantized target, `P×N`.
    pub x_q: Matrix,
    pub bits_per_frame: usize,
}

/// One batch of the simulation pipeline under rotation `q`.
pub fn make_batch(spec: &DataSpec, q: &RotationMatrix, prng: &mut Prng) -> Result<DataBatch> {
    spec.validate()?;
    if q.dim() != spec.p {
        return Err(Error::Shape {
            op: "make_batch",
            lhs: (spec.p, spec.p),
            rhs: (q.dim(), q.dim()),
        });
    }
    let table = LevelTable::new(&spec.levels)?;
    let x = gaussian_matrix(prng, spec.p, spec.n);
    let x_q = table.quantize_matrix(&x);
    let y = q.rotate(&x_q)?;
    Ok(DataBatch {
        y,
        x_q,
        bits_per_frame: bits_per_frame(spec)?,
    })
}

/// Batch schedule for a training run: owns the rotation and the data stream
/// and honours the resampling flags of the [`DataSpec`].
#[derive(Debug, Clone)]
pub struct DataSource {
    spec: DataSpec,
    rotation: RotationMatrix,
    rotation_prng: Prng,
    data_prng: Prng,
    cached: Option<DataBatch>,
}

impl DataSource {
    pub fn new(spec: DataSpec, mut rotation_prng: Prng, data_prng: Prng) -> Result<Self> {
        spec.validate()?;
        let rotation = qr_rotation(&mut rotation_prng, spec.p)?;
        Ok(Self {
            spec,
            rotation,
            rotation_prng,
            data_prng,
            cached: None,
        })
    }

    /// Fixed rotation supplied by the caller.
    pub fn with_rotation(
        spec: DataSpec,
        rotation: RotationMatrix,
        data_prng: Prng,
    ) -> Result<Self> {
        spec.validate()?;
        let rotation_prng = data_prng.with_stream(u64::MAX);
        Ok(Self {
            spec,
            rotation,
            rotation_prng,
            data_prng,
            cached: None,
        })
    }

    pub fn spec(&self) -> &DataSpec {
        &self.spec
    }

    pub fn rotation(&self) -> &RotationMatrix {
        &self.rotation
    }

    pub fn next_batch(&mut self) -> Result<DataBatch> {
        if self.spec.resample_q {
            self.rotation = qr_rotation(&mut self.rotation_prng, self.spec.p)?;
            self.cached = None;
        }
        if !self.spec.resample_x {
            if let Some(b) = &self.cached {
                return Ok(b.clone());
            }
        }
        let batch = make_batch(&self.spec, &self.rotation, &mut self.data_prng)?;
        if !self.spec.resample_x {
            self.cached = Some(batch.clone());
        }
        Ok(batch)
    }
}

const BATCH_MAGIC: &[u8; 4] = b"QLAB";
const BATCH_VERSION: u32 = 1;

/// Writes `x_q` then `y` as little-endian f64, row-major, after a
/// `QLAB | version | p | n` header.
pub fn write_batch<W: Write>(mut w: W, batch: &DataBatch) -> Result<()> {
    let (p, n) = batch.x_q.shape();
    let p32 = u32::try_from(p).map_err(|_| Error::Contract("p exceeds u32".into()))?;
    let n32 = u32::try_from(n).map_err(|_| Error::Contract("n exceeds u32".into()))?;
    w.write_all(BATCH_MAGIC)?;
    w.write_all(&BATCH_VERSION.to_le_bytes())?;
    w.write_all(&p32.to_le_bytes())?;
    w.write_all(&n32.to_le_bytes())?;
    for v in batch.x_q.as_slice().iter().chain(batch.y.as_slice()) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a batch written by [`write_batch`]. Returns `(x_q, y)`.
pub fn read_batch<R: Read>(mut r: R) -> Result<(Matrix, Matrix)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BATCH_MAGIC {
        return Err(Error::Format("bad batch magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != BATCH_VERSION {
        return Err(Error::Format(format!(
            "unsupported batch version {version}"
        )));
    }
    r.read_exact(&mut word)?;
    let p = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let n = u32::from_le_bytes(word) as usize;
    let read_matrix = |r: &mut R| -> Result<Matrix> {
        let mut data = Vec::with_capacity(p * n);
        let mut buf = [0u8; 8];
        for _ in 0..p * n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        Matrix::from_vec(p, n, data)
    };
    let x_q = read_matrix(&mut r)?;
    let y = read_matrix(&mut r)?;
    Ok((x_q, y))
}
