//! Surrogate encoder/decoder built from fully connected layers.
//!
//! Both halves have three layers of equal width. A layer computes
//! `h' = act(W·h + b)` and adds `h` back when it carries a skip connection.
//! Skips are present everywhere except the last encoder layer and the first
//! and last decoder layer. The encoder output is linear; every other layer
//! has a learnable PReLU (optional on the decoder output).

use std::io::{Read, Write};

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Prng, Stream};

pub const DEFAULT_WIDTH: usize = 30;
pub const INITIAL_SLOPE: f64 = 0.25;

/// Architecture switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelOptions {
    pub width: usize,
    /// Whether the decoder output layer carries a PReLU.
    pub decoder_output_prelu: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            decoder_output_prelu: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Matrix,
    /// Column vector, `width×1`.
    pub bias: Matrix,
    pub prelu_slope: Option<Matrix>,
    pub skip: bool,
}

impl LayerParams {
    fn init(width: usize, activated: bool, skip: bool, prng: &mut Prng) -> Self {
        let a = (1.0 / width as f64).sqrt();
        Self {
            weight: Matrix::from_fn(width, width, |_, _| prng.uniform(-a, a)),
            bias: Matrix::zeros(width, 1),
            prelu_slope: activated.then(|| Matrix::scalar(INITIAL_SLOPE)),
            skip,
        }
    }

    fn zeroed(&self) -> Self {
        Self {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: Matrix::zeros(self.bias.rows(), 1),
            prelu_slope: self.prelu_slope.clone(),
            skip: self.skip,
        }
    }

    fn params(&self) -> impl Iterator<Item = &Matrix> {
        [&self.weight, &self.bias]
            .into_iter()
            .chain(self.prelu_slope.as_ref())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        [&mut self.weight, &mut self.bias]
            .into_iter()
            .chain(self.prelu_slope.as_mut())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel {
    pub encoder: [LayerParams; 3],
    pub decoder: [LayerParams; 3],
    pub init_seed: u64,
    options: ModelOptions,
}

/// Parameters registered as leaves on one graph.
#[derive(Debug, Clone)]
pub struct BoundModel {
    encoder: Vec<BoundLayer>,
    decoder: Vec<BoundLayer>,
    params: Vec<Tensor>,
}

#[derive(Debug, Clone, Copy)]
struct BoundLayer {
    weight: Tensor,
    bias: Tensor,
    slope: Option<Tensor>,
    skip: bool,
}

impl BoundModel {
    /// Leaf handles in checkpoint traversal order.
    pub fn params(&self) -> &[Tensor] {
        &self.params
    }
}

impl CodecModel {
    /// Uniform fan-in initialization `U(-√(1/w), √(1/w))`, zero biases and
    /// PReLU slopes of 0.25. Deterministic per seed.
    pub fn init(seed: u64, options: ModelOptions) -> Self {
        let mut prng = Prng::for_stream(seed, Stream::Init);
        let w = options.width;
        let encoder = [
            LayerParams::init(w, true, true, &mut prng),
            LayerParams::init(w, true, true, &mut prng),
            LayerParams::init(w, false, false, &mut prng),
        ];
        let decoder = [
            LayerParams::init(w, true, false, &mut prng),
            LayerParams::init(w, true, true, &mut prng),
            LayerParams::init(w, options.decoder_output_prelu, false, &mut prng),
        ];
        Self {
            encoder,
            decoder,
            init_seed: seed,
            options,
        }
    }

    /// Same architecture with all weights and biases set to zero.
    pub fn zeroed(&self) -> Self {
        Self {
            encoder: self.encoder.clone().map(|l| l.zeroed()),
            decoder: self.decoder.clone().map(|l| l.zeroed()),
            init_seed: self.init_seed,
            options: self.options,
        }
    }

    pub fn options(&self) -> ModelOptions {
        self.options
    }

    pub fn width(&self) -> usize {
        self.options.width
    }

    pub fn params(&self) -> impl Iterator<Item = &Matrix> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(LayerParams::params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(LayerParams::params_mut)
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Matrix::len).sum()
    }

    /// Registers every parameter as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        let mut params = Vec::new();
        let mut bind_layer = |l: &LayerParams| {
            let weight = g.leaf(l.weight.clone());
            let bias = g.leaf(l.bias.clone());
            params.extend([weight, bias]);
            let slope = l.prelu_slope.as_ref().map(|s| {
                let t = g.leaf(s.clone());
                params.push(t);
                t
            });
            BoundLayer {
                weight,
                bias,
                slope,
                skip: l.skip,
            }
        };
        let encoder = self.encoder.iter().map(&mut bind_layer).collect();
        let decoder = self.decoder.iter().map(&mut bind_layer).collect();
        BoundModel {
            encoder,
            decoder,
            params,
        }
    }

    fn check_input(&self, g: &Graph, x: Tensor) -> Result<()> {
        if x.shape().0 != self.width() {
            return Err(Error::Shape {
                op: "codec input",
                lhs: (self.width(), x.shape().1),
                rhs: x.shape(),
            });
        }
        debug_assert!(x.id() < g.len());
        Ok(())
    }

    pub fn encode(&self, g: &mut Graph, bound: &BoundModel, y: Tensor) -> Result<Tensor> {
        self.check_input(g, y)?;
        run_stack(g, &bound.encoder, y)
    }

    pub fn decode(&self, g: &mut Graph, bound: &BoundModel, d_in: Tensor) -> Result<Tensor> {
        self.check_input(g, d_in)?;
        run_stack(g, &bound.decoder, d_in)
    }

    /// Forward pass on plain values, no graph retained.
    pub fn encode_values(&self, y: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let y = g.constant(y.clone());
        let e = self.encode(&mut g, &bound, y)?;
        Ok(g.value(e).clone())
    }

    pub fn decode_values(&self, d_in: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let d = g.constant(d_in.clone());
        let out = self.decode(&mut g, &bound, d)?;
        Ok(g.value(out).clone())
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for p in self.params() {
            for v in p.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads parameters into a model of the given architecture. The file
    /// must hold exactly the parameter count of that architecture.
    pub fn read_checkpoint<R: Read>(mut r: R, options: ModelOptions) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mut model = Self::init(0, options).zeroed();
        let mut buf = [0u8; 8];
        for p in model.params_mut() {
            for v in p.as_mut_slice() {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Format("truncated checkpoint".into()))?;
                *v = f64::from_le_bytes(buf);
            }
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes in checkpoint",
                rest.len()
            )));
        }
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"QCKP";
const CHECKPOINT_VERSION: u32 = 1;

fn run_stack(g: &mut Graph, layers: &[BoundLayer], input: Tensor) -> Result<Tensor> {
    let ones = g.constant(Matrix::filled(1, input.shape().1, 1.0));
    let mut h = input;
    for layer in layers {
        let wx = g.matmul(layer.weight, h)?;
        // Bias broadcast across frames as b·1ᵀ.
        let b = g.matmul(layer.bias, ones)?;
        let pre = g.add(wx, b)?;
        let act = match layer.slope {
            Some(s) => g.prelu(pre, s)?,
            None => pre,
        };
        h = if layer.skip { g.add(act, h)? } else { act };
    }
    Ok(h)
}
