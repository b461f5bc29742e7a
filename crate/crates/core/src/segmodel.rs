//! The tiny fully-convolutional segmentation net and the ensemble of `n`
//! independently initialized copies trained together.

use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::kernels::{self, ConvGeometry};
use crate::diffcore::{conv2d, softmax_channels, Parameter, ProbMap, Tensor};
use crate::error::{invalid, shape_err, Error, Result};
use crate::rng::Stream;
use crate::trainer::StepCounters;

pub const HIDDEN_CHANNELS: usize = 16;

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: Parameter,
    pub bias: Parameter,
    pub padding: usize,
}

impl ConvLayer {
    fn init(rng: &mut ChaCha8Rng, cin: usize, cout: usize, k: usize) -> Result<ConvLayer> {
        let bound = (1.0 / (cin * k * k) as f64).sqrt();
        let weights = (0..cout * cin * k * k).map(|_| rng.random_range(-bound..=bound)).collect();
        Ok(ConvLayer {
            weight: Parameter::new(&[cout, cin, k, k], weights)?,
            bias: Parameter::new(&[cout], vec![0.0; cout])?,
            padding: (k - 1) / 2,
        })
    }

    fn from_values(wshape: &[usize], w: Vec<f64>, b: Vec<f64>) -> Result<ConvLayer> {
        if wshape.len() != 4 || wshape[2] != wshape[3] || wshape[2].is_multiple_of(2) {
            return shape_err(format!("conv weight must be (cout,cin,k,k) with odd k, got {wshape:?}"));
        }
        Ok(ConvLayer {
            weight: Parameter::new(wshape, w)?,
            bias: Parameter::new(&[wshape[0]], b)?,
            padding: (wshape[2] - 1) / 2,
        })
    }

    fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// conv 3x3 (cin -> 16), relu, conv 3x3 (16 -> 16), relu, conv 1x1 (16 -> C).
/// Spatial size is preserved.
#[derive(Clone, Debug)]
pub struct TinySegNet {
    layers: Vec<ConvLayer>,
}

impl TinySegNet {
    /// Uniform fan-in initialization: weights in `[-a, a]`, `a = sqrt(1 / (cin*k*k))`,
    /// zero biases. Fully determined by `seed`.
    pub fn init(seed: u64, in_channels: usize, num_classes: usize) -> Result<TinySegNet> {
        if num_classes < 2 {
            return invalid(format!("need at least 2 classes, got {num_classes}"));
        }
        if in_channels == 0 {
            return invalid("need at least one input channel");
        }
        let mut rng = Stream::Init.rng(seed);
        let layers = vec![
            ConvLayer::init(&mut rng, in_channels, HIDDEN_CHANNELS, 3)?,
            ConvLayer::init(&mut rng, HIDDEN_CHANNELS, HIDDEN_CHANNELS, 3)?,
            ConvLayer::init(&mut rng, HIDDEN_CHANNELS, num_classes, 1)?,
        ];
        Ok(TinySegNet { layers })
    }

    fn from_layers(layers: Vec<ConvLayer>) -> Result<TinySegNet> {
        if layers.is_empty() {
            return invalid("network without layers");
        }
        for pair in layers.windows(2) {
            if pair[0].out_channels() != pair[1].in_channels() {
                return shape_err(format!(
                    "layer chain mismatch: {} output channels feed {} input channels",
                    pair[0].out_channels(),
                    pair[1].in_channels()
                ));
            }
        }
        let net = TinySegNet { layers };
        if net.num_classes() < 2 {
            return invalid("network must emit at least 2 classes");
        }
        Ok(net)
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_channels()
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    /// Parameters in declaration order: weight, bias per layer.
    pub fn parameters(&self) -> impl Iterator<Item = &Parameter> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().map(|p| p.values().len()).sum()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.in_channels() {
            return shape_err(format!(
                "network expects (b,{},w,h) input, got {shape:?}",
                self.in_channels()
            ));
        }
        Ok(())
    }

    /// Differentiable forward pass producing (b, C, w, h) logits.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = conv2d(&h, layer.weight.tensor(), layer.bias.tensor(), layer.padding)?;
            if i != last {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// Gradient-free forward straight to class probabilities. Produces the
    /// same values as `softmax_channels(forward(x))`.
    pub fn predict_probs(&self, shape: &[usize], x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(shape)?;
        let last = self.layers.len() - 1;
        let mut cur_shape = shape.to_vec();
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let g = ConvGeometry::from_shapes(&cur_shape, layer.weight.shape(), layer.padding)?;
            h = kernels::conv2d_forward(&g, &h, layer.weight.values(), layer.bias.values());
            cur_shape = g.out_shape();
            if i != last {
                h.iter_mut().for_each(|v| *v = if *v > 0.0 { *v } else { 0.0 });
            }
        }
        Ok(kernels::softmax_channels(&cur_shape, &h))
    }

    pub fn zero_grad(&self) {
        self.parameters().for_each(Parameter::zero_grad);
    }
}

/// `n` networks of identical architecture with distinct initialization seeds.
#[derive(Clone, Debug)]
pub struct NetworkEnsemble {
    nets: Vec<TinySegNet>,
    seeds: Vec<u64>,
}

impl NetworkEnsemble {
    /// Network `j` is seeded with `run_seed * 1000 + j`.
    pub fn init(run_seed: u64, n: usize, in_channels: usize, num_classes: usize) -> Result<NetworkEnsemble> {
        if n == 0 {
            return invalid("ensemble needs at least one network");
        }
        let seeds: Vec<u64> = (0..n as u64).map(|j| run_seed * 1000 + j).collect();
        let nets = seeds
            .iter()
            .map(|&s| TinySegNet::init(s, in_channels, num_classes))
            .collect::<Result<Vec<_>>>()?;
        Ok(NetworkEnsemble { nets, seeds })
    }

    pub fn from_nets(nets: Vec<TinySegNet>, seeds: Vec<u64>) -> Result<NetworkEnsemble> {
        if nets.is_empty() || nets.len() != seeds.len() {
            return invalid(format!("{} networks with {} seeds", nets.len(), seeds.len()));
        }
        let arch = |n: &TinySegNet| n.parameters().map(|p| p.shape().to_vec()).collect::<Vec<_>>();
        let reference = arch(&nets[0]);
        if nets.iter().any(|n| arch(n) != reference) {
            return invalid("ensemble members must share one architecture");
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return invalid("ensemble seeds must be distinct");
        }
        Ok(NetworkEnsemble { nets, seeds })
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn nets(&self) -> &[TinySegNet] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [TinySegNet] {
        &mut self.nets
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn num_classes(&self) -> usize {
        self.nets[0].num_classes()
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.nets.iter_mut().flat_map(TinySegNet::parameters_mut)
    }

    /// `P_j = softmax(f(x; theta_j))` for every network, in order. Counts one
    /// forward call per network.
    pub fn forward_all(&self, x: &Tensor, counters: &mut StepCounters) -> Result<Vec<ProbMap>> {
        self.nets
            .iter()
            .map(|net| {
                counters.forward_calls += 1;
                softmax_channels(&net.forward(x)?)
            })
            .collect()
    }

    pub fn zero_grad(&self) {
        self.nets.iter().for_each(TinySegNet::zero_grad);
    }

    /// Writes the binary checkpoint: `NCPS` magic, version, network count,
    /// per-network shape table, then every parameter as little-endian `f64`
    /// in declaration order.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(self.nets.len() as u32).to_le_bytes())?;
        for net in &self.nets {
            out.write_all(&(net.parameters().count() as u32).to_le_bytes())?;
            for p in net.parameters() {
                out.write_all(&(p.shape().len() as u32).to_le_bytes())?;
                for &d in p.shape() {
                    out.write_all(&(d as u32).to_le_bytes())?;
                }
            }
        }
        for p in self.nets.iter().flat_map(TinySegNet::parameters) {
            for v in p.values() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads the networks of a checkpoint. Seeds are not stored, so the caller
    /// supplies them via [`NetworkEnsemble::from_nets`] if needed.
    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<TinySegNet>> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = read_u32(&mut input)? as usize;
        let mut tables = Vec::with_capacity(n);
        for _ in 0..n {
            let count = read_u32(&mut input)? as usize;
            if !count.is_multiple_of(2) {
                return Err(Error::Checkpoint(format!("odd tensor count {count}")));
            }
            let mut shapes = Vec::with_capacity(count);
            for _ in 0..count {
                let rank = read_u32(&mut input)? as usize;
                let dims = (0..rank).map(|_| read_u32(&mut input).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                shapes.push(dims);
            }
            tables.push(shapes);
        }
        let mut nets = Vec::with_capacity(n);
        for shapes in tables {
            let mut layers = Vec::new();
            for pair in shapes.chunks(2) {
                let w = read_f64s(&mut input, pair[0].iter().product())?;
                let b = read_f64s(&mut input, pair[1].iter().product())?;
                if pair[1] != [pair[0][0]] {
                    return Err(Error::Checkpoint(format!("bias shape {:?} for weight {:?}", pair[1], pair[0])));
                }
                layers.push(ConvLayer::from_values(&pair[0], w, b)?);
            }
            nets.push(TinySegNet::from_layers(layers)?);
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(nets)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NCPS";
pub const CHECKPOINT_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}
