use super::layers::{Activation, BinFcLayer, QuantFcLayer};
use crate::error::{Error, Result};
use crate::quant::sign;
use crate::rng::stream;
use crate::tensor::{Graph, Tensor, Var};

/// Binarized models encode real inputs as `sign(x − 0.5)`.
pub const INPUT_THRESHOLD: f64 = 0.5;

/// Hidden widths of the desk-scale FC-MLP3 architecture.
pub const MLP3_HIDDEN: [usize; 2] = [256, 128];

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Quant(QuantFcLayer),
    Bin(BinFcLayer),
}

impl Layer {
    pub fn in_features(&self) -> usize {
        match self {
            Layer::Quant(l) => l.in_features(),
            Layer::Bin(l) => l.in_features(),
        }
    }

    pub fn out_features(&self) -> usize {
        match self {
            Layer::Quant(l) => l.out_features(),
            Layer::Bin(l) => l.out_features(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Quant(l) => l.forward(x),
            Layer::Bin(l) => l.forward(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    logit_scale: f64,
    bits: u8,
    seed: u64,
}

impl Model {
    pub fn new(layers: Vec<Layer>, logit_scale: f64, bits: u8, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        if !(logit_scale > 0.0 && logit_scale.is_finite()) {
            return Err(Error::Config(format!("logit scale {logit_scale} must be > 0")));
        }
        for pair in layers.windows(2) {
            if pair[0].out_features() != pair[1].in_features() {
                return Err(Error::Dimension(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].out_features(),
                    pair[1].in_features()
                )));
            }
        }
        match layers.last() {
            Some(Layer::Quant(l)) if l.activation == Activation::None => {}
            _ => {
                return Err(Error::Config(
                    "output layer must be a fully connected layer without activation".into(),
                ))
            }
        }
        Ok(Self {
            layers,
            logit_scale,
            bits,
            seed,
        })
    }

    /// Fully connected network over `dims = [in, hidden.., classes]`.
    ///
    /// Multi-bit models use ReLU hidden layers with fake-quantized weights.
    /// `bits == 1` builds the binarized variant: thresholded ±1 hidden layers
    /// and a 1-bit output layer with a real-valued bias.
    pub fn mlp(dims: &[usize], bits: u8, logit_scale: f64, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {dims:?}")));
        }
        if ![1u8, 2, 4, 8].contains(&bits) {
            return Err(Error::Config(format!("bit width must be 1, 2, 4 or 8, got {bits}")));
        }
        let mut rng = stream(seed, &[0x1417]);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (inp, out) = (dims[i], dims[i + 1]);
                let last = i + 1 == n;
                match (bits, last) {
                    (1, false) => Layer::Bin(BinFcLayer::new(inp, out, &mut rng)),
                    (1, true) => {
                        Layer::Quant(QuantFcLayer::new(inp, out, 1, Activation::None, &mut rng))
                    }
                    (_, false) => {
                        Layer::Quant(QuantFcLayer::new(inp, out, bits, Activation::Relu, &mut rng))
                    }
                    (_, true) => {
                        Layer::Quant(QuantFcLayer::new(inp, out, bits, Activation::None, &mut rng))
                    }
                }
            })
            .collect();
        Self::new(layers, logit_scale, bits, seed)
    }

    /// In → FC256 → FC128 → FC classes.
    pub fn fc_mlp3(input: usize, classes: usize, bits: u8, logit_scale: f64, seed: u64) -> Result<Self> {
        Self::mlp(
            &[input, MLP3_HIDDEN[0], MLP3_HIDDEN[1], classes],
            bits,
            logit_scale,
            seed,
        )
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn logit_scale(&self) -> f64 {
        self.logit_scale
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_binarized(&self) -> bool {
        self.bits == 1
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].in_features()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().out_features()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut dims = vec![self.input_width()];
        dims.extend(self.layers.iter().map(Layer::out_features));
        dims
    }

    /// `"mlp:784-256-128-10"` or `"bnn:784-256-128-10"`.
    pub fn architecture(&self) -> String {
        let kind = if self.is_binarized() { "bnn" } else { "mlp" };
        let dims: Vec<String> = self.widths().iter().map(usize::to_string).collect();
        format!("{kind}:{}", dims.join("-"))
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn encode_input(&self, x: &Tensor) -> Tensor {
        if self.is_binarized() {
            x.map(|v| sign(v - INPUT_THRESHOLD))
        } else {
            x.clone()
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, w) = x.dims2()?;
        if w != self.input_width() {
            return Err(Error::Dimension(format!(
                "model expects input width {}, got {w}",
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Scaled logits `[B×K]` for a batch of inputs. Binarized hidden layers
    /// run through the XNOR/popcount kernel.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = self.encode_input(x);
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        let logits = h.map(|v| v * self.logit_scale);
        logits.check_finite("model forward")?;
        Ok(logits)
    }

    /// Builds the differentiable forward pass. Returns the logit node and one
    /// parameter node per entry of [`Model::params`], in the same order.
    pub fn forward_graph(&self, g: &mut Graph, x: &Tensor) -> Result<(Var, Vec<Var>)> {
        self.check_input(x)?;
        let mut h = g.constant(self.encode_input(x));
        let mut vars = Vec::with_capacity(2 * self.layers.len());
        for layer in &self.layers {
            h = match layer {
                Layer::Quant(l) => {
                    let w = g.param(l.weights.clone());
                    let b = g.param(l.bias.clone());
                    vars.extend([w, b]);
                    l.forward_graph(g, h, w, b)?
                }
                Layer::Bin(l) => {
                    let w = g.param(l.weights.clone());
                    let t = g.param(l.thresholds.clone());
                    vars.extend([w, t]);
                    l.forward_graph(g, h, w, t)?
                }
            };
        }
        let logits = g.scale(h, self.logit_scale)?;
        Ok((logits, vars))
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Quant(l) => {
                    out.push((format!("layer{i}.weight"), &l.weights));
                    out.push((format!("layer{i}.bias"), &l.bias));
                }
                Layer::Bin(l) => {
                    out.push((format!("layer{i}.weight"), &l.weights));
                    out.push((format!("layer{i}.threshold"), &l.thresholds));
                }
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Quant(l) => {
                    out.push((format!("layer{i}.weight"), &mut l.weights));
                    out.push((format!("layer{i}.bias"), &mut l.bias));
                }
                Layer::Bin(l) => {
                    out.push((format!("layer{i}.weight"), &mut l.weights));
                    out.push((format!("layer{i}.threshold"), &mut l.thresholds));
                }
            }
        }
        out
    }

    pub fn predict_batch(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(x)?;
        let rows = logits.dims2()?.0;
        Ok((0..rows).map(|r| predict(logits.row(r))).collect())
    }
}

pub fn model_forward(m: &Model, x: &Tensor) -> Result<Tensor> {
    m.forward(x)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Parses an architecture string back into `(binarized, widths)`.
pub fn parse_architecture(s: &str) -> Result<(bool, Vec<usize>)> {
    let (kind, dims) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("bad architecture string '{s}'")))?;
    let bnn = match kind {
        "mlp" => false,
        "bnn" => true,
        _ => return Err(Error::Config(format!("unknown architecture kind '{kind}'"))),
    };
    let dims = dims
        .split('-')
        .map(|d| {
            d.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad layer width '{d}' in '{s}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    if dims.len() < 2 {
        return Err(Error::Config(format!("architecture '{s}' needs two widths")));
    }
    Ok((bnn, dims))
}

/// Weights plus one bias/threshold per neuron, for every layer.
pub fn param_count_for(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}
