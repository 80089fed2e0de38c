//! Encoder-processor-decoder network predicting coarse rates from delay windows, with a ChebConv
//! processor or a dense baseline processor of similar size.

use std::sync::Arc;

use thiserror::Error;

use crate::graph::{chebyshev_matrices, weighted_laplacian, Graph, GraphError, SpectralFilter};
use crate::hexfloat;
use crate::linalg::Matrix;
use crate::rng::SplitMix64;
use crate::tensor::{Checkpoint, CheckpointError, Fcnn, NodeMix, ParamStore, Tape, TapeError, Var, PRELU_INIT};
use crate::tensor::nn::fan_in_uniform;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("window has {got} steps, model expects T = {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error("state width {got} does not match {expected}")]
    StateWidth { expected: usize, got: usize },
    #[error("unknown topology index {0}")]
    UnknownTopology(usize),
    #[error("coarse graph has {got} nodes, model expects {expected}")]
    NodeCount { expected: usize, got: usize },
    #[error("non-finite prediction at rollout step {0}")]
    NonFinite(usize),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("checkpoint does not match the architecture: {0}")]
    Architecture(String),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    ChebConv,
    MlpBaseline,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::ChebConv => "chebconv",
            Variant::MlpBaseline => "mlp_baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "chebconv" => Some(Variant::ChebConv),
            "mlp_baseline" | "mlp" => Some(Variant::MlpBaseline),
            _ => None,
        }
    }
}

/// How topology indices enter the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexEncoding {
    /// `J` cast to a real number.
    Raw,
    /// One-hot over `topologies` indices.
    OneHot { topologies: usize },
}

impl IndexEncoding {
    fn width(self) -> usize {
        match self {
            IndexEncoding::Raw => 1,
            IndexEncoding::OneHot { topologies } => topologies,
        }
    }
}

/// Which topology the processor Laplacian is built from when predicting step `t + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LaplacianTiming {
    /// The topology active at the target step `t + 1`.
    #[default]
    Next,
    /// The topology active at the last observed step `t`.
    Current,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Delay length `T`.
    pub delay: usize,
    /// Chebyshev order per layer.
    pub order: usize,
    /// Number of processor layers `N_C`.
    pub layers: usize,
    /// Coarse node count `M`.
    pub nodes: usize,
    /// Resolved dimension per coarse node.
    pub node_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    /// `D_0, ..., D_{N_C}`.
    pub features: Vec<usize>,
    pub variant: Variant,
    pub index_encoding: IndexEncoding,
    pub laplacian_timing: LaplacianTiming,
    pub dt: f64,
}

impl ModelConfig {
    /// Widths of 128 everywhere, one hidden layer in encoder and decoder.
    pub fn new(delay: usize, order: usize, layers: usize, nodes: usize, dt: f64) -> Self {
        Self {
            delay,
            order,
            layers,
            nodes,
            node_dim: 1,
            encoder_hidden: 128,
            decoder_hidden: 128,
            features: vec![128; layers + 1],
            variant: Variant::ChebConv,
            index_encoding: IndexEncoding::Raw,
            laplacian_timing: LaplacianTiming::Next,
            dt,
        }
    }

    /// Same hidden and feature width `w` everywhere.
    pub fn with_width(mut self, w: usize) -> Self {
        self.encoder_hidden = w;
        self.decoder_hidden = w;
        self.features = vec![w; self.layers + 1];
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Message-passing hops `S * N_C`.
    pub fn hops(&self) -> usize {
        self.order * self.layers
    }

    /// Encoder input width per node, `T (m + index width)`.
    pub fn input_width(&self) -> usize {
        self.delay * (self.node_dim + self.index_encoding.width())
    }

    pub fn state_width(&self) -> usize {
        self.nodes * self.node_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.delay == 0 {
            return bad("delay T must be >= 1");
        }
        if self.layers == 0 {
            return bad("layer count N_C must be >= 1");
        }
        if self.nodes == 0 || self.node_dim == 0 {
            return bad("node count and node dimension must be >= 1");
        }
        if self.features.len() != self.layers + 1 || self.features.contains(&0) {
            return bad("features must list N_C + 1 positive widths");
        }
        if self.encoder_hidden == 0 || self.decoder_hidden == 0 {
            return bad("hidden widths must be positive");
        }
        if !(self.dt >= 0.0) || !self.dt.is_finite() {
            return bad("dt must be finite and non-negative");
        }
        if let IndexEncoding::OneHot { topologies: 0 } = self.index_encoding {
            return bad("one-hot encoding needs at least one topology");
        }
        Ok(())
    }

    /// Trainable scalars of the ChebConv processor: `sum_j (S + 1) D_j D_{j+1}` plus one slope per layer.
    pub fn chebconv_processor_params(&self) -> usize {
        self.features.windows(2).map(|w| (self.order + 1) * w[0] * w[1] + 1).sum()
    }

    fn mlp_params(&self, w: usize) -> usize {
        let (m, d0, dl) = (self.nodes, self.features[0], *self.features.last().expect("features non-empty"));
        (m * d0 + 1) * w + (self.layers - 1) * (w + 1) * w + (w + 1) * m * dl + self.layers
    }

    /// Hidden width of the dense baseline whose parameter count is closest to the ChebConv processor.
    pub fn mlp_hidden_width(&self) -> usize {
        let target = self.chebconv_processor_params() as i64;
        let mut best = (1, i64::MAX);
        let mut w = 1;
        loop {
            let diff = self.mlp_params(w) as i64 - target;
            if diff.abs() < best.1 {
                best = (w, diff.abs());
            }
            if diff > 0 {
                break;
            }
            w += 1;
        }
        best.0
    }

    /// Trainable scalars of the dense baseline processor.
    pub fn mlp_processor_params(&self) -> usize {
        self.mlp_params(self.mlp_hidden_width())
    }
}

/// Chebyshev polynomial matrices of every known coarse topology, computed once per index.
#[derive(Debug, Clone)]
pub struct TopologyBank {
    graphs: Vec<Graph>,
    filters: Vec<SpectralFilter>,
    /// `polys[s][J] = T_s(L~_J)`.
    polys: Vec<Arc<Vec<Matrix>>>,
}

impl TopologyBank {
    /// `graphs[J]` is the coarse graph of topology index `J`.
    pub fn new(graphs: &[Graph], order: usize) -> Result<Self, ModelError> {
        let filters: Vec<SpectralFilter> = graphs.iter().map(weighted_laplacian).collect::<Result<_, _>>()?;
        let per_graph: Vec<Vec<Matrix>> = filters.iter().map(|f| chebyshev_matrices(f, order)).collect();
        let polys = (0..=order)
            .map(|s| Arc::new(per_graph.iter().map(|p| p[s].clone()).collect()))
            .collect();
        Ok(Self { graphs: graphs.to_vec(), filters, polys })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn order(&self) -> usize {
        self.polys.len() - 1
    }

    pub fn graph(&self, index: usize) -> Option<&Graph> {
        self.graphs.get(index)
    }

    pub fn filter(&self, index: usize) -> Option<&SpectralFilter> {
        self.filters.get(index)
    }

    fn check(&self, index: usize) -> Result<(), ModelError> {
        if index < self.graphs.len() {
            Ok(())
        } else {
            Err(ModelError::UnknownTopology(index))
        }
    }
}

/// `T` consecutive coarse states and their topology indices, plus the topology of step `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    /// `T x n`, oldest step first.
    pub states: Matrix,
    pub indices: Vec<usize>,
    pub next_index: usize,
}

impl HistoryWindow {
    pub fn last_state(&self) -> &[f64] {
        self.states.row(self.states.rows() - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Processor {
    Cheb { thetas: Vec<usize>, slopes: Vec<usize> },
    Mlp(Fcnn),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RomModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    encoder: Fcnn,
    processor: Processor,
    decoder: Fcnn,
    /// Fixed multiplier on the decoder output (typically the target-rate standard deviation).
    pub rate_scale: f64,
}

impl RomModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = SplitMix64::child(seed, 0);
        let encoder = Fcnn::new(
            &mut params,
            "enc",
            &[config.input_width(), config.encoder_hidden, config.features[0]],
            &mut rng,
        );
        let processor = match config.variant {
            Variant::ChebConv => {
                let mut thetas = Vec::new();
                let mut slopes = Vec::new();
                for (j, w) in config.features.windows(2).enumerate() {
                    let stacked = fan_in_uniform((config.order + 1) * w[0], w[1], (config.order + 1) * w[0], &mut rng);
                    thetas.push(params.add(format!("proc.{j}.theta"), stacked));
                    slopes.push(params.add(format!("proc.{j}.prelu"), Matrix::scalar(PRELU_INIT)));
                }
                Processor::Cheb { thetas, slopes }
            }
            Variant::MlpBaseline => {
                let w = config.mlp_hidden_width();
                let mut widths = vec![config.nodes * config.features[0]];
                widths.extend(std::iter::repeat_n(w, config.layers));
                widths.push(config.nodes * config.features[config.layers]);
                Processor::Mlp(Fcnn::new(&mut params, "proc", &widths, &mut rng))
            }
        };
        let decoder = Fcnn::new(
            &mut params,
            "dec",
            &[config.features[config.layers], config.decoder_hidden, config.node_dim],
            &mut rng,
        );
        Ok(Self { config, params, encoder, processor, decoder, rate_scale: 1.0 })
    }

    pub fn processor_param_count(&self) -> usize {
        self.params.count_prefix("proc.")
    }

    /// Writes the encoder input of `node` for the window ending at row `t` of `states`
    /// (`N_t x n`, row-major) into `out`: `T` states followed by `T` encoded indices.
    pub fn fill_input(&self, states: &Matrix, indices: &[usize], t: usize, node: usize, out: &mut [f64]) {
        let c = &self.config;
        let (m, big_t) = (c.node_dim, c.delay);
        let start = t + 1 - big_t;
        for k in 0..big_t {
            let row = states.row(start + k);
            out[k * m..(k + 1) * m].copy_from_slice(&row[node * m..(node + 1) * m]);
        }
        let base = big_t * m;
        match c.index_encoding {
            IndexEncoding::Raw => {
                for k in 0..big_t {
                    out[base + k] = indices[start + k] as f64;
                }
            }
            IndexEncoding::OneHot { topologies } => {
                out[base..base + big_t * topologies].fill(0.0);
                for k in 0..big_t {
                    let j = indices[start + k];
                    if j < topologies {
                        out[base + k * topologies + j] = 1.0;
                    }
                }
            }
        }
    }

    /// Encoder inputs of a window, `M x input_width`.
    pub fn window_input(&self, window: &HistoryWindow) -> Result<Matrix, ModelError> {
        let c = &self.config;
        if window.states.rows() != c.delay || window.indices.len() != c.delay {
            return Err(ModelError::WindowLength {
                expected: c.delay,
                got: window.states.rows().min(window.indices.len()),
            });
        }
        if window.states.cols() != c.state_width() {
            return Err(ModelError::StateWidth { expected: c.state_width(), got: window.states.cols() });
        }
        let w = c.input_width();
        let mut input = Matrix::zeros(c.nodes, w);
        for node in 0..c.nodes {
            self.fill_input(&window.states, &window.indices, c.delay - 1, node, input.row_mut(node));
        }
        Ok(input)
    }

    /// Topology used by the processor for a window.
    pub fn processor_index(&self, window: &HistoryWindow) -> usize {
        match self.config.laplacian_timing {
            LaplacianTiming::Next => window.next_index,
            LaplacianTiming::Current => *window.indices.last().expect("window is non-empty"),
        }
    }

    /// `H0`: per-node encoder output for stacked inputs `(B M) x input_width`.
    pub fn encode(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<Var, ModelError> {
        Ok(self.encoder.forward(tape, vars, input)?)
    }

    /// Processor applied to stacked features; `topo[b]` selects the Laplacian of sample `b`.
    pub fn process(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        h0: Var,
        topo: &[usize],
        bank: &TopologyBank,
    ) -> Result<Var, ModelError> {
        match &self.processor {
            Processor::Cheb { thetas, slopes } => {
                if bank.order() < self.config.order {
                    return Err(ModelError::Config(format!(
                        "topology bank holds order {}, model needs {}",
                        bank.order(),
                        self.config.order
                    )));
                }
                for &j in topo {
                    bank.check(j)?;
                    let n = bank.graphs[j].node_count();
                    if n != self.config.nodes {
                        return Err(ModelError::NodeCount { expected: self.config.nodes, got: n });
                    }
                }
                let assign = Arc::new(topo.to_vec());
                let mut h = h0;
                for (theta, slope) in thetas.iter().zip(slopes) {
                    h = self.chebconv(tape, h, &assign, bank, vars[*theta], vars[*slope])?;
                }
                Ok(h)
            }
            Processor::Mlp(net) => {
                let rows = tape.value(h0).rows();
                let b = rows / self.config.nodes;
                let flat = tape.reshape(h0, b, self.config.nodes * self.config.features[0])?;
                let out = net.forward(tape, vars, flat)?;
                let d = self.config.features[self.config.layers];
                Ok(tape.reshape(out, rows, d)?)
            }
        }
    }

    fn chebconv(
        &self,
        tape: &mut Tape,
        h: Var,
        assign: &Arc<Vec<usize>>,
        bank: &TopologyBank,
        theta: Var,
        slope: Var,
    ) -> Result<Var, ModelError> {
        let mut parts = vec![h];
        for s in 1..=self.config.order {
            let mix = NodeMix { matrices: Arc::clone(&bank.polys[s]), assign: Arc::clone(assign) };
            parts.push(tape.node_mix(h, mix)?);
        }
        let z = if parts.len() == 1 { h } else { tape.concat_cols(&parts)? };
        let y = tape.matmul(z, theta)?;
        Ok(tape.prelu(y, slope)?)
    }

    /// Per-node rates from final features, scaled by `rate_scale`.
    pub fn decode(&self, tape: &mut Tape, vars: &[Var], h: Var) -> Result<Var, ModelError> {
        let out = self.decoder.forward(tape, vars, h)?;
        Ok(if self.rate_scale == 1.0 { out } else { tape.scale(out, self.rate_scale) })
    }

    /// `F_G` on stacked inputs: returns `(B M) x m` rates.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        input: Var,
        topo: &[usize],
        bank: &TopologyBank,
    ) -> Result<Var, ModelError> {
        let h0 = self.encode(tape, vars, input)?;
        let h = self.process(tape, vars, h0, topo, bank)?;
        self.decode(tape, vars, h)
    }

    /// Rates `F_G(window)` as an `M x m` matrix.
    pub fn rates(&self, window: &HistoryWindow, bank: &TopologyBank) -> Result<Matrix, ModelError> {
        let input = self.window_input(window)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let x = tape.leaf(input);
        let out = self.forward(&mut tape, &vars, x, &[self.processor_index(window)], bank)?;
        Ok(tape.value(out).clone())
    }

    /// `xbar_{t+1} = xbar_t + dt F_G(window)`.
    pub fn predict_step(&self, window: &HistoryWindow, bank: &TopologyBank) -> Result<Vec<f64>, ModelError> {
        let rates = self.rates(window, bank)?;
        Ok(window
            .last_state()
            .iter()
            .zip(rates.as_slice())
            .map(|(x, r)| x + self.config.dt * r)
            .collect())
    }

    /// Autoregressive prediction of `schedule.len()` new samples; `schedule[q]` is the topology
    /// index of predicted sample `q`. Returns `steps x n`.
    pub fn rollout(
        &self,
        seed: &HistoryWindow,
        schedule: &[usize],
        bank: &TopologyBank,
    ) -> Result<Matrix, ModelError> {
        let n = self.config.state_width();
        let mut window = seed.clone();
        let mut out = Matrix::zeros(schedule.len(), n);
        for (q, &next) in schedule.iter().enumerate() {
            window.next_index = next;
            let x = self.predict_step(&window, bank)?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(q));
            }
            out.row_mut(q).copy_from_slice(&x);
            let t = self.config.delay;
            let data = window.states.as_mut_slice();
            data.copy_within(n.., 0);
            data[(t - 1) * n..].copy_from_slice(&x);
            window.indices.remove(0);
            window.indices.push(next);
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        let feats: Vec<String> = c.features.iter().map(usize::to_string).collect();
        let encoding = match c.index_encoding {
            IndexEncoding::Raw => "raw".to_string(),
            IndexEncoding::OneHot { topologies } => format!("onehot:{topologies}"),
        };
        let timing = match c.laplacian_timing {
            LaplacianTiming::Next => "next",
            LaplacianTiming::Current => "current",
        };
        let header = [
            ("variant", c.variant.name().to_string()),
            ("T", c.delay.to_string()),
            ("S", c.order.to_string()),
            ("N_C", c.layers.to_string()),
            ("nodes", c.nodes.to_string()),
            ("node_dim", c.node_dim.to_string()),
            ("encoder_hidden", c.encoder_hidden.to_string()),
            ("decoder_hidden", c.decoder_hidden.to_string()),
            ("features", feats.join(",")),
            ("index_encoding", encoding),
            ("laplacian_timing", timing.to_string()),
            ("dt", hexfloat::format(c.dt)),
            ("rate_scale", hexfloat::format(self.rate_scale)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Checkpoint { header, params: self.params.clone() }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let arch = |m: String| ModelError::Architecture(m);
        let num = |k: &str| -> Result<usize, ModelError> {
            ck.get(k)?.parse().map_err(|_| arch(format!("bad value for {k}")))
        };
        let float = |k: &str| -> Result<f64, ModelError> {
            hexfloat::parse(ck.get(k)?).ok_or_else(|| arch(format!("bad value for {k}")))
        };
        let variant = Variant::parse(ck.get("variant")?).ok_or_else(|| arch("unknown variant".into()))?;
        let features = ck
            .get("features")?
            .split(',')
            .map(|s| s.parse().map_err(|_| arch("bad features".into())))
            .collect::<Result<Vec<usize>, _>>()?;
        let index_encoding = match ck.get("index_encoding")? {
            "raw" => IndexEncoding::Raw,
            s => match s.strip_prefix("onehot:").and_then(|n| n.parse().ok()) {
                Some(topologies) => IndexEncoding::OneHot { topologies },
                None => return Err(arch("bad index_encoding".into())),
            },
        };
        let laplacian_timing = match ck.get("laplacian_timing")? {
            "next" => LaplacianTiming::Next,
            "current" => LaplacianTiming::Current,
            _ => return Err(arch("bad laplacian_timing".into())),
        };
        let config = ModelConfig {
            delay: num("T")?,
            order: num("S")?,
            layers: num("N_C")?,
            nodes: num("nodes")?,
            node_dim: num("node_dim")?,
            encoder_hidden: num("encoder_hidden")?,
            decoder_hidden: num("decoder_hidden")?,
            features,
            variant,
            index_encoding,
            laplacian_timing,
            dt: float("dt")?,
        };
        let mut model = Self::new(config, 0)?;
        model.rate_scale = float("rate_scale")?;
        if ck.params.names() != model.params.names() {
            return Err(arch("parameter names differ".into()));
        }
        for slot in 0..model.params.len() {
            let v = ck.params.get(slot);
            if v.shape() != model.params.get(slot).shape() {
                return Err(arch(format!("shape of {} differs", ck.params.name(slot))));
            }
            *model.params.get_mut(slot) = v.clone();
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Graph {
        let edges: Vec<(usize, usize, f64)> =
            (0..n - 1).flat_map(|i| [(i, i + 1, 1.0 + i as f64), (i + 1, i, 1.0 + i as f64)]).collect();
        Graph::new(n, &edges, 0).unwrap()
    }

    fn window(t: usize, m: usize, seed: u64) -> HistoryWindow {
        let mut rng = SplitMix64::new(seed);
        HistoryWindow {
            states: Matrix::from_vec(t, m, (0..t * m).map(|_| rng.uniform(-1.0, 1.0)).collect()),
            indices: vec![0; t],
            next_index: 0,
        }
    }

    #[test]
    fn encoder_width_at_nominal_sizes() {
        let cfg = ModelConfig::new(10, 2, 2, 5, 0.01);
        assert_eq!(cfg.input_width(), 20);
        let model = RomModel::new(cfg, 1).unwrap();
        let mut tape = Tape::new();
        let vars = model.params.bind(&mut tape);
        let x = tape.leaf(Matrix::filled(5, 20, 0.1));
        let h = model.encode(&mut tape, &vars, x).unwrap();
        assert_eq!(tape.value(h).shape(), (5, 128));
        assert!(tape.value(h).row(0) == tape.value(h).row(3));
    }

    #[test]
    fn index_window_changes_encoding() {
        let model = RomModel::new(ModelConfig::new(4, 1, 1, 3, 0.1).with_width(8), 2).unwrap();
        let bank = TopologyBank::new(&[path(3), path(3).with_index(1)], 1).unwrap();
        let mut w = window(4, 3, 5);
        let a = model.rates(&w, &bank).unwrap();
        w.indices = vec![0, 1, 1, 1];
        let b = model.rates(&w, &bank).unwrap();
        assert!(a.max_abs_diff(&b) > 0.0);
    }

    #[test]
    fn zero_decoder_keeps_state() {
        let mut model = RomModel::new(ModelConfig::new(3, 1, 1, 3, 0.1).with_width(4), 3).unwrap();
        for slot in 0..model.params.len() {
            if model.params.name(slot).starts_with("dec.1") {
                let (r, c) = model.params.get(slot).shape();
                *model.params.get_mut(slot) = Matrix::zeros(r, c);
            }
        }
        let bank = TopologyBank::new(&[path(3)], 1).unwrap();
        let w = window(3, 3, 1);
        assert_eq!(model.predict_step(&w, &bank).unwrap(), w.last_state());
        let out = model.rollout(&w, &[0; 7], &bank).unwrap();
        assert_eq!(out.rows(), 7);
        for r in 0..7 {
            assert_eq!(out.row(r), w.last_state());
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let model = RomModel::new(ModelConfig::new(3, 2, 1, 3, 0.0).with_width(4), 3).unwrap();
        let bank = TopologyBank::new(&[path(3)], 2).unwrap();
        let w = window(3, 3, 2);
        assert_eq!(model.predict_step(&w, &bank).unwrap(), w.last_state());
    }

    #[test]
    fn mlp_width_matches_parameter_count() {
        let cfg = ModelConfig::new(50, 2, 1, 5, 0.01).with_variant(Variant::MlpBaseline);
        let cheb = cfg.chebconv_processor_params() as f64;
        let mlp = cfg.mlp_processor_params() as f64;
        assert!((mlp - cheb).abs() / cheb < 0.15);
        let model = RomModel::new(cfg.clone(), 0).unwrap();
        assert_eq!(model.processor_param_count(), cfg.mlp_processor_params());
        let cheb_model = RomModel::new(cfg.with_variant(Variant::ChebConv), 0).unwrap();
        assert_eq!(cheb_model.processor_param_count(), cheb as usize);
    }

    #[test]
    fn wrong_window_length_is_rejected() {
        let model = RomModel::new(ModelConfig::new(5, 1, 1, 3, 0.1).with_width(4), 3).unwrap();
        let bank = TopologyBank::new(&[path(3)], 1).unwrap();
        assert_eq!(
            model.predict_step(&window(4, 3, 1), &bank),
            Err(ModelError::WindowLength { expected: 5, got: 4 })
        );
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let mut model = RomModel::new(ModelConfig::new(3, 2, 2, 3, 0.05).with_width(6), 11).unwrap();
        model.rate_scale = 1.7;
        let back = RomModel::from_checkpoint(&Checkpoint::parse(&model.to_checkpoint().to_text()).unwrap()).unwrap();
        assert_eq!(back, model);
        let mut other = model.to_checkpoint();
        other.header.retain(|(k, _)| k != "T");
        other.header.push(("T".into(), "4".into()));
        assert!(matches!(RomModel::from_checkpoint(&other), Err(ModelError::Architecture(_))));
    }
}
