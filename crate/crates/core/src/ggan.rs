//! Gated graph-attention encoder.
//!
//! Each layer runs three steps on both KGs with shared weights:
//!
//! * intra-graph attention over one-hop neighborhoods (self included):
//!   `h'_i = tanh(Σ_j α_ij · h_j W1)` with
//!   `α_i· = softmax_j LeakyReLU(a · [h_i W1 ‖ h_j W1])`;
//! * proxy inter-graph attention: a shared set of learnable proxies, mapped
//!   through a linear `f`, stands in for the opposite KG.
//!   `θ_i· = softmax_p(h_i · f(proxy_p))`, `δ_i = Σ_p θ_ip (h_i − f(proxy_p))`;
//! * a gate `β = σ(σ(δ W2 + b2) Wg + bg)` mixing `β ⊙ h + (1 − β) ⊙ δ`.
//!
//! The final representation concatenates the (dropout-masked) input
//! embedding with every layer output and L2-normalizes each row.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::KnowledgeGraph;
use crate::diff::{dropout_mask, xavier_uniform, Axis, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub depth: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub leaky_relu_slope: f64,
    pub proxy_count: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            depth: 2,
            heads: 1,
            hidden_dim: 32,
            leaky_relu_slope: 0.2,
            proxy_count: 64,
            dropout: 0.3,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.heads == 0 || self.hidden_dim == 0 || self.proxy_count == 0 {
            return Err(Error::Config(
                "encoder depth, heads, hidden_dim and proxy_count must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("encoder dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Width of the concatenated output rows.
    pub fn output_dim(&self) -> usize {
        self.hidden_dim * (self.depth + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub w1: Tensor,
    /// `[2F×1]`: first half scores the aggregating entity, second half the
    /// neighbor.
    pub attn: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    pub proxies: Tensor,
    pub proxy_map: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub wg: Tensor,
    pub bg: Tensor,
}

/// Every trainable tensor of the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub config: EncoderConfig,
    pub base1: Tensor,
    pub base2: Tensor,
    pub layers: Vec<LayerParams>,
}

impl EncoderState {
    /// Xavier-uniform weights and embeddings, zero biases.
    pub fn init(config: &EncoderConfig, n1: usize, n2: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = config.hidden_dim;
        let base1 = xavier_uniform(n1, f, &mut rng);
        let base2 = xavier_uniform(n2, f, &mut rng);
        let layers = (0..config.depth)
            .map(|_| LayerParams {
                heads: (0..config.heads)
                    .map(|_| HeadParams {
                        w1: xavier_uniform(f, f, &mut rng),
                        attn: xavier_uniform(2 * f, 1, &mut rng),
                    })
                    .collect(),
                proxies: xavier_uniform(config.proxy_count, f, &mut rng),
                proxy_map: xavier_uniform(f, f, &mut rng),
                w2: xavier_uniform(f, f, &mut rng),
                b2: Tensor::zeros(&[1, f]),
                wg: xavier_uniform(f, f, &mut rng),
                bg: Tensor::zeros(&[1, f]),
            })
            .collect();
        Ok(EncoderState {
            config: config.clone(),
            base1,
            base2,
            layers,
        })
    }

    /// Named tensors in a fixed order (the order of [`Self::tensors_mut`]).
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("base1".to_string(), &self.base1), ("base2".to_string(), &self.base2)];
        for (l, layer) in self.layers.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                out.push((format!("layer{l}.head{h}.w1"), &head.w1));
                out.push((format!("layer{l}.head{h}.attn"), &head.attn));
            }
            out.push((format!("layer{l}.proxies"), &layer.proxies));
            out.push((format!("layer{l}.proxy_map"), &layer.proxy_map));
            out.push((format!("layer{l}.w2"), &layer.w2));
            out.push((format!("layer{l}.b2"), &layer.b2));
            out.push((format!("layer{l}.wg"), &layer.wg));
            out.push((format!("layer{l}.bg"), &layer.bg));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.base1, &mut self.base2];
        for layer in &mut self.layers {
            for head in &mut layer.heads {
                out.push(&mut head.w1);
                out.push(&mut head.attn);
            }
            out.push(&mut layer.proxies);
            out.push(&mut layer.proxy_map);
            out.push(&mut layer.w2);
            out.push(&mut layer.b2);
            out.push(&mut layer.wg);
            out.push(&mut layer.bg);
        }
        out
    }

    /// Rebuilds a state from named records (e.g. a checkpoint).
    pub fn from_records(config: &EncoderConfig, records: Vec<(String, Tensor)>) -> Result<Self> {
        let mut records: std::collections::HashMap<String, Tensor> = records.into_iter().collect();
        let (n1, n2) = match (records.get("base1"), records.get("base2")) {
            (Some(a), Some(b)) => (a.rows(), b.rows()),
            _ => return Err(Error::Checkpoint("missing base embeddings".into())),
        };
        let mut state = EncoderState::init(config, n1, n2, 0)?;
        let names: Vec<String> = state.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(state.tensors_mut()) {
            let t = records
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        if let Some(extra) = records.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(state)
    }

    /// Puts every tensor on `tape`, as parameters when `trainable`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> EncoderVars {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let base1 = leaf(&self.base1);
        let base2 = leaf(&self.base2);
        let layers = self
            .layers
            .iter()
            .map(|l| LayerVars {
                heads: l.heads.iter().map(|h| (leaf(&h.w1), leaf(&h.attn))).collect(),
                proxies: leaf(&l.proxies),
                proxy_map: leaf(&l.proxy_map),
                w2: leaf(&l.w2),
                b2: leaf(&l.b2),
                wg: leaf(&l.wg),
                bg: leaf(&l.bg),
            })
            .collect();
        EncoderVars {
            base1,
            base2,
            layers,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    /// `(w1, attn)` per head.
    pub heads: Vec<(Var, Var)>,
    pub proxies: Var,
    pub proxy_map: Var,
    pub w2: Var,
    pub b2: Var,
    pub wg: Var,
    pub bg: Var,
}

/// Tape handles mirroring [`EncoderState`].
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub base1: Var,
    pub base2: Var,
    pub layers: Vec<LayerVars>,
}

impl EncoderVars {
    /// Handles in [`EncoderState::tensors_mut`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.base1, self.base2];
        for l in &self.layers {
            for &(w, a) in &l.heads {
                out.push(w);
                out.push(a);
            }
            out.extend([l.proxies, l.proxy_map, l.w2, l.b2, l.wg, l.bg]);
        }
        out
    }
}

/// Edge list for attention: one `(dst ← src)` entry per distinct neighbor
/// plus a self-loop on every entity.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGraph {
    pub entity_count: usize,
    pub dst: Vec<usize>,
    pub src: Vec<usize>,
}

impl AttentionGraph {
    pub fn new(kg: &KnowledgeGraph) -> Self {
        let mut dst = Vec::new();
        let mut src = Vec::new();
        for e in 0..kg.entity_count() {
            dst.push(e);
            src.push(e);
            for &n in kg.neighbors(e) {
                if n != e {
                    dst.push(e);
                    src.push(n);
                }
            }
        }
        AttentionGraph {
            entity_count: kg.entity_count(),
            dst,
            src,
        }
    }
}

/// One intra-graph attention layer; heads are averaged.
pub fn intra_attention_layer(
    tape: &mut Tape,
    h: Var,
    graph: &AttentionGraph,
    heads: &[(Var, Var)],
    slope: f64,
) -> Result<Var> {
    let n = graph.entity_count;
    if tape.value(h).rows() != n {
        return Err(Error::shape(
            "intra_attention_layer",
            format!("{} rows for {} entities", tape.value(h).rows(), n),
        ));
    }
    let mut outputs = Vec::with_capacity(heads.len());
    for &(w1, attn) in heads {
        let f = tape.value(w1).cols();
        let wh = tape.matmul(h, w1)?;
        let a_self: Vec<usize> = (0..f).collect();
        let a_nbr: Vec<usize> = (f..2 * f).collect();
        let a_dst = tape.gather_rows(attn, &a_self)?;
        let a_src = tape.gather_rows(attn, &a_nbr)?;
        let s_dst = tape.matmul(wh, a_dst)?;
        let s_src = tape.matmul(wh, a_src)?;
        let e_dst = tape.gather_rows(s_dst, &graph.dst)?;
        let e_src = tape.gather_rows(s_src, &graph.src)?;
        let logits = tape.add(e_dst, e_src)?;
        let logits = tape.leaky_relu(logits, slope);
        let alpha = tape.segment_softmax(logits, &graph.dst, n)?;
        let msg = tape.gather_rows(wh, &graph.src)?;
        let msg = tape.scale_rows(msg, alpha)?;
        let agg = tape.scatter_add_rows(msg, &graph.dst, n)?;
        outputs.push(tape.tanh(agg));
    }
    let mut acc = outputs[0];
    for &o in &outputs[1..] {
        acc = tape.add(acc, o)?;
    }
    Ok(if outputs.len() > 1 {
        tape.scale(acc, 1.0 / outputs.len() as f64)
    } else {
        acc
    })
}

/// Difference features `δ` against the attended proxy summary.
pub fn inter_attention(tape: &mut Tape, h: Var, proxies: Var, proxy_map: Var) -> Result<Var> {
    let fp = tape.matmul(proxies, proxy_map)?;
    let fpt = tape.transpose(fp)?;
    let logits = tape.matmul(h, fpt)?;
    let theta = tape.row_softmax(logits)?;
    let summary = tape.matmul(theta, fp)?;
    tape.sub(h, summary)
}

/// `β ⊙ h + (1 − β) ⊙ δ` with `β = σ(σ(δ W2 + b2) Wg + bg)`.
pub fn gate_fuse(
    tape: &mut Tape,
    h: Var,
    delta: Var,
    layer: &LayerVars,
) -> Result<Var> {
    let matched = tape.matmul(delta, layer.w2)?;
    let matched = tape.add_row(matched, layer.b2)?;
    let matched = tape.sigmoid(matched);
    let gate = tape.matmul(matched, layer.wg)?;
    let gate = tape.add_row(gate, layer.bg)?;
    let beta = tape.sigmoid(gate);
    let diff = tape.sub(h, delta)?;
    let mixed = tape.mul(beta, diff)?;
    tape.add(delta, mixed)
}

pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

fn encode_one(
    tape: &mut Tape,
    base: Var,
    graph: &AttentionGraph,
    vars: &EncoderVars,
    config: &EncoderConfig,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let mut h = base;
    if let Mode::Train(rng) = mode {
        if config.dropout > 0.0 {
            let mask = dropout_mask(tape.value(base).len(), config.dropout, *rng);
            h = tape.dropout(base, mask)?;
        }
    }
    let mut parts = vec![h];
    for layer in &vars.layers {
        let hi = intra_attention_layer(tape, h, graph, &layer.heads, config.leaky_relu_slope)?;
        let delta = inter_attention(tape, hi, layer.proxies, layer.proxy_map)?;
        h = gate_fuse(tape, hi, delta, layer)?;
        parts.push(h);
    }
    let cat = tape.concat(&parts, Axis::One)?;
    tape.l2_normalize_rows(cat)
}

/// Runs the encoder for both KGs on `tape`. Dropout is applied only in
/// [`Mode::Train`].
pub fn encode_on_tape(
    tape: &mut Tape,
    vars: &EncoderVars,
    graphs: (&AttentionGraph, &AttentionGraph),
    config: &EncoderConfig,
    mut mode: Mode<'_>,
) -> Result<(Var, Var)> {
    let z1 = encode_one(tape, vars.base1, graphs.0, vars, config, &mut mode)?;
    let z2 = encode_one(tape, vars.base2, graphs.1, vars, config, &mut mode)?;
    Ok((z1, z2))
}

/// Eval-mode embeddings for both KGs, rows unit-norm.
pub fn encode(
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    state: &EncoderState,
) -> Result<(Tensor, Tensor)> {
    if state.base1.rows() != kg1.entity_count() || state.base2.rows() != kg2.entity_count() {
        return Err(Error::shape(
            "encode",
            format!(
                "state covers {}/{} entities, graphs have {}/{}",
                state.base1.rows(),
                state.base2.rows(),
                kg1.entity_count(),
                kg2.entity_count()
            ),
        ));
    }
    let g1 = AttentionGraph::new(kg1);
    let g2 = AttentionGraph::new(kg2);
    let mut tape = Tape::new();
    let vars = state.register(&mut tape, false);
    let (z1, z2) = encode_on_tape(&mut tape, &vars, (&g1, &g2), &state.config, Mode::Eval)?;
    Ok((tape.value(z1).clone(), tape.value(z2).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Triple;

    fn path4() -> KnowledgeGraph {
        KnowledgeGraph::new(
            4,
            1,
            vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2), Triple::new(2, 0, 3)],
        )
        .unwrap()
    }

    #[test]
    fn self_loop_only_node_is_tanh_of_transform() {
        let kg = KnowledgeGraph::new(1, 1, vec![]).unwrap();
        let g = AttentionGraph::new(&kg);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::matrix(1, 2, vec![0.4, -0.3]));
        let w = tape.param(Tensor::matrix(2, 2, vec![1.0, 2.0, -0.5, 0.5]));
        let a = tape.param(Tensor::matrix(4, 1, vec![0.3, -0.1, 0.7, 0.2]));
        let out = intra_attention_layer(&mut tape, h, &g, &[(w, a)], 0.2).unwrap();
        let expected = [(0.4f64 - 0.3 * -0.5).tanh(), (0.8f64 - 0.15).tanh()];
        for (o, e) in tape.value(out).data().iter().zip(expected) {
            assert!((o - e).abs() < 1e-15);
        }
    }

    #[test]
    fn path_graph_uniform_attention() {
        let kg = path4();
        let g = AttentionGraph::new(&kg);
        let feats = [[1.0, 0.0], [0.0, 1.0], [2.0, -1.0], [0.5, 0.5]];
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&feats.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap());
        let w = tape.constant(Tensor::identity(2));
        let a = tape.constant(Tensor::zeros(&[4, 1]));
        let out = intra_attention_layer(&mut tape, h, &g, &[(w, a)], 0.2).unwrap();
        let out = tape.value(out);
        // neighborhoods including self
        let hoods: [&[usize]; 4] = [&[0, 1], &[0, 1, 2], &[1, 2, 3], &[2, 3]];
        for (i, hood) in hoods.iter().enumerate() {
            for c in 0..2 {
                let mean = hood.iter().map(|&j| feats[j][c]).sum::<f64>() / hood.len() as f64;
                assert!((out.get(i, c) - mean.tanh()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn symmetric_nodes_get_identical_outputs() {
        let kg = KnowledgeGraph::new(2, 1, vec![Triple::new(0, 0, 1)]).unwrap();
        let g = AttentionGraph::new(&kg);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::matrix(2, 2, vec![0.3, 0.7, 0.3, 0.7]));
        let w = tape.constant(Tensor::matrix(2, 2, vec![0.5, -1.0, 0.25, 2.0]));
        let a = tape.constant(Tensor::matrix(4, 1, vec![1.0, 0.5, -0.5, 0.1]));
        let out = intra_attention_layer(&mut tape, h, &g, &[(w, a)], 0.2).unwrap();
        let out = tape.value(out);
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn single_proxy_delta_is_plain_difference() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, -1.0, 0.5]));
        let p = tape.constant(Tensor::matrix(1, 2, vec![0.3, -0.2]));
        let m = tape.constant(Tensor::identity(2));
        let d = inter_attention(&mut tape, h, p, m).unwrap();
        let d = tape.value(d);
        assert_eq!(d.data(), &[0.7, 2.2, -1.3, 0.7]);
    }

    #[test]
    fn delta_vanishes_at_the_attended_proxy() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::matrix(1, 2, vec![0.6, -0.4]));
        let p = tape.constant(Tensor::matrix(1, 2, vec![0.6, -0.4]));
        let m = tape.constant(Tensor::identity(2));
        let d = inter_attention(&mut tape, h, p, m).unwrap();
        assert!(tape.value(d).data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn equal_scores_average_the_proxies() {
        // h orthogonal to the proxy difference ⇒ equal inner products.
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]));
        let p = tape.constant(Tensor::matrix(2, 2, vec![0.5, 1.0, 0.5, -3.0]));
        let m = tape.constant(Tensor::identity(2));
        let d = inter_attention(&mut tape, h, p, m).unwrap();
        let d = tape.value(d);
        assert!((d.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((d.get(0, 1) - 1.0).abs() < 1e-15);
    }

    fn gate_with(bias: f64) -> (Tensor, Tensor, Tensor) {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]));
        let d = tape.constant(Tensor::matrix(2, 2, vec![-0.5, 0.6, 0.7, -0.8]));
        let layer = LayerVars {
            heads: vec![],
            proxies: h,
            proxy_map: h,
            w2: tape.constant(Tensor::matrix(2, 2, vec![0.3, 0.1, -0.2, 0.4])),
            b2: tape.constant(Tensor::matrix(1, 2, vec![0.05, -0.05])),
            wg: tape.constant(Tensor::zeros(&[2, 2])),
            bg: tape.constant(Tensor::full(&[1, 2], bias)),
        };
        let out = gate_fuse(&mut tape, h, d, &layer).unwrap();
        (tape.value(out).clone(), tape.value(h).clone(), tape.value(d).clone())
    }

    #[test]
    fn gate_saturation_and_midpoint() {
        let (out, h, _) = gate_with(20.0);
        assert!(out.max_abs_diff(&h) <= 1e-8);
        let (out, _, d) = gate_with(-20.0);
        assert!(out.max_abs_diff(&d) <= 1e-8);
        let (out, h, d) = gate_with(0.0);
        for i in 0..4 {
            assert_eq!(out.data()[i], d.data()[i] + 0.5 * (h.data()[i] - d.data()[i]));
        }
    }

    #[test]
    fn encode_output_shape_and_norm() {
        let kg = path4();
        let cfg = EncoderConfig::default();
        let state = EncoderState::init(&cfg, 4, 4, 3).unwrap();
        let (z1, z2) = encode(&kg, &kg, &state).unwrap();
        assert_eq!(z1.shape(), &[4, 96]);
        for i in 0..4 {
            let n: f64 = z1.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        let (again, _) = encode(&kg, &kg, &state).unwrap();
        assert_eq!(z1, again);
        assert_eq!(z2.shape(), &[4, 96]);
    }

    #[test]
    fn records_round_trip() {
        let cfg = EncoderConfig {
            heads: 2,
            ..EncoderConfig::default()
        };
        let state = EncoderState::init(&cfg, 5, 6, 9).unwrap();
        let recs = state
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        assert_eq!(EncoderState::from_records(&cfg, recs).unwrap(), state);
    }
}
