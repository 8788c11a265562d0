//! Central finite-difference checks for tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Axis, Tape, Var};
use super::tensor::Tensor;
use crate::data::{KnowledgeGraph, Triple};
use crate::ggan::{encode_on_tape, AttentionGraph, EncoderConfig, EncoderState, EncoderVars, LayerVars, Mode};
use crate::objectives::{contrastive_loss, ContrastiveConfig};
use crate::{Error, Result};

/// Builds an output from the given leaves; any shape is accepted.
pub type Builder = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Builder,
}

// Fixed random weights, so every output entry reaches the scalar loss.
fn projection(shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    t
}

fn evaluate(inputs: &[Tensor], build: &Builder) -> Result<(Tape, Var, Vec<Var>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let w = projection(tape.value(out).shape());
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    let loss = tape.sum_all(prod);
    Ok((tape, loss, vars))
}

/// Largest per-input relative error `‖a − n‖ / (‖a‖ + ‖n‖)` between the
/// tape gradient `a` and the central difference `n` with step `h`.
pub fn check_gradients(inputs: &[Tensor], build: &Builder, h: f64) -> Result<f64> {
    let (tape, loss, vars) = evaluate(inputs, build)?;
    let grads = tape.backward(loss)?;
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        let mut numeric = Vec::with_capacity(inputs[k].len());
        for i in 0..inputs[k].len() {
            let mut shifted = inputs.to_vec();
            shifted[k].data_mut()[i] += h;
            let (t, l, _) = evaluate(&shifted, build)?;
            let up = t.value(l).data()[0];
            shifted[k].data_mut()[i] -= 2.0 * h;
            let (t, l, _) = evaluate(&shifted, build)?;
            let down = t.value(l).data()[0];
            numeric.push((up - down) / (2.0 * h));
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt()
            + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        if !diff.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite gradient on input {k}")));
        }
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    Ok(worst)
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
}

// Values at least `gap` away from `at`, for ops with a kink there.
fn away(rng: &mut ChaCha8Rng, rows: usize, cols: usize, at: f64, gap: f64) -> Tensor {
    let t = uniform(rng, rows, cols, -1.0, 1.0);
    t.map(|v| at + v.signum() * (gap + v.abs()))
}

fn case(name: &'static str, inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> GradCase {
    GradCase {
        name,
        inputs,
        build: Box::new(build),
    }
}

/// One case per tape primitive (both axes where an op takes one).
pub fn primitive_cases(seed: u64) -> Vec<GradCase> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut r;
    let mask: Vec<bool> = (0..12).map(|i| i % 3 != 1).collect();
    let mut cases = vec![
        case("matmul", vec![uniform(r, 3, 4, -1.0, 1.0), uniform(r, 4, 2, -1.0, 1.0)], |t, v| {
            t.matmul(v[0], v[1])
        }),
        case("add", vec![uniform(r, 3, 2, -1.0, 1.0), uniform(r, 3, 2, -1.0, 1.0)], |t, v| t.add(v[0], v[1])),
        case("sub", vec![uniform(r, 3, 2, -1.0, 1.0), uniform(r, 3, 2, -1.0, 1.0)], |t, v| t.sub(v[0], v[1])),
        case("mul", vec![uniform(r, 3, 2, -1.0, 1.0), uniform(r, 3, 2, -1.0, 1.0)], |t, v| t.mul(v[0], v[1])),
        case("div", vec![uniform(r, 3, 2, -1.0, 1.0), uniform(r, 3, 2, 0.5, 1.5)], |t, v| t.div(v[0], v[1])),
        case("scale", vec![uniform(r, 2, 3, -1.0, 1.0)], |t, v| Ok(t.scale(v[0], -1.7))),
        case("add_scalar", vec![uniform(r, 2, 3, -1.0, 1.0)], |t, v| Ok(t.add_scalar(v[0], 0.4))),
        case("concat_rows", vec![uniform(r, 2, 3, -1.0, 1.0), uniform(r, 1, 3, -1.0, 1.0)], |t, v| {
            t.concat(&[v[0], v[1]], Axis::Zero)
        }),
        case("concat_cols", vec![uniform(r, 2, 3, -1.0, 1.0), uniform(r, 2, 1, -1.0, 1.0)], |t, v| {
            t.concat(&[v[0], v[1]], Axis::One)
        }),
        case("row_softmax", vec![uniform(r, 3, 4, -2.0, 2.0)], |t, v| t.row_softmax(v[0])),
        case("masked_row_softmax", vec![uniform(r, 3, 4, -2.0, 2.0)], move |t, v| {
            t.masked_row_softmax(v[0], &mask)
        }),
        case("segment_softmax", vec![uniform(r, 7, 1, -2.0, 2.0)], |t, v| {
            t.segment_softmax(v[0], &[0, 0, 1, 2, 2, 2, 1], 3)
        }),
        case("leaky_relu", vec![away(r, 3, 3, 0.0, 0.1)], |t, v| Ok(t.leaky_relu(v[0], 0.2))),
        case("tanh", vec![uniform(r, 3, 3, -2.0, 2.0)], |t, v| Ok(t.tanh(v[0]))),
        case("sigmoid", vec![uniform(r, 3, 3, -3.0, 3.0)], |t, v| Ok(t.sigmoid(v[0]))),
        case("exp", vec![uniform(r, 3, 3, -1.0, 1.0)], |t, v| Ok(t.exp(v[0]))),
        case("log", vec![uniform(r, 3, 3, 0.3, 2.0)], |t, v| Ok(t.log(v[0]))),
        case("abs_pow", vec![away(r, 3, 3, 0.0, 0.1)], |t, v| Ok(t.abs_pow(v[0], 1.5))),
        case("clamp_max", vec![away(r, 3, 3, 0.3, 0.1)], |t, v| Ok(t.clamp_max(v[0], 0.3))),
        case("max_scalar", vec![away(r, 3, 3, -0.2, 0.1)], |t, v| Ok(t.max_scalar(v[0], -0.2))),
        case("sum_all", vec![uniform(r, 3, 2, -1.0, 1.0)], |t, v| {
            let e = t.exp(v[0]);
            Ok(t.sum_all(e))
        }),
        case("sum_rows", vec![uniform(r, 3, 2, -1.0, 1.0)], |t, v| t.sum(v[0], Axis::Zero)),
        case("sum_cols", vec![uniform(r, 3, 2, -1.0, 1.0)], |t, v| t.sum(v[0], Axis::One)),
        case("mean_rows", vec![uniform(r, 3, 2, -1.0, 1.0)], |t, v| t.mean(v[0], Axis::Zero)),
        case("mean_cols", vec![uniform(r, 3, 2, -1.0, 1.0)], |t, v| t.mean(v[0], Axis::One)),
        case("mean_all", vec![uniform(r, 3, 2, -1.0, 1.0)], |t, v| {
            let s = t.tanh(v[0]);
            Ok(t.mean_all(s))
        }),
        case("l2_normalize_rows", vec![uniform(r, 3, 4, -1.0, 1.0)], |t, v| t.l2_normalize_rows(v[0])),
        case("gather_rows", vec![uniform(r, 4, 2, -1.0, 1.0)], |t, v| t.gather_rows(v[0], &[3, 0, 3, 1])),
        case("scatter_add_rows", vec![uniform(r, 5, 2, -1.0, 1.0)], |t, v| {
            t.scatter_add_rows(v[0], &[2, 0, 2, 2, 1], 4)
        }),
        case("dropout", vec![uniform(r, 2, 3, -1.0, 1.0)], |t, v| {
            t.dropout(v[0], vec![2.0, 0.0, 2.0, 2.0, 0.0, 0.0])
        }),
        case("transpose", vec![uniform(r, 2, 3, -1.0, 1.0)], |t, v| t.transpose(v[0])),
        case("reshape", vec![uniform(r, 2, 3, -1.0, 1.0)], |t, v| t.reshape(v[0], &[3, 2])),
        case("scale_rows", vec![uniform(r, 3, 2, -1.0, 1.0), uniform(r, 3, 1, -1.0, 1.0)], |t, v| {
            t.scale_rows(v[0], v[1])
        }),
        case("add_row", vec![uniform(r, 3, 2, -1.0, 1.0), uniform(r, 1, 2, -1.0, 1.0)], |t, v| {
            t.add_row(v[0], v[1])
        }),
    ];
    // Reused leaf: gradients from both uses must accumulate.
    cases.push(case("shared_leaf", vec![uniform(r, 3, 3, -1.0, 1.0)], |t, v| {
        let sq = t.matmul(v[0], v[0])?;
        let th = t.tanh(v[0]);
        t.mul(sq, th)
    }));
    cases
}

fn six_entity_graphs() -> Result<(KnowledgeGraph, KnowledgeGraph)> {
    let kg1 = KnowledgeGraph::new(
        6,
        2,
        vec![
            Triple::new(0, 0, 1),
            Triple::new(1, 1, 2),
            Triple::new(2, 0, 3),
            Triple::new(3, 1, 4),
            Triple::new(0, 1, 4),
        ],
    )?;
    let kg2 = KnowledgeGraph::new(
        6,
        2,
        vec![
            Triple::new(0, 0, 1),
            Triple::new(1, 0, 2),
            Triple::new(2, 1, 3),
            Triple::new(4, 1, 5),
            Triple::new(0, 0, 3),
        ],
    )?;
    Ok((kg1, kg2))
}

fn vars_from(config: &EncoderConfig, v: &[Var]) -> EncoderVars {
    let mut it = v.iter().copied();
    let mut next = || it.next().expect("one var per tensor");
    let base1 = next();
    let base2 = next();
    let layers = (0..config.depth)
        .map(|_| LayerVars {
            heads: (0..config.heads).map(|_| (next(), next())).collect(),
            proxies: next(),
            proxy_map: next(),
            w2: next(),
            b2: next(),
            wg: next(),
            bg: next(),
        })
        .collect();
    EncoderVars { base1, base2, layers }
}

/// Full encoder pass (intra attention, proxy attention, gate, concat,
/// normalization) over two 6-entity graphs; with `with_loss` the embeddings
/// feed the contrastive objective on four aligned pairs.
pub fn encoder_case(seed: u64, with_loss: bool) -> Result<GradCase> {
    let config = EncoderConfig {
        depth: 1,
        heads: 2,
        hidden_dim: 4,
        leaky_relu_slope: 0.2,
        proxy_count: 3,
        dropout: 0.0,
    };
    let (kg1, kg2) = six_entity_graphs()?;
    let mut state = EncoderState::init(&config, 6, 6, seed)?;
    // Nonzero biases so their gradients are exercised away from zero.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for l in &mut state.layers {
        l.b2 = uniform(&mut rng, 1, 4, -0.5, 0.5);
        l.bg = uniform(&mut rng, 1, 4, -0.5, 0.5);
    }
    let inputs: Vec<Tensor> = state.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
    let g1 = AttentionGraph::new(&kg1);
    let g2 = AttentionGraph::new(&kg2);
    let build = move |t: &mut Tape, v: &[Var]| -> Result<Var> {
        let vars = vars_from(&config, v);
        let (z1, z2) = encode_on_tape(t, &vars, (&g1, &g2), &config, Mode::Eval)?;
        if with_loss {
            let b1 = t.gather_rows(z1, &[0, 1, 2, 4])?;
            let b2 = t.gather_rows(z2, &[0, 1, 2, 3])?;
            let cfg = ContrastiveConfig {
                tau_plus: 0.05,
                beta_hardness: 1.0,
                temperature: 0.5,
                batch_size: 4,
            };
            Ok(contrastive_loss(t, b1, b2, &cfg)?.0)
        } else {
            t.concat(&[z1, z2], Axis::Zero)
        }
    };
    Ok(case(if with_loss { "encoder+contrastive" } else { "encoder" }, inputs, build))
}
