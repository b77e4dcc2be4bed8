//! Forward pass: noisy embeddings, BiLSTM, attention pooling and the slot and
//! intent heads, recorded on a [`Tape`].

use crate::error::{Error, Result};
use crate::model::config::{HeadKind, ModelConfig};
use crate::model::params::{Head, Lstm, ModelParams, Params};
use crate::tensor::chain;
use crate::tensor::matrix::{argmax, Matrix};
use crate::tensor::random::{normal_matrix, Rng};
use crate::tensor::tape::{NodeId, Tape};

/// Training draws noise and latent samples from the two generators;
/// inference uses neither.
pub enum Mode<'a> {
    Train {
        noise: &'a mut Rng,
        sampling: &'a mut Rng,
    },
    Infer,
}

/// `e + N(0, σ² I)`, one fresh draw per entry.
pub fn inject_noise(e: &Matrix, variance: f64, rng: &mut Rng) -> Matrix {
    if variance == 0.0 {
        return e.clone();
    }
    let n = normal_matrix(e.rows(), e.cols(), variance.sqrt(), rng);
    e.add(&n).expect("same shape")
}

/// Hidden states (`T x H`) of one LSTM direction over the rows of `x`,
/// visited in `order`; row `t` of the result belongs to position `t`.
fn lstm_pass(
    tape: &mut Tape,
    p: &Lstm<NodeId>,
    x: NodeId,
    hidden: usize,
    reverse: bool,
) -> Result<NodeId> {
    let t_len = tape.value(x).rows();
    let xw = tape.matmul(x, p.wx)?;
    let pre = tape.add_row(xw, p.b)?;
    let mut states: Vec<Option<NodeId>> = vec![None; t_len];
    let mut h_prev: Option<NodeId> = None;
    let mut c_prev: Option<NodeId> = None;
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for t in order {
        let mut gates = tape.row(pre, t)?;
        if let Some(h) = h_prev {
            let hw = tape.matmul(h, p.wh)?;
            gates = tape.add(gates, hw)?;
        }
        let i_raw = tape.slice_cols(gates, 0, hidden)?;
        let f_raw = tape.slice_cols(gates, hidden, hidden)?;
        let o_raw = tape.slice_cols(gates, 2 * hidden, hidden)?;
        let g_raw = tape.slice_cols(gates, 3 * hidden, hidden)?;
        let i = tape.sigmoid(i_raw);
        let o = tape.sigmoid(o_raw);
        let g = tape.tanh(g_raw);
        let mut c = tape.mul(i, g)?;
        if let Some(cp) = c_prev {
            let f = tape.sigmoid(f_raw);
            let keep = tape.mul(f, cp)?;
            c = tape.add(keep, c)?;
        }
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        states[t] = Some(h);
        h_prev = Some(h);
        c_prev = Some(c);
    }
    let rows: Vec<NodeId> = states
        .into_iter()
        .map(|s| s.expect("every position visited"))
        .collect();
    tape.concat_rows(&rows)
}

/// `[h_1 … h_T]` as a `T x 2H` node: forward and backward states side by side.
pub fn bilstm(tape: &mut Tape, p: &Params<NodeId>, x: NodeId, hidden: usize) -> Result<NodeId> {
    let f = lstm_pass(tape, &p.fwd, x, hidden, false)?;
    let b = lstm_pass(tape, &p.bwd, x, hidden, true)?;
    tape.concat_cols(&[f, b])
}

/// Attention weights (`1 x T`) and context `v = Σ a_t h_t` (`1 x 2H`).
pub fn attend(tape: &mut Tape, h: NodeId, w_a: NodeId) -> Result<(NodeId, NodeId)> {
    let m = tape.matmul(h, w_a)?;
    let m = tape.transpose(m);
    let a = tape.softmax(m);
    let v = tape.matmul(a, h)?;
    Ok((a, v))
}

/// One affine map split into mean and log-variance halves.
pub fn recognize(
    tape: &mut Tape,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    latent: usize,
) -> Result<(NodeId, NodeId)> {
    let xw = tape.matmul(x, w)?;
    let r = tape.add_row(xw, b)?;
    let mu = tape.slice_cols(r, 0, latent)?;
    let log_var = tape.slice_cols(r, latent, latent)?;
    Ok((mu, log_var))
}

/// Nodes of one recorded forward pass.
#[derive(Clone, Debug)]
pub struct Graph {
    pub embeddings: NodeId,
    pub hidden: NodeId,
    pub attention: NodeId,
    pub context: NodeId,
    pub slot_latent: Option<Latent>,
    pub intent_latent: Option<Latent>,
    /// Row-wise slot log-probabilities, or CRF emissions.
    pub slot_scores: NodeId,
    pub intent_log_probs: NodeId,
    pub transitions: Option<NodeId>,
}

#[derive(Clone, Copy, Debug)]
pub struct Latent {
    pub mu: NodeId,
    pub log_var: NodeId,
    pub z: NodeId,
}

fn latent(
    tape: &mut Tape,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    size: usize,
    mode: &mut Mode<'_>,
) -> Result<Latent> {
    let (mu, log_var) = recognize(tape, x, w, b, size)?;
    let z = match mode {
        Mode::Train { sampling, .. } => tape.gaussian_sample(mu, log_var, sampling)?,
        Mode::Infer => mu,
    };
    Ok(Latent { mu, log_var, z })
}

/// Records the network on `tape` for one utterance's `T x dim` embeddings.
pub fn forward(
    tape: &mut Tape,
    p: &Params<NodeId>,
    cfg: &ModelConfig,
    embeddings: &Matrix,
    mut mode: Mode<'_>,
) -> Result<Graph> {
    if embeddings.rows() == 0 || embeddings.cols() != cfg.embedding_dim {
        return Err(Error::Shape {
            op: "forward",
            left: embeddings.shape(),
            right: (1, cfg.embedding_dim),
        });
    }
    let e = match &mut mode {
        Mode::Train { noise, .. } if cfg.noise => {
            inject_noise(embeddings, cfg.noise_variance, noise)
        }
        _ => embeddings.clone(),
    };
    let e = tape.constant(e);
    let h = bilstm(tape, p, e, cfg.hidden)?;
    let (a, v) = attend(tape, h, p.w_a)?;

    let mut g = Graph {
        embeddings: e,
        hidden: h,
        attention: a,
        context: v,
        slot_latent: None,
        intent_latent: None,
        slot_scores: h,
        intent_log_probs: v,
        transitions: None,
    };
    match &p.head {
        Head::Lvm {
            slot_wr,
            slot_br,
            intent_wr,
            intent_br,
            slot_wg,
            intent_wg,
        } => {
            let s = latent(tape, h, *slot_wr, *slot_br, cfg.latent, &mut mode)?;
            let i = latent(tape, v, *intent_wr, *intent_br, cfg.latent, &mut mode)?;
            let sl = tape.matmul(s.z, *slot_wg)?;
            let il = tape.matmul(i.z, *intent_wg)?;
            g.slot_scores = tape.log_softmax(sl);
            g.intent_log_probs = tape.log_softmax(il);
            g.slot_latent = Some(s);
            g.intent_latent = Some(i);
        }
        Head::Mlp {
            slot_w,
            slot_b,
            intent_w,
            intent_b,
            slot_wg,
            intent_wg,
        } => {
            let dense = |tape: &mut Tape, x, w, b| -> Result<NodeId> {
                let xw = tape.matmul(x, w)?;
                let r = tape.add_row(xw, b)?;
                Ok(tape.tanh(r))
            };
            let zs = dense(tape, h, *slot_w, *slot_b)?;
            let zi = dense(tape, v, *intent_w, *intent_b)?;
            let sl = tape.matmul(zs, *slot_wg)?;
            let il = tape.matmul(zi, *intent_wg)?;
            g.slot_scores = tape.log_softmax(sl);
            g.intent_log_probs = tape.log_softmax(il);
        }
        Head::Crf {
            emit_w,
            emit_b,
            transitions,
            intent_wg,
        } => {
            let hw = tape.matmul(h, *emit_w)?;
            g.slot_scores = tape.add_row(hw, *emit_b)?;
            g.transitions = Some(*transitions);
            let il = tape.matmul(v, *intent_wg)?;
            g.intent_log_probs = tape.log_softmax(il);
        }
    }
    Ok(g)
}

/// `Σ_t −log p(s_t) − log p(I)`; for the CRF head the slot term is the
/// sequence negative log-likelihood.
pub fn loss(tape: &mut Tape, g: &Graph, slots: &[usize], intent: usize) -> Result<NodeId> {
    let (t_len, k) = tape.value(g.slot_scores).shape();
    if slots.len() != t_len {
        return Err(Error::Data(format!(
            "{} gold slots for {t_len} tokens",
            slots.len()
        )));
    }
    if let Some(&bad) = slots.iter().find(|&&s| s >= k) {
        return Err(Error::Data(format!(
            "gold slot id {bad} outside {k} labels"
        )));
    }
    let n_int = tape.value(g.intent_log_probs).cols();
    if intent >= n_int {
        return Err(Error::Data(format!(
            "gold intent id {intent} outside {n_int} labels"
        )));
    }
    let slot_nll = match g.transitions {
        None => {
            let gold = tape.pick_sum(g.slot_scores, slots.iter().copied().enumerate().collect())?;
            tape.scale(gold, -1.0)
        }
        Some(tr) => {
            let log_z = tape.chain_log_partition(g.slot_scores, tr)?;
            let emit = tape.pick_sum(g.slot_scores, slots.iter().copied().enumerate().collect())?;
            let pairs = slots.windows(2).map(|w| (w[0], w[1])).collect();
            let trans = tape.pick_sum(tr, pairs)?;
            let gold = tape.add(emit, trans)?;
            tape.sub(log_z, gold)?
        }
    };
    let intent_lp = tape.pick_sum(g.intent_log_probs, vec![(0, intent)])?;
    let intent_nll = tape.scale(intent_lp, -1.0);
    tape.add(slot_nll, intent_nll)
}

/// Everything computed for one utterance, as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub embeddings: Matrix,
    pub hidden: Matrix,
    pub attention: Vec<f64>,
    pub context: Vec<f64>,
    /// Per token: mean, log-variance and the latent actually used.
    pub slot_latent: Option<(Matrix, Matrix, Matrix)>,
    pub intent_latent: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    /// `T x K` slot distributions; CRF posterior marginals for the CRF head.
    pub slot_probs: Matrix,
    pub intent_probs: Vec<f64>,
    pub slots: Vec<usize>,
    pub intent: usize,
}

impl ForwardTrace {
    pub fn collect(tape: &Tape, g: &Graph) -> Self {
        let scores = tape.value(g.slot_scores);
        let (slot_probs, slots) = match g.transitions {
            None => {
                let probs = scores.map(f64::exp);
                let path = (0..scores.rows()).map(|t| scores.argmax_row(t)).collect();
                (probs, path)
            }
            Some(tr) => {
                let tr = tape.value(tr);
                let (node, _) = chain::marginals(scores, tr);
                (node, chain::viterbi(scores, tr).0)
            }
        };
        let intent_probs: Vec<f64> = tape
            .value(g.intent_log_probs)
            .data()
            .iter()
            .map(|x| x.exp())
            .collect();
        let intent = argmax(tape.value(g.intent_log_probs).data());
        let lat = |l: &Latent| {
            (
                tape.value(l.mu).clone(),
                tape.value(l.log_var).clone(),
                tape.value(l.z).clone(),
            )
        };
        Self {
            embeddings: tape.value(g.embeddings).clone(),
            hidden: tape.value(g.hidden).clone(),
            attention: tape.value(g.attention).data().to_vec(),
            context: tape.value(g.context).data().to_vec(),
            slot_latent: g.slot_latent.as_ref().map(lat),
            intent_latent: g.intent_latent.as_ref().map(|l| {
                let (m, v, z) = lat(l);
                (m.into_vec(), v.into_vec(), z.into_vec())
            }),
            slot_probs,
            intent_probs,
            slots,
            intent,
        }
    }
}

/// Inference-mode traces for many utterances, sharing one frozen binding
/// of the parameters per chunk.
pub fn infer_traces(
    params: &ModelParams,
    cfg: &ModelConfig,
    inputs: &[&Matrix],
) -> Result<Vec<ForwardTrace>> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(CHUNK) {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        for e in chunk {
            let g = forward(&mut tape, &p, cfg, e, Mode::Infer)?;
            out.push(ForwardTrace::collect(&tape, &g));
        }
    }
    Ok(out)
}

/// Decoded slot ids and intent id for one utterance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub slots: Vec<usize>,
    pub intent: usize,
}

pub fn predict(
    params: &ModelParams,
    cfg: &ModelConfig,
    inputs: &[&Matrix],
) -> Result<Vec<Prediction>> {
    use rayon::prelude::*;
    const CHUNK: usize = 64;
    let per_chunk: Result<Vec<Vec<Prediction>>> = inputs
        .par_chunks(CHUNK)
        .map(|chunk| {
            Ok(infer_traces(params, cfg, chunk)?
                .into_iter()
                .map(|t| Prediction {
                    slots: t.slots,
                    intent: t.intent,
                })
                .collect())
        })
        .collect();
    Ok(per_chunk?.into_iter().flatten().collect())
}

/// True when the head kind carries a latent variable.
pub fn has_latent(kind: HeadKind) -> bool {
    kind == HeadKind::Lvm
}
