//! Trainable tensors. [`Params`] is generic so the same layout holds plain
//! values (`Params<Matrix>`), tape handles (`Params<NodeId>`) and optimizer
//! state, all iterated in one fixed order.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::config::{HeadKind, ModelConfig};
use crate::tensor::matrix::Matrix;
use crate::tensor::random::Rng;
use crate::tensor::tape::{NodeId, Tape};

/// One LSTM direction. Gate columns are ordered input, forget, output, candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm<T> {
    pub wx: T,
    pub wh: T,
    pub b: T,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head<T> {
    Lvm {
        slot_wr: T,
        slot_br: T,
        intent_wr: T,
        intent_br: T,
        slot_wg: T,
        intent_wg: T,
    },
    Mlp {
        slot_w: T,
        slot_b: T,
        intent_w: T,
        intent_b: T,
        slot_wg: T,
        intent_wg: T,
    },
    Crf {
        emit_w: T,
        emit_b: T,
        transitions: T,
        intent_wg: T,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub fwd: Lstm<T>,
    pub bwd: Lstm<T>,
    /// Attention scoring vector, `2H x 1`.
    pub w_a: T,
    pub head: Head<T>,
}

pub type ModelParams = Params<Matrix>;

impl<T> Params<T> {
    /// Named entries in the canonical order.
    pub fn entries(&self) -> Vec<(&'static str, &T)> {
        let mut out = vec![
            ("fwd.wx", &self.fwd.wx),
            ("fwd.wh", &self.fwd.wh),
            ("fwd.b", &self.fwd.b),
            ("bwd.wx", &self.bwd.wx),
            ("bwd.wh", &self.bwd.wh),
            ("bwd.b", &self.bwd.b),
            ("w_a", &self.w_a),
        ];
        match &self.head {
            Head::Lvm {
                slot_wr,
                slot_br,
                intent_wr,
                intent_br,
                slot_wg,
                intent_wg,
            } => out.extend([
                ("slot.wr", slot_wr),
                ("slot.br", slot_br),
                ("intent.wr", intent_wr),
                ("intent.br", intent_br),
                ("slot.wg", slot_wg),
                ("intent.wg", intent_wg),
            ]),
            Head::Mlp {
                slot_w,
                slot_b,
                intent_w,
                intent_b,
                slot_wg,
                intent_wg,
            } => out.extend([
                ("slot.w", slot_w),
                ("slot.b", slot_b),
                ("intent.w", intent_w),
                ("intent.b", intent_b),
                ("slot.wg", slot_wg),
                ("intent.wg", intent_wg),
            ]),
            Head::Crf {
                emit_w,
                emit_b,
                transitions,
                intent_wg,
            } => out.extend([
                ("crf.emit_w", emit_w),
                ("crf.emit_b", emit_b),
                ("crf.transitions", transitions),
                ("intent.wg", intent_wg),
            ]),
        }
        out
    }

    pub fn values(&self) -> Vec<&T> {
        self.entries().into_iter().map(|(_, v)| v).collect()
    }

    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![
            &mut self.fwd.wx,
            &mut self.fwd.wh,
            &mut self.fwd.b,
            &mut self.bwd.wx,
            &mut self.bwd.wh,
            &mut self.bwd.b,
            &mut self.w_a,
        ];
        match &mut self.head {
            Head::Lvm {
                slot_wr,
                slot_br,
                intent_wr,
                intent_br,
                slot_wg,
                intent_wg,
            } => out.extend([slot_wr, slot_br, intent_wr, intent_br, slot_wg, intent_wg]),
            Head::Mlp {
                slot_w,
                slot_b,
                intent_w,
                intent_b,
                slot_wg,
                intent_wg,
            } => out.extend([slot_w, slot_b, intent_w, intent_b, slot_wg, intent_wg]),
            Head::Crf {
                emit_w,
                emit_b,
                transitions,
                intent_wg,
            } => out.extend([emit_w, emit_b, transitions, intent_wg]),
        }
        out
    }

    pub fn kind(&self) -> HeadKind {
        match self.head {
            Head::Lvm { .. } => HeadKind::Lvm,
            Head::Mlp { .. } => HeadKind::Mlp,
            Head::Crf { .. } => HeadKind::Crf,
        }
    }

    /// Same layout with every entry transformed, in canonical order.
    pub fn map<U>(&self, mut f: impl FnMut(&'static str, &T) -> U) -> Params<U> {
        let mut vals = self.entries().into_iter().map(|(n, v)| f(n, v));
        let mut next = || vals.next().expect("layout has a fixed length");
        let lstm = |next: &mut dyn FnMut() -> U| Lstm {
            wx: next(),
            wh: next(),
            b: next(),
        };
        let fwd = lstm(&mut next);
        let bwd = lstm(&mut next);
        let w_a = next();
        let head = match self.kind() {
            HeadKind::Lvm => Head::Lvm {
                slot_wr: next(),
                slot_br: next(),
                intent_wr: next(),
                intent_br: next(),
                slot_wg: next(),
                intent_wg: next(),
            },
            HeadKind::Mlp => Head::Mlp {
                slot_w: next(),
                slot_b: next(),
                intent_w: next(),
                intent_b: next(),
                slot_wg: next(),
                intent_wg: next(),
            },
            HeadKind::Crf => Head::Crf {
                emit_w: next(),
                emit_b: next(),
                transitions: next(),
                intent_wg: next(),
            },
        };
        Params {
            fwd,
            bwd,
            w_a,
            head,
        }
    }
}

/// Shapes of every tensor for `cfg`, in canonical order.
pub fn shapes(cfg: &ModelConfig) -> Params<(usize, usize)> {
    let (d, h, l, k, n) = (
        cfg.embedding_dim,
        cfg.hidden,
        cfg.latent,
        cfg.num_slots,
        cfg.num_intents,
    );
    let lstm = || Lstm {
        wx: (d, 4 * h),
        wh: (h, 4 * h),
        b: (1, 4 * h),
    };
    let head = match cfg.head {
        HeadKind::Lvm => Head::Lvm {
            slot_wr: (2 * h, 2 * l),
            slot_br: (1, 2 * l),
            intent_wr: (2 * h, 2 * l),
            intent_br: (1, 2 * l),
            slot_wg: (l, k),
            intent_wg: (l, n),
        },
        HeadKind::Mlp => Head::Mlp {
            slot_w: (2 * h, l),
            slot_b: (1, l),
            intent_w: (2 * h, l),
            intent_b: (1, l),
            slot_wg: (l, k),
            intent_wg: (l, n),
        },
        HeadKind::Crf => Head::Crf {
            emit_w: (2 * h, k),
            emit_b: (1, k),
            transitions: (k, k),
            intent_wg: (2 * h, n),
        },
    };
    Params {
        fwd: lstm(),
        bwd: lstm(),
        w_a: (2 * h, 1),
        head,
    }
}

const RECURRENT_RANGE: f64 = 0.08;

fn uniform(shape: (usize, usize), limit: f64, rng: &mut Rng) -> Matrix {
    let data = (0..shape.0 * shape.1)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Matrix::from_vec(shape.0, shape.1, data).expect("length matches shape")
}

impl ModelParams {
    /// LSTM weights uniform in `±0.08` with forget bias 1; projections
    /// Xavier-uniform; other biases and CRF transitions zero.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let p = shapes(cfg).map(|name, &shape| {
            let is_bias = shape.0 == 1 && name != "w_a";
            if name == "fwd.b" || name == "bwd.b" {
                let mut b = Matrix::zeros(1, 4 * h);
                for j in h..2 * h {
                    b.set(0, j, 1.0);
                }
                b
            } else if name.starts_with("fwd") || name.starts_with("bwd") {
                uniform(shape, RECURRENT_RANGE, rng)
            } else if is_bias || name == "crf.transitions" {
                Matrix::zeros(shape.0, shape.1)
            } else {
                let limit = (6.0 / (shape.0 + shape.1) as f64).sqrt();
                uniform(shape, limit, rng)
            }
        });
        Ok(p)
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        shapes(cfg).map(|_, &(r, c)| Matrix::zeros(r, c))
    }

    /// Fails unless every tensor matches `cfg` and is finite.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.kind() != cfg.head {
            return Err(Error::Data(format!(
                "parameters are for a {} head, config says {}",
                self.kind(),
                cfg.head
            )));
        }
        let expected = shapes(cfg);
        for ((name, m), (_, &shape)) in self.entries().into_iter().zip(expected.entries()) {
            if m.shape() != shape {
                return Err(Error::Data(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    m.shape()
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("tensor `{name}`")));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.values().iter().map(|m| m.len()).sum()
    }

    /// Records every tensor on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Params<NodeId> {
        self.map(|_, m| tape.leaf(m.clone()))
    }

    /// Records every tensor on `tape` as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Params<NodeId> {
        self.map(|_, m| tape.constant(m.clone()))
    }
}
