//! Binary model container. The layout is documented in `docs/model-format.md`;
//! all integers and floats are little-endian.

use std::io::{Cursor, Read};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use thiserror::Error;

use super::forest::Forest;
use super::gbdt::{GbdtModel, RegNode, RegTree};
use super::knn::{KnnModel, Metric};
use super::linear::LinearModel;
use super::mlp::MlpModel;
use super::svm::{Kernel, SvmModel};
use super::tree::{DecisionTree, Node};
use super::{ClassifierKind, HyperParams, ModelBody, TrainedModel};

pub const MAGIC: &[u8; 4] = b"DFOM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ModelFormatError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown classifier code {0}")]
    UnknownKind(u8),
    #[error("model file truncated")]
    Truncated,
    #[error("invalid model file: {0}")]
    Invalid(String),
}

impl From<std::io::Error> for ModelFormatError {
    fn from(_: std::io::Error) -> Self {
        ModelFormatError::Truncated
    }
}

fn invalid(msg: impl Into<String>) -> ModelFormatError {
    ModelFormatError::Invalid(msg.into())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.write_u16::<LE>(v).expect("vec write");
    }
    fn u32(&mut self, v: usize) {
        self.0
            .write_u32::<LE>(u32::try_from(v).expect("value fits u32"))
            .expect("vec write");
    }
    fn u64(&mut self, v: u64) {
        self.0.write_u64::<LE>(v).expect("vec write");
    }
    fn f64(&mut self, v: f64) {
        self.0.write_f64::<LE>(v).expect("vec write");
    }
    fn floats<'a>(&mut self, v: impl IntoIterator<Item = &'a f64>) {
        for x in v {
            self.f64(*x);
        }
    }
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn u8(&mut self) -> Result<u8, ModelFormatError> {
        Ok(self.0.read_u8()?)
    }
    fn u16(&mut self) -> Result<u16, ModelFormatError> {
        Ok(self.0.read_u16::<LE>()?)
    }
    fn u32(&mut self) -> Result<usize, ModelFormatError> {
        Ok(self.0.read_u32::<LE>()? as usize)
    }
    fn u64(&mut self) -> Result<u64, ModelFormatError> {
        Ok(self.0.read_u64::<LE>()?)
    }
    fn f64(&mut self) -> Result<f64, ModelFormatError> {
        Ok(self.0.read_f64::<LE>()?)
    }
    fn remaining(&self) -> usize {
        self.0.get_ref().len() - self.0.position() as usize
    }
    /// Reads `n` floats, refusing counts the remaining bytes cannot hold.
    fn floats(&mut self, n: usize) -> Result<Vec<f64>, ModelFormatError> {
        if n.checked_mul(8).is_none_or(|b| b > self.remaining()) {
            return Err(ModelFormatError::Truncated);
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn matrix(&mut self, r: usize, c: usize) -> Result<Array2<f64>, ModelFormatError> {
        let n = r
            .checked_mul(c)
            .ok_or_else(|| invalid("matrix size overflow"))?;
        Ok(Array2::from_shape_vec((r, c), self.floats(n)?).expect("length matches"))
    }
}

/// Serializes a model; `read_model(&write_model(m)) == m`.
pub fn write_model(m: &TrainedModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(FORMAT_VERSION);
    w.u8(m.kind.code());
    w.u32(m.n_classes);
    w.u32(m.n_features);
    w.u64(m.seed);
    let params = m.params.to_json();
    w.u32(params.len());
    w.0.extend_from_slice(params.as_bytes());
    match &m.body {
        ModelBody::Constant { class } => {
            w.u8(0);
            w.u32(*class);
        }
        body => {
            w.u8(1);
            write_body(&mut w, body);
        }
    }
    w.0
}

fn write_body(w: &mut Writer, body: &ModelBody) {
    match body {
        ModelBody::Constant { .. } => unreachable!("handled by caller"),
        ModelBody::Logistic(m) => {
            w.floats(&m.weights);
            w.floats(&m.intercept);
        }
        ModelBody::Knn(m) => {
            w.u32(m.k);
            w.u8(match m.metric {
                Metric::Euclidean => 0,
                Metric::Manhattan => 1,
            });
            w.u32(m.x.nrows());
            w.floats(&m.x);
            for &l in &m.y {
                w.u32(l);
            }
        }
        ModelBody::Svm(m) => {
            match m.kernel {
                Kernel::Linear => {
                    w.u8(0);
                    w.f64(0.0);
                }
                Kernel::Rbf { gamma } => {
                    w.u8(1);
                    w.f64(gamma);
                }
            }
            w.f64(m.c);
            w.u32(m.support.nrows());
            w.floats(&m.support);
            for c in &m.coef {
                w.floats(c);
            }
        }
        ModelBody::Mlp(m) => {
            w.u32(m.b1.len());
            w.floats(&m.w1);
            w.floats(&m.b1);
            w.floats(&m.w2);
            w.floats(&m.b2);
        }
        ModelBody::Forest(f) => {
            w.u32(f.trees.len());
            for t in &f.trees {
                w.u64(t.n_samples as u64);
                w.u32(t.nodes.len());
                for n in &t.nodes {
                    match n {
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                            gain,
                        } => {
                            w.u8(0);
                            w.u32(*feature);
                            w.f64(*threshold);
                            w.u32(*left);
                            w.u32(*right);
                            w.f64(*gain);
                        }
                        Node::Leaf { distribution } => {
                            w.u8(1);
                            w.floats(distribution);
                        }
                    }
                }
            }
        }
        ModelBody::Gbdt(g) => {
            w.u32(g.stages.len());
            w.floats(&g.init);
            for tree in g.stages.iter().flatten() {
                w.u32(tree.nodes.len());
                for n in &tree.nodes {
                    match n {
                        RegNode::Split {
                            feature,
                            threshold,
                            left,
                            right,
                            gain,
                        } => {
                            w.u8(0);
                            w.u32(*feature);
                            w.f64(*threshold);
                            w.u32(*left);
                            w.u32(*right);
                            w.f64(*gain);
                        }
                        RegNode::Leaf { value } => {
                            w.u8(1);
                            w.f64(*value);
                        }
                    }
                }
            }
        }
    }
}

/// Parses a model written by [`write_model`], validating every index so a
/// successfully read model cannot panic at predict time.
pub fn read_model(bytes: &[u8]) -> Result<TrainedModel, ModelFormatError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(ModelFormatError::BadMagic);
    }
    let mut r = Reader(Cursor::new(bytes));
    r.0.set_position(4);
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(ModelFormatError::UnsupportedVersion(version));
    }
    let code = r.u8()?;
    let kind = ClassifierKind::from_code(code).ok_or(ModelFormatError::UnknownKind(code))?;
    let k = r.u32()?;
    let d = r.u32()?;
    if k < 2 || d == 0 {
        return Err(invalid("class count must be >= 2 and width >= 1"));
    }
    let seed = r.u64()?;
    let plen = r.u32()?;
    if plen > r.remaining() {
        return Err(ModelFormatError::Truncated);
    }
    let mut pbytes = vec![0; plen];
    r.0.read_exact(&mut pbytes)?;
    let params = std::str::from_utf8(&pbytes)
        .ok()
        .and_then(|s| HyperParams::from_json(s).ok())
        .ok_or_else(|| invalid("params are not a JSON object"))?;
    let body = match r.u8()? {
        0 => {
            let class = r.u32()?;
            if class >= k {
                return Err(invalid("constant class out of range"));
            }
            ModelBody::Constant { class }
        }
        1 => read_body(&mut r, kind, k, d)?,
        t => return Err(invalid(format!("unknown body tag {t}"))),
    };
    if r.remaining() != 0 {
        return Err(invalid(format!("{} trailing bytes", r.remaining())));
    }
    Ok(TrainedModel {
        kind,
        n_classes: k,
        n_features: d,
        seed,
        params,
        body,
    })
}

fn child(i: usize, c: usize, len: usize) -> Result<usize, ModelFormatError> {
    if c <= i || c >= len {
        return Err(invalid(format!("node {i} has out-of-order child {c}")));
    }
    Ok(c)
}

fn read_body(
    r: &mut Reader<'_>,
    kind: ClassifierKind,
    k: usize,
    d: usize,
) -> Result<ModelBody, ModelFormatError> {
    Ok(match kind {
        ClassifierKind::Lr => ModelBody::Logistic(LinearModel {
            weights: r.matrix(k, d)?,
            intercept: Array1::from(r.floats(k)?),
        }),
        ClassifierKind::Knn => {
            let kn = r.u32()?;
            let metric = match r.u8()? {
                0 => Metric::Euclidean,
                1 => Metric::Manhattan,
                t => return Err(invalid(format!("unknown metric {t}"))),
            };
            let n = r.u32()?;
            if kn == 0 || n == 0 {
                return Err(invalid("empty neighbour model"));
            }
            let x = r.matrix(n, d)?;
            let y = (0..n)
                .map(|_| {
                    let l = r.u32()?;
                    if l >= k {
                        Err(invalid("neighbour label out of range"))
                    } else {
                        Ok(l)
                    }
                })
                .collect::<Result<_, _>>()?;
            ModelBody::Knn(KnnModel {
                k: kn,
                metric,
                x,
                y,
                n_classes: k,
            })
        }
        ClassifierKind::Svm => {
            let tag = r.u8()?;
            let gamma = r.f64()?;
            let kernel = match tag {
                0 => Kernel::Linear,
                1 => Kernel::Rbf { gamma },
                t => return Err(invalid(format!("unknown kernel {t}"))),
            };
            let c = r.f64()?;
            let ns = r.u32()?;
            let support = r.matrix(ns, d)?;
            let coef = (0..k).map(|_| r.floats(ns)).collect::<Result<_, _>>()?;
            ModelBody::Svm(SvmModel {
                kernel,
                c,
                support,
                coef,
            })
        }
        ClassifierKind::Mlp => {
            let h = r.u32()?;
            if h == 0 {
                return Err(invalid("no hidden units"));
            }
            ModelBody::Mlp(MlpModel {
                w1: r.matrix(d, h)?,
                b1: Array1::from(r.floats(h)?),
                w2: r.matrix(h, k)?,
                b2: Array1::from(r.floats(k)?),
            })
        }
        ClassifierKind::Rf | ClassifierKind::Et => {
            let nt = r.u32()?;
            let mut trees = Vec::with_capacity(nt.min(r.remaining()));
            for _ in 0..nt {
                let n_samples = r.u64()? as usize;
                let nn = r.u32()?;
                if nn == 0 {
                    return Err(invalid("empty tree"));
                }
                let mut nodes = Vec::with_capacity(nn.min(r.remaining()));
                for i in 0..nn {
                    nodes.push(match r.u8()? {
                        0 => {
                            let feature = r.u32()?;
                            if feature >= d {
                                return Err(invalid("split feature out of range"));
                            }
                            Node::Split {
                                feature,
                                threshold: r.f64()?,
                                left: child(i, r.u32()?, nn)?,
                                right: child(i, r.u32()?, nn)?,
                                gain: r.f64()?,
                            }
                        }
                        1 => Node::Leaf {
                            distribution: r.floats(k)?,
                        },
                        t => return Err(invalid(format!("unknown node tag {t}"))),
                    });
                }
                trees.push(DecisionTree {
                    nodes,
                    n_classes: k,
                    n_samples,
                });
            }
            ModelBody::Forest(Forest {
                trees,
                n_classes: k,
            })
        }
        ClassifierKind::Gbdt => {
            let ns = r.u32()?;
            let init = r.floats(k)?;
            let mut stages = Vec::with_capacity(ns.min(r.remaining()));
            for _ in 0..ns {
                let mut stage = Vec::with_capacity(k);
                for _ in 0..k {
                    let nn = r.u32()?;
                    if nn == 0 {
                        return Err(invalid("empty tree"));
                    }
                    let mut nodes = Vec::with_capacity(nn.min(r.remaining()));
                    for i in 0..nn {
                        nodes.push(match r.u8()? {
                            0 => {
                                let feature = r.u32()?;
                                if feature >= d {
                                    return Err(invalid("split feature out of range"));
                                }
                                RegNode::Split {
                                    feature,
                                    threshold: r.f64()?,
                                    left: child(i, r.u32()?, nn)?,
                                    right: child(i, r.u32()?, nn)?,
                                    gain: r.f64()?,
                                }
                            }
                            1 => RegNode::Leaf { value: r.f64()? },
                            t => return Err(invalid(format!("unknown node tag {t}"))),
                        });
                    }
                    stage.push(RegTree { nodes });
                }
                stages.push(stage);
            }
            ModelBody::Gbdt(GbdtModel {
                n_classes: k,
                init,
                stages,
            })
        }
    })
}
