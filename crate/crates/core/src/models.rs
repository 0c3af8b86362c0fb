//! Sentence encoders and the bag-of-sentences rating head.
//!
//! Both architectures share the same gate layout: input `i`, forget `f`,
//! candidate `u` and output `o`, each with an input matrix `U`, a
//! recurrent matrix `V` and a bias `b`. The word-sequence model runs an LSTM
//! left to right over each sentence; the dependency-tree model runs a
//! child-sum TreeLSTM from the leaves to the root, with one forget gate per
//! child. Sentence embeddings are mean-pooled and mapped to 14 sigmoid
//! outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{gradcheck_many, AutodiffError, GradcheckReport, Graph, Shape, Tensor, Var};
use crate::corpus::{DepTree, Vocab, WordVectors, NUM_CATEGORIES};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("empty sentence")]
    EmptySentence,
    #[error("talk has no sentences")]
    NoSentences,
    #[error("unknown tag `{tag}` ({kind})")]
    UnknownTag { kind: &'static str, tag: String },
    #[error("parameter `{name}`: expected shape {expected}, got {got}")]
    ParamShape { name: String, expected: Shape, got: Shape },
    #[error("expected {expected} parameter tensors, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("input of kind {0} does not match the model")]
    InputKind(&'static str),
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub const GATES: [&str; 4] = ["i", "f", "u", "o"];
const I: usize = 0;
const F: usize = 1;
const U: usize = 2;
const O: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    WordSeq,
    DepTree,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::WordSeq => "word-seq",
            ModelKind::DepTree => "dep-tree",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "word-seq" => Some(ModelKind::WordSeq),
            "dep-tree" => Some(ModelKind::DepTree),
            _ => None,
        }
    }
}

/// Everything that fixes parameter shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub kind: ModelKind,
    pub word_dim: usize,
    pub hidden: usize,
    pub outputs: usize,
    /// POS embedding width (dep-tree only; 0 disables).
    pub pos_dim: usize,
    /// Dependency-type embedding width (dep-tree only; 0 disables).
    pub dep_dim: usize,
    pub n_pos: usize,
    pub n_dep: usize,
}

impl Architecture {
    pub fn word_seq(word_dim: usize, hidden: usize) -> Self {
        Self {
            kind: ModelKind::WordSeq,
            word_dim,
            hidden,
            outputs: NUM_CATEGORIES,
            pos_dim: 0,
            dep_dim: 0,
            n_pos: 0,
            n_dep: 0,
        }
    }

    pub fn dep_tree(word_dim: usize, hidden: usize, pos_dim: usize, dep_dim: usize, vocab: &Vocab) -> Self {
        Self {
            kind: ModelKind::DepTree,
            word_dim,
            hidden,
            outputs: NUM_CATEGORIES,
            pos_dim,
            dep_dim,
            n_pos: vocab.pos_tags().len(),
            n_dep: vocab.dep_types().len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.kind {
            ModelKind::WordSeq => self.word_dim,
            ModelKind::DepTree => self.word_dim + self.pos_dim + self.dep_dim,
        }
    }

    fn has_pos(&self) -> bool {
        self.kind == ModelKind::DepTree && self.pos_dim > 0 && self.n_pos > 0
    }

    fn has_dep(&self) -> bool {
        self.kind == ModelKind::DepTree && self.dep_dim > 0 && self.n_dep > 0
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_specs(&self) -> Vec<(String, Shape)> {
        let (h, x) = (self.hidden, self.input_dim());
        let mut specs = Vec::new();
        for g in GATES {
            specs.push((format!("U_{g}"), Shape::Matrix(h, x)));
        }
        for g in GATES {
            specs.push((format!("V_{g}"), Shape::Matrix(h, h)));
        }
        for g in GATES {
            specs.push((format!("b_{g}"), Shape::Vector(h)));
        }
        specs.push(("W".into(), Shape::Matrix(self.outputs, h)));
        specs.push(("b_r".into(), Shape::Vector(self.outputs)));
        if self.has_pos() {
            specs.push(("pos_emb".into(), Shape::Matrix(self.n_pos, self.pos_dim)));
        }
        if self.has_dep() {
            specs.push(("dep_emb".into(), Shape::Matrix(self.n_dep, self.dep_dim)));
        }
        specs
    }
}

const V_OFFSET: usize = 4;
const B_OFFSET: usize = 8;
const W_INDEX: usize = 12;
const BR_INDEX: usize = 13;

/// Learnable parameters of either architecture, stored in
/// [`Architecture::param_specs`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    arch: Architecture,
    tensors: Vec<Tensor>,
}

impl Params {
    /// Weights ~ U(−1/√fan_in, 1/√fan_in), biases 0, tag embeddings
    /// ~ U(−0.05, 0.05).
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = arch
            .param_specs()
            .into_iter()
            .map(|(name, shape)| {
                let data = match (name.as_str(), shape) {
                    ("pos_emb" | "dep_emb", _) => (0..shape.numel()).map(|_| rng.gen_range(-0.05..=0.05)).collect(),
                    (_, Shape::Matrix(_, fan_in)) => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        (0..shape.numel()).map(|_| rng.gen_range(-bound..=bound)).collect()
                    }
                    (_, Shape::Vector(n)) => vec![0.0; n],
                };
                Tensor::new(shape, data).expect("spec shape")
            })
            .collect();
        Self { arch, tensors }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let tensors = arch.param_specs().into_iter().map(|(_, s)| Tensor::zeros(s)).collect();
        Self { arch, tensors }
    }

    /// Wraps existing tensors, checking count and shapes against `arch`.
    pub fn from_tensors(arch: Architecture, tensors: Vec<Tensor>) -> Result<Self> {
        let specs = arch.param_specs();
        if specs.len() != tensors.len() {
            return Err(ModelError::ParamCount {
                expected: specs.len(),
                got: tensors.len(),
            });
        }
        for ((name, shape), t) in specs.iter().zip(&tensors) {
            if *shape != t.shape() {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: *shape,
                    got: t.shape(),
                });
            }
        }
        Ok(Self { arch, tensors })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> Vec<String> {
        self.arch.param_specs().into_iter().map(|(n, _)| n).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names().iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names().iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    /// Indices of the recurrent `V` matrices.
    pub fn recurrent_indices() -> std::ops::Range<usize> {
        V_OFFSET..V_OFFSET + 4
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Adds every tensor to `graph` as a trainable leaf.
    pub fn bind(&self, graph: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| graph.param(t.clone())).collect()
    }
}

/// One node of a tree whose tags are already resolved to vocab indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedNode {
    pub word: Option<usize>,
    pub pos: usize,
    pub dep: usize,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTree {
    pub nodes: Vec<EncodedNode>,
    /// Children before parents; root last.
    pub order: Vec<usize>,
    pub root: usize,
}

impl EncodedTree {
    /// Resolves tokens against `vectors` (absent → zero vector) and tags
    /// against `vocab` (absent → error). Tokens are lowercased.
    pub fn encode(tree: &DepTree, vectors: &WordVectors, vocab: &Vocab) -> Result<Self> {
        let nodes = tree
            .nodes()
            .iter()
            .map(|n| {
                let pos = vocab.pos_index(&n.pos_tag).ok_or_else(|| ModelError::UnknownTag {
                    kind: "POS",
                    tag: n.pos_tag.clone(),
                })?;
                let dep = vocab.dep_index(&n.dep_type).ok_or_else(|| ModelError::UnknownTag {
                    kind: "dependency",
                    tag: n.dep_type.clone(),
                })?;
                Ok(EncodedNode {
                    word: vectors.id(&n.token.to_lowercase()),
                    pos,
                    dep,
                    children: n.children.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nodes,
            order: tree.post_order(),
            root: tree.root(),
        })
    }

    /// Tree in which token `k` is the only child of token `k + 1`; the last
    /// token is the root.
    pub fn chain(words: &[Option<usize>]) -> Self {
        let n = words.len();
        let nodes = words
            .iter()
            .enumerate()
            .map(|(k, &word)| EncodedNode {
                word,
                pos: 0,
                dep: 0,
                children: if k == 0 { vec![] } else { vec![k - 1] },
            })
            .collect();
        Self {
            nodes,
            order: (0..n).collect(),
            root: n.saturating_sub(1),
        }
    }
}

/// Model input for one talk.
#[derive(Debug, Clone, PartialEq)]
pub enum TalkInput {
    /// Word ids per sentence (`None` = out of vocabulary).
    Sequences(Vec<Vec<Option<usize>>>),
    Trees(Vec<EncodedTree>),
}

impl TalkInput {
    pub fn sentence_count(&self) -> usize {
        match self {
            TalkInput::Sequences(s) => s.len(),
            TalkInput::Trees(t) => t.len(),
        }
    }

    pub fn sequences(sentences: &[Vec<String>], vectors: &WordVectors) -> Self {
        TalkInput::Sequences(
            sentences
                .iter()
                .map(|s| s.iter().map(|t| vectors.id(t)).collect())
                .collect(),
        )
    }
}

/// Per-pass dropout masks; `None` means evaluation mode.
#[derive(Debug, Clone, Default)]
pub struct Masks {
    /// One mask per recurrent matrix, already scaled by `1/(1−p)`.
    pub recurrent: Option<[Tensor; 4]>,
    /// Mask for the pooled sentence vector.
    pub pooled: Option<Tensor>,
}

/// Parameter tensors of a model bound into one graph.
pub struct Bound {
    arch: Architecture,
    u: [Var; 4],
    v: [Var; 4],
    b: [Var; 4],
    w: Var,
    b_r: Var,
    pos_emb: Option<Var>,
    dep_emb: Option<Var>,
}

impl Bound {
    pub fn new(arch: &Architecture, vars: &[Var]) -> Result<Self> {
        let expected = arch.param_specs().len();
        if vars.len() != expected {
            return Err(ModelError::ParamCount {
                expected,
                got: vars.len(),
            });
        }
        let mut extra = vars[BR_INDEX + 1..].iter().copied();
        Ok(Self {
            arch: arch.clone(),
            u: std::array::from_fn(|g| vars[g]),
            v: std::array::from_fn(|g| vars[V_OFFSET + g]),
            b: std::array::from_fn(|g| vars[B_OFFSET + g]),
            w: vars[W_INDEX],
            b_r: vars[BR_INDEX],
            pos_emb: if arch.has_pos() { extra.next() } else { None },
            dep_emb: if arch.has_dep() { extra.next() } else { None },
        })
    }

    /// Replaces each `V` by `V ⊙ mask` for the rest of this graph.
    pub fn apply_recurrent_masks(&mut self, graph: &mut Graph, masks: &[Tensor; 4]) -> Result<()> {
        for (v, m) in self.v.iter_mut().zip(masks) {
            let mask = graph.constant(m.clone());
            *v = graph.hadamard(*v, mask)?;
        }
        Ok(())
    }

    fn zeros(&self, graph: &mut Graph) -> Var {
        graph.constant(Tensor::zeros(Shape::Vector(self.arch.hidden)))
    }

    fn word(&self, graph: &mut Graph, vectors: &WordVectors, id: Option<usize>) -> Var {
        let data = match id {
            Some(id) => vectors.row(id).to_vec(),
            None => vec![0.0; self.arch.word_dim],
        };
        graph.constant(Tensor::vector(data))
    }

    /// `U_g x + V_g h + b_g`
    fn pre_activation(&self, graph: &mut Graph, gate: usize, x: Var, h: Var) -> Result<Var> {
        let ux = graph.matvec(self.u[gate], x)?;
        let vh = graph.matvec(self.v[gate], h)?;
        let s = graph.add(ux, vh)?;
        Ok(graph.add(s, self.b[gate])?)
    }

    /// Final hidden state of the LSTM run over `words` from zero state.
    pub fn lstm_sentence(&self, graph: &mut Graph, vectors: &WordVectors, words: &[Option<usize>]) -> Result<Var> {
        if words.is_empty() {
            return Err(ModelError::EmptySentence);
        }
        let mut h = self.zeros(graph);
        let mut c = self.zeros(graph);
        for &id in words {
            let x = self.word(graph, vectors, id);
            let (hn, cn) = self.lstm_step(graph, x, h, c)?;
            h = hn;
            c = cn;
        }
        Ok(h)
    }

    fn lstm_step(&self, graph: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let pi = self.pre_activation(graph, I, x, h)?;
        let i = graph.sigmoid(pi);
        let pf = self.pre_activation(graph, F, x, h)?;
        let f = graph.sigmoid(pf);
        let pu = self.pre_activation(graph, U, x, h)?;
        let u = graph.tanh(pu);
        let po = self.pre_activation(graph, O, x, h)?;
        let o = graph.sigmoid(po);
        let keep = graph.hadamard(f, c)?;
        let write = graph.hadamard(i, u)?;
        let c_new = graph.add(keep, write)?;
        let tc = graph.tanh(c_new);
        let h_new = graph.hadamard(o, tc)?;
        Ok((h_new, c_new))
    }

    fn tree_input(&self, graph: &mut Graph, vectors: &WordVectors, node: &EncodedNode) -> Result<Var> {
        let w = self.word(graph, vectors, node.word);
        let mut parts = vec![w];
        if let Some(table) = self.pos_emb {
            parts.push(graph.row(table, node.pos)?);
        }
        if let Some(table) = self.dep_emb {
            parts.push(graph.row(table, node.dep)?);
        }
        if parts.len() == 1 {
            Ok(w)
        } else {
            Ok(graph.concat(&parts)?)
        }
    }

    /// Root hidden state of the child-sum TreeLSTM. A leaf sees a single
    /// zero pseudo-child.
    pub fn treelstm_sentence(&self, graph: &mut Graph, vectors: &WordVectors, tree: &EncodedTree) -> Result<Var> {
        if tree.nodes.is_empty() {
            return Err(ModelError::EmptySentence);
        }
        let mut states: Vec<Option<(Var, Var)>> = vec![None; tree.nodes.len()];
        for &t in &tree.order {
            let node = &tree.nodes[t];
            let x = self.tree_input(graph, vectors, node)?;
            let children: Vec<(Var, Var)> = if node.children.is_empty() {
                let z = self.zeros(graph);
                vec![(z, z)]
            } else {
                node.children
                    .iter()
                    .map(|&k| states[k].expect("children precede parents"))
                    .collect()
            };
            let hs: Vec<Var> = children.iter().map(|(h, _)| *h).collect();
            let h_sum = graph.sum_vectors(&hs)?;

            let pi = self.pre_activation(graph, I, x, h_sum)?;
            let i = graph.sigmoid(pi);
            let mut kept = Vec::with_capacity(children.len());
            for &(h_k, c_k) in &children {
                let pf = self.pre_activation(graph, F, x, h_k)?;
                let f_k = graph.sigmoid(pf);
                kept.push(graph.hadamard(f_k, c_k)?);
            }
            let pu = self.pre_activation(graph, U, x, h_sum)?;
            let u = graph.tanh(pu);
            let po = self.pre_activation(graph, O, x, h_sum)?;
            let o = graph.sigmoid(po);

            let keep = graph.sum_vectors(&kept)?;
            let write = graph.hadamard(i, u)?;
            let c = graph.add(keep, write)?;
            let tc = graph.tanh(c);
            let h = graph.hadamard(o, tc)?;
            states[t] = Some((h, c));
        }
        Ok(states[tree.root].expect("root evaluated").0)
    }

    /// Mean-pools sentence embeddings and applies `σ(W h + b_r)`.
    pub fn head(&self, graph: &mut Graph, sentences: &[Var], pooled_mask: Option<&Tensor>) -> Result<Var> {
        if sentences.is_empty() {
            return Err(ModelError::NoSentences);
        }
        let mut h = graph.mean_vectors(sentences)?;
        if let Some(m) = pooled_mask {
            let mask = graph.constant(m.clone());
            h = graph.hadamard(h, mask)?;
        }
        let wh = graph.matvec(self.w, h)?;
        let logits = graph.add(wh, self.b_r)?;
        Ok(graph.sigmoid(logits))
    }

    /// 14 rating probabilities for one talk.
    pub fn predict(&self, graph: &mut Graph, vectors: &WordVectors, input: &TalkInput, pooled_mask: Option<&Tensor>) -> Result<Var> {
        let embeddings = match (self.arch.kind, input) {
            (ModelKind::WordSeq, TalkInput::Sequences(sentences)) => sentences
                .iter()
                .map(|s| self.lstm_sentence(graph, vectors, s))
                .collect::<Result<Vec<_>>>()?,
            (ModelKind::DepTree, TalkInput::Trees(trees)) => trees
                .iter()
                .map(|t| self.treelstm_sentence(graph, vectors, t))
                .collect::<Result<Vec<_>>>()?,
            (_, TalkInput::Sequences(_)) => return Err(ModelError::InputKind("sequences")),
            (_, TalkInput::Trees(_)) => return Err(ModelError::InputKind("trees")),
        };
        self.head(graph, &embeddings, pooled_mask)
    }
}

/// Builds the full forward graph for one talk: binds `params`, applies
/// masks, returns `(param vars, output var)`.
pub fn forward(
    graph: &mut Graph,
    params: &Params,
    vectors: &WordVectors,
    input: &TalkInput,
    masks: &Masks,
) -> Result<(Vec<Var>, Var)> {
    let vars = params.bind(graph);
    let out = forward_bound(graph, params.arch(), &vars, vectors, input, masks)?;
    Ok((vars, out))
}

pub fn forward_bound(
    graph: &mut Graph,
    arch: &Architecture,
    vars: &[Var],
    vectors: &WordVectors,
    input: &TalkInput,
    masks: &Masks,
) -> Result<Var> {
    let mut bound = Bound::new(arch, vars)?;
    if let Some(m) = &masks.recurrent {
        bound.apply_recurrent_masks(graph, m)?;
    }
    bound.predict(graph, vectors, input, masks.pooled.as_ref())
}

/// Evaluation-mode prediction.
pub fn predict(params: &Params, vectors: &WordVectors, input: &TalkInput) -> Result<[f64; NUM_CATEGORIES]> {
    let mut graph = Graph::new();
    let vars: Vec<Var> = params.tensors().iter().map(|t| graph.constant(t.clone())).collect();
    let out = forward_bound(&mut graph, params.arch(), &vars, vectors, input, &Masks::default())?;
    let data = graph.value(out).data();
    let mut r = [0.0; NUM_CATEGORIES];
    r.copy_from_slice(&data[..NUM_CATEGORIES]);
    Ok(r)
}

/// Mean binary cross-entropy of `r` against 0/1 targets, in-graph.
pub fn bce(graph: &mut Graph, r: Var, targets: &[f64]) -> Result<Var> {
    let n = targets.len() as f64;
    let log_r = graph.log(r)?;
    let one_minus = graph.affine(r, -1.0, 1.0);
    let log_1m = graph.log(one_minus)?;
    let pos = graph.weighted_sum(log_r, targets.iter().map(|y| -y / n).collect())?;
    let neg = graph.weighted_sum(log_1m, targets.iter().map(|y| -(1.0 - y) / n).collect())?;
    Ok(graph.add(pos, neg)?)
}

/// Toy problem used by the gradient check: hidden 4, a 10-word vocabulary
/// of 5-dim vectors, two sentences.
pub struct ToyProblem {
    pub params: Params,
    pub vectors: WordVectors,
    pub input: TalkInput,
    pub targets: [f64; NUM_CATEGORIES],
}

pub fn toy_problem(kind: ModelKind, seed: u64) -> ToyProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word_dim = 5;
    let mut vectors = WordVectors::new(word_dim).expect("positive dim");
    for w in 0..10 {
        let v: Vec<f64> = (0..word_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        vectors.insert(&format!("w{w}"), &v);
    }
    let sentence = |rng: &mut ChaCha8Rng, len: usize| -> Vec<Option<usize>> {
        // Word 10 is out of vocabulary.
        (0..len).map(|_| Some(rng.gen_range(0..11)).filter(|&i| i < 10)).collect()
    };
    let lens = [3, 4];
    let (arch, input) = match kind {
        ModelKind::WordSeq => (
            Architecture::word_seq(word_dim, 4),
            TalkInput::Sequences(lens.iter().map(|&l| sentence(&mut rng, l)).collect()),
        ),
        ModelKind::DepTree => {
            let vocab = Vocab::new(
                ["NOUN", "VERB", "ADJ"].map(String::from),
                ["root", "nsubj"].map(String::from),
            );
            let trees = lens
                .iter()
                .map(|&l| {
                    let words = sentence(&mut rng, l);
                    let mut nodes: Vec<EncodedNode> = words
                        .iter()
                        .map(|&word| EncodedNode {
                            word,
                            pos: rng.gen_range(0..3),
                            dep: rng.gen_range(0..2),
                            children: vec![],
                        })
                        .collect();
                    // Node 0 is the root; others attach to an earlier node.
                    for k in 1..l {
                        let p = rng.gen_range(0..k);
                        nodes[p].children.push(k);
                    }
                    let mut order = Vec::new();
                    fn visit(nodes: &[EncodedNode], t: usize, order: &mut Vec<usize>) {
                        for &c in &nodes[t].children {
                            visit(nodes, c, order);
                        }
                        order.push(t);
                    }
                    visit(&nodes, 0, &mut order);
                    EncodedTree { nodes, order, root: 0 }
                })
                .collect();
            (Architecture::dep_tree(word_dim, 4, 3, 2, &vocab), TalkInput::Trees(trees))
        }
    };
    // Unit-scale weights and non-zero biases keep every gradient well away
    // from zero, where finite differences lose their relative accuracy.
    let mut params = Params::zeros(arch);
    for t in params.tensors_mut() {
        for x in t.data_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
    }
    let targets = std::array::from_fn(|_| rng.gen_range(0..2) as f64);
    ToyProblem {
        params,
        vectors,
        input,
        targets,
    }
}

/// Finite-difference step for [`check_gradients`]; balances truncation
/// against roundoff for the toy problem.
pub const MODEL_GRADCHECK_EPS: f64 = 3e-5;

/// Central-difference check of BCE gradients w.r.t. every parameter tensor.
pub fn check_gradients(problem: &ToyProblem, eps: f64, tol: f64) -> Result<GradcheckReport> {
    let arch = problem.params.arch().clone();
    let report = gradcheck_many(
        |graph, vars| {
            let out = forward_bound(graph, &arch, vars, &problem.vectors, &problem.input, &Masks::default())
                .map_err(to_autodiff)?;
            bce(graph, out, &problem.targets).map_err(to_autodiff)
        },
        problem.params.tensors(),
        eps,
        tol,
    )?;
    Ok(report)
}

fn to_autodiff(e: ModelError) -> AutodiffError {
    match e {
        ModelError::Autodiff(a) => a,
        other => panic!("toy problem is well-formed: {other}"),
    }
}
