//! Training, evaluation, and measurement loops.
//!
//! This module closes the loop around the model: an Adam-style optimizer
//! with linear warmup into inverse-square-root decay, a deterministic
//! classifier training loop that retains the best-dev parameters, accuracy
//! evaluation, a synthetic hierarchical task whose labels are computable
//! from tree structure but not from the flat token sequence, a
//! finite-difference gradient-check driver covering every parameter group,
//! attention-mass statistics over node vs. leaf keys, and an op-count
//! scaling benchmark for the accumulation kernel.
//!
//! Everything is deterministic given (seed, config, corpus): example
//! shuffling and dropout draw from dedicated `ChaCha8` streams, so two runs
//! with the same plan produce identical loss curves.
//!
//! Classification models record their class-label names in the otherwise
//! unused target vocabulary (entry order after the three reserved rows is
//! the head's class order), which makes a saved checkpoint sufficient to
//! evaluate with — see [`LabelMap::from_class_vocab`].

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accum::accumulate;
use crate::attention::{
    encoder_tree_self_attention, AttentionParams, AttnRecorder, DropoutCtx, EncoderOpts,
    PhiParams, TreeContext,
};
use crate::model::{
    FloatWidth, ModelConfig, ModelError, TaskKind, TreeModel, Vocab, Vocabs, BOS_ID,
};
use crate::tensor::{
    concat, counters, cross_entropy_mean, finite_diff_check, Element, FdConfig, FdReport,
    Gradients, ParamStore, Tape, Tensor, TensorError,
};
use crate::treebank::{
    balanced_binary_tree, encode_tree, join_forest, normalize_tree, parse_bracketed,
    LabeledTrees, NormalizeOptions, ParseTree, TreeError, FOREST_ROOT_LABEL,
};

/// Errors from planning, data preparation, or a training run.
#[derive(Debug, Error)]
pub enum TrainError {
    /// A plan or run request that cannot be executed as stated.
    #[error("plan error: {0}")]
    Plan(String),

    /// Corpus or label-space problem.
    #[error("data error: {0}")]
    Data(String),

    /// The loss or an intermediate value left the finite range.
    #[error("training diverged at update {step}: {detail}")]
    Diverged { step: usize, detail: String },

    /// A gradient check exceeded its tolerance.
    #[error("gradient check failed at {param}[{flat_index}]: analytic {analytic:e} vs numeric {numeric:e}")]
    GradCheck {
        param: String,
        flat_index: usize,
        analytic: f64,
        numeric: f64,
    },

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Tree(#[from] TreeError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

// ---------------------------------------------------------------------------
// training plans
// ---------------------------------------------------------------------------

/// Hyperparameters of one training run. The learning rate ramps linearly
/// to `lr` over `warmup` updates and then decays as `sqrt(warmup / t)`.
///
/// `lr = 0` is deliberately legal: it makes the run a no-op on the
/// parameters, which is useful as a plumbing check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPlan {
    /// Peak learning rate reached at the end of warmup.
    pub lr: f64,
    /// Warmup length in updates (≥ 1).
    pub warmup: usize,
    /// Total number of parameter updates.
    pub max_updates: usize,
    /// Batch budget counted in surface tokens (leaves).
    pub batch_tokens: usize,
    /// Decoupled L2 penalty added to the raw gradient; 0 disables it.
    pub weight_decay: f64,
    /// First-moment decay.
    pub beta1: f64,
    /// Second-moment decay.
    pub beta2: f64,
    /// Denominator stabilizer.
    pub eps: f64,
    /// Residual/embedding dropout rate installed into the model config by
    /// [`train_classifier`]; the classification recipes bundle dropout
    /// with the schedule.
    pub dropout: f64,
    /// Evaluate on dev every this many updates (0 = only after the final
    /// update). The best-dev parameters are the ones retained.
    pub eval_every: usize,
    /// Also train on every labelled proper subtree of each example
    /// (sentiment treebanks label every phrase). Off: root labels only.
    pub phrase_supervision: bool,
    /// Seed for shuffling and dropout streams.
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            lr: 1e-3,
            warmup: 200,
            max_updates: 1000,
            batch_tokens: 256,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            dropout: 0.1,
            eval_every: 100,
            phrase_supervision: false,
            seed: 1,
        }
    }
}

impl TrainPlan {
    /// Named training recipes.
    ///
    /// * `sst-tiny` — sentence-sentiment recipe: lr 7e-4, dropout 0.5,
    ///   8000 warmup updates, 2k-token batches.
    /// * `sva-tiny` — short-run recipe for agreement/IMDB-style tasks:
    ///   lr 0.01, 20 warmup updates, dropout 0.2.
    /// * `synth-tiny` — desk-scale recipe for the built-in synthetic task.
    pub fn preset(name: &str) -> Option<TrainPlan> {
        let base = TrainPlan::default();
        match name {
            "sst-tiny" => Some(TrainPlan {
                lr: 7e-4,
                warmup: 8000,
                max_updates: 15_000,
                batch_tokens: 2048,
                dropout: 0.5,
                eval_every: 500,
                ..base
            }),
            "sva-tiny" => Some(TrainPlan {
                lr: 0.01,
                warmup: 20,
                max_updates: 2000,
                batch_tokens: 2048,
                dropout: 0.2,
                eval_every: 200,
                ..base
            }),
            "synth-tiny" => Some(TrainPlan {
                lr: 2e-3,
                warmup: 100,
                max_updates: 1000,
                batch_tokens: 256,
                dropout: 0.1,
                eval_every: 100,
                seed: 7,
                ..base
            }),
            _ => None,
        }
    }

    /// # Errors
    /// Plan error naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TrainError::Plan(msg));
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad(format!("lr must be finite and ≥ 0, got {}", self.lr));
        }
        if self.warmup == 0 {
            return bad("warmup must be ≥ 1".to_string());
        }
        if self.max_updates == 0 {
            return bad("max_updates must be ≥ 1".to_string());
        }
        if self.warmup > self.max_updates {
            return bad(format!(
                "warmup ({}) must not exceed max_updates ({})",
                self.warmup, self.max_updates
            ));
        }
        if self.batch_tokens == 0 {
            return bad("batch_tokens must be ≥ 1".to_string());
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return bad(format!("weight_decay must be finite and ≥ 0, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be > 0, got {}", self.eps));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Applies one `key=value` override; keys match the field names.
    ///
    /// # Errors
    /// Plan error for an unknown key or an unparsable value.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                TrainError::Plan(format!("cannot parse {value:?} for plan key {key:?}"))
            })
        }
        match key {
            "lr" => self.lr = parse(key, value)?,
            "warmup" => self.warmup = parse(key, value)?,
            "max_updates" => self.max_updates = parse(key, value)?,
            "batch_tokens" => self.batch_tokens = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "phrase_supervision" => self.phrase_supervision = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(TrainError::Plan(format!("unknown plan key {key:?}"))),
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// label space
// ---------------------------------------------------------------------------

/// Class-label names in head order. Built sorted so the mapping is
/// independent of corpus order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    /// Collects the distinct example labels of a corpus, sorted.
    ///
    /// # Errors
    /// Data error when fewer than two distinct labels occur.
    pub fn from_corpus(corpus: &[LabeledTrees]) -> Result<LabelMap> {
        let mut names: Vec<String> = corpus.iter().map(|ex| ex.label.clone()).collect();
        names.sort();
        names.dedup();
        if names.len() < 2 {
            return Err(TrainError::Data(format!(
                "classification needs at least two distinct labels, found {}",
                names.len()
            )));
        }
        Ok(LabelMap { names })
    }

    /// Recovers the label map a classification checkpoint stored in its
    /// target vocabulary (entries after the three reserved rows).
    ///
    /// # Errors
    /// Data error when the vocabulary holds fewer than two class names.
    pub fn from_class_vocab(v: &Vocab) -> Result<LabelMap> {
        let names: Vec<String> = (3..v.len())
            .filter_map(|i| v.token(i).map(str::to_string))
            .collect();
        if names.len() < 2 {
            return Err(TrainError::Data(
                "checkpoint stores no class-label names".to_string(),
            ));
        }
        Ok(LabelMap { names })
    }

    /// The vocabulary form stored inside classification checkpoints.
    pub fn to_class_vocab(&self) -> Vocab {
        Vocab::build(&self.names)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Head index of a label.
    ///
    /// # Errors
    /// Data error naming the label and the known set.
    pub fn id(&self, label: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == label)
            .ok_or_else(|| {
                TrainError::Data(format!(
                    "label {label:?} is not in the training label set {:?}",
                    self.names
                ))
            })
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

// ---------------------------------------------------------------------------
// vocabulary construction
// ---------------------------------------------------------------------------

/// Token and node-label vocabularies from a corpus, mirroring the exact
/// preprocessing the forward pass applies (multi-tree documents joined
/// under the shared root, then normalized per config). The forest root
/// label is always included so single-tree training corpora can still
/// evaluate multi-tree documents. Targets are left empty; sequence tasks
/// supply their own.
pub fn build_vocabs(cfg: &ModelConfig, corpus: &[LabeledTrees]) -> Result<Vocabs> {
    let norm = NormalizeOptions {
        collapse_unary: cfg.collapse_unary,
        drop_preterminals: cfg.drop_preterminals,
    };
    let mut tokens: Vec<String> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for ex in corpus {
        let doc = doc_tree(&ex.trees)?;
        collect_symbols(&normalize_tree(&doc, &norm), &mut tokens, &mut labels);
    }
    labels.push(FOREST_ROOT_LABEL.to_string());
    Ok(Vocabs {
        tokens: Vocab::build(tokens),
        labels: Vocab::build(labels),
        targets: Vocab::empty(),
    })
}

fn collect_symbols(tree: &ParseTree, tokens: &mut Vec<String>, labels: &mut Vec<String>) {
    match tree {
        ParseTree::Leaf { token } => tokens.push(token.clone()),
        ParseTree::Node { label, children } => {
            labels.push(label.clone());
            for c in children {
                collect_symbols(c, tokens, labels);
            }
        }
    }
}

fn doc_tree(trees: &[ParseTree]) -> Result<ParseTree> {
    match trees.len() {
        0 => Err(TrainError::Data("document with no trees".to_string())),
        1 => Ok(trees[0].clone()),
        _ => Ok(join_forest(trees)?),
    }
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

/// Adam with bias correction; moments are kept in f64 regardless of the
/// model's element type, indexed by parameter-store order.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    warmup: f64,
    t: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new<E: Element>(plan: &TrainPlan, params: &ParamStore<E>) -> Adam {
        let sizes: Vec<usize> = params.iter().map(|(_, t)| t.data().len()).collect();
        Adam {
            lr: plan.lr,
            beta1: plan.beta1,
            beta2: plan.beta2,
            eps: plan.eps,
            weight_decay: plan.weight_decay,
            warmup: plan.warmup as f64,
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// Linear ramp to the peak over warmup, then inverse-sqrt decay.
    fn lr_at(&self, t: usize) -> f64 {
        let t = t as f64;
        self.lr * (t / self.warmup).min((self.warmup / t).sqrt())
    }

    fn step<E: Element>(
        &mut self,
        params: &mut ParamStore<E>,
        watched: &ParamStore<E>,
        grads: &Gradients<E>,
    ) -> Result<()> {
        self.t += 1;
        let lr_t = self.lr_at(self.t);
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let names: Vec<String> = watched.iter().map(|(n, _)| n.to_string()).collect();
        for (idx, name) in names.iter().enumerate() {
            let grad = grads.wrt_or_zeros(watched.require(name)?);
            let gd = grad.data();
            let (shape, xs): (Vec<usize>, Vec<f64>) = {
                let cur = params.require(name)?;
                (
                    cur.shape().to_vec(),
                    cur.data().iter().map(|e| e.to_f64()).collect(),
                )
            };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let mut next = Vec::with_capacity(xs.len());
            for (j, &x) in xs.iter().enumerate() {
                let mut g = gd[j].to_f64();
                if self.weight_decay > 0.0 {
                    g += self.weight_decay * x;
                }
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
                next.push(E::from_f64(x - lr_t * update));
            }
            params.set(name, Tensor::from_vec(&shape, next)?)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// classifier training
// ---------------------------------------------------------------------------

/// One resolved training example: a document plus its head index.
struct Example {
    trees: Vec<ParseTree>,
    target: usize,
    tokens: usize,
}

fn example_from(trees: Vec<ParseTree>, target: usize) -> Example {
    let tokens = trees.iter().map(ParseTree::num_leaves).sum::<usize>().max(1);
    Example { trees, target, tokens }
}

fn training_examples(
    corpus: &[LabeledTrees],
    labels: &LabelMap,
    phrase: bool,
) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for ex in corpus {
        let target = labels.id(&ex.label)?;
        out.push(example_from(ex.trees.clone(), target));
        if phrase {
            let whole_doc_is_tree = ex.trees.len() == 1;
            for t in &ex.trees {
                collect_phrase_examples(t, labels, whole_doc_is_tree, &mut out);
            }
        }
    }
    Ok(out)
}

/// Adds one example per labelled proper subtree; subtrees whose label is
/// outside the training label set are skipped (the way neutral phrases are
/// usually dropped from binary sentiment corpora). The document root is
/// excluded — it is already supervised through the example label.
fn collect_phrase_examples(
    tree: &ParseTree,
    labels: &LabelMap,
    is_doc_root: bool,
    out: &mut Vec<Example>,
) {
    if let ParseTree::Node { label, children } = tree {
        if !is_doc_root {
            if let Ok(target) = labels.id(label) {
                out.push(example_from(vec![tree.clone()], target));
            }
        }
        for c in children {
            collect_phrase_examples(c, labels, false, out);
        }
    }
}

/// Builds a model over the corpus vocabularies and trains it.
///
/// The class count and dropout rate of `cfg` are overwritten from the
/// corpus label set and the plan; the class-label names are recorded in
/// the model's target vocabulary so checkpoints are self-describing.
/// Returns the model with its best-dev parameters installed.
///
/// # Errors
/// Plan or data errors before any update; divergence mid-run.
pub fn train_classifier<E: Element>(
    cfg: &ModelConfig,
    plan: &TrainPlan,
    train: &[LabeledTrees],
    dev: &[LabeledTrees],
) -> Result<(TreeModel<E>, LabelMap, RunReport)> {
    plan.validate()?;
    if cfg.task != TaskKind::Classify {
        return Err(TrainError::Plan(
            "the training loop handles classify-task configs only".to_string(),
        ));
    }
    if train.is_empty() {
        return Err(TrainError::Data("empty training corpus".to_string()));
    }
    let labels = LabelMap::from_corpus(train)?;
    let mut cfg = cfg.clone();
    cfg.classes = labels.len();
    cfg.dropout = plan.dropout;
    let mut vocabs = build_vocabs(&cfg, train)?;
    vocabs.targets = labels.to_class_vocab();
    let mut model = TreeModel::build(cfg, vocabs)?;
    let report = train_classifier_model(&mut model, plan, &labels, train, dev)?;
    Ok((model, labels, report))
}

/// The training loop proper, over an already-built model. Exposed so
/// callers can pre-seed or perturb parameters before training.
///
/// # Errors
/// As [`train_classifier`]; additionally a data error when the model's
/// class count disagrees with the label map.
pub fn train_classifier_model<E: Element>(
    model: &mut TreeModel<E>,
    plan: &TrainPlan,
    labels: &LabelMap,
    train: &[LabeledTrees],
    dev: &[LabeledTrees],
) -> Result<RunReport> {
    plan.validate()?;
    if model.cfg.task != TaskKind::Classify {
        return Err(TrainError::Plan(
            "the training loop handles classify-task models only".to_string(),
        ));
    }
    if labels.len() != model.cfg.classes {
        return Err(TrainError::Data(format!(
            "label set has {} classes but the model head has {}",
            labels.len(),
            model.cfg.classes
        )));
    }
    let examples = training_examples(train, labels, plan.phrase_supervision)?;
    if examples.is_empty() {
        return Err(TrainError::Data("empty training corpus".to_string()));
    }

    let wall = Instant::now();
    let ops_start = counters::snapshot();
    let classes = model.cfg.classes;
    let attn_rate = model.cfg.attn_dropout;
    let resid_rate = model.cfg.dropout;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut adam = Adam::new(plan, &model.params);
    let mut order: Vec<usize> = Vec::new();
    let mut losses: Vec<f64> = Vec::with_capacity(plan.max_updates);
    let mut evals: Vec<(usize, f64)> = Vec::new();
    let mut best: Option<(f64, usize, ParamStore<E>)> = None;

    for step in 1..=plan.max_updates {
        let mut batch: Vec<usize> = Vec::new();
        let mut budget = 0usize;
        while budget < plan.batch_tokens {
            if order.is_empty() {
                order = (0..examples.len()).collect();
                order.shuffle(&mut shuffle_rng);
            }
            let idx = order.pop().expect("refilled above");
            budget += examples[idx].tokens;
            batch.push(idx);
        }

        let tape = Tape::new();
        let watched = model.params.watch_all(&tape);
        let mut dctx = DropoutCtx {
            attn_rate,
            resid_rate,
            rng: &mut drop_rng,
        };
        let mut rows = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for &i in &batch {
            let ex = &examples[i];
            let logits = model
                .classify_with(&watched, &ex.trees, Some(&mut dctx), None)
                .map_err(|e| divergence_guard(step, e.into()))?;
            rows.push(logits.reshape(&[1, classes])?);
            targets.push(ex.target);
        }
        let refs: Vec<&Tensor<E>> = rows.iter().collect();
        let stacked = concat(0, &refs)?;
        let loss = cross_entropy_mean(&stacked, &targets)
            .map_err(|e| divergence_guard(step, e.into()))?;
        let loss_val = loss.item()?.to_f64();
        if !loss_val.is_finite() {
            return Err(TrainError::Diverged {
                step,
                detail: format!("loss = {loss_val}"),
            });
        }
        let grads = tape.backward(&loss)?;
        adam.step(&mut model.params, &watched, &grads)?;
        losses.push(loss_val);

        let due = plan.eval_every > 0 && step % plan.eval_every == 0;
        if (due || step == plan.max_updates) && !dev.is_empty() {
            let acc = evaluate_accuracy(model, labels, dev)?;
            evals.push((step, acc));
            if best.as_ref().map_or(true, |(b, _, _)| acc > *b) {
                best = Some((acc, step, model.params.clone()));
            }
        }
    }

    let (best_update, best_dev_accuracy) = match best {
        Some((acc, at, params)) => {
            model.params = params;
            (at, Some(acc))
        }
        None => (plan.max_updates, None),
    };
    let ops = counters::snapshot() - ops_start;
    Ok(RunReport {
        losses,
        evals,
        best_update,
        best_dev_accuracy,
        wall_secs: wall.elapsed().as_secs_f64(),
        macs: ops.macs,
        cmps: ops.cmps,
        exps: ops.exps,
        mass: None,
    })
}

/// Maps a non-finite intermediate to a divergence diagnostic; every other
/// error passes through.
fn divergence_guard(step: usize, e: TrainError) -> TrainError {
    let non_finite = match &e {
        TrainError::Tensor(TensorError::NonFinite { op, detail }) => {
            Some(format!("{op}: {detail}"))
        }
        TrainError::Model(ModelError::Tensor(TensorError::NonFinite { op, detail })) => {
            Some(format!("{op}: {detail}"))
        }
        _ => None,
    };
    match non_finite {
        Some(detail) => TrainError::Diverged { step, detail },
        None => e,
    }
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

/// Argmax-match fraction over a labelled corpus; logit ties resolve to the
/// lowest class index, so evaluation is deterministic.
///
/// # Errors
/// Data error on an empty corpus, a label outside the map, or a label
/// space that does not match the model head.
pub fn evaluate_accuracy<E: Element>(
    model: &TreeModel<E>,
    labels: &LabelMap,
    corpus: &[LabeledTrees],
) -> Result<f64> {
    if corpus.is_empty() {
        return Err(TrainError::Data("empty evaluation corpus".to_string()));
    }
    if labels.len() != model.cfg.classes {
        return Err(TrainError::Data(format!(
            "label set has {} classes but the model head has {}",
            labels.len(),
            model.cfg.classes
        )));
    }
    let mut correct = 0usize;
    for ex in corpus {
        let target = labels.id(&ex.label)?;
        let logits = model.classify(&ex.trees)?;
        if argmax(logits.data()) == target {
            correct += 1;
        }
    }
    Ok(correct as f64 / corpus.len() as f64)
}

fn argmax<E: Element>(xs: &[E]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        // strict comparison keeps the lowest index on ties
        if x.to_f64() > xs[best].to_f64() {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// synthetic hierarchical task
// ---------------------------------------------------------------------------

/// Evaluates a synthetic expression tree to ±1.
///
/// Grammar: `(x +1)` / `(x -1)` are value leaves; `NEG` negates its single
/// child; `MIN` / `MAX` fold over their children.
///
/// # Errors
/// Data error on any other label or malformed arity.
pub fn synthetic_label(tree: &ParseTree) -> Result<i64> {
    let bad = |msg: String| Err(TrainError::Data(msg));
    match tree {
        ParseTree::Leaf { token } => bad(format!("bare leaf {token:?} has no value")),
        ParseTree::Node { label, children } => match label.as_str() {
            "x" => match children.as_slice() {
                [ParseTree::Leaf { token }] => match token.as_str() {
                    "+1" => Ok(1),
                    "-1" => Ok(-1),
                    other => bad(format!("value leaf must be +1 or -1, got {other:?}")),
                },
                _ => bad("an x node must wrap exactly one leaf".to_string()),
            },
            "NEG" => match children.as_slice() {
                [child] => Ok(-synthetic_label(child)?),
                _ => bad("NEG takes exactly one child".to_string()),
            },
            "MIN" | "MAX" => {
                if children.is_empty() {
                    return bad(format!("{label} needs at least one child"));
                }
                let mut vals = Vec::with_capacity(children.len());
                for c in children {
                    vals.push(synthetic_label(c)?);
                }
                let v = if label == "MIN" {
                    vals.into_iter().min()
                } else {
                    vals.into_iter().max()
                };
                Ok(v.expect("nonempty"))
            }
            other => bad(format!("unknown operator {other:?}")),
        },
    }
}

/// Generates a balanced two-class corpus of operator trees whose document
/// label is the root evaluation.
///
/// Every `MIN`/`MAX` group over value leaves is forced to contain both
/// signs, which makes the group's value equal the operator's identity —
/// invisible in the flat token sequence. `NEG`-wrapped single leaves
/// appear as occasional extra arguments at operator depth ≥ 2. Class
/// balance is exact up to parity: the desired label alternates, and a
/// candidate of the wrong sign is flipped by swapping `MIN`↔`MAX` and
/// negating every leaf (which negates the evaluation but preserves shape).
///
/// `depth` is the operator nesting depth: 1 is a single group, 2 is an
/// operator over groups, and so on.
///
/// # Errors
/// Data error when `size` or `depth` is zero.
pub fn make_synthetic_dataset(seed: u64, size: usize, depth: usize) -> Result<Vec<LabeledTrees>> {
    if size == 0 {
        return Err(TrainError::Data("dataset size must be ≥ 1".to_string()));
    }
    if depth == 0 {
        return Err(TrainError::Data("grammar depth must be ≥ 1".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(size);
    for i in 0..size {
        let desired: i64 = if i % 2 == 0 { 1 } else { -1 };
        let mut tree = gen_expr(&mut rng, depth);
        if synthetic_label(&tree)? != desired {
            tree = flip_expr(&tree);
        }
        out.push(LabeledTrees {
            label: signed_token(desired),
            trees: vec![tree],
        });
    }
    Ok(out)
}

fn signed_token(v: i64) -> String {
    if v >= 0 {
        "+1".to_string()
    } else {
        "-1".to_string()
    }
}

fn gen_leaf(rng: &mut ChaCha8Rng) -> ParseTree {
    let v = if rng.gen::<bool>() { 1 } else { -1 };
    ParseTree::node("x", vec![ParseTree::leaf(signed_token(v))])
}

/// Operator over 2–4 value leaves carrying both signs.
fn gen_group(rng: &mut ChaCha8Rng) -> ParseTree {
    let op = if rng.gen::<bool>() { "MAX" } else { "MIN" };
    let size = rng.gen_range(2..=4usize);
    let signs = loop {
        let signs: Vec<i64> = (0..size)
            .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
            .collect();
        if signs.contains(&1) && signs.contains(&-1) {
            break signs;
        }
    };
    let kids = signs
        .into_iter()
        .map(|s| ParseTree::node("x", vec![ParseTree::leaf(signed_token(s))]))
        .collect();
    ParseTree::node(op, kids)
}

fn gen_expr(rng: &mut ChaCha8Rng, depth: usize) -> ParseTree {
    if depth <= 1 {
        return gen_group(rng);
    }
    let op = if rng.gen::<bool>() { "MAX" } else { "MIN" };
    let k = rng.gen_range(2..=3usize);
    let mut args = Vec::with_capacity(k);
    for j in 0..k {
        // the first argument is always structural, so the flat token
        // sequence alone never pins the document label down
        let arg = if j > 0 && rng.gen_bool(0.25) {
            ParseTree::node("NEG", vec![gen_leaf(rng)])
        } else {
            gen_expr(rng, depth - 1)
        };
        args.push(arg);
    }
    ParseTree::node(op, args)
}

/// Negates a tree's evaluation without changing its shape: `MIN`↔`MAX`
/// everywhere, every leaf sign flipped, `NEG` and `x` labels kept.
fn flip_expr(tree: &ParseTree) -> ParseTree {
    match tree {
        ParseTree::Leaf { token } => ParseTree::leaf(flip_token(token)),
        ParseTree::Node { label, children } => {
            let kids = children.iter().map(flip_expr).collect();
            let label = match label.as_str() {
                "MIN" => "MAX",
                "MAX" => "MIN",
                other => other,
            };
            ParseTree::node(label, kids)
        }
    }
}

fn flip_token(token: &str) -> String {
    if token == "+1" {
        "-1".to_string()
    } else {
        "+1".to_string()
    }
}

// ---------------------------------------------------------------------------
// gradient-check driver
// ---------------------------------------------------------------------------

/// Central-difference gradient check through the full model on one tree
/// fixture, covering every parameter group (embedding tables, hierarchical
/// tables, per-layer projections and leaf-weight vectors, head).
///
/// The config's float width is forced to 64-bit and dropout to zero; the
/// fixture supplies the vocabularies. Classification checks a
/// cross-entropy loss on class 0; sequence configs check a two-step
/// teacher-forced loss.
///
/// # Errors
/// Plan error when `cfg.d > 16` (wider checks drown in float noise);
/// gradient-check failure naming the worst coordinate when the relative
/// error exceeds 1e-4.
pub fn grad_check_model(cfg: &ModelConfig, fixture: &ParseTree) -> Result<FdReport> {
    if cfg.d > 16 {
        return Err(TrainError::Plan(format!(
            "gradient checking wants d ≤ 16, got {}",
            cfg.d
        )));
    }
    let mut cfg = cfg.clone();
    cfg.float_width = FloatWidth::F64;
    cfg.dropout = 0.0;
    cfg.attn_dropout = 0.0;
    let norm = NormalizeOptions {
        collapse_unary: cfg.collapse_unary,
        drop_preterminals: cfg.drop_preterminals,
    };
    let normd = normalize_tree(fixture, &norm);
    let mut tokens: Vec<String> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    collect_symbols(&normd, &mut tokens, &mut labels);
    labels.push(FOREST_ROOT_LABEL.to_string());
    let vocabs = Vocabs {
        tokens: Vocab::build(tokens),
        labels: Vocab::build(labels),
        targets: Vocab::build(["a", "b"]),
    };
    let task = cfg.task;
    let model = TreeModel::<f64>::build(cfg, vocabs)?;
    let fd = FdConfig {
        tolerance: 1e-4,
        ..FdConfig::default()
    };
    let classes = model.cfg.classes;
    let report = match task {
        TaskKind::Classify => finite_diff_check(
            &model.params,
            |p| -> std::result::Result<Tensor<f64>, ModelError> {
                let logits = model
                    .classify_with(p, std::slice::from_ref(fixture), None, None)?
                    .reshape(&[1, classes])?;
                Ok(cross_entropy_mean(&logits, &[0])?)
            },
            &fd,
        )?,
        TaskKind::Seq2seq => {
            let a = model.vocabs.targets.id("a").expect("built above");
            let b = model.vocabs.targets.id("b").expect("built above");
            finite_diff_check(
                &model.params,
                |p| -> std::result::Result<Tensor<f64>, ModelError> {
                    let logits = model.seq2seq_with(p, fixture, &[BOS_ID, a], None, None)?;
                    Ok(cross_entropy_mean(&logits, &[a, b])?)
                },
                &fd,
            )?
        }
    };
    if !report.passed() {
        if let Some(w) = &report.worst {
            return Err(TrainError::GradCheck {
                param: w.param.clone(),
                flat_index: w.flat_index,
                analytic: w.analytic,
                numeric: w.numeric,
            });
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// attention-mass statistics
// ---------------------------------------------------------------------------

/// Average post-softmax attention mass on node keys vs. leaf keys, plus
/// the structural share of nodes vs. leaves among the keys.
///
/// Masses average over every recorded query row (all layers and heads);
/// by construction each row's two masses sum to 1. For classification
/// models the rows are the encoder's node queries; for sequence models
/// they are decoder cross-attention rows probed with a single start token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassReport {
    pub node_mass: f64,
    pub leaf_mass: f64,
    pub node_count_share: f64,
    pub leaf_count_share: f64,
    /// Number of query rows averaged.
    pub query_rows: u64,
}

/// Measures [`MassReport`] for a model over a corpus.
///
/// # Errors
/// Plan error when the model is not in tree mode; data error on an empty
/// corpus; forward errors pass through.
pub fn attention_mass_stats<E: Element>(
    model: &TreeModel<E>,
    corpus: &[LabeledTrees],
) -> Result<MassReport> {
    if !model.cfg.tree_mode {
        return Err(TrainError::Plan(
            "attention-mass statistics need a tree-mode model".to_string(),
        ));
    }
    if corpus.is_empty() {
        return Err(TrainError::Data("empty corpus".to_string()));
    }
    let norm = NormalizeOptions {
        collapse_unary: model.cfg.collapse_unary,
        drop_preterminals: model.cfg.drop_preterminals,
    };
    let mut node_sum = 0.0f64;
    let mut leaf_sum = 0.0f64;
    let mut rows = 0u64;
    let mut nodes_total = 0u64;
    let mut leaves_total = 0u64;
    for ex in corpus {
        let doc = doc_tree(&ex.trees)?;
        let enc = encode_tree(&normalize_tree(&doc, &norm))?;
        let m = enc.labels.len();
        let n = enc.n_leaves();
        nodes_total += m as u64;
        leaves_total += n as u64;
        let mut rec = AttnRecorder::default();
        let mats = match model.cfg.task {
            TaskKind::Classify => {
                model.classify_with(&model.params, &ex.trees, None, Some(&mut rec))?;
                rec.node_rows
            }
            TaskKind::Seq2seq => {
                model.seq2seq_with(&model.params, &doc, &[BOS_ID], None, Some(&mut rec))?;
                rec.cross_rows
            }
        };
        for mat in &mats {
            let (q, keys) = (mat.shape()[0], mat.shape()[1]);
            debug_assert_eq!(keys, m + n, "recorded rows must span nodes then leaves");
            let data = mat.data();
            for r in 0..q {
                let row = &data[r * keys..(r + 1) * keys];
                let on_nodes: f64 = row[..m].iter().map(|e| e.to_f64()).sum();
                let on_leaves: f64 = row[m..].iter().map(|e| e.to_f64()).sum();
                // fractions of the row's own mass, so the report is exact
                // even when the elements carry 32-bit rounding
                let total = on_nodes + on_leaves;
                node_sum += on_nodes / total;
                leaf_sum += on_leaves / total;
                rows += 1;
            }
        }
    }
    if rows == 0 {
        return Err(TrainError::Data(
            "corpus produced no attention rows".to_string(),
        ));
    }
    let total = (nodes_total + leaves_total) as f64;
    Ok(MassReport {
        node_mass: node_sum / rows as f64,
        leaf_mass: leaf_sum / rows as f64,
        node_count_share: nodes_total as f64 / total,
        leaf_count_share: leaves_total as f64 / total,
        query_rows: rows,
    })
}

// ---------------------------------------------------------------------------
// scaling benchmark
// ---------------------------------------------------------------------------

/// One benchmark length: instrumented op counts and mean wall times for
/// the accumulation kernel alone and for a full tree-attention layer
/// forward, plus the bracket-reading ("parsing") time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub accum_ops: u64,
    pub accum_secs: f64,
    pub layer_ops: u64,
    pub layer_secs: f64,
    pub parse_secs: f64,
}

/// Scaling report over a length grid, with a least-squares fit of
/// `accum_ops ≈ c · n·log2(n)` and its worst relative residual.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub c_fit: f64,
    pub max_residual: f64,
}

impl BenchReport {
    /// Data rows only; wall-time columns vary run to run, op counts do not.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,accum_ops,accum_wall_s,layer_ops,layer_wall_s,parse_wall_s\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.n, r.accum_ops, r.accum_secs, r.layer_ops, r.layer_secs, r.parse_secs
            ));
        }
        out
    }
}

/// Runs the desk-scale complexity benchmark on balanced binary trees of
/// the given leaf counts at width `d` (single head, no hierarchical
/// tables, subtree mask on with the full affinity computation).
///
/// `repeats = 0` returns an empty report without error.
///
/// # Errors
/// Plan error for a zero width, non-ascending lengths, or a leaf count
/// that is not a power of two ≥ 2.
pub fn bench_accumulation(lengths: &[usize], repeats: usize, d: usize) -> Result<BenchReport> {
    let mut report = BenchReport::default();
    if repeats == 0 {
        return Ok(report);
    }
    if d == 0 {
        return Err(TrainError::Plan("bench width d must be ≥ 1".to_string()));
    }
    for pair in lengths.windows(2) {
        if pair[1] <= pair[0] {
            return Err(TrainError::Plan(
                "bench lengths must be strictly ascending".to_string(),
            ));
        }
    }
    for &n in lengths {
        if !n.is_power_of_two() || n < 2 {
            return Err(TrainError::Plan(format!(
                "balanced binary trees need a power-of-two leaf count ≥ 2, got {n}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let tree = balanced_binary_tree(n)?;
        let text = tree.render();
        let t_parse = Instant::now();
        for _ in 0..repeats {
            let _ = parse_bracketed(&text)?;
        }
        let parse_secs = t_parse.elapsed().as_secs_f64() / repeats as f64;

        let enc = encode_tree(&tree)?;
        let ctx = TreeContext::new(&enc)?;
        let m = enc.labels.len();
        let leaves = rand_matrix(&mut rng, n, d);
        let nodes = rand_matrix(&mut rng, m, d);
        let w = Tensor::from_vec(
            &[n],
            (0..n).map(|_| rng.gen_range(0.5..1.5)).collect::<Vec<f64>>(),
        )?;

        counters::reset();
        let _ = accumulate(&leaves, &nodes, &ctx.branch, None, &w)?;
        let accum_ops = counters::snapshot().total();
        let t_accum = Instant::now();
        for _ in 0..repeats {
            let _ = accumulate(&leaves, &nodes, &ctx.branch, None, &w)?;
        }
        let accum_secs = t_accum.elapsed().as_secs_f64() / repeats as f64;

        let params = bench_attention_params(&mut rng, d)?;
        let phi = bench_phi_params(&mut rng, d)?;
        let opts = EncoderOpts {
            use_subtree_mask: true,
            skip_masked_affinity: false,
        };
        counters::reset();
        let _ = encoder_tree_self_attention(
            &leaves, &nodes, &ctx, &params, &phi, None, opts, None, None,
        )?;
        let layer_ops = counters::snapshot().total();
        let t_layer = Instant::now();
        for _ in 0..repeats {
            let _ = encoder_tree_self_attention(
                &leaves, &nodes, &ctx, &params, &phi, None, opts, None, None,
            )?;
        }
        let layer_secs = t_layer.elapsed().as_secs_f64() / repeats as f64;

        report.rows.push(BenchRow {
            n,
            accum_ops,
            accum_secs,
            layer_ops,
            layer_secs,
            parse_secs,
        });
    }

    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for r in &report.rows {
        let x = (r.n as f64) * (r.n as f64).log2();
        num += r.accum_ops as f64 * x;
        den += x * x;
    }
    if den > 0.0 {
        report.c_fit = num / den;
        for r in &report.rows {
            let x = report.c_fit * (r.n as f64) * (r.n as f64).log2();
            let res = (r.accum_ops as f64 - x).abs() / x;
            report.max_residual = report.max_residual.max(res);
        }
    }
    Ok(report)
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-0.5..0.5)).collect();
    Tensor::from_vec(&[rows, cols], data).expect("sized buffer")
}

fn bench_attention_params(rng: &mut ChaCha8Rng, d: usize) -> Result<AttentionParams<f64>> {
    let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
    Ok(AttentionParams {
        w_q: rand_matrix(rng, d, d),
        b_q: Tensor::zeros(&[d]),
        w_k: rand_matrix(rng, d, d),
        b_k: Tensor::zeros(&[d]),
        w_v: rand_matrix(rng, d, d),
        b_v: Tensor::zeros(&[d]),
        w_o: rand_matrix(rng, d, d),
        b_o: Tensor::zeros(&[d]),
        u: Some(Tensor::from_vec(&[d], u)?),
        heads: 1,
    }
    .validated()?)
}

fn bench_phi_params(rng: &mut ChaCha8Rng, d: usize) -> Result<PhiParams<f64>> {
    Ok(PhiParams {
        w1: rand_matrix(rng, d, 2 * d),
        b1: Tensor::zeros(&[2 * d]),
        w2: rand_matrix(rng, 2 * d, d),
        b2: Tensor::zeros(&[d]),
        ln1_gamma: Tensor::from_vec(&[d], vec![1.0; d])?,
        ln1_beta: Tensor::zeros(&[d]),
        ln2_gamma: Tensor::from_vec(&[d], vec![1.0; d])?,
        ln2_beta: Tensor::zeros(&[d]),
    }
    .validated()?)
}

// ---------------------------------------------------------------------------
// run reports
// ---------------------------------------------------------------------------

/// Everything a training run measured. Serializes directly; [`to_csv`]
/// and [`to_records`] give the tabular and line-record forms.
///
/// [`to_csv`]: RunReport::to_csv
/// [`to_records`]: RunReport::to_records
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    /// Mean batch loss per update, in update order.
    pub losses: Vec<f64>,
    /// `(update, dev accuracy)` at each evaluation point.
    pub evals: Vec<(usize, f64)>,
    /// Update whose parameters the model kept.
    pub best_update: usize,
    /// Dev accuracy at that update; `None` when no dev set was given.
    pub best_dev_accuracy: Option<f64>,
    pub wall_secs: f64,
    /// Scalar multiply-add count over the whole run.
    pub macs: u64,
    /// Scalar comparison count.
    pub cmps: u64,
    /// Scalar exp/ln/sqrt count.
    pub exps: u64,
    /// Attention-mass statistics, when the caller attached them.
    pub mass: Option<MassReport>,
}

impl RunReport {
    /// `update,loss,dev_accuracy` rows; the accuracy cell is filled only
    /// on evaluation updates.
    pub fn to_csv(&self) -> String {
        let evals: HashMap<usize, f64> = self.evals.iter().copied().collect();
        let mut out = String::from("update,loss,dev_accuracy\n");
        for (i, loss) in self.losses.iter().enumerate() {
            let update = i + 1;
            match evals.get(&update) {
                Some(acc) => out.push_str(&format!("{update},{loss},{acc}\n")),
                None => out.push_str(&format!("{update},{loss},\n")),
            }
        }
        out
    }

    /// Line-delimited JSON records: one `update` record per step, one
    /// `eval` record per evaluation, then a single `summary` record.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for (i, loss) in self.losses.iter().enumerate() {
            let rec = serde_json::json!({"record": "update", "update": i + 1, "loss": loss});
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        for (update, acc) in &self.evals {
            let rec =
                serde_json::json!({"record": "eval", "update": update, "dev_accuracy": acc});
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "record": "summary",
            "updates": self.losses.len(),
            "best_update": self.best_update,
            "best_dev_accuracy": self.best_dev_accuracy,
            "wall_secs": self.wall_secs,
            "macs": self.macs,
            "cmps": self.cmps,
            "exps": self.exps,
            "mass": self.mass,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}
