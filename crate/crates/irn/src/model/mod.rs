//! The interaction relational network model family.
//!
//! Every variant shares the same two-stage shape: a relation module `g`
//! (an MLP applied independently to each assembled pair row, ReLU after
//! every layer) whose outputs are mean-pooled into fixed-size descriptors,
//! and a global module `f` (an MLP with ReLU + dropout on hidden layers)
//! feeding a linear classifier. Variants differ in which pair groups they
//! relate and where the inter/intra streams meet:
//!
//! * [`Variant::Inter`] — bidirectional between-person pairs; the two
//!   directional pools are averaged element-wise.
//! * [`Variant::Intra`] — within-person pairs; the two per-person pools
//!   are concatenated.
//! * [`Variant::Fused`] — inter average ⌢ both intra pools, one `f`.
//! * [`Variant::FcFused`] — each stream runs its own first `fuse_at`
//!   layers of `f`; the activations are concatenated into a fusion head
//!   that mirrors the remaining `f` widths.
//! * [`Variant::Naive`] — one `g` over the undifferentiated union of all
//!   pairs, single pool.
//!
//! An optional LSTM head consumes the pre-classifier feature of each
//! overlapping window in temporal order and classifies the final hidden
//! state.

pub mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{softmax, LstmParams, Mode, ParamId, ParamKind, ParamStore, Tape, Tensor, Val};
use crate::error::{Error, Result};
use crate::pairing::{
    inter_pairs, intra_pairs, naive_pairs, row_len_encoded, IdEncoding, InputRows, PairKind,
};
use crate::skeleton::{InteractionSample, PersonJointSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Inter,
    Intra,
    Fused,
    FcFused,
    Naive,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Inter,
        Variant::Intra,
        Variant::Fused,
        Variant::FcFused,
        Variant::Naive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Inter => "inter",
            Variant::Intra => "intra",
            Variant::Fused => "fused",
            Variant::FcFused => "fc_fused",
            Variant::Naive => "naive",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inter" => Ok(Variant::Inter),
            "intra" => Ok(Variant::Intra),
            "fused" => Ok(Variant::Fused),
            "fc_fused" | "fc-fused" => Ok(Variant::FcFused),
            "naive" => Ok(Variant::Naive),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}; expected inter | intra | fused | fc_fused | naive"
            ))),
        }
    }
}

/// Everything that determines the network's architecture and input layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Append the structured distance/motion feature to every pair row.
    pub use_h: bool,
    /// One-hot joint/body ids instead of raw reals.
    pub one_hot_ids: bool,
    /// For [`Variant::FcFused`]: fuse after this many `f` layers (1-based).
    pub fuse_at: usize,
    /// Sequential head over overlapping windows.
    pub lstm: bool,
    pub classes: usize,
    /// Frames per window.
    pub t: usize,
    /// Coordinate dimensionality (2 or 3).
    pub d: usize,
    pub n_joints: usize,
    pub g_widths: Vec<usize>,
    pub f_widths: Vec<usize>,
    pub lstm_hidden: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// A configuration with the reference layer widths:
    /// g = (1000, 1000, 1000, 500), f = (500, 250, 250), LSTM 256,
    /// dropout 0.25.
    pub fn new(variant: Variant, classes: usize, t: usize, d: usize, n_joints: usize) -> Self {
        ModelConfig {
            variant,
            use_h: true,
            one_hot_ids: false,
            fuse_at: 1,
            lstm: false,
            classes,
            t,
            d,
            n_joints,
            g_widths: vec![1000, 1000, 1000, 500],
            f_widths: vec![500, 250, 250],
            lstm_hidden: 256,
            dropout: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.t < 2 {
            return fail(format!("window length must be at least 2, got {}", self.t));
        }
        if !(self.d == 2 || self.d == 3) {
            return fail(format!("coordinate dimensionality must be 2 or 3, got {}", self.d));
        }
        if self.n_joints < 2 {
            return fail(format!("need at least 2 joints, got {}", self.n_joints));
        }
        if self.g_widths.is_empty() || self.g_widths.iter().any(|&w| w == 0) {
            return fail(format!("relation module widths invalid: {:?}", self.g_widths));
        }
        if self.f_widths.is_empty() || self.f_widths.iter().any(|&w| w == 0) {
            return fail(format!("global module widths invalid: {:?}", self.f_widths));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.variant == Variant::FcFused
            && !(1..=self.f_widths.len()).contains(&self.fuse_at)
        {
            return fail(format!(
                "fuse_at must be in 1..={}, got {}",
                self.f_widths.len(),
                self.fuse_at
            ));
        }
        if self.lstm && self.lstm_hidden == 0 {
            return fail("lstm_hidden must be positive".into());
        }
        Ok(())
    }

    pub fn id_encoding(&self) -> IdEncoding {
        if self.one_hot_ids {
            IdEncoding::OneHot { n_joints: self.n_joints }
        } else {
            IdEncoding::Raw
        }
    }

    /// Width of one assembled pair row, i.e. `g`'s input dimension.
    pub fn input_width(&self) -> usize {
        row_len_encoded(self.t, self.d, self.use_h, self.id_encoding())
    }

    pub fn g_out(&self) -> usize {
        self.g_widths.last().copied().unwrap_or(0)
    }

    /// Width of the pre-classifier feature (LSTM input when enabled).
    pub fn feature_width(&self) -> usize {
        let f_last = self.f_widths.last().copied().unwrap_or(0);
        match self.variant {
            Variant::FcFused if self.fuse_at == self.f_widths.len() => {
                2 * self.f_widths[self.fuse_at - 1]
            }
            _ => f_last,
        }
    }

    pub fn classifier_input(&self) -> usize {
        if self.lstm {
            self.lstm_hidden
        } else {
            self.feature_width()
        }
    }

    /// Hex SHA-256 over the canonical JSON form; checkpoints refuse to
    /// load into a model with a different fingerprint.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex(&hasher.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One linear layer's parameter handles.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearParams {
    fn register(store: &mut ParamStore, prefix: &str, input: usize, output: usize) -> Self {
        LinearParams {
            weight: store.register(
                format!("{prefix}.weight"),
                ParamKind::Weight,
                Tensor::zeros(vec![input, output]),
            ),
            bias: store.register(
                format!("{prefix}.bias"),
                ParamKind::Bias,
                Tensor::zeros(vec![output]),
            ),
        }
    }

    fn apply(&self, tape: &mut Tape, x: Val) -> Result<Val> {
        let w = tape.param(self.weight)?;
        let b = tape.param(self.bias)?;
        tape.linear(x, w, b)
    }
}

/// A stack of linear layers (possibly empty).
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    pub layers: Vec<LinearParams>,
}

impl Mlp {
    fn register(store: &mut ParamStore, prefix: &str, input: usize, widths: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut w_in = input;
        for (i, &w_out) in widths.iter().enumerate() {
            layers.push(LinearParams::register(
                store,
                &format!("{prefix}.layer{i}"),
                w_in,
                w_out,
            ));
            w_in = w_out;
        }
        Mlp { layers }
    }

    /// The relation-module convention: ReLU after every layer.
    fn forward_relu_all(&self, tape: &mut Tape, x: Val) -> Result<Val> {
        let mut h = x;
        for layer in &self.layers {
            let z = layer.apply(tape, h)?;
            h = tape.relu(z);
        }
        Ok(h)
    }

    /// The global-module convention: ReLU + dropout after every layer.
    fn forward_relu_dropout(
        &self,
        tape: &mut Tape,
        x: Val,
        rate: f64,
        rng: &mut impl Rng,
    ) -> Result<Val> {
        let mut h = x;
        for layer in &self.layers {
            let z = layer.apply(tape, h)?;
            let a = tape.relu(z);
            h = tape.dropout(a, rate, rng)?;
        }
        Ok(h)
    }
}

/// Parameter handles for every module the configured variant uses.
#[derive(Debug, Clone)]
pub(crate) struct Wiring {
    pub g_inter: Option<Mlp>,
    pub g_intra: Option<Mlp>,
    pub g_union: Option<Mlp>,
    pub f: Option<Mlp>,
    pub f_inter: Option<Mlp>,
    pub f_intra: Option<Mlp>,
    pub fusion: Option<Mlp>,
    pub lstm: Option<LstmParams>,
    pub classifier: LinearParams,
}

/// A complete model: configuration, parameter storage, and wiring.
#[derive(Debug)]
pub struct IrnModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub(crate) wiring: Wiring,
}

impl IrnModel {
    /// Registers all parameters (zero-valued; see the training engine for
    /// initialization) for the configured variant.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let g_in = config.input_width();
        let g_out = config.g_out();
        let fw = &config.f_widths;

        let mut g_inter = None;
        let mut g_intra = None;
        let mut g_union = None;
        let mut f = None;
        let mut f_inter = None;
        let mut f_intra = None;
        let mut fusion = None;
        match config.variant {
            Variant::Inter => {
                g_inter = Some(Mlp::register(&mut store, "g_inter", g_in, &config.g_widths));
                f = Some(Mlp::register(&mut store, "f", g_out, fw));
            }
            Variant::Intra => {
                g_intra = Some(Mlp::register(&mut store, "g_intra", g_in, &config.g_widths));
                f = Some(Mlp::register(&mut store, "f", 2 * g_out, fw));
            }
            Variant::Fused => {
                g_inter = Some(Mlp::register(&mut store, "g_inter", g_in, &config.g_widths));
                g_intra = Some(Mlp::register(&mut store, "g_intra", g_in, &config.g_widths));
                f = Some(Mlp::register(&mut store, "f", 3 * g_out, fw));
            }
            Variant::FcFused => {
                let k = config.fuse_at;
                g_inter = Some(Mlp::register(&mut store, "g_inter", g_in, &config.g_widths));
                g_intra = Some(Mlp::register(&mut store, "g_intra", g_in, &config.g_widths));
                f_inter = Some(Mlp::register(&mut store, "f_inter", g_out, &fw[..k]));
                f_intra = Some(Mlp::register(&mut store, "f_intra", 2 * g_out, &fw[..k]));
                fusion = Some(Mlp::register(&mut store, "fusion", 2 * fw[k - 1], &fw[k..]));
            }
            Variant::Naive => {
                g_union = Some(Mlp::register(&mut store, "g", g_in, &config.g_widths));
                f = Some(Mlp::register(&mut store, "f", g_out, fw));
            }
        }
        let lstm = config
            .lstm
            .then(|| LstmParams::register(&mut store, "lstm", config.feature_width(), config.lstm_hidden));
        let classifier =
            LinearParams::register(&mut store, "classifier", config.classifier_input(), config.classes);
        Ok(IrnModel {
            config,
            store,
            wiring: Wiring {
                g_inter,
                g_intra,
                g_union,
                f,
                f_inter,
                f_intra,
                fusion,
                lstm,
                classifier,
            },
        })
    }

    /// A store-independent forward evaluator, so callers can hold the
    /// parameter store mutably (optimizers, gradient checks) while
    /// evaluating.
    pub fn pass(&self) -> ForwardPass {
        ForwardPass {
            config: self.config.clone(),
            w: self.wiring.clone(),
        }
    }

    /// Deterministic evaluation-mode logits for one sample.
    pub fn eval_logits(&self, sample: &InteractionSample) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store, Mode::Eval);
        // Dropout is the identity in evaluation mode; the stream is unused.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = self
            .pass()
            .forward_sample(&mut tape, sample, &mut rng)?;
        Ok(tape.value(logits).to_vec())
    }
}

/// Forward evaluation over a [`Tape`]; cloneable and detached from the
/// parameter store.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    config: ModelConfig,
    w: Wiring,
}

impl ForwardPass {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_window(&self, p: &PersonJointSet, who: &str) -> Result<()> {
        let c = &self.config;
        if p.t != c.t || p.d != c.d || p.n_joints() != c.n_joints {
            return Err(Error::Config(format!(
                "{who} joint set is {} joints {}×{}, model expects {} joints {}×{}",
                p.n_joints(),
                p.t,
                p.d,
                c.n_joints,
                c.t,
                c.d
            )));
        }
        Ok(())
    }

    fn rows_val(&self, tape: &mut Tape, rows: InputRows) -> Result<Val> {
        tape.constant_matrix(rows.rows, rows.cols, rows.data)
    }

    fn g_pool(&self, tape: &mut Tape, g: &Mlp, rows: InputRows) -> Result<Val> {
        let x = self.rows_val(tape, rows)?;
        let out = g.forward_relu_all(tape, x)?;
        Ok(tape.mean_rows(out))
    }

    fn need<'a>(&self, part: &'a Option<Mlp>, what: &str) -> Result<&'a Mlp> {
        part.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "variant {} has no {what} module",
                self.config.variant.name()
            ))
        })
    }

    /// Element-wise average of the two directional between-person pools.
    pub fn pooled_inter(&self, tape: &mut Tape, p1: &PersonJointSet, p2: &PersonJointSet) -> Result<Val> {
        let g = self.need(&self.w.g_inter, "between-person relation")?;
        let enc = self.config.id_encoding();
        let batch = inter_pairs(p1, p2)?;
        let fwd = self.g_pool(tape, g, batch.rows_of_kind_encoded(PairKind::InterForward, self.config.use_h, enc)?)?;
        let bwd = self.g_pool(tape, g, batch.rows_of_kind_encoded(PairKind::InterBackward, self.config.use_h, enc)?)?;
        let sum = tape.add(fwd, bwd)?;
        Ok(tape.scale(sum, 0.5))
    }

    /// Concatenation of the two per-person within-person pools.
    pub fn pooled_intra_concat(
        &self,
        tape: &mut Tape,
        p1: &PersonJointSet,
        p2: &PersonJointSet,
    ) -> Result<Val> {
        let g = self.need(&self.w.g_intra, "within-person relation")?;
        let enc = self.config.id_encoding();
        let use_h = self.config.use_h;
        let b1 = intra_pairs(p1, PairKind::IntraP1)?;
        let b2 = intra_pairs(p2, PairKind::IntraP2)?;
        let pool1 = self.g_pool(tape, g, b1.rows_encoded(use_h, enc)?)?;
        let pool2 = self.g_pool(tape, g, b2.rows_encoded(use_h, enc)?)?;
        tape.concat_cols(&[pool1, pool2])
    }

    /// Single pool over the undifferentiated union of all pair groups.
    pub fn pooled_union(&self, tape: &mut Tape, p1: &PersonJointSet, p2: &PersonJointSet) -> Result<Val> {
        let g = self.need(&self.w.g_union, "union relation")?;
        let batch = naive_pairs(p1, p2)?;
        self.g_pool(tape, g, batch.rows_encoded(self.config.use_h, self.config.id_encoding())?)
    }

    /// The pre-classifier feature for one window.
    pub fn window_feature(
        &self,
        tape: &mut Tape,
        p1: &PersonJointSet,
        p2: &PersonJointSet,
        rng: &mut impl Rng,
    ) -> Result<Val> {
        self.check_window(p1, "first person")?;
        self.check_window(p2, "second person")?;
        let rate = self.config.dropout;
        match self.config.variant {
            Variant::Inter => {
                let pooled = self.pooled_inter(tape, p1, p2)?;
                let f = self.need(&self.w.f, "global")?;
                f.forward_relu_dropout(tape, pooled, rate, rng)
            }
            Variant::Intra => {
                let desc = self.pooled_intra_concat(tape, p1, p2)?;
                let f = self.need(&self.w.f, "global")?;
                f.forward_relu_dropout(tape, desc, rate, rng)
            }
            Variant::Fused => {
                let inter = self.pooled_inter(tape, p1, p2)?;
                let intra = self.pooled_intra_concat(tape, p1, p2)?;
                let desc = tape.concat_cols(&[inter, intra])?;
                let f = self.need(&self.w.f, "global")?;
                f.forward_relu_dropout(tape, desc, rate, rng)
            }
            Variant::FcFused => {
                let inter = self.pooled_inter(tape, p1, p2)?;
                let intra = self.pooled_intra_concat(tape, p1, p2)?;
                let si = self.need(&self.w.f_inter, "inter-stream")?;
                let sa = self.need(&self.w.f_intra, "intra-stream")?;
                let a_inter = si.forward_relu_dropout(tape, inter, rate, rng)?;
                let a_intra = sa.forward_relu_dropout(tape, intra, rate, rng)?;
                let joined = tape.concat_cols(&[a_inter, a_intra])?;
                let fusion = self.need(&self.w.fusion, "fusion")?;
                fusion.forward_relu_dropout(tape, joined, rate, rng)
            }
            Variant::Naive => {
                let pooled = self.pooled_union(tape, p1, p2)?;
                let f = self.need(&self.w.f, "global")?;
                f.forward_relu_dropout(tape, pooled, rate, rng)
            }
        }
    }

    /// Logits for a single window (no sequential head).
    pub fn forward_window(
        &self,
        tape: &mut Tape,
        p1: &PersonJointSet,
        p2: &PersonJointSet,
        rng: &mut impl Rng,
    ) -> Result<Val> {
        let feature = self.window_feature(tape, p1, p2, rng)?;
        self.w.classifier.apply(tape, feature)
    }

    /// Logits for a sample: the central window directly, or the window
    /// sequence through the LSTM head when configured.
    pub fn forward_sample(
        &self,
        tape: &mut Tape,
        sample: &InteractionSample,
        rng: &mut impl Rng,
    ) -> Result<Val> {
        if !self.config.lstm {
            return self.forward_window(tape, &sample.p1, &sample.p2, rng);
        }
        if sample.windows.is_empty() {
            return Err(Error::Data(format!(
                "sample {} has no windows for the sequential head",
                sample.source
            )));
        }
        let lstm = self.w.lstm.as_ref().ok_or_else(|| {
            Error::Config("sequential head configured but no LSTM parameters registered".into())
        })?;
        let mut features = Vec::with_capacity(sample.windows.len());
        for (p1, p2) in &sample.windows {
            features.push(self.window_feature(tape, p1, p2, rng)?);
        }
        let hidden = lstm.forward(tape, &features)?;
        let dropped = tape.dropout(hidden, self.config.dropout, rng)?;
        self.w.classifier.apply(tape, dropped)
    }
}

/// Mean of the two softmax probability vectors.
pub fn score_average(logits_a: &[f64], logits_b: &[f64]) -> Result<Vec<f64>> {
    if logits_a.len() != logits_b.len() || logits_a.is_empty() {
        return Err(Error::Data(format!(
            "cannot average score vectors of lengths {} and {}",
            logits_a.len(),
            logits_b.len()
        )));
    }
    let (pa, pb) = (softmax(logits_a), softmax(logits_b));
    Ok(pa.iter().zip(&pb).map(|(a, b)| 0.5 * (a + b)).collect())
}
