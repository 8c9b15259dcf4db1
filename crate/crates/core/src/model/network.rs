use std::collections::HashMap;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamStore, TensorKind};
use super::{ModelConfig, PatchedInputs};
use crate::autodiff::{BatchStats, ConvShape, Graph, ParamId, Var};
use crate::{Error, Result, Scalar};

const BN_EPS: f64 = 1e-5;
const LN_EPS: f64 = 1e-5;
const STEM_KERNEL: usize = 7;
const STEM_STRIDE: usize = 2;
const BLOCK_KERNEL: usize = 3;

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
struct BatchNorm {
    norm: Norm,
    mean: ParamId,
    var: ParamId,
}

#[derive(Debug, Clone)]
struct Conv {
    w: ParamId,
    bias: Option<ParamId>,
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv,
    bn1: BatchNorm,
    conv2: Conv,
    bn2: BatchNorm,
    shortcut: Option<Conv>,
}

#[derive(Debug, Clone)]
struct ConvEncoder {
    stem: Conv,
    stem_bn: BatchNorm,
    blocks: Vec<ResBlock>,
    proj: Linear,
}

#[derive(Debug, Clone)]
enum PatchEncoder {
    Conv(ConvEncoder),
    Linear(Linear),
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: Norm,
    fc1: Linear,
    fc2: Linear,
}

/// Allocates and initialises named tensors.
struct Init<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Init<'_, T> {
    /// Kaiming-uniform weights, bound `sqrt(6 / fan_in)`.
    fn kaiming(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let value = Array2::from_shape_fn((rows, cols), |_| {
            T::of(self.rng.random_range(-bound..bound))
        });
        self.store.add(name, TensorKind::Weight, value)
    }

    fn filled(&mut self, name: String, rows: usize, kind: TensorKind, v: f64) -> ParamId {
        self.store
            .add(name, kind, Array2::from_elem((rows, 1), T::of(v)))
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize) -> Linear {
        Linear {
            w: self.kaiming(format!("{name}.weight"), out, inp, inp),
            b: self.filled(format!("{name}.bias"), out, TensorKind::Weight, 0.0),
        }
    }

    fn layer_norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm {
            gamma: self.filled(format!("{name}.gain"), dim, TensorKind::Weight, 1.0),
            beta: self.filled(format!("{name}.bias"), dim, TensorKind::Weight, 0.0),
        }
    }

    fn batch_norm(&mut self, name: &str, dim: usize) -> BatchNorm {
        BatchNorm {
            norm: self.layer_norm(name, dim),
            mean: self.filled(format!("{name}.running_mean"), dim, TensorKind::Buffer, 0.0),
            var: self.filled(format!("{name}.running_var"), dim, TensorKind::Buffer, 1.0),
        }
    }

    fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Conv {
        let w = self.kaiming(format!("{name}.weight"), cout, cin * kernel, cin * kernel);
        let bias = bias.then(|| self.filled(format!("{name}.bias"), cout, TensorKind::Weight, 0.0));
        Conv {
            w,
            bias,
            cin,
            cout,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    fn res_block(&mut self, name: &str, cin: usize, cout: usize) -> ResBlock {
        ResBlock {
            conv1: self.conv(&format!("{name}.conv1"), cin, cout, BLOCK_KERNEL, 1, false),
            bn1: self.batch_norm(&format!("{name}.bn1"), cout),
            conv2: self.conv(&format!("{name}.conv2"), cout, cout, BLOCK_KERNEL, 1, false),
            bn2: self.batch_norm(&format!("{name}.bn2"), cout),
            shortcut: (cin != cout)
                .then(|| self.conv(&format!("{name}.shortcut"), cin, cout, 1, 1, true)),
        }
    }

    fn conv_encoder(&mut self, name: &str, stem: usize, wide: usize, d: usize) -> ConvEncoder {
        ConvEncoder {
            stem: self.conv(
                &format!("{name}.stem"),
                1,
                stem,
                STEM_KERNEL,
                STEM_STRIDE,
                false,
            ),
            stem_bn: self.batch_norm(&format!("{name}.stem_bn"), stem),
            blocks: vec![
                self.res_block(&format!("{name}.block1"), stem, stem),
                self.res_block(&format!("{name}.block2"), stem, wide),
            ],
            proj: self.linear(&format!("{name}.proj"), wide, d),
        }
    }

    fn patch_encoder(
        &mut self,
        name: &str,
        cfg: &ModelConfig,
        rate: bool,
        patch_len: usize,
        d: usize,
    ) -> PatchEncoder {
        if rate {
            PatchEncoder::Linear(self.linear(&format!("{name}.proj"), patch_len, d))
        } else {
            PatchEncoder::Conv(self.conv_encoder(name, cfg.stem_channels, cfg.wide_channels, d))
        }
    }
}

/// The sinusoidal position table, `[d, n]`: row `2k` holds
/// `sin(p / 10000^(2k/d))` and row `2k + 1` the matching cosine.
pub fn sinusoidal_positions(n: usize, d: usize) -> Array2<f64> {
    assert!(
        d.is_multiple_of(2),
        "position encoding dimension must be even"
    );
    Array2::from_shape_fn((d, n), |(row, p)| {
        let k = row / 2;
        let angle = p as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
        if row % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Batch of `n_seq` sequences of `seq_len` epochs laid out as consecutive
/// column blocks.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub heart: Array2<T>,
    pub breath: Array2<T>,
    pub n_seq: usize,
    pub seq_len: usize,
}

impl<T: Scalar> Batch<T> {
    /// Stacks windows of equal length.
    pub fn from_windows(windows: &[&PatchedInputs]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::Shape("empty batch".into()))?;
        let seq_len = first.n();
        if windows
            .iter()
            .any(|w| w.n() != seq_len || w.mode != first.mode)
        {
            return Err(Error::Shape(
                "batch windows differ in length or input mode".into(),
            ));
        }
        let cast = |parts: Vec<ndarray::ArrayView2<f32>>| {
            ndarray::concatenate(Axis(1), &parts)
                .unwrap()
                .mapv(|v| T::of(v as f64))
        };
        Ok(Self {
            heart: cast(windows.iter().map(|w| w.heart.view()).collect()),
            breath: cast(windows.iter().map(|w| w.breath.view()).collect()),
            n_seq: windows.len(),
            seq_len,
        })
    }
}

/// How a forward pass treats dropout, batch norm and gradient tracking.
pub struct Pass<'a> {
    /// Present in training mode: source of dropout masks. Batch norm then
    /// uses batch statistics.
    pub rng: Option<&'a mut ChaCha8Rng>,
    /// Record parameters as differentiable leaves.
    pub track_grads: bool,
}

impl<'a> Pass<'a> {
    pub fn eval() -> Self {
        Self {
            rng: None,
            track_grads: false,
        }
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            rng: Some(rng),
            track_grads: true,
        }
    }

    /// Eval-mode semantics with gradients recorded.
    pub fn eval_tracked() -> Self {
        Self {
            rng: None,
            track_grads: true,
        }
    }
}

/// Running-statistics update produced by a training-mode batch norm.
pub struct BnUpdate<T> {
    mean: ParamId,
    var: ParamId,
    stats: BatchStats<T>,
}

pub struct ForwardOutput<T> {
    /// `[n_classes, n_seq * seq_len]`.
    pub logits: Var,
    /// Transformer output, `[d_model, n_seq * seq_len]`.
    pub features: Var,
    pub bn_updates: Vec<BnUpdate<T>>,
}

/// Eval-mode outputs for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference<T> {
    /// `[n_classes, n]` class probabilities.
    pub probs: Array2<T>,
    /// `[d_model, n]` transformer output features.
    pub features: Array2<T>,
}

impl<T: Scalar> Inference<T> {
    /// Most probable class per epoch, lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        argmax_columns(&self.probs)
    }
}

pub(crate) fn argmax_columns<T: Scalar>(m: &Array2<T>) -> Vec<usize> {
    m.columns()
        .into_iter()
        .map(|c| {
            let mut best = 0;
            for (i, &v) in c.iter().enumerate() {
                if v > c[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

struct Ctx<'g, 'p, T: Scalar> {
    g: &'g mut Graph<T>,
    store: &'g ParamStore<T>,
    leaves: HashMap<ParamId, Var>,
    pass: Pass<'p>,
    dropout: f64,
    bn_updates: Vec<BnUpdate<T>>,
}

impl<T: Scalar> Ctx<'_, '_, T> {
    fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves.get(&id) {
            return *v;
        }
        let value = self.store.value(id).clone();
        let v = if self.pass.track_grads {
            self.g.param(id, value)
        } else {
            self.g.constant(value)
        };
        self.leaves.insert(id, v);
        v
    }

    fn training(&self) -> bool {
        self.pass.rng.is_some()
    }

    fn linear(&mut self, l: &Linear, x: Var) -> Var {
        let (w, b) = (self.p(l.w), self.p(l.b));
        self.g.linear(x, w, b)
    }

    fn layer_norm(&mut self, n: &Norm, x: Var) -> Var {
        let (g, b) = (self.p(n.gamma), self.p(n.beta));
        self.g.layer_norm(x, g, b, LN_EPS)
    }

    fn batch_norm(&mut self, bn: &BatchNorm, x: Var) -> Var {
        let (g, b) = (self.p(bn.norm.gamma), self.p(bn.norm.beta));
        if self.training() {
            let (y, stats) = self.g.batch_norm(x, g, b, None, BN_EPS);
            self.bn_updates.push(BnUpdate {
                mean: bn.mean,
                var: bn.var,
                stats: stats.expect("training stats"),
            });
            y
        } else {
            let mean: Vec<T> = self.store.value(bn.mean).iter().copied().collect();
            let var: Vec<T> = self.store.value(bn.var).iter().copied().collect();
            self.g.batch_norm(x, g, b, Some((&mean, &var)), BN_EPS).0
        }
    }

    fn conv(&mut self, c: &Conv, x: Var, len_in: usize, n_seq: usize) -> (Var, usize) {
        let shape = ConvShape::new(c.cin, c.cout, c.kernel, c.stride, c.pad, len_in, n_seq);
        let w = self.p(c.w);
        let mut y = self.g.conv1d(x, w, shape);
        if let Some(b) = c.bias {
            let b = self.p(b);
            y = self.g.add_bias(y, b);
        }
        (y, shape.len_out)
    }

    fn dropout(&mut self, x: Var) -> Var {
        let p = self.dropout;
        let Some(rng) = self.pass.rng.as_deref_mut() else {
            return x;
        };
        if p <= 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask = Array2::from_shape_fn(self.g.shape(x), |_| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        });
        self.g.dropout(x, mask)
    }

    fn res_block(&mut self, b: &ResBlock, x: Var, len: usize, n: usize) -> Var {
        let (h, _) = self.conv(&b.conv1, x, len, n);
        let h = self.batch_norm(&b.bn1, h);
        let h = self.g.relu(h);
        let (h, _) = self.conv(&b.conv2, h, len, n);
        let h = self.batch_norm(&b.bn2, h);
        let skip = match &b.shortcut {
            Some(s) => self.conv(s, x, len, n).0,
            None => x,
        };
        let y = self.g.add(h, skip);
        self.g.relu(y)
    }

    /// `patches` is `[patch_len, n_patches]`; returns `[d, n_patches]`.
    fn encode(&mut self, enc: &PatchEncoder, patches: &Array2<T>) -> Var {
        match enc {
            PatchEncoder::Linear(l) => {
                let x = self.g.constant(patches.clone());
                self.linear(l, x)
            }
            PatchEncoder::Conv(c) => {
                let (len, n) = patches.dim();
                let flat = patches
                    .t()
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((1, n * len))
                    .unwrap();
                let x = self.g.constant(flat);
                let (h, len) = self.conv(&c.stem, x, len, n);
                let h = self.batch_norm(&c.stem_bn, h);
                let mut h = self.g.relu(h);
                for block in &c.blocks {
                    h = self.res_block(block, h, len, n);
                }
                let pooled = self.g.mean_pool(h, len);
                self.linear(&c.proj, pooled)
            }
        }
    }

    fn encoder_layer(&mut self, l: &EncoderLayer, x: Var, heads: usize, seq_len: usize) -> Var {
        let h = self.layer_norm(&l.ln1, x);
        let q = self.linear(&l.q, h);
        let k = self.linear(&l.k, h);
        let v = self.linear(&l.v, h);
        let a = self.g.attention(q, k, v, heads, seq_len);
        let a = self.linear(&l.o, a);
        let a = self.dropout(a);
        let x = self.g.add(x, a);
        let h = self.layer_norm(&l.ln2, x);
        let f = self.linear(&l.fc1, h);
        let f = self.g.relu(f);
        let f = self.dropout(f);
        let f = self.linear(&l.fc2, f);
        let f = self.dropout(f);
        self.g.add(x, f)
    }
}

/// Network weights plus the layer layout that addresses them.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    heart: PatchEncoder,
    breath: PatchEncoder,
    layers: Vec<EncoderLayer>,
    final_norm: Norm,
    head: Linear,
}

impl<T: Scalar> Model<T> {
    /// Randomly initialised model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::default();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mode = config.input_mode;
        let heart = init.patch_encoder(
            "heart",
            &config,
            mode.heart_is_rate(),
            mode.heart_patch_len(),
            config.d_hw,
        );
        let breath = init.patch_encoder(
            "breath",
            &config,
            mode.breath_is_rate(),
            mode.breath_patch_len(),
            config.d_bw,
        );
        let d = config.d_model();
        let layers = (0..config.n_layers)
            .map(|i| {
                let name = format!("layer{i}");
                EncoderLayer {
                    ln1: init.layer_norm(&format!("{name}.ln1"), d),
                    q: init.linear(&format!("{name}.attn.q"), d, d),
                    k: init.linear(&format!("{name}.attn.k"), d, d),
                    v: init.linear(&format!("{name}.attn.v"), d, d),
                    o: init.linear(&format!("{name}.attn.out"), d, d),
                    ln2: init.layer_norm(&format!("{name}.ln2"), d),
                    fc1: init.linear(&format!("{name}.mlp.fc1"), d, config.mlp_dim),
                    fc2: init.linear(&format!("{name}.mlp.fc2"), config.mlp_dim, d),
                }
            })
            .collect();
        let final_norm = init.layer_norm("final_norm", d);
        let head = init.linear("head", d, config.n_classes);
        Ok(Self {
            config,
            store,
            heart,
            breath,
            layers,
            final_norm,
            head,
        })
    }

    /// Same layout with the weights converted to another float width.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            heart: self.heart.clone(),
            breath: self.breath.clone(),
            layers: self.layers.clone(),
            final_norm: self.final_norm.clone(),
            head: self.head.clone(),
        }
    }

    /// Head weights `[n_classes, d_model]` and bias ids.
    pub fn head_ids(&self) -> (ParamId, ParamId) {
        (self.head.w, self.head.b)
    }

    fn check_batch(&self, batch: &Batch<T>) -> Result<()> {
        let mode = self.config.input_mode;
        let cols = batch.n_seq * batch.seq_len;
        if batch.heart.dim() != (mode.heart_patch_len(), cols)
            || batch.breath.dim() != (mode.breath_patch_len(), cols)
        {
            return Err(Error::Shape(format!(
                "{mode} batch of {cols} epochs needs [{}, {cols}] and [{}, {cols}] inputs, got {:?} and {:?}",
                mode.heart_patch_len(),
                mode.breath_patch_len(),
                batch.heart.dim(),
                batch.breath.dim()
            )));
        }
        Ok(())
    }

    fn ctx<'g, 'p>(&'g self, g: &'g mut Graph<T>, pass: Pass<'p>) -> Ctx<'g, 'p, T> {
        Ctx {
            g,
            store: &self.store,
            leaves: HashMap::new(),
            pass,
            dropout: self.config.dropout,
            bn_updates: Vec::new(),
        }
    }

    fn encode_in(&self, ctx: &mut Ctx<'_, '_, T>, heart: &Array2<T>, breath: &Array2<T>) -> Var {
        let h = ctx.encode(&self.heart, heart);
        let b = ctx.encode(&self.breath, breath);
        ctx.g.concat_rows(&[h, b])
    }

    fn transformer_in(
        &self,
        ctx: &mut Ctx<'_, '_, T>,
        z: Var,
        n_seq: usize,
        seq_len: usize,
    ) -> Result<Var> {
        let d = self.config.d_model();
        let mut x = z;
        if self.config.positions {
            let pe = sinusoidal_positions(seq_len, d).mapv(T::of);
            let tiled = ndarray::concatenate(Axis(1), &vec![pe.view(); n_seq]).unwrap();
            let pe = ctx.g.constant(tiled);
            x = ctx.g.add(x, pe);
        }
        for (i, layer) in self.layers.iter().enumerate() {
            x = ctx.encoder_layer(layer, x, self.config.n_heads, seq_len);
            if ctx.g.value(x).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "activations after transformer layer {i}"
                )));
            }
        }
        Ok(ctx.layer_norm(&self.final_norm, x))
    }

    /// Records the full forward pass on `g`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        batch: &Batch<T>,
        pass: Pass<'_>,
    ) -> Result<ForwardOutput<T>> {
        self.check_batch(batch)?;
        let mut ctx = self.ctx(g, pass);
        let z = self.encode_in(&mut ctx, &batch.heart, &batch.breath);
        let features = self.transformer_in(&mut ctx, z, batch.n_seq, batch.seq_len)?;
        let logits = ctx.linear(&self.head, features);
        Ok(ForwardOutput {
            logits,
            features,
            bn_updates: ctx.bn_updates,
        })
    }

    /// Blends batch statistics into the running statistics.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>], momentum: f64) {
        let m = T::of(momentum);
        for u in updates {
            for (slot, &b) in self.store.value_mut(u.mean).iter_mut().zip(&u.stats.mean) {
                *slot = (T::one() - m) * *slot + m * b;
            }
            for (slot, &b) in self.store.value_mut(u.var).iter_mut().zip(&u.stats.var) {
                *slot = (T::one() - m) * *slot + m * b;
            }
        }
    }

    fn batch_of(&self, inputs: &PatchedInputs) -> Result<Batch<T>> {
        if inputs.mode != self.config.input_mode {
            return Err(Error::Shape(format!(
                "model expects {} inputs, got {}",
                self.config.input_mode, inputs.mode
            )));
        }
        Batch::from_windows(&[inputs])
    }

    /// Eval-mode patch encodings `z_i`, `[d_model, n]`, before positions.
    pub fn encode_patches(&self, inputs: &PatchedInputs) -> Result<Array2<T>> {
        let batch = self.batch_of(inputs)?;
        self.check_batch(&batch)?;
        let mut g = Graph::new();
        let mut ctx = self.ctx(&mut g, Pass::eval());
        let z = self.encode_in(&mut ctx, &batch.heart, &batch.breath);
        Ok(g.value(z).clone())
    }

    /// Positions plus the transformer layers and final normalisation on one
    /// sequence `z_i`. Dropout is active only when `rng` is given.
    pub fn transformer_forward(
        &self,
        z_i: &Array2<T>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Array2<T>> {
        if z_i.nrows() != self.config.d_model() {
            return Err(Error::Shape(format!(
                "expected {} feature rows, got {}",
                self.config.d_model(),
                z_i.nrows()
            )));
        }
        let mut g = Graph::new();
        let mut ctx = self.ctx(
            &mut g,
            Pass {
                rng,
                track_grads: false,
            },
        );
        let z = ctx.g.constant(z_i.clone());
        let out = self.transformer_in(&mut ctx, z, 1, z_i.ncols())?;
        Ok(g.value(out).clone())
    }

    /// Column-wise softmax of the linear head applied to `z_o`.
    pub fn classify(&self, z_o: &Array2<T>) -> Array2<T> {
        let logits = self.store.value(self.head.w).dot(z_o) + self.store.value(self.head.b);
        crate::autodiff::softmax_columns(&logits)
    }

    /// Eval-mode probabilities and features for a sequence of any length.
    pub fn infer(&self, inputs: &PatchedInputs) -> Result<Inference<T>> {
        let batch = self.batch_of(inputs)?;
        let mut g = Graph::new();
        let out = self.forward(&mut g, &batch, Pass::eval())?;
        Ok(Inference {
            probs: crate::autodiff::softmax_columns(g.value(out.logits)),
            features: g.value(out.features).clone(),
        })
    }
}
