//! From-scratch spatio-temporal classifiers.
//!
//! Two variants classify a normalised cine stack as good quality vs motion
//! artefact, both ending in a single logistic unit:
//!
//! * **3D CNN** — six 3x3x3 convolutions (ReLU after each) over
//!   (time, row, col) with four 2x2x2 max pools, then two fully connected
//!   layers.
//! * **LRCN** — a shared per-frame 2D extractor (six 3x3 convolutions,
//!   three 2x2 pools, one fully connected feature layer) feeding an LSTM
//!   whose final hidden state drives the output unit.
//!
//! Dropout (train-time only, inverted scaling) follows every convolution
//! and the first fully connected layer. All forward/backward passes are
//! hand-written; `gradcheck` verifies them against central finite
//! differences.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod train;

use ndarray::{Array1, Array2, Array3, Array4, Array5, ArrayD, ArrayViewD, ArrayViewMutD};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cine::{CineSequence, QualityLabel};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use layers::*;

pub use layers::Scalar;
pub use train::{backward, loss, sgd_step, train, TrainConfig, TrainHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Cnn3d,
    Lrcn,
}

/// Pools follow convolutions 1, 2, 4, 6 (3D CNN: four pools).
const CNN3D_POOL_AFTER: [bool; 6] = [true, true, false, true, false, true];
/// Pools follow convolutions 2, 4, 6 (LRCN extractor: three pools).
const LRCN_POOL_AFTER: [bool; 6] = [false, true, false, true, false, true];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub variant: Variant,
    /// Expected input dims `(T, H, W)`.
    pub input: (usize, usize, usize),
    pub conv_channels: [usize; 6],
    /// Square/cubic kernel edge (odd).
    pub kernel: usize,
    /// Width of the first fully connected layer (3D CNN head).
    pub fc_hidden: usize,
    /// Per-frame feature width (LRCN).
    pub feature_dim: usize,
    /// Recurrent state width (LRCN).
    pub lstm_hidden: usize,
    pub dropout_p: f64,
}

impl ArchDescriptor {
    pub fn cnn3d(input: (usize, usize, usize)) -> Self {
        Self {
            variant: Variant::Cnn3d,
            input,
            conv_channels: [4, 4, 8, 8, 16, 16],
            kernel: 3,
            fc_hidden: 32,
            feature_dim: 64,
            lstm_hidden: 32,
            dropout_p: 0.5,
        }
    }

    pub fn lrcn(input: (usize, usize, usize)) -> Self {
        Self {
            variant: Variant::Lrcn,
            ..Self::cnn3d(input)
        }
    }

    /// Smallest valid 3D CNN used by the gradient checker.
    pub fn tiny_cnn3d() -> Self {
        Self {
            conv_channels: [2, 2, 2, 2, 2, 2],
            fc_hidden: 4,
            dropout_p: 0.0,
            ..Self::cnn3d((16, 16, 16))
        }
    }

    /// Smallest valid LRCN used by the gradient checker.
    pub fn tiny_lrcn() -> Self {
        Self {
            conv_channels: [2, 2, 2, 2, 2, 2],
            feature_dim: 4,
            lstm_hidden: 3,
            dropout_p: 0.0,
            ..Self::lrcn((3, 8, 8))
        }
    }

    fn pool_plan(&self) -> &'static [bool; 6] {
        match self.variant {
            Variant::Cnn3d => &CNN3D_POOL_AFTER,
            Variant::Lrcn => &LRCN_POOL_AFTER,
        }
    }

    /// Spatial(-temporal) extent entering the head, after all pools.
    fn reduced_dims(&self) -> Result<(usize, usize, usize)> {
        let (mut t, mut h, mut w) = self.input;
        for (i, &pool) in self.pool_plan().iter().enumerate() {
            if !pool {
                continue;
            }
            if self.variant == Variant::Cnn3d {
                t /= 2;
            }
            h /= 2;
            w /= 2;
            if h == 0 || w == 0 || (self.variant == Variant::Cnn3d && t == 0) {
                return Err(Error::invalid(format!(
                    "input {:?} collapses to zero at pool {}",
                    self.input,
                    i + 1
                )));
            }
        }
        Ok((t, h, w))
    }

    /// Flattened width entering the first fully connected layer.
    pub fn flat_dim(&self) -> Result<usize> {
        let (t, h, w) = self.reduced_dims()?;
        Ok(match self.variant {
            Variant::Cnn3d => self.conv_channels[5] * t * h * w,
            Variant::Lrcn => self.conv_channels[5] * h * w,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::invalid("kernel must be odd"));
        }
        if self.conv_channels.iter().any(|&c| c == 0) {
            return Err(Error::invalid("conv channels must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid("dropout_p must lie in [0, 1)"));
        }
        let (t, _, _) = self.input;
        if t < 2 {
            return Err(Error::invalid("input needs T >= 2"));
        }
        if self.variant == Variant::Lrcn && (self.feature_dim == 0 || self.lstm_hidden == 0) {
            return Err(Error::invalid("LRCN widths must be positive"));
        }
        self.flat_dim()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Every weight from N(0, 1).
    PaperGaussian,
    /// Fan-in scaled: N(0, 2/fan_in).
    Scaled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer<F> {
    pub w: Array4<F>,
    pub b: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv3dLayer<F> {
    pub w: Array5<F>,
    pub b: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<F> {
    pub w_ih: Array2<F>,
    pub w_hh: Array2<F>,
    pub b: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cnn3dNet<F> {
    pub convs: Vec<Conv3dLayer<F>>,
    pub fc1: DenseLayer<F>,
    pub fc2: DenseLayer<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrcnNet<F> {
    pub convs: Vec<Conv2dLayer<F>>,
    pub fc_feat: DenseLayer<F>,
    pub lstm: LstmLayer<F>,
    pub fc_out: DenseLayer<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Net<F> {
    Cnn3d(Cnn3dNet<F>),
    Lrcn(LrcnNet<F>),
}

impl<F: Scalar> Net<F> {
    /// Parameter views in canonical order (convs, then head layers).
    pub fn params(&self) -> Vec<ArrayViewD<'_, F>> {
        let mut v = Vec::new();
        match self {
            Net::Cnn3d(n) => {
                for c in &n.convs {
                    v.push(c.w.view().into_dyn());
                    v.push(c.b.view().into_dyn());
                }
                for fc in [&n.fc1, &n.fc2] {
                    v.push(fc.w.view().into_dyn());
                    v.push(fc.b.view().into_dyn());
                }
            }
            Net::Lrcn(n) => {
                for c in &n.convs {
                    v.push(c.w.view().into_dyn());
                    v.push(c.b.view().into_dyn());
                }
                v.push(n.fc_feat.w.view().into_dyn());
                v.push(n.fc_feat.b.view().into_dyn());
                v.push(n.lstm.w_ih.view().into_dyn());
                v.push(n.lstm.w_hh.view().into_dyn());
                v.push(n.lstm.b.view().into_dyn());
                v.push(n.fc_out.w.view().into_dyn());
                v.push(n.fc_out.b.view().into_dyn());
            }
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        let mut v = Vec::new();
        match self {
            Net::Cnn3d(n) => {
                for c in &mut n.convs {
                    v.push(c.w.view_mut().into_dyn());
                    v.push(c.b.view_mut().into_dyn());
                }
                v.push(n.fc1.w.view_mut().into_dyn());
                v.push(n.fc1.b.view_mut().into_dyn());
                v.push(n.fc2.w.view_mut().into_dyn());
                v.push(n.fc2.b.view_mut().into_dyn());
            }
            Net::Lrcn(n) => {
                for c in &mut n.convs {
                    v.push(c.w.view_mut().into_dyn());
                    v.push(c.b.view_mut().into_dyn());
                }
                v.push(n.fc_feat.w.view_mut().into_dyn());
                v.push(n.fc_feat.b.view_mut().into_dyn());
                v.push(n.lstm.w_ih.view_mut().into_dyn());
                v.push(n.lstm.w_hh.view_mut().into_dyn());
                v.push(n.lstm.b.view_mut().into_dyn());
                v.push(n.fc_out.w.view_mut().into_dyn());
                v.push(n.fc_out.b.view_mut().into_dyn());
            }
        }
        v
    }
}

/// Architecture plus parameters plus the optimiser's momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<F: Scalar> {
    pub arch: ArchDescriptor,
    pub net: Net<F>,
    /// Momentum buffers, aligned with the canonical parameter order.
    pub velocity: Vec<ArrayD<F>>,
}

/// Gradients in canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<F>(pub Vec<ArrayD<F>>);

impl<F: Scalar> Grads<F> {
    pub fn zeros_like(model: &ClassifierModel<F>) -> Self {
        Grads(
            model
                .params()
                .iter()
                .map(|p| ArrayD::zeros(p.raw_dim()))
                .collect(),
        )
    }

    pub fn add_assign(&mut self, other: &Grads<F>) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, by: F) {
        for g in &mut self.0 {
            g.mapv_inplace(|v| v * by);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// One labelled training/evaluation item: a normalised crop plus label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub frames: Array3<f32>,
    pub label: u8,
    pub severity: Option<u8>,
}

impl Sample {
    pub fn new(seq: &CineSequence, label: &QualityLabel) -> Self {
        Self {
            id: seq.id.clone(),
            frames: seq.frames.clone(),
            label: label.label,
            severity: label.severity,
        }
    }
}

fn to_scalar<F: Scalar>(frames: &Array3<f32>) -> Array3<F> {
    frames.mapv(|v| F::from_float(v as f64))
}

// ---------------------------------------------------------------------------
// Initialisation
// ---------------------------------------------------------------------------

fn draw<F: Scalar>(rng: &mut ChaCha8Rng, std: f64) -> F {
    let v: f64 = StandardNormal.sample(rng);
    F::from_float(v * std)
}

fn init_std(mode: InitMode, fan_in: usize) -> f64 {
    match mode {
        InitMode::PaperGaussian => 1.0,
        InitMode::Scaled => (2.0 / fan_in as f64).sqrt(),
    }
}

/// Build a model with Gaussian weights and zero biases/momentum.
pub fn init_model<F: Scalar>(
    arch: &ArchDescriptor,
    mode: InitMode,
    seed: u64,
) -> Result<ClassifierModel<F>> {
    arch.validate()?;
    let mut rng = RngStream::root(seed).derive(0x1217).rng();
    let k = arch.kernel;
    let flat = arch.flat_dim()?;
    let net = match arch.variant {
        Variant::Cnn3d => {
            let mut convs = Vec::with_capacity(6);
            let mut cin = 1usize;
            for &cout in &arch.conv_channels {
                let std = init_std(mode, cin * k * k * k);
                let w = Array5::from_shape_simple_fn((cout, cin, k, k, k), || {
                    draw::<F>(&mut rng, std)
                });
                convs.push(Conv3dLayer {
                    w,
                    b: Array1::zeros(cout),
                });
                cin = cout;
            }
            let std1 = init_std(mode, flat);
            let fc1 = DenseLayer {
                w: Array2::from_shape_simple_fn((arch.fc_hidden, flat), || {
                    draw::<F>(&mut rng, std1)
                }),
                b: Array1::zeros(arch.fc_hidden),
            };
            let std2 = init_std(mode, arch.fc_hidden);
            let fc2 = DenseLayer {
                w: Array2::from_shape_simple_fn((1, arch.fc_hidden), || {
                    draw::<F>(&mut rng, std2)
                }),
                b: Array1::zeros(1),
            };
            Net::Cnn3d(Cnn3dNet { convs, fc1, fc2 })
        }
        Variant::Lrcn => {
            let mut convs = Vec::with_capacity(6);
            let mut cin = 1usize;
            for &cout in &arch.conv_channels {
                let std = init_std(mode, cin * k * k);
                let w =
                    Array4::from_shape_simple_fn((cout, cin, k, k), || draw::<F>(&mut rng, std));
                convs.push(Conv2dLayer {
                    w,
                    b: Array1::zeros(cout),
                });
                cin = cout;
            }
            let stdf = init_std(mode, flat);
            let fc_feat = DenseLayer {
                w: Array2::from_shape_simple_fn((arch.feature_dim, flat), || {
                    draw::<F>(&mut rng, stdf)
                }),
                b: Array1::zeros(arch.feature_dim),
            };
            let h = arch.lstm_hidden;
            let std_ih = init_std(mode, arch.feature_dim);
            let std_hh = init_std(mode, h);
            let lstm = LstmLayer {
                w_ih: Array2::from_shape_simple_fn((4 * h, arch.feature_dim), || {
                    draw::<F>(&mut rng, std_ih)
                }),
                w_hh: Array2::from_shape_simple_fn((4 * h, h), || draw::<F>(&mut rng, std_hh)),
                b: Array1::zeros(4 * h),
            };
            let std_out = init_std(mode, h);
            let fc_out = DenseLayer {
                w: Array2::from_shape_simple_fn((1, h), || draw::<F>(&mut rng, std_out)),
                b: Array1::zeros(1),
            };
            Net::Lrcn(LrcnNet {
                convs,
                fc_feat,
                lstm,
                fc_out,
            })
        }
    };
    let mut model = ClassifierModel {
        arch: arch.clone(),
        net,
        velocity: Vec::new(),
    };
    model.velocity = model
        .params()
        .iter()
        .map(|p| ArrayD::zeros(p.raw_dim()))
        .collect();
    Ok(model)
}

// ---------------------------------------------------------------------------
// Parameter access
// ---------------------------------------------------------------------------

impl<F: Scalar> ClassifierModel<F> {
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        match &self.net {
            Net::Cnn3d(_) => {
                for i in 1..=6 {
                    names.push(format!("conv{i}.w"));
                    names.push(format!("conv{i}.b"));
                }
                for fc in ["fc1", "fc2"] {
                    names.push(format!("{fc}.w"));
                    names.push(format!("{fc}.b"));
                }
            }
            Net::Lrcn(_) => {
                for i in 1..=6 {
                    names.push(format!("conv{i}.w"));
                    names.push(format!("conv{i}.b"));
                }
                names.push("fc_feat.w".into());
                names.push("fc_feat.b".into());
                names.push("lstm.w_ih".into());
                names.push("lstm.w_hh".into());
                names.push("lstm.b".into());
                names.push("fc_out.w".into());
                names.push("fc_out.b".into());
            }
        }
        names
    }

    pub fn params(&self) -> Vec<ArrayViewD<'_, F>> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        self.net.params_mut()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn snapshot(&self) -> Vec<ArrayD<F>> {
        self.params().iter().map(|p| p.to_owned()).collect()
    }

    pub fn restore(&mut self, snap: &[ArrayD<F>]) {
        for (mut p, s) in self.params_mut().into_iter().zip(snap) {
            p.assign(s);
        }
    }

    /// Probability of the artefact class for one sequence.
    ///
    /// Inference (`train_mode = false`) is deterministic; training mode
    /// applies dropout and requires a generator.
    pub fn forward(
        &self,
        frames: &Array3<f32>,
        train_mode: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<f64> {
        let x = to_scalar::<F>(frames);
        let (logit, _) = self.forward_logit(&x, train_mode, rng)?;
        Ok(sigmoid(logit).into_f64())
    }

    pub(crate) fn forward_logit(
        &self,
        x: &Array3<F>,
        train_mode: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(F, Cache<F>)> {
        if x.dim() != self.arch.input {
            return Err(Error::invalid(format!(
                "input dims {:?} do not match architecture {:?}",
                x.dim(),
                self.arch.input
            )));
        }
        let p = self.arch.dropout_p;
        let dropout_on = train_mode && p > 0.0;
        if dropout_on && rng.is_none() {
            return Err(Error::invalid("training-mode forward needs a generator"));
        }
        match &self.net {
            Net::Cnn3d(n) => {
                let (t, h, w) = self.arch.input;
                let vol = x.clone().into_shape_with_order((1, t, h, w)).unwrap();
                let mut stages: Vec<Cnn3dStage<F>> = Vec::with_capacity(6);
                let mut cur = vol;
                for (i, conv) in n.convs.iter().enumerate() {
                    let input = cur;
                    let mut post = conv3d_forward(&input, &conv.w, &conv.b);
                    relu_inplace(&mut post);
                    let drop_mask = if dropout_on {
                        let m = dropout_mask(post.raw_dim(), p, rng.as_deref_mut().unwrap());
                        post = &post * &m;
                        Some(m)
                    } else {
                        None
                    };
                    let pool = if CNN3D_POOL_AFTER[i] {
                        let (pooled, idx) = maxpool3d_forward(&post);
                        cur = pooled;
                        Some(idx)
                    } else {
                        cur = post.clone();
                        None
                    };
                    stages.push(Cnn3dStage {
                        input,
                        post,
                        drop_mask,
                        pool,
                    });
                }
                let flat_len = cur.len();
                let head_in = cur
                    .into_shape_with_order((1, flat_len))
                    .unwrap();
                let mut hid = dense_forward(&head_in, &n.fc1.w, &n.fc1.b);
                relu_inplace(&mut hid);
                let hid_mask = if dropout_on {
                    let m = dropout_mask(hid.raw_dim(), p, rng.as_deref_mut().unwrap());
                    hid = &hid * &m;
                    Some(m)
                } else {
                    None
                };
                let out = dense_forward(&hid, &n.fc2.w, &n.fc2.b);
                let logit = out[[0, 0]];
                Ok((
                    logit,
                    Cache::Cnn3d(Cnn3dCache {
                        stages,
                        head_in,
                        hid,
                        hid_mask,
                    }),
                ))
            }
            Net::Lrcn(n) => {
                let (t, h, w) = self.arch.input;
                let frames4 = x.clone().into_shape_with_order((t, 1, h, w)).unwrap();
                let mut stages: Vec<LrcnStage<F>> = Vec::with_capacity(6);
                let mut cur = frames4;
                for (i, conv) in n.convs.iter().enumerate() {
                    let input = cur;
                    let mut post = conv2d_forward(&input, &conv.w, &conv.b);
                    relu_inplace(&mut post);
                    let drop_mask = if dropout_on {
                        let m = dropout_mask(post.raw_dim(), p, rng.as_deref_mut().unwrap());
                        post = &post * &m;
                        Some(m)
                    } else {
                        None
                    };
                    let pool = if LRCN_POOL_AFTER[i] {
                        let (pooled, idx) = maxpool2d_forward(&post);
                        cur = pooled;
                        Some(idx)
                    } else {
                        cur = post.clone();
                        None
                    };
                    stages.push(LrcnStage {
                        input,
                        post,
                        drop_mask,
                        pool,
                    });
                }
                let flat = cur.len() / t;
                let head_in = cur.into_shape_with_order((t, flat)).unwrap();
                let mut feats = dense_forward(&head_in, &n.fc_feat.w, &n.fc_feat.b);
                relu_inplace(&mut feats);
                let feat_mask = if dropout_on {
                    let m = dropout_mask(feats.raw_dim(), p, rng.as_deref_mut().unwrap());
                    feats = &feats * &m;
                    Some(m)
                } else {
                    None
                };
                let (h_last, lstm_cache) =
                    lstm_forward(&feats, &n.lstm.w_ih, &n.lstm.w_hh, &n.lstm.b);
                let logit = n.fc_out.w.row(0).dot(&h_last) + n.fc_out.b[0];
                Ok((
                    logit,
                    Cache::Lrcn(LrcnCache {
                        stages,
                        head_in,
                        feats,
                        feat_mask,
                        lstm: lstm_cache,
                        h_last,
                    }),
                ))
            }
        }
    }

    /// Exact gradients of `dlogit * logit(x)` w.r.t. every parameter, in
    /// canonical parameter order.
    pub(crate) fn grads_from_cache(&self, cache: &Cache<F>, dlogit: F) -> Grads<F> {
        match (&self.net, cache) {
            (Net::Cnn3d(n), Cache::Cnn3d(c)) => {
                let dout = Array2::from_elem((1, 1), dlogit);
                let (mut dhid, dw2, db2) = dense_backward(&c.hid, &n.fc2.w, &dout);
                if let Some(m) = &c.hid_mask {
                    dhid = &dhid * m;
                }
                relu_backward_inplace(&mut dhid, &c.hid);
                let (dflat, dw1, db1) = dense_backward(&c.head_in, &n.fc1.w, &dhid);
                let last_dim = pooled_output_dim(&c.stages[5]);
                let mut dcur = dflat.into_shape_with_order(last_dim).unwrap();
                let mut conv_grads: Vec<(ArrayD<F>, ArrayD<F>)> = Vec::with_capacity(6);
                for (i, stage) in c.stages.iter().enumerate().rev() {
                    let mut dpost = match &stage.pool {
                        Some(idx) => maxpool3d_backward(&dcur, idx, stage.post.dim()),
                        None => dcur,
                    };
                    if let Some(m) = &stage.drop_mask {
                        dpost = &dpost * m;
                    }
                    relu_backward_inplace(&mut dpost, &stage.post);
                    let (dx, dw, db) = conv3d_backward(&stage.input, &n.convs[i].w, &dpost);
                    conv_grads.push((dw.into_dyn(), db.into_dyn()));
                    dcur = dx;
                }
                conv_grads.reverse();
                let mut out: Vec<ArrayD<F>> = Vec::new();
                for (dw, db) in conv_grads {
                    out.push(dw);
                    out.push(db);
                }
                out.push(dw1.into_dyn());
                out.push(db1.into_dyn());
                out.push(dw2.into_dyn());
                out.push(db2.into_dyn());
                Grads(out)
            }
            (Net::Lrcn(n), Cache::Lrcn(c)) => {
                let dh_last = n.fc_out.w.row(0).mapv(|v| v * dlogit);
                let dw_out = {
                    let mut dw = Array2::zeros(n.fc_out.w.dim());
                    dw.row_mut(0).assign(&c.h_last.mapv(|v| v * dlogit));
                    dw
                };
                let db_out = Array1::from_elem(1, dlogit);
                let (mut dfeats, dw_ih, dw_hh, db_lstm) =
                    lstm_backward(&c.feats, &c.lstm, &n.lstm.w_ih, &n.lstm.w_hh, &dh_last);
                if let Some(m) = &c.feat_mask {
                    dfeats = &dfeats * m;
                }
                relu_backward_inplace(&mut dfeats, &c.feats);
                let (dflat, dw_feat, db_feat) =
                    dense_backward(&c.head_in, &n.fc_feat.w, &dfeats);
                let last_dim = pooled_output_dim2(&c.stages[5]);
                let mut dcur = dflat.into_shape_with_order(last_dim).unwrap();
                let mut conv_grads: Vec<(ArrayD<F>, ArrayD<F>)> = Vec::with_capacity(6);
                for (i, stage) in c.stages.iter().enumerate().rev() {
                    let mut dpost = match &stage.pool {
                        Some(idx) => maxpool2d_backward(&dcur, idx, stage.post.dim()),
                        None => dcur,
                    };
                    if let Some(m) = &stage.drop_mask {
                        dpost = &dpost * m;
                    }
                    relu_backward_inplace(&mut dpost, &stage.post);
                    let (dx, dw, db) = conv2d_backward(&stage.input, &n.convs[i].w, &dpost);
                    conv_grads.push((dw.into_dyn(), db.into_dyn()));
                    dcur = dx;
                }
                conv_grads.reverse();
                let mut out: Vec<ArrayD<F>> = Vec::new();
                for (dw, db) in conv_grads {
                    out.push(dw);
                    out.push(db);
                }
                out.push(dw_feat.into_dyn());
                out.push(db_feat.into_dyn());
                out.push(dw_ih.into_dyn());
                out.push(dw_hh.into_dyn());
                out.push(db_lstm.into_dyn());
                out.push(dw_out.into_dyn());
                out.push(db_out.into_dyn());
                Grads(out)
            }
            _ => unreachable!("cache variant matches net variant"),
        }
    }
}

fn pooled_output_dim<F: Scalar>(stage: &Cnn3dStage<F>) -> (usize, usize, usize, usize) {
    match &stage.pool {
        Some(idx) => idx.dim(),
        None => stage.post.dim(),
    }
}

fn pooled_output_dim2<F: Scalar>(stage: &LrcnStage<F>) -> (usize, usize, usize, usize) {
    match &stage.pool {
        Some(idx) => idx.dim(),
        None => stage.post.dim(),
    }
}

pub(crate) struct Cnn3dStage<F> {
    input: Array4<F>,
    /// Post ReLU (and dropout), pre pool.
    post: Array4<F>,
    drop_mask: Option<Array4<F>>,
    pool: Option<Array4<u32>>,
}

pub(crate) struct Cnn3dCache<F> {
    stages: Vec<Cnn3dStage<F>>,
    head_in: Array2<F>,
    hid: Array2<F>,
    hid_mask: Option<Array2<F>>,
}

pub(crate) struct LrcnStage<F> {
    input: Array4<F>,
    post: Array4<F>,
    drop_mask: Option<Array4<F>>,
    pool: Option<Array4<u32>>,
}

pub(crate) struct LrcnCache<F> {
    stages: Vec<LrcnStage<F>>,
    head_in: Array2<F>,
    feats: Array2<F>,
    feat_mask: Option<Array2<F>>,
    lstm: LstmCache<F>,
    h_last: Array1<F>,
}

pub(crate) enum Cache<F> {
    Cnn3d(Cnn3dCache<F>),
    Lrcn(LrcnCache<F>),
}

/// ReLU activation signature used by the gradient checker to skip
/// coordinates whose perturbation flips a kink (ReLU activation pattern or
/// pooling argmax selection).
pub(crate) fn activation_signature<F: Scalar>(cache: &Cache<F>) -> Vec<u64> {
    fn push_bits(sig: &mut Vec<u64>, iter: impl Iterator<Item = bool>) {
        let mut word = 0u64;
        let mut n = 0;
        for bit in iter {
            word = (word << 1) | bit as u64;
            n += 1;
            if n == 64 {
                sig.push(word);
                word = 0;
                n = 0;
            }
        }
        if n > 0 {
            sig.push(word);
        }
    }
    let mut sig = Vec::new();
    match cache {
        Cache::Cnn3d(c) => {
            for stage in &c.stages {
                push_bits(&mut sig, stage.post.iter().map(|&v| v > F::zero()));
                if let Some(idx) = &stage.pool {
                    sig.extend(idx.iter().map(|&i| i as u64));
                }
            }
            push_bits(&mut sig, c.hid.iter().map(|&v| v > F::zero()));
        }
        Cache::Lrcn(c) => {
            for stage in &c.stages {
                push_bits(&mut sig, stage.post.iter().map(|&v| v > F::zero()));
                if let Some(idx) = &stage.pool {
                    sig.extend(idx.iter().map(|&i| i as u64));
                }
            }
            push_bits(&mut sig, c.feats.iter().map(|&v| v > F::zero()));
        }
    }
    sig
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Axis};
    use rand::Rng;

    fn random_input(arch: &ArchDescriptor, seed: u64) -> Array3<f32> {
        let mut rng = RngStream::root(seed).rng();
        let (t, h, w) = arch.input;
        Array3::from_shape_simple_fn((t, h, w), || rng.random_range(0.0f32..1.0))
    }

    #[test]
    fn init_is_deterministic() {
        let arch = ArchDescriptor::tiny_lrcn();
        let a: ClassifierModel<f32> = init_model(&arch, InitMode::Scaled, 9).unwrap();
        let b: ClassifierModel<f32> = init_model(&arch, InitMode::Scaled, 9).unwrap();
        assert_eq!(a.net, b.net);
        let c: ClassifierModel<f32> = init_model(&arch, InitMode::Scaled, 10).unwrap();
        assert_ne!(a.net, c.net);
    }

    #[test]
    fn paper_gaussian_init_statistics() {
        // Enough parameters to estimate mean/std tightly.
        let arch = ArchDescriptor {
            feature_dim: 96,
            ..ArchDescriptor::lrcn((4, 48, 48))
        };
        let model: ClassifierModel<f64> =
            init_model(&arch, InitMode::PaperGaussian, 3).unwrap();
        let mut weights = Vec::new();
        for (name, p) in model.param_names().iter().zip(model.params()) {
            if name.ends_with(".w") || name.contains("w_") {
                weights.extend(p.iter().copied());
            }
        }
        assert!(weights.len() >= 100_000, "only {} weights", weights.len());
        let n = weights.len() as f64;
        let mean = weights.iter().sum::<f64>() / n;
        let std = (weights.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((std - 1.0).abs() < 0.02, "std {std}");
    }

    #[test]
    fn scaled_init_matches_fan_in() {
        let arch = ArchDescriptor {
            feature_dim: 400,
            ..ArchDescriptor::lrcn((4, 16, 16))
        };
        let model: ClassifierModel<f64> = init_model(&arch, InitMode::Scaled, 4).unwrap();
        // fc_out has fan_in = lstm_hidden; use fc_feat (fan_in = flat dim).
        let flat = arch.flat_dim().unwrap();
        let idx = model
            .param_names()
            .iter()
            .position(|n| n == "fc_feat.w")
            .unwrap();
        let p = &model.params()[idx];
        let n = p.len() as f64;
        let std = (p.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let expected = (2.0 / flat as f64).sqrt();
        assert!(
            (std - expected).abs() < 0.05 * expected,
            "std {std} vs {expected}"
        );
        // Spot-check a layer with fan_in exactly 50 via a bespoke arch.
        let arch50 = ArchDescriptor {
            lstm_hidden: 50,
            ..ArchDescriptor::tiny_lrcn()
        };
        let m50: ClassifierModel<f64> = init_model(&arch50, InitMode::Scaled, 5).unwrap();
        let idx = m50
            .param_names()
            .iter()
            .position(|n| n == "fc_out.w")
            .unwrap();
        let p = &m50.params()[idx];
        let std = (p.iter().map(|v| v * v).sum::<f64>() / p.len() as f64).sqrt();
        let expected = (2.0f64 / 50.0).sqrt();
        assert!((std - expected).abs() < 0.05 * expected + 0.05, "std {std}");
    }

    #[test]
    fn forward_stays_in_open_unit_interval() {
        for arch in [ArchDescriptor::tiny_cnn3d(), ArchDescriptor::tiny_lrcn()] {
            let model: ClassifierModel<f32> = init_model(&arch, InitMode::Scaled, 6).unwrap();
            let x = random_input(&arch, 7);
            let y = model.forward(&x, false, None).unwrap();
            assert!(y > 0.0 && y < 1.0, "y = {y}");
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let arch = ArchDescriptor::tiny_lrcn();
        let model: ClassifierModel<f32> = init_model(&arch, InitMode::Scaled, 8).unwrap();
        let x = random_input(&arch, 9);
        let a = model.forward(&x, false, None).unwrap();
        let b = model.forward(&x, false, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lrcn_is_sensitive_to_frame_order() {
        let arch = ArchDescriptor::tiny_lrcn();
        let model: ClassifierModel<f64> = init_model(&arch, InitMode::Scaled, 10).unwrap();
        let x = random_input(&arch, 11);
        let mut permuted = x.clone();
        let first = x.index_axis(Axis(0), 0).to_owned();
        permuted
            .index_axis_mut(Axis(0), 0)
            .assign(&x.index_axis(Axis(0), 2));
        permuted.index_axis_mut(Axis(0), 2).assign(&first);
        let a = model.forward(&x, false, None).unwrap();
        let b = model.forward(&permuted, false, None).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let arch = ArchDescriptor::tiny_lrcn();
        let model: ClassifierModel<f32> = init_model(&arch, InitMode::Scaled, 12).unwrap();
        let x = Array3::zeros((2, 8, 8));
        assert!(model.forward(&x, false, None).is_err());
    }

    #[test]
    fn arch_validation_catches_collapsing_input() {
        let arch = ArchDescriptor::cnn3d((4, 8, 8));
        assert!(arch.validate().is_err());
        assert!(ArchDescriptor::cnn3d((16, 16, 16)).validate().is_ok());
    }

    #[test]
    fn tiny_archs_fit_gradient_check_budget() {
        for arch in [ArchDescriptor::tiny_cnn3d(), ArchDescriptor::tiny_lrcn()] {
            let model: ClassifierModel<f64> = init_model(&arch, InitMode::Scaled, 1).unwrap();
            assert!(model.param_count() <= 5000, "{}", model.param_count());
        }
    }

    #[test]
    fn velocity_matches_param_shapes() {
        let arch = ArchDescriptor::tiny_cnn3d();
        let model: ClassifierModel<f32> = init_model(&arch, InitMode::Scaled, 2).unwrap();
        assert_eq!(model.velocity.len(), model.params().len());
        for (v, p) in model.velocity.iter().zip(model.params()) {
            assert_eq!(v.shape(), p.shape());
        }
    }
}
