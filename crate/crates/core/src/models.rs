//! Feature generator, the two regressor heads and the conditional discriminator.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::PROBABILITY_EPS;
use crate::nn::{
    relu_array, relu_backward, sigmoid, BiLstm, BiLstmCache, ConvEncoder, ConvEncoderCache,
    Linear, Parameters, Real,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputKind {
    /// Windows of `window_length` consecutive multi-channel signal vectors.
    Sequence {
        window_length: usize,
        signal_dim: usize,
    },
    /// NHWC images.
    Image {
        height: usize,
        width: usize,
        channels: usize,
    },
}

impl InputKind {
    /// Number of scalars in one flattened sample.
    pub fn sample_len(&self) -> usize {
        match *self {
            InputKind::Sequence {
                window_length,
                signal_dim,
            } => window_length * signal_dim,
            InputKind::Image {
                height,
                width,
                channels,
            } => height * width * channels,
        }
    }

    pub fn sample_shape(&self) -> Vec<usize> {
        match *self {
            InputKind::Sequence {
                window_length,
                signal_dim,
            } => vec![window_length, signal_dim],
            InputKind::Image {
                height,
                width,
                channels,
            } => vec![height, width, channels],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input: InputKind,
    #[serde(default = "defaults::feature_dim")]
    pub feature_dim: usize,
    /// Width `k` of the condition vector produced by each head's first layer.
    #[serde(default = "defaults::condition_dim")]
    pub condition_dim: usize,
    /// Range of each label coordinate, `[L, W]` in meters for a floor plan.
    /// Coordinates are divided by these extents when building conditional vectors.
    pub label_extents: Vec<f64>,
    #[serde(default = "defaults::discriminator_hidden")]
    pub discriminator_hidden: usize,
    /// Channel widths of the three convolution blocks (image input only).
    #[serde(default = "defaults::conv_widths")]
    pub conv_widths: [usize; 3],
}

mod defaults {
    pub fn feature_dim() -> usize {
        512
    }
    pub fn condition_dim() -> usize {
        64
    }
    pub fn discriminator_hidden() -> usize {
        64
    }
    pub fn conv_widths() -> [usize; 3] {
        [8, 16, 32]
    }
}

impl ModelConfig {
    /// Sequence model over `window_length x signal_dim` windows on an `L x W` floor.
    pub fn sequence(window_length: usize, signal_dim: usize, extents: (f64, f64)) -> Self {
        Self {
            input: InputKind::Sequence {
                window_length,
                signal_dim,
            },
            feature_dim: defaults::feature_dim(),
            condition_dim: defaults::condition_dim(),
            label_extents: vec![extents.0, extents.1],
            discriminator_hidden: defaults::discriminator_hidden(),
            conv_widths: defaults::conv_widths(),
        }
    }

    pub fn image(height: usize, width: usize, channels: usize, label_dim: usize) -> Self {
        Self {
            input: InputKind::Image {
                height,
                width,
                channels,
            },
            feature_dim: 128,
            condition_dim: defaults::condition_dim(),
            label_extents: vec![1.0; label_dim],
            discriminator_hidden: defaults::discriminator_hidden(),
            conv_widths: defaults::conv_widths(),
        }
    }

    pub fn with_feature_dim(mut self, feature_dim: usize) -> Self {
        self.feature_dim = feature_dim;
        self
    }

    pub fn label_dim(&self) -> usize {
        self.label_extents.len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        match self.input {
            InputKind::Sequence {
                window_length,
                signal_dim,
            } => {
                positive("model.input.window_length", window_length)?;
                positive("model.input.signal_dim", signal_dim)?;
                if !self.feature_dim.is_multiple_of(2) {
                    return Err(Error::config(
                        "model.feature_dim",
                        "must be even for the bidirectional encoder",
                    ));
                }
            }
            InputKind::Image {
                height,
                width,
                channels,
            } => {
                positive("model.input.channels", channels)?;
                if height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0 {
                    return Err(Error::config(
                        "model.input",
                        "image height and width must be positive multiples of 8",
                    ));
                }
                for (i, &w) in self.conv_widths.iter().enumerate() {
                    positive(&format!("model.conv_widths[{i}]"), w)?;
                }
            }
        }
        positive("model.feature_dim", self.feature_dim)?;
        positive("model.condition_dim", self.condition_dim)?;
        positive("model.discriminator_hidden", self.discriminator_hidden)?;
        if self.label_extents.is_empty() {
            return Err(Error::config("model.label_extents", "must not be empty"));
        }
        if let Some(bad) = self.label_extents.iter().find(|e| !(**e > 0.0)) {
            return Err(Error::config(
                "model.label_extents",
                format!("extent {bad} must be positive"),
            ));
        }
        Ok(())
    }
}

/// The six disjoint parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupId {
    F,
    GHat,
    RHat,
    GTilde,
    RTilde,
    D,
}

impl GroupId {
    pub const ALL: [GroupId; 6] = [
        GroupId::F,
        GroupId::GHat,
        GroupId::RHat,
        GroupId::GTilde,
        GroupId::RTilde,
        GroupId::D,
    ];

    pub const REGRESSORS: [GroupId; 4] = [
        GroupId::GHat,
        GroupId::RHat,
        GroupId::GTilde,
        GroupId::RTilde,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupId::F => "F",
            GroupId::GHat => "G_hat",
            GroupId::RHat => "R_hat",
            GroupId::GTilde => "G_tilde",
            GroupId::RTilde => "R_tilde",
            GroupId::D => "D",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        GroupId::ALL.into_iter().find(|g| g.name() == name)
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which regressor head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Hat,
    Tilde,
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hat" => Ok(Head::Hat),
            "tilde" => Ok(Head::Tilde),
            other => Err(Error::contract(format!("unknown regressor head {other:?}"))),
        }
    }
}

/// Per-group SHA-256 digests truncated to 64 bits, indexed by [`GroupId::index`].
pub type GroupChecksums = [u64; 6];

#[derive(Debug, Clone)]
pub enum Encoder<R: Real> {
    Sequence(BiLstm<R>),
    Image(ConvEncoder<R>),
}

pub enum EncoderCache<R: Real> {
    Sequence(BiLstmCache<R>),
    Image(ConvEncoderCache<R>),
}

impl<R: Real> Encoder<R> {
    fn params(&self) -> Vec<&Array2<R>> {
        match self {
            Encoder::Sequence(m) => m.params(),
            Encoder::Image(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<R>> {
        match self {
            Encoder::Sequence(m) => m.params_mut(),
            Encoder::Image(m) => m.params_mut(),
        }
    }
}

/// Output of one regressor head.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorOutput<R: Real> {
    /// First-layer output before the sigmoid, `B x k`.
    pub g: Array2<R>,
    /// Coordinate prediction in label units, `B x label_dim`.
    pub l: Array2<R>,
    /// `[sigmoid(g), clamp(l / extents, 0, 1)]`, `B x (k + label_dim)`.
    pub h: Array2<R>,
}

pub struct HeadCache<R: Real> {
    features: Array2<R>,
    activated: Array2<R>,
    /// 1 where the normalized coordinate was not clamped.
    pass: Array2<R>,
}

pub struct DiscriminatorCache<R: Real> {
    input: Array2<R>,
    hidden: Array2<R>,
    prob: Array1<R>,
}

/// All trainable components. The same type doubles as a gradient container
/// (see [`ModelBundle::zeros_like`]).
#[derive(Debug, Clone)]
pub struct ModelBundle<R: Real> {
    config: ModelConfig,
    pub encoder: Encoder<R>,
    pub g_hat: Linear<R>,
    pub r_hat: Linear<R>,
    pub g_tilde: Linear<R>,
    pub r_tilde: Linear<R>,
    pub d_hidden: Linear<R>,
    pub d_out: Linear<R>,
}

impl<R: Real> ModelBundle<R> {
    /// Deterministic initialization from `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fd = config.feature_dim;
        let encoder = match config.input {
            InputKind::Sequence {
                window_length,
                signal_dim,
            } => Encoder::Sequence(BiLstm::new(window_length, signal_dim, fd / 2, &mut rng)),
            InputKind::Image {
                height,
                width,
                channels,
            } => Encoder::Image(ConvEncoder::new(
                height,
                width,
                channels,
                config.conv_widths,
                fd,
                &mut rng,
            )),
        };
        let k = config.condition_dim;
        let out = config.label_dim();
        let head = |rng: &mut ChaCha8Rng| {
            let g = Linear::new(fd, k, rng);
            let mut r = Linear::new(k, out, rng);
            // start predictions near the middle of the label range
            for (b, e) in r.bias.iter_mut().zip(&config.label_extents) {
                *b = R::lit(e / 2.0);
            }
            (g, r)
        };
        let (g_hat, r_hat) = head(&mut rng);
        let (g_tilde, r_tilde) = head(&mut rng);
        let d_hidden = Linear::new(fd + out, config.discriminator_hidden, &mut rng);
        let d_out = Linear::new(config.discriminator_hidden, 1, &mut rng);
        Ok(Self {
            config: config.clone(),
            encoder,
            g_hat,
            r_hat,
            g_tilde,
            r_tilde,
            d_hidden,
            d_out,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Same shapes, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for id in GroupId::ALL {
            for p in z.group_mut(id) {
                p.fill(R::zero());
            }
        }
        z
    }

    pub fn group(&self, id: GroupId) -> Vec<&Array2<R>> {
        match id {
            GroupId::F => self.encoder.params(),
            GroupId::GHat => self.g_hat.params(),
            GroupId::RHat => self.r_hat.params(),
            GroupId::GTilde => self.g_tilde.params(),
            GroupId::RTilde => self.r_tilde.params(),
            GroupId::D => {
                let mut v = self.d_hidden.params();
                v.extend(self.d_out.params());
                v
            }
        }
    }

    pub fn group_mut(&mut self, id: GroupId) -> Vec<&mut Array2<R>> {
        match id {
            GroupId::F => self.encoder.params_mut(),
            GroupId::GHat => self.g_hat.params_mut(),
            GroupId::RHat => self.r_hat.params_mut(),
            GroupId::GTilde => self.g_tilde.params_mut(),
            GroupId::RTilde => self.r_tilde.params_mut(),
            GroupId::D => {
                let mut v = self.d_hidden.params_mut();
                v.extend(self.d_out.params_mut());
                v
            }
        }
    }

    pub fn group_len(&self, id: GroupId) -> usize {
        self.group(id).iter().map(|p| p.len()).sum()
    }

    pub fn num_params(&self) -> usize {
        GroupId::ALL.iter().map(|&g| self.group_len(g)).sum()
    }

    pub fn checksum(&self, id: GroupId) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(id.name().as_bytes());
        for p in self.group(id) {
            hasher.update((p.nrows() as u64).to_le_bytes());
            hasher.update((p.ncols() as u64).to_le_bytes());
            for v in p.iter() {
                hasher.update(v.le_bytes());
            }
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    pub fn checksums(&self) -> GroupChecksums {
        GroupId::ALL.map(|g| self.checksum(g))
    }

    fn check_input(&self, x: &ArrayView2<R>) -> Result<()> {
        let want = self.config.input.sample_len();
        if x.ncols() != want {
            return Err(Error::contract(format!(
                "input rows have {} values, model expects {want} ({:?})",
                x.ncols(),
                self.config.input.sample_shape()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::contract("empty input batch"));
        }
        Ok(())
    }

    fn check_features(&self, f: &ArrayView2<R>) -> Result<()> {
        if f.ncols() != self.config.feature_dim {
            return Err(Error::contract(format!(
                "features have width {}, model expects {}",
                f.ncols(),
                self.config.feature_dim
            )));
        }
        Ok(())
    }

    /// Evaluation-mode features for a batch of flattened samples (one per row).
    pub fn extract_features(&self, x: &ArrayView2<R>) -> Result<Array2<R>> {
        self.check_input(x)?;
        Ok(match &self.encoder {
            Encoder::Sequence(m) => m.infer(x),
            Encoder::Image(m) => m.infer(x),
        })
    }

    pub(crate) fn encode_train(&self, x: &ArrayView2<R>) -> Result<(Array2<R>, EncoderCache<R>)> {
        self.check_input(x)?;
        Ok(match &self.encoder {
            Encoder::Sequence(m) => {
                let (y, c) = m.forward_train(x);
                (y, EncoderCache::Sequence(c))
            }
            Encoder::Image(m) => {
                let (y, c) = m.forward_train(x);
                (y, EncoderCache::Image(c))
            }
        })
    }

    /// Accumulates the generator's parameter gradients for `d_features`.
    pub(crate) fn encode_backward(
        &self,
        cache: &EncoderCache<R>,
        d_features: &Array2<R>,
        grad: &mut ModelBundle<R>,
    ) {
        match (&self.encoder, cache, &mut grad.encoder) {
            (Encoder::Sequence(m), EncoderCache::Sequence(c), Encoder::Sequence(g)) => {
                m.backward(c, d_features, Some(g), false);
            }
            (Encoder::Image(m), EncoderCache::Image(c), Encoder::Image(g)) => {
                m.backward(c, d_features, Some(g), false);
            }
            _ => unreachable!("gradient bundle built from a different encoder kind"),
        }
    }

    fn head(&self, head: Head) -> (&Linear<R>, &Linear<R>) {
        match head {
            Head::Hat => (&self.g_hat, &self.r_hat),
            Head::Tilde => (&self.g_tilde, &self.r_tilde),
        }
    }

    fn head_mut(&mut self, head: Head) -> (&mut Linear<R>, &mut Linear<R>) {
        match head {
            Head::Hat => (&mut self.g_hat, &mut self.r_hat),
            Head::Tilde => (&mut self.g_tilde, &mut self.r_tilde),
        }
    }

    /// Divides by the label extents and clamps into `[0, 1]`; also returns the pass-through mask.
    pub fn normalize_coordinates(&self, l: &Array2<R>) -> (Array2<R>, Array2<R>) {
        let mut out = l.clone();
        let mut pass = Array2::from_elem(l.raw_dim(), R::one());
        for (j, &e) in self.config.label_extents.iter().enumerate() {
            let e = R::lit(e);
            Zip::from(out.column_mut(j))
                .and(pass.column_mut(j))
                .for_each(|v, m| {
                    let n = *v / e;
                    if n < R::zero() {
                        *v = R::zero();
                        *m = R::zero();
                    } else if n > R::one() {
                        *v = R::one();
                        *m = R::zero();
                    } else {
                        *v = n;
                    }
                });
        }
        (out, pass)
    }

    /// Runs one head on precomputed features.
    pub fn forward_regressor(&self, head: Head, features: &ArrayView2<R>) -> Result<RegressorOutput<R>> {
        Ok(self.head_train(head, features)?.0)
    }

    pub(crate) fn head_train(
        &self,
        head: Head,
        features: &ArrayView2<R>,
    ) -> Result<(RegressorOutput<R>, HeadCache<R>)> {
        self.check_features(features)?;
        let (g_layer, r_layer) = self.head(head);
        let g = g_layer.forward(features);
        let activated = g.mapv(sigmoid);
        let l = r_layer.forward(&activated.view());
        let (coords, pass) = self.normalize_coordinates(&l);
        let h = concatenate![Axis(1), activated, coords];
        let cache = HeadCache {
            features: features.to_owned(),
            activated,
            pass,
        };
        Ok((RegressorOutput { g, l, h }, cache))
    }

    /// Back-propagates through one head given gradients on `l` and/or `h`.
    ///
    /// Returns the gradient with respect to the features. Parameter gradients
    /// are accumulated into `grad` when given.
    pub(crate) fn head_backward(
        &self,
        head: Head,
        cache: &HeadCache<R>,
        dl: Option<&Array2<R>>,
        dh: Option<&Array2<R>>,
        grad: Option<&mut ModelBundle<R>>,
    ) -> Array2<R> {
        let (g_layer, r_layer) = self.head(head);
        let k = self.config.condition_dim;
        let batch = cache.activated.nrows();
        let mut d_l = match dl {
            Some(d) => d.clone(),
            None => Array2::zeros((batch, self.config.label_dim())),
        };
        let mut d_act = Array2::zeros((batch, k));
        if let Some(dh) = dh {
            d_act += &dh.slice(s![.., ..k]);
            for (j, &e) in self.config.label_extents.iter().enumerate() {
                let inv = R::one() / R::lit(e);
                Zip::from(d_l.column_mut(j))
                    .and(dh.column(k + j))
                    .and(cache.pass.column(j))
                    .for_each(|d, &u, &m| *d += u * m * inv);
            }
        }
        let (mut gg, mut gr) = match grad {
            Some(g) => {
                let (a, b) = g.head_mut(head);
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        d_act += &r_layer.backward(&cache.activated.view(), &d_l, gr.as_deref_mut());
        Zip::from(&mut d_act)
            .and(&cache.activated)
            .for_each(|d, &a| *d *= a * (R::one() - a));
        g_layer.backward(&cache.features.view(), &d_act, gg.as_deref_mut())
    }

    /// Domain probabilities for `(features, normalized coordinates)` pairs, clamped into `(0, 1)`.
    pub fn forward_discriminator(
        &self,
        features: &ArrayView2<R>,
        coordinates: &ArrayView2<R>,
    ) -> Result<Array1<R>> {
        Ok(self.discriminator_train(features, coordinates)?.0)
    }

    pub fn discriminator_train(
        &self,
        features: &ArrayView2<R>,
        coordinates: &ArrayView2<R>,
    ) -> Result<(Array1<R>, DiscriminatorCache<R>)> {
        self.check_features(features)?;
        if coordinates.dim() != (features.nrows(), self.config.label_dim()) {
            return Err(Error::contract(format!(
                "discriminator coordinates have shape {:?}, expected ({}, {})",
                coordinates.dim(),
                features.nrows(),
                self.config.label_dim()
            )));
        }
        let input = concatenate![Axis(1), *features, *coordinates];
        let hidden = relu_array(&self.d_hidden.forward(&input.view()));
        let logits = self.d_out.forward(&hidden.view());
        let (lo, hi) = (R::lit(PROBABILITY_EPS), R::one() - R::lit(PROBABILITY_EPS));
        let prob = logits.column(0).mapv(|z| sigmoid(z).max(lo).min(hi));
        let cache = DiscriminatorCache {
            input,
            hidden,
            prob: prob.clone(),
        };
        Ok((prob, cache))
    }

    /// Returns gradients with respect to the features and the coordinates.
    pub fn discriminator_backward(
        &self,
        cache: &DiscriminatorCache<R>,
        d_prob: &Array1<R>,
        grad: Option<&mut ModelBundle<R>>,
    ) -> (Array2<R>, Array2<R>) {
        let (lo, hi) = (R::lit(PROBABILITY_EPS), R::one() - R::lit(PROBABILITY_EPS));
        let d_logit = Zip::from(d_prob)
            .and(&cache.prob)
            .map_collect(|&d, &p| {
                if p <= lo || p >= hi {
                    R::zero()
                } else {
                    d * p * (R::one() - p)
                }
            })
            .insert_axis(Axis(1));
        let mut grad = grad;
        let mut d_hidden = self.d_out.backward(
            &cache.hidden.view(),
            &d_logit,
            grad.as_deref_mut().map(|g| &mut g.d_out),
        );
        relu_backward(&cache.hidden, &mut d_hidden);
        let d_input = self.d_hidden.backward(
            &cache.input.view(),
            &d_hidden,
            grad.as_deref_mut().map(|g| &mut g.d_hidden),
        );
        let fd = self.config.feature_dim;
        (
            d_input.slice(s![.., ..fd]).to_owned(),
            d_input.slice(s![.., fd..]).to_owned(),
        )
    }
}
