use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::{relu_array, relu_backward, uniform, Linear, Parameters, Real};

/// Spatial geometry of an NHWC activation stored as `B*H*W x C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    batch: usize,
    height: usize,
    width: usize,
}

impl Geometry {
    fn pixels(&self) -> usize {
        self.batch * self.height * self.width
    }

    fn row(&self, b: usize, y: usize, x: usize) -> usize {
        (b * self.height + y) * self.width + x
    }

    fn pooled(&self) -> Geometry {
        Geometry {
            batch: self.batch,
            height: self.height / 2,
            width: self.width / 2,
        }
    }
}

/// 3x3 same-padded convolution as an im2col matrix product.
#[derive(Debug, Clone, PartialEq)]
struct Conv3x3<R: Real> {
    weight: Array2<R>,
    bias: Array2<R>,
}

impl<R: Real> Conv3x3<R> {
    fn new(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let fan_in = 9 * cin;
        Self {
            weight: uniform(fan_in, cout, (6.0 / fan_in as f64).sqrt(), rng),
            bias: Array2::zeros((1, cout)),
        }
    }

    fn cin(&self) -> usize {
        self.weight.nrows() / 9
    }

    fn im2col(&self, x: &ArrayView2<R>, geo: Geometry) -> Array2<R> {
        let cin = self.cin();
        let mut cols = Array2::zeros((geo.pixels(), 9 * cin));
        for b in 0..geo.batch {
            for y in 0..geo.height {
                for xx in 0..geo.width {
                    let mut dst = cols.row_mut(geo.row(b, y, xx));
                    for ky in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= geo.height as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= geo.width as isize {
                                continue;
                            }
                            let src = x.row(geo.row(b, sy as usize, sx as usize));
                            let off = (ky * 3 + kx) * cin;
                            for c in 0..cin {
                                dst[off + c] = src[c];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<R>, geo: Geometry) -> Array2<R> {
        let cin = self.cin();
        let mut dx = Array2::zeros((geo.pixels(), cin));
        for b in 0..geo.batch {
            for y in 0..geo.height {
                for xx in 0..geo.width {
                    let src = dcols.row(geo.row(b, y, xx));
                    for ky in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= geo.height as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= geo.width as isize {
                                continue;
                            }
                            let mut dst = dx.row_mut(geo.row(b, sy as usize, sx as usize));
                            let off = (ky * 3 + kx) * cin;
                            for c in 0..cin {
                                dst[c] += src[off + c];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// 2x2 max pooling; returns pooled activations and the winning input row per output element.
fn max_pool<R: Real>(x: &Array2<R>, geo: Geometry) -> (Array2<R>, Vec<usize>) {
    let out_geo = geo.pooled();
    let channels = x.ncols();
    let mut out = Array2::zeros((out_geo.pixels(), channels));
    let mut argmax = vec![0usize; out_geo.pixels() * channels];
    for b in 0..geo.batch {
        for y in 0..out_geo.height {
            for xx in 0..out_geo.width {
                let o = out_geo.row(b, y, xx);
                for c in 0..channels {
                    let mut best = geo.row(b, 2 * y, 2 * xx);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let r = geo.row(b, 2 * y + dy, 2 * xx + dx);
                        if x[[r, c]] > x[[best, c]] {
                            best = r;
                        }
                    }
                    out[[o, c]] = x[[best, c]];
                    argmax[o * channels + c] = best;
                }
            }
        }
    }
    (out, argmax)
}

#[derive(Debug, Clone)]
struct BlockCache<R: Real> {
    geo: Geometry,
    cols: Array2<R>,
    activated: Array2<R>,
    argmax: Vec<usize>,
}

/// Three conv-ReLU-maxpool blocks followed by an affine projection with ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoder<R: Real> {
    convs: Vec<Conv3x3<R>>,
    head: Linear<R>,
    height: usize,
    width: usize,
    channels: usize,
}

#[derive(Debug, Clone)]
pub struct ConvEncoderCache<R: Real> {
    blocks: Vec<BlockCache<R>>,
    flat: Array2<R>,
    features: Array2<R>,
}

impl<R: Real> ConvEncoder<R> {
    /// Input images are `height x width x channels`; both spatial sizes must be divisible by 8.
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        widths: [usize; 3],
        feature_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut convs = Vec::with_capacity(3);
        let mut cin = channels;
        for &cout in &widths {
            convs.push(Conv3x3::new(cin, cout, rng));
            cin = cout;
        }
        let flat = (height / 8) * (width / 8) * widths[2];
        Self {
            convs,
            head: Linear::new(flat, feature_dim, rng),
            height,
            width,
            channels,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.head.outputs()
    }

    pub fn input_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Each row of `x` is one NHWC image, flattened row-major.
    pub fn infer(&self, x: &ArrayView2<R>) -> Array2<R> {
        self.run(x, false).0
    }

    pub fn forward_train(&self, x: &ArrayView2<R>) -> (Array2<R>, ConvEncoderCache<R>) {
        let (y, cache) = self.run(x, true);
        (y, cache.expect("cache requested"))
    }

    fn run(&self, x: &ArrayView2<R>, keep: bool) -> (Array2<R>, Option<ConvEncoderCache<R>>) {
        let batch = x.nrows();
        let mut geo = Geometry {
            batch,
            height: self.height,
            width: self.width,
        };
        let mut act = x
            .to_shape((geo.pixels(), self.channels))
            .expect("contiguous input")
            .to_owned();
        let mut blocks = Vec::new();
        for conv in &self.convs {
            let cols = conv.im2col(&act.view(), geo);
            let mut pre = cols.dot(&conv.weight);
            pre += &conv.bias;
            let activated = relu_array(&pre);
            let (pooled, argmax) = max_pool(&activated, geo);
            if keep {
                blocks.push(BlockCache {
                    geo,
                    cols,
                    activated,
                    argmax,
                });
            }
            act = pooled;
            geo = geo.pooled();
        }
        let per_image = geo.height * geo.width * act.ncols();
        let flat = act
            .to_shape((batch, per_image))
            .expect("contiguous activations")
            .to_owned();
        let features = relu_array(&self.head.forward(&flat.view()));
        let cache = keep.then(|| ConvEncoderCache {
            blocks,
            flat,
            features: features.clone(),
        });
        (features, cache)
    }

    pub fn backward(
        &self,
        cache: &ConvEncoderCache<R>,
        d_out: &Array2<R>,
        mut grad: Option<&mut ConvEncoder<R>>,
        want_input_grad: bool,
    ) -> Option<Array2<R>> {
        let batch = d_out.nrows();
        let mut d = d_out.clone();
        relu_backward(&cache.features, &mut d);
        let d_flat = self.head.backward(
            &cache.flat.view(),
            &d,
            grad.as_deref_mut().map(|g| &mut g.head),
        );
        let last = cache.blocks.last().expect("three blocks").geo.pooled();
        let mut d_act = d_flat
            .to_shape((last.pixels(), self.convs[2].weight.ncols()))
            .expect("contiguous gradient")
            .to_owned();

        for (i, (conv, block)) in self.convs.iter().zip(&cache.blocks).enumerate().rev() {
            let channels = block.activated.ncols();
            let mut d_pre = Array2::zeros(block.activated.raw_dim());
            for (o, row) in d_act.axis_iter(Axis(0)).enumerate() {
                for c in 0..channels {
                    d_pre[[block.argmax[o * channels + c], c]] += row[c];
                }
            }
            relu_backward(&block.activated, &mut d_pre);
            if let Some(g) = grad.as_deref_mut() {
                g.convs[i].weight += &block.cols.t().dot(&d_pre);
                g.convs[i].bias += &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
            }
            if i == 0 && !want_input_grad {
                return None;
            }
            let d_cols = d_pre.dot(&conv.weight.t());
            d_act = conv.col2im(&d_cols, block.geo);
        }
        Some(
            d_act
                .to_shape((batch, self.input_len()))
                .expect("contiguous gradient")
                .to_owned(),
        )
    }
}

impl<R: Real> Parameters<R> for ConvEncoder<R> {
    fn params(&self) -> Vec<&Array2<R>> {
        let mut out: Vec<&Array2<R>> = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<R>> {
        let mut out: Vec<&mut Array2<R>> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.extend(self.head.params_mut());
        out
    }
}
