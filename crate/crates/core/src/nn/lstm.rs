use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{glorot, sigmoid, Parameters, Real};

/// One direction of an LSTM. Gate columns are laid out `[input | forget | cell | output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection<R: Real> {
    pub w_input: Array2<R>,
    pub w_hidden: Array2<R>,
    pub bias: Array2<R>,
}

#[derive(Debug, Clone)]
struct DirectionCache<R: Real> {
    /// Activated gates per processing step, `B x 4H`.
    gates: Vec<Array2<R>>,
    c_prev: Vec<Array2<R>>,
    tanh_c: Vec<Array2<R>>,
    /// Hidden state entering each time index, stacked time-major `T*B x H`.
    h_prev: Array2<R>,
}

impl<R: Real> LstmDirection<R> {
    fn new(inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut bias = Array2::zeros((1, 4 * hidden));
        bias.slice_mut(s![.., hidden..2 * hidden]).fill(R::one());
        Self {
            w_input: glorot(inputs, 4 * hidden, rng),
            w_hidden: glorot(hidden, 4 * hidden, rng),
            bias,
        }
    }

    fn hidden(&self) -> usize {
        self.w_hidden.nrows()
    }

    fn time_order(steps: usize, reverse: bool) -> Vec<usize> {
        if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        }
    }

    /// `x_tm` is time-major, `T*B x S`.
    fn forward(
        &self,
        x_tm: &ArrayView2<R>,
        batch: usize,
        steps: usize,
        reverse: bool,
        keep_cache: bool,
    ) -> (Array2<R>, Option<DirectionCache<R>>) {
        let hidden = self.hidden();
        let projected = x_tm.dot(&self.w_input);
        let mut h = Array2::<R>::zeros((batch, hidden));
        let mut c = Array2::<R>::zeros((batch, hidden));
        let mut cache = keep_cache.then(|| DirectionCache {
            gates: Vec::with_capacity(steps),
            c_prev: Vec::with_capacity(steps),
            tanh_c: Vec::with_capacity(steps),
            h_prev: Array2::zeros((steps * batch, hidden)),
        });

        for t in Self::time_order(steps, reverse) {
            let mut z = h.dot(&self.w_hidden);
            z += &projected.slice(s![t * batch..(t + 1) * batch, ..]);
            z += &self.bias;
            z.slice_mut(s![.., ..2 * hidden]).mapv_inplace(sigmoid);
            z.slice_mut(s![.., 2 * hidden..3 * hidden])
                .mapv_inplace(|v| v.tanh());
            z.slice_mut(s![.., 3 * hidden..]).mapv_inplace(sigmoid);

            let mut c_new = Array2::<R>::zeros((batch, hidden));
            Zip::from(&mut c_new)
                .and(&c)
                .and(z.slice(s![.., ..hidden]))
                .and(z.slice(s![.., hidden..2 * hidden]))
                .and(z.slice(s![.., 2 * hidden..3 * hidden]))
                .for_each(|cn, &cp, &i, &f, &g| *cn = f * cp + i * g);
            let tanh_c = c_new.mapv(|v| v.tanh());
            let mut h_new = Array2::<R>::zeros((batch, hidden));
            Zip::from(&mut h_new)
                .and(z.slice(s![.., 3 * hidden..]))
                .and(&tanh_c)
                .for_each(|hn, &o, &tc| *hn = o * tc);

            if let Some(cache) = cache.as_mut() {
                cache
                    .h_prev
                    .slice_mut(s![t * batch..(t + 1) * batch, ..])
                    .assign(&h);
                cache.gates.push(z);
                cache.c_prev.push(c);
                cache.tanh_c.push(tanh_c);
            }
            c = c_new;
            h = h_new;
        }
        (h, cache)
    }

    /// Returns the time-major gate gradients `T*B x 4H` and accumulates parameter gradients.
    fn backward(
        &self,
        x_tm: &ArrayView2<R>,
        cache: &DirectionCache<R>,
        dh_out: &Array2<R>,
        batch: usize,
        reverse: bool,
        grad: Option<&mut LstmDirection<R>>,
    ) -> Array2<R> {
        let hidden = self.hidden();
        let steps = cache.gates.len();
        let one = R::one();
        let mut dz_all = Array2::<R>::zeros((steps * batch, 4 * hidden));
        let mut dh = dh_out.clone();
        let mut dc = Array2::<R>::zeros((batch, hidden));
        let order = Self::time_order(steps, reverse);

        for (k, &t) in order.iter().enumerate().rev() {
            let gates = &cache.gates[k];
            let (gi, gf, gg, go) = (
                gates.slice(s![.., ..hidden]),
                gates.slice(s![.., hidden..2 * hidden]),
                gates.slice(s![.., 2 * hidden..3 * hidden]),
                gates.slice(s![.., 3 * hidden..]),
            );
            let tanh_c = &cache.tanh_c[k];
            let c_prev = &cache.c_prev[k];

            Zip::from(&mut dc)
                .and(&dh)
                .and(go)
                .and(tanh_c)
                .for_each(|dc, &dh, &o, &tc| *dc += dh * o * (one - tc * tc));

            let mut dz = dz_all.slice_mut(s![t * batch..(t + 1) * batch, ..]);
            Zip::from(dz.slice_mut(s![.., 3 * hidden..]))
                .and(&dh)
                .and(tanh_c)
                .and(go)
                .for_each(|d, &dh, &tc, &o| *d = dh * tc * o * (one - o));
            Zip::from(dz.slice_mut(s![.., ..hidden]))
                .and(&dc)
                .and(gg)
                .and(gi)
                .for_each(|d, &dc, &g, &i| *d = dc * g * i * (one - i));
            Zip::from(dz.slice_mut(s![.., hidden..2 * hidden]))
                .and(&dc)
                .and(c_prev)
                .and(gf)
                .for_each(|d, &dc, &cp, &f| *d = dc * cp * f * (one - f));
            Zip::from(dz.slice_mut(s![.., 2 * hidden..3 * hidden]))
                .and(&dc)
                .and(gi)
                .and(gg)
                .for_each(|d, &dc, &i, &g| *d = dc * i * (one - g * g));
            Zip::from(&mut dc).and(gf).for_each(|dc, &f| *dc *= f);

            dh = dz.dot(&self.w_hidden.t());
        }

        if let Some(g) = grad {
            g.w_hidden += &cache.h_prev.t().dot(&dz_all);
            g.w_input += &x_tm.t().dot(&dz_all);
            g.bias += &dz_all.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        dz_all
    }
}

/// Bidirectional LSTM over a fixed-length window. The feature vector is the
/// concatenation of the forward direction's final state and the backward
/// direction's final state (the one produced after reading step 0).
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm<R: Real> {
    pub forward: LstmDirection<R>,
    pub backward: LstmDirection<R>,
    steps: usize,
    inputs: usize,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache<R: Real> {
    x_tm: Array2<R>,
    forward: DirectionCache<R>,
    backward: DirectionCache<R>,
}

impl<R: Real> BiLstm<R> {
    /// `hidden` is per direction; the output width is `2 * hidden`.
    pub fn new(steps: usize, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            forward: LstmDirection::new(inputs, hidden, rng),
            backward: LstmDirection::new(inputs, hidden, rng),
            steps,
            inputs,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden()
    }

    /// Converts `B x (T*S)` rows into the time-major `T*B x S` layout.
    fn time_major(&self, x: &ArrayView2<R>) -> Array2<R> {
        let batch = x.nrows();
        let mut out = Array2::zeros((self.steps * batch, self.inputs));
        for t in 0..self.steps {
            out.slice_mut(s![t * batch..(t + 1) * batch, ..])
                .assign(&x.slice(s![.., t * self.inputs..(t + 1) * self.inputs]));
        }
        out
    }

    fn from_time_major(&self, x_tm: &Array2<R>, batch: usize) -> Array2<R> {
        let mut out = Array2::zeros((batch, self.steps * self.inputs));
        for t in 0..self.steps {
            out.slice_mut(s![.., t * self.inputs..(t + 1) * self.inputs])
                .assign(&x_tm.slice(s![t * batch..(t + 1) * batch, ..]));
        }
        out
    }

    /// `x` holds one flattened `steps x inputs` window per row.
    pub fn infer(&self, x: &ArrayView2<R>) -> Array2<R> {
        let batch = x.nrows();
        let x_tm = self.time_major(x);
        let (hf, _) = self
            .forward
            .forward(&x_tm.view(), batch, self.steps, false, false);
        let (hb, _) = self
            .backward
            .forward(&x_tm.view(), batch, self.steps, true, false);
        concatenate![Axis(1), hf, hb]
    }

    pub fn forward_train(&self, x: &ArrayView2<R>) -> (Array2<R>, BiLstmCache<R>) {
        let batch = x.nrows();
        let x_tm = self.time_major(x);
        let (hf, cf) = self
            .forward
            .forward(&x_tm.view(), batch, self.steps, false, true);
        let (hb, cb) = self
            .backward
            .forward(&x_tm.view(), batch, self.steps, true, true);
        let cache = BiLstmCache {
            x_tm,
            forward: cf.expect("cache requested"),
            backward: cb.expect("cache requested"),
        };
        (concatenate![Axis(1), hf, hb], cache)
    }

    /// Accumulates parameter gradients into `grad`; returns the input gradient
    /// in the row layout of `x` when `want_input_grad` is set.
    pub fn backward(
        &self,
        cache: &BiLstmCache<R>,
        d_out: &Array2<R>,
        grad: Option<&mut BiLstm<R>>,
        want_input_grad: bool,
    ) -> Option<Array2<R>> {
        let hidden = self.forward.hidden();
        let batch = d_out.nrows();
        let dh_f = d_out.slice(s![.., ..hidden]).to_owned();
        let dh_b = d_out.slice(s![.., hidden..]).to_owned();
        let (gf, gb) = match grad {
            Some(g) => (Some(&mut g.forward), Some(&mut g.backward)),
            None => (None, None),
        };
        let x_tm = cache.x_tm.view();
        let dz_f = self
            .forward
            .backward(&x_tm, &cache.forward, &dh_f, batch, false, gf);
        let dz_b = self
            .backward
            .backward(&x_tm, &cache.backward, &dh_b, batch, true, gb);
        want_input_grad.then(|| {
            let mut dx_tm = dz_f.dot(&self.forward.w_input.t());
            dx_tm += &dz_b.dot(&self.backward.w_input.t());
            self.from_time_major(&dx_tm, batch)
        })
    }
}

impl<R: Real> Parameters<R> for BiLstm<R> {
    fn params(&self) -> Vec<&Array2<R>> {
        vec![
            &self.forward.w_input,
            &self.forward.w_hidden,
            &self.forward.bias,
            &self.backward.w_input,
            &self.backward.w_hidden,
            &self.backward.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<R>> {
        vec![
            &mut self.forward.w_input,
            &mut self.forward.w_hidden,
            &mut self.forward.bias,
            &mut self.backward.w_input,
            &mut self.backward.w_hidden,
            &mut self.backward.bias,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{max_rel_err, numeric_grad};
    use super::super::uniform;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (BiLstm<f64>, Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lstm = BiLstm::<f64>::new(4, 3, 5, &mut rng);
        let x = uniform(2, 12, 1.0, &mut rng);
        let upstream = uniform(2, 10, 1.0, &mut rng);
        (lstm, x, upstream)
    }

    #[test]
    fn train_and_infer_forward_agree() {
        let (lstm, x, _) = setup();
        let (y, _) = lstm.forward_train(&x.view());
        assert_eq!(y, lstm.infer(&x.view()));
        assert_eq!(y.dim(), (2, 10));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let (lstm, x, upstream) = setup();
        let (_, cache) = lstm.forward_train(&x.view());
        let dx = lstm.backward(&cache, &upstream, None, true).unwrap();
        let num = numeric_grad(&x, 1e-5, |x| (lstm.infer(&x.view()) * &upstream).sum());
        assert!(max_rel_err(&dx, &num, 1e-6) < 1e-5, "{dx} vs {num}");
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let (lstm, x, upstream) = setup();
        let (_, cache) = lstm.forward_train(&x.view());
        let mut grad = lstm.clone();
        grad.zero();
        lstm.backward(&cache, &upstream, Some(&mut grad), false);

        for idx in 0..6 {
            let base = lstm.params()[idx].clone();
            let num = numeric_grad(&base, 1e-5, |p| {
                let mut probe = lstm.clone();
                *probe.params_mut()[idx] = p.clone();
                (probe.infer(&x.view()) * &upstream).sum()
            });
            let err = max_rel_err(grad.params()[idx], &num, 1e-4);
            assert!(err < 1e-5, "param {idx}: rel err {err}");
        }
    }

    #[test]
    fn rows_are_independent() {
        let (lstm, x, _) = setup();
        let full = lstm.infer(&x.view());
        let single = lstm.infer(&x.slice(s![1..2, ..]));
        assert_eq!(full.row(1), single.row(0));
    }
}
