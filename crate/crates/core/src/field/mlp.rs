//! Two-head coordinate network mapping `(gamma(O_t), gamma(x_i))` to `(sigma, c)`.
//!
//! Trunk: seven fully connected ReLU layers of width `H` on `gamma(x_i)`, with
//! `gamma(x_i)` concatenated again into the input of the fifth layer.
//!
//! With decoupled heads the intensity `c` is a ReLU-activated linear read-out of
//! the last trunk feature, and the density `sigma` comes from a separate branch:
//! one ReLU hidden layer on `[gamma(O_t), trunk feature]` followed by a sigmoid
//! read-out. Coupled heads share that hidden layer for both outputs. Without the
//! centre input the branch sees only the trunk feature.
//!
//! Parameters live in one flat vector; each layer stores its `out x in` weight
//! matrix row-major followed by its bias.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coords::EncodedCoordinate;
use crate::error::{invalid, Result};

pub const TRUNK_DEPTH: usize = 7;
/// Index (0-based) of the trunk layer that receives the skip concatenation.
pub const SKIP_LAYER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FieldTopology {
    pub width: usize,
    pub enc_x: usize,
    pub enc_o: usize,
    pub use_center_input: bool,
    pub decouple_heads: bool,
}

impl FieldTopology {
    pub fn new(width: usize, enc_x: usize, enc_o: usize) -> Self {
        Self { width, enc_x, enc_o, use_center_input: true, decouple_heads: true }
    }

    fn branch_input(&self) -> usize {
        self.width + if self.use_center_input { self.enc_o } else { 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Linear {
    offset: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Linear {
    fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }

    fn len(&self) -> usize {
        self.weight_len() + self.fan_out
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.fan_out, self.fan_in)
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.weight_len()
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.offset + self.weight_len()..self.offset + self.len()
    }

    fn weight<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.fan_out, self.fan_in), &p[self.weight_range()]).unwrap()
    }

    fn bias<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[self.bias_range()])
    }

    fn apply(&self, p: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight(p).t());
        y += &self.bias(p);
        y
    }

    /// `dW += delta^T x`, `db += sum(delta)`.
    fn accumulate(&self, grad: &mut [f64], x: ArrayView2<f64>, delta: ArrayView2<f64>) {
        let (gw, gb) = grad[self.offset..self.offset + self.len()].split_at_mut(self.weight_len());
        let mut gw = ArrayViewMut2::from_shape((self.fan_out, self.fan_in), gw).unwrap();
        ndarray::linalg::general_mat_mul(1.0, &delta.t(), &x, 1.0, &mut gw);
        for (g, d) in gb.iter_mut().zip(delta.sum_axis(Axis(0))) {
            *g += d;
        }
    }

    fn input_grad(&self, p: &[f64], delta: ArrayView2<f64>) -> Array2<f64> {
        delta.dot(&self.weight(p))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Heads {
    Decoupled { intensity: Linear, density_hidden: Linear, density_out: Linear },
    Coupled { hidden: Linear, out: Linear },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpField {
    topology: FieldTopology,
    trunk: [Linear; TRUNK_DEPTH],
    heads: Heads,
    params: Vec<f64>,
}

/// Per-sample network outputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldOutput {
    pub sigma: f64,
    pub c: f64,
}

/// Outputs for a batch, one entry per sample row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FieldOutputs {
    pub sigma: Vec<f64>,
    pub c: Vec<f64>,
}

/// A batch of `rays x samples_per_ray` sample rows. `enc_x` has one row per
/// sample (ray-major); `enc_o` has one row per ray.
#[derive(Clone, Copy, Debug)]
pub struct FieldBatch<'a> {
    pub enc_x: ArrayView2<'a, f64>,
    pub enc_o: ArrayView2<'a, f64>,
    pub samples_per_ray: usize,
}

/// Activations retained for the backward pass.
pub struct ForwardCache {
    input: Array2<f64>,
    acts: Vec<Array2<f64>>,
    skip_input: Array2<f64>,
    branch_input: Array2<f64>,
    branch: Array2<f64>,
    c_pre: Array1<f64>,
    sigma: Array1<f64>,
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

fn relu_mask(delta: &mut Array2<f64>, act: &Array2<f64>) {
    delta.zip_mut_with(act, |d, &a| {
        if a <= 0.0 {
            *d = 0.0;
        }
    });
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl MlpField {
    fn layout(topology: FieldTopology) -> ([Linear; TRUNK_DEPTH], Heads, usize) {
        let mut offset = 0;
        let mut next = |fan_in: usize, fan_out: usize| {
            let l = Linear { offset, fan_in, fan_out };
            offset += l.len();
            l
        };
        let h = topology.width;
        let trunk = std::array::from_fn(|i| match i {
            0 => next(topology.enc_x, h),
            SKIP_LAYER => next(h + topology.enc_x, h),
            _ => next(h, h),
        });
        let heads = if topology.decouple_heads {
            let intensity = next(h, 1);
            let density_hidden = next(topology.branch_input(), h);
            let density_out = next(h, 1);
            Heads::Decoupled { intensity, density_hidden, density_out }
        } else {
            let hidden = next(topology.branch_input(), h);
            let out = next(h, 2);
            Heads::Coupled { hidden, out }
        };
        (trunk, heads, offset)
    }

    /// All parameters zero: every output is `sigma = 0.5`, `c = 0`.
    pub fn zeros(topology: FieldTopology) -> Result<Self> {
        if topology.width == 0 || topology.enc_x == 0 {
            return invalid("field width and input encoding must be positive");
        }
        let (trunk, heads, n) = Self::layout(topology);
        Ok(Self { topology, trunk, heads, params: vec![0.0; n] })
    }

    /// Kaiming-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    ///
    /// Weights feeding the intensity output are replaced by their magnitudes.
    /// Trunk features are nonnegative, so this keeps `c > 0` at every input;
    /// otherwise a sizeable share of seeds start with a dead intensity ReLU.
    pub fn init(topology: FieldTopology, seed: u64) -> Result<Self> {
        if topology.width < 8 {
            return invalid(format!("field width must be at least 8, got {}", topology.width));
        }
        let mut field = Self::zeros(topology)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in field.linears() {
            let bound = (6.0 / layer.fan_in as f64).sqrt();
            for w in &mut field.params[layer.weight_range()] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        let c_weights = field.intensity_weight_range();
        field.params[c_weights].iter_mut().for_each(|w| *w = w.abs());
        Ok(field)
    }

    /// Every linear layer with a stable name, in parameter order.
    pub(crate) fn named_linears(&self) -> Vec<(String, Linear)> {
        let mut out: Vec<(String, Linear)> =
            self.trunk.iter().enumerate().map(|(i, l)| (format!("trunk.{i}"), *l)).collect();
        match &self.heads {
            Heads::Decoupled { intensity, density_hidden, density_out } => {
                out.push(("intensity".into(), *intensity));
                out.push(("density.hidden".into(), *density_hidden));
                out.push(("density.out".into(), *density_out));
            }
            Heads::Coupled { hidden, out: o } => {
                out.push(("head.hidden".into(), *hidden));
                out.push(("head.out".into(), *o));
            }
        }
        out
    }

    /// Weights of the row producing `c` before its ReLU.
    fn intensity_weight_range(&self) -> std::ops::Range<usize> {
        match &self.heads {
            Heads::Decoupled { intensity, .. } => intensity.weight_range(),
            Heads::Coupled { out, .. } => {
                let start = out.weight_range().start + out.fan_in;
                start..start + out.fan_in
            }
        }
    }

    fn linears(&self) -> Vec<Linear> {
        self.named_linears().into_iter().map(|(_, l)| l).collect()
    }

    pub fn topology(&self) -> FieldTopology {
        self.topology
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Parameter range of the intensity read-out layer (decoupled heads only).
    pub fn intensity_head_range(&self) -> Option<std::ops::Range<usize>> {
        match &self.heads {
            Heads::Decoupled { intensity, .. } => Some(intensity.offset..intensity.offset + intensity.len()),
            Heads::Coupled { .. } => None,
        }
    }

    fn check_batch(&self, batch: &FieldBatch) -> Result<usize> {
        let t = &self.topology;
        let rows = batch.enc_x.nrows();
        if batch.enc_x.ncols() != t.enc_x {
            return invalid(format!("sample encoding has {} features, field expects {}", batch.enc_x.ncols(), t.enc_x));
        }
        if batch.samples_per_ray == 0 || !rows.is_multiple_of(batch.samples_per_ray) {
            return invalid(format!("{rows} sample rows do not split into rays of {}", batch.samples_per_ray));
        }
        let rays = rows / batch.samples_per_ray;
        if t.use_center_input {
            if batch.enc_o.ncols() != t.enc_o {
                return invalid(format!("centre encoding has {} features, field expects {}", batch.enc_o.ncols(), t.enc_o));
            }
            if batch.enc_o.nrows() != rays {
                return invalid(format!("{} centre rows for {rays} rays", batch.enc_o.nrows()));
            }
        }
        Ok(rays)
    }

    fn branch_input(&self, batch: &FieldBatch, trunk_out: &Array2<f64>) -> Array2<f64> {
        if !self.topology.use_center_input {
            return trunk_out.clone();
        }
        let rows = trunk_out.nrows();
        let n = batch.samples_per_ray;
        let eo = self.topology.enc_o;
        let mut input = Array2::zeros((rows, eo + self.topology.width));
        for (r, mut row) in input.axis_iter_mut(Axis(0)).enumerate() {
            row.slice_mut(s![..eo]).assign(&batch.enc_o.row(r / n));
        }
        input.slice_mut(s![.., eo..]).assign(trunk_out);
        input
    }

    /// Forward pass keeping the activations needed by [`MlpField::backward`].
    pub fn forward_train(&self, batch: &FieldBatch) -> Result<(FieldOutputs, ForwardCache)> {
        self.check_batch(batch)?;
        let p = &self.params;
        let input = batch.enc_x.to_owned();
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(TRUNK_DEPTH);
        let mut skip_input = Array2::zeros((0, 0));
        for (i, layer) in self.trunk.iter().enumerate() {
            let mut a = match i {
                0 => layer.apply(p, input.view()),
                SKIP_LAYER => {
                    skip_input = concatenate![Axis(1), acts[i - 1], input];
                    layer.apply(p, skip_input.view())
                }
                _ => layer.apply(p, acts[i - 1].view()),
            };
            relu_inplace(&mut a);
            acts.push(a);
        }
        let feature = &acts[TRUNK_DEPTH - 1];
        let branch_input = self.branch_input(batch, feature);
        let (branch, c_pre, s_pre) = match &self.heads {
            Heads::Decoupled { intensity, density_hidden, density_out } => {
                let c_pre = intensity.apply(p, feature.view()).column(0).to_owned();
                let mut d = density_hidden.apply(p, branch_input.view());
                relu_inplace(&mut d);
                let s_pre = density_out.apply(p, d.view()).column(0).to_owned();
                (d, c_pre, s_pre)
            }
            Heads::Coupled { hidden, out } => {
                let mut d = hidden.apply(p, branch_input.view());
                relu_inplace(&mut d);
                let o = out.apply(p, d.view());
                (d, o.column(1).to_owned(), o.column(0).to_owned())
            }
        };
        let sigma = s_pre.mapv(sigmoid);
        let outputs = FieldOutputs {
            sigma: sigma.to_vec(),
            c: c_pre.iter().map(|v| v.max(0.0)).collect(),
        };
        let cache = ForwardCache { input, acts, skip_input, branch_input, branch, c_pre, sigma };
        Ok((outputs, cache))
    }

    pub fn forward(&self, batch: &FieldBatch) -> Result<FieldOutputs> {
        self.forward_train(batch).map(|(o, _)| o)
    }

    /// Evaluates a single sample.
    pub fn forward_one(&self, enc_o: &EncodedCoordinate, enc_x: &EncodedCoordinate) -> Result<FieldOutput> {
        let x = ArrayView2::from_shape((1, enc_x.values.len()), &enc_x.values).unwrap();
        let o = ArrayView2::from_shape((1, enc_o.values.len()), &enc_o.values).unwrap();
        let out = self.forward(&FieldBatch { enc_x: x, enc_o: o, samples_per_ray: 1 })?;
        Ok(FieldOutput { sigma: out.sigma[0], c: out.c[0] })
    }

    /// Accumulates into `grad` the gradient of `sum_m d_sigma[m] sigma_m + d_c[m] c_m`
    /// with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, d_sigma: &[f64], d_c: &[f64], grad: &mut [f64]) {
        let p = &self.params;
        let rows = cache.input.nrows();
        assert_eq!(d_sigma.len(), rows);
        assert_eq!(d_c.len(), rows);
        assert_eq!(grad.len(), p.len());

        // through the output activations
        let d_s_pre = Array2::from_shape_fn((rows, 1), |(m, _)| {
            let s = cache.sigma[m];
            d_sigma[m] * s * (1.0 - s)
        });
        let d_c_pre = Array2::from_shape_fn((rows, 1), |(m, _)| {
            if cache.c_pre[m] > 0.0 {
                d_c[m]
            } else {
                0.0
            }
        });
        let feature = &cache.acts[TRUNK_DEPTH - 1];
        let skip_cols = if self.topology.use_center_input { self.topology.enc_o } else { 0 };

        let mut d_feature = match &self.heads {
            Heads::Decoupled { intensity, density_hidden, density_out } => {
                intensity.accumulate(grad, feature.view(), d_c_pre.view());
                let mut d_feat = intensity.input_grad(p, d_c_pre.view());
                density_out.accumulate(grad, cache.branch.view(), d_s_pre.view());
                let mut d_branch = density_out.input_grad(p, d_s_pre.view());
                relu_mask(&mut d_branch, &cache.branch);
                density_hidden.accumulate(grad, cache.branch_input.view(), d_branch.view());
                let d_in = density_hidden.input_grad(p, d_branch.view());
                d_feat += &d_in.slice(s![.., skip_cols..]);
                d_feat
            }
            Heads::Coupled { hidden, out } => {
                let d_out = concatenate![Axis(1), d_s_pre, d_c_pre];
                out.accumulate(grad, cache.branch.view(), d_out.view());
                let mut d_branch = out.input_grad(p, d_out.view());
                relu_mask(&mut d_branch, &cache.branch);
                hidden.accumulate(grad, cache.branch_input.view(), d_branch.view());
                hidden.input_grad(p, d_branch.view()).slice(s![.., skip_cols..]).to_owned()
            }
        };

        for i in (0..TRUNK_DEPTH).rev() {
            relu_mask(&mut d_feature, &cache.acts[i]);
            let layer = &self.trunk[i];
            match i {
                0 => {
                    layer.accumulate(grad, cache.input.view(), d_feature.view());
                    break;
                }
                SKIP_LAYER => {
                    layer.accumulate(grad, cache.skip_input.view(), d_feature.view());
                    let d_in = layer.input_grad(p, d_feature.view());
                    d_feature = d_in.slice(s![.., ..self.topology.width]).to_owned();
                }
                _ => {
                    layer.accumulate(grad, cache.acts[i - 1].view(), d_feature.view());
                    d_feature = layer.input_grad(p, d_feature.view());
                }
            }
        }
    }
}

/// Analytic parameter count of a topology, summed layer by layer.
pub fn parameter_count(topology: FieldTopology) -> usize {
    let (_, _, n) = MlpField::layout(topology);
    n
}
