//! Sparse-code encoder: one 5-layer leaky-ReLU perceptron per layer group,
//! with a hand-written reverse pass.
//!
//! Widths chain `input → h → h → h → h → l`; the last layer is linear so
//! codes can be signed.

use crate::error::{shape_err, Result};
use crate::latent::DeltaCode;
use crate::linalg::{dot, Matrix};
use crate::rng::SeededRng;
use crate::trainer::LayerGrouping;

pub const DEPTH: usize = 5;
/// Denominator floor used when turning gradient differences into relative errors.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }
}

/// Parameters of one group's perceptron (also used for its gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Values retained by a forward pass for the reverse pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    /// Pre-activations of every layer.
    pub pre: Vec<Vec<f64>>,
    /// Activations fed to the next layer (`post[i] = φ(pre[i])`), hidden layers only.
    pub post: Vec<Vec<f64>>,
}

#[inline]
pub fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Derivative of the leaky rectifier; at 0 it is the leak slope.
#[inline]
pub fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

impl Mlp {
    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            layers: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|d| Dense::zeros(d.inputs(), d.outputs()))
                .collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn forward(&self, input: &[f64], leak: f64) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.input_width() {
            return Err(shape_err(format!(
                "encoder input of {} for width {}",
                input.len(),
                self.input_width()
            )));
        }
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(last);
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z: Vec<f64> = (0..layer.outputs())
                .map(|r| dot(layer.weight.row(r), &x) + layer.bias[r])
                .collect();
            if i < last {
                x = z.iter().map(|&v| leaky(v, leak)).collect();
                post.push(x.clone());
            } else {
                x = z.clone();
            }
            pre.push(z);
        }
        Ok((
            x,
            ForwardCache {
                input: input.to_vec(),
                pre,
                post,
            },
        ))
    }

    /// Accumulates `∂(out · grad_out)/∂θ` into `grads` and returns the input gradient.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_out: &[f64],
        leak: f64,
        grads: &mut Mlp,
    ) -> Result<Vec<f64>> {
        if cache.pre.len() != self.layers.len()
            || grad_out.len() != self.output_width()
            || cache.input.len() != self.input_width()
            || grads.layers.len() != self.layers.len()
        {
            return Err(shape_err("stale forward cache"));
        }
        let mut delta = grad_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if cache.pre[i].len() != layer.outputs() {
                return Err(shape_err("stale forward cache"));
            }
            if i + 1 < self.layers.len() {
                for (d, &z) in delta.iter_mut().zip(&cache.pre[i]) {
                    *d *= leaky_grad(z, leak);
                }
            }
            let input = if i == 0 { &cache.input } else { &cache.post[i - 1] };
            let g = &mut grads.layers[i];
            g.weight.add_outer(1.0, &delta, input);
            for (b, d) in g.bias.iter_mut().zip(&delta) {
                *b += d;
            }
            delta = layer.weight.matvec_t(&delta)?;
        }
        Ok(delta)
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|d| [d.weight.as_slice(), d.bias.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|d| [d.weight.as_mut_slice(), d.bias.as_mut_slice()])
            .collect()
    }
}

/// Layer widths of every group's perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderDims {
    pub dim: usize,
    pub grouping: LayerGrouping,
    pub hidden: usize,
    pub directions: usize,
    pub leak: f64,
}

impl EncoderDims {
    pub fn widths(&self, group: usize) -> Vec<usize> {
        let input = self.grouping.range(group).len() * self.dim;
        let mut w = vec![input];
        w.extend(std::iter::repeat_n(self.hidden, DEPTH - 1));
        w.push(self.directions);
        w
    }
}

/// Per-group perceptrons plus the layout they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dim: usize,
    pub grouping: LayerGrouping,
    pub leak: f64,
    pub groups: Vec<Mlp>,
}

/// Same layout as [`EncoderParams`].
pub type EncoderGradients = EncoderParams;

/// Kaiming-style uniform init: std `√(2 / (fan_in·(1 + slope²)))`, zero biases.
pub fn init_params(dims: &EncoderDims, seed: u64) -> EncoderParams {
    let mut rng = SeededRng::derived(seed, 0x454e_4344);
    let groups = (0..dims.grouping.len())
        .map(|g| {
            let mut mlp = Mlp::zeros(&dims.widths(g));
            for layer in &mut mlp.layers {
                let fan_in = layer.inputs() as f64;
                let std = (2.0 / (fan_in * (1.0 + dims.leak * dims.leak))).sqrt();
                let bound = std * 3f64.sqrt();
                for w in layer.weight.as_mut_slice() {
                    *w = rng.uniform_range(-bound, bound);
                }
            }
            mlp
        })
        .collect();
    EncoderParams {
        dim: dims.dim,
        grouping: dims.grouping.clone(),
        leak: dims.leak,
        groups,
    }
}

impl EncoderParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            groups: self.groups.iter().map(Mlp::zeros_like).collect(),
            ..self.clone()
        }
    }

    pub fn directions(&self) -> usize {
        self.groups[0].output_width()
    }

    pub fn hidden(&self) -> usize {
        self.groups[0].layers[0].outputs()
    }

    /// Flattened group slice of `delta` fed to group `group`'s perceptron.
    pub fn group_input<'a>(&self, delta: &'a DeltaCode, group: usize) -> Result<&'a [f64]> {
        let (layers, dim) = delta.shape();
        if dim != self.dim || layers != self.grouping.layer_count() {
            return Err(shape_err(format!(
                "delta {:?} for encoder over {} layers of dim {}",
                delta.shape(),
                self.grouping.layer_count(),
                self.dim
            )));
        }
        Ok(delta.layers_slice(self.grouping.range(group)))
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.groups.iter().flat_map(Mlp::param_slices).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.groups.iter_mut().flat_map(Mlp::param_slices_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn fill(&mut self, value: f64) {
        for s in self.param_slices_mut() {
            s.iter_mut().for_each(|v| *v = value);
        }
    }
}

/// Code of group `group` for `delta`.
pub fn mlp_forward(
    params: &EncoderParams,
    delta: &DeltaCode,
    group: usize,
) -> Result<(Vec<f64>, ForwardCache)> {
    if group >= params.groups.len() {
        return Err(shape_err(format!("group {group} out of range")));
    }
    let input = params.group_input(delta, group)?;
    params.groups[group].forward(input, params.leak)
}

/// Reverse pass for one group; gradients of other groups are zero.
pub fn mlp_backward(
    params: &EncoderParams,
    group: usize,
    cache: &ForwardCache,
    grad_output: &[f64],
) -> Result<(EncoderGradients, Vec<f64>)> {
    if group >= params.groups.len() {
        return Err(shape_err(format!("group {group} out of range")));
    }
    let mut grads = params.zeros_like();
    let gi = params.groups[group].backward_into(cache, grad_output, params.leak, &mut grads.groups[group])?;
    Ok((grads, gi))
}

/// `|a − b| / max(|a|, |b|, GRAD_CHECK_FLOOR)`, 0 when both agree exactly.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Worst relative error between analytic and central-difference gradients
/// of the probe `Σ_groups Σ outputs` over every encoder parameter.
pub fn finite_diff_check(params: &EncoderParams, input: &DeltaCode, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(crate::AgeError::Range(format!("eps {eps} outside (0, 1e-2]")));
    }
    let probe = |p: &EncoderParams| -> Result<f64> {
        let mut s = 0.0;
        for g in 0..p.groups.len() {
            s += mlp_forward(p, input, g)?.0.iter().sum::<f64>();
        }
        Ok(s)
    };
    let mut analytic = params.zeros_like();
    for g in 0..params.groups.len() {
        let (_, cache) = mlp_forward(params, input, g)?;
        let ones = vec![1.0; params.groups[g].output_width()];
        params.groups[g].backward_into(&cache, &ones, params.leak, &mut analytic.groups[g])?;
    }
    let analytic_flat: Vec<f64> = analytic.param_slices().concat();
    let mut work = params.clone();
    let mut worst = 0.0f64;
    let mut k = 0;
    let n_slices = work.param_slices().len();
    for si in 0..n_slices {
        let len = work.param_slices()[si].len();
        for j in 0..len {
            let orig = work.param_slices()[si][j];
            work.param_slices_mut()[si][j] = orig + eps;
            let plus = probe(&work)?;
            work.param_slices_mut()[si][j] = orig - eps;
            let minus = probe(&work)?;
            work.param_slices_mut()[si][j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic_flat[k], numeric));
            k += 1;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::LatentCode;

    fn dims(layers: usize, dim: usize, hidden: usize, l: usize) -> EncoderDims {
        EncoderDims {
            dim,
            grouping: LayerGrouping::per_layer(layers),
            hidden,
            directions: l,
            leak: 0.2,
        }
    }

    fn delta(rng: &mut SeededRng, l: usize, d: usize) -> DeltaCode {
        DeltaCode::from_code(LatentCode::new(l, d, rng.normal_vec(l * d)).unwrap())
    }

    /// Straight-line evaluation of W5·φ(W4·φ(W3·φ(W2·φ(W1·v+b1)+b2)+b3)+b4)+b5.
    fn interpret(mlp: &Mlp, v: &[f64], slope: f64) -> Vec<f64> {
        let affine = |d: &Dense, x: &[f64]| -> Vec<f64> {
            (0..d.outputs())
                .map(|r| {
                    let mut s = d.bias[r];
                    for c in 0..d.inputs() {
                        s += d.weight[(r, c)] * x[c];
                    }
                    s
                })
                .collect()
        };
        let phi = |x: Vec<f64>| -> Vec<f64> {
            x.into_iter().map(|v| if v > 0.0 { v } else { slope * v }).collect()
        };
        let l = &mlp.layers;
        let h1 = phi(affine(&l[0], v));
        let h2 = phi(affine(&l[1], &h1));
        let h3 = phi(affine(&l[2], &h2));
        let h4 = phi(affine(&l[3], &h3));
        affine(&l[4], &h4)
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let d = dims(2, 4, 8, 3);
        let a = init_params(&d, 9);
        assert_eq!(a, init_params(&d, 9));
        for mlp in &a.groups {
            assert_eq!(mlp.layers.len(), DEPTH);
            for layer in &mlp.layers {
                assert!(layer.bias.iter().all(|&b| b == 0.0));
            }
        }
    }

    #[test]
    fn init_std_follows_kaiming_law() {
        let d = EncoderDims {
            dim: 100,
            grouping: LayerGrouping::per_layer(1),
            hidden: 400,
            directions: 3,
            leak: 0.2,
        };
        let p = init_params(&d, 1);
        let w = p.groups[0].layers[0].weight.as_slice();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64).sqrt();
        let target = (2.0f64 / (100.0 * (1.0 + 0.04))).sqrt();
        assert!((std - target).abs() <= 0.1 * target, "{std} vs {target}");
    }

    #[test]
    fn zero_params_give_zero_codes() {
        let mut p = init_params(&dims(1, 3, 4, 2), 0);
        p.fill(0.0);
        let mut rng = SeededRng::new(1);
        let (n, _) = mlp_forward(&p, &delta(&mut rng, 1, 3), 0).unwrap();
        assert_eq!(n, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_path_passes_positive_input() {
        let mut p = init_params(&dims(1, 1, 1, 1), 0);
        p.fill(1.0);
        for layer in &mut p.groups[0].layers {
            layer.bias[0] = 0.0;
        }
        let d = DeltaCode::from_code(LatentCode::new(1, 1, vec![0.75]).unwrap());
        assert_eq!(mlp_forward(&p, &d, 0).unwrap().0, vec![0.75]);
    }

    #[test]
    fn forward_matches_interpreter() {
        let p = init_params(&dims(2, 5, 7, 4), 17);
        let mut rng = SeededRng::new(17);
        let mut p = p;
        for s in p.param_slices_mut() {
            for v in s.iter_mut() {
                *v += 0.1 * rng.normal();
            }
        }
        let x = delta(&mut rng, 2, 5);
        for g in 0..2 {
            let (out, _) = mlp_forward(&p, &x, g).unwrap();
            let oracle = interpret(&p.groups[g], x.layer(g), 0.2);
            for (a, b) in out.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn backward_zero_seed_gives_zero_gradients() {
        let p = init_params(&dims(1, 3, 4, 2), 3);
        let mut rng = SeededRng::new(3);
        let (_, cache) = mlp_forward(&p, &delta(&mut rng, 1, 3), 0).unwrap();
        let (g, gi) = mlp_backward(&p, 0, &cache, &[0.0, 0.0]).unwrap();
        assert!(g.param_slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(gi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_gradient_is_outer_product() {
        let mlp = Mlp {
            layers: vec![Dense {
                weight: Matrix::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.0, -0.5]]).unwrap(),
                bias: vec![0.1, -0.2],
            }],
        };
        let x = [1.0, 2.0, -3.0];
        let (_, cache) = mlp.forward(&x, 0.2).unwrap();
        let g_out = [0.3, -0.7];
        let mut grads = mlp.zeros_like();
        let gi = mlp.backward_into(&cache, &g_out, 0.2, &mut grads).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(grads.layers[0].weight[(r, c)], g_out[r] * x[c]);
            }
        }
        assert_eq!(grads.layers[0].bias, g_out.to_vec());
        assert_eq!(gi, mlp.layers[0].weight.matvec_t(&g_out).unwrap());
    }

    #[test]
    fn backward_matches_central_differences() {
        let p = init_params(&dims(2, 4, 6, 3), 19);
        let mut rng = SeededRng::new(19);
        let x = delta(&mut rng, 2, 4);
        let err = finite_diff_check(&p, &x, 1e-5).unwrap();
        assert!(err <= 1e-5, "max relative error {err}");
    }

    #[test]
    fn full_net_gradient_check_seed_23() {
        let p = init_params(&dims(1, 6, 8, 4), 23);
        let mut rng = SeededRng::new(23);
        let x = delta(&mut rng, 1, 6);
        assert!(finite_diff_check(&p, &x, 1e-5).unwrap() <= 1e-5);
    }

    #[test]
    fn zero_params_check_is_exact() {
        let mut p = init_params(&dims(1, 3, 4, 2), 0);
        p.fill(0.0);
        let mut rng = SeededRng::new(2);
        assert_eq!(finite_diff_check(&p, &delta(&mut rng, 1, 3), 1e-5).unwrap(), 0.0);
        assert!(finite_diff_check(&p, &delta(&mut rng, 1, 3), 0.5).is_err());
    }

    #[test]
    fn linear_single_layer_check() {
        let mut rng = SeededRng::new(5);
        let mlp = Mlp {
            layers: vec![Dense {
                weight: Matrix::from_vec(2, 3, rng.normal_vec(6)).unwrap(),
                bias: rng.normal_vec(2),
            }],
        };
        let p = EncoderParams {
            dim: 3,
            grouping: LayerGrouping::per_layer(1),
            leak: 0.2,
            groups: vec![mlp],
        };
        let x = delta(&mut rng, 1, 3);
        assert!(finite_diff_check(&p, &x, 1e-5).unwrap() <= 1e-10);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let p = init_params(&dims(1, 3, 4, 2), 0);
        let q = init_params(&dims(1, 5, 4, 2), 0);
        let mut rng = SeededRng::new(1);
        let (_, cache) = mlp_forward(&q, &delta(&mut rng, 1, 5), 0).unwrap();
        assert!(mlp_backward(&p, 0, &cache, &[1.0, 1.0]).is_err());
        assert!(mlp_forward(&p, &delta(&mut rng, 1, 5), 0).is_err());
    }
}
