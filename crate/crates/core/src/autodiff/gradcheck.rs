//! Central finite differences and the gradient-check suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{ConvGeometry, NormMode, DEFAULT_EPSILON};
use crate::tensor::Tensor;

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every element `i`.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidValue(format!("eps must be > 0, got {eps}")));
    }
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.len()];
    for (i, slot) in grad.iter_mut().enumerate() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        *slot = (plus - minus) / (2.0 * eps);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), grad))
}

/// Largest elementwise `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
            context: "relative_error",
        });
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max))
}

pub const GRADCHECK_EPS: f64 = 1e-6;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// Outcome of one check in the suite.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// A differentiable scalar function of several tensors, built fresh on a graph.
type Builder = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// Compares the tape gradient of `build` against finite differences, for
/// every input.
pub fn check_function(
    name: &str,
    inputs: &[Tensor],
    build: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.parameter(t.clone())).collect();
    let out = build(&mut graph, &vars)?;
    let grads = graph.backward(out)?;

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        let numeric = finite_difference_gradient(
            |probe| {
                let mut g = Graph::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| g.constant(if j == k { probe.clone() } else { t.clone() }))
                    .collect();
                let out = build(&mut g, &vs)?;
                g.value(out).item()
            },
            input,
            GRADCHECK_EPS,
        )?;
        worst = worst.max(relative_error(&analytic, &numeric)?);
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_relative_error: worst,
        passed: worst < GRADCHECK_TOLERANCE,
    })
}

/// Contracts `v` with fixed pseudo-random weights so every output element
/// carries an O(1) gradient.
fn project(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let shape = g.value(v).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(Tensor::rand_uniform(shape, -1.0, 1.0, &mut rng));
    let prod = g.mul(v, w)?;
    g.sum(prod)
}

/// The full layer and loss gradient suite on small random inputs.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<(String, Vec<Tensor>, Builder)> = Vec::new();

    for d in 1..=4usize {
        let x = Tensor::randn(vec![1, 2, 4, 4, 4], 1.0, &mut rng);
        let w = Tensor::randn(vec![3, 2, 3, 3, 3], 0.3, &mut rng);
        let b = Tensor::randn(vec![3], 0.3, &mut rng);
        cases.push((
            format!("conv3d d={d}"),
            vec![x, w, b],
            Box::new(move |g, v| {
                let y = g.conv3d(v[0], v[1], Some(v[2]), ConvGeometry::same(3, d))?;
                project(g, y, 11)
            }),
        ));
    }

    // distinct values keep the argmax away from ties
    let mut pool_in: Vec<f64> = (0..2 * 64).map(|i| i as f64 * 0.173).collect();
    shuffle(&mut pool_in, &mut rng);
    cases.push((
        "maxpool3d".into(),
        vec![Tensor::from_parts(vec![1, 2, 4, 4, 4], pool_in)],
        Box::new(|g, v| {
            let y = g.max_pool3d(v[0])?;
            project(g, y, 12)
        }),
    ));

    cases.push((
        "batchnorm3d train".into(),
        vec![
            Tensor::randn(vec![2, 2, 2, 2, 2], 1.0, &mut rng),
            Tensor::rand_uniform(vec![2], 0.5, 1.5, &mut rng),
            Tensor::randn(vec![2], 0.5, &mut rng),
        ],
        Box::new(|g, v| {
            let (y, _) =
                g.batch_norm3d(v[0], v[1], v[2], &[], &[], DEFAULT_EPSILON, NormMode::Train)?;
            project(g, y, 13)
        }),
    ));

    cases.push((
        "batchnorm3d inference".into(),
        vec![
            Tensor::randn(vec![1, 2, 2, 2, 2], 1.0, &mut rng),
            Tensor::rand_uniform(vec![2], 0.5, 1.5, &mut rng),
            Tensor::randn(vec![2], 0.5, &mut rng),
        ],
        Box::new(|g, v| {
            let (y, _) = g.batch_norm3d(
                v[0],
                v[1],
                v[2],
                &[0.1, -0.2],
                &[0.8, 1.3],
                DEFAULT_EPSILON,
                NormMode::Inference,
            )?;
            project(g, y, 14)
        }),
    ));

    cases.push((
        "upsample_trilinear x2".into(),
        vec![Tensor::randn(vec![1, 2, 2, 3, 2], 1.0, &mut rng)],
        Box::new(|g, v| {
            let y = g.upsample_trilinear(v[0], 2)?;
            project(g, y, 15)
        }),
    ));

    cases.push((
        "concat_channels".into(),
        vec![
            Tensor::randn(vec![2, 1, 2, 2, 2], 1.0, &mut rng),
            Tensor::randn(vec![2, 3, 2, 2, 2], 1.0, &mut rng),
        ],
        Box::new(|g, v| {
            let y = g.concat_channels(v[0], v[1])?;
            project(g, y, 16)
        }),
    ));

    cases.push((
        "conv3d -> relu -> sigmoid".into(),
        vec![
            Tensor::randn(vec![1, 1, 4, 4, 4], 1.0, &mut rng),
            Tensor::randn(vec![2, 1, 3, 3, 3], 0.5, &mut rng),
        ],
        Box::new(|g, v| {
            let c = g.conv3d(v[0], v[1], None, ConvGeometry::same(3, 1))?;
            let r = g.relu(c)?;
            let s = g.sigmoid(r)?;
            project(g, s, 17)
        }),
    ));

    cases.push((
        "elementwise add/sub/mul/neg/log".into(),
        vec![
            Tensor::rand_uniform(vec![1, 2, 2, 2, 2], 0.5, 2.0, &mut rng),
            Tensor::randn(vec![2], 1.0, &mut rng),
        ],
        Box::new(|g, v| {
            let a = g.mul(v[0], v[1])?;
            let b = g.sub(a, v[1])?;
            let c = g.neg(b)?;
            let d = g.add(c, v[0])?;
            let l = g.log(v[0])?;
            let e = g.mul(d, l)?;
            project(g, e, 18)
        }),
    ));

    let target = random_mask(&[1, 1, 4, 4, 4], &mut rng);
    let pred = Tensor::rand_uniform(vec![1, 1, 4, 4, 4], 0.05, 0.95, &mut rng);
    let t1 = target.clone();
    cases.push((
        "dice_loss".into(),
        vec![pred.clone()],
        Box::new(move |g, v| g.dice_loss(v[0], &t1)),
    ));
    let t2 = target.clone();
    cases.push((
        "bce_loss".into(),
        vec![pred.clone()],
        Box::new(move |g, v| g.bce_loss(v[0], &t2)),
    ));
    let t3 = target;
    cases.push((
        "dice + bce".into(),
        vec![pred],
        Box::new(move |g, v| {
            let d = g.dice_loss(v[0], &t3)?;
            let b = g.bce_loss(v[0], &t3)?;
            g.add(d, b)
        }),
    ));

    cases
        .iter()
        .map(|(name, inputs, build)| check_function(name, inputs, build.as_ref()))
        .collect()
}

fn shuffle(v: &mut [f64], rng: &mut ChaCha8Rng) {
    use rand::seq::SliceRandom;
    v.shuffle(rng);
}

fn random_mask(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    use rand::Rng;
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_example() {
        let x = Tensor::new(vec![1], vec![3.0]).unwrap();
        let g = finite_difference_gradient(|t| Ok(t.data()[0] * t.data()[0]), &x, 1e-6).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = finite_difference_gradient(|_| Ok(4.2), &x, 1e-6).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_positive_eps_is_rejected() {
        let x = Tensor::zeros(vec![1]);
        assert!(finite_difference_gradient(|_| Ok(0.0), &x, 0.0).is_err());
    }
}
