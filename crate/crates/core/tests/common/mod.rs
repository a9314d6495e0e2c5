#![allow(dead_code)]

use addint::autodiff::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A value with |x| in [2^lo, 2^hi) whose mantissa stays more than 2^-8 away
/// from 0 and 1, so it sits well inside a linear piece of l.
pub fn off_kink(rng: &mut ChaCha8Rng, lo: i32, hi: i32, signed: bool) -> f32 {
    let e = rng.gen_range(lo..hi);
    let m: f32 = rng.gen_range(1.0 / 256.0 + 1e-4..1.0 - 1.0 / 256.0 - 1e-4);
    let v = 2f32.powi(e) * (1.0 + m);
    if signed && rng.gen_bool(0.5) {
        -v
    } else {
        v
    }
}

pub fn off_kink_vec(rng: &mut ChaCha8Rng, n: usize, lo: i32, hi: i32, signed: bool) -> Vec<f32> {
    (0..n).map(|_| off_kink(rng, lo, hi, signed)).collect()
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Outcome of comparing analytic gradients with finite differences.
#[derive(Debug, Default)]
pub struct GradCheck {
    pub tested: usize,
    pub skipped: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

impl GradCheck {
    pub fn merge(&mut self, other: GradCheck) {
        self.tested += other.tested;
        self.skipped += other.skipped;
        self.worst = self.worst.max(other.worst);
        self.failures.extend(other.failures);
    }

    pub fn coverage(&self) -> f64 {
        self.tested as f64 / (self.tested + self.skipped).max(1) as f64
    }

    pub fn passed(&self, min_coverage: f64) -> bool {
        self.failures.is_empty() && self.coverage() >= min_coverage
    }
}

/// Relative finite-difference step for smooth (standard-mode) functions.
pub const FD_STEP_SMOOTH: f64 = 1.0 / 64.0;
/// Relative step for the piecewise-linear modes, small enough that few
/// steps straddle a kink.
pub const FD_STEP_PIECEWISE: f64 = 1.0 / 1024.0;


/// Relative tolerance between analytic and central-difference gradients.
pub const FD_TOL: f64 = 1e-3;

/// Rounding-error allowance for a binary32 value of magnitude `m`: 4 ulps.
pub fn f32_noise(m: f64) -> f64 {
    m * 2f64.powi(-22)
}

/// Finite-difference settings for one function.
#[derive(Debug, Clone, Copy)]
pub struct Fd {
    /// Step relative to `max(|x|, 0.5)`.
    pub step: f64,
    /// Skip coordinates whose one-sided differences disagree (a kink or jump
    /// lies within the step). Only meaningful for piecewise-linear functions.
    pub skip_kinks: bool,
}

impl Fd {
    pub fn for_mode(mode: addint::autodiff::MulMode) -> Self {
        match mode {
            addint::autodiff::MulMode::Standard => Fd { step: FD_STEP_SMOOTH, skip_kinks: false },
            _ => Fd { step: FD_STEP_PIECEWISE, skip_kinks: true },
        }
    }
}

/// Compares `analytic[i]` with central differences of `Σ r_j y_j(x)`, where
/// `eval` computes `y` in binary32 and the sum is taken in f64.
///
/// Relative errors are measured against at least `floor`. The rounding of
/// each output that moves under the perturbation adds 4 ulps of slack,
/// divided by the step, since no difference quotient resolves below it.
pub fn check_gradients(
    x: &[f32],
    analytic: &[f32],
    r: &[f32],
    fd: Fd,
    floor: f64,
    eval: impl Fn(&[f32]) -> Vec<f32>,
) -> GradCheck {
    let mut out = GradCheck::default();
    let y0 = eval(x);
    let l0 = dot(&y0, r);
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = (x[i].abs() as f64).max(0.5) * fd.step;
        let (up, down) = ((x[i] as f64 + h) as f32, (x[i] as f64 - h) as f32);
        xp[i] = up;
        let yp = eval(&xp);
        xp[i] = down;
        let ym = eval(&xp);
        xp[i] = x[i];
        let (lp, lm) = (dot(&yp, r), dot(&ym, r));
        let moved: f64 = (0..y0.len())
            .filter(|&j| yp[j] != y0[j] || ym[j] != y0[j])
            .map(|j| (r[j] as f64 * yp[j].abs().max(ym[j].abs()).max(y0[j].abs()) as f64).abs())
            .sum();
        let (hp, hm) = (up as f64 - x[i] as f64, x[i] as f64 - down as f64);
        let slack = f32_noise(moved) / hp.min(hm);
        let scale = |a: f64, b: f64| a.abs().max(b.abs()).max(floor);
        let (fwd, bwd) = ((lp - l0) / hp, (l0 - lm) / hm);
        if !lp.is_finite() || !lm.is_finite() {
            out.skipped += 1;
            continue;
        }
        if fd.skip_kinks && (fwd - bwd).abs() > FD_TOL / 4.0 * scale(fwd, bwd) + 2.0 * slack {
            out.skipped += 1;
            continue;
        }
        let central = (lp - lm) / (hp + hm);
        let a = analytic[i] as f64;
        out.tested += 1;
        out.worst = out.worst.max((a - central).abs() / scale(a, central));
        if (a - central).abs() - slack > FD_TOL * scale(a, central) {
            out.failures.push(format!("x[{i}] = {}: analytic {} vs fd {central}", x[i], analytic[i]));
        }
    }
    out
}

/// Records `Σ r_i y_i` on the tape (a standard-mode projection) and returns
/// the scalar loss node.
pub fn project(tape: &mut Tape, y: Var, r: &[f32]) -> Var {
    let shape = tape.value(y).shape().to_vec();
    let rv = tape.constant(Tensor::new(shape, r.to_vec()).unwrap());
    let p = tape.mul(y, rv, addint::autodiff::MulMode::Standard).unwrap();
    tape.sum(p)
}

/// `Σ r_i y_i` in f64.
pub fn dot(y: &[f32], r: &[f32]) -> f64 {
    y.iter().zip(r).map(|(&a, &b)| a as f64 * b as f64).sum()
}

pub fn data_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

pub fn mnist_available() -> bool {
    let d = data_dir();
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
        .iter()
        .all(|f| d.join(f).is_file())
}

/// Gradient check of `build` with respect to every input tensor.
///
/// `build` records the function on a fresh tape and returns its output; the
/// scalar checked is `Σ r_i y_i` for a fixed random `r`.
pub fn check_function(
    inputs: &[(Vec<usize>, Vec<f32>)],
    seed: u64,
    fd: Fd,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) -> GradCheck {
    let eval = |values: &[Vec<f32>]| -> (Tape, Vec<Var>, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(values)
            .map(|((shape, _), v)| tape.param(Tensor::new(shape.clone(), v.clone()).unwrap()))
            .collect();
        let y = build(&mut tape, &vars);
        (tape, vars, y)
    };
    let values: Vec<Vec<f32>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let (mut tape, vars, y) = eval(&values);
    let mut g = rng(seed ^ 0x5eed);
    let r = uniform_vec(&mut g, tape.value(y).numel(), 0.5, 1.5);
    let loss = project(&mut tape, y, &r);
    tape.backward(loss).unwrap();

    let mut out = GradCheck::default();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = tape.grad(v).map_or_else(|| vec![0.0; values[i].len()], |g| g.to_vec());
        let scale = analytic.iter().fold(0f64, |m, &a| m.max(a.abs() as f64));
        let check = check_gradients(&values[i], &analytic, &r, fd, (scale * 1e-2).max(1e-6), |xi| {
            let mut vals = values.clone();
            vals[i] = xi.to_vec();
            let (t, _, y) = eval(&vals);
            t.value(y).data().to_vec()
        });
        out.merge(check);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerCase {
    Linear,
    Conv2d,
    BatchNorm,
    SoftmaxXent,
}

impl LayerCase {
    pub const ALL: [LayerCase; 4] = [LayerCase::Linear, LayerCase::Conv2d, LayerCase::BatchNorm, LayerCase::SoftmaxXent];
}

/// Finite-difference check of one layer's backward against its forward in
/// `mode`, on random off-kink inputs and parameters.
pub fn layer_grad_check(case: LayerCase, mode: addint::autodiff::MulMode, seed: u64) -> GradCheck {
    use addint::autodiff::Conv2dGeometry;
    use addint::nn::{batchnorm_forward, conv2d_forward, linear_forward, softmax_xent_forward, RunningStats};
    let mut g = rng(seed);
    let fd = Fd::for_mode(mode);
    match case {
        LayerCase::Linear => {
            let inputs = [
                (vec![3, 5], off_kink_vec(&mut g, 15, -1, 1, true)),
                (vec![5, 4], off_kink_vec(&mut g, 20, -2, 0, true)),
                (vec![4], off_kink_vec(&mut g, 4, -3, -1, true)),
            ];
            check_function(&inputs, seed, fd, |t, v| linear_forward(t, v[0], v[1], v[2], mode).unwrap())
        }
        LayerCase::Conv2d => {
            let inputs = [
                (vec![2, 2, 5, 5], off_kink_vec(&mut g, 100, -1, 1, true)),
                (vec![3, 2, 3, 3], off_kink_vec(&mut g, 54, -2, 0, true)),
            ];
            let geometry = Conv2dGeometry::square(3, 1, 1);
            check_function(&inputs, seed, fd, |t, v| conv2d_forward(t, v[0], v[1], geometry, mode).unwrap())
        }
        LayerCase::BatchNorm => {
            let inputs = [
                (vec![6, 3], off_kink_vec(&mut g, 18, -1, 2, true)),
                (vec![3], off_kink_vec(&mut g, 3, -1, 1, true)),
                (vec![3], off_kink_vec(&mut g, 3, -2, 0, true)),
            ];
            let running = RunningStats::new(3, 0.1);
            check_function(&inputs, seed, fd, |t, v| {
                batchnorm_forward(t, v[0], v[1], v[2], 1e-5, mode, &running, true).unwrap().0
            })
        }
        LayerCase::SoftmaxXent => {
            let labels: Vec<usize> = (0..4).map(|_| g.gen_range(0..5)).collect();
            let inputs = [(vec![4, 5], off_kink_vec(&mut g, 20, -2, 2, true))];
            check_function(&inputs, seed, fd, |t, v| softmax_xent_forward(t, v[0], &labels, mode).unwrap())
        }
    }
}
