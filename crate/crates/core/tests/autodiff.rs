mod common;

use addint::autodiff::{AutodiffError, Conv2dGeometry, MulMode, Tape, Tensor, Var};
use addint::pseudo_arith::{a_mult, int_mul};
use common::{check_function, off_kink_vec, Fd, GradCheck};

fn unary(mode: MulMode, shape: &[usize], lo: i32, hi: i32, signed: bool, seed: u64, f: impl Fn(&mut Tape, Var) -> Var) -> GradCheck {
    let n = shape.iter().product();
    let x = off_kink_vec(&mut common::rng(seed), n, lo, hi, signed);
    check_function(&[(shape.to_vec(), x)], seed, Fd::for_mode(mode), |t, v| f(t, v[0]))
}

fn binary(mode: MulMode, sa: &[usize], sb: &[usize], seed: u64, f: impl Fn(&mut Tape, Var, Var) -> Var) -> GradCheck {
    let mut g = common::rng(seed);
    let a = off_kink_vec(&mut g, sa.iter().product(), -1, 2, true);
    let b = off_kink_vec(&mut g, sb.iter().product(), -1, 2, true);
    check_function(&[(sa.to_vec(), a), (sb.to_vec(), b)], seed, Fd::for_mode(mode), |t, v| f(t, v[0], v[1]))
}

fn assert_passes(what: &str, check: GradCheck) {
    assert!(check.passed(0.8), "{what}: {check:?}");
}

#[test]
fn op_gradients_match_finite_differences() {
    for mode in [MulMode::Standard, MulMode::ExactOp] {
        for seed in 0..3 {
            let m = |s: &str| format!("{mode:?} {s} seed {seed}");
            assert_passes(&m("mul"), binary(mode, &[4, 3], &[4, 3], seed, |t, a, b| t.mul(a, b, mode).unwrap()));
            assert_passes(&m("mul scalar"), binary(mode, &[4, 3], &[], seed, |t, a, b| t.mul(a, b, mode).unwrap()));
            assert_passes(&m("div"), binary(mode, &[4, 3], &[4, 3], seed, |t, a, b| t.div(a, b, mode).unwrap()));
            assert_passes(&m("matmul"), binary(mode, &[3, 4], &[4, 2], seed, |t, a, b| t.matmul(a, b, mode).unwrap()));
            assert_passes(&m("mul_scalar"), unary(mode, &[5], -1, 2, true, seed, |t, x| t.mul_scalar(x, 1.3, mode)));
            assert_passes(&m("exp2"), unary(mode, &[6], -2, 2, true, seed, |t, x| t.exp2(x, mode)));
            assert_passes(&m("exp"), unary(mode, &[6], -2, 2, true, seed, |t, x| t.exp(x, mode)));
            assert_passes(&m("log2"), unary(mode, &[6], -3, 3, false, seed, |t, x| t.log2(x, mode)));
            assert_passes(&m("ln"), unary(mode, &[6], -3, 3, false, seed, |t, x| t.ln(x, mode)));
            assert_passes(&m("sqrt"), unary(mode, &[6], -3, 3, false, seed, |t, x| t.sqrt(x, mode)));
        }
    }
}

#[test]
fn plumbing_gradients_match_finite_differences() {
    let mode = MulMode::Standard;
    for seed in 0..3 {
        assert_passes("add", binary(mode, &[2, 3], &[3], seed, |t, a, b| t.add(a, b).unwrap()));
        assert_passes("sub", binary(mode, &[2, 3], &[2, 1], seed, |t, a, b| t.sub(a, b).unwrap()));
        assert_passes("relu", unary(mode, &[8], -1, 1, true, seed, |t, x| t.relu(x)));
        assert_passes("sum", unary(mode, &[2, 3], -1, 1, true, seed, |t, x| t.sum(x)));
        assert_passes("mean", unary(mode, &[2, 3], -1, 1, true, seed, |t, x| t.mean(x)));
        assert_passes("sum_axes", unary(mode, &[2, 3, 2], -1, 1, true, seed, |t, x| t.sum_axes(x, &[0, 2]).unwrap()));
        assert_passes("broadcast", unary(mode, &[3, 1], -1, 1, true, seed, |t, x| t.broadcast_to(x, &[2, 3, 4]).unwrap()));
        assert_passes("reshape", unary(mode, &[2, 6], -1, 1, true, seed, |t, x| t.reshape(x, &[3, 4]).unwrap()));
        assert_passes("permute", unary(mode, &[2, 3, 4], -1, 1, true, seed, |t, x| t.permute(x, &[2, 0, 1]).unwrap()));
        assert_passes("pick", unary(mode, &[3, 4], -1, 1, true, seed, |t, x| t.pick(x, &[3, 0, 3]).unwrap()));
        assert_passes(
            "im2col",
            unary(mode, &[2, 2, 4, 5], -1, 1, true, seed, |t, x| t.im2col(x, Conv2dGeometry::square(3, 2, 1)).unwrap()),
        );
    }
}

/// A two-layer network and its gradients written out by hand in binary32,
/// with the same accumulation orders (ascending inner index).
struct Textbook {
    x: Vec<f32>,
    w: Vec<f32>,
    b: Vec<f32>,
    r: Vec<f32>,
    n: usize,
    k: usize,
    m: usize,
}

impl Textbook {
    /// Returns (loss, dx, dw, db) for `loss = Σ r ⊙ relu(x w + b)`.
    fn run(&self) -> (f32, Vec<f32>, Vec<f32>, Vec<f32>) {
        let (n, k, m) = (self.n, self.k, self.m);
        let mut z = vec![0f32; n * m];
        for i in 0..n {
            for j in 0..m {
                let mut acc = 0f32;
                for p in 0..k {
                    acc += self.x[i * k + p] * self.w[p * m + j];
                }
                z[i * m + j] = acc + self.b[j];
            }
        }
        let h: Vec<f32> = z.iter().map(|&v| v.max(0.0)).collect();
        let loss = h.iter().zip(&self.r).fold(0f32, |s, (&h, &r)| s + h * r);
        let dz: Vec<f32> = (0..n * m).map(|q| if z[q] > 0.0 { self.r[q] } else { 0.0 }).collect();
        let mut db = vec![0f32; m];
        for i in 0..n {
            for j in 0..m {
                db[j] += dz[i * m + j];
            }
        }
        let mut dw = vec![0f32; k * m];
        for p in 0..k {
            for j in 0..m {
                let mut acc = 0f32;
                for i in 0..n {
                    acc += self.x[i * k + p] * dz[i * m + j];
                }
                dw[p * m + j] = acc;
            }
        }
        let mut dx = vec![0f32; n * k];
        for i in 0..n {
            for p in 0..k {
                let mut acc = 0f32;
                for j in 0..m {
                    acc += dz[i * m + j] * self.w[p * m + j];
                }
                dx[i * k + p] = acc;
            }
        }
        (loss, dx, dw, db)
    }
}

#[test]
fn standard_mode_matches_textbook_oracle_bit_for_bit() {
    let mut g = common::rng(31);
    let (n, k, m) = (5, 7, 4);
    let tb = Textbook {
        x: common::uniform_vec(&mut g, n * k, -1.0, 1.0),
        w: common::uniform_vec(&mut g, k * m, -1.0, 1.0),
        b: common::uniform_vec(&mut g, m, -0.5, 0.5),
        r: common::uniform_vec(&mut g, n * m, -1.0, 1.0),
        n,
        k,
        m,
    };
    let (loss, dx, dw, db) = tb.run();

    let mut t = Tape::new();
    let x = t.param(Tensor::new([n, k], tb.x.clone()).unwrap());
    let w = t.param(Tensor::new([k, m], tb.w.clone()).unwrap());
    let b = t.param(Tensor::new([m], tb.b.clone()).unwrap());
    let r = t.constant(Tensor::new([n, m], tb.r.clone()).unwrap());
    let xw = t.matmul(x, w, MulMode::Standard).unwrap();
    let z = t.add(xw, b).unwrap();
    let h = t.relu(z);
    let hr = t.mul(h, r, MulMode::Standard).unwrap();
    let l = t.sum(hr);
    t.backward(l).unwrap();

    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(t.value(l).data()[0].to_bits(), loss.to_bits());
    assert_eq!(bits(t.grad(x).unwrap()), bits(&dx));
    assert_eq!(bits(t.grad(w).unwrap()), bits(&dw));
    assert_eq!(bits(t.grad(b).unwrap()), bits(&db));
}

fn gradients_of_small_net(mode: MulMode) -> Vec<Vec<u32>> {
    let mut g = common::rng(32);
    let mut t = Tape::new();
    let x = t.param(Tensor::new([4, 6], common::uniform_vec(&mut g, 24, -1.0, 1.0)).unwrap());
    let w = t.param(Tensor::new([6, 3], common::uniform_vec(&mut g, 18, -1.0, 1.0)).unwrap());
    let y = t.matmul(x, w, mode).unwrap();
    let e = t.exp(y, mode);
    let s = t.sum_axes(e, &[1]).unwrap();
    let l = t.ln(s, mode);
    let q = t.div(y, s, mode).unwrap();
    let q = t.sum(q);
    let l = t.mean(l);
    let loss = t.add(l, q).unwrap();
    t.backward(loss).unwrap();
    [x, w].iter().map(|&v| t.grad(v).unwrap().iter().map(|g| g.to_bits()).collect()).collect()
}

#[test]
fn gradients_are_deterministic() {
    for mode in MulMode::ALL {
        assert_eq!(gradients_of_small_net(mode), gradients_of_small_net(mode), "{mode:?}");
    }
}

#[test]
fn approx_backward_reads_only_the_co_operand() {
    assert!(!MulMode::ApproxOp.grad_reads_own_operand());
    assert!(MulMode::ExactOp.grad_reads_own_operand());
    let grads = |a: f32, b: f32| {
        let mut t = Tape::new();
        let va = t.param(Tensor::vector(vec![a]));
        let vb = t.param(Tensor::vector(vec![b]));
        let p = t.mul(va, vb, MulMode::ApproxOp).unwrap();
        let l = t.sum(p);
        t.backward(l).unwrap();
        (t.grad(va).unwrap()[0], t.grad(vb).unwrap()[0])
    };
    // Changing an operand changes only the other operand's gradient.
    let mut g = common::rng(33);
    for _ in 0..100 {
        let v = off_kink_vec(&mut g, 3, -3, 3, true);
        let (da, db) = grads(v[0], v[1]);
        let (da2, db2) = grads(v[2], v[1]);
        assert_eq!(da, da2);
        assert_ne!(db, db2);
        assert_eq!(da, a_mult(v[1], 1.0).unwrap());
        assert_eq!(db, a_mult(v[0], 1.0).unwrap());
    }
}

#[test]
fn mul_and_matmul_examples() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::vector(vec![2.0, 1.5]));
    let b = t.constant(Tensor::vector(vec![3.0, 1.5]));
    let p = t.mul(a, b, MulMode::ExactOp).unwrap();
    assert_eq!(t.value(p).data(), &[6.0, 2.0]);

    let ones = t.constant(Tensor::vector(vec![1.0, 1.0]));
    for mode in MulMode::ALL {
        let p = t.mul(a, ones, mode).unwrap();
        if mode == MulMode::ApproxOp {
            assert_eq!(t.value(p).data(), &[a_mult(2.0, 1.0).unwrap(), a_mult(1.5, 1.0).unwrap()]);
        } else {
            assert_eq!(t.value(p).data(), &[2.0, 1.5]);
        }
    }

    let m = t.constant(Tensor::full([2, 2], 1.5));
    let mm = t.matmul(m, m, MulMode::ExactOp).unwrap();
    assert_eq!(t.value(mm).data(), &[4.0; 4]);

    let mut g = common::rng(34);
    let x = t.constant(Tensor::new([3, 4], common::uniform_vec(&mut g, 12, -2.0, 2.0)).unwrap());
    let eye = t.constant(Tensor::new([4, 4], (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect()).unwrap());
    for mode in [MulMode::Standard, MulMode::ExactOp] {
        let y = t.matmul(x, eye, mode).unwrap();
        assert_eq!(t.value(y).data(), t.value(x).data());
    }
    let s1 = t.constant(Tensor::new([1, 1], vec![1.7]).unwrap());
    let s2 = t.constant(Tensor::new([1, 1], vec![-2.9]).unwrap());
    let y = t.matmul(s1, s2, MulMode::ExactOp).unwrap();
    assert_eq!(t.value(y).data(), &[int_mul(1.7, -2.9).unwrap()]);
}

#[test]
fn shape_and_scalar_errors() {
    let mut t = Tape::new();
    let a = t.param(Tensor::zeros([2, 3]));
    let b = t.param(Tensor::zeros([3, 2]));
    assert!(matches!(t.mul(a, b, MulMode::ExactOp), Err(AutodiffError::ShapeMismatch { .. })));
    assert!(t.matmul(a, a, MulMode::Standard).is_err());
    assert!(t.matmul(a, b, MulMode::Standard).is_ok());
    assert!(matches!(t.backward(a), Err(AutodiffError::NotScalar(_))));
    assert!(Tensor::new([2, 2], vec![1.0; 3]).is_err());
}
