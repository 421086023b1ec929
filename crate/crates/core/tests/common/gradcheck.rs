//! Central finite differences over an independent `f64` re-statement of
//! every differentiable op, compared against the tape's analytic gradients.

use longvid_core::numcore::{Rng, Tape, Tensor, Var};

/// Dense row-major `f64` array.
#[derive(Clone, Debug)]
pub struct Arr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape {shape:?}");
        Self { shape: shape.to_vec(), data }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self::new(t.shape(), t.data().iter().map(|&v| v as f64).collect())
    }

    fn last(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    fn zip(&self, o: &Arr, f: impl Fn(f64, f64) -> f64) -> Arr {
        assert_eq!(self.shape, o.shape);
        Arr::new(&self.shape, self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Arr {
        Arr::new(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }
}

pub fn add(a: &Arr, b: &Arr) -> Arr {
    a.zip(b, |x, y| x + y)
}

pub fn sub(a: &Arr, b: &Arr) -> Arr {
    a.zip(b, |x, y| x - y)
}

pub fn mul(a: &Arr, b: &Arr) -> Arr {
    a.zip(b, |x, y| x * y)
}

pub fn scale(a: &Arr, c: f64) -> Arr {
    a.map(|x| x * c)
}

pub fn add_bias(x: &Arr, b: &Arr) -> Arr {
    let d = x.last();
    Arr::new(&x.shape, x.data.iter().enumerate().map(|(i, &v)| v + b.data[i % d]).collect())
}

pub fn matmul(a: &Arr, b: &Arr) -> Arr {
    let r = a.shape.len();
    let (m, k, n) = (a.shape[r - 2], a.shape[r - 1], b.shape[r - 1]);
    let batch: usize = a.shape[..r - 2].iter().product();
    let mut out = vec![0.0; batch * m * n];
    for bi in 0..batch {
        for i in 0..m {
            for j in 0..n {
                out[bi * m * n + i * n + j] =
                    (0..k).map(|q| a.data[bi * m * k + i * k + q] * b.data[bi * k * n + q * n + j]).sum();
            }
        }
    }
    let mut shape = a.shape.clone();
    shape[r - 1] = n;
    Arr::new(&shape, out)
}

pub fn permute(x: &Arr, axes: &[usize]) -> Arr {
    let r = x.shape.len();
    let mut strides = vec![1usize; r];
    for i in (0..r.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * x.shape[i + 1];
    }
    let shape: Vec<usize> = axes.iter().map(|&a| x.shape[a]).collect();
    let mut out = Vec::with_capacity(x.data.len());
    let mut idx = vec![0usize; r];
    for _ in 0..x.data.len() {
        out.push(x.data[idx.iter().zip(axes).map(|(&i, &a)| i * strides[a]).sum::<usize>()]);
        for d in (0..r).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Arr::new(&shape, out)
}

pub fn transpose_last2(x: &Arr) -> Arr {
    let r = x.shape.len();
    let mut axes: Vec<usize> = (0..r).collect();
    axes.swap(r - 2, r - 1);
    permute(x, &axes)
}

pub fn softmax(x: &Arr) -> Arr {
    let d = x.last();
    let mut out = Vec::with_capacity(x.data.len());
    for row in x.data.chunks(d) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / z));
    }
    Arr::new(&x.shape, out)
}

pub fn layer_norm(x: &Arr, g: &Arr, b: &Arr) -> Arr {
    let d = x.last();
    let mut out = Vec::with_capacity(x.data.len());
    for row in x.data.chunks(d) {
        let mu = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + 1e-5).sqrt();
        out.extend(row.iter().enumerate().map(|(i, v)| (v - mu) * rs * g.data[i] + b.data[i]));
    }
    Arr::new(&x.shape, out)
}

pub fn silu(x: &Arr) -> Arr {
    x.map(|v| v / (1.0 + (-v).exp()))
}

pub fn select_axis0(x: &Arr, idx: &[usize]) -> Arr {
    let inner: usize = x.shape[1..].iter().product();
    let mut shape = x.shape.clone();
    shape[0] = idx.len();
    Arr::new(&shape, idx.iter().flat_map(|&i| x.data[i * inner..(i + 1) * inner].to_vec()).collect())
}

pub fn concat(parts: &[&Arr], axis: usize) -> Arr {
    let base = &parts[0].shape;
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let mut out = Vec::new();
    for o in 0..outer {
        for p in parts {
            let w = p.shape[axis] * inner;
            out.extend_from_slice(&p.data[o * w..(o + 1) * w]);
        }
    }
    let mut shape = base.clone();
    shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
    Arr::new(&shape, out)
}

pub fn sum(x: &Arr) -> Arr {
    Arr::new(&[], vec![x.data.iter().sum()])
}

pub fn mean(x: &Arr) -> Arr {
    Arr::new(&[], vec![x.data.iter().sum::<f64>() / x.data.len() as f64])
}

pub fn mse(a: &Arr, b: &Arr) -> Arr {
    let d = sub(a, b);
    mean(&mul(&d, &d))
}

pub fn attention(q: &Arr, k: &Arr, v: &Arr) -> Arr {
    let d = q.last() as f64;
    matmul(&softmax(&scale(&matmul(q, &transpose_last2(k)), 1.0 / d.sqrt())), v)
}

pub type TapeFn = for<'t> fn(&'t Tape, &[Var<'t>]) -> longvid_core::Result<Var<'t>>;
pub type RefFn = fn(&[Arr]) -> Arr;

/// One op under test: input shapes, its tape form and its `f64` form.
pub struct Case {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub tape: TapeFn,
    pub reference: RefFn,
    /// Inputs are drawn as `offset + N(0, 1)`; used to keep `mse`-style
    /// losses away from zero.
    pub offset: f32,
}

#[derive(Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub rel_error: f64,
}

/// `‖analytic − numeric‖ / ‖numeric‖` over all inputs, with the scalar
/// loss `Σ out ⊙ w` for a fixed random `w`.
pub fn check(case: &Case, seed: u64) -> CheckResult {
    let mut rng = Rng::new(seed);
    let inputs: Vec<Tensor> = case
        .shapes
        .iter()
        .map(|s| rng.randn(s).expect("shape").map(|v| v + case.offset))
        .collect();
    let arrs: Vec<Arr> = inputs.iter().map(Arr::from_tensor).collect();
    let out_shape = (case.reference)(&arrs).shape;
    let n: usize = out_shape.iter().product();
    let w = Tensor::new(&out_shape, (0..n).map(|_| rng.normal()).collect()).expect("shape");
    let wa = Arr::from_tensor(&w);

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = (case.tape)(&tape, &vars).expect("tape forward");
    assert_eq!(out.shape(), out_shape, "{}: tape/reference shape", case.name);
    let loss = out.mul(tape.constant(w)).expect("weights").sum();
    let grads = tape.backward(loss).expect("backward");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| grads.get_or_zeros(*v).data().iter().map(|&g| g as f64).collect())
        .collect();

    let objective = |xs: &[Arr]| -> f64 {
        let y = (case.reference)(xs);
        y.data.iter().zip(&wa.data).map(|(a, b)| a * b).sum()
    };
    let h = 1e-6;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, a) in analytic.iter().enumerate() {
        for j in 0..arrs[i].data.len() {
            let mut plus = arrs.clone();
            plus[i].data[j] += h;
            let mut minus = arrs.clone();
            minus[i].data[j] -= h;
            let g = (objective(&plus) - objective(&minus)) / (2.0 * h);
            num += (a[j] - g).powi(2);
            den += g * g;
        }
    }
    CheckResult { name: case.name, rel_error: num.sqrt() / den.sqrt().max(1e-12) }
}

/// Every differentiable op the tape offers.
pub fn all_cases() -> Vec<Case> {
    fn c(name: &'static str, shapes: &[&[usize]], tape: TapeFn, reference: RefFn) -> Case {
        Case { name, shapes: shapes.iter().map(|s| s.to_vec()).collect(), tape, reference, offset: 0.0 }
    }
    vec![
        c("add", &[&[3, 4], &[3, 4]], |_, v| v[0].add(v[1]), |a| add(&a[0], &a[1])),
        c("sub", &[&[3, 4], &[3, 4]], |_, v| v[0].sub(v[1]), |a| sub(&a[0], &a[1])),
        c("mul", &[&[3, 4], &[3, 4]], |_, v| v[0].mul(v[1]), |a| mul(&a[0], &a[1])),
        c("scale", &[&[5]], |_, v| Ok(v[0].scale(-1.75)), |a| scale(&a[0], -1.75)),
        c("add_bias", &[&[2, 3, 4], &[4]], |_, v| v[0].add_bias(v[1]), |a| add_bias(&a[0], &a[1])),
        c("matmul", &[&[3, 4], &[4, 5]], |_, v| v[0].matmul(v[1]), |a| matmul(&a[0], &a[1])),
        c("matmul_batched", &[&[2, 3, 4], &[2, 4, 2]], |_, v| v[0].matmul(v[1]), |a| matmul(&a[0], &a[1])),
        c("permute", &[&[2, 3, 4]], |_, v| v[0].permute(&[2, 0, 1]), |a| permute(&a[0], &[2, 0, 1])),
        c("transpose_last2", &[&[2, 3, 4]], |_, v| v[0].transpose_last2(), |a| transpose_last2(&a[0])),
        c("reshape", &[&[2, 6]], |_, v| v[0].reshape(&[3, 4]), |a| Arr::new(&[3, 4], a[0].data.clone())),
        c("softmax_lastdim", &[&[3, 5]], |_, v| v[0].softmax_lastdim(), |a| softmax(&a[0])),
        c("layer_norm", &[&[3, 6], &[6], &[6]], |_, v| v[0].layer_norm(v[1], v[2]),
            |a| layer_norm(&a[0], &a[1], &a[2])),
        c("silu", &[&[7]], |_, v| Ok(v[0].silu()), |a| silu(&a[0])),
        c("select_axis0", &[&[4, 3]], |_, v| v[0].select_axis0(&[2, 0, 2, 3]),
            |a| select_axis0(&a[0], &[2, 0, 2, 3])),
        c("concat_axis1", &[&[2, 3, 2], &[2, 1, 2]], |_, v| Var::concat(&[v[0], v[1]], 1),
            |a| concat(&[&a[0], &a[1]], 1)),
        c("sum", &[&[3, 4]], |_, v| Ok(v[0].sum()), |a| sum(&a[0])),
        c("mean", &[&[3, 4]], |_, v| Ok(v[0].mean()), |a| mean(&a[0])),
        Case { offset: 0.5, ..c("mse", &[&[3, 4], &[3, 4]], |_, v| v[0].mse(v[1]), |a| mse(&a[0], &a[1])) },
        c("attention", &[&[2, 3, 4], &[2, 5, 4], &[2, 5, 3]], |_, v| Var::attention(v[0], v[1], v[2]),
            |a| attention(&a[0], &a[1], &a[2])),
    ]
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
