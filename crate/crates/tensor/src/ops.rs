//! Differentiable elementwise, reduction, shape, and matrix ops.

use crate::element::Element;
use crate::error::{dim_err, Result, TensorError};
use crate::tensor::{numel_of, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// Applies `f` elementwise; `df(x)` is the derivative at the input value.
pub(crate) fn unary<T, F, D>(a: &Tensor<T>, op: &'static str, f: F, df: D) -> Tensor<T>
where
    T: Element,
    F: Fn(T) -> T,
    D: Fn(T) -> T + Send + Sync + 'static,
{
    let data = a.values().iter().map(|&x| f(x)).collect();
    let input = a.clone();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        op,
        vec![a.clone()],
        Box::new(move |g, _| {
            let gx = input.values().iter().zip(g).map(|(&x, &g)| g * df(x)).collect();
            vec![Some(gx)]
        }),
    )
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// Visits every multi-index of `shape` in row-major order, passing the
/// running offset computed with `map_strides`.
/// Pairwise summation: error grows with the log of the length rather than the length.
pub(crate) fn pairwise_sum<T: Element>(xs: &[T]) -> T {
    if xs.len() <= 64 {
        return xs.iter().fold(T::zero(), |a, &v| a + v);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn for_each_mapped(shape: &[usize], map_strides: &[usize], mut visit: impl FnMut(usize, usize)) {
    let total = numel_of(shape);
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut mapped = 0usize;
    for flat in 0..total {
        visit(flat, mapped);
        for d in (0..rank).rev() {
            idx[d] += 1;
            mapped += map_strides[d];
            if idx[d] < shape[d] {
                break;
            }
            mapped -= map_strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

impl<T: Element> Tensor<T> {
    /// Elementwise `a op b`; `b` may also be a one-element tensor broadcast over `a`.
    pub fn binary(&self, kind: BinaryKind, other: &Tensor<T>) -> Result<Tensor<T>> {
        let broadcast = other.numel() == 1 && self.shape() != other.shape();
        if !broadcast && self.shape() != other.shape() {
            return Err(dim_err!(
                "{:?}: shape {:?} vs {:?}",
                kind,
                self.shape(),
                other.shape()
            ));
        }
        let (av, bv) = (self.values(), other.values());
        let b_at = |i: usize| if broadcast { bv[0] } else { bv[i] };
        let data: Vec<T> = (0..av.len())
            .map(|i| match kind {
                BinaryKind::Add => av[i] + b_at(i),
                BinaryKind::Sub => av[i] - b_at(i),
                BinaryKind::Mul => av[i] * b_at(i),
            })
            .collect();

        let (a, b) = (self.clone(), other.clone());
        let op = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            op,
            vec![self.clone(), other.clone()],
            Box::new(move |g, mask| {
                let ga = mask[0].then(|| match kind {
                    BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                    BinaryKind::Mul => {
                        let bv = b.values();
                        g.iter()
                            .enumerate()
                            .map(|(i, &g)| g * if broadcast { bv[0] } else { bv[i] })
                            .collect()
                    }
                });
                let gb = mask[1].then(|| {
                    let per: Vec<T> = match kind {
                        BinaryKind::Add => g.to_vec(),
                        BinaryKind::Sub => g.iter().map(|&g| -g).collect(),
                        BinaryKind::Mul => g.iter().zip(a.values()).map(|(&g, &x)| g * x).collect(),
                    };
                    if broadcast {
                        vec![per.into_iter().fold(T::zero(), |s, v| s + v)]
                    } else {
                        per
                    }
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(BinaryKind::Add, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(BinaryKind::Sub, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(BinaryKind::Mul, other)
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        unary(self, "scale", |x| x * c, move |_| c)
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        unary(self, "add_scalar", |x| x + c, |_| T::one())
    }

    pub fn neg(&self) -> Tensor<T> {
        unary(self, "neg", |x| -x, |_| -T::one())
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, "exp", |x| x.exp(), |x| x.exp())
    }

    /// Natural log; every value must be strictly positive.
    pub fn ln(&self) -> Result<Tensor<T>> {
        if let Some(bad) = self.values().iter().find(|&&v| !(v > T::zero())) {
            return Err(TensorError::Domain(format!("log of non-positive value {bad:?}")));
        }
        Ok(unary(self, "log", |x| x.ln(), |x| x.recip()))
    }

    /// Absolute value with subgradient 0 at the kink.
    pub fn abs(&self) -> Tensor<T> {
        unary(self, "abs", |x| x.abs(), |x| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        unary(
            self,
            "clamp",
            move |x| x.max(lo).min(hi),
            move |x| if x >= lo && x <= hi { T::one() } else { T::zero() },
        )
    }

    /// `ln(1 + e^x)` evaluated without overflow for large `|x|`.
    pub fn softplus(&self) -> Tensor<T> {
        unary(self, "softplus", softplus_value, sigmoid_value)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(self, "sigmoid", sigmoid_value, |x| {
            let s = sigmoid_value(x);
            s * (T::one() - s)
        })
    }

    pub fn tanh(&self) -> Tensor<T> {
        unary(self, "tanh", |x| x.tanh(), |x| {
            let t = x.tanh();
            T::one() - t * t
        })
    }

    pub fn relu(&self) -> Tensor<T> {
        unary(self, "relu", |x| x.max(T::zero()), |x| {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn leaky_relu(&self, slope: T) -> Tensor<T> {
        unary(
            self,
            "leaky_relu",
            move |x| if x > T::zero() { x } else { x * slope },
            move |x| if x > T::zero() { T::one() } else { slope },
        )
    }

    /// Sum or mean over `axes`, which are removed from the shape.
    pub fn reduce(&self, kind: ReduceKind, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        for &ax in axes {
            if ax >= rank || reduced[ax] {
                return Err(dim_err!("invalid reduction axis {ax} for shape {:?}", self.shape()));
            }
            reduced[ax] = true;
        }
        let out_shape: Vec<usize> = (0..rank).filter(|&d| !reduced[d]).map(|d| self.shape()[d]).collect();
        let out_strides_compact = strides_of(&out_shape);
        let mut map_strides = vec![0usize; rank];
        let mut k = 0;
        for d in 0..rank {
            if !reduced[d] {
                map_strides[d] = out_strides_compact[k];
                k += 1;
            }
        }
        let count = axes.iter().map(|&a| self.shape()[a]).product::<usize>();
        let scale = match kind {
            ReduceKind::Sum => T::one(),
            ReduceKind::Mean => T::from_f64(1.0 / count as f64),
        };

        let mut out = vec![T::zero(); numel_of(&out_shape)];
        let src = self.values();
        if out.len() == 1 {
            out[0] = pairwise_sum(&src);
        } else {
            for_each_mapped(self.shape(), &map_strides, |i, o| out[o] = out[o] + src[i]);
        }
        if kind == ReduceKind::Mean {
            for v in &mut out {
                *v = *v * scale;
            }
        }

        let in_shape = self.shape().to_vec();
        Ok(Tensor::from_op(
            out_shape,
            out,
            if kind == ReduceKind::Sum { "sum" } else { "mean" },
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); numel_of(&in_shape)];
                for_each_mapped(&in_shape, &map_strides, |i, o| gx[i] = g[o] * scale);
                vec![Some(gx)]
            }),
        ))
    }

    pub fn sum(&self, axes: &[usize]) -> Result<Tensor<T>> {
        self.reduce(ReduceKind::Sum, axes)
    }

    pub fn mean(&self, axes: &[usize]) -> Result<Tensor<T>> {
        self.reduce(ReduceKind::Mean, axes)
    }

    /// Sum over every axis, giving a rank-0 tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.reduce(ReduceKind::Sum, &axes).expect("all axes are valid")
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.reduce(ReduceKind::Mean, &axes).expect("all axes are valid")
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<T>> {
        if numel_of(new_shape) != self.numel() || new_shape.iter().any(|&d| d == 0) {
            return Err(dim_err!("cannot reshape {:?} into {:?}", self.shape(), new_shape));
        }
        Ok(Tensor::from_op(
            new_shape.to_vec(),
            self.to_vec(),
            "reshape",
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(dim_err!("invalid permutation {perm:?} for rank {rank}"));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let data = permute_values(self.values(), self.shape(), perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out_shape_c = out_shape.clone();
        Ok(Tensor::from_op(
            out_shape,
            data,
            "permute",
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(permute_values(g, &out_shape_c, &inverse))]),
        ))
    }

    /// Swaps two axes.
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor<T>> {
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        if a >= perm.len() || b >= perm.len() {
            return Err(dim_err!("transpose axes ({a},{b}) out of range for {:?}", self.shape()));
        }
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Batched matrix product `[N,M,S] x [N,S,K] -> [N,M,K]`.
    pub fn matmul_batched(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(dim_err!("matmul_batched: {:?} x {:?}", sa, sb));
        }
        let (n, m, s, k) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); n * m * k];
        let (av, bv) = (self.values(), other.values());
        for b in 0..n {
            T::gemm(
                m,
                s,
                k,
                &av[b * m * s..],
                false,
                &bv[b * s * k..],
                false,
                T::zero(),
                &mut out[b * m * k..(b + 1) * m * k],
            );
        }
        let (a, bt) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![n, m, k],
            out,
            "matmul_batched",
            vec![self.clone(), other.clone()],
            Box::new(move |g, mask| {
                let ga = mask[0].then(|| {
                    let mut ga = vec![T::zero(); n * m * s];
                    for i in 0..n {
                        T::gemm(
                            m,
                            k,
                            s,
                            &g[i * m * k..],
                            false,
                            &bt.values()[i * s * k..],
                            true,
                            T::zero(),
                            &mut ga[i * m * s..(i + 1) * m * s],
                        );
                    }
                    ga
                });
                let gb = mask[1].then(|| {
                    let mut gb = vec![T::zero(); n * s * k];
                    for i in 0..n {
                        T::gemm(
                            s,
                            m,
                            k,
                            &a.values()[i * m * s..],
                            true,
                            &g[i * m * k..],
                            false,
                            T::zero(),
                            &mut gb[i * s * k..(i + 1) * s * k],
                        );
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Inserts a new axis at `axis` holding `times` copies of the tensor.
    pub fn repeat_new_axis(&self, axis: usize, times: usize) -> Result<Tensor<T>> {
        if axis > self.rank() || times == 0 {
            return Err(dim_err!("repeat: axis {axis}, times {times} for {:?}", self.shape()));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis..].iter().product();
        let mut out_shape = self.shape().to_vec();
        out_shape.insert(axis, times);
        let src = self.values();
        let mut data = Vec::with_capacity(outer * times * inner);
        for o in 0..outer {
            let block = &src[o * inner..(o + 1) * inner];
            for _ in 0..times {
                data.extend_from_slice(block);
            }
        }
        Ok(Tensor::from_op(
            out_shape,
            data,
            "repeat",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for t in 0..times {
                        let src = &g[(o * times + t) * inner..(o * times + t + 1) * inner];
                        for (acc, &v) in gx[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *acc = *acc + v;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// The slice `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() || len == 0 || start + len > self.shape()[axis] {
            return Err(dim_err!("narrow({axis}, {start}, {len}) on {:?}", self.shape()));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let extent = self.shape()[axis];
        let src = self.values();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = len;
        let total = self.numel();
        Ok(Tensor::from_op(
            out_shape,
            data,
            "narrow",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); total];
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Non-differentiable copy into another element type.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.values().iter().map(|v| U::from_f64(v.as_f64())).collect();
        Tensor::from_vec(self.shape(), data).expect("shape already validated")
    }
}

fn softplus_value<T: Element>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid_value<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn permute_values<T: Element>(src: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let map_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = vec![T::zero(); src.len()];
    for_each_mapped(&out_shape, &map_strides, |o, i| out[o] = src[i]);
    out
}
