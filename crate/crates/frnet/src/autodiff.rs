//! Tape-based reverse-mode automatic differentiation.
//!
//! Forward operations append nodes to a [`Tape`]; each node stores the
//! forward value plus a closure that maps the upstream gradient to gradient
//! contributions for its parents. `backward` walks the tape in reverse
//! append order, which is a valid reverse topological order because inputs
//! always precede their consumers.

use crate::error::{Error, Result};
use crate::fft::{self, Direction, FftPlan};
use crate::tensor::{ComplexTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<(usize, Tensor)>>;

struct Node {
    value: Tensor,
    backward: Option<BackwardFn>,
}

/// Simple elementwise ops exposed through [`Tape::record`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Append an input node; gradients flow into it but not through it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, None)
    }

    fn push(&mut self, value: Tensor, backward: Option<BackwardFn>) -> NodeId {
        self.nodes.push(Node { value, backward });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "node id {} out of range (tape has {})",
                id.0,
                self.nodes.len()
            )));
        }
        Ok(())
    }

    /// Record one of the basic elementwise ops.
    pub fn record(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        match (op, inputs) {
            (Op::Add, &[a, b]) => self.add(a, b),
            (Op::Sub, &[a, b]) => self.sub(a, b),
            (Op::Mul, &[a, b]) => self.mul(a, b),
            _ => Err(Error::InvalidArgument(format!(
                "op {op:?} takes 2 inputs, got {}",
                inputs.len()
            ))),
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(
            value,
            Some(Box::new(move |g| {
                vec![(a.0, g.clone()), (b.0, g.clone())]
            })),
        ))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(
            value,
            Some(Box::new(move |g| {
                vec![(a.0, g.clone()), (b.0, g.scale(-1.0))]
            })),
        ))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let value = av.mul(&bv)?;
        Ok(self.push(
            value,
            Some(Box::new(move |g| {
                vec![
                    (a.0, g.mul(&bv).expect("shape checked at record")),
                    (b.0, g.mul(&av).expect("shape checked at record")),
                ]
            })),
        ))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check(a)?;
        let value = self.value(a).scale(c);
        Ok(self.push(
            value,
            Some(Box::new(move |g| vec![(a.0, g.scale(c))])),
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let shape = self.value(a).shape().to_vec();
        let value = Tensor::scalar(self.value(a).sum());
        Ok(self.push(
            value,
            Some(Box::new(move |g| {
                let gs = g.data()[0];
                vec![(a.0, Tensor::full(&shape, gs).expect("valid shape"))]
            })),
        ))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let n = self.value(a).len();
        let shape = self.value(a).shape().to_vec();
        let value = Tensor::scalar(self.value(a).sum() / n as f64);
        Ok(self.push(
            value,
            Some(Box::new(move |g| {
                let gs = g.data()[0] / n as f64;
                vec![(a.0, Tensor::full(&shape, gs).expect("valid shape"))]
            })),
        ))
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let x = self.value(a).clone();
        let value = x.map(|v| v * sigmoid(v));
        Ok(self.push(
            value,
            Some(Box::new(move |g| {
                let mut dx = x.clone();
                for (d, &gv) in dx.data_mut().iter_mut().zip(g.data()) {
                    let s = sigmoid(*d);
                    *d = gv * s * (1.0 + *d * (1.0 - s));
                }
                vec![(a.0, dx)]
            })),
        ))
    }

    /// Cross-correlation with zero padding: x [cin,h,w], w [cout,cin,kh,kw],
    /// optional bias [cout].
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = b {
            self.check(b)?;
        }
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let bv = match b {
            Some(b) => self.value(b).clone(),
            None => {
                let cout = *self.value(w).shape().first().ok_or_else(|| {
                    Error::ShapeMismatch("conv weight must be rank 4".into())
                })?;
                Tensor::zeros(&[cout])?
            }
        };
        let [cin, h, wdt] = xv.dims3()?;
        let (cout, wcin, kh, kw) = match wv.shape()[..] {
            [a, b2, c, d] => (a, b2, c, d),
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "conv weight must be rank 4, got {:?}",
                    wv.shape()
                )))
            }
        };
        if wcin != cin {
            return Err(Error::ShapeMismatch(format!(
                "conv input channels {cin} vs weight {wcin}"
            )));
        }
        if bv.shape() != [cout] {
            return Err(Error::ShapeMismatch(format!(
                "conv bias shape {:?} vs cout {cout}",
                bv.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be >= 1".into()));
        }
        let ho = (h + 2 * pad).checked_sub(kh).map(|v| v / stride + 1).ok_or_else(|| {
            Error::ShapeMismatch(format!("kernel {kh} too large for input {h} with pad {pad}"))
        })?;
        let wo = (wdt + 2 * pad).checked_sub(kw).map(|v| v / stride + 1).ok_or_else(|| {
            Error::ShapeMismatch(format!("kernel {kw} too large for input {wdt} with pad {pad}"))
        })?;

        let mut out = Tensor::zeros(&[cout, ho, wo])?;
        {
            let xd = xv.data();
            let wd = wv.data();
            let od = out.data_mut();
            for co in 0..cout {
                for oi in 0..ho {
                    for oj in 0..wo {
                        let mut s = bv.data()[co];
                        for ci in 0..cin {
                            for u in 0..kh {
                                let ii = oi * stride + u;
                                if ii < pad || ii - pad >= h {
                                    continue;
                                }
                                let xi = ii - pad;
                                for v in 0..kw {
                                    let jj = oj * stride + v;
                                    if jj < pad || jj - pad >= wdt {
                                        continue;
                                    }
                                    let xj = jj - pad;
                                    s += xd[(ci * h + xi) * wdt + xj]
                                        * wd[((co * cin + ci) * kh + u) * kw + v];
                                }
                            }
                        }
                        od[(co * ho + oi) * wo + oj] = s;
                    }
                }
            }
        }

        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(&[cin, h, wdt]).expect("shape");
                let mut dw = Tensor::zeros(wv.shape()).expect("shape");
                let mut db = Tensor::zeros(&[cout]).expect("shape");
                let gd = g.data();
                let xd = xv.data();
                let wd = wv.data();
                for co in 0..cout {
                    for oi in 0..ho {
                        for oj in 0..wo {
                            let gv = gd[(co * ho + oi) * wo + oj];
                            if gv == 0.0 {
                                continue;
                            }
                            db.data_mut()[co] += gv;
                            for ci in 0..cin {
                                for u in 0..kh {
                                    let ii = oi * stride + u;
                                    if ii < pad || ii - pad >= h {
                                        continue;
                                    }
                                    let xi = ii - pad;
                                    for v in 0..kw {
                                        let jj = oj * stride + v;
                                        if jj < pad || jj - pad >= wdt {
                                            continue;
                                        }
                                        let xj = jj - pad;
                                        let xoff = (ci * h + xi) * wdt + xj;
                                        let woff = ((co * cin + ci) * kh + u) * kw + v;
                                        dw.data_mut()[woff] += gv * xd[xoff];
                                        dx.data_mut()[xoff] += gv * wd[woff];
                                    }
                                }
                            }
                        }
                    }
                }
                let mut out = vec![(x.0, dx), (w.0, dw)];
                if let Some(b) = b {
                    out.push((b.0, db));
                }
                out
            })),
        ))
    }

    /// One spatial filter per channel: x [c,h,w], w [c,kh,kw], optional
    /// bias [c].
    pub fn depthwise_conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = b {
            self.check(b)?;
        }
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let bv = match b {
            Some(b) => self.value(b).clone(),
            None => {
                let c = *self.value(w).shape().first().ok_or_else(|| {
                    Error::ShapeMismatch("depthwise weight must be rank 3".into())
                })?;
                Tensor::zeros(&[c])?
            }
        };
        let [c, h, wdt] = xv.dims3()?;
        let [wc, kh, kw] = wv.dims3()?;
        if wc != c {
            return Err(Error::ShapeMismatch(format!(
                "depthwise channels {c} vs weight {wc}"
            )));
        }
        if bv.shape() != [c] {
            return Err(Error::ShapeMismatch(format!(
                "depthwise bias shape {:?} vs channels {c}",
                bv.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be >= 1".into()));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wdt + 2 * pad - kw) / stride + 1;

        let mut out = Tensor::zeros(&[c, ho, wo])?;
        {
            let xd = xv.data();
            let wd = wv.data();
            let od = out.data_mut();
            for ch in 0..c {
                for oi in 0..ho {
                    for oj in 0..wo {
                        let mut s = bv.data()[ch];
                        for u in 0..kh {
                            let ii = oi * stride + u;
                            if ii < pad || ii - pad >= h {
                                continue;
                            }
                            let xi = ii - pad;
                            for v in 0..kw {
                                let jj = oj * stride + v;
                                if jj < pad || jj - pad >= wdt {
                                    continue;
                                }
                                let xj = jj - pad;
                                s += xd[(ch * h + xi) * wdt + xj] * wd[(ch * kh + u) * kw + v];
                            }
                        }
                        od[(ch * ho + oi) * wo + oj] = s;
                    }
                }
            }
        }

        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(&[c, h, wdt]).expect("shape");
                let mut dw = Tensor::zeros(wv.shape()).expect("shape");
                let mut db = Tensor::zeros(&[c]).expect("shape");
                let gd = g.data();
                let xd = xv.data();
                let wd = wv.data();
                for ch in 0..c {
                    for oi in 0..ho {
                        for oj in 0..wo {
                            let gv = gd[(ch * ho + oi) * wo + oj];
                            if gv == 0.0 {
                                continue;
                            }
                            db.data_mut()[ch] += gv;
                            for u in 0..kh {
                                let ii = oi * stride + u;
                                if ii < pad || ii - pad >= h {
                                    continue;
                                }
                                let xi = ii - pad;
                                for v in 0..kw {
                                    let jj = oj * stride + v;
                                    if jj < pad || jj - pad >= wdt {
                                        continue;
                                    }
                                    let xj = jj - pad;
                                    let xoff = (ch * h + xi) * wdt + xj;
                                    let woff = (ch * kh + u) * kw + v;
                                    dw.data_mut()[woff] += gv * xd[xoff];
                                    dx.data_mut()[xoff] += gv * wd[woff];
                                }
                            }
                        }
                    }
                }
                let mut out = vec![(x.0, dx), (w.0, dw)];
                if let Some(b) = b {
                    out.push((b.0, db));
                }
                out
            })),
        ))
    }

    /// Fully connected head: x [n], w [n,m], b [m].
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let bv = self.value(b).clone();
        if xv.rank() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "linear input must be rank 1, got {:?}",
                xv.shape()
            )));
        }
        let [n, m] = wv.dims2()?;
        if xv.len() != n || bv.shape() != [m] {
            return Err(Error::ShapeMismatch(format!(
                "linear shapes x={:?} w={:?} b={:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let mut out = bv.clone();
        for i in 0..n {
            let xi = xv.data()[i];
            for j in 0..m {
                out.data_mut()[j] += xi * wv.data()[i * m + j];
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(&[n]).expect("shape");
                let mut dw = Tensor::zeros(&[n, m]).expect("shape");
                for i in 0..n {
                    let mut s = 0.0;
                    for j in 0..m {
                        s += g.data()[j] * wv.data()[i * m + j];
                        dw.data_mut()[i * m + j] = xv.data()[i] * g.data()[j];
                    }
                    dx.data_mut()[i] = s;
                }
                vec![(x.0, dx), (w.0, dw), (b.0, g.clone())]
            })),
        ))
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let [c1, _, _] = av.dims3()?;
        let [c2, _, _] = bv.dims3()?;
        let value = av.concat_channels(&bv)?;
        Ok(self.push(
            value,
            Some(Box::new(move |g| {
                let ga = g.slice_channels(0, c1).expect("slice");
                let gb = g.slice_channels(c1, c1 + c2).expect("slice");
                vec![(a.0, ga), (b.0, gb)]
            })),
        ))
    }

    /// Per-channel normalization over the spatial dims of [c,h,w], followed
    /// by a per-channel affine. Batch-free stand-in for batch norm.
    pub fn instance_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let xv = self.value(x).clone();
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        let [c, h, w] = xv.dims3()?;
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::ShapeMismatch(format!(
                "norm affine shapes {:?}/{:?} vs channels {c}",
                gv.shape(),
                bv.shape()
            )));
        }
        let plane = h * w;
        let mut xhat = Tensor::zeros(&[c, h, w])?;
        let mut inv_std = vec![0.0; c];
        let mut out = Tensor::zeros(&[c, h, w])?;
        for ch in 0..c {
            let xs = &xv.data()[ch * plane..(ch + 1) * plane];
            let mean = xs.iter().sum::<f64>() / plane as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[ch] = istd;
            for i in 0..plane {
                let xh = (xs[i] - mean) * istd;
                xhat.data_mut()[ch * plane + i] = xh;
                out.data_mut()[ch * plane + i] = gv.data()[ch] * xh + bv.data()[ch];
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(&[c, h, w]).expect("shape");
                let mut dgamma = Tensor::zeros(&[c]).expect("shape");
                let mut dbeta = Tensor::zeros(&[c]).expect("shape");
                for ch in 0..c {
                    let gs = &g.data()[ch * plane..(ch + 1) * plane];
                    let xh = &xhat.data()[ch * plane..(ch + 1) * plane];
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for i in 0..plane {
                        sum_g += gs[i];
                        sum_gx += gs[i] * xh[i];
                    }
                    dbeta.data_mut()[ch] = sum_g;
                    dgamma.data_mut()[ch] = sum_gx;
                    let gamma_ch = gv.data()[ch];
                    let mean_g = sum_g / plane as f64;
                    let mean_gx = sum_gx / plane as f64;
                    for i in 0..plane {
                        dx.data_mut()[ch * plane + i] =
                            gamma_ch * inv_std[ch] * (gs[i] - mean_g - xh[i] * mean_gx);
                    }
                }
                vec![(x.0, dx), (gamma.0, dgamma), (beta.0, dbeta)]
            })),
        ))
    }

    /// Layer normalization across the channel axis at every spatial
    /// position of [c,h,w], with per-channel affine.
    pub fn layer_norm_channels(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let xv = self.value(x).clone();
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        let [c, h, w] = xv.dims3()?;
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::ShapeMismatch(format!(
                "norm affine shapes {:?}/{:?} vs channels {c}",
                gv.shape(),
                bv.shape()
            )));
        }
        let plane = h * w;
        let mut xhat = Tensor::zeros(&[c, h, w])?;
        let mut inv_std = vec![0.0; plane];
        let mut out = Tensor::zeros(&[c, h, w])?;
        for p in 0..plane {
            let mut mean = 0.0;
            for ch in 0..c {
                mean += xv.data()[ch * plane + p];
            }
            mean /= c as f64;
            let mut var = 0.0;
            for ch in 0..c {
                let d = xv.data()[ch * plane + p] - mean;
                var += d * d;
            }
            var /= c as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[p] = istd;
            for ch in 0..c {
                let xh = (xv.data()[ch * plane + p] - mean) * istd;
                xhat.data_mut()[ch * plane + p] = xh;
                out.data_mut()[ch * plane + p] = gv.data()[ch] * xh + bv.data()[ch];
            }
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(&[c, h, w]).expect("shape");
                let mut dgamma = Tensor::zeros(&[c]).expect("shape");
                let mut dbeta = Tensor::zeros(&[c]).expect("shape");
                for p in 0..plane {
                    let mut sum_gg = 0.0;
                    let mut sum_ggx = 0.0;
                    for ch in 0..c {
                        let gi = g.data()[ch * plane + p];
                        let xh = xhat.data()[ch * plane + p];
                        dbeta.data_mut()[ch] += gi;
                        dgamma.data_mut()[ch] += gi * xh;
                        let gg = gi * gv.data()[ch];
                        sum_gg += gg;
                        sum_ggx += gg * xh;
                    }
                    let mean_gg = sum_gg / c as f64;
                    let mean_ggx = sum_ggx / c as f64;
                    for ch in 0..c {
                        let gg = g.data()[ch * plane + p] * gv.data()[ch];
                        let xh = xhat.data()[ch * plane + p];
                        dx.data_mut()[ch * plane + p] =
                            inv_std[p] * (gg - mean_gg - xh * mean_ggx);
                    }
                }
                vec![(x.0, dx), (gamma.0, dgamma), (beta.0, dbeta)]
            })),
        ))
    }

    /// [c,h,w] -> [c] mean over the spatial dims.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let xv = self.value(x).clone();
        let [c, h, w] = xv.dims3()?;
        let plane = h * w;
        let mut out = Tensor::zeros(&[c])?;
        for ch in 0..c {
            out.data_mut()[ch] =
                xv.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64;
        }
        Ok(self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Tensor::zeros(&[c, h, w]).expect("shape");
                for ch in 0..c {
                    let gv = g.data()[ch] / plane as f64;
                    dx.data_mut()[ch * plane..(ch + 1) * plane]
                        .iter_mut()
                        .for_each(|v| *v = gv);
                }
                vec![(x.0, dx)]
            })),
        ))
    }

    /// Spectral filtering y = real(ifft2d(fft2d(x) .* M)) per channel, with
    /// the complex mask carried as two real tensors.
    ///
    /// Backward, under forward-unscaled / inverse-1/(h*w) normalization and
    /// with G = fft2d(upstream):
    ///   dL/dM = G .* conj(fft2d(x)) / (h*w), split into re/im parts;
    ///   dL/dx = real(ifft2d(G .* conj(M))).
    pub fn apply_mask(&mut self, x: NodeId, mask_re: NodeId, mask_im: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(mask_re)?;
        self.check(mask_im)?;
        let xv = self.value(x).clone();
        let mre = self.value(mask_re).clone();
        let mim = self.value(mask_im).clone();
        let [c, h, w] = xv.dims3()?;
        if mre.shape() != xv.shape() || mim.shape() != xv.shape() {
            return Err(Error::ShapeMismatch(format!(
                "mask shapes {:?}/{:?} vs input {:?}",
                mre.shape(),
                mim.shape(),
                xv.shape()
            )));
        }
        let mask = ComplexTensor::from_parts(&[c, h, w], mre.data().to_vec(), mim.data().to_vec())?;
        let value = fft::apply_mask(&xv, &mask)?;
        // saved forward spectra of x, needed for dL/dM
        let x_spec = fft::fft2d_channels(&xv)?;

        Ok(self.push(
            value,
            Some(Box::new(move |g| {
                let plane = h * w;
                let scale = 1.0 / plane as f64;
                let fwd_row = FftPlan::new(w, Direction::Forward).expect("pow2");
                let fwd_col = FftPlan::new(h, Direction::Forward).expect("pow2");
                let inv_row = FftPlan::new(w, Direction::Inverse).expect("pow2");
                let inv_col = FftPlan::new(h, Direction::Inverse).expect("pow2");
                let fft2 = |re: &mut [f64], im: &mut [f64], rp: &FftPlan, cp: &FftPlan| {
                    for r in 0..h {
                        rp.process(&mut re[r * w..(r + 1) * w], &mut im[r * w..(r + 1) * w]);
                    }
                    let mut cre = vec![0.0; h];
                    let mut cim = vec![0.0; h];
                    for cidx in 0..w {
                        for r in 0..h {
                            cre[r] = re[r * w + cidx];
                            cim[r] = im[r * w + cidx];
                        }
                        cp.process(&mut cre, &mut cim);
                        for r in 0..h {
                            re[r * w + cidx] = cre[r];
                            im[r * w + cidx] = cim[r];
                        }
                    }
                };

                let mut dx = Tensor::zeros(&[c, h, w]).expect("shape");
                let mut dmre = Tensor::zeros(&[c, h, w]).expect("shape");
                let mut dmim = Tensor::zeros(&[c, h, w]).expect("shape");
                for ch in 0..c {
                    let base = ch * plane;
                    let mut gre = g.data()[base..base + plane].to_vec();
                    let mut gim = vec![0.0; plane];
                    fft2(&mut gre, &mut gim, &fwd_row, &fwd_col);

                    // dM = G .* conj(X) / (h*w)
                    for i in 0..plane {
                        let (xr, xi) = (x_spec.re[base + i], -x_spec.im[base + i]);
                        dmre.data_mut()[base + i] = (gre[i] * xr - gim[i] * xi) * scale;
                        dmim.data_mut()[base + i] = (gre[i] * xi + gim[i] * xr) * scale;
                    }

                    // dx = real(ifft2d(G .* conj(M)))
                    let mut pre = vec![0.0; plane];
                    let mut pim = vec![0.0; plane];
                    for i in 0..plane {
                        let (mr, mi) = (mre.data()[base + i], -mim.data()[base + i]);
                        pre[i] = gre[i] * mr - gim[i] * mi;
                        pim[i] = gre[i] * mi + gim[i] * mr;
                    }
                    fft2(&mut pre, &mut pim, &inv_row, &inv_col);
                    dx.data_mut()[base..base + plane].copy_from_slice(&pre);
                }
                vec![(x.0, dx), (mask_re.0, dmre), (mask_im.0, dmim)]
            })),
        ))
    }

    /// Smoothed L1 loss, mean over elements.
    pub fn smooth_l1(&mut self, pred: NodeId, target: NodeId, beta: f64) -> Result<NodeId> {
        self.check(pred)?;
        self.check(target)?;
        if beta <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "smooth_l1 beta must be positive, got {beta}"
            )));
        }
        let pv = self.value(pred).clone();
        let tv = self.value(target).clone();
        if pv.shape() != tv.shape() {
            return Err(Error::ShapeMismatch(format!(
                "smooth_l1 shapes {:?} vs {:?}",
                pv.shape(),
                tv.shape()
            )));
        }
        let n = pv.len();
        let mut total = 0.0;
        for i in 0..n {
            let d = pv.data()[i] - tv.data()[i];
            total += if d.abs() < beta {
                0.5 * d * d / beta
            } else {
                d.abs() - 0.5 * beta
            };
        }
        let value = Tensor::scalar(total / n as f64);
        Ok(self.push(
            value,
            Some(Box::new(move |g| {
                let gs = g.data()[0] / n as f64;
                let mut dp = Tensor::zeros(pv.shape()).expect("shape");
                for i in 0..n {
                    let d = pv.data()[i] - tv.data()[i];
                    let slope = if d.abs() < beta { d / beta } else { d.signum() };
                    dp.data_mut()[i] = gs * slope;
                }
                let dt = dp.scale(-1.0);
                vec![(pred.0, dp), (target.0, dt)]
            })),
        ))
    }

    /// Reverse pass from a scalar loss node. Returns one gradient slot per
    /// tape node (None where no gradient reached).
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Tensor>>> {
        self.check(loss)?;
        if !self.value(loss).is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some(back) = &self.nodes[i].backward {
                for (pid, contribution) in back(&g) {
                    match &mut grads[pid] {
                        Some(acc) => acc.add_assign(&contribution)?,
                        slot @ None => *slot = Some(contribution),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// A named trainable tensor with an accumulating gradient slot.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Flat registry of model parameters; ids are stable across the model's life.
#[derive(Default, Debug, Clone)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape()).expect("parameter shape is valid");
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }
}

/// Records which tape leaves were created from which parameters during a
/// forward pass, so backward results can be routed into `Parameter::grad`.
#[derive(Default, Debug)]
pub struct Binding {
    pairs: Vec<(ParamId, NodeId)>,
}

impl Binding {
    pub fn new() -> Binding {
        Binding::default()
    }

    /// Put a parameter's current value on the tape as a leaf.
    pub fn bind(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> NodeId {
        let node = tape.leaf(store.get(id).value.clone());
        self.pairs.push((id, node));
        node
    }

    /// Accumulate tape gradients into parameter grads (+=).
    pub fn accumulate(&self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        for &(pid, nid) in &self.pairs {
            if let Some(g) = &grads[nid.0] {
                store.get_mut(pid).grad.add_assign(g)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_basics() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
        let before = tape.len();
        let c = tape.record(Op::Add, &[a, b]).unwrap();
        assert_eq!(tape.len(), before + 1);
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);

        let bogus = NodeId(999);
        assert!(tape.record(Op::Add, &[a, bogus]).is_err());
        assert!(tape.record(Op::Mul, &[a]).is_err());
    }

    #[test]
    fn backward_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![1.0, -2.0, 3.0]).unwrap());
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[x.0].as_ref().unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_quadratic() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![1.0, -2.0, 3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[x.0].as_ref().unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn grad_accumulation_and_zero_grad() {
        let mut store = ParamStore::new();
        let p = store.add("w", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap(), true);

        let run = |store: &mut ParamStore| {
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let w = binding.bind(&mut tape, store, p);
            let loss = tape.sum(w).unwrap();
            let grads = tape.backward(loss).unwrap();
            binding.accumulate(store, &grads).unwrap();
        };

        run(&mut store);
        assert_eq!(store.get(p).grad.data(), &[1.0, 1.0]);
        run(&mut store);
        assert_eq!(store.get(p).grad.data(), &[2.0, 2.0]);

        store.zero_grad();
        assert_eq!(store.get(p).grad.sum(), 0.0);
        run(&mut store);
        assert_eq!(store.get(p).grad.data(), &[1.0, 1.0]);

        ParamStore::new().zero_grad(); // no-op on empty store
    }

    #[test]
    fn mask_identity_passes_gradient_through() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 4, 4], (0..16).map(|i| i as f64).collect()).unwrap());
        let mre = tape.leaf(Tensor::ones(&[1, 4, 4]).unwrap());
        let mim = tape.leaf(Tensor::zeros(&[1, 4, 4]).unwrap());
        let y = tape.apply_mask(x, mre, mim).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        for &g in grads[x.0].as_ref().unwrap().data() {
            assert!((g - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mask_grad_zero_for_zero_upstream() {
        // loss ignores the masked output entirely, so mask grads are absent
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[1, 4, 4]).unwrap());
        let mre = tape.leaf(Tensor::ones(&[1, 4, 4]).unwrap());
        let mim = tape.leaf(Tensor::zeros(&[1, 4, 4]).unwrap());
        let y = tape.apply_mask(x, mre, mim).unwrap();
        let zero = tape.scale(y, 0.0).unwrap();
        let loss = tape.sum(zero).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads[mre.0].as_ref().unwrap().data().iter().all(|&v| v == 0.0));
        assert!(grads[mim.0].as_ref().unwrap().data().iter().all(|&v| v == 0.0));
    }
}
