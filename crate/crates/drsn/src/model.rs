//! The segmentation network: a feature extractor of deformable residual
//! blocks followed by a reconstructor block, squashed to one channel by a
//! final sigmoid, trained under a mean-squared (Euclidean) loss.

use crate::deform::{
    deform_backward_cols, deform_conv2d_forward, deform_forward_cols, make_offset_layer,
    predict_offsets, OffsetField,
};
use crate::error::{Error, Result};
use crate::nn::{
    conv2d_backward, conv2d_backward_opt, conv2d_forward, relu_backward, relu_forward,
    sigmoid_backward, sigmoid_forward, ConvLayer,
};
use crate::rng::SplitMix64;
use crate::scalar::{rf, Real};
use crate::tensor::Tensor4;

/// Layer widths. The input is always single-channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Channel width of every extractor block.
    pub channels: usize,
    /// Number of deformable residual blocks in the extractor.
    pub blocks: usize,
    /// Kernel side length for every convolution (odd).
    pub kernel: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            channels: 32,
            blocks: 3,
            kernel: 3,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.blocks == 0 {
            return Err(Error::Dimension(
                "channels and blocks must be >= 1".into(),
            ));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Dimension(format!(
                "kernel must be odd and >= 1, got {}",
                self.kernel
            )));
        }
        Ok(())
    }
}

/// One deformable conv (with its own offset-prediction conv) followed by
/// two standard convs, plus an identity skip; a 1x1 projection aligns
/// channels when the block input width differs from the block width.
#[derive(Clone, Debug)]
pub struct DeformResidualBlock<R: Real = f64> {
    pub offset: ConvLayer<R>,
    pub deform: ConvLayer<R>,
    pub conv2: ConvLayer<R>,
    pub conv3: ConvLayer<R>,
    pub project: Option<ConvLayer<R>>,
}

struct BlockCache<R: Real> {
    x: Tensor4<R>,
    offsets: OffsetField<R>,
    cols: Vec<R>,
    t1: Tensor4<R>,
    t2: Tensor4<R>,
    z: Tensor4<R>,
}

impl<R: Real> DeformResidualBlock<R> {
    fn new(in_c: usize, channels: usize, kernel: usize, rng: &mut SplitMix64) -> Result<Self> {
        Ok(DeformResidualBlock {
            offset: make_offset_layer(in_c, kernel, kernel)?,
            deform: ConvLayer::glorot(in_c, channels, kernel, kernel, rng)?,
            conv2: ConvLayer::glorot(channels, channels, kernel, kernel, rng)?,
            conv3: ConvLayer::glorot(channels, channels, kernel, kernel, rng)?,
            project: if in_c != channels {
                Some(ConvLayer::glorot(in_c, channels, 1, 1, rng)?)
            } else {
                None
            },
        })
    }

    fn skip(&self, x: &Tensor4<R>) -> Result<Tensor4<R>> {
        match &self.project {
            Some(p) => conv2d_forward(x, p),
            None => Ok(x.clone()),
        }
    }

    fn forward_train(&self, x: &Tensor4<R>) -> Result<(Tensor4<R>, BlockCache<R>)> {
        let offsets = predict_offsets(x, &self.offset)?;
        let (t1, cols) = deform_forward_cols(x, &self.deform, &offsets)?;
        let a1 = relu_forward(&t1);
        let t2 = conv2d_forward(&a1, &self.conv2)?;
        let a2 = relu_forward(&t2);
        let t3 = conv2d_forward(&a2, &self.conv3)?;
        let z = t3.add(&self.skip(x)?)?;
        let out = relu_forward(&z);
        Ok((
            out,
            BlockCache {
                x: x.clone(),
                offsets,
                cols,
                t1,
                t2,
                z,
            },
        ))
    }

    fn forward_infer(&self, x: &Tensor4<R>) -> Result<Tensor4<R>> {
        let offsets = predict_offsets(x, &self.offset)?;
        let t1 = deform_conv2d_forward(x, &self.deform, &offsets)?;
        let a1 = relu_forward(&t1);
        let t2 = conv2d_forward(&a1, &self.conv2)?;
        let a2 = relu_forward(&t2);
        let t3 = conv2d_forward(&a2, &self.conv3)?;
        let z = t3.add(&self.skip(x)?)?;
        Ok(relu_forward(&z))
    }

    /// Populates this block's parameter gradients; returns the gradient
    /// w.r.t. the block input (all zero when `need_dx` is false).
    fn backward(
        &mut self,
        cache: &BlockCache<R>,
        dout: &Tensor4<R>,
        need_dx: bool,
    ) -> Result<Tensor4<R>> {
        let dz = relu_backward(&cache.z, dout)?;
        let a2 = relu_forward(&cache.t2);
        let da2 = conv2d_backward(&a2, &mut self.conv3, &dz)?;
        let dt2 = relu_backward(&cache.t2, &da2)?;
        let a1 = relu_forward(&cache.t1);
        let da1 = conv2d_backward(&a1, &mut self.conv2, &dt2)?;
        let dt1 = relu_backward(&cache.t1, &da1)?;
        let (dx_deform, doffsets) = deform_backward_cols(
            &cache.x,
            &mut self.deform,
            &cache.offsets,
            &dt1,
            &cache.cols,
            need_dx,
        )?;
        let dx_offset =
            conv2d_backward_opt(&cache.x, &mut self.offset, doffsets.tensor(), need_dx)?;
        let dx_skip = match &mut self.project {
            Some(p) => conv2d_backward_opt(&cache.x, p, &dz, need_dx)?,
            None => dz,
        };
        if !need_dx {
            return Ok(Tensor4::zeros_like(&cache.x));
        }
        dx_deform.add(&dx_offset)?.add(&dx_skip)
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(ParamRef<'a, R>)) {
        visit_layer(&self.offset, format!("{prefix}.offset"), f);
        visit_layer(&self.deform, format!("{prefix}.deform"), f);
        visit_layer(&self.conv2, format!("{prefix}.conv2"), f);
        visit_layer(&self.conv3, format!("{prefix}.conv3"), f);
        if let Some(p) = &self.project {
            visit_layer(p, format!("{prefix}.project"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(ParamMut<'_, R>)) {
        visit_layer_mut(&mut self.offset, format!("{prefix}.offset"), f);
        visit_layer_mut(&mut self.deform, format!("{prefix}.deform"), f);
        visit_layer_mut(&mut self.conv2, format!("{prefix}.conv2"), f);
        visit_layer_mut(&mut self.conv3, format!("{prefix}.conv3"), f);
        if let Some(p) = &mut self.project {
            visit_layer_mut(p, format!("{prefix}.project"), f);
        }
    }

    fn zero_grads(&mut self) {
        self.offset.zero_grads();
        self.deform.zero_grads();
        self.conv2.zero_grads();
        self.conv3.zero_grads();
        if let Some(p) = &mut self.project {
            p.zero_grads();
        }
    }
}

/// Three standard convs with an identity skip; the last conv and the 1x1
/// skip projection both map to one channel.
#[derive(Clone, Debug)]
pub struct ReconstructorBlock<R: Real = f64> {
    pub conv1: ConvLayer<R>,
    pub conv2: ConvLayer<R>,
    pub conv3: ConvLayer<R>,
    pub project: ConvLayer<R>,
}

struct ReconCache<R: Real> {
    x: Tensor4<R>,
    t1: Tensor4<R>,
    t2: Tensor4<R>,
}

impl<R: Real> ReconstructorBlock<R> {
    fn new(channels: usize, kernel: usize, rng: &mut SplitMix64) -> Result<Self> {
        Ok(ReconstructorBlock {
            conv1: ConvLayer::glorot(channels, channels, kernel, kernel, rng)?,
            conv2: ConvLayer::glorot(channels, channels, kernel, kernel, rng)?,
            conv3: ConvLayer::glorot(channels, 1, kernel, kernel, rng)?,
            project: ConvLayer::glorot(channels, 1, 1, 1, rng)?,
        })
    }

    fn forward_train(&self, x: &Tensor4<R>) -> Result<(Tensor4<R>, ReconCache<R>)> {
        let t1 = conv2d_forward(x, &self.conv1)?;
        let a1 = relu_forward(&t1);
        let t2 = conv2d_forward(&a1, &self.conv2)?;
        let a2 = relu_forward(&t2);
        let t3 = conv2d_forward(&a2, &self.conv3)?;
        let z = t3.add(&conv2d_forward(x, &self.project)?)?;
        Ok((
            z,
            ReconCache {
                x: x.clone(),
                t1,
                t2,
            },
        ))
    }

    fn forward_infer(&self, x: &Tensor4<R>) -> Result<Tensor4<R>> {
        let t1 = conv2d_forward(x, &self.conv1)?;
        let a1 = relu_forward(&t1);
        let t2 = conv2d_forward(&a1, &self.conv2)?;
        let a2 = relu_forward(&t2);
        let t3 = conv2d_forward(&a2, &self.conv3)?;
        t3.add(&conv2d_forward(x, &self.project)?)
    }

    fn backward(&mut self, cache: &ReconCache<R>, dz: &Tensor4<R>) -> Result<Tensor4<R>> {
        let a2 = relu_forward(&cache.t2);
        let da2 = conv2d_backward(&a2, &mut self.conv3, dz)?;
        let dt2 = relu_backward(&cache.t2, &da2)?;
        let a1 = relu_forward(&cache.t1);
        let da1 = conv2d_backward(&a1, &mut self.conv2, &dt2)?;
        let dt1 = relu_backward(&cache.t1, &da1)?;
        let dx1 = conv2d_backward(&cache.x, &mut self.conv1, &dt1)?;
        let dxp = conv2d_backward(&cache.x, &mut self.project, dz)?;
        dx1.add(&dxp)
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(ParamRef<'a, R>)) {
        visit_layer(&self.conv1, "recon.conv1".into(), f);
        visit_layer(&self.conv2, "recon.conv2".into(), f);
        visit_layer(&self.conv3, "recon.conv3".into(), f);
        visit_layer(&self.project, "recon.project".into(), f);
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(ParamMut<'_, R>)) {
        visit_layer_mut(&mut self.conv1, "recon.conv1".into(), f);
        visit_layer_mut(&mut self.conv2, "recon.conv2".into(), f);
        visit_layer_mut(&mut self.conv3, "recon.conv3".into(), f);
        visit_layer_mut(&mut self.project, "recon.project".into(), f);
    }

    fn zero_grads(&mut self) {
        self.conv1.zero_grads();
        self.conv2.zero_grads();
        self.conv3.zero_grads();
        self.project.zero_grads();
    }
}

/// Borrowed view of one named parameter tensor.
pub struct ParamRef<'a, R: Real = f64> {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: &'a [R],
    pub grads: &'a [R],
}

/// Mutable view of one named parameter tensor.
pub struct ParamMut<'a, R: Real = f64> {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: &'a mut [R],
    pub grads: &'a mut [R],
}

fn visit_layer<'a, R: Real>(
    layer: &'a ConvLayer<R>,
    prefix: String,
    f: &mut impl FnMut(ParamRef<'a, R>),
) {
    f(ParamRef {
        name: format!("{prefix}.weight"),
        dims: vec![layer.out_c, layer.in_c, layer.kh, layer.kw],
        values: &layer.weights,
        grads: &layer.grad_weights,
    });
    f(ParamRef {
        name: format!("{prefix}.bias"),
        dims: vec![layer.out_c],
        values: &layer.bias,
        grads: &layer.grad_bias,
    });
}

fn visit_layer_mut<R: Real>(
    layer: &mut ConvLayer<R>,
    prefix: String,
    f: &mut impl FnMut(ParamMut<'_, R>),
) {
    f(ParamMut {
        name: format!("{prefix}.weight"),
        dims: vec![layer.out_c, layer.in_c, layer.kh, layer.kw],
        values: &mut layer.weights,
        grads: &mut layer.grad_weights,
    });
    f(ParamMut {
        name: format!("{prefix}.bias"),
        dims: vec![layer.out_c],
        values: &mut layer.bias,
        grads: &mut layer.grad_bias,
    });
}

struct NetCache<R: Real> {
    blocks: Vec<BlockCache<R>>,
    recon: ReconCache<R>,
    y: Tensor4<R>,
}

/// The full network: extractor blocks, reconstructor, final sigmoid.
/// Parameters are enumerated in one fixed order shared by the optimizer
/// and the checkpoint format.
pub struct SegNetwork<R: Real = f64> {
    pub blocks: Vec<DeformResidualBlock<R>>,
    pub recon: ReconstructorBlock<R>,
    config: NetworkConfig,
    cache: Option<NetCache<R>>,
}

impl<R: Real> SegNetwork<R> {
    /// Builds a fresh network; weights are drawn from `rng` in parameter
    /// order, offset layers start at zero.
    pub fn new(config: NetworkConfig, rng: &mut SplitMix64) -> Result<SegNetwork<R>> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(config.blocks);
        for b in 0..config.blocks {
            let in_c = if b == 0 { 1 } else { config.channels };
            blocks.push(DeformResidualBlock::new(
                in_c,
                config.channels,
                config.kernel,
                rng,
            )?);
        }
        Ok(SegNetwork {
            blocks,
            recon: ReconstructorBlock::new(config.channels, config.kernel, rng)?,
            config,
            cache: None,
        })
    }

    pub fn config(&self) -> NetworkConfig {
        self.config
    }

    fn check_input(&self, x: &Tensor4<R>) -> Result<()> {
        if x.c() != 1 {
            return Err(Error::Dimension(format!(
                "network input must have 1 channel, got {}",
                x.c()
            )));
        }
        Ok(())
    }

    /// Training forward pass: caches intermediates for [`backward`](Self::backward).
    pub fn forward(&mut self, x: &Tensor4<R>) -> Result<Tensor4<R>> {
        self.check_input(x)?;
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        let mut cur = x.clone();
        for block in &self.blocks {
            let (out, cache) = block.forward_train(&cur)?;
            block_caches.push(cache);
            cur = out;
        }
        let (z, recon_cache) = self.recon.forward_train(&cur)?;
        let y = sigmoid_forward(&z);
        self.cache = Some(NetCache {
            blocks: block_caches,
            recon: recon_cache,
            y: y.clone(),
        });
        Ok(y)
    }

    /// Inference forward pass; no cache, usable concurrently.
    pub fn infer(&self, x: &Tensor4<R>) -> Result<Tensor4<R>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for block in &self.blocks {
            cur = block.forward_infer(&cur)?;
        }
        Ok(sigmoid_forward(&self.recon.forward_infer(&cur)?))
    }

    /// Populates every parameter gradient from the prediction gradient of
    /// the immediately preceding [`forward`](Self::forward). The gradient
    /// w.r.t. the network input is discarded. Consumes the cache: calls
    /// without a fresh forward fail with a state error.
    pub fn backward(&mut self, dpred: &Tensor4<R>) -> Result<()> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::State("backward called without a preceding forward".into())
        })?;
        let dz = sigmoid_backward(&cache.y, dpred)?;
        let mut d = self.recon.backward(&cache.recon, &dz)?;
        for (bi, (block, bcache)) in self
            .blocks
            .iter_mut()
            .zip(cache.blocks.iter())
            .enumerate()
            .rev()
        {
            d = block.backward(bcache, &d, bi != 0)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for b in &mut self.blocks {
            b.zero_grads();
        }
        self.recon.zero_grads();
    }

    /// Visits every parameter in the fixed order.
    pub fn visit_params<'a>(&'a self, mut f: impl FnMut(ParamRef<'a, R>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("block{i}"), &mut f);
        }
        self.recon.visit(&mut f);
    }

    /// Mutable visit in the same fixed order as [`visit_params`](Self::visit_params).
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(ParamMut<'_, R>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("block{i}"), &mut f);
        }
        self.recon.visit_mut(&mut f);
    }

    /// Number of parameter tensors (not scalars).
    pub fn param_tensor_count(&self) -> usize {
        let mut count = 0;
        self.visit_params(|_| count += 1);
        count
    }

    /// Total number of scalar parameters.
    pub fn scalar_param_count(&self) -> usize {
        let mut count = 0;
        self.visit_params(|p| count += p.values.len());
        count
    }
}

/// Mean squared error per Eq-style normalization: mean over pixels of one
/// image, then mean over the batch.
pub fn euclidean_loss<R: Real>(pred: &Tensor4<R>, target: &Tensor4<R>) -> Result<R> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "loss shape mismatch: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let mut acc = R::zero();
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = *p - *t;
        acc += d * d;
    }
    Ok(acc / rf::<R>(pred.numel() as f64))
}

/// Gradient of [`euclidean_loss`] w.r.t. the prediction:
/// `2 (pred - target) / (W H N)`.
pub fn euclidean_loss_backward<R: Real>(
    pred: &Tensor4<R>,
    target: &Tensor4<R>,
) -> Result<Tensor4<R>> {
    let scale = rf::<R>(2.0 / pred.numel() as f64);
    pred.zip_with(target, move |p, t| (p - t) * scale)
}

/// Thresholds a prediction into a `{0, 1}` mask: 1 where `pred >= threshold`.
pub fn binarize<R: Real>(pred: &Tensor4<R>, threshold: R) -> Tensor4<R> {
    pred.map_unary(|v| if v >= threshold { R::one() } else { R::zero() })
}

/// An image/mask training pair; single-channel, equal spatial dims, image
/// values in `[0, 1]`, mask exactly binary.
#[derive(Clone, Debug)]
pub struct SegSample<R: Real = f64> {
    image: Tensor4<R>,
    mask: Tensor4<R>,
}

impl<R: Real> SegSample<R> {
    pub fn new(image: Tensor4<R>, mask: Tensor4<R>) -> Result<SegSample<R>> {
        if image.n() != 1 || image.c() != 1 || mask.n() != 1 || mask.c() != 1 {
            return Err(Error::Input(
                "sample image and mask must be single-image single-channel".into(),
            ));
        }
        if image.shape() != mask.shape() {
            return Err(Error::Input(format!(
                "image shape {:?} does not match mask shape {:?}",
                image.shape(),
                mask.shape()
            )));
        }
        if image
            .data()
            .iter()
            .any(|&v| v < R::zero() || v > R::one())
        {
            return Err(Error::Input("image values must lie in [0, 1]".into()));
        }
        if mask
            .data()
            .iter()
            .any(|&v| v != R::zero() && v != R::one())
        {
            return Err(Error::Input("mask must be exactly binary".into()));
        }
        Ok(SegSample { image, mask })
    }

    pub fn image(&self) -> &Tensor4<R> {
        &self.image
    }

    pub fn mask(&self) -> &Tensor4<R> {
        &self.mask
    }

    pub fn size(&self) -> (usize, usize) {
        (self.image.h(), self.image.w())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net(seed: u64) -> SegNetwork {
        SegNetwork::new(
            NetworkConfig {
                channels: 4,
                blocks: 2,
                kernel: 3,
            },
            &mut SplitMix64::new(seed),
        )
        .unwrap()
    }

    fn random_input(seed: u64, h: usize, w: usize) -> Tensor4 {
        let mut rng = SplitMix64::new(seed);
        Tensor4::from_vec(1, 1, h, w, (0..h * w).map(|_| rng.next_f64()).collect()).unwrap()
    }

    #[test]
    fn forward_preserves_shape_and_range() {
        let mut net = small_net(3);
        let x = random_input(7, 16, 16);
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), (1, 1, 16, 16));
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        // also non-square and other sizes
        let x2 = random_input(8, 9, 13);
        assert_eq!(net.infer(&x2).unwrap().shape(), (1, 1, 9, 13));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut net = small_net(4);
        let x = random_input(9, 12, 12);
        let y1 = net.forward(&x).unwrap();
        let y2 = net.forward(&x).unwrap();
        assert_eq!(y1, y2);
        let y3 = net.infer(&x).unwrap();
        assert_eq!(y1, y3);
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let mut net = small_net(5);
        let x = Tensor4::<f64>::zeros(1, 2, 8, 8).unwrap();
        assert!(matches!(net.forward(&x), Err(Error::Dimension(_))));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut net = small_net(6);
        let x = random_input(10, 8, 8);
        let y = net.forward(&x).unwrap();
        let d = Tensor4::zeros_like(&y);
        net.backward(&d).unwrap();
        assert!(matches!(net.backward(&d), Err(Error::State(_))));
    }

    #[test]
    fn zero_dpred_gives_zero_grads() {
        let mut net = small_net(7);
        let x = random_input(11, 8, 8);
        let y = net.forward(&x).unwrap();
        net.backward(&Tensor4::zeros_like(&y)).unwrap();
        net.visit_params(|p| {
            assert!(p.grads.iter().all(|&g| g == 0.0), "{} not zero", p.name);
        });
    }

    #[test]
    fn param_order_is_stable_and_named() {
        let net = small_net(8);
        let mut names = Vec::new();
        net.visit_params(|p| names.push(p.name));
        assert_eq!(names[0], "block0.offset.weight");
        assert_eq!(names[1], "block0.offset.bias");
        assert!(names.contains(&"block0.project.weight".to_string()));
        // block1 input width equals the block width, so no projection
        assert!(!names.contains(&"block1.project.weight".to_string()));
        assert_eq!(names.last().unwrap(), "recon.project.bias");
        let net2 = small_net(9);
        let mut names2 = Vec::new();
        net2.visit_params(|p| names2.push(p.name));
        assert_eq!(names, names2);
    }

    #[test]
    fn loss_examples() {
        let p = Tensor4::from_vec(1, 1, 1, 1, vec![0.5]).unwrap();
        let t = Tensor4::from_vec(1, 1, 1, 1, vec![0.0]).unwrap();
        assert_eq!(euclidean_loss(&p, &t).unwrap(), 0.25);
        assert_eq!(euclidean_loss(&p, &p).unwrap(), 0.0);

        let ones = Tensor4::from_vec(1, 1, 2, 2, vec![1.0; 4]).unwrap();
        let zeros = Tensor4::<f64>::zeros(1, 1, 2, 2).unwrap();
        assert_eq!(euclidean_loss(&ones, &zeros).unwrap(), 1.0);

        let bad = Tensor4::<f64>::zeros(1, 1, 2, 3).unwrap();
        assert!(matches!(
            euclidean_loss(&ones, &bad),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn loss_backward_examples() {
        let p = Tensor4::from_vec(1, 1, 1, 1, vec![0.5]).unwrap();
        let t = Tensor4::from_vec(1, 1, 1, 1, vec![0.0]).unwrap();
        assert_eq!(euclidean_loss_backward(&p, &t).unwrap().data(), &[1.0]);
        assert!(euclidean_loss_backward(&p, &p)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn loss_positive_unless_equal() {
        let mut rng = SplitMix64::new(21);
        let a = Tensor4::from_vec(1, 1, 3, 3, (0..9).map(|_| rng.next_f64()).collect()).unwrap();
        let mut b = a.clone();
        assert_eq!(euclidean_loss(&a, &b).unwrap(), 0.0);
        b = b.map_unary(|v| v + 1e-9);
        assert!(euclidean_loss(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn binarize_examples() {
        let p = Tensor4::from_vec(1, 1, 1, 3, vec![0.7, 0.5, 0.2]).unwrap();
        let m = binarize(&p, 0.5);
        assert_eq!(m.data(), &[1.0, 1.0, 0.0]);
        assert_eq!(binarize(&m, 0.5), m);
    }

    #[test]
    fn sample_validation() {
        let img = Tensor4::from_vec(1, 1, 2, 2, vec![0.1, 0.9, 0.5, 0.0]).unwrap();
        let mask = Tensor4::from_vec(1, 1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(SegSample::new(img.clone(), mask.clone()).is_ok());

        let bad_mask = Tensor4::from_vec(1, 1, 2, 2, vec![0.0, 0.5, 1.0, 0.0]).unwrap();
        assert!(matches!(
            SegSample::new(img.clone(), bad_mask),
            Err(Error::Input(_))
        ));

        let bad_img = Tensor4::from_vec(1, 1, 2, 2, vec![0.1, 1.9, 0.5, 0.0]).unwrap();
        assert!(matches!(
            SegSample::new(bad_img, mask.clone()),
            Err(Error::Input(_))
        ));

        let small = Tensor4::from_vec(1, 1, 1, 2, vec![0.0, 1.0]).unwrap();
        assert!(matches!(SegSample::new(img, small), Err(Error::Input(_))));
    }
}
