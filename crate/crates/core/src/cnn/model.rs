//! Sequential networks, the placement CNN, and the checkpoint format.

use std::path::Path;

use super::layers::{
    flatten_backward, flatten_forward, maxpool_backward, maxpool_forward, relu_backward, relu_forward, Conv2d,
    ConvCache, Dense, PoolCache,
};
use super::tensor::{Scalar, Tensor};
use crate::dataset::{checked_body, FeatureTensor, GridConfig, Reader};
use crate::rng::SplitMix64;
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 6] = b"UAVNN1";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_INPUT: u8 = 0;
const TAG_CONV: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_POOL: u8 = 3;
const TAG_FLATTEN: u8 = 4;
const TAG_DENSE: u8 = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<F> {
    Conv(Conv2d<F>),
    Relu,
    MaxPool,
    Flatten,
    Dense(Dense<F>),
}

/// Per-layer state recorded by [`Network::forward_train`].
#[derive(Debug, Clone)]
pub enum Cache<F> {
    Conv(ConvCache<F>),
    Relu(Vec<bool>),
    Pool(PoolCache),
    Flatten([usize; 4]),
    Dense(Tensor<F>),
}

/// Layer stack applied to a `(c, h, w)` input.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    pub input: [usize; 3],
    pub layers: Vec<Layer<F>>,
}

impl<F: Scalar> Network<F> {
    /// Builds a network after checking that layer shapes chain.
    pub fn new(input: [usize; 3], layers: Vec<Layer<F>>) -> Result<Self> {
        let net = Self { input, layers };
        net.output_shape()?;
        Ok(net)
    }

    /// Per-sample `(c, h, w)` after every layer, starting with the input.
    pub fn shape_chain(&self) -> Result<Vec<[usize; 3]>> {
        let mut s = self.input;
        let mut out = vec![s];
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |what: &str| Error::Validation(format!("layer {i}: {what} does not fit input {s:?}"));
            s = match layer {
                Layer::Conv(c) if c.in_c == s[0] => [c.out_c, s[1], s[2]],
                Layer::Conv(_) => return Err(bad("conv")),
                Layer::Relu => s,
                Layer::MaxPool if s[1] % 2 == 0 && s[2] % 2 == 0 => [s[0], s[1] / 2, s[2] / 2],
                Layer::MaxPool => return Err(bad("max pooling")),
                Layer::Flatten => [s[0] * s[1] * s[2], 1, 1],
                Layer::Dense(d) if d.in_f == s[0] && s[1] == 1 && s[2] == 1 => [d.out_f, 1, 1],
                Layer::Dense(_) => return Err(bad("dense")),
            };
            out.push(s);
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<[usize; 3]> {
        Ok(*self.shape_chain()?.last().expect("chain holds the input"))
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<()> {
        if [x.c, x.h, x.w] != self.input {
            return Err(Error::Validation(format!(
                "network expects per-sample shape {:?}, got {:?}",
                self.input,
                [x.c, x.h, x.w]
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(c) => c.forward(&cur)?.0,
                Layer::Relu => relu_forward(&cur).0,
                Layer::MaxPool => maxpool_forward(&cur)?.0,
                Layer::Flatten => flatten_forward(&cur),
                Layer::Dense(d) => d.forward(&cur)?,
            };
        }
        Ok(cur)
    }

    pub fn forward_train(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Vec<Cache<F>>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(c) => {
                    let (y, cache) = c.forward(&cur)?;
                    caches.push(Cache::Conv(cache));
                    y
                }
                Layer::Relu => {
                    let (y, mask) = relu_forward(&cur);
                    caches.push(Cache::Relu(mask));
                    y
                }
                Layer::MaxPool => {
                    let (y, cache) = maxpool_forward(&cur)?;
                    caches.push(Cache::Pool(cache));
                    y
                }
                Layer::Flatten => {
                    caches.push(Cache::Flatten(cur.shape()));
                    flatten_forward(&cur)
                }
                Layer::Dense(d) => {
                    let y = d.forward(&cur)?;
                    caches.push(Cache::Dense(cur));
                    y
                }
            };
        }
        Ok((cur, caches))
    }

    /// Returns the input gradient and parameter gradients in [`Self::params`]
    /// order.
    pub fn backward(&self, caches: &[Cache<F>], grad_out: Tensor<F>) -> Result<(Tensor<F>, Vec<Vec<F>>)> {
        if caches.len() != self.layers.len() {
            return Err(Error::Validation("cache does not belong to this network".into()));
        }
        let mut grads: Vec<Vec<F>> = Vec::new();
        let mut g = grad_out;
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            g = match (layer, cache) {
                (Layer::Conv(c), Cache::Conv(cc)) => {
                    let (gi, gw, gb) = c.backward(cc, &g)?;
                    grads.push(gb);
                    grads.push(gw);
                    gi
                }
                (Layer::Relu, Cache::Relu(mask)) => relu_backward(mask, &g),
                (Layer::MaxPool, Cache::Pool(pc)) => maxpool_backward(pc, &g),
                (Layer::Flatten, Cache::Flatten(shape)) => flatten_backward(*shape, &g),
                (Layer::Dense(d), Cache::Dense(input)) => {
                    let (gi, gw, gb) = d.backward(input, &g)?;
                    grads.push(gb);
                    grads.push(gw);
                    gi
                }
                _ => return Err(Error::Validation("cache does not belong to this network".into())),
            };
        }
        grads.reverse();
        Ok((g, grads))
    }

    /// Weight and bias buffers of every parametrised layer, in layer order.
    pub fn params(&self) -> Vec<&Vec<F>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&c.weight, &c.bias]),
                Layer::Dense(d) => out.extend([&d.weight, &d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<F>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&mut c.weight, &mut c.bias]),
                Layer::Dense(d) => out.extend([&mut d.weight, &mut d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn cast<G: Scalar>(&self) -> Network<G> {
        let cv = |v: &[F]| v.iter().map(|x| G::from_f64(x.as_f64())).collect::<Vec<G>>();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(Conv2d { in_c: c.in_c, out_c: c.out_c, weight: cv(&c.weight), bias: cv(&c.bias) }),
                Layer::Dense(d) => Layer::Dense(Dense { in_f: d.in_f, out_f: d.out_f, weight: cv(&d.weight), bias: cv(&d.bias) }),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool => Layer::MaxPool,
                Layer::Flatten => Layer::Flatten,
            })
            .collect();
        Network { input: self.input, layers }
    }

    /// Serialises with the given 6-byte magic; parameters are stored as f64.
    pub fn to_bytes(&self, magic: &[u8; 6]) -> Vec<u8> {
        let mut buf = magic.to_vec();
        let put_u32 = |buf: &mut Vec<u8>, v: usize| buf.extend_from_slice(&(v as u32).to_le_bytes());
        let put_params = |buf: &mut Vec<u8>, p: &[F]| {
            for v in p {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        };
        put_u32(&mut buf, CHECKPOINT_VERSION as usize);
        put_u32(&mut buf, self.layers.len() + 1);
        buf.push(TAG_INPUT);
        for d in self.input {
            put_u32(&mut buf, d);
        }
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    buf.push(TAG_CONV);
                    for d in [c.in_c, c.out_c, super::layers::KERNEL] {
                        put_u32(&mut buf, d);
                    }
                    put_params(&mut buf, &c.weight);
                    put_params(&mut buf, &c.bias);
                }
                Layer::Relu => buf.push(TAG_RELU),
                Layer::MaxPool => {
                    buf.push(TAG_POOL);
                    put_u32(&mut buf, 2);
                }
                Layer::Flatten => buf.push(TAG_FLATTEN),
                Layer::Dense(d) => {
                    buf.push(TAG_DENSE);
                    put_u32(&mut buf, d.in_f);
                    put_u32(&mut buf, d.out_f);
                    put_params(&mut buf, &d.weight);
                    put_params(&mut buf, &d.bias);
                }
            }
        }
        let crc = crc32fast::hash(&buf[magic.len()..]);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 6]) -> Result<Self> {
        let body = checked_body(bytes, magic)?;
        let mut r = Reader::new(body);
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        if count == 0 || r.u8()? != TAG_INPUT {
            return Err(Error::Format("checkpoint does not start with an input layer".into()));
        }
        let input = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let mut layers = Vec::new();
        let params = |r: &mut Reader<'_>, n: usize| -> Result<Vec<F>> {
            (0..n).map(|_| r.f64().map(F::from_f64)).collect()
        };
        for _ in 1..count {
            let layer = match r.u8()? {
                TAG_CONV => {
                    let (ic, oc, k) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
                    if k != super::layers::KERNEL {
                        return Err(Error::Format(format!("unsupported kernel size {k}")));
                    }
                    let w = params(&mut r, ic * oc * k * k)?;
                    let b = params(&mut r, oc)?;
                    Layer::Conv(Conv2d::new(ic, oc, w, b)?)
                }
                TAG_RELU => Layer::Relu,
                TAG_POOL => {
                    let size = r.u32()?;
                    if size != 2 {
                        return Err(Error::Format(format!("unsupported pool size {size}")));
                    }
                    Layer::MaxPool
                }
                TAG_FLATTEN => Layer::Flatten,
                TAG_DENSE => {
                    let (i, o) = (r.u32()? as usize, r.u32()? as usize);
                    let w = params(&mut r, i * o)?;
                    let b = params(&mut r, o)?;
                    Layer::Dense(Dense::new(i, o, w, b)?)
                }
                t => return Err(Error::Format(format!("unknown layer tag {t}"))),
            };
            layers.push(layer);
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after the last layer".into()));
        }
        Network::new(input, layers).map_err(|e| Error::Format(format!("inconsistent checkpoint: {e}")))
    }
}

/// Conv channel widths of the placement network.
pub const CONV_WIDTHS: [usize; 4] = [16, 32, 32, 64];
pub const HIDDEN: usize = 128;

/// Placement regressor: `(depth, rows, cols)` occupancy counts to a
/// normalised `(x, y)` in `[0, 1]²`. Counts are converted to per-slice
/// occupancy fractions before the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<F> {
    pub net: Network<F>,
}

impl<F: Scalar> CnnModel<F> {
    /// Fresh He-uniform initialisation. The output bias starts at the
    /// area centre.
    pub fn new(grid: &GridConfig, seed: u64) -> Result<Self> {
        grid.validate()?;
        if grid.rows % 4 != 0 || grid.cols % 4 != 0 {
            return Err(Error::Config(format!(
                "grid {}x{} must be divisible by 4 for two pooling stages",
                grid.rows, grid.cols
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let [c1, c2, c3, c4] = CONV_WIDTHS;
        let flat = c4 * (grid.rows / 4) * (grid.cols / 4);
        let mut out = Dense::init(HIDDEN, 2, &mut rng);
        out.bias = vec![F::from_f64(0.5); 2];
        let layers = vec![
            Layer::Conv(Conv2d::init(grid.temporal_depth, c1, &mut rng)),
            Layer::Relu,
            Layer::Conv(Conv2d::init(c1, c2, &mut rng)),
            Layer::Relu,
            Layer::MaxPool,
            Layer::Conv(Conv2d::init(c2, c3, &mut rng)),
            Layer::Relu,
            Layer::Conv(Conv2d::init(c3, c4, &mut rng)),
            Layer::Relu,
            Layer::MaxPool,
            Layer::Flatten,
            Layer::Dense(Dense::init(flat, HIDDEN, &mut rng)),
            Layer::Relu,
            Layer::Dense(out),
        ];
        Ok(Self { net: Network::new([grid.temporal_depth, grid.rows, grid.cols], layers)? })
    }

    pub fn from_network(net: Network<F>) -> Result<Self> {
        let out = net.output_shape()?;
        if out != [2, 1, 1] {
            return Err(Error::Validation(format!("placement network must output 2 values, got {out:?}")));
        }
        Ok(Self { net })
    }

    /// Stacks feature tensors into a `(depth, batch, rows, cols)` batch. Each
    /// time slice is scaled to unit sum, which keeps inputs independent of
    /// the number of users.
    pub fn batch<'a>(&self, features: impl IntoIterator<Item = &'a FeatureTensor>) -> Result<Tensor<F>> {
        let feats: Vec<&FeatureTensor> = features.into_iter().collect();
        let [c, h, w] = self.net.input;
        let n = feats.len();
        let mut t = Tensor::zeros(c, n, h, w);
        for (i, f) in feats.iter().enumerate() {
            if [f.depth, f.rows, f.cols] != self.net.input {
                return Err(Error::Validation(format!(
                    "feature tensor {}x{}x{} does not match model input {:?}",
                    f.depth, f.rows, f.cols, self.net.input
                )));
            }
            let norm = f.normalized();
            for (k, src) in norm.chunks(h * w).enumerate() {
                let dst = &mut t.data[(k * n + i) * h * w..][..h * w];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = F::from_f64(s);
                }
            }
        }
        Ok(t)
    }

    /// Raw network outputs, `2 × batch`.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.net.forward(x)
    }

    /// Normalised placement, clamped into `[0, 1]²`.
    pub fn predict(&self, features: &FeatureTensor) -> Result<[f64; 2]> {
        Ok(self.predict_batch(std::slice::from_ref(features))?[0])
    }

    pub fn predict_batch(&self, features: &[FeatureTensor]) -> Result<Vec<[f64; 2]>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.forward(&self.batch(features)?)?;
        let n = features.len();
        Ok((0..n).map(|i| [clamp_unit(out.data[i].as_f64()), clamp_unit(out.data[n + i].as_f64())]).collect())
    }

    pub fn cast<G: Scalar>(&self) -> CnnModel<G> {
        CnnModel { net: self.net.cast() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.net.to_bytes(MODEL_MAGIC)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_network(Network::from_bytes(bytes, MODEL_MAGIC)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.5
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> CnnModel<f64> {
        CnnModel::new(&GridConfig::default(), 7).unwrap()
    }

    #[test]
    fn shape_chain_for_default_grid() {
        let chain = model().net.shape_chain().unwrap();
        let spatial: Vec<(usize, usize)> = chain.iter().map(|s| (s[1], s[2])).collect();
        assert_eq!(chain[0], [5, 20, 20]);
        assert_eq!(chain[4], [32, 20, 20]);
        assert_eq!(chain[5], [32, 10, 10]);
        assert_eq!(chain[10], [64, 5, 5]);
        assert_eq!(chain[11], [1600, 1, 1]);
        assert_eq!(chain[12], [128, 1, 1]);
        assert_eq!(*chain.last().unwrap(), [2, 1, 1]);
        assert_eq!(spatial.iter().filter(|s| **s == (10, 10)).count(), 5);
        let convs = model().net.layers.iter().filter(|l| matches!(l, Layer::Conv(_))).count();
        let dense = model().net.layers.iter().filter(|l| matches!(l, Layer::Dense(_))).count();
        assert_eq!((convs, dense), (4, 2));
    }

    #[test]
    fn rejects_inconsistent_stack() {
        let mut rng = SplitMix64::new(1);
        let layers = vec![Layer::Conv(Conv2d::<f64>::init(3, 4, &mut rng))];
        assert!(Network::new([2, 4, 4], layers).is_err());
        assert!(Network::<f64>::new([1, 3, 4], vec![Layer::MaxPool]).is_err());
        let bad_grid = GridConfig { rows: 10, cols: 10, temporal_depth: 5 };
        assert!(CnnModel::<f64>::new(&bad_grid, 0).is_err());
    }

    #[test]
    fn predict_in_unit_square_and_round_trip() {
        let m = model();
        let grid = GridConfig::default();
        let mut f = FeatureTensor::zeros(&grid);
        for (i, v) in f.values.iter_mut().enumerate() {
            *v = (i % 7) as f32;
        }
        let p = m.predict(&f).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..6], MODEL_MAGIC);
        let back = CnnModel::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.predict(&f).unwrap(), p);
    }

    #[test]
    fn checkpoint_errors() {
        let bytes = model().to_bytes();
        let mut wrong = bytes.clone();
        wrong[..6].copy_from_slice(b"UAVQN1");
        assert!(matches!(CnnModel::<f64>::from_bytes(&wrong), Err(Error::Format(_))));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(CnnModel::<f64>::from_bytes(&flipped), Err(Error::Format(_))));
        assert!(CnnModel::<f64>::from_bytes(&bytes[..bytes.len() - 9]).is_err());
    }

    #[test]
    fn f32_cast_agrees_closely() {
        let m = model();
        let m32 = m.cast::<f32>();
        let grid = GridConfig::default();
        let mut f = FeatureTensor::zeros(&grid);
        f.values[17] = 3.0;
        f.values[1234] = 1.0;
        let a = m.forward(&m.batch([&f]).unwrap()).unwrap();
        let b = m32.forward(&m32.batch([&f]).unwrap()).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - *y as f64).abs() < 1e-4);
        }
    }
}
