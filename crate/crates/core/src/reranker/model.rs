//! The trajectory scorer and its exact gradients.
//!
//! ```text
//! tf (4)      -> affine            -> 256 ┐
//! sf (3 cats) -> embed, mean, affine -> 256 ├ concat 1280 -> affine h -> act -> affine 2 -> softmax
//! ti (3 ids)  -> embed, concat     -> 768 ┘
//! ```
//!
//! 256 is `embed_dim`; the concatenation is always `5 * embed_dim` wide.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{TrajectoryFeatures, TraversalId, TRAJECTORY_SLOTS, TF_WIDTH};
use super::RerankerError;

pub const PADDING_TOKEN: &str = "padding";
pub const UNKNOWN_TOKEN: &str = "<unk>";
const CHECKPOINT_FORMAT: &str = "mixtrail-reranker";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Which feature branches feed the head. A disabled branch outputs zeros and
/// receives no gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub tf: bool,
    pub sf: bool,
    pub ti: bool,
}

impl Default for FeatureMask {
    fn default() -> Self {
        Self::ALL
    }
}

impl FeatureMask {
    pub const ALL: FeatureMask = FeatureMask {
        tf: true,
        sf: true,
        ti: true,
    };

    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.tf, "tf"), (self.sf, "sf"), (self.ti, "ti")]
            .into_iter()
            .filter_map(|(on, name)| on.then_some(name))
            .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub seed: u64,
    #[serde(default)]
    pub mask: FeatureMask,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 256,
            hidden: 128,
            activation: Activation::Tanh,
            seed: 17,
            mask: FeatureMask::ALL,
        }
    }
}

/// Every learnable tensor. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tf_w: Array2<f64>,
    pub tf_b: Array1<f64>,
    pub cat_embed: Array2<f64>,
    pub sf_w: Array2<f64>,
    pub sf_b: Array1<f64>,
    pub ti_embed: Array2<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

impl Params {
    fn zeros(vocab: usize, d: usize, h: usize) -> Self {
        Self {
            tf_w: Array2::zeros((d, TF_WIDTH)),
            tf_b: Array1::zeros(d),
            cat_embed: Array2::zeros((vocab, d)),
            sf_w: Array2::zeros((d, d)),
            sf_b: Array1::zeros(d),
            ti_embed: Array2::zeros((TraversalId::COUNT, d)),
            head_w: Array2::zeros((h, 5 * d)),
            head_b: Array1::zeros(h),
            out_w: Array2::zeros((2, h)),
            out_b: Array1::zeros(2),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.cat_embed.nrows(), self.tf_b.len(), self.head_b.len())
    }

    pub const GROUP_NAMES: [&'static str; 10] = [
        "tf_w", "tf_b", "cat_embed", "sf_w", "sf_b", "ti_embed", "head_w", "head_b", "out_w", "out_b",
    ];

    /// Flat views of each tensor, in [`Params::GROUP_NAMES`] order.
    pub fn groups(&self) -> [&[f64]; 10] {
        [
            self.tf_w.as_slice().expect("standard layout"),
            self.tf_b.as_slice().expect("standard layout"),
            self.cat_embed.as_slice().expect("standard layout"),
            self.sf_w.as_slice().expect("standard layout"),
            self.sf_b.as_slice().expect("standard layout"),
            self.ti_embed.as_slice().expect("standard layout"),
            self.head_w.as_slice().expect("standard layout"),
            self.head_b.as_slice().expect("standard layout"),
            self.out_w.as_slice().expect("standard layout"),
            self.out_b.as_slice().expect("standard layout"),
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut [f64]; 10] {
        [
            self.tf_w.as_slice_mut().expect("standard layout"),
            self.tf_b.as_slice_mut().expect("standard layout"),
            self.cat_embed.as_slice_mut().expect("standard layout"),
            self.sf_w.as_slice_mut().expect("standard layout"),
            self.sf_b.as_slice_mut().expect("standard layout"),
            self.ti_embed.as_slice_mut().expect("standard layout"),
            self.head_w.as_slice_mut().expect("standard layout"),
            self.head_b.as_slice_mut().expect("standard layout"),
            self.out_w.as_slice_mut().expect("standard layout"),
            self.out_b.as_slice_mut().expect("standard layout"),
        ]
    }

    fn shapes(&self) -> [Vec<usize>; 10] {
        [
            self.tf_w.shape().to_vec(),
            self.tf_b.shape().to_vec(),
            self.cat_embed.shape().to_vec(),
            self.sf_w.shape().to_vec(),
            self.sf_b.shape().to_vec(),
            self.ti_embed.shape().to_vec(),
            self.head_w.shape().to_vec(),
            self.head_b.shape().to_vec(),
            self.out_w.shape().to_vec(),
            self.out_b.shape().to_vec(),
        ]
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (dst, src) in self.groups_mut().into_iter().zip(other.groups()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn len(&self) -> usize {
        self.groups().iter().map(|g| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Model-ready form of [`TrajectoryFeatures`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoded {
    pub tf: [f64; TF_WIDTH],
    pub sf: [usize; TRAJECTORY_SLOTS],
    pub ti: [usize; TRAJECTORY_SLOTS],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub logits: [f64; 2],
    pub p0: f64,
    pub p1: f64,
}

fn softmax2(l0: f64, l1: f64) -> (f64, f64) {
    let m = l0.max(l1);
    let e0 = (l0 - m).exp();
    let e1 = (l1 - m).exp();
    let z = e0 + e1;
    (e0 / z, e1 / z)
}

struct Cache {
    x_tf: Array2<f64>,
    sf_mean: Array2<f64>,
    z: Array2<f64>,
    h: Array2<f64>,
    logits: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankerModel {
    config: ModelConfig,
    vocab: Vec<String>,
    vocab_index: HashMap<String, usize>,
    pub params: Params,
}

impl RerankerModel {
    /// Randomly initialized model over the given categories. The vocabulary
    /// is `padding`, the sorted categories, then an unknown-category token.
    pub fn new(config: ModelConfig, categories: &[String]) -> Self {
        let mut model = Self::zeros(config, categories);
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        let mut xavier = |a: &mut Array2<f64>| {
            let (rows, cols) = a.dim();
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            a.mapv_inplace(|_| rng.gen_range(-limit..limit));
        };
        xavier(&mut model.params.tf_w);
        xavier(&mut model.params.sf_w);
        xavier(&mut model.params.head_w);
        xavier(&mut model.params.out_w);
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0xe3b);
        model.params.cat_embed.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
        model.params.ti_embed.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
        model
    }

    /// Model with every parameter zero.
    pub fn zeros(config: ModelConfig, categories: &[String]) -> Self {
        let mut cats: Vec<String> = categories.to_vec();
        cats.sort();
        cats.dedup();
        let mut vocab = vec![PADDING_TOKEN.to_string()];
        vocab.extend(cats.into_iter().filter(|c| c != PADDING_TOKEN && c != UNKNOWN_TOKEN));
        vocab.push(UNKNOWN_TOKEN.to_string());
        let vocab_index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let params = Params::zeros(vocab.len(), config.embed_dim, config.hidden);
        Self {
            config,
            vocab,
            vocab_index,
            params,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn mask(&self) -> FeatureMask {
        self.config.mask
    }

    pub fn set_mask(&mut self, mask: FeatureMask) {
        self.config.mask = mask;
    }

    pub fn encode(&self, x: &TrajectoryFeatures) -> Encoded {
        let unk = self.vocab.len() - 1;
        let sf = std::array::from_fn(|i| match &x.sf[i] {
            None => 0,
            Some(c) => self.vocab_index.get(c).copied().unwrap_or(unk),
        });
        let ti = std::array::from_fn(|i| x.ti[i].index());
        Encoded { tf: x.tf, sf, ti }
    }

    fn forward_cache(&self, xs: &[Encoded]) -> Cache {
        let p = &self.params;
        let d = self.config.embed_dim;
        let b = xs.len();
        let mask = self.config.mask;

        let x_tf = Array2::from_shape_fn((b, TF_WIDTH), |(i, j)| xs[i].tf[j]);
        let tf_out = if mask.tf {
            x_tf.dot(&p.tf_w.t()) + &p.tf_b
        } else {
            Array2::zeros((b, d))
        };

        let mut sf_mean = Array2::<f64>::zeros((b, d));
        for (i, x) in xs.iter().enumerate() {
            let mut row = sf_mean.row_mut(i);
            for &tok in &x.sf {
                row += &p.cat_embed.row(tok);
            }
            row /= TRAJECTORY_SLOTS as f64;
        }
        let sf_out = if mask.sf {
            sf_mean.dot(&p.sf_w.t()) + &p.sf_b
        } else {
            Array2::zeros((b, d))
        };

        let mut ti_out = Array2::<f64>::zeros((b, TRAJECTORY_SLOTS * d));
        if mask.ti {
            for (i, x) in xs.iter().enumerate() {
                for (k, &id) in x.ti.iter().enumerate() {
                    ti_out.slice_mut(s![i, k * d..(k + 1) * d]).assign(&p.ti_embed.row(id));
                }
            }
        }

        let z = concatenate(Axis(1), &[sf_out.view(), tf_out.view(), ti_out.view()]).expect("matching rows");
        let act = self.config.activation;
        let h = (z.dot(&p.head_w.t()) + &p.head_b).mapv(|v| act.apply(v));
        let logits = h.dot(&p.out_w.t()) + &p.out_b;
        Cache {
            x_tf,
            sf_mean,
            z,
            h,
            logits,
        }
    }

    /// Backpropagates `dlogits` (B x 2). Returns parameter gradients and the
    /// gradient with respect to the tf inputs.
    fn backward(&self, xs: &[Encoded], cache: &Cache, dlogits: ArrayView2<f64>) -> (Params, Array2<f64>) {
        let p = &self.params;
        let d = self.config.embed_dim;
        let mask = self.config.mask;
        let act = self.config.activation;
        let mut g = p.zeros_like();

        g.out_w = dlogits.t().dot(&cache.h).as_standard_layout().into_owned();
        g.out_b = dlogits.sum_axis(Axis(0));
        let mut da = dlogits.dot(&p.out_w);
        ndarray::Zip::from(&mut da).and(&cache.h).for_each(|g, &y| *g *= act.grad_from_output(y));
        g.head_w = da.t().dot(&cache.z).as_standard_layout().into_owned();
        g.head_b = da.sum_axis(Axis(0));
        let dz = da.dot(&p.head_w);

        let dsf = dz.slice(s![.., 0..d]);
        let dtf = dz.slice(s![.., d..2 * d]);
        let dti = dz.slice(s![.., 2 * d..]);

        let mut dx_tf = Array2::zeros(cache.x_tf.dim());
        if mask.tf {
            g.tf_w = dtf.t().dot(&cache.x_tf).as_standard_layout().into_owned();
            g.tf_b = dtf.sum_axis(Axis(0));
            dx_tf = dtf.dot(&p.tf_w);
        }
        if mask.sf {
            g.sf_w = dsf.t().dot(&cache.sf_mean).as_standard_layout().into_owned();
            g.sf_b = dsf.sum_axis(Axis(0));
            let dmean = dsf.dot(&p.sf_w) / TRAJECTORY_SLOTS as f64;
            for (i, x) in xs.iter().enumerate() {
                for &tok in &x.sf {
                    let mut row = g.cat_embed.row_mut(tok);
                    row += &dmean.row(i);
                }
            }
        }
        if mask.ti {
            for (i, x) in xs.iter().enumerate() {
                for (k, &id) in x.ti.iter().enumerate() {
                    let mut row = g.ti_embed.row_mut(id);
                    row += &dti.slice(s![i, k * d..(k + 1) * d]);
                }
            }
        }
        (g, dx_tf)
    }

    pub fn predict_encoded(&self, xs: &[Encoded]) -> Vec<Prediction> {
        if xs.is_empty() {
            return Vec::new();
        }
        let cache = self.forward_cache(xs);
        cache
            .logits
            .rows()
            .into_iter()
            .map(|r| {
                let (p0, p1) = softmax2(r[0], r[1]);
                Prediction {
                    logits: [r[0], r[1]],
                    p0,
                    p1,
                }
            })
            .collect()
    }

    pub fn forward(&self, x: &TrajectoryFeatures) -> Prediction {
        self.predict_encoded(&[self.encode(x)])[0]
    }

    /// Summed cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad_encoded(&self, xs: &[Encoded], labels: &[bool]) -> (f64, Params) {
        assert_eq!(xs.len(), labels.len());
        assert!(!xs.is_empty(), "batch must be non-empty");
        let cache = self.forward_cache(xs);
        let mut loss = 0.0;
        let mut dlogits = Array2::<f64>::zeros((xs.len(), 2));
        for (i, &y) in labels.iter().enumerate() {
            let (l0, l1) = (cache.logits[[i, 0]], cache.logits[[i, 1]]);
            let m = l0.max(l1);
            let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
            let target = if y { l1 } else { l0 };
            loss += lse - target;
            let (p0, p1) = softmax2(l0, l1);
            dlogits[[i, 0]] = p0 - if y { 0.0 } else { 1.0 };
            dlogits[[i, 1]] = p1 - if y { 1.0 } else { 0.0 };
        }
        let (grads, _) = self.backward(xs, &cache, dlogits.view());
        (loss, grads)
    }

    pub fn loss_encoded(&self, xs: &[Encoded], labels: &[bool]) -> f64 {
        let cache = self.forward_cache(xs);
        labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let (l0, l1) = (cache.logits[[i, 0]], cache.logits[[i, 1]]);
                let m = l0.max(l1);
                let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
                lse - if y { l1 } else { l0 }
            })
            .sum()
    }

    /// `dp1 / dtf` for all four tf inputs.
    pub fn tf_gradient(&self, x: &TrajectoryFeatures) -> [f64; TF_WIDTH] {
        let xs = [self.encode(x)];
        let cache = self.forward_cache(&xs);
        let (p0, p1) = softmax2(cache.logits[[0, 0]], cache.logits[[0, 1]]);
        let s = p0 * p1;
        let dlogits = Array2::from_shape_vec((1, 2), vec![-s, s]).expect("shape");
        let (_, dx) = self.backward(&xs, &cache, dlogits.view());
        std::array::from_fn(|j| dx[[0, j]])
    }

    pub fn save<W: Write>(&self, out: W) -> Result<(), RerankerError> {
        let tensors = Params::GROUP_NAMES
            .iter()
            .zip(self.params.shapes())
            .zip(self.params.groups())
            .map(|((name, shape), data)| {
                (
                    name.to_string(),
                    Tensor {
                        shape,
                        data: data.to_vec(),
                    },
                )
            })
            .collect();
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tensors,
        };
        serde_json::to_writer(out, &ckpt).map_err(|e| RerankerError::Checkpoint(e.to_string()))
    }

    pub fn load<R: Read>(input: R) -> Result<Self, RerankerError> {
        let ckpt: Checkpoint = serde_json::from_reader(input).map_err(|e| RerankerError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(RerankerError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        if ckpt.vocab.first().map(String::as_str) != Some(PADDING_TOKEN)
            || ckpt.vocab.last().map(String::as_str) != Some(UNKNOWN_TOKEN)
        {
            return Err(RerankerError::Checkpoint("vocabulary must start with padding and end with <unk>".into()));
        }
        let cats = &ckpt.vocab[1..ckpt.vocab.len() - 1];
        let mut model = Self::zeros(ckpt.config, &cats.to_vec());
        if model.vocab != ckpt.vocab {
            return Err(RerankerError::Checkpoint("vocabulary is not sorted and unique".into()));
        }
        let shapes = model.params.shapes();
        for ((name, shape), dst) in Params::GROUP_NAMES.iter().zip(shapes).zip(model.params.groups_mut()) {
            let t = ckpt
                .tensors
                .get(*name)
                .ok_or_else(|| RerankerError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape != shape || t.data.len() != dst.len() {
                return Err(RerankerError::DimensionMismatch {
                    tensor: name.to_string(),
                    expected: shape,
                    found: t.shape.clone(),
                });
            }
            dst.copy_from_slice(&t.data);
        }
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    tensors: BTreeMap<String, Tensor>,
}
