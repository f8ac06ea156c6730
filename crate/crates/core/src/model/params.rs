//! Named parameter sets and their seeded initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::rng_from;
use crate::tensor::Tensor;

use super::{ArchConfig, IN_CHANNELS};

/// The seven disjoint trainable parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetName {
    Enc,
    Frm,
    SrmReal,
    SrmFake,
    Bc,
    Dep,
    Disc,
}

pub const ALL_SETS: &[SetName] = &[
    SetName::Enc,
    SetName::Frm,
    SetName::SrmReal,
    SetName::SrmFake,
    SetName::Bc,
    SetName::Dep,
    SetName::Disc,
];

impl SetName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SetName::Enc => "enc",
            SetName::Frm => "frm",
            SetName::SrmReal => "srm_real",
            SetName::SrmFake => "srm_fake",
            SetName::Bc => "bc",
            SetName::Dep => "dep",
            SetName::Disc => "disc",
        }
    }

    pub fn parse(s: &str) -> Option<SetName> {
        ALL_SETS.iter().copied().find(|n| n.as_str() == s)
    }
}

impl std::fmt::Display for SetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered named arrays of one component.
#[derive(Debug, Clone)]
pub struct ParamSet {
    arrays: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new(arrays: Vec<(String, Tensor)>) -> Self {
        ParamSet { arrays }
    }

    pub fn arrays(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.arrays.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn arrays_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.arrays.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.arrays[idx].1
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.arrays[idx].1
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.arrays
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn numel(&self) -> usize {
        self.arrays.iter().map(|(_, t)| t.numel()).sum()
    }
}

fn he_normal(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid normal");
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

/// Two-layer head: `fc1` random, `fc2` zero so the head starts at its neutral
/// output (sigmoid 0.5 / uniform softmax).
fn head(c_in: usize, hidden: usize, out: usize, rng: &mut impl Rng) -> Vec<(String, Tensor)> {
    vec![
        ("fc1.w".into(), he_normal(&[c_in, hidden], c_in, rng)),
        ("fc1.b".into(), Tensor::zeros(&[hidden])),
        ("fc2.w".into(), Tensor::zeros(&[hidden, out])),
        ("fc2.b".into(), Tensor::zeros(&[out])),
    ]
}

pub(super) fn init_set(arch: &ArchConfig, name: SetName, seed: u64) -> ParamSet {
    let mut rng = rng_from(seed);
    let c = arch.feature_channels();
    let (fh, fw) = arch.feature_hw();
    let arrays = match name {
        SetName::Enc => {
            let mut arrays = Vec::new();
            let mut c_in = IN_CHANNELS;
            for (i, &c_out) in arch.enc_channels.iter().enumerate() {
                let fan_in = 3 * 3 * c_in;
                arrays.push((
                    format!("conv{}.w", i),
                    he_normal(&[3, 3, c_in, c_out], fan_in, &mut rng),
                ));
                arrays.push((format!("conv{}.b", i), Tensor::zeros(&[c_out])));
                c_in = c_out;
            }
            arrays
        }
        SetName::Frm => head(c, arch.frm_hidden, c, &mut rng),
        SetName::SrmReal | SetName::SrmFake => head(c, arch.head_hidden, 1, &mut rng),
        // the classifier reads the full spatial map; pooling would discard
        // the high-frequency cues the depth-shaped features carry
        SetName::Bc => head(fh * fw * c, arch.head_hidden, 1, &mut rng),
        SetName::Disc => head(c, arch.head_hidden, arch.num_domains, &mut rng),
        SetName::Dep => {
            let flat = fh * fw * c;
            let out = arch.depth_hw.0 * arch.depth_hw.1;
            head(flat, arch.dep_hidden, out, &mut rng)
        }
    };
    ParamSet::new(arrays)
}
