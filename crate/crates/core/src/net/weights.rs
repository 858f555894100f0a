//! Named parameter tensors of the network and their on-disk form.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::ArchConfig;
use crate::container::Container;
use crate::error::{Error, Result};
use crate::features::NormStats;

pub const WEIGHTS_KIND: &str = "fovnet_weights";

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Running batchnorm statistics are stored here too but are not learned.
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BnIds {
    pub gamma: usize,
    pub beta: usize,
    pub mean: usize,
    pub var: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SpatialIds {
    pub depthwise: usize,
    pub pointwise: usize,
    pub bn: BnIds,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RefIds {
    pub kernel: usize,
    pub bn: BnIds,
}

/// Gate order everywhere is (r, z, h).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GruIds {
    pub w: [usize; 3],
    pub u: [usize; 3],
    pub b_i: [usize; 3],
    pub b_h: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamIds {
    pub in_mu: usize,
    pub in_sigma: usize,
    pub out_mu: usize,
    pub out_sigma: usize,
    pub spatial: Vec<SpatialIds>,
    pub reference: Vec<RefIds>,
    pub gru: Vec<GruIds>,
    pub head_w: usize,
    pub head_b: usize,
}

impl ParamIds {
    fn resolve(params: &[Param], arch: &ArchConfig) -> Self {
        let id = |name: String| {
            params
                .iter()
                .position(|p| p.name == name)
                .unwrap_or_else(|| panic!("parameter `{name}` missing from plan"))
        };
        let bn = |prefix: String| BnIds {
            gamma: id(format!("{prefix}.gamma")),
            beta: id(format!("{prefix}.beta")),
            mean: id(format!("{prefix}.running_mean")),
            var: id(format!("{prefix}.running_var")),
        };
        Self {
            in_mu: id("emb.in_mu".into()),
            in_sigma: id("emb.in_sigma".into()),
            out_mu: id("emb.out_mu".into()),
            out_sigma: id("emb.out_sigma".into()),
            spatial: (0..arch.spatial.channels.len())
                .map(|l| SpatialIds {
                    depthwise: id(format!("spatial.{l}.depthwise")),
                    pointwise: id(format!("spatial.{l}.pointwise")),
                    bn: bn(format!("spatial.{l}.bn")),
                })
                .collect(),
            reference: (0..arch.reference.channels.len())
                .map(|l| RefIds {
                    kernel: id(format!("ref.{l}.kernel")),
                    bn: bn(format!("ref.{l}.bn")),
                })
                .collect(),
            gru: (0..arch.gru.layers)
                .map(|l| GruIds {
                    w: ["w_r", "w_z", "w_h"].map(|g| id(format!("gru.{l}.{g}"))),
                    u: ["u_r", "u_z", "u_h"].map(|g| id(format!("gru.{l}.{g}"))),
                    b_i: ["b_ir", "b_iz", "b_ih"].map(|g| id(format!("gru.{l}.{g}"))),
                    b_h: ["b_hr", "b_hz", "b_hh"].map(|g| id(format!("gru.{l}.{g}"))),
                })
                .collect(),
            head_w: id("head.weight".into()),
            head_b: id("head.bias".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    arch: ArchConfig,
    params: Vec<Param>,
    pub(crate) ids: ParamIds,
    pub norm: NormStats,
}

/// Gradient buffers aligned with [`NetworkWeights::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(w: &NetworkWeights) -> Self {
        Self {
            tensors: w.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(0.0));
    }

    pub fn get<'a>(&'a self, w: &NetworkWeights, name: &str) -> Option<&'a [f64]> {
        w.index_of(name).map(|i| self.tensors[i].as_slice())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|g| g.is_finite())
    }
}

impl NetworkWeights {
    /// All-zero weights with unit embeddings scales and unit running variances.
    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let params: Vec<Param> = arch
            .param_shapes()
            .into_iter()
            .map(|(name, shape, trainable)| {
                let n = shape.iter().product();
                let fill = if name.ends_with("running_var") { 1.0 } else { 0.0 };
                Param {
                    name,
                    shape,
                    data: vec![fill; n],
                    trainable,
                }
            })
            .collect();
        let ids = ParamIds::resolve(&params, arch);
        Ok(Self {
            arch: arch.clone(),
            params,
            ids,
            norm: NormStats::identity(arch.input.bands),
        })
    }

    /// Seeded initialization: uniform(±1/sqrt(fan_in)) for kernels and
    /// recurrent tensors, unit batchnorm scales, identity embeddings.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = arch.gru.hidden as f64;
        for p in &mut w.params {
            let name = p.name.as_str();
            let bound = if name.ends_with("_sigma") || name.ends_with(".gamma") {
                p.data.fill(1.0);
                continue;
            } else if name.ends_with("_mu") || name.ends_with(".beta") || !p.trainable {
                continue;
            } else if name.ends_with(".depthwise") {
                1.0 / ((p.shape[1] * p.shape[2]) as f64).sqrt()
            } else if name.ends_with(".pointwise") {
                1.0 / (p.shape[0] as f64).sqrt()
            } else if name.ends_with(".kernel") {
                1.0 / ((p.shape[0] * p.shape[1]) as f64).sqrt()
            } else {
                1.0 / hidden.sqrt()
            };
            p.data.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
        }
        Ok(w)
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.index_of(name).map(|i| self.params[i].data.as_slice())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        self.index_of(name).map(move |i| &mut self.params[i].data)
    }

    pub(crate) fn t(&self, id: usize) -> &[f64] {
        &self.params[id].data
    }

    pub(crate) fn t_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.params[id].data
    }

    /// Number of learnable scalars (running statistics excluded).
    pub fn num_learnable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.meta.insert("kind".into(), WEIGHTS_KIND.into());
        c.meta.insert("arch".into(), self.arch.to_toml_string());
        for p in &self.params {
            c.push_f32(p.name.clone(), &p.shape, &p.data);
        }
        let b = [self.norm.bands()];
        c.push_f32("norm.spatial_mean", &b, &self.norm.spatial_mean);
        c.push_f32("norm.spatial_std", &b, &self.norm.spatial_std);
        c.push_f32("norm.ref_mean", &b, &self.norm.ref_mean);
        c.push_f32("norm.ref_std", &b, &self.norm.ref_std);
        c
    }

    /// Rebuilds weights from a container. Shapes are checked against `arch`,
    /// or against the architecture recorded in the file when `arch` is `None`.
    pub fn from_container(c: &Container, arch: Option<&ArchConfig>) -> Result<Self> {
        if c.meta.get("kind").map(String::as_str) != Some(WEIGHTS_KIND) {
            return Err(Error::Container("not a network weights file".into()));
        }
        let arch = match (arch, c.meta.get("arch")) {
            (Some(a), _) => a.clone(),
            (None, Some(text)) => ArchConfig::from_toml_str(text)?,
            (None, None) => ArchConfig::shipped(),
        };
        let mut w = Self::zeros(&arch)?;
        for p in &mut w.params {
            p.data = c.expect(&p.name, &p.shape)?.data.to_f64();
        }
        let b = [arch.input.bands];
        let norm = |name: &str| -> Result<Vec<f64>> { Ok(c.expect(name, &b)?.data.to_f64()) };
        w.norm = NormStats {
            spatial_mean: norm("norm.spatial_mean")?,
            spatial_std: norm("norm.spatial_std")?,
            ref_mean: norm("norm.ref_mean")?,
            ref_std: norm("norm.ref_std")?,
        };
        for p in w.params.iter().filter(|p| p.name.ends_with("running_var")) {
            if p.data.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Container(format!("`{}` has a non-positive entry", p.name)));
            }
        }
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?, None)
    }

    pub fn load_for(path: impl AsRef<Path>, arch: &ArchConfig) -> Result<Self> {
        Self::from_container(&Container::load(path)?, Some(arch))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learnable_count_matches_plan() {
        let w = NetworkWeights::zeros(&ArchConfig::shipped()).unwrap();
        assert_eq!(w.num_learnable(), 198_304);
    }

    #[test]
    fn init_is_seeded() {
        let arch = ArchConfig::shipped();
        let a = NetworkWeights::init(&arch, 7).unwrap();
        let b = NetworkWeights::init(&arch, 7).unwrap();
        let c = NetworkWeights::init(&arch, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn container_round_trip_is_bitwise_after_f32() {
        let arch = ArchConfig::shipped();
        let mut w = NetworkWeights::init(&arch, 1).unwrap();
        w.norm.spatial_mean[3] = -2.5;
        let once = NetworkWeights::from_container(&w.to_container(), None).unwrap();
        let twice = NetworkWeights::from_container(&once.to_container(), None).unwrap();
        assert_eq!(once, twice);
        for (p, q) in w.params().iter().zip(once.params()) {
            for (&x, &y) in p.data.iter().zip(&q.data) {
                assert_eq!((x as f32) as f64, y);
            }
        }
        assert_eq!(once.norm.spatial_mean[3], -2.5);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let arch = ArchConfig::shipped();
        let w = NetworkWeights::init(&arch, 1).unwrap();
        let mut c = w.to_container();
        let t = c.tensors.iter_mut().find(|t| t.name == "head.weight").unwrap();
        t.shape = vec![64, 96];
        assert!(NetworkWeights::from_container(&c, None).is_err());
        let mut bigger = arch.clone();
        bigger.gru.hidden = 128;
        assert!(NetworkWeights::from_container(&w.to_container(), Some(&bigger)).is_err());
    }
}
