use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FusionMode, ModelConfig};
use crate::seed::stage_rng;

/// Every trainable tensor. Bias vectors are stored as `1 x n` matrices so
/// that optimizers and checkpoints treat all tensors alike.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `N x d` initial entity embeddings.
    pub entity: Array2<f64>,
    /// `|R| x d` relation embeddings.
    pub relation: Array2<f64>,
    /// `d x d` attention transform applied to the head.
    pub w_head: Array2<f64>,
    /// `d x d` attention transform applied to the tail.
    pub w_tail: Array2<f64>,
    /// `d_s x h` first projection layer.
    pub proj_hidden: Array2<f64>,
    pub proj_hidden_bias: Array2<f64>,
    /// `h x d` second projection layer.
    pub proj_out: Array2<f64>,
    pub proj_out_bias: Array2<f64>,
    /// Concatenate: `d x 2d` mixing matrix. Attention fusion: `1 x d` scoring
    /// vector. Absent for additive and multiplicative fusion.
    pub fusion: Option<Array2<f64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

impl ModelParams {
    /// Seeded initialization: embeddings uniform in `±1/sqrt(d)`, weight
    /// matrices uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(cfg: &ModelConfig, num_entities: usize, num_relations: usize, seed: u64) -> Self {
        let mut rng = stage_rng(seed, "init", 0);
        let d = cfg.dim;
        let emb = 1.0 / (d as f64).sqrt();
        let entity = uniform(num_entities, d, emb, &mut rng);
        let relation = uniform(num_relations, d, emb, &mut rng);
        let w_head = uniform(d, d, emb, &mut rng);
        let w_tail = uniform(d, d, emb, &mut rng);
        let proj_hidden = uniform(
            cfg.profile_dim,
            cfg.hidden_dim,
            1.0 / (cfg.profile_dim as f64).sqrt(),
            &mut rng,
        );
        let proj_out = uniform(
            cfg.hidden_dim,
            d,
            1.0 / (cfg.hidden_dim as f64).sqrt(),
            &mut rng,
        );
        let fusion = match cfg.fusion {
            FusionMode::Concatenate => {
                let mut c = Array2::zeros((d, 2 * d));
                for i in 0..d {
                    c[[i, i]] = 1.0;
                    c[[i, d + i]] = 1.0;
                }
                Some(c)
            }
            FusionMode::AttentionFusion => Some(uniform(1, d, emb, &mut rng)),
            _ => None,
        };
        Self {
            entity,
            relation,
            w_head,
            w_tail,
            proj_hidden,
            proj_hidden_bias: Array2::zeros((1, cfg.hidden_dim)),
            proj_out,
            proj_out_bias: Array2::zeros((1, d)),
            fusion,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        Self {
            entity: z(&self.entity),
            relation: z(&self.relation),
            w_head: z(&self.w_head),
            w_tail: z(&self.w_tail),
            proj_hidden: z(&self.proj_hidden),
            proj_hidden_bias: z(&self.proj_hidden_bias),
            proj_out: z(&self.proj_out),
            proj_out_bias: z(&self.proj_out_bias),
            fusion: self.fusion.as_ref().map(z),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)> {
        let mut v = vec![
            ("entity", &self.entity),
            ("relation", &self.relation),
            ("w_head", &self.w_head),
            ("w_tail", &self.w_tail),
            ("proj_hidden", &self.proj_hidden),
            ("proj_hidden_bias", &self.proj_hidden_bias),
            ("proj_out", &self.proj_out),
            ("proj_out_bias", &self.proj_out_bias),
        ];
        if let Some(f) = &self.fusion {
            v.push(("fusion", f));
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        let mut v = vec![
            ("entity", &mut self.entity),
            ("relation", &mut self.relation),
            ("w_head", &mut self.w_head),
            ("w_tail", &mut self.w_tail),
            ("proj_hidden", &mut self.proj_hidden),
            ("proj_hidden_bias", &mut self.proj_hidden_bias),
            ("proj_out", &mut self.proj_out),
            ("proj_out_bias", &mut self.proj_out_bias),
        ];
        if let Some(f) = &mut self.fusion {
            v.push(("fusion", f));
        }
        v
    }

    pub fn shapes(&self) -> Vec<TensorShape> {
        self.tensors()
            .into_iter()
            .map(|(name, t)| TensorShape {
                name: name.to_owned(),
                rows: t.nrows(),
                cols: t.ncols(),
            })
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Name and position of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<(&'static str, usize, usize)> {
        for (name, t) in self.tensors() {
            if let Some(((i, j), _)) = t.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Some((name, i, j));
            }
        }
        None
    }

    /// Checks tensor shapes against the configuration and graph size.
    pub fn check_shapes(
        &self,
        cfg: &ModelConfig,
        num_entities: usize,
        num_relations: usize,
    ) -> Result<(), String> {
        let d = cfg.dim;
        let expect = [
            ("entity", (num_entities, d)),
            ("relation", (num_relations, d)),
            ("w_head", (d, d)),
            ("w_tail", (d, d)),
            ("proj_hidden", (cfg.profile_dim, cfg.hidden_dim)),
            ("proj_hidden_bias", (1, cfg.hidden_dim)),
            ("proj_out", (cfg.hidden_dim, d)),
            ("proj_out_bias", (1, d)),
        ];
        for ((name, t), (ename, shape)) in self.tensors().into_iter().zip(expect) {
            debug_assert_eq!(name, ename);
            if t.dim() != shape {
                return Err(format!("{name} is {:?}, expected {shape:?}", t.dim()));
            }
        }
        let fusion_shape = match cfg.fusion {
            FusionMode::Concatenate => Some((d, 2 * d)),
            FusionMode::AttentionFusion => Some((1, d)),
            _ => None,
        };
        match (self.fusion.as_ref().map(|f| f.dim()), fusion_shape) {
            (a, b) if a == b => Ok(()),
            (a, b) => Err(format!("fusion tensor is {a:?}, expected {b:?}")),
        }
    }
}
