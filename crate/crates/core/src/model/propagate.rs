use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::{FusionMode, ModelConfig, ModelError, ModelParams};
use crate::graph::{EntityId, KnowledgeGraph, Role};

/// Profile embeddings plus a mask of entities whose profile is in use.
/// Inactive rows contribute a zero projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Profiles {
    pub matrix: Array2<f64>,
    pub active: Vec<bool>,
}

impl Profiles {
    pub fn new(matrix: Array2<f64>) -> Self {
        let active = vec![true; matrix.nrows()];
        Self { matrix, active }
    }

    /// No profile for any entity.
    pub fn none(rows: usize, dim: usize) -> Self {
        Self {
            matrix: Array2::zeros((rows, dim)),
            active: vec![false; rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn deactivate(&mut self, e: EntityId) {
        self.active[e.index()] = false;
    }

    pub fn deactivate_role(&mut self, g: &KnowledgeGraph, role: Role) {
        for (i, r) in g.roles().iter().enumerate() {
            if *r == role {
                self.active[i] = false;
            }
        }
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.active
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Projection activations: `pre = P Ma + ba`, `hidden = leaky(pre)`,
/// `out = hidden Mb + bb` with inactive rows of `out` set to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub pre: Array2<f64>,
    pub hidden: Array2<f64>,
    pub out: Array2<f64>,
}

pub(crate) fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn project_profiles(
    params: &ModelParams,
    cfg: &ModelConfig,
    profiles: &Profiles,
) -> Projection {
    let pre = profiles.matrix.dot(&params.proj_hidden) + &params.proj_hidden_bias;
    let hidden = pre.mapv(|v| leaky(v, cfg.leaky_slope));
    let mut out = hidden.dot(&params.proj_out) + &params.proj_out_bias;
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        if !profiles.active[i] {
            row.fill(0.0);
        }
    }
    Projection { pre, hidden, out }
}

/// Projects a single profile embedding into the embedding space.
pub fn project_profile(
    params: &ModelParams,
    cfg: &ModelConfig,
    p: ArrayView1<f64>,
) -> Result<Array1<f64>, ModelError> {
    if p.len() != cfg.profile_dim {
        return Err(ModelError::ShapeMismatch(format!(
            "profile has {} values, expected {}",
            p.len(),
            cfg.profile_dim
        )));
    }
    let hidden = (p.dot(&params.proj_hidden) + params.proj_hidden_bias.row(0))
        .mapv(|v| leaky(v, cfg.leaky_slope));
    Ok(hidden.dot(&params.proj_out) + params.proj_out_bias.row(0))
}

pub struct Injection {
    pub x0: Array2<f64>,
    /// Attention fusion only: per-row weights of the embedding and the profile.
    pub alphas: Option<Array2<f64>>,
}

/// Combines entity embeddings `x` with projected profiles `q` into the
/// layer-0 input.
pub fn inject(
    params: &ModelParams,
    cfg: &ModelConfig,
    x: &Array2<f64>,
    q: &Array2<f64>,
) -> Injection {
    let lam = cfg.lambda_p;
    match cfg.fusion {
        FusionMode::AddWithInverse | FusionMode::AddWithoutInverse => Injection {
            x0: x + &(q * lam),
            alphas: None,
        },
        FusionMode::MulWithInverse | FusionMode::MulWithoutInverse => Injection {
            x0: x * &q.mapv(|v| 1.0 + lam * v),
            alphas: None,
        },
        FusionMode::Concatenate => {
            let c = params
                .fusion
                .as_ref()
                .expect("concatenate fusion needs a mixing matrix");
            let d = cfg.dim;
            let c1 = c.slice(ndarray::s![.., ..d]);
            let c2 = c.slice(ndarray::s![.., d..]);
            Injection {
                x0: x.dot(&c1.t()) + (q * lam).dot(&c2.t()),
                alphas: None,
            }
        }
        FusionMode::AttentionFusion => {
            let w = params
                .fusion
                .as_ref()
                .expect("attention fusion needs a scoring vector")
                .row(0)
                .to_owned();
            let n = x.nrows();
            let mut x0 = Array2::zeros(x.raw_dim());
            let mut alphas = Array2::zeros((n, 2));
            for i in 0..n {
                let xi = x.row(i);
                let qi = q.row(i).mapv(|v| v * lam);
                let s1 = xi.dot(&w);
                let s2 = qi.dot(&w);
                let m = s1.max(s2);
                let (e1, e2) = ((s1 - m).exp(), (s2 - m).exp());
                let (a1, a2) = (e1 / (e1 + e2), e2 / (e1 + e2));
                alphas[[i, 0]] = a1;
                alphas[[i, 1]] = a2;
                x0.row_mut(i).assign(&(&xi * a1 + &qi * a2));
            }
            Injection {
                x0,
                alphas: Some(alphas),
            }
        }
    }
}

fn row(a: &Array2<f64>, i: usize) -> &[f64] {
    let d = a.ncols();
    &a.as_slice().expect("standard layout")[i * d..(i + 1) * d]
}

pub(crate) struct AttentionCache {
    pub head_proj: Array2<f64>,
    pub tail_proj: Array2<f64>,
    pub phi: Vec<f64>,
}

pub(crate) fn attention_cached(
    params: &ModelParams,
    x: &Array2<f64>,
    g: &KnowledgeGraph,
) -> AttentionCache {
    let head_proj = x.dot(&params.w_head);
    let tail_proj = x.dot(&params.w_tail);
    let scale = 1.0 / (x.ncols() as f64).sqrt();
    let triples = g.triples();
    let mut phi = vec![0.0; triples.len()];
    for h in 0..g.num_entities() {
        let ks = g.neighbor_triples(EntityId(h as u32));
        if ks.is_empty() {
            continue;
        }
        let hp = row(&head_proj, h);
        let mut max = f64::NEG_INFINITY;
        for &k in ks {
            let t = &triples[k as usize];
            let tp = row(&tail_proj, t.tail.index());
            let rel = row(&params.relation, t.relation.index());
            let logit: f64 = hp
                .iter()
                .zip(tp)
                .zip(rel)
                .map(|((a, b), c)| a * b * c)
                .sum::<f64>()
                * scale;
            phi[k as usize] = logit;
            max = max.max(logit);
        }
        let mut sum = 0.0;
        for &k in ks {
            let e = (phi[k as usize] - max).exp();
            phi[k as usize] = e;
            sum += e;
        }
        for &k in ks {
            phi[k as usize] /= sum;
        }
    }
    AttentionCache {
        head_proj,
        tail_proj,
        phi,
    }
}

/// Attention weight of every triple, indexed like `g.triples()`. Weights of
/// each head's outgoing triples sum to one.
pub fn attention_scores(params: &ModelParams, x: &Array2<f64>, g: &KnowledgeGraph) -> Vec<f64> {
    attention_cached(params, x, g).phi
}

/// One propagation step. User heads average their neighbors; every other
/// head averages attention-weighted, relation-modulated neighbors. Heads
/// without neighbors get a zero row.
pub fn aggregate_layer(
    params: &ModelParams,
    x: &Array2<f64>,
    phi: &[f64],
    g: &KnowledgeGraph,
) -> Array2<f64> {
    let d = x.ncols();
    let triples = g.triples();
    let mut out = Array2::zeros(x.raw_dim());
    let out_slice = out.as_slice_mut().expect("standard layout");
    for h in 0..g.num_entities() {
        let ks = g.neighbor_triples(EntityId(h as u32));
        if ks.is_empty() {
            continue;
        }
        let inv = 1.0 / ks.len() as f64;
        let dst = &mut out_slice[h * d..(h + 1) * d];
        if g.is_user(EntityId(h as u32)) {
            for &k in ks {
                for (o, v) in dst.iter_mut().zip(row(x, triples[k as usize].tail.index())) {
                    *o += v * inv;
                }
            }
        } else {
            for &k in ks {
                let t = &triples[k as usize];
                let w = phi[k as usize] * inv;
                let rel = row(&params.relation, t.relation.index());
                for ((o, v), r) in dst.iter_mut().zip(row(x, t.tail.index())).zip(rel) {
                    *o += w * r * v;
                }
            }
        }
    }
    out
}

/// Removes the profile contribution from the summed layer outputs.
pub fn strip_profile(
    cfg: &ModelConfig,
    sum: &Array2<f64>,
    q: &Array2<f64>,
) -> Result<Array2<f64>, ModelError> {
    let lam = cfg.lambda_p;
    match cfg.fusion {
        FusionMode::AddWithInverse => Ok(sum - &(q * lam)),
        FusionMode::MulWithInverse => {
            let mut z = sum.clone();
            for ((i, j), v) in z.indexed_iter_mut() {
                let div = 1.0 + lam * q[[i, j]];
                if div.abs() < cfg.divisor_eps {
                    return Err(ModelError::NearZeroDivisor { entity: i, dim: j });
                }
                *v /= div;
            }
            Ok(z)
        }
        _ => Ok(sum.clone()),
    }
}

/// Forward pass with every intermediate needed for the backward pass.
pub struct PropagationOutput {
    /// Final representations.
    pub z: Array2<f64>,
    /// Sum of layer outputs before the profile is stripped.
    pub sum: Array2<f64>,
    /// Layer inputs and outputs; `layers[0]` is the injected input.
    pub layers: Vec<Array2<f64>>,
    /// Attention weights per computed layer (one entry when frozen).
    pub attention: Vec<Vec<f64>>,
    pub(crate) head_proj: Vec<Array2<f64>>,
    pub(crate) tail_proj: Vec<Array2<f64>>,
    /// Projected profiles (zeros when the projection was skipped).
    pub q: Array2<f64>,
    pub projection: Option<Projection>,
    pub alphas: Option<Array2<f64>>,
}

impl PropagationOutput {
    /// Attention weights used by layer `l` (1-based).
    pub fn layer_attention(&self, l: usize) -> &[f64] {
        if self.attention.len() == 1 {
            &self.attention[0]
        } else {
            &self.attention[l - 1]
        }
    }
}

fn check_inputs(
    params: &ModelParams,
    cfg: &ModelConfig,
    profiles: &Profiles,
    g: &KnowledgeGraph,
) -> Result<(), ModelError> {
    cfg.validate()?;
    params
        .check_shapes(cfg, g.num_entities(), g.num_relations())
        .map_err(ModelError::ShapeMismatch)?;
    if profiles.rows() != g.num_entities()
        || profiles.dim() != cfg.profile_dim
        || profiles.active.len() != profiles.rows()
    {
        return Err(ModelError::ShapeMismatch(format!(
            "profiles are {}x{}, expected {}x{}",
            profiles.rows(),
            profiles.dim(),
            g.num_entities(),
            cfg.profile_dim
        )));
    }
    Ok(())
}

/// Full forward pass. The projection is computed whenever it can affect the
/// output.
pub fn propagate(
    params: &ModelParams,
    cfg: &ModelConfig,
    profiles: &Profiles,
    g: &KnowledgeGraph,
) -> Result<PropagationOutput, ModelError> {
    propagate_with(params, cfg, profiles, g, false)
}

/// Forward pass; `force_projection` computes the projection even when the
/// injection strength is zero (the matching loss still needs it).
pub fn propagate_with(
    params: &ModelParams,
    cfg: &ModelConfig,
    profiles: &Profiles,
    g: &KnowledgeGraph,
    force_projection: bool,
) -> Result<PropagationOutput, ModelError> {
    check_inputs(params, cfg, profiles, g)?;
    let projection =
        (force_projection || cfg.lambda_p != 0.0).then(|| project_profiles(params, cfg, profiles));
    let q = match &projection {
        Some(p) => p.out.clone(),
        None => Array2::zeros(params.entity.raw_dim()),
    };
    let Injection { x0, alphas } = inject(params, cfg, &params.entity, &q);
    let mut layers = vec![x0];
    let mut attention = Vec::new();
    let mut head_proj = Vec::new();
    let mut tail_proj = Vec::new();
    for l in 1..=cfg.layers {
        let prev = &layers[l - 1];
        if !cfg.frozen_attention || l == 1 {
            let cache = attention_cached(params, prev, g);
            attention.push(cache.phi);
            head_proj.push(cache.head_proj);
            tail_proj.push(cache.tail_proj);
        }
        let phi = attention
            .last()
            .expect("attention computed for the first layer");
        let next = aggregate_layer(params, prev, phi, g);
        layers.push(next);
    }
    let mut sum = Array2::zeros(params.entity.raw_dim());
    for x in &layers {
        sum += x;
    }
    let z = strip_profile(cfg, &sum, &q)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("final representations".into()));
    }
    Ok(PropagationOutput {
        z,
        sum,
        layers,
        attention,
        head_proj,
        tail_proj,
        q,
        projection,
        alphas,
    })
}

fn expect_role(g: &KnowledgeGraph, e: EntityId, role: Role) -> Result<(), ModelError> {
    g.check_entity(e)
        .map_err(|err| ModelError::ShapeMismatch(err.to_string()))?;
    if g.role(e) != role {
        return Err(ModelError::RoleMismatch {
            label: g.entity_label(e).to_owned(),
            expected: role.as_str(),
            found: g.role(e).as_str(),
        });
    }
    Ok(())
}

/// Preference score of user `u` for item `v`: inner product of their final
/// representations.
pub fn score(
    z: &Array2<f64>,
    g: &KnowledgeGraph,
    u: EntityId,
    v: EntityId,
) -> Result<f64, ModelError> {
    expect_role(g, u, Role::User)?;
    expect_role(g, v, Role::Item)?;
    Ok(z.row(u.index()).dot(&z.row(v.index())))
}

/// Scores of user `u` against every item, in `g.items()` order.
pub fn score_all_items(
    z: &Array2<f64>,
    g: &KnowledgeGraph,
    u: EntityId,
) -> Result<Vec<f64>, ModelError> {
    expect_role(g, u, Role::User)?;
    let zu = z.row(u.index());
    Ok(g.items()
        .iter()
        .map(|v| zu.dot(&z.row(v.index())))
        .collect())
}
