//! Hand-worked forward-pass examples.

use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use pkgrec_core::graph::{EntityId, GraphBuilder, KnowledgeGraph};
use pkgrec_core::model::{
    aggregate_layer, attention_scores, inject, propagate, score, strip_profile, FusionMode,
    ModelConfig, ModelError, ModelParams, Profiles,
};

/// One item `i0` with two outgoing `rel` triples and no inverses.
fn fan() -> KnowledgeGraph {
    GraphBuilder::new()
        .users(["u0"])
        .items(["i0"])
        .triple("u0", "interact", "i0")
        .triple("i0", "rel", "a")
        .triple("i0", "rel", "b")
        .add_inverse(false)
        .build()
        .unwrap()
}

fn params_for(g: &KnowledgeGraph, d: usize) -> (ModelConfig, ModelParams) {
    let mut cfg = ModelConfig::new(d, d);
    cfg.lambda_p = 0.0;
    let params = ModelParams::init(&cfg, g.num_entities(), g.num_relations(), 1);
    (cfg, params)
}

fn id(g: &KnowledgeGraph, label: &str) -> usize {
    g.entity_id(label).unwrap().index()
}

#[test]
fn softmax_of_two_logits() {
    let g = fan();
    let (_, mut p) = params_for(&g, 2);
    p.w_head = Array2::eye(2);
    p.w_tail = Array2::eye(2);
    let rel = g.relation_id("rel").unwrap().index();
    p.relation.row_mut(rel).assign(&array![1.0, 1.0]);
    let mut x = Array2::zeros((g.num_entities(), 2));
    x.row_mut(id(&g, "i0")).assign(&array![1.0, 0.0]);
    x.row_mut(id(&g, "a")).assign(&array![1.0, 0.0]);
    x.row_mut(id(&g, "b")).assign(&array![0.0, 1.0]);
    let phi = attention_scores(&p, &x, &g);
    let i0 = g.entity_id("i0").unwrap();
    let ks = g.neighbor_triples(i0);
    // logits 1/sqrt(2) and 0
    let e = (1.0f64 / 2f64.sqrt()).exp();
    assert_abs_diff_eq!(phi[ks[0] as usize], e / (e + 1.0), epsilon = 1e-12);
    assert_abs_diff_eq!(phi[ks[0] as usize], 0.6698, epsilon = 1e-4);
    assert_abs_diff_eq!(phi[ks[1] as usize], 0.3302, epsilon = 1e-4);
    // The single interaction of u0 gets the whole weight.
    let ku = g.neighbor_triples(g.entity_id("u0").unwrap());
    assert_eq!(phi[ku[0] as usize], 1.0);
}

#[test]
fn equal_logits_split_evenly() {
    let g = fan();
    let (_, p) = params_for(&g, 3);
    let x = Array2::zeros((g.num_entities(), 3));
    let phi = attention_scores(&p, &x, &g);
    for &k in g.neighbor_triples(g.entity_id("i0").unwrap()) {
        assert_eq!(phi[k as usize], 0.5);
    }
}

#[test]
fn single_neighbor_aggregation_is_elementwise_product() {
    let g = GraphBuilder::new()
        .users(["u0"])
        .items(["i0"])
        .triple("u0", "interact", "i0")
        .triple("i0", "rel", "a")
        .add_inverse(false)
        .build()
        .unwrap();
    let (_, mut p) = params_for(&g, 2);
    p.relation
        .row_mut(g.relation_id("rel").unwrap().index())
        .assign(&array![2.0, 3.0]);
    let mut x = Array2::zeros((g.num_entities(), 2));
    x.row_mut(id(&g, "a")).assign(&array![1.0, -1.0]);
    x.row_mut(id(&g, "i0")).assign(&array![5.0, 5.0]);
    let phi = attention_scores(&p, &x, &g);
    let out = aggregate_layer(&p, &x, &phi, &g);
    assert_eq!(out.row(id(&g, "i0")).to_vec(), vec![2.0, -3.0]);
    // user head: plain mean of its single item
    assert_eq!(out.row(id(&g, "u0")).to_vec(), vec![5.0, 5.0]);
    // isolated tail gets nothing
    assert_eq!(out.row(id(&g, "a")).to_vec(), vec![0.0, 0.0]);
}

#[test]
fn user_with_two_items_takes_the_mean() {
    let g = GraphBuilder::new()
        .users(["u0"])
        .items(["i0", "i1"])
        .triple("u0", "interact", "i0")
        .triple("u0", "interact", "i1")
        .add_inverse(false)
        .build()
        .unwrap();
    let (_, p) = params_for(&g, 2);
    let mut x = Array2::zeros((3, 2));
    x.row_mut(1).assign(&array![1.0, 4.0]);
    x.row_mut(2).assign(&array![3.0, -2.0]);
    let phi = attention_scores(&p, &x, &g);
    let out = aggregate_layer(&p, &x, &phi, &g);
    assert_eq!(out.row(0).to_vec(), vec![2.0, 1.0]);
}

#[test]
fn score_is_a_dot_product() {
    let g = fan();
    let mut z = Array2::zeros((g.num_entities(), 2));
    z.row_mut(id(&g, "u0")).assign(&array![1.0, 2.0]);
    z.row_mut(id(&g, "i0")).assign(&array![3.0, -1.0]);
    let (u, i) = (g.entity_id("u0").unwrap(), g.entity_id("i0").unwrap());
    assert_eq!(score(&z, &g, u, i).unwrap(), 1.0);
    z.row_mut(id(&g, "i0")).assign(&array![-2.0, 1.0]);
    assert_eq!(score(&z, &g, u, i).unwrap(), 0.0);
    assert!(matches!(
        score(&z, &g, i, u),
        Err(ModelError::RoleMismatch { .. })
    ));
}

#[test]
fn additive_injection() {
    let mut cfg = ModelConfig::new(2, 2);
    cfg.lambda_p = 0.25;
    let p = ModelParams::init(&cfg, 1, 1, 0);
    let x = array![[1.0, 0.0]];
    let q = array![[0.0, 4.0]];
    assert_eq!(inject(&p, &cfg, &x, &q).x0, array![[1.0, 1.0]]);
    cfg.lambda_p = 0.0;
    for mode in FusionMode::ALL {
        if matches!(mode, FusionMode::AttentionFusion) {
            continue;
        }
        cfg.fusion = mode;
        let p = ModelParams::init(&cfg, 1, 1, 0);
        assert_eq!(inject(&p, &cfg, &x, &q).x0, x, "{mode}");
    }
}

#[test]
fn multiplicative_inverse_flags_near_zero_divisor() {
    let mut cfg = ModelConfig::new(2, 2);
    cfg.lambda_p = 0.25;
    cfg.fusion = FusionMode::MulWithInverse;
    let q = array![[0.5, 0.5], [1.0, -4.0]];
    let sum = array![[1.0, 1.0], [1.0, 1.0]];
    assert_eq!(
        strip_profile(&cfg, &sum, &q),
        Err(ModelError::NearZeroDivisor { entity: 1, dim: 1 })
    );
}

#[test]
fn zero_layers_returns_the_embeddings() {
    let g = fan();
    let mut cfg = ModelConfig::new(3, 4);
    cfg.layers = 0;
    cfg.lambda_p = 0.5;
    let p = ModelParams::init(&cfg, g.num_entities(), g.num_relations(), 9);
    let profiles = Profiles::new(Array2::from_shape_fn((g.num_entities(), 4), |(i, j)| {
        (i * 4 + j) as f64 / 7.0
    }));
    let out = propagate(&p, &cfg, &profiles, &g).unwrap();
    let dev = (&out.z - &p.entity)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(dev < 1e-12, "{dev}");
}

#[test]
fn isolated_entity_keeps_its_embedding() {
    let g = GraphBuilder::new()
        .users(["u0", "u1"])
        .items(["i0", "i1"])
        .triple("u0", "interact", "i0")
        .triple("i0", "genre", "g")
        .build()
        .unwrap();
    let iso = g.entity_id("u1").unwrap();
    assert_eq!(g.degree(iso), 0);
    let mut cfg = ModelConfig::new(4, 3);
    cfg.layers = 3;
    let p = ModelParams::init(&cfg, g.num_entities(), g.num_relations(), 2);
    let profiles = Profiles::new(Array2::from_elem((g.num_entities(), 3), 0.3));
    let out = propagate(&p, &cfg, &profiles, &g).unwrap();
    for e in [iso, EntityId(g.entity_id("i1").unwrap().0)] {
        for (a, b) in out.z.row(e.index()).iter().zip(p.entity.row(e.index())) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}

#[test]
fn projection_identity_case() {
    let mut cfg = ModelConfig::new(3, 3);
    cfg.hidden_dim = 3;
    let mut p = ModelParams::init(&cfg, 1, 1, 0);
    p.proj_hidden = Array2::eye(3);
    p.proj_out = Array2::eye(3);
    let v = array![0.5, 1.0, 2.0];
    let out = pkgrec_core::model::project_profile(&p, &cfg, v.view()).unwrap();
    assert_eq!(out, v);
    p.proj_hidden.fill(0.0);
    p.proj_out.fill(0.0);
    assert_eq!(
        pkgrec_core::model::project_profile(&p, &cfg, v.view()).unwrap(),
        array![0.0, 0.0, 0.0]
    );
}
