use ndarray::{Array2, Axis};

use super::propagate::{Profiles, PropagationOutput};
use super::{FusionMode, ModelConfig, ModelError, ModelParams};
use crate::graph::{EntityId, KnowledgeGraph};

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

fn row(a: &Array2<f64>, i: usize) -> &[f64] {
    let d = a.ncols();
    &a.as_slice().expect("standard layout")[i * d..(i + 1) * d]
}

fn row_mut(a: &mut Array2<f64>, i: usize) -> &mut [f64] {
    let d = a.ncols();
    &mut a.as_slice_mut().expect("standard layout")[i * d..(i + 1) * d]
}

/// Backpropagates `dz` (gradient of the loss with respect to the final
/// representations) and `dq_extra` (gradient with respect to the projected
/// profiles from other loss terms) through the forward pass `out`.
pub fn backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    profiles: &Profiles,
    g: &KnowledgeGraph,
    out: &PropagationOutput,
    dz: &Array2<f64>,
    dq_extra: Option<&Array2<f64>>,
) -> Result<Gradients, ModelError> {
    if dz.dim() != out.z.dim() {
        return Err(ModelError::ShapeMismatch(format!(
            "dz is {:?}, expected {:?}",
            dz.dim(),
            out.z.dim()
        )));
    }
    let lam = cfg.lambda_p;
    let mut grads = params.zeros_like();
    let mut dq = match dq_extra {
        Some(d) => d.clone(),
        None => Array2::zeros(out.q.raw_dim()),
    };

    let ds = match cfg.fusion {
        FusionMode::AddWithInverse => {
            dq.scaled_add(-lam, dz);
            dz.clone()
        }
        FusionMode::MulWithInverse => {
            let div = out.q.mapv(|v| 1.0 + lam * v);
            let ds = dz / &div;
            dq.scaled_add(-lam, &(&ds * &out.z));
            ds
        }
        _ => dz.clone(),
    };

    let triples = g.triples();
    let scale = 1.0 / (cfg.dim as f64).sqrt();
    let mut g_cur = ds.clone();
    let mut dphi_frozen = vec![
        0.0;
        if cfg.frozen_attention {
            triples.len()
        } else {
            0
        }
    ];
    for l in (1..out.layers.len()).rev() {
        let x_prev = &out.layers[l - 1];
        let phi = out.layer_attention(l);
        let mut g_prev = ds.clone();
        let mut dphi_local = vec![
            0.0;
            if cfg.frozen_attention {
                0
            } else {
                triples.len()
            }
        ];
        let dphi = if cfg.frozen_attention {
            &mut dphi_frozen
        } else {
            &mut dphi_local
        };
        for h in 0..g.num_entities() {
            let ks = g.neighbor_triples(EntityId(h as u32));
            if ks.is_empty() {
                continue;
            }
            let inv = 1.0 / ks.len() as f64;
            let gh: Vec<f64> = row(&g_cur, h).iter().map(|v| v * inv).collect();
            if g.is_user(EntityId(h as u32)) {
                for &k in ks {
                    let t = triples[k as usize].tail.index();
                    for (o, v) in row_mut(&mut g_prev, t).iter_mut().zip(&gh) {
                        *o += v;
                    }
                }
            } else {
                for &k in ks {
                    let tr = &triples[k as usize];
                    let (r, t) = (tr.relation.index(), tr.tail.index());
                    let p = phi[k as usize];
                    let xt = row(x_prev, t);
                    let rel = row(&params.relation, r).to_vec();
                    let mut acc = 0.0;
                    for j in 0..gh.len() {
                        acc += gh[j] * rel[j] * xt[j];
                    }
                    dphi[k as usize] += acc;
                    for (j, o) in row_mut(&mut grads.relation, r).iter_mut().enumerate() {
                        *o += p * gh[j] * xt[j];
                    }
                    for (j, o) in row_mut(&mut g_prev, t).iter_mut().enumerate() {
                        *o += p * gh[j] * rel[j];
                    }
                }
            }
        }
        if !cfg.frozen_attention {
            attention_backward(
                params,
                g,
                x_prev,
                &out.head_proj[l - 1],
                &out.tail_proj[l - 1],
                phi,
                &dphi_local,
                scale,
                &mut grads,
                &mut g_prev,
            );
        }
        g_cur = g_prev;
    }
    if cfg.frozen_attention && out.layers.len() > 1 {
        attention_backward(
            params,
            g,
            &out.layers[0],
            &out.head_proj[0],
            &out.tail_proj[0],
            &out.attention[0],
            &dphi_frozen,
            scale,
            &mut grads,
            &mut g_cur,
        );
    }

    // Injection.
    let x = &params.entity;
    let qs = &out.q * lam;
    match cfg.fusion {
        FusionMode::AddWithInverse | FusionMode::AddWithoutInverse => {
            grads.entity += &g_cur;
            dq.scaled_add(lam, &g_cur);
        }
        FusionMode::MulWithInverse | FusionMode::MulWithoutInverse => {
            grads.entity += &(&g_cur * &out.q.mapv(|v| 1.0 + lam * v));
            dq.scaled_add(lam, &(&g_cur * x));
        }
        FusionMode::Concatenate => {
            let c = params.fusion.as_ref().expect("mixing matrix");
            let d = cfg.dim;
            let c1 = c.slice(ndarray::s![.., ..d]);
            let c2 = c.slice(ndarray::s![.., d..]);
            let gf = grads.fusion.as_mut().expect("mixing matrix gradient");
            gf.slice_mut(ndarray::s![.., ..d]).assign(&g_cur.t().dot(x));
            gf.slice_mut(ndarray::s![.., d..])
                .assign(&g_cur.t().dot(&qs));
            grads.entity += &g_cur.dot(&c1);
            dq.scaled_add(lam, &g_cur.dot(&c2));
        }
        FusionMode::AttentionFusion => {
            let w = params
                .fusion
                .as_ref()
                .expect("scoring vector")
                .row(0)
                .to_owned();
            let alphas = out.alphas.as_ref().expect("fusion weights");
            let mut dw = ndarray::Array1::<f64>::zeros(cfg.dim);
            for i in 0..x.nrows() {
                let gi = g_cur.row(i);
                let (xi, qi) = (x.row(i), qs.row(i));
                let (a1, a2) = (alphas[[i, 0]], alphas[[i, 1]]);
                let (da1, da2) = (gi.dot(&xi), gi.dot(&qi));
                let m = a1 * da1 + a2 * da2;
                let (ds1, ds2) = (a1 * (da1 - m), a2 * (da2 - m));
                grads.entity.row_mut(i).assign(&(&gi * a1 + &w * ds1));
                let dqs = &gi * a2 + &w * ds2;
                dq.row_mut(i).scaled_add(lam, &dqs);
                dw.scaled_add(ds1, &xi);
                dw.scaled_add(ds2, &qi);
            }
            grads
                .fusion
                .as_mut()
                .expect("scoring vector gradient")
                .row_mut(0)
                .assign(&dw);
        }
    }

    // Projection.
    if let Some(proj) = &out.projection {
        for (i, mut r) in dq.axis_iter_mut(Axis(0)).enumerate() {
            if !profiles.active[i] {
                r.fill(0.0);
            }
        }
        grads.proj_out_bias += &dq.sum_axis(Axis(0)).insert_axis(Axis(0));
        grads.proj_out += &proj.hidden.t().dot(&dq);
        let mut dh = dq.dot(&params.proj_out.t());
        let slope = cfg.leaky_slope;
        dh.zip_mut_with(&proj.pre, |g, &p| {
            if p <= 0.0 {
                *g *= slope;
            }
        });
        grads.proj_hidden_bias += &dh.sum_axis(Axis(0)).insert_axis(Axis(0));
        grads.proj_hidden += &profiles.matrix.t().dot(&dh);
    }

    if let Some((name, i, j)) = grads.first_non_finite() {
        return Err(ModelError::NonFinite(format!(
            "gradient of {name} at ({i}, {j})"
        )));
    }
    Ok(grads)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    params: &ModelParams,
    g: &KnowledgeGraph,
    x: &Array2<f64>,
    head_proj: &Array2<f64>,
    tail_proj: &Array2<f64>,
    phi: &[f64],
    dphi: &[f64],
    scale: f64,
    grads: &mut Gradients,
    dx: &mut Array2<f64>,
) {
    let triples = g.triples();
    let mut d_head = Array2::<f64>::zeros(head_proj.raw_dim());
    let mut d_tail = Array2::<f64>::zeros(tail_proj.raw_dim());
    for h in 0..g.num_entities() {
        let ks = g.neighbor_triples(EntityId(h as u32));
        if ks.is_empty() {
            continue;
        }
        let dot: f64 = ks.iter().map(|&k| phi[k as usize] * dphi[k as usize]).sum();
        for &k in ks {
            let c = phi[k as usize] * (dphi[k as usize] - dot) * scale;
            if c == 0.0 {
                continue;
            }
            let tr = &triples[k as usize];
            let (r, t) = (tr.relation.index(), tr.tail.index());
            let hp = row(head_proj, h);
            let tp = row(tail_proj, t);
            let rel = row(&params.relation, r);
            for (j, o) in row_mut(&mut d_head, h).iter_mut().enumerate() {
                *o += c * tp[j] * rel[j];
            }
            for (j, o) in row_mut(&mut d_tail, t).iter_mut().enumerate() {
                *o += c * hp[j] * rel[j];
            }
            for (j, o) in row_mut(&mut grads.relation, r).iter_mut().enumerate() {
                *o += c * hp[j] * tp[j];
            }
        }
    }
    grads.w_head += &x.t().dot(&d_head);
    grads.w_tail += &x.t().dot(&d_tail);
    *dx += &d_head.dot(&params.w_head.t());
    *dx += &d_tail.dot(&params.w_tail.t());
}
