//! Shared fixtures and a dense reference implementation of the layer.
//!
//! The reference works on full `n × n` adjacency masks built from the triple
//! list and never looks at the graph's neighbor index, so it shares no code
//! path with the per-node implementation.

#![allow(dead_code)]

use brgcn::diffnum::Tensor;
use brgcn::hetgraph::HeteroGraph;
use brgcn::layer::{LayerConfig, LayerParams, RelationMatrices, Variant};
use brgcn::synthetic::random_graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub struct OracleOut {
    pub h: Mat,
    /// `gamma[r][i][j]`, zero outside the mask.
    pub gamma: Vec<Mat>,
    /// `psi[i][r][r']`, zero outside `R_i × R_i`.
    pub psi: Vec<Mat>,
    /// `present[i][r]` iff node `i` has an `r` out-edge.
    pub present: Vec<Vec<bool>>,
}

fn matvec(w: &Mat, x: &[f64]) -> Vec<f64> {
    w.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn relu(v: &[f64], on: bool) -> Vec<f64> {
    v.iter().map(|x| if on { x.max(0.0) } else { *x }).collect()
}

/// Softmax of `logits` restricted to `mask`; zero elsewhere.
fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let m = logits.iter().zip(mask).filter(|p| *p.1).map(|p| *p.0).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().zip(mask).map(|(x, &k)| if k { (x - m).exp() } else { 0.0 }).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| if s > 0.0 { x / s } else { 0.0 }).collect()
}

/// Dense per-relation matrices; basis coefficients are expanded here rather
/// than through the library.
fn relation_mats(layer: &LayerParams, m: &RelationMatrices) -> Vec<Mat> {
    let (din, dout) = (layer.config.d_in, layer.config.d_out);
    match m {
        RelationMatrices::Dense(ws) => ws.iter().map(to_mat).collect(),
        RelationMatrices::Basis(c) => {
            let bases = layer.bases.as_ref().unwrap();
            (0..layer.config.num_relations)
                .map(|r| {
                    (0..dout)
                        .map(|o| {
                            (0..din)
                                .map(|k| (0..layer.config.num_bases).map(|b| c.get2(r, b) * bases.get2(b, o * din + k)).sum())
                                .collect()
                        })
                        .collect()
                })
                .collect()
        }
    }
}

pub fn oracle_layer(layer: &LayerParams, h: &Tensor, graph: &HeteroGraph) -> OracleOut {
    let cfg = &layer.config;
    let (n, nr, din) = (graph.num_nodes(), cfg.num_relations, cfg.d_in);
    let h = to_mat(h);
    let mut adj = vec![vec![vec![false; n]; n]; nr];
    for t in graph.triples() {
        adj[t.rel][t.head][t.tail] = true;
    }
    let present: Vec<Vec<bool>> = (0..n).map(|i| (0..nr).map(|r| adj[r][i].iter().any(|&x| x)).collect()).collect();

    // Node level: one dense n × n weight matrix per relation.
    let mut gamma = Vec::with_capacity(nr);
    let mut z = Vec::with_capacity(nr);
    for r in 0..nr {
        let hp: Mat = match &layer.projection {
            Some(p) => h.iter().map(|x| matvec(&to_mat(&p[r]), x)).collect(),
            None => h.clone(),
        };
        let g: Mat = (0..n)
            .map(|i| match (&layer.attention, cfg.variant) {
                (Some(a), Variant::Full | Variant::NodeOnly) => {
                    let a = a[r].data();
                    let logits: Vec<f64> = (0..n)
                        .map(|j| {
                            let e = dot(&a[..din], &hp[i]) + dot(&a[din..], &hp[j]);
                            if e > 0.0 { e } else { cfg.leaky_slope * e }
                        })
                        .collect();
                    masked_softmax(&logits, &adj[r][i])
                }
                _ => masked_softmax(&vec![0.0; n], &adj[r][i]),
            })
            .collect();
        let zr: Mat = (0..n).map(|i| (0..din).map(|k| (0..n).map(|j| g[i][j] * hp[j][k]).sum()).collect()).collect();
        gamma.push(g);
        z.push(zr);
    }

    let w_self = to_mat(&layer.w_self);
    let value = relation_mats(layer, &layer.value);
    let mut out = Vec::with_capacity(n);
    let mut psi = Vec::with_capacity(n);
    for i in 0..n {
        let self_term = matvec(&w_self, &h[i]);
        let rels: Vec<usize> = (0..nr).filter(|&r| present[i][r]).collect();
        let v: Vec<Vec<f64>> = (0..nr).map(|r| matvec(&value[r], &z[r][i])).collect();
        let mut p = vec![vec![0.0; nr]; nr];
        let hi = match cfg.variant {
            Variant::Full | Variant::RelationOnly => {
                let query = relation_mats(layer, layer.query.as_ref().unwrap());
                let key = relation_mats(layer, layer.key.as_ref().unwrap());
                let q: Vec<Vec<f64>> = (0..nr).map(|r| matvec(&query[r], &z[r][i])).collect();
                let k: Vec<Vec<f64>> = (0..nr).map(|r| matvec(&key[r], &z[r][i])).collect();
                let mut acc = vec![0.0; cfg.d_out];
                for &r in &rels {
                    let logits: Vec<f64> = (0..nr).map(|s| dot(&q[r], &k[s])).collect();
                    p[r] = masked_softmax(&logits, &present[i]);
                    let mut mixed = self_term.clone();
                    for s in 0..nr {
                        mixed = add(&mixed, &v[s].iter().map(|x| p[r][s] * x).collect::<Vec<_>>());
                    }
                    acc = add(&acc, &relu(&mixed, cfg.output_relu));
                }
                acc
            }
            Variant::NodeOnly => rels.iter().fold(relu(&self_term, cfg.output_relu), |acc, &r| add(&acc, &v[r])),
            Variant::RgcnBaseline => relu(&rels.iter().fold(self_term.clone(), |acc, &r| add(&acc, &v[r])), cfg.output_relu),
        };
        out.push(hi);
        psi.push(p);
    }
    OracleOut { h: out, gamma, psi, present }
}

/// A small random layer instance: graph, features and parameters.
pub struct Instance {
    pub graph: HeteroGraph,
    pub h: Tensor,
    pub layer: LayerParams,
}

pub fn random_features(rng: &mut impl Rng, n: usize, d: usize) -> Tensor {
    Tensor::new(vec![n, d], (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// At most `max_nodes` nodes and `max_relations` relations, any variant,
/// with or without basis decomposition and input projection.
pub fn random_instance(rng: &mut ChaCha8Rng, max_nodes: usize, max_relations: usize) -> Instance {
    let n = rng.gen_range(1..=max_nodes);
    let nr = rng.gen_range(1..=max_relations);
    let p = rng.gen_range(0.05..0.6);
    let graph = random_graph(n, nr, p, rng);
    let din = rng.gen_range(1..=4);
    let dout = rng.gen_range(1..=4);
    let mut cfg = LayerConfig::new(din, dout, nr);
    cfg.variant = Variant::ALL[rng.gen_range(0..4)];
    cfg.num_bases = if rng.gen_bool(0.5) { 0 } else { rng.gen_range(1..=3) };
    cfg.input_projection = rng.gen_bool(0.3);
    cfg.leaky_slope = rng.gen_range(0.0..0.9);
    cfg.output_relu = rng.gen_bool(0.7);
    let layer = LayerParams::init(cfg, rng).unwrap();
    let h = random_features(rng, n, din);
    Instance { graph, h, layer }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff(a: &Tensor, b: &Mat) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in b.iter().enumerate() {
        for (x, y) in a.row(i).iter().zip(row) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}
