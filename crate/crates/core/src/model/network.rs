//! The dual-branch network assembly on the autodiff tape.

use std::sync::Arc;

use ndarray::Array2;

use crate::autodiff::{Graph, Var};

use super::features::PatchFeatureMap;
use super::{layer_pairing, ModelConfig, ModelError, ParamStore};

/// The dual-branch denoiser: configuration, parameters, and precomputed
/// patchify index maps.
#[derive(Debug, Clone)]
pub struct DualBranchModel {
    config: ModelConfig,
    store: ParamStore,
    geo_gather: Arc<Vec<usize>>,
    geo_scatter: Arc<Vec<usize>>,
    mask_gather: Arc<Vec<usize>>,
    mask_scatter: Arc<Vec<usize>>,
}

/// Leaf vars for every parameter, in store order.
pub(crate) struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub(crate) fn var_ids(&self) -> &[Var] {
        &self.vars
    }
}

/// On-tape outputs of one forward pass.
pub(crate) struct ForwardVars {
    pub v_geo: Var,
    pub v_masks: Vec<Var>,
}

pub(crate) struct AttnVars {
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
    bo: Var,
}

impl DualBranchModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let store = ParamStore::init(&config, seed)?;
        Self::from_parts(config, store)
    }

    pub fn from_parts(config: ModelConfig, store: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        let (geo_gather, geo_scatter) = geo_patch_indices(config.r, config.geo_patch);
        let (mask_gather, mask_scatter) = mask_patch_indices(config.m, config.mask_patch);
        Ok(Self {
            config,
            store,
            geo_gather: Arc::new(geo_gather),
            geo_scatter: Arc::new(geo_scatter),
            mask_gather: Arc::new(mask_gather),
            mask_scatter: Arc::new(mask_scatter),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub(crate) fn bind(&self, g: &mut Graph) -> BoundParams {
        let vars = self.store.iter().map(|(_, v)| g.leaf(v.clone())).collect();
        BoundParams { vars }
    }

    pub(crate) fn pv(&self, bound: &BoundParams, name: &str) -> Var {
        bound.vars[self
            .store
            .index_of(name)
            .unwrap_or_else(|_| panic!("parameter {name} missing"))]
    }

    fn attn_vars(&self, bound: &BoundParams, prefix: &str) -> AttnVars {
        AttnVars {
            wq: self.pv(bound, &format!("{prefix}.wq")),
            bq: self.pv(bound, &format!("{prefix}.bq")),
            wk: self.pv(bound, &format!("{prefix}.wk")),
            bk: self.pv(bound, &format!("{prefix}.bk")),
            wv: self.pv(bound, &format!("{prefix}.wv")),
            bv: self.pv(bound, &format!("{prefix}.bv")),
            wo: self.pv(bound, &format!("{prefix}.wo")),
            bo: self.pv(bound, &format!("{prefix}.bo")),
        }
    }

    /// Layer norm with learned gain/bias.
    fn ln(&self, g: &mut Graph, bound: &BoundParams, prefix: &str, x: Var) -> Var {
        let normed = g.layer_norm(x, 1e-6);
        let gained = g.mul_row(normed, self.pv(bound, &format!("{prefix}.g")));
        g.add_row(gained, self.pv(bound, &format!("{prefix}.b")))
    }

    /// Fuses per-patch image and hand features with the two-layer MLP.
    fn fuse_on_graph(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        img: &Array2<f64>,
        hand: &Array2<f64>,
    ) -> Result<Var, ModelError> {
        let patches = self.config.g * self.config.g;
        if img.nrows() != patches || hand.nrows() != patches {
            return Err(ModelError::GridMismatch {
                expected: patches,
                got: img.nrows(),
            });
        }
        let vi = g.leaf(img.clone());
        let vh = g.leaf(hand.clone());
        let cat = g.concat_cols(&[vi, vh]);
        let h1 = g.matmul(cat, self.pv(bound, "fuse.w1"));
        let h1 = g.add_row(h1, self.pv(bound, "fuse.b1"));
        let h1 = g.silu(h1);
        let h2 = g.matmul(h1, self.pv(bound, "fuse.w2"));
        Ok(g.add_row(h2, self.pv(bound, "fuse.b2")))
    }

    /// Public fusion entry point: maps raw per-frame (image, hand) features
    /// to the fused `d`-channel conditioning map using current parameters.
    pub fn fuse_hand_image(
        &self,
        img: &[Array2<f64>],
        hand: &[Array2<f64>],
    ) -> Result<PatchFeatureMap, ModelError> {
        if img.len() != hand.len() || img.is_empty() {
            return Err(ModelError::NoFrames);
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let mut frames = Vec::with_capacity(img.len());
        for (i, h) in img.iter().zip(hand) {
            let v = self.fuse_on_graph(&mut g, &bound, i, h)?;
            frames.push(g.value(v).clone());
        }
        PatchFeatureMap::new(frames, self.config.g)
    }

    /// Softmax fusion weights from per-frame pooled conditioning features.
    fn fusion_weights_on_graph(&self, g: &mut Graph, bound: &BoundParams, fused: &[Var]) -> Var {
        let wf = self.pv(bound, "fusion.w");
        let bf = self.pv(bound, "fusion.b");
        let scores: Vec<Var> = fused
            .iter()
            .map(|&f| {
                let pooled = g.mean_rows(f);
                let s = g.matmul(pooled, wf);
                g.add(s, bf)
            })
            .collect();
        let row = g.concat_cols(&scores);
        g.softmax(row)
    }

    /// Numeric fusion weights for a fused conditioning map; always a simplex.
    pub fn compute_fusion_weights(&self, fused: &PatchFeatureMap) -> Result<Vec<f64>, ModelError> {
        if fused.n_frames() == 0 {
            return Err(ModelError::NoFrames);
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let vars: Vec<Var> = fused.frames.iter().map(|f| g.leaf(f.clone())).collect();
        let w = self.fusion_weights_on_graph(&mut g, &bound, &vars);
        Ok(g.value(w).row(0).to_vec())
    }

    /// One pre-norm transformer block of the geometry branch.
    ///
    /// `mask_feats` are the paired-depth mask tokens per frame; the
    /// cross-attention outputs are combined with the softmax fusion weights.
    fn geo_block(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        j: usize,
        y: Var,
        mask_feats: &[Var],
        weights: Var,
    ) -> Var {
        let prefix = format!("geo.blk{j}");
        let q1 = self.ln(g, bound, &format!("{prefix}.ln1"), y);
        let sa = attention(g, q1, q1, &self.attn_vars(bound, &format!("{prefix}.sa")), self.config.heads);
        let y1 = g.add(y, sa);

        let q2 = self.ln(g, bound, &format!("{prefix}.ln2"), y1);
        let ca_params = self.attn_vars(bound, &format!("{prefix}.ca"));
        let per_frame: Vec<Var> = mask_feats
            .iter()
            .map(|&x| {
                let kv = self.ln(g, bound, &format!("{prefix}.ln_kv"), x);
                attention(g, q2, kv, &ca_params, self.config.heads)
            })
            .collect();
        let ca = g.weighted_sum(&per_frame, weights);
        let y2 = g.add(y1, ca);

        let f = self.ln(g, bound, &format!("{prefix}.ln3"), y2);
        let ff = self.feed_forward(g, bound, &prefix, f);
        g.add(y2, ff)
    }

    /// One pre-norm transformer block of the mask branch (parameters shared
    /// across frames); cross-attends to the paired geometry tokens.
    fn mask_block(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        i: usize,
        x: Var,
        geo_tokens: Var,
    ) -> Var {
        let prefix = format!("mask.blk{i}");
        let q1 = self.ln(g, bound, &format!("{prefix}.ln1"), x);
        let sa = attention(g, q1, q1, &self.attn_vars(bound, &format!("{prefix}.sa")), self.config.heads);
        let x1 = g.add(x, sa);

        let q2 = self.ln(g, bound, &format!("{prefix}.ln2"), x1);
        let kv = self.ln(g, bound, &format!("{prefix}.ln_kv"), geo_tokens);
        let ca = attention(g, q2, kv, &self.attn_vars(bound, &format!("{prefix}.ca")), self.config.heads);
        let x2 = g.add(x1, ca);

        let f = self.ln(g, bound, &format!("{prefix}.ln3"), x2);
        let ff = self.feed_forward(g, bound, &prefix, f);
        g.add(x2, ff)
    }

    fn feed_forward(&self, g: &mut Graph, bound: &BoundParams, prefix: &str, x: Var) -> Var {
        let h = g.matmul(x, self.pv(bound, &format!("{prefix}.ff.w1")));
        let h = g.add_row(h, self.pv(bound, &format!("{prefix}.ff.b1")));
        let h = g.silu(h);
        let o = g.matmul(h, self.pv(bound, &format!("{prefix}.ff.w2")));
        g.add_row(o, self.pv(bound, &format!("{prefix}.ff.b2")))
    }

    /// Full dual-branch forward on an existing graph.
    ///
    /// `geo_latent` is `(r^3, 1)`, each mask latent `(m^2, 1)`; per-frame
    /// conditioning is given as raw stub-encoder outputs. Returns velocity
    /// predictions for both branches.
    pub(crate) fn forward_on_graph(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        img_feats: &[Array2<f64>],
        hand_feats: &[Array2<f64>],
        geo_latent: &Array2<f64>,
        mask_latents: &[Array2<f64>],
        t: f64,
    ) -> Result<ForwardVars, ModelError> {
        let cfg = &self.config;
        let n = img_feats.len();
        if n == 0 {
            return Err(ModelError::NoFrames);
        }
        if hand_feats.len() != n || mask_latents.len() != n {
            return Err(ModelError::ShapeMismatch {
                what: "frame counts",
                expected: vec![n],
                got: vec![hand_feats.len(), mask_latents.len()],
            });
        }
        let r3 = cfg.r * cfg.r * cfg.r;
        if geo_latent.dim() != (r3, 1) {
            return Err(ModelError::ShapeMismatch {
                what: "geometry latent",
                expected: vec![r3, 1],
                got: vec![geo_latent.nrows(), geo_latent.ncols()],
            });
        }
        let m2 = cfg.m * cfg.m;
        for ml in mask_latents {
            if ml.dim() != (m2, 1) {
                return Err(ModelError::ShapeMismatch {
                    what: "mask latent",
                    expected: vec![m2, 1],
                    got: vec![ml.nrows(), ml.ncols()],
                });
            }
        }

        // Conditioning: fuse, then fusion weights.
        let fused: Vec<Var> = img_feats
            .iter()
            .zip(hand_feats)
            .map(|(i, h)| self.fuse_on_graph(g, bound, i, h))
            .collect::<Result<_, _>>()?;
        let weights = self.fusion_weights_on_graph(g, bound, &fused);

        let time_row = g.leaf(time_embedding(t, cfg.d));

        // Geometry tokens.
        let geo_pv = cfg.geo_patch.pow(3);
        let vg = g.leaf(geo_latent.clone());
        let gp = g.gather(vg, self.geo_gather.clone(), cfg.geo_tokens(), geo_pv);
        let ge = g.matmul(gp, self.pv(bound, "geo.embed.w"));
        let ge = g.add_row(ge, self.pv(bound, "geo.embed.b"));
        let ge = g.add(ge, self.pv(bound, "geo.pos"));
        let mut y = g.add_row(ge, time_row);

        // Mask tokens per frame (conditioning added patch-aligned).
        let mask_pv = cfg.mask_patch.pow(2);
        let mut xs: Vec<Var> = Vec::with_capacity(n);
        for (ml, &fz) in mask_latents.iter().zip(&fused) {
            let vm = g.leaf(ml.clone());
            let mp = g.gather(vm, self.mask_gather.clone(), cfg.mask_tokens(), mask_pv);
            let me = g.matmul(mp, self.pv(bound, "mask.embed.w"));
            let me = g.add_row(me, self.pv(bound, "mask.embed.b"));
            let me = g.add(me, self.pv(bound, "mask.pos"));
            let me = g.add(me, fz);
            xs.push(g.add_row(me, time_row));
        }

        // Interleaved schedule: each branch reads the other at paired depth.
        // Snapshot k holds the state after k blocks of that branch.
        let pair_geo = layer_pairing(cfg.geo_blocks, cfg.mask_blocks);
        let pair_mask = layer_pairing(cfg.mask_blocks, cfg.geo_blocks);
        let mut y_states: Vec<Var> = vec![y];
        let mut x_states: Vec<Vec<Var>> = vec![xs.clone()];

        #[derive(Clone, Copy)]
        enum Event {
            Mask(usize),
            Geo(usize),
        }
        let mut events: Vec<(usize, u8, Event)> = (0..cfg.mask_blocks)
            .map(|i| (i * cfg.geo_blocks, 0u8, Event::Mask(i)))
            .chain((0..cfg.geo_blocks).map(|j| (j * cfg.mask_blocks, 1u8, Event::Geo(j))))
            .collect();
        events.sort_by_key(|&(key, kind, _)| (key, kind));

        for (_, _, ev) in events {
            match ev {
                Event::Mask(i) => {
                    let y_ref = y_states[pair_mask[i]];
                    let new_xs: Vec<Var> = xs
                        .iter()
                        .map(|&x| self.mask_block(g, bound, i, x, y_ref))
                        .collect();
                    for (f, &x) in new_xs.iter().enumerate() {
                        self.check_finite(g, x, &format!("mask block {i} frame {f}"))?;
                    }
                    xs = new_xs;
                    x_states.push(xs.clone());
                }
                Event::Geo(j) => {
                    let x_ref = &x_states[pair_geo[j]];
                    y = self.geo_block(g, bound, j, y, x_ref, weights);
                    self.check_finite(g, y, &format!("geometry block {j}"))?;
                    y_states.push(y);
                }
            }
        }

        // Output heads back to latent shape.
        let yl = self.ln(g, bound, "geo.head.ln", y);
        let yh = g.matmul(yl, self.pv(bound, "geo.head.w"));
        let yh = g.add_row(yh, self.pv(bound, "geo.head.b"));
        let v_geo = g.gather(yh, self.geo_scatter.clone(), r3, 1);

        let mut v_masks = Vec::with_capacity(n);
        for &x in &xs {
            let xl = self.ln(g, bound, "mask.head.ln", x);
            let xh = g.matmul(xl, self.pv(bound, "mask.head.w"));
            let xh = g.add_row(xh, self.pv(bound, "mask.head.b"));
            v_masks.push(g.gather(xh, self.mask_scatter.clone(), m2, 1));
        }

        Ok(ForwardVars { v_geo, v_masks })
    }

    fn check_finite(&self, g: &Graph, v: Var, stage: &str) -> Result<(), ModelError> {
        if g.value(v).iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite {
                stage: stage.to_string(),
            });
        }
        Ok(())
    }

    /// Numeric forward: velocity predictions for both branches.
    pub fn forward(
        &self,
        img_feats: &[Array2<f64>],
        hand_feats: &[Array2<f64>],
        geo_latent: &Array2<f64>,
        mask_latents: &[Array2<f64>],
        t: f64,
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>), ModelError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let out = self.forward_on_graph(
            &mut g,
            &bound,
            img_feats,
            hand_feats,
            geo_latent,
            mask_latents,
            t,
        )?;
        Ok((
            g.value(out.v_geo).clone(),
            out.v_masks.iter().map(|&v| g.value(v).clone()).collect(),
        ))
    }
}

/// Standard scaled dot-product multi-head attention with per-head column
/// splits; `q_in` is `(Tq, d)`, `kv_in` is `(Tk, d)`.
pub(crate) fn attention(
    g: &mut Graph,
    q_in: Var,
    kv_in: Var,
    p: &AttnVars,
    heads: usize,
) -> Var {
    let d = g.value(q_in).ncols();
    debug_assert_eq!(d % heads, 0);
    let dh = d / heads;
    let q = g.matmul(q_in, p.wq);
    let q = g.add_row(q, p.bq);
    let k = g.matmul(kv_in, p.wk);
    let k = g.add_row(k, p.bk);
    let v = g.matmul(kv_in, p.wv);
    let v = g.add_row(v, p.bv);

    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (c0, c1) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, c0, c1);
        let kh = g.slice_cols(k, c0, c1);
        let vh = g.slice_cols(v, c0, c1);
        let kt = g.transpose(kh);
        let logits = g.matmul(qh, kt);
        let scaled = g.scale(logits, 1.0 / (dh as f64).sqrt());
        let attn = g.softmax(scaled);
        head_outs.push(g.matmul(attn, vh));
    }
    let cat = g.concat_cols(&head_outs);
    let out = g.matmul(cat, p.wo);
    g.add_row(out, p.bo)
}

/// Sinusoidal embedding of the path time, added to every token.
pub(crate) fn time_embedding(t: f64, d: usize) -> Array2<f64> {
    assert!(d % 2 == 0, "embedding width must be even");
    let half = d / 2;
    let mut row = Array2::zeros((1, d));
    for k in 0..half {
        let freq = 10000f64.powf(-(k as f64) / half as f64);
        let arg = 1000.0 * t * freq;
        row[(0, 2 * k)] = arg.sin();
        row[(0, 2 * k + 1)] = arg.cos();
    }
    row
}

/// Gather/scatter index maps between the flat `(r^3, 1)` latent (x-fastest)
/// and `(tokens, patch_volume)` patch layout.
fn geo_patch_indices(r: usize, p: usize) -> (Vec<usize>, Vec<usize>) {
    let np = r / p;
    let pv = p * p * p;
    let tokens = np * np * np;
    let mut gather = vec![0usize; tokens * pv];
    let mut scatter = vec![0usize; r * r * r];
    for pz in 0..np {
        for py in 0..np {
            for px in 0..np {
                let token = px + np * (py + np * pz);
                for oz in 0..p {
                    for oy in 0..p {
                        for ox in 0..p {
                            let col = ox + p * (oy + p * oz);
                            let (x, y, z) = (px * p + ox, py * p + oy, pz * p + oz);
                            let flat = x + r * (y + r * z);
                            gather[token * pv + col] = flat;
                            scatter[flat] = token * pv + col;
                        }
                    }
                }
            }
        }
    }
    (gather, scatter)
}

/// Same for the `(m^2, 1)` mask latent (row-major, `y * m + x`); token rows
/// are `py * (m/p) + px`, matching the conditioning grid layout.
fn mask_patch_indices(m: usize, p: usize) -> (Vec<usize>, Vec<usize>) {
    let np = m / p;
    let pv = p * p;
    let tokens = np * np;
    let mut gather = vec![0usize; tokens * pv];
    let mut scatter = vec![0usize; m * m];
    for py in 0..np {
        for px in 0..np {
            let token = py * np + px;
            for oy in 0..p {
                for ox in 0..p {
                    let col = oy * p + ox;
                    let (x, y) = (px * p + ox, py * p + oy);
                    let flat = y * m + x;
                    gather[token * pv + col] = flat;
                    scatter[flat] = token * pv + col;
                }
            }
        }
    }
    (gather, scatter)
}
