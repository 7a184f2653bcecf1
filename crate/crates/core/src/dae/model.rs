//! Discriminative autoencoder: patch tokenization, masked transformer
//! encoding with dual Gaussian heads, and a restoration decoder.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{fps, knn_group, PointCloud, Vec3};
use crate::nnet::{
    gelu, gelu_backward, sinusoidal_features, BlockCache, Grads, LayerNorm, Linear, LnCache,
    ParamSet, SetPool, SetPoolCache, Tensor, TransformerBlock,
};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DaeConfig {
    pub n_patch: usize,
    pub k_neighbors: usize,
    /// Token feature width.
    pub model_dim: usize,
    pub latent_dim: usize,
    pub n_encoder: usize,
    pub n_decoder: usize,
    pub heads: usize,
    /// Feed-forward expansion inside transformer blocks.
    pub ff_mult: usize,
    pub tokenizer_hidden: usize,
    /// Decoder output point count.
    pub n_restore: usize,
    pub decode_hidden: usize,
    /// Sinusoidal frequencies per coordinate for positional embeddings.
    pub pos_freq: usize,
    pub mask_ratio: f64,
    /// Weight init seed.
    pub init_seed: u64,
}

impl Default for DaeConfig {
    fn default() -> Self {
        Self {
            n_patch: 64,
            k_neighbors: 32,
            model_dim: 128,
            latent_dim: 64,
            n_encoder: 4,
            n_decoder: 2,
            heads: 4,
            ff_mult: 4,
            tokenizer_hidden: 64,
            n_restore: 2048,
            decode_hidden: 256,
            pos_freq: 6,
            mask_ratio: 0.6,
            init_seed: 0,
        }
    }
}

impl DaeConfig {
    pub fn pos_dim(&self) -> usize {
        3 * 2 * self.pos_freq
    }
}

/// Patch geometry prepared for the encoder. Token features are computed by
/// the model at encode time (they depend on the weights); this carrier holds
/// only geometry and flags, so it can be cached across training epochs.
#[derive(Debug, Clone)]
pub struct TokenizedCloud {
    /// Per token: local point coordinates [k_neighbors, 3], centered on the
    /// patch center.
    pub patch_points: Vec<Tensor>,
    /// Patch centers (FPS picks).
    pub positions: Vec<Vec3>,
    /// Token overlaps the task region.
    pub task_flags: Vec<bool>,
    /// Token survives masking (all true before `mask_tokens`).
    pub visible_mask: Vec<bool>,
}

impl TokenizedCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.visible_mask[i]).collect()
    }
}

/// Splits a cloud into FPS + KNN patches. Deterministic: FPS always seeds
/// from index 0.
pub fn tokenize(
    cloud: &PointCloud,
    task_indices: &[usize],
    n_patch: usize,
    k_neighbors: usize,
) -> Result<TokenizedCloud> {
    let centers = fps(cloud, n_patch.min(cloud.len()), 0)?;
    let patches = knn_group(cloud, &centers, k_neighbors.min(cloud.len()))?;
    let task_set: std::collections::HashSet<usize> = task_indices.iter().copied().collect();
    let mut patch_points = Vec::with_capacity(centers.len());
    let mut task_flags = Vec::with_capacity(centers.len());
    for (center, group) in patches.centers.iter().zip(&patches.groups) {
        let mut data = Vec::with_capacity(group.len() * 3);
        for &i in group {
            let local = cloud.points()[i] - center;
            data.extend_from_slice(&[local.x, local.y, local.z]);
        }
        patch_points.push(Tensor::from_vec(&[group.len(), 3], data)?);
        task_flags.push(group.iter().any(|i| task_set.contains(i)));
    }
    Ok(TokenizedCloud {
        patch_points,
        positions: patches.centers,
        task_flags,
        visible_mask: vec![true; centers.len()],
    })
}

/// Masks floor(ratio * non-task-token-count) uniformly chosen non-task
/// tokens. Task tokens are never masked.
pub fn mask_tokens(tc: &TokenizedCloud, ratio: f64, seed: u64) -> Result<TokenizedCloud> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid("mask ratio must be in [0, 1)"));
    }
    let mut out = tc.clone();
    out.visible_mask = vec![true; tc.len()];
    let mut non_task: Vec<usize> = (0..tc.len()).filter(|&i| !tc.task_flags[i]).collect();
    let n_mask = (ratio * non_task.len() as f64).floor() as usize;
    let mut rng = rng_from_seed(seed);
    non_task.shuffle(&mut rng);
    for &i in non_task.iter().take(n_mask) {
        out.visible_mask[i] = false;
    }
    // Task tokens must always stay visible.
    debug_assert!(out
        .visible_mask
        .iter()
        .zip(&out.task_flags)
        .all(|(v, t)| *v || !*t));
    Ok(out)
}

/// Per-dimension Gaussian parameters from the encoder heads.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    pub mu: Vec<f64>,
    /// Strictly positive (exp of the half-log-variance head).
    pub sigma: Vec<f64>,
}

/// Trainable state plus architecture handles.
pub struct DaeModel {
    pub cfg: DaeConfig,
    pub params: ParamSet,
    tokenizer: SetPool,
    enc_pos: Linear,
    encoder: Vec<TransformerBlock>,
    enc_norm: LayerNorm,
    mu_head: Linear,
    sigma_head: Linear,
    dec_pos: Linear,
    decoder: Vec<TransformerBlock>,
    dec_norm: LayerNorm,
    dec_fc1: Linear,
    dec_fc2: Linear,
}

impl DaeModel {
    pub fn new(cfg: DaeConfig) -> Result<Self> {
        if cfg.n_encoder < 1 || cfg.n_decoder < 1 {
            return Err(Error::invalid("encoder/decoder need at least one block"));
        }
        let mut rng = rng_from_seed(cfg.init_seed);
        let mut ps = ParamSet::new();
        let d = cfg.model_dim;
        let tokenizer = SetPool::init(&mut ps, "tok", 3, cfg.tokenizer_hidden, d, &mut rng)?;
        let enc_pos = Linear::init(&mut ps, "enc_pos", cfg.pos_dim(), d, &mut rng)?;
        let encoder = (0..cfg.n_encoder)
            .map(|i| TransformerBlock::init(&mut ps, &format!("enc{i}"), d, cfg.heads, cfg.ff_mult, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let enc_norm = LayerNorm::init(&mut ps, "enc_norm", d)?;
        let mu_head = Linear::init(&mut ps, "mu_head", d, cfg.latent_dim, &mut rng)?;
        let sigma_head = Linear::init(&mut ps, "sigma_head", d, cfg.latent_dim, &mut rng)?;
        let dec_pos = Linear::init(&mut ps, "dec_pos", cfg.pos_dim(), d, &mut rng)?;
        let decoder = (0..cfg.n_decoder)
            .map(|i| TransformerBlock::init(&mut ps, &format!("dec{i}"), d, cfg.heads, cfg.ff_mult, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let dec_norm = LayerNorm::init(&mut ps, "dec_norm", d)?;
        let dec_fc1 = Linear::init(&mut ps, "dec_fc1", d, cfg.decode_hidden, &mut rng)?;
        let dec_fc2 = Linear::init(&mut ps, "dec_fc2", cfg.decode_hidden, cfg.n_restore * 3, &mut rng)?;
        Ok(Self {
            cfg,
            params: ps,
            tokenizer,
            enc_pos,
            encoder,
            enc_norm,
            mu_head,
            sigma_head,
            dec_pos,
            decoder,
            dec_norm,
            dec_fc1,
            dec_fc2,
        })
    }

    fn pos_features(&self, positions: &[Vec3], ids: &[usize]) -> Tensor {
        let pd = self.cfg.pos_dim();
        let mut t = Tensor::zeros(&[ids.len(), pd]);
        for (r, &i) in ids.iter().enumerate() {
            let p = positions[i];
            let f = sinusoidal_features(&[p.x, p.y, p.z], self.cfg.pos_freq);
            t.row_mut(r).copy_from_slice(&f);
        }
        t
    }

    /// Attention over visible tokens only; latent = mean pool of the final
    /// normalized token features.
    pub fn encode(&self, ps: &ParamSet, tc: &TokenizedCloud) -> Result<EncodeOutput> {
        let visible = tc.visible_indices();
        if visible.is_empty() {
            return Err(Error::InvalidState("no visible tokens to encode".into()));
        }
        let t_len = visible.len();
        let d = self.cfg.model_dim;
        let mut x0 = Tensor::zeros(&[t_len, d]);
        let mut sp_caches = Vec::with_capacity(t_len);
        for (r, &i) in visible.iter().enumerate() {
            let (feat, cache) = self.tokenizer.forward(ps, &tc.patch_points[i]);
            x0.row_mut(r).copy_from_slice(&feat);
            sp_caches.push(cache);
        }
        let pos_in = self.pos_features(&tc.positions, &visible);
        let pos_emb = self.enc_pos.forward(ps, &pos_in);
        x0.add_assign(&pos_emb);

        let mut x = x0;
        let mut blocks = Vec::with_capacity(self.encoder.len());
        for block in &self.encoder {
            let (y, cache) = block.forward(ps, &x);
            blocks.push(cache);
            x = y;
        }
        let (features, norm_cache) = self.enc_norm.forward(ps, &x);

        let mut latent = vec![0.0; d];
        for r in 0..t_len {
            for (l, v) in latent.iter_mut().zip(features.row(r)) {
                *l += v;
            }
        }
        for l in &mut latent {
            *l /= t_len as f64;
        }
        let lat_in = Tensor::from_vec(&[1, d], latent.clone())?;
        let mu = self.mu_head.forward(ps, &lat_in).data;
        let half_logvar = self.sigma_head.forward(ps, &lat_in).data;
        let sigma: Vec<f64> = half_logvar.iter().map(|h| h.exp()).collect();

        Ok(EncodeOutput {
            visible,
            features,
            latent,
            stats: LatentStats { mu, sigma },
            cache: EncodeCache {
                sp_caches,
                pos_in,
                blocks,
                norm_cache,
                lat_in,
                half_logvar,
            },
        })
    }

    /// Backward through the encoder. `d_features` aligns with the encode
    /// output rows; `d_mu` / `d_half_logvar` feed the heads (pass zeros when
    /// a term does not contribute).
    pub fn encode_backward(
        &self,
        ps: &ParamSet,
        grads: &mut Grads,
        tc: &TokenizedCloud,
        out: &EncodeOutput,
        d_features: Option<&Tensor>,
        d_mu: &[f64],
        d_half_logvar: &[f64],
    ) {
        let t_len = out.visible.len();
        let d = self.cfg.model_dim;
        let cache = &out.cache;

        let d_mu_t = Tensor::from_vec(&[1, self.cfg.latent_dim], d_mu.to_vec()).unwrap();
        let d_h_t =
            Tensor::from_vec(&[1, self.cfg.latent_dim], d_half_logvar.to_vec()).unwrap();
        let mut d_lat = self.mu_head.backward(ps, grads, &cache.lat_in, &d_mu_t);
        d_lat.add_assign(&self.sigma_head.backward(ps, grads, &cache.lat_in, &d_h_t));

        // Mean pool: every token row receives d_lat / T.
        let mut df = Tensor::zeros(&[t_len, d]);
        if let Some(dfeat) = d_features {
            df.add_assign(dfeat);
        }
        for r in 0..t_len {
            let row = df.row_mut(r);
            for (v, g) in row.iter_mut().zip(&d_lat.data) {
                *v += g / t_len as f64;
            }
        }

        let mut dx = self.enc_norm.backward(ps, grads, &cache.norm_cache, &df);
        for (block, block_cache) in self.encoder.iter().zip(cache.blocks.iter()).rev() {
            dx = block.backward(ps, grads, block_cache, &dx);
        }

        // Split into tokenizer and positional-embedding paths.
        self.enc_pos.backward(ps, grads, &cache.pos_in, &dx);
        for (r, &i) in out.visible.iter().enumerate() {
            let dfeat: Vec<f64> = dx.row(r).to_vec();
            self.tokenizer
                .backward(ps, grads, &tc.patch_points[i], &cache.sp_caches[r], &dfeat);
        }
    }

    /// Decodes token features (+ fresh positional embedding) into a cloud of
    /// exactly `n_restore` points.
    pub fn decode(
        &self,
        ps: &ParamSet,
        features: &Tensor,
        positions: &[Vec3],
        position_ids: &[usize],
    ) -> Result<(PointCloud, DecodeCache)> {
        let (t_len, d) = features.dims2();
        debug_assert_eq!(t_len, position_ids.len());
        let pos_in = self.pos_features(positions, position_ids);
        let pos_emb = self.dec_pos.forward(ps, &pos_in);
        let mut x = features.clone();
        x.add_assign(&pos_emb);

        let mut blocks = Vec::with_capacity(self.decoder.len());
        for block in &self.decoder {
            let (y, cache) = block.forward(ps, &x);
            blocks.push(cache);
            x = y;
        }
        let (normed, norm_cache) = self.dec_norm.forward(ps, &x);
        // Aggregate token features, then emit all points in one shot.
        let mut pooled = vec![0.0; d];
        for r in 0..t_len {
            for (p, v) in pooled.iter_mut().zip(normed.row(r)) {
                *p += v;
            }
        }
        for p in &mut pooled {
            *p /= t_len as f64;
        }
        let pooled_t = Tensor::from_vec(&[1, d], pooled)?;
        let u1 = self.dec_fc1.forward(ps, &pooled_t);
        let g = gelu(&u1);
        let flat = self.dec_fc2.forward(ps, &g);
        flat.assert_finite("decoder output")?;
        let points: Vec<Vec3> = flat
            .data
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect();
        let cloud = PointCloud::new(points)?;
        Ok((
            cloud,
            DecodeCache {
                pos_in,
                blocks,
                norm_cache,
                t_len,
                pooled_t,
                u1,
                g,
            },
        ))
    }

    /// Backward through the decoder; returns the gradient w.r.t. the input
    /// token features.
    pub fn decode_backward(
        &self,
        ps: &ParamSet,
        grads: &mut Grads,
        cache: &DecodeCache,
        d_points: &[Vec3],
    ) -> Tensor {
        let d = self.cfg.model_dim;
        let mut d_flat = Tensor::zeros(&[1, self.cfg.n_restore * 3]);
        for (i, g) in d_points.iter().enumerate() {
            d_flat.data[3 * i] = g.x;
            d_flat.data[3 * i + 1] = g.y;
            d_flat.data[3 * i + 2] = g.z;
        }
        let dg = self.dec_fc2.backward(ps, grads, &cache.g, &d_flat);
        let du1 = gelu_backward(&cache.u1, &dg);
        let d_pooled = self.dec_fc1.backward(ps, grads, &cache.pooled_t, &du1);
        let mut dx = Tensor::zeros(&[cache.t_len, d]);
        for r in 0..cache.t_len {
            let row = dx.row_mut(r);
            for (v, g) in row.iter_mut().zip(&d_pooled.data) {
                *v = g / cache.t_len as f64;
            }
        }
        let mut dx = self.dec_norm.backward(ps, grads, &cache.norm_cache, &dx);
        for (block, block_cache) in self.decoder.iter().zip(cache.blocks.iter()).rev() {
            dx = block.backward(ps, grads, block_cache, &dx);
        }
        self.dec_pos.backward(ps, grads, &cache.pos_in, &dx);
        dx // gradient w.r.t. the input features (pos path already consumed)
    }
}

pub struct EncodeOutput {
    /// Token ids (into the TokenizedCloud) in encode-row order.
    pub visible: Vec<usize>,
    /// Final per-token features [T_visible, model_dim].
    pub features: Tensor,
    /// Mean-pooled latent.
    pub latent: Vec<f64>,
    pub stats: LatentStats,
    pub cache: EncodeCache,
}

pub struct EncodeCache {
    sp_caches: Vec<SetPoolCache>,
    pos_in: Tensor,
    blocks: Vec<BlockCache>,
    norm_cache: LnCache,
    lat_in: Tensor,
    pub half_logvar: Vec<f64>,
}

pub struct DecodeCache {
    pos_in: Tensor,
    blocks: Vec<BlockCache>,
    norm_cache: LnCache,
    t_len: usize,
    pooled_t: Tensor,
    u1: Tensor,
    g: Tensor,
}
