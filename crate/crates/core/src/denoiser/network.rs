//! Forward pass with activation cache and the matching reverse-mode pass.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};

use super::*;

const LN_EPS: f64 = 1e-5;

/// Per-tensor gradients; tensors that were not requested stay `None`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub(crate) grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn zeros_like(params: &DenoiserParams, request: &GradRequest) -> Self {
        Self {
            grads: params
                .tensors()
                .iter()
                .enumerate()
                .map(|(i, t)| request.wants(i).then(|| Array2::zeros(t.dim())))
                .collect(),
        }
    }

    pub fn get(&self, i: usize) -> Option<&Array2<f64>> {
        self.grads[i].as_ref()
    }

    pub fn get_mut(&mut self, i: usize) -> Option<&mut Array2<f64>> {
        self.grads[i].as_mut()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// `self += scale * other` for every tensor present in both.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                a.scaled_add(scale, b);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

struct LayerNormCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

struct AttentionCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    mixed: Array2<f64>,
}

struct BlockCache {
    ln_spatial: LayerNormCache,
    spatial: AttentionCache,
    ln_temporal: LayerNormCache,
    temporal: AttentionCache,
    ln_mlp: LayerNormCache,
    pre_act: Array2<f64>,
    act: Array2<f64>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    patches: Array2<f64>,
    time_emb: Array1<f64>,
    cond: Array1<f64>,
    frames: usize,
    blocks: Vec<BlockCache>,
    ln_final: LayerNormCache,
}

fn layer_norm(x: &Array2<f64>) -> LayerNormCache {
    let width = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.axis_iter_mut(Axis(0)).zip(rstd.iter_mut()) {
        let mean = row.sum() / width;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
        *r = inv;
    }
    LayerNormCache { xhat, rstd }
}

fn layer_norm_backward(cache: &LayerNormCache, dxhat: &Array2<f64>) -> Array2<f64> {
    let width = dxhat.ncols() as f64;
    let mut dx = dxhat.clone();
    for ((mut drow, xrow), r) in dx
        .axis_iter_mut(Axis(0))
        .zip(cache.xhat.axis_iter(Axis(0)))
        .zip(cache.rstd.iter())
    {
        let mean_d = drow.sum() / width;
        let mean_dx = drow.iter().zip(xrow.iter()).map(|(d, x)| d * x).sum::<f64>() / width;
        for (d, x) in drow.iter_mut().zip(xrow.iter()) {
            *d = r * (*d - mean_d - x * mean_dx);
        }
    }
    dx
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// `[sin(t w_i), cos(t w_i)]` with geometric frequencies.
pub(crate) fn sinusoidal(position: f64, dim: usize, max_period: f64) -> Array1<f64> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for i in 0..half {
        let freq = (-(max_period.ln()) * i as f64 / half as f64).exp();
        out[i] = (position * freq).sin();
        out[half + i] = (position * freq).cos();
    }
    out
}

/// How tokens are grouped for one attention layer.
#[derive(Clone, Copy)]
enum Mixing {
    /// Tokens of the same frame attend to each other.
    Spatial { tokens: usize },
    /// The same token position attends across frames.
    Temporal { tokens: usize },
}

impl Mixing {
    fn groups(self, rows: usize) -> usize {
        match self {
            Mixing::Spatial { tokens } => rows / tokens,
            Mixing::Temporal { tokens } => tokens,
        }
    }

    fn view<'a>(self, m: &'a Array2<f64>, g: usize) -> ArrayView2<'a, f64> {
        match self {
            Mixing::Spatial { tokens } => m.slice(s![g * tokens..(g + 1) * tokens, ..]),
            Mixing::Temporal { tokens } => m.slice(s![g..;tokens, ..]),
        }
    }

    fn view_mut<'a>(self, m: &'a mut Array2<f64>, g: usize) -> ArrayViewMut2<'a, f64> {
        match self {
            Mixing::Spatial { tokens } => m.slice_mut(s![g * tokens..(g + 1) * tokens, ..]),
            Mixing::Temporal { tokens } => m.slice_mut(s![g..;tokens, ..]),
        }
    }
}

impl DenoiserParams {
    fn frame_position_embedding(&self, frames: usize) -> Array2<f64> {
        let tokens = self.config.tokens();
        let h = self.config.hidden_dim;
        let mut out = Array2::zeros((frames * tokens, h));
        for n in 0..frames {
            let e = sinusoidal(n as f64, h, 100.0);
            for p in 0..tokens {
                out.row_mut(n * tokens + p).assign(&e);
            }
        }
        out
    }

    fn patchify(&self, frames: &Array2<f64>) -> Array2<f64> {
        let cfg = &self.config;
        let (n, _) = frames.dim();
        let per_row = cfg.frame_width / cfg.patch;
        let tokens = cfg.tokens();
        let mut out = Array2::zeros((n * tokens, cfg.patch_dim()));
        for f in 0..n {
            for p in 0..tokens {
                let (pr, pc) = (p / per_row, p % per_row);
                for i in 0..cfg.patch {
                    for j in 0..cfg.patch {
                        let pix = (pr * cfg.patch + i) * cfg.frame_width + pc * cfg.patch + j;
                        out[[f * tokens + p, i * cfg.patch + j]] = frames[[f, pix]];
                    }
                }
            }
        }
        out
    }

    fn unpatchify(&self, tokens_out: &Array2<f64>, frames: usize) -> Array2<f64> {
        let cfg = &self.config;
        let per_row = cfg.frame_width / cfg.patch;
        let tokens = cfg.tokens();
        let mut out = Array2::zeros((frames, cfg.frame_dim()));
        for f in 0..frames {
            for p in 0..tokens {
                let (pr, pc) = (p / per_row, p % per_row);
                for i in 0..cfg.patch {
                    for j in 0..cfg.patch {
                        let pix = (pr * cfg.patch + i) * cfg.frame_width + pc * cfg.patch + j;
                        out[[f, pix]] = tokens_out[[f * tokens + p, i * cfg.patch + j]];
                    }
                }
            }
        }
        out
    }

    fn attention_forward(&self, input: Array2<f64>, base: usize, mixing: Mixing) -> AttentionCache {
        let q = input.dot(&self.tensors[base]);
        let k = input.dot(&self.tensors[base + 1]);
        let v = input.dot(&self.tensors[base + 2]);
        let scale = 1.0 / (self.config.hidden_dim as f64).sqrt();
        let rows = input.nrows();
        let mut mixed = Array2::zeros(v.dim());
        let mut probs = Vec::with_capacity(mixing.groups(rows));
        for g in 0..mixing.groups(rows) {
            let qg = mixing.view(&q, g);
            let kg = mixing.view(&k, g);
            let mut scores = qg.dot(&kg.t()) * scale;
            softmax_rows(&mut scores);
            mixing
                .view_mut(&mut mixed, g)
                .assign(&scores.dot(&mixing.view(&v, g)));
            probs.push(scores);
        }
        AttentionCache {
            input,
            q,
            k,
            v,
            probs,
            mixed,
        }
    }

    /// Returns the gradient with respect to the attention input, if asked for.
    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        cache: &AttentionCache,
        d_mixed: &Array2<f64>,
        base: usize,
        mixing: Mixing,
        request: &GradRequest,
        grads: &mut Gradients,
        need_input: bool,
    ) -> Option<Array2<f64>> {
        let scale = 1.0 / (self.config.hidden_dim as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.dim());
        let mut dk = Array2::zeros(cache.k.dim());
        let mut dv = Array2::zeros(cache.v.dim());
        for (g, probs) in cache.probs.iter().enumerate() {
            let dmg = mixing.view(d_mixed, g);
            let vg = mixing.view(&cache.v, g);
            let dprobs = dmg.dot(&vg.t());
            mixing.view_mut(&mut dv, g).assign(&probs.t().dot(&dmg));
            let mut dscores = probs * &dprobs;
            for (mut row, prow) in dscores.axis_iter_mut(Axis(0)).zip(probs.axis_iter(Axis(0))) {
                let inner: f64 = row.sum();
                for (d, p) in row.iter_mut().zip(prow.iter()) {
                    *d -= p * inner;
                }
            }
            dscores.mapv_inplace(|v| v * scale);
            mixing
                .view_mut(&mut dq, g)
                .assign(&dscores.dot(&mixing.view(&cache.k, g)));
            mixing
                .view_mut(&mut dk, g)
                .assign(&dscores.t().dot(&mixing.view(&cache.q, g)));
        }
        for (slot, d) in [(base, &dq), (base + 1, &dk), (base + 2, &dv)] {
            if request.wants(slot) {
                *grads.grads[slot].as_mut().unwrap() += &cache.input.t().dot(d);
            }
        }
        need_input.then(|| {
            dq.dot(&self.tensors[base].t())
                + dk.dot(&self.tensors[base + 1].t())
                + dv.dot(&self.tensors[base + 2].t())
        })
    }

    fn check_input(&self, v_t: &VideoTensor, t: usize, c: &Conditioning) -> Result<()> {
        let cfg = &self.config;
        if v_t.height() != cfg.frame_height
            || v_t.width() != cfg.frame_width
            || v_t.frame_count() < 2
        {
            return Err(VmcError::shape(
                format!("N >= 2 frames of {}x{}", cfg.frame_height, cfg.frame_width),
                v_t.shape_string(),
            ));
        }
        if c.dim() != cfg.cond_dim {
            return Err(VmcError::shape(cfg.cond_dim, c.dim()));
        }
        if t == 0 {
            return Err(VmcError::TimestepOutOfRange { t, max: usize::MAX });
        }
        Ok(())
    }

    /// Runs the network; the cache is only built when `keep_cache` is set.
    pub fn forward(
        &self,
        v_t: &VideoTensor,
        t: usize,
        c: &Conditioning,
        keep_cache: bool,
    ) -> Result<(Array2<f64>, Option<ForwardCache>)> {
        self.check_input(v_t, t, c)?;
        let cfg = &self.config;
        let frames = v_t.frame_count();
        let tokens = cfg.tokens();
        let patches = self.patchify(v_t.frames());
        let mut h = patches.dot(&self.tensors[PATCH_W]) + &self.tensors[PATCH_B];
        for f in 0..frames {
            let mut rows = h.slice_mut(s![f * tokens..(f + 1) * tokens, ..]);
            rows += &self.tensors[POS_EMB];
        }
        let time_emb = sinusoidal(t as f64, cfg.time_embed_dim, 1000.0);
        let cond = Array1::from(c.as_slice().to_vec());
        let frame_pos = self.frame_position_embedding(frames);

        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for b in 0..cfg.n_blocks {
            let bias = time_emb.dot(&self.tensors[block_slot(b, TIME_PROJ)])
                + cond.dot(&self.tensors[block_slot(b, COND_PROJ)]);
            h += &bias;

            let ln_spatial = layer_norm(&h);
            let spatial = self.attention_forward(
                ln_spatial.xhat.clone(),
                block_slot(b, S_Q),
                Mixing::Spatial { tokens },
            );
            h += &spatial.mixed.dot(&self.tensors[block_slot(b, S_O)]);

            let ln_temporal = layer_norm(&h);
            let temporal = self.attention_forward(
                &ln_temporal.xhat + &frame_pos,
                block_slot(b, T_Q),
                Mixing::Temporal { tokens },
            );
            h += &temporal.mixed.dot(&self.tensors[block_slot(b, T_O)]);

            let ln_mlp = layer_norm(&h);
            let pre_act =
                ln_mlp.xhat.dot(&self.tensors[block_slot(b, MLP_W1)]) + &self.tensors[block_slot(b, MLP_B1)];
            let act = pre_act.mapv(silu);
            h += &(act.dot(&self.tensors[block_slot(b, MLP_W2)]) + &self.tensors[block_slot(b, MLP_B2)]);

            if keep_cache {
                blocks.push(BlockCache {
                    ln_spatial,
                    spatial,
                    ln_temporal,
                    temporal,
                    ln_mlp,
                    pre_act,
                    act,
                });
            }
        }
        let ln_final = layer_norm(&h);
        let out_tokens = ln_final.xhat.dot(&self.tensors[OUT_W]) + &self.tensors[OUT_B];
        let out = self.unpatchify(&out_tokens, frames);
        let cache = keep_cache.then(|| ForwardCache {
            patches,
            time_emb,
            cond,
            frames,
            blocks,
            ln_final,
        });
        Ok((out, cache))
    }

    /// Reverse-mode pass from `d_out` (gradient of the loss with respect to
    /// the predicted noise, `N x d`). Layers below the lowest requested tensor
    /// are skipped.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_out: &Array2<f64>,
        request: &GradRequest,
    ) -> Gradients {
        let cfg = &self.config;
        let tokens = cfg.tokens();
        let mut grads = Gradients::zeros_like(self, request);
        let nb = cfg.n_blocks;

        // Layers bottom-up: embed, then (bias, spatial, temporal, mlp) per block.
        let layer_slots = |layer: usize| -> Vec<usize> {
            if layer == 0 {
                return vec![PATCH_W, PATCH_B, POS_EMB];
            }
            let b = (layer - 1) / 4;
            match (layer - 1) % 4 {
                0 => vec![block_slot(b, TIME_PROJ), block_slot(b, COND_PROJ)],
                1 => (S_Q..=S_O).map(|s| block_slot(b, s)).collect(),
                2 => (T_Q..=T_O).map(|s| block_slot(b, s)).collect(),
                _ => (MLP_W1..=MLP_B2).map(|s| block_slot(b, s)).collect(),
            }
        };
        let layers = 1 + 4 * nb;
        let lowest = (0..layers).find(|l| layer_slots(*l).iter().any(|s| request.wants(*s)));
        let Some(lowest) = lowest else {
            return grads;
        };
        let needs_input = |layer: usize| layer > lowest;

        let d_tokens = self.patchify(d_out);
        if request.wants(OUT_W) {
            *grads.grads[OUT_W].as_mut().unwrap() += &cache.ln_final.xhat.t().dot(&d_tokens);
        }
        if request.wants(OUT_B) {
            *grads.grads[OUT_B].as_mut().unwrap() += &d_tokens.sum_axis(Axis(0));
        }
        let mut dh = layer_norm_backward(&cache.ln_final, &d_tokens.dot(&self.tensors[OUT_W].t()));

        for b in (0..nb).rev() {
            let bc = &cache.blocks[b];
            let layer_base = 1 + 4 * b;

            // MLP
            let (w1, b1, w2, b2) = (
                block_slot(b, MLP_W1),
                block_slot(b, MLP_B1),
                block_slot(b, MLP_W2),
                block_slot(b, MLP_B2),
            );
            if request.wants(w2) {
                *grads.grads[w2].as_mut().unwrap() += &bc.act.t().dot(&dh);
            }
            if request.wants(b2) {
                *grads.grads[b2].as_mut().unwrap() += &dh.sum_axis(Axis(0));
            }
            let need_in = needs_input(layer_base + 3);
            if request.wants(w1) || request.wants(b1) || need_in {
                let mut dpre = dh.dot(&self.tensors[w2].t());
                ndarray::Zip::from(&mut dpre)
                    .and(&bc.pre_act)
                    .for_each(|d, &z| *d *= silu_grad(z));
                if request.wants(w1) {
                    *grads.grads[w1].as_mut().unwrap() += &bc.ln_mlp.xhat.t().dot(&dpre);
                }
                if request.wants(b1) {
                    *grads.grads[b1].as_mut().unwrap() += &dpre.sum_axis(Axis(0));
                }
                if need_in {
                    dh += &layer_norm_backward(&bc.ln_mlp, &dpre.dot(&self.tensors[w1].t()));
                }
            }
            if !need_in {
                return grads;
            }

            // Temporal attention
            let t_o = block_slot(b, T_O);
            if request.wants(t_o) {
                *grads.grads[t_o].as_mut().unwrap() += &bc.temporal.mixed.t().dot(&dh);
            }
            let d_mixed = dh.dot(&self.tensors[t_o].t());
            let d_in = self.attention_backward(
                &bc.temporal,
                &d_mixed,
                block_slot(b, T_Q),
                Mixing::Temporal { tokens },
                request,
                &mut grads,
                needs_input(layer_base + 2),
            );
            match d_in {
                Some(d_in) => dh += &layer_norm_backward(&bc.ln_temporal, &d_in),
                None => return grads,
            }

            // Spatial attention
            let s_o = block_slot(b, S_O);
            if request.wants(s_o) {
                *grads.grads[s_o].as_mut().unwrap() += &bc.spatial.mixed.t().dot(&dh);
            }
            let d_mixed = dh.dot(&self.tensors[s_o].t());
            let d_in = self.attention_backward(
                &bc.spatial,
                &d_mixed,
                block_slot(b, S_Q),
                Mixing::Spatial { tokens },
                request,
                &mut grads,
                needs_input(layer_base + 1),
            );
            match d_in {
                Some(d_in) => dh += &layer_norm_backward(&bc.ln_spatial, &d_in),
                None => return grads,
            }

            // Conditioning and time biases are broadcast over every token.
            let d_bias = dh.sum_axis(Axis(0));
            let (tp, cp) = (block_slot(b, TIME_PROJ), block_slot(b, COND_PROJ));
            if request.wants(tp) {
                *grads.grads[tp].as_mut().unwrap() += &outer(&cache.time_emb, &d_bias);
            }
            if request.wants(cp) {
                *grads.grads[cp].as_mut().unwrap() += &outer(&cache.cond, &d_bias);
            }
            if !needs_input(layer_base) {
                return grads;
            }
        }

        if request.wants(PATCH_W) {
            *grads.grads[PATCH_W].as_mut().unwrap() += &cache.patches.t().dot(&dh);
        }
        if request.wants(PATCH_B) {
            *grads.grads[PATCH_B].as_mut().unwrap() += &dh.sum_axis(Axis(0));
        }
        if request.wants(POS_EMB) {
            let g = grads.grads[POS_EMB].as_mut().unwrap();
            for f in 0..cache.frames {
                *g += &dh.slice(s![f * tokens..(f + 1) * tokens, ..]);
            }
        }
        grads
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}
