//! Small trainable mask predictor: token + position embeddings, a short
//! stack of bidirectional self-attention/feed-forward layers, and per-slot
//! output heads. Gradients are computed by hand-written backprop and
//! verified against finite differences in the tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{MaskPredictor, MaskedTarget};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    fn init(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Self {
        Mat {
            rows,
            cols,
            data: (0..rows * cols)
                .map(|_| F::from_f64((rng.gen::<f64>() * 2.0 - 1.0) * scale))
                .collect(),
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn zero_out(&mut self) {
        self.data.iter_mut().for_each(|v| *v = F::zero());
    }
}

/// out = a (r x k) * b (k x c)
fn matmul<F: Scalar>(a: &Mat<F>, b: &Mat<F>) -> Mat<F> {
    debug_assert_eq!(a.cols, b.rows);
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        for (l, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let brow = b.row(l);
            let orow = out.row_mut(i);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// out += a^T (k x r)^T=(r x k) ... a: (s x r), b: (s x c) -> out (r x c)
fn acc_matmul_transpose_a<F: Scalar>(out: &mut Mat<F>, a: &Mat<F>, b: &Mat<F>) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!(out.rows, a.cols);
    debug_assert_eq!(out.cols, b.cols);
    for s in 0..a.rows {
        let arow = a.row(s);
        let brow = b.row(s);
        for (i, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let orow = out.row_mut(i);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// out = a (r x k) * b^T where b: (c x k) -> out (r x c)
fn matmul_transpose_b<F: Scalar>(a: &Mat<F>, b: &Mat<F>) -> Mat<F> {
    debug_assert_eq!(a.cols, b.cols);
    let mut out = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = b.row(j);
            let mut acc = F::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc = acc + av * bv;
            }
            *o = acc;
        }
    }
    out
}

fn softmax_rows<F: Scalar>(m: &mut Mat<F>) {
    for i in 0..m.rows {
        let row = m.row_mut(i);
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerParams<F> {
    wq: Mat<F>,
    wk: Mat<F>,
    wv: Mat<F>,
    wo: Mat<F>,
    w1: Mat<F>,
    b1: Mat<F>,
    w2: Mat<F>,
    b2: Mat<F>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadParams<F> {
    w: Mat<F>,
    b: Mat<F>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Params<F> {
    embed: Mat<F>,
    pos: Mat<F>,
    layers: Vec<LayerParams<F>>,
    heads: Vec<HeadParams<F>>,
}

impl<F: Scalar> Params<F> {
    fn mats(&self) -> Vec<&Mat<F>> {
        let mut v: Vec<&Mat<F>> = vec![&self.embed, &self.pos];
        for l in &self.layers {
            v.extend([&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.b1, &l.w2, &l.b2]);
        }
        for h in &self.heads {
            v.extend([&h.w, &h.b]);
        }
        v
    }

    fn mats_mut(&mut self) -> Vec<&mut Mat<F>> {
        let mut v: Vec<&mut Mat<F>> = vec![&mut self.embed, &mut self.pos];
        for l in &mut self.layers {
            v.extend([
                &mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.w1, &mut l.b1, &mut l.w2,
                &mut l.b2,
            ]);
        }
        for h in &mut self.heads {
            v.extend([&mut h.w, &mut h.b]);
        }
        v
    }

    pub fn zero_out(&mut self) {
        for m in self.mats_mut() {
            m.zero_out();
        }
    }

    pub fn n_params(&self) -> usize {
        self.mats().iter().map(|m| m.data.len()).sum()
    }

    pub fn get_flat(&self, mut idx: usize) -> F {
        for m in self.mats() {
            if idx < m.data.len() {
                return m.data[idx];
            }
            idx -= m.data.len();
        }
        panic!("flat index out of range");
    }

    pub fn add_flat(&mut self, mut idx: usize, delta: F) {
        for m in self.mats_mut() {
            if idx < m.data.len() {
                m.data[idx] = m.data[idx] + delta;
                return;
            }
            idx -= m.data.len();
        }
        panic!("flat index out of range");
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Embedding / hidden width.
    pub width: usize,
    pub layers: usize,
    /// Feed-forward hidden size = width * ff_mult.
    pub ff_mult: usize,
    /// History budget in tokens; longer histories keep the most recent.
    pub max_history_tokens: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            width: 64,
            layers: 2,
            ff_mult: 2,
            max_history_tokens: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TinyDenoiser<F> {
    pub config: DenoiserConfig,
    slot_sizes: Vec<usize>,
    slot_offsets: Vec<u32>,
    pub params: Params<F>,
}

struct LayerCache<F> {
    xin: Mat<F>,
    q: Mat<F>,
    k: Mat<F>,
    v: Mat<F>,
    attn: Mat<F>,
    av: Mat<F>,
    xmid: Mat<F>,
    hpre: Mat<F>,
    h: Mat<F>,
}

struct ForwardCache<F> {
    ctx_ids: Vec<u32>,
    pos_ids: Vec<usize>,
    hist_len: usize,
    layers: Vec<LayerCache<F>>,
    xfinal: Mat<F>,
}

impl<F: Scalar> TinyDenoiser<F> {
    pub fn new(slot_sizes: &[usize], config: DenoiserConfig, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d = config.width;
        let h = config.width * config.ff_mult;
        let n = slot_sizes.len();
        let vocab = 2 + slot_sizes.iter().sum::<usize>();
        let wscale = 1.0 / (d as f64).sqrt();
        let params = Params {
            embed: Mat::init(vocab, d, 0.1, &mut rng),
            pos: Mat::init(config.max_history_tokens + n, d, 0.1, &mut rng),
            layers: (0..config.layers)
                .map(|_| LayerParams {
                    wq: Mat::init(d, d, wscale, &mut rng),
                    wk: Mat::init(d, d, wscale, &mut rng),
                    wv: Mat::init(d, d, wscale, &mut rng),
                    wo: Mat::init(d, d, wscale, &mut rng),
                    w1: Mat::init(d, h, wscale, &mut rng),
                    b1: Mat::zeros(1, h),
                    w2: Mat::init(h, d, 1.0 / (h as f64).sqrt(), &mut rng),
                    b2: Mat::zeros(1, d),
                })
                .collect(),
            heads: slot_sizes
                .iter()
                .map(|&v| HeadParams {
                    w: Mat::init(d, v, wscale, &mut rng),
                    b: Mat::zeros(1, v),
                })
                .collect(),
        };
        let mut slot_offsets = Vec::with_capacity(n);
        let mut off = 0u32;
        for &s in slot_sizes {
            slot_offsets.push(off);
            off += s as u32;
        }
        TinyDenoiser {
            config,
            slot_sizes: slot_sizes.to_vec(),
            slot_offsets,
            params,
        }
    }

    pub fn zero_grads(&self) -> Params<F> {
        let mut g = self.params.clone();
        g.zero_out();
        g
    }

    pub fn slot_count(&self) -> usize {
        self.slot_sizes.len()
    }

    fn global_id(&self, slot: usize, local: u32) -> u32 {
        2 + self.slot_offsets[slot] + local
    }

    /// Build the attention context: recent history tokens (right-aligned in
    /// the position table) followed by the N target tokens.
    fn context(&self, history: &[u32], target: &[Option<u32>]) -> (Vec<u32>, Vec<usize>, usize) {
        let maxh = self.config.max_history_tokens;
        let start = history.len().saturating_sub(maxh);
        let hist = &history[start..];
        let mut ids = Vec::with_capacity(hist.len() + target.len());
        let mut pos = Vec::with_capacity(hist.len() + target.len());
        for (i, &tok) in hist.iter().enumerate() {
            ids.push(tok);
            pos.push(maxh - hist.len() + i);
        }
        for (p, tok) in target.iter().enumerate() {
            ids.push(match tok {
                Some(local) => self.global_id(p, *local),
                None => 0, // mask
            });
            pos.push(maxh + p);
        }
        (ids, pos, hist.len())
    }

    fn forward(&self, history: &[u32], target: &[Option<u32>]) -> ForwardCache<F> {
        let (ctx_ids, pos_ids, hist_len) = self.context(history, target);
        let s = ctx_ids.len();
        let d = self.config.width;
        let mut x = Mat::zeros(s, d);
        for i in 0..s {
            let e = self.params.embed.row(ctx_ids[i] as usize);
            let p = self.params.pos.row(pos_ids[i]);
            let row = x.row_mut(i);
            for j in 0..d {
                row[j] = e[j] + p[j];
            }
        }
        let scale = F::from_f64(1.0 / (d as f64).sqrt());
        let mut layers = Vec::with_capacity(self.params.layers.len());
        for lp in &self.params.layers {
            let xin = x.clone();
            let q = matmul(&xin, &lp.wq);
            let k = matmul(&xin, &lp.wk);
            let v = matmul(&xin, &lp.wv);
            let mut attn = matmul_transpose_b(&q, &k);
            for val in attn.data.iter_mut() {
                *val = *val * scale;
            }
            softmax_rows(&mut attn);
            let av = matmul(&attn, &v);
            let attn_out = matmul(&av, &lp.wo);
            let mut xmid = xin.clone();
            for (a, &b) in xmid.data.iter_mut().zip(&attn_out.data) {
                *a = *a + b;
            }
            let mut hpre = matmul(&xmid, &lp.w1);
            for i in 0..hpre.rows {
                let brow = lp.b1.row(0);
                let row = hpre.row_mut(i);
                for (hv, &bv) in row.iter_mut().zip(brow) {
                    *hv = *hv + bv;
                }
            }
            let mut hmat = hpre.clone();
            for v in hmat.data.iter_mut() {
                if *v < F::zero() {
                    *v = F::zero();
                }
            }
            let mut f = matmul(&hmat, &lp.w2);
            for i in 0..f.rows {
                let brow = lp.b2.row(0);
                let row = f.row_mut(i);
                for (fv, &bv) in row.iter_mut().zip(brow) {
                    *fv = *fv + bv;
                }
            }
            let mut xout = xmid.clone();
            for (a, &b) in xout.data.iter_mut().zip(&f.data) {
                *a = *a + b;
            }
            layers.push(LayerCache {
                xin,
                q,
                k,
                v,
                attn,
                av,
                xmid,
                hpre,
                h: hmat,
            });
            x = xout;
        }
        ForwardCache {
            ctx_ids,
            pos_ids,
            hist_len,
            layers,
            xfinal: x,
        }
    }

    /// Per-slot softmax distribution at target position `p`.
    fn head_dist(&self, cache: &ForwardCache<F>, p: usize) -> Vec<F> {
        let idx = cache.hist_len + p;
        let xrow = cache.xfinal.row(idx);
        let head = &self.params.heads[p];
        let vsize = self.slot_sizes[p];
        let mut logits = vec![F::zero(); vsize];
        for (j, l) in logits.iter_mut().enumerate() {
            let mut acc = head.b.row(0)[j];
            for (i, &xv) in xrow.iter().enumerate() {
                acc = acc + xv * head.w.row(i)[j];
            }
            *l = acc;
        }
        let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum = sum + *l;
        }
        for l in logits.iter_mut() {
            *l = *l / sum;
        }
        logits
    }

    /// Loss for one masked instance plus gradient accumulation scaled by
    /// `weight` (typically 1 / batch size).
    fn backward_instance(
        &self,
        history: &[u32],
        y0: &[u32],
        masked: &MaskedTarget,
        weight: F,
        grads: &mut Params<F>,
    ) -> F {
        let cache = self.forward(history, &masked.tokens);
        let s = cache.ctx_ids.len();
        let d = self.config.width;
        let inv_t = F::from_f64(1.0 / masked.t);
        let mut loss = F::zero();
        let mut dx = Mat::zeros(s, d);
        for (p, tok) in masked.tokens.iter().enumerate() {
            if tok.is_some() {
                continue;
            }
            let dist = self.head_dist(&cache, p);
            let truth = y0[p] as usize;
            loss = loss - dist[truth].ln() * inv_t;
            let idx = cache.hist_len + p;
            let xrow = cache.xfinal.row(idx);
            let w = inv_t * weight;
            let head_grad = &mut grads.heads[p];
            let mut dlogits = dist;
            dlogits[truth] = dlogits[truth] - F::one();
            for dl in dlogits.iter_mut() {
                *dl = *dl * w;
            }
            for (j, &dl) in dlogits.iter().enumerate() {
                head_grad.b.row_mut(0)[j] = head_grad.b.row_mut(0)[j] + dl;
            }
            for (i, &xv) in xrow.iter().enumerate() {
                let wrow = head_grad.w.row_mut(i);
                for (j, &dl) in dlogits.iter().enumerate() {
                    wrow[j] = wrow[j] + xv * dl;
                }
            }
            let head_w = &self.params.heads[p].w;
            let dxrow = dx.row_mut(idx);
            for (i, dxi) in dxrow.iter_mut().enumerate().take(d) {
                let wrow = head_w.row(i);
                let mut acc = F::zero();
                for (j, &dl) in dlogits.iter().enumerate() {
                    acc = acc + wrow[j] * dl;
                }
                *dxi = *dxi + acc;
            }
        }

        let scale = F::from_f64(1.0 / (d as f64).sqrt());
        for (lc, (lp, lg)) in cache
            .layers
            .iter()
            .zip(self.params.layers.iter().zip(&mut grads.layers))
            .rev()
        {
            // FFN
            let dxout = dx;
            let dh_full = matmul_transpose_b(&dxout, &lp.w2);
            let mut dhpre = dh_full;
            for (g, &pre) in dhpre.data.iter_mut().zip(&lc.hpre.data) {
                if pre <= F::zero() {
                    *g = F::zero();
                }
            }
            acc_matmul_transpose_a(&mut lg.w2, &lc.h, &dxout);
            for i in 0..dxout.rows {
                let row = dxout.row(i);
                let brow = lg.b2.row_mut(0);
                for (b, &g) in brow.iter_mut().zip(row) {
                    *b = *b + g;
                }
                let hrow = dhpre.row(i);
                let b1row = lg.b1.row_mut(0);
                for (b, &g) in b1row.iter_mut().zip(hrow) {
                    *b = *b + g;
                }
            }
            acc_matmul_transpose_a(&mut lg.w1, &lc.xmid, &dhpre);
            let mut dxmid = matmul_transpose_b(&dhpre, &lp.w1);
            for (a, &b) in dxmid.data.iter_mut().zip(&dxout.data) {
                *a = *a + b;
            }

            // Attention
            acc_matmul_transpose_a(&mut lg.wo, &lc.av, &dxmid);
            let dav = matmul_transpose_b(&dxmid, &lp.wo);
            let da = matmul_transpose_b(&dav, &lc.v);
            let mut dv = Mat::zeros(s, d);
            acc_matmul_transpose_a(&mut dv, &lc.attn, &dav);
            // softmax backward per row
            let mut dscores = Mat::zeros(s, s);
            for i in 0..s {
                let arow = lc.attn.row(i);
                let darow = da.row(i);
                let mut dot = F::zero();
                for (&a, &g) in arow.iter().zip(darow) {
                    dot = dot + a * g;
                }
                let srow = dscores.row_mut(i);
                for j in 0..s {
                    srow[j] = arow[j] * (darow[j] - dot) * scale;
                }
            }
            let dq = matmul(&dscores, &lc.k);
            let mut dk = Mat::zeros(s, d);
            acc_matmul_transpose_a(&mut dk, &dscores, &lc.q);
            acc_matmul_transpose_a(&mut lg.wq, &lc.xin, &dq);
            acc_matmul_transpose_a(&mut lg.wk, &lc.xin, &dk);
            acc_matmul_transpose_a(&mut lg.wv, &lc.xin, &dv);
            let mut dxin = dxmid;
            let t1 = matmul_transpose_b(&dq, &lp.wq);
            let t2 = matmul_transpose_b(&dk, &lp.wk);
            let t3 = matmul_transpose_b(&dv, &lp.wv);
            for i in 0..dxin.data.len() {
                dxin.data[i] = dxin.data[i] + t1.data[i] + t2.data[i] + t3.data[i];
            }
            dx = dxin;
        }

        for i in 0..s {
            let row = dx.row(i);
            let erow = grads.embed.row_mut(cache.ctx_ids[i] as usize);
            for (e, &g) in erow.iter_mut().zip(row) {
                *e = *e + g;
            }
            let prow = grads.pos.row_mut(cache.pos_ids[i]);
            for (p, &g) in prow.iter_mut().zip(row) {
                *p = *p + g;
            }
        }
        loss
    }

    /// Mean loss over the batch; gradients of the mean are accumulated into
    /// `grads` (caller zeroes them).
    pub fn loss_and_grad(
        &self,
        batch: &[(Vec<u32>, Vec<u32>, MaskedTarget)],
        grads: &mut Params<F>,
    ) -> F {
        if batch.is_empty() {
            return F::zero();
        }
        let weight = F::one() / F::from_usize(batch.len());
        let mut total = F::zero();
        for (h, y0, m) in batch {
            total = total + self.backward_instance(h, y0, m, weight, grads);
        }
        total / F::from_usize(batch.len())
    }

    pub fn sgd_step(&mut self, grads: &Params<F>, lr: F) {
        for (p, g) in self.params.mats_mut().into_iter().zip(grads.mats()) {
            for (pv, &gv) in p.data.iter_mut().zip(&g.data) {
                *pv = *pv - lr * gv;
            }
        }
    }
}

impl<F: Scalar> MaskPredictor<F> for TinyDenoiser<F> {
    fn slot_sizes(&self) -> Vec<usize> {
        self.slot_sizes.clone()
    }

    fn predict(&self, history: &[u32], target: &[Option<u32>]) -> Vec<Option<Vec<F>>> {
        let cache = self.forward(history, target);
        target
            .iter()
            .enumerate()
            .map(|(p, tok)| match tok {
                Some(_) => None,
                None => Some(self.head_dist(&cache, p)),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::instance_loss;

    #[test]
    fn predict_rows_normalized() {
        let model: TinyDenoiser<f64> = TinyDenoiser::new(
            &[3, 4, 5],
            DenoiserConfig {
                width: 16,
                layers: 2,
                ff_mult: 2,
                max_history_tokens: 8,
            },
            11,
        );
        let dists = model.predict(&[2, 3, 1], &[None, Some(1), None]);
        assert!(dists[1].is_none());
        for d in [&dists[0], &dists[2]] {
            let d = d.as_ref().unwrap();
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(d.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn loss_matches_trait_path() {
        // loss_and_grad and the generic instance_loss must agree.
        let model: TinyDenoiser<f64> = TinyDenoiser::new(
            &[3, 3],
            DenoiserConfig {
                width: 8,
                layers: 1,
                ff_mult: 2,
                max_history_tokens: 4,
            },
            5,
        );
        let masked = MaskedTarget {
            tokens: vec![None, Some(2)],
            t: 0.7,
        };
        let history = vec![2u32, 4];
        let y0 = vec![1u32, 2];
        let mut grads = model.zero_grads();
        let l1 = model.loss_and_grad(
            &[(history.clone(), y0.clone(), masked.clone())],
            &mut grads,
        );
        let l2 = instance_loss(&model, &history, &y0, &masked);
        assert!((l1 - l2).abs() < 1e-12, "{l1} vs {l2}");
    }

    #[test]
    fn inverse_t_weighting_scales_loss() {
        let model: TinyDenoiser<f64> = TinyDenoiser::new(
            &[4],
            DenoiserConfig {
                width: 8,
                layers: 1,
                ff_mult: 2,
                max_history_tokens: 2,
            },
            9,
        );
        let y0 = vec![2u32];
        let at = |t: f64| {
            instance_loss(
                &model,
                &[],
                &y0,
                &MaskedTarget {
                    tokens: vec![None],
                    t,
                },
            )
        };
        let half = at(0.5);
        let full = at(1.0);
        assert!((half - 2.0 * full).abs() < 1e-12);
    }

    #[test]
    fn zero_masked_positions_zero_loss() {
        let model: TinyDenoiser<f64> = TinyDenoiser::new(
            &[4, 4],
            DenoiserConfig {
                width: 8,
                layers: 1,
                ff_mult: 2,
                max_history_tokens: 2,
            },
            9,
        );
        let masked = MaskedTarget {
            tokens: vec![Some(1), Some(3)],
            t: 0.8,
        };
        let mut grads = model.zero_grads();
        let l = model.loss_and_grad(&[(vec![], vec![1, 3], masked)], &mut grads);
        assert_eq!(l, 0.0);
        assert!(grads.mats().iter().all(|m| m.data.iter().all(|&v| v == 0.0)));
    }
}
