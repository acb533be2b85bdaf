use crate::image::Image;
use crate::nn::{
    silu, silu_backward, silu_backward_vec, silu_vec, upsample2, upsample2_backward, Conv2d,
    GroupNorm, Init, Linear, ParamLayout,
};
use crate::scalar::Scalar;

use super::DenoiserConfig;

/// Sinusoidal features of an integer timestep: `[sin(t f_i) ; cos(t f_i)]`
/// with `f_i = 10000^(-i / half)`.
pub fn timestep_embedding<S: Scalar>(t: usize, dim: usize) -> Vec<S> {
    let half = dim / 2;
    let mut out = vec![S::zero(); dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = S::of(arg.sin());
        out[half + i] = S::of(arg.cos());
    }
    out
}

/// GroupNorm -> SiLU -> conv, plus a per-channel shift from the noise-level
/// embedding, twice, with an identity or 1x1 shortcut.
#[derive(Clone, Debug)]
pub(crate) struct ResBlock {
    pub cin: usize,
    pub cout: usize,
    norm1: GroupNorm,
    conv1: Conv2d,
    temb: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

pub(crate) struct ResCache<S> {
    x: Image<S>,
    n1: Image<S>,
    a1: Image<S>,
    h1: Image<S>,
    n2: Image<S>,
    a2: Image<S>,
}

impl ResBlock {
    fn new(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, emb: usize, groups: usize) -> Self {
        let norm1 = GroupNorm::new(layout, &format!("{name}.norm1"), cin, groups);
        let conv1 = Conv2d::same3(layout, &format!("{name}.conv1"), cin, cout);
        let temb = Linear::new(layout, &format!("{name}.temb"), emb, cout, Linear::default_init(emb));
        let norm2 = GroupNorm::new(layout, &format!("{name}.norm2"), cout, groups);
        let conv2 = Conv2d::same3(layout, &format!("{name}.conv2"), cout, cout);
        let skip = (cin != cout).then(|| Conv2d::pointwise(layout, &format!("{name}.skip"), cin, cout));
        ResBlock {
            cin,
            cout,
            norm1,
            conv1,
            temb,
            norm2,
            conv2,
            skip,
        }
    }

    fn forward<S: Scalar>(&self, p: &[S], x: Image<S>, temb_act: &[S]) -> (Image<S>, ResCache<S>) {
        let n1 = self.norm1.forward(p, &x);
        let a1 = silu(&n1);
        let mut h1 = self.conv1.forward(p, &a1);
        let shift = self.temb.forward(p, temb_act);
        for (c, &s) in shift.iter().enumerate() {
            for v in h1.plane_mut(c) {
                *v += s;
            }
        }
        let n2 = self.norm2.forward(p, &h1);
        let a2 = silu(&n2);
        let mut out = self.conv2.forward(p, &a2);
        let shortcut = match &self.skip {
            Some(conv) => conv.forward(p, &x),
            None => x.clone(),
        };
        for (o, &s) in out.data_mut().iter_mut().zip(shortcut.data()) {
            *o += s;
        }
        (
            out,
            ResCache {
                x,
                n1,
                a1,
                h1,
                n2,
                a2,
            },
        )
    }

    fn backward<S: Scalar>(
        &self,
        p: &[S],
        cache: &ResCache<S>,
        dout: &Image<S>,
        temb_act: &[S],
        g: &mut [S],
        dtemb_act: &mut [S],
    ) -> Image<S> {
        let da2 = self.conv2.backward(p, &cache.a2, dout, g, true).unwrap();
        let dn2 = silu_backward(&cache.n2, &da2);
        let dh1 = self.norm2.backward(p, &cache.h1, &dn2, g);
        let dshift: Vec<S> = (0..self.cout)
            .map(|c| dh1.plane(c).iter().copied().sum::<S>())
            .collect();
        let dt = self.temb.backward(p, temb_act, &dshift, g);
        for (acc, d) in dtemb_act.iter_mut().zip(dt) {
            *acc += d;
        }
        let da1 = self.conv1.backward(p, &cache.a1, &dh1, g, true).unwrap();
        let dn1 = silu_backward(&cache.n1, &da1);
        let mut dx = self.norm1.backward(p, &cache.x, &dn1, g);
        let dskip = match &self.skip {
            Some(conv) => conv.backward(p, &cache.x, dout, g, true).unwrap(),
            None => dout.clone(),
        };
        for (d, &s) in dx.data_mut().iter_mut().zip(dskip.data()) {
            *d += s;
        }
        dx
    }

    fn param_count(&self) -> usize {
        self.norm1.param_count()
            + self.conv1.param_count()
            + self.temb.param_count()
            + self.norm2.param_count()
            + self.conv2.param_count()
            + self.skip.as_ref().map_or(0, Conv2d::param_count)
    }
}

#[derive(Clone, Debug)]
struct DownStage {
    blocks: Vec<ResBlock>,
    downsample: Option<Conv2d>,
}

#[derive(Clone, Debug)]
struct UpStage {
    blocks: Vec<ResBlock>,
    upsample: Option<Conv2d>,
}

/// Noise-prediction U-Net over the channel concatenation `[depth ; y_t]`.
#[derive(Clone, Debug)]
pub struct UNet {
    config: DenoiserConfig,
    layout: ParamLayout,
    emb1: Linear,
    emb2: Linear,
    conv_in: Conv2d,
    down: Vec<DownStage>,
    mid: ResBlock,
    up: Vec<UpStage>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

pub struct UNetCache<S> {
    input: Image<S>,
    emb: Vec<S>,
    emb_pre: Vec<S>,
    temb: Vec<S>,
    temb_act: Vec<S>,
    down: Vec<Vec<ResCache<S>>>,
    down_in: Vec<Option<Image<S>>>,
    mid: ResCache<S>,
    // indexed by stage, filled in forward order (deepest stage first)
    up: Vec<Vec<ResCache<S>>>,
    up_in: Vec<Option<Image<S>>>,
    final_in: Image<S>,
    final_norm: Image<S>,
    final_act: Image<S>,
}

impl UNet {
    /// Caller validates `config` first.
    pub(crate) fn new(config: &DenoiserConfig) -> Self {
        let mut layout = ParamLayout::new();
        let l = &mut layout;
        let e = config.noise_embed_dim;
        let groups = config.norm_groups;
        let base = config.base_channels;
        let ch: Vec<usize> = config.channel_multipliers.iter().map(|m| base * m).collect();
        let stages = ch.len();
        let blocks = config.blocks_per_stage;

        let emb1 = Linear::new(l, "temb.lin1", e, e, Linear::default_init(e));
        let emb2 = Linear::new(l, "temb.lin2", e, e, Linear::default_init(e));
        let conv_in = Conv2d::same3(l, "conv_in", DenoiserConfig::COND_CHANNELS + DenoiserConfig::OUT_CHANNELS, base);

        let mut down = Vec::with_capacity(stages);
        let mut cur = base;
        for s in 0..stages {
            let mut bs = Vec::with_capacity(blocks);
            for b in 0..blocks {
                bs.push(ResBlock::new(l, &format!("down{s}.block{b}"), cur, ch[s], e, groups));
                cur = ch[s];
            }
            let downsample = (s + 1 < stages)
                .then(|| Conv2d::new(l, &format!("down{s}.downsample"), cur, cur, 3, 2, 1, Conv2d::default_init(cur, 3)));
            down.push(DownStage {
                blocks: bs,
                downsample,
            });
        }

        let mid = ResBlock::new(l, "mid", cur, cur, e, groups);

        // built deepest-first, stored by stage index
        let mut up: Vec<Option<UpStage>> = (0..stages).map(|_| None).collect();
        for s in (0..stages).rev() {
            let mut bs = Vec::with_capacity(blocks);
            for b in 0..blocks {
                bs.push(ResBlock::new(l, &format!("up{s}.block{b}"), cur + ch[s], ch[s], e, groups));
                cur = ch[s];
            }
            let upsample = (s > 0).then(|| Conv2d::same3(l, &format!("up{s}.upsample"), cur, cur));
            up[s] = Some(UpStage {
                blocks: bs,
                upsample,
            });
        }
        let up = up.into_iter().map(Option::unwrap).collect();

        let norm_out = GroupNorm::new(l, "norm_out", cur, groups);
        let conv_out = Conv2d::new(l, "conv_out", cur, DenoiserConfig::OUT_CHANNELS, 3, 1, 1, Init::Zeros);

        UNet {
            config: config.clone(),
            layout,
            emb1,
            emb2,
            conv_in,
            down,
            mid,
            up,
            norm_out,
            conv_out,
        }
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    /// Sum of per-layer counts; must agree with the layout size.
    pub fn tally(&self) -> usize {
        let mut n = self.emb1.param_count() + self.emb2.param_count() + self.conv_in.param_count();
        for st in &self.down {
            n += st.blocks.iter().map(ResBlock::param_count).sum::<usize>();
            n += st.downsample.as_ref().map_or(0, Conv2d::param_count);
        }
        n += self.mid.param_count();
        for st in &self.up {
            n += st.blocks.iter().map(ResBlock::param_count).sum::<usize>();
            n += st.upsample.as_ref().map_or(0, Conv2d::param_count);
        }
        n + self.norm_out.param_count() + self.conv_out.param_count()
    }

    /// `cond` is the normalized `1 x H x W` depth, `y_t` the `3 x H x W` state.
    pub fn forward<S: Scalar>(&self, p: &[S], cond: &Image<S>, y_t: &Image<S>, t: usize) -> (Image<S>, UNetCache<S>) {
        let stages = self.down.len();
        let emb = timestep_embedding::<S>(t, self.config.noise_embed_dim);
        let emb_pre = self.emb1.forward(p, &emb);
        let temb = self.emb2.forward(p, &silu_vec(&emb_pre));
        let temb_act = silu_vec(&temb);

        let input = cond.concat_channels(y_t).expect("spatial sizes checked by caller");
        let mut h = self.conv_in.forward(p, &input);

        let mut skips: Vec<Image<S>> = Vec::new();
        let mut down_caches = Vec::with_capacity(stages);
        let mut down_in = Vec::with_capacity(stages);
        for st in &self.down {
            let mut caches = Vec::with_capacity(st.blocks.len());
            for block in &st.blocks {
                let (out, cache) = block.forward(p, h, &temb_act);
                skips.push(out.clone());
                caches.push(cache);
                h = out;
            }
            down_caches.push(caches);
            match &st.downsample {
                Some(conv) => {
                    let next = conv.forward(p, &h);
                    down_in.push(Some(std::mem::replace(&mut h, next)));
                }
                None => down_in.push(None),
            }
        }

        let (mid_out, mid_cache) = self.mid.forward(p, h, &temb_act);
        h = mid_out;

        let mut up_caches: Vec<Vec<ResCache<S>>> = (0..stages).map(|_| Vec::new()).collect();
        let mut up_in: Vec<Option<Image<S>>> = (0..stages).map(|_| None).collect();
        for s in (0..stages).rev() {
            let st = &self.up[s];
            for block in &st.blocks {
                let skip = skips.pop().expect("one skip per up block");
                let joined = h.concat_channels(&skip).expect("skip resolution");
                let (out, cache) = block.forward(p, joined, &temb_act);
                up_caches[s].push(cache);
                h = out;
            }
            if let Some(conv) = &st.upsample {
                let u = upsample2(&h);
                h = conv.forward(p, &u);
                up_in[s] = Some(u);
            }
        }

        let final_norm = self.norm_out.forward(p, &h);
        let final_act = silu(&final_norm);
        let out = self.conv_out.forward(p, &final_act);
        (
            out,
            UNetCache {
                input,
                emb,
                emb_pre,
                temb,
                temb_act,
                down: down_caches,
                down_in,
                mid: mid_cache,
                up: up_caches,
                up_in,
                final_in: h,
                final_norm,
                final_act,
            },
        )
    }

    /// Accumulates `dL/dθ` into `g` given `dL/d(output)`.
    pub fn backward<S: Scalar>(&self, p: &[S], cache: &UNetCache<S>, dout: &Image<S>, g: &mut [S]) {
        assert_eq!(g.len(), self.layout.len());
        let stages = self.down.len();
        let blocks = self.config.blocks_per_stage;
        let mut dtemb_act = vec![S::zero(); self.config.noise_embed_dim];

        let da = self.conv_out.backward(p, &cache.final_act, dout, g, true).unwrap();
        let dn = silu_backward(&cache.final_norm, &da);
        let mut dh = self.norm_out.backward(p, &cache.final_in, &dn, g);

        let mut skip_grads: Vec<Option<Image<S>>> = (0..stages * blocks).map(|_| None).collect();
        for s in 0..stages {
            let st = &self.up[s];
            if let Some(conv) = &st.upsample {
                let u = cache.up_in[s].as_ref().unwrap();
                let du = conv.backward(p, u, &dh, g, true).unwrap();
                dh = upsample2_backward(&du);
            }
            for b in (0..blocks).rev() {
                let block = &st.blocks[b];
                let djoined = block.backward(p, &cache.up[s][b], &dh, &cache.temb_act, g, &mut dtemb_act);
                let h_channels = block.cin - block.cout;
                let (dprev, dskip) = djoined.split_channels(h_channels);
                skip_grads[s * blocks + blocks - 1 - b] = Some(dskip);
                dh = dprev;
            }
        }

        dh = self
            .mid
            .backward(p, &cache.mid, &dh, &cache.temb_act, g, &mut dtemb_act);

        for s in (0..stages).rev() {
            let st = &self.down[s];
            if let Some(conv) = &st.downsample {
                let x = cache.down_in[s].as_ref().unwrap();
                dh = conv.backward(p, x, &dh, g, true).unwrap();
            }
            for b in (0..blocks).rev() {
                let ds = skip_grads[s * blocks + b].take().expect("skip gradient");
                for (d, &v) in dh.data_mut().iter_mut().zip(ds.data()) {
                    *d += v;
                }
                dh = st.blocks[b].backward(p, &cache.down[s][b], &dh, &cache.temb_act, g, &mut dtemb_act);
            }
        }

        self.conv_in.backward(p, &cache.input, &dh, g, false);

        let dtemb = silu_backward_vec(&cache.temb, &dtemb_act);
        let demb_act = self.emb2.backward(p, &silu_vec(&cache.emb_pre), &dtemb, g);
        let demb_pre = silu_backward_vec(&cache.emb_pre, &demb_act);
        self.emb1.backward(p, &cache.emb, &demb_pre, g);
    }
}
