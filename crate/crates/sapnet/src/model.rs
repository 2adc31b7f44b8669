//! SAP-net: wavelet-based pseudo-reference enhancement (WBRE), perceptual
//! quality estimation with spatial attention (PQE) and quality regression (QR).

use std::fmt;

use panoqa_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::graph::Var;
use crate::params::{Init, ParamStore};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WbreConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub res_blocks_per_level: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqeConfig {
    pub stage_blocks: [usize; 4],
    pub stem_channels: usize,
    pub attention_kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrConfig {
    pub conv_channels: [usize; 2],
    pub fc_hidden: usize,
}

/// Normalisation placement; recorded with every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormConfig {
    pub wbre: bool,
    pub pqe: bool,
    pub qr: bool,
    pub momentum: f64,
    pub eps: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self {
            wbre: false,
            pqe: true,
            qr: true,
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub wbre: WbreConfig,
    pub pqe: PqeConfig,
    pub qr: QrConfig,
    pub norm: NormConfig,
    /// Standard deviation of the WBRE output head at initialisation; 0 makes
    /// the network an exact identity on `R̂`.
    pub head_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 256,
            wbre: WbreConfig {
                levels: 2,
                base_channels: 64,
                res_blocks_per_level: 2,
            },
            pqe: PqeConfig {
                stage_blocks: [3, 4, 6, 3],
                stem_channels: 64,
                attention_kernel: 7,
            },
            qr: QrConfig {
                conv_channels: [64, 64],
                fc_hidden: 128,
            },
            norm: NormConfig::default(),
            head_init_std: 1e-3,
        }
    }
}

impl ModelConfig {
    /// Reduced network for CPU-scale experiments and tests.
    pub fn desk() -> Self {
        let mut c = Self {
            patch_size: 64,
            ..Self::default()
        };
        c.wbre.base_channels = 8;
        c.pqe.stem_channels = 8;
        c.qr.conv_channels = [16, 16];
        c.qr.fc_hidden = 32;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let div = 1usize << (self.wbre.levels + 3);
        if self.patch_size == 0 || self.patch_size % div != 0 {
            return Err(Error::arg(format!(
                "patch_size {} must be a positive multiple of 2^(levels+3) = {div}",
                self.patch_size
            )));
        }
        if self.wbre.levels == 0 {
            return Err(Error::arg("WBRE needs at least one level"));
        }
        if self.pqe.stage_blocks.contains(&0) {
            return Err(Error::arg("every PQE stage needs at least one block"));
        }
        if self.pqe.attention_kernel % 2 == 0 {
            return Err(Error::arg("attention_kernel must be odd"));
        }
        let widths = [
            self.wbre.base_channels,
            self.pqe.stem_channels,
            self.qr.conv_channels[0],
            self.qr.conv_channels[1],
            self.qr.fc_hidden,
        ];
        if widths.contains(&0) {
            return Err(Error::arg("channel widths must be positive"));
        }
        if !(self.norm.momentum > 0.0 && self.norm.momentum <= 1.0 && self.norm.eps > 0.0) {
            return Err(Error::arg("batch-norm momentum must be in (0, 1] and eps positive"));
        }
        Ok(())
    }

    fn stage_channels(&self) -> [usize; 4] {
        let c = self.pqe.stem_channels;
        [c, 2 * c, 4 * c, 8 * c]
    }

    /// Every PQE residual block in execution order.
    pub fn rsab_blocks(&self) -> Vec<RsabSpec> {
        let widths = self.stage_channels();
        let mut out = Vec::new();
        let mut cin = self.pqe.stem_channels;
        for (s, &n) in self.pqe.stage_blocks.iter().enumerate() {
            for b in 0..n {
                out.push(RsabSpec {
                    name: format!("pqe.stage{}.block{b}", s + 1),
                    in_channels: cin,
                    out_channels: widths[s],
                    stride: if b == 0 && s > 0 { 2 } else { 1 },
                });
                cin = widths[s];
            }
        }
        out
    }
}

/// Network variant: the full model or one of the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Ablation {
    #[default]
    None,
    /// Plain residual blocks; spatial attention removed.
    NoRsab,
    /// QR consumes the pooled error map only.
    NoConcat,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::None, Ablation::NoRsab, Ablation::NoConcat];

    /// Row label in comparison tables.
    pub fn variant_name(self) -> &'static str {
        match self {
            Ablation::None => "FULL",
            Ablation::NoRsab => "NO_RSAB",
            Ablation::NoConcat => "NO_CONCAT",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::None => "NONE",
            Ablation::NoRsab => "NO_RSAB",
            Ablation::NoConcat => "NO_CONCAT",
        })
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "NONE" | "FULL" => Ok(Ablation::None),
            "NO_RSAB" => Ok(Ablation::NoRsab),
            "NO_CONCAT" => Ok(Ablation::NoConcat),
            _ => Err(Error::arg(format!("unknown ablation '{s}' (NONE, NO_RSAB, NO_CONCAT)"))),
        }
    }
}

/// Geometry of one PQE residual block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RsabSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl RsabSpec {
    pub fn has_projection(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels
    }
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub score: Var,
    pub enhanced: Var,
    pub subbands: Var,
    pub error: Var,
    pub sapq: Var,
    pub concat: Var,
}

/// Values of one forward pass, batched along the first axis.
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    /// `ŝ`, shape `(n, 1, 1, 1)`.
    pub score: Tensor,
    /// `R̂`, same shape as the input.
    pub enhanced: Tensor,
    /// `F̂`, channels `[LL(3) | LH(3) | HL(3) | HH(3)]` at half resolution.
    pub subbands: Tensor,
    /// `Ê = R̂ − I`.
    pub error: Tensor,
    /// `P̂`, one channel at stride 8.
    pub sapq: Tensor,
    /// `Ĉ`, the QR input.
    pub concat: Tensor,
}

impl ForwardVars {
    pub fn outputs(&self, g: &Graph) -> ForwardOutputs {
        ForwardOutputs {
            score: g.value(self.score).clone(),
            enhanced: g.value(self.enhanced).clone(),
            subbands: g.value(self.subbands).clone(),
            error: g.value(self.error).clone(),
            sapq: g.value(self.sapq).clone(),
            concat: g.value(self.concat).clone(),
        }
    }
}

impl ForwardOutputs {
    pub fn all_finite(&self) -> bool {
        [&self.score, &self.enhanced, &self.subbands, &self.error, &self.sapq, &self.concat]
            .iter()
            .all(|t| t.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct SapNet {
    pub config: ModelConfig,
    pub ablation: Ablation,
    pub params: ParamStore,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::arg(msg()))
    }
}

/// `Ê = R̂ − I` on plain tensors.
pub fn error_map(enhanced: &Tensor, impaired: &Tensor) -> Result<Tensor> {
    check(enhanced.shape == impaired.shape, || {
        format!("error map shapes differ: {:?} vs {:?}", enhanced.shape, impaired.shape)
    })?;
    let data = enhanced.data.iter().zip(&impaired.data).map(|(r, i)| r - i).collect();
    Ok(Tensor::new(enhanced.shape, data))
}

impl SapNet {
    pub fn new(config: ModelConfig, ablation: Ablation, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut net = Self {
            config,
            ablation,
            params: ParamStore::new(),
        };
        net.init_params(&mut Init::new(seed));
        Ok(net)
    }

    /// Rebuilds a network around loaded parameters, checking every expected
    /// tensor is present with the right shape.
    pub fn from_params(config: ModelConfig, ablation: Ablation, params: ParamStore) -> Result<Self> {
        let template = Self::new(config, ablation, 0)?;
        for (name, t) in template.params.iter() {
            let got = params.get(name)?;
            check(got.shape == t.shape, || {
                format!("parameter '{name}' has shape {:?}, expected {:?}", got.shape, t.shape)
            })?;
        }
        check(params.len() == template.params.len(), || {
            format!(
                "checkpoint has {} parameters, the configured network has {}",
                params.len(),
                template.params.len()
            )
        })?;
        Ok(Self {
            config: template.config,
            ablation,
            params,
        })
    }

    /// Every PQE residual block in execution order.
    pub fn rsab_blocks(&self) -> Vec<RsabSpec> {
        self.config.rsab_blocks()
    }

    fn qr_in_channels(&self) -> usize {
        match self.ablation {
            Ablation::NoConcat => 3,
            _ => 4,
        }
    }

    fn init_params(&mut self, init: &mut Init) {
        let cfg = self.config.clone();
        let blocks = self.rsab_blocks();
        let qin = self.qr_in_channels();
        let attn = self.ablation != Ablation::NoRsab;
        let mut b = Builder {
            p: ParamStore::new(),
            init,
        };

        let w = &cfg.wbre;
        let wn = cfg.norm.wbre;
        let mut c = w.base_channels;
        let mut cin = 12;
        let mut widths = Vec::new();
        for l in 0..w.levels {
            let pre = format!("wbre.enc{l}");
            b.conv(&format!("{pre}.in"), cin, c, 3, 1.0, wn);
            b.rir(&pre, c, w.res_blocks_per_level, wn);
            widths.push(c);
            cin = 4 * c;
            c *= 2;
        }
        for l in (0..w.levels - 1).rev() {
            let pre = format!("wbre.dec{l}");
            b.conv(&format!("{pre}.up"), widths[l + 1], 4 * widths[l], 3, 1.0, wn);
            b.rir(&pre, widths[l], w.res_blocks_per_level, wn);
        }
        let he_std = (2.0 / (widths[0] * 9) as f64).sqrt();
        b.conv("wbre.head", widths[0], 12, 3, cfg.head_init_std / he_std, false);

        let pn = cfg.norm.pqe;
        let sc = cfg.pqe.stem_channels;
        for stem in ["pqe.stem_i", "pqe.stem_e"] {
            b.conv(&format!("{stem}.conv1"), 3, sc, 3, 1.0, pn);
            b.conv(&format!("{stem}.conv2"), sc, sc, 3, 1.0, pn);
        }
        b.conv("pqe.fuse", 2 * sc, sc, 3, 1.0, pn);
        for blk in &blocks {
            b.conv(&format!("{}.conv1", blk.name), blk.in_channels, blk.out_channels, 3, 1.0, pn);
            b.conv(&format!("{}.conv2", blk.name), blk.out_channels, blk.out_channels, 3, 1.0, pn);
            if blk.has_projection() {
                b.conv(&format!("{}.shortcut", blk.name), blk.in_channels, blk.out_channels, 1, 1.0, pn);
            }
            if attn {
                b.conv(&format!("{}.attn", blk.name), 2, 1, cfg.pqe.attention_kernel, 1.0, false);
            }
        }
        b.conv("pqe.dec.lateral", 8 * sc, 4 * sc, 1, 1.0, false);
        b.conv("pqe.dec.conv", 4 * sc, sc, 3, 1.0, pn);
        b.conv("pqe.dec.out", sc, 1, 1, 1.0, false);

        let qn = cfg.norm.qr;
        let [q0, q1] = cfg.qr.conv_channels;
        b.conv("qr.conv1", qin, q0, 3, 1.0, qn);
        b.conv("qr.conv2", q0, q1, 3, 1.0, qn);
        b.linear("qr.fc1", 2 * q1, cfg.qr.fc_hidden);
        b.linear("qr.fc2", cfg.qr.fc_hidden, 1);
        self.params = b.p;
    }

    fn p(&self, g: &mut Graph, name: &str) -> Result<Var> {
        let t = self.params.get(name)?;
        Ok(g.param(name, t))
    }

    /// Convolution with "same" padding, followed by batch norm when the layer
    /// was built with one.
    fn conv(&self, g: &mut Graph, name: &str, x: Var, stride: usize) -> Result<Var> {
        let w = self.p(g, &format!("{name}.weight"))?;
        let k = g.shape(w).h;
        let bias_name = format!("{name}.bias");
        let b = if self.params.get(&bias_name).is_ok() {
            Some(self.p(g, &bias_name)?)
        } else {
            None
        };
        check(g.shape(x).c == g.shape(w).c, || {
            format!("{name}: input has {} channels, layer expects {}", g.shape(x).c, g.shape(w).c)
        })?;
        let y = g.conv2d(x, w, b, stride, k / 2);
        let bn = format!("{name}.bn");
        if self.params.get(&format!("{bn}.gamma")).is_ok() {
            let gamma = self.p(g, &format!("{bn}.gamma"))?;
            let beta = self.p(g, &format!("{bn}.beta"))?;
            let rm = self.params.buffer(&format!("{bn}.running_mean"))?;
            let rv = self.params.buffer(&format!("{bn}.running_var"))?;
            return Ok(g.batch_norm(&bn, y, gamma, beta, (&rm.data, &rv.data), self.config.norm.eps));
        }
        Ok(y)
    }

    fn conv_relu(&self, g: &mut Graph, name: &str, x: Var, stride: usize) -> Result<Var> {
        let y = self.conv(g, name, x, stride)?;
        Ok(g.relu(y))
    }

    /// Residual-in-residual group: `x + out(RB_n(…RB_1(x)))`.
    fn rir(&self, g: &mut Graph, pre: &str, x: Var) -> Result<Var> {
        let mut t = x;
        for r in 0..self.config.wbre.res_blocks_per_level {
            let a = self.conv_relu(g, &format!("{pre}.rb{r}.conv1"), t, 1)?;
            let b = self.conv(g, &format!("{pre}.rb{r}.conv2"), a, 1)?;
            t = g.add(t, b);
        }
        let o = self.conv(g, &format!("{pre}.out"), t, 1)?;
        Ok(g.add(x, o))
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        let s = g.shape(x);
        let p = self.config.patch_size;
        check(s.c == 3 && s.h == p && s.w == p, || {
            format!("expected patches of shape (n, 3, {p}, {p}), got {s:?}")
        })
    }

    /// WBRE: returns `(F̂, R̂)` with `R̂ = IWT(F̂)`.
    pub fn wbre_forward(&self, g: &mut Graph, input: Var) -> Result<(Var, Var)> {
        self.check_input(g, input)?;
        let levels = self.config.wbre.levels;
        let d1 = g.dwt(input);
        let mut enc = Vec::with_capacity(levels);
        let mut x = d1;
        for l in 0..levels {
            let pre = format!("wbre.enc{l}");
            if l > 0 {
                x = g.dwt(x);
            }
            let h = self.conv(g, &format!("{pre}.in"), x, 1)?;
            x = self.rir(g, &pre, h)?;
            enc.push(x);
        }
        let mut u = enc[levels - 1];
        for l in (0..levels - 1).rev() {
            let pre = format!("wbre.dec{l}");
            let up = self.conv(g, &format!("{pre}.up"), u, 1)?;
            let skip = g.dwt(enc[l]);
            let up = g.add(up, skip);
            let r = g.iwt(up);
            let r = g.add(r, enc[l]);
            u = self.rir(g, &pre, r)?;
        }
        let head = self.conv(g, "wbre.head", u, 1)?;
        let subbands = g.add(d1, head);
        let enhanced = g.iwt(subbands);
        Ok((subbands, enhanced))
    }

    /// `Ê = R̂ − I` inside a graph.
    pub fn error_map(&self, g: &mut Graph, enhanced: Var, input: Var) -> Result<Var> {
        check(g.shape(enhanced) == g.shape(input), || {
            format!("error map shapes differ: {:?} vs {:?}", g.shape(enhanced), g.shape(input))
        })?;
        Ok(g.sub(enhanced, input))
    }

    /// Sigmoid of a k×k convolution over channelwise mean and max maps.
    pub fn spatial_attention(&self, g: &mut Graph, name: &str, feature: Var) -> Result<Var> {
        check(g.shape(feature).c >= 1, || "attention needs at least one channel".into())?;
        let mean = g.channel_mean(feature);
        let max = g.channel_max(feature);
        let stats = g.concat_channels(&[mean, max]);
        let logits = self.conv(g, name, stats, 1)?;
        Ok(g.sigmoid(logits))
    }

    /// `y = shortcut(x) + f(x) ⊙ attention(f(x))`; the attention gate is
    /// dropped under [`Ablation::NoRsab`].
    pub fn rsab_forward(&self, g: &mut Graph, block: &RsabSpec, x: Var) -> Result<Var> {
        check(g.shape(x).c == block.in_channels, || {
            format!("{}: expected {} channels, got {}", block.name, block.in_channels, g.shape(x).c)
        })?;
        let a = self.conv_relu(g, &format!("{}.conv1", block.name), x, block.stride)?;
        let f = self.conv(g, &format!("{}.conv2", block.name), a, 1)?;
        let branch = if self.ablation == Ablation::NoRsab {
            f
        } else {
            let mask = self.spatial_attention(g, &format!("{}.attn", block.name), f)?;
            g.mul_broadcast(f, mask)
        };
        let shortcut = if block.has_projection() {
            self.conv(g, &format!("{}.shortcut", block.name), x, block.stride)?
        } else {
            x
        };
        Ok(g.add(shortcut, branch))
    }

    /// PQE: untied stems for `I` and `Ê`, fusion, four RSAB stages and a
    /// light decoder to the stride-8 SAPQ map.
    pub fn pqe_forward(&self, g: &mut Graph, input: Var, error: Var) -> Result<Var> {
        check(g.shape(input) == g.shape(error), || {
            format!("PQE inputs differ in shape: {:?} vs {:?}", g.shape(input), g.shape(error))
        })?;
        let mut stems = Vec::new();
        for (name, x) in [("pqe.stem_i", input), ("pqe.stem_e", error)] {
            let a = self.conv_relu(g, &format!("{name}.conv1"), x, 1)?;
            stems.push(self.conv_relu(g, &format!("{name}.conv2"), a, 2)?);
        }
        let cat = g.concat_channels(&stems);
        let mut x = self.conv_relu(g, "pqe.fuse", cat, 1)?;
        let blocks = self.rsab_blocks();
        let mut stage_out = Vec::new();
        let mut next = 0;
        for &n in &self.config.pqe.stage_blocks {
            for b in &blocks[next..next + n] {
                x = self.rsab_forward(g, b, x)?;
            }
            next += n;
            stage_out.push(x);
        }
        let lateral = self.conv(g, "pqe.dec.lateral", stage_out[3], 1)?;
        let up = g.upsample2(lateral);
        let merged = g.add(up, stage_out[2]);
        let d = self.conv_relu(g, "pqe.dec.conv", merged, 1)?;
        let logits = self.conv(g, "pqe.dec.out", d, 1)?;
        Ok(g.sigmoid(logits))
    }

    /// QR: returns `(ŝ, Ĉ)`.
    pub fn qr_forward(&self, g: &mut Graph, sapq: Var, error: Var) -> Result<(Var, Var)> {
        let (ps, es) = (g.shape(sapq), g.shape(error));
        check(ps.c == 1 && es.h == ps.h * 8 && es.w == ps.w * 8, || {
            format!("QR expects a stride-8 one-channel map, got P̂ {ps:?} for Ê {es:?}")
        })?;
        let pooled = g.avg_pool(error, 8);
        let concat = match self.ablation {
            Ablation::NoConcat => pooled,
            _ => g.concat_channels(&[sapq, pooled]),
        };
        debug_assert_eq!(g.shape(concat).c, self.qr_in_channels());
        let a = self.conv_relu(g, "qr.conv1", concat, 1)?;
        let b = self.conv_relu(g, "qr.conv2", a, 1)?;
        let mx = g.global_max_pool(b);
        let av = g.global_avg_pool(b);
        let feat = g.concat_channels(&[mx, av]);
        let (w1, b1) = (self.p(g, "qr.fc1.weight")?, self.p(g, "qr.fc1.bias")?);
        let h = g.linear(feat, w1, b1);
        let h = g.relu(h);
        let (w2, b2) = (self.p(g, "qr.fc2.weight")?, self.p(g, "qr.fc2.bias")?);
        Ok((g.linear(h, w2, b2), concat))
    }

    pub fn forward_graph(&self, g: &mut Graph, input: Var) -> Result<ForwardVars> {
        let (subbands, enhanced) = self.wbre_forward(g, input)?;
        let error = self.error_map(g, enhanced, input)?;
        let sapq = self.pqe_forward(g, input, error)?;
        let (score, concat) = self.qr_forward(g, sapq, error)?;
        Ok(ForwardVars {
            score,
            enhanced,
            subbands,
            error,
            sapq,
            concat,
        })
    }

    /// Inference-mode forward pass (running batch-norm statistics).
    pub fn forward(&self, batch: &Tensor) -> Result<ForwardOutputs> {
        let mut g = Graph::new(false);
        let x = g.input(batch.clone());
        let vars = self.forward_graph(&mut g, x)?;
        Ok(vars.outputs(&g))
    }

    /// Per-patch scores in inference mode.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(batch)?.score.data)
    }
}

struct Builder<'a> {
    p: ParamStore,
    init: &'a mut Init,
}

impl Builder<'_> {
    /// Convolution weights; the bias is replaced by batch-norm affine
    /// parameters and running buffers when `norm` is set.
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, gain: f64, norm: bool) {
        self.p
            .insert(format!("{name}.weight"), self.init.he(Shape::new(cout, cin, k, k), gain));
        let v = Shape::new(1, cout, 1, 1);
        if norm {
            let bn = format!("{name}.bn");
            self.p.insert(format!("{bn}.gamma"), Tensor::full(v, 1.0));
            self.p.insert(format!("{bn}.beta"), Tensor::zeros(v));
            self.p.insert_buffer(format!("{bn}.running_mean"), Tensor::zeros(v));
            self.p.insert_buffer(format!("{bn}.running_var"), Tensor::full(v, 1.0));
        } else {
            self.p.insert(format!("{name}.bias"), Tensor::zeros(v));
        }
    }

    fn rir(&mut self, pre: &str, c: usize, blocks: usize, norm: bool) {
        for r in 0..blocks {
            self.conv(&format!("{pre}.rb{r}.conv1"), c, c, 3, 1.0, norm);
            self.conv(&format!("{pre}.rb{r}.conv2"), c, c, 3, 0.1, norm);
        }
        self.conv(&format!("{pre}.out"), c, c, 3, 0.1, norm);
    }

    fn linear(&mut self, name: &str, fin: usize, fout: usize) {
        self.p
            .insert(format!("{name}.weight"), self.init.he(Shape::new(fout, fin, 1, 1), 1.0));
        self.p.insert(format!("{name}.bias"), Tensor::zeros(Shape::new(1, fout, 1, 1)));
    }
}
