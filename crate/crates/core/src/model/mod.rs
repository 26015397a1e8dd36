//! Pre-activation wide residual networks with a configurable pooling stage.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BnStats, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::wavelet::{FilterBank, WaveletBase};

#[cfg(test)]
mod tests;

/// Where the pooling stage sits in the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WapPosition {
    AfterFirstConv,
    BeforeFinalRelu,
    AfterFinalRelu,
    Disabled,
}

impl WapPosition {
    pub const ALL: [WapPosition; 4] = [
        WapPosition::AfterFirstConv,
        WapPosition::BeforeFinalRelu,
        WapPosition::AfterFinalRelu,
        WapPosition::Disabled,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            WapPosition::AfterFirstConv => "after_first_conv",
            WapPosition::BeforeFinalRelu => "before_final_relu",
            WapPosition::AfterFinalRelu => "after_final_relu",
            WapPosition::Disabled => "disabled",
        }
    }
}

impl fmt::Display for WapPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WapPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WapPosition::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown wap_position `{s}`")))
    }
}

/// What the pooling stage computes.
///
/// `Subsample` keeps the even-indexed samples and exists as a non-wavelet control.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolingVariant {
    Wap,
    Lpf,
    Subsample,
}

impl PoolingVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            PoolingVariant::Wap => "wap",
            PoolingVariant::Lpf => "lpf",
            PoolingVariant::Subsample => "subsample",
        }
    }
}

impl fmt::Display for PoolingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolingVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wap" => Ok(PoolingVariant::Wap),
            "lpf" => Ok(PoolingVariant::Lpf),
            "subsample" => Ok(PoolingVariant::Subsample),
            _ => Err(Error::Config(format!("unknown pooling_variant `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Residual blocks per group.
    pub depth: usize,
    /// Channel multiplier of the residual groups.
    pub width: usize,
    /// Stem channels; group `g` has `base_channels * width * 2^g` channels.
    pub base_channels: usize,
    pub num_classes: usize,
    /// Side length of the square input images.
    pub input_size: usize,
    pub wavelet_base: Option<WaveletBase>,
    pub wap_position: WapPosition,
    pub pooling_variant: PoolingVariant,
    /// Multiply the low-pass output by 0.5 (only for `PoolingVariant::Lpf`).
    pub lpf_half_scale: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            width: 2,
            base_channels: 16,
            num_classes: 10,
            input_size: 32,
            wavelet_base: Some(WaveletBase::Haar),
            wap_position: WapPosition::AfterFinalRelu,
            pooling_variant: PoolingVariant::Wap,
            lpf_half_scale: false,
        }
    }
}

impl ModelConfig {
    pub fn group_channels(&self) -> [usize; 3] {
        let c = self.base_channels * self.width;
        [c, 2 * c, 4 * c]
    }

    fn pooling_enabled(&self) -> bool {
        self.wap_position != WapPosition::Disabled
    }

    /// Spatial side of the map entering the final average pool.
    pub fn final_spatial(&self) -> usize {
        let s = self.input_size / 4;
        if self.pooling_enabled() {
            s / 2
        } else {
            s
        }
    }

    /// Spatial side at the pooling stage, if any.
    pub fn pooling_input_spatial(&self) -> Option<usize> {
        match self.wap_position {
            WapPosition::Disabled => None,
            WapPosition::AfterFirstConv => Some(self.input_size),
            _ => Some(self.input_size / 4),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.depth == 0 || self.width == 0 || self.base_channels == 0 {
            return bad("depth, width and base_channels must be at least 1".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(4) {
            return bad(format!(
                "input_size {} must be a positive multiple of 4",
                self.input_size
            ));
        }
        if let Some(s) = self.pooling_input_spatial() {
            if s % 2 != 0 || (self.wap_position == WapPosition::AfterFirstConv && !self.input_size.is_multiple_of(8)) {
                return bad(format!(
                    "spatial size {s} at the {} pooling stage is not even all the way down",
                    self.wap_position
                ));
            }
            if self.pooling_variant != PoolingVariant::Subsample && self.wavelet_base.is_none() {
                return bad(format!("wap_position {} needs a wavelet_base", self.wap_position));
            }
        }
        Ok(())
    }

    /// Parameter count implied by the configuration.
    pub fn parameter_count(&self) -> usize {
        let [c1, c2, c3] = self.group_channels();
        let mut total = 3 * self.base_channels * 9;
        let mut in_c = self.base_channels;
        for (g, &out_c) in [c1, c2, c3].iter().enumerate() {
            for b in 0..self.depth {
                let stride = if b == 0 && g > 0 { 2 } else { 1 };
                total += 2 * in_c + 9 * in_c * out_c + 2 * out_c + 9 * out_c * out_c;
                if in_c != out_c || stride != 1 {
                    total += in_c * out_c;
                }
                in_c = out_c;
            }
        }
        total + 2 * c3 + c3 * self.num_classes + self.num_classes
    }
}

/// Static description of one residual block.
#[derive(Clone, Debug)]
struct BlockSpec {
    prefix: String,
    in_c: usize,
    out_c: usize,
    stride: usize,
}

impl BlockSpec {
    fn has_shortcut(&self) -> bool {
        self.in_c != self.out_c || self.stride != 1
    }
}

fn block_specs(cfg: &ModelConfig) -> Vec<BlockSpec> {
    let mut specs = Vec::new();
    let mut in_c = cfg.base_channels;
    for (g, &out_c) in cfg.group_channels().iter().enumerate() {
        for b in 0..cfg.depth {
            let stride = if b == 0 && g > 0 { 2 } else { 1 };
            specs.push(BlockSpec {
                prefix: format!("group{g}.block{b}"),
                in_c,
                out_c,
                stride,
            });
            in_c = out_c;
        }
    }
    specs
}

/// Output of the convolutional trunk.
pub struct Features {
    /// Map entering the final average pool, `[N, C, s, s]`.
    pub map: Var,
    /// Running statistics after this pass (training mode only), in model order.
    pub bn_updates: Vec<BnStats>,
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    fb: Option<FilterBank>,
    blocks: Vec<BlockSpec>,
    names: Vec<String>,
    params: Vec<Tensor>,
    index: HashMap<String, usize>,
    bn_names: Vec<String>,
    bn: Vec<BnStats>,
    bn_index: HashMap<String, usize>,
}

/// Builds a model with Kaiming fan-in normal weights drawn from `seed`.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::new();
    let mut params = Vec::new();
    let mut bn_names = Vec::new();
    let mut bn = Vec::new();
    let mut conv = |name: String, k: usize, c: usize, ks: usize, names: &mut Vec<String>, params: &mut Vec<Tensor>| {
        let std = (2.0 / (c * ks * ks) as f32).sqrt();
        params.push(Tensor::randn(&[k, c, ks, ks], std, &mut rng));
        names.push(name);
    };
    let norm = |name: &str,
                c: usize,
                names: &mut Vec<String>,
                params: &mut Vec<Tensor>,
                bn_names: &mut Vec<String>,
                bn: &mut Vec<BnStats>| {
        names.push(format!("{name}.gamma"));
        params.push(Tensor::full(&[c], 1.0));
        names.push(format!("{name}.beta"));
        params.push(Tensor::zeros(&[c]));
        bn_names.push(name.to_string());
        bn.push(BnStats::new(c));
    };

    conv("stem.weight".into(), cfg.base_channels, 3, 3, &mut names, &mut params);
    let blocks = block_specs(cfg);
    for b in &blocks {
        let p = &b.prefix;
        norm(
            &format!("{p}.bn1"),
            b.in_c,
            &mut names,
            &mut params,
            &mut bn_names,
            &mut bn,
        );
        conv(format!("{p}.conv1.weight"), b.out_c, b.in_c, 3, &mut names, &mut params);
        norm(
            &format!("{p}.bn2"),
            b.out_c,
            &mut names,
            &mut params,
            &mut bn_names,
            &mut bn,
        );
        conv(
            format!("{p}.conv2.weight"),
            b.out_c,
            b.out_c,
            3,
            &mut names,
            &mut params,
        );
        if b.has_shortcut() {
            conv(
                format!("{p}.shortcut.weight"),
                b.out_c,
                b.in_c,
                1,
                &mut names,
                &mut params,
            );
        }
    }
    let c3 = cfg.group_channels()[2];
    norm("final_bn", c3, &mut names, &mut params, &mut bn_names, &mut bn);
    let std = (1.0 / c3 as f32).sqrt();
    names.push("fc.weight".into());
    params.push(Tensor::randn(&[c3, cfg.num_classes], std, &mut rng));
    names.push("fc.bias".into());
    params.push(Tensor::zeros(&[cfg.num_classes]));

    Model::assemble(cfg.clone(), names, params, bn_names, bn)
}

impl Model {
    fn assemble(
        cfg: ModelConfig,
        names: Vec<String>,
        params: Vec<Tensor>,
        bn_names: Vec<String>,
        bn: Vec<BnStats>,
    ) -> Result<Self> {
        let fb = match (cfg.wap_position, cfg.pooling_variant, cfg.wavelet_base) {
            (WapPosition::Disabled, _, _) | (_, PoolingVariant::Subsample, _) => None,
            (_, _, Some(base)) => Some(FilterBank::new(base)?),
            (_, _, None) => return Err(Error::Config("pooling stage needs a wavelet_base".into())),
        };
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let bn_index = bn_names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self {
            blocks: block_specs(&cfg),
            cfg,
            fb,
            names,
            params,
            index,
            bn_names,
            bn,
            bn_index,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn bn_stats(&self) -> &[BnStats] {
        &self.bn
    }

    /// Stores running statistics returned by a training-mode pass.
    pub fn commit_bn(&mut self, updates: Vec<BnStats>) -> Result<()> {
        if updates.len() != self.bn.len() {
            return Err(Error::Usage(format!(
                "expected {} batch-norm updates, got {}",
                self.bn.len(),
                updates.len()
            )));
        }
        self.bn = updates;
        Ok(())
    }

    /// Places every parameter on `g` as a leaf, in [`Model::param_names`] order.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.clone(), requires_grad)).collect()
    }

    fn p(&self, params: &[Var], name: &str) -> Var {
        params[self.index[name]]
    }

    fn norm(
        &self,
        g: &mut Graph,
        params: &[Var],
        name: &str,
        x: Var,
        training: bool,
        updates: &mut Vec<BnStats>,
    ) -> Result<Var> {
        let stats = &self.bn[self.bn_index[name]];
        let gamma = self.p(params, &format!("{name}.gamma"));
        let beta = self.p(params, &format!("{name}.beta"));
        let (y, upd) = g.batch_norm(x, gamma, beta, stats, training)?;
        if let Some(u) = upd {
            updates.push(u);
        }
        Ok(y)
    }

    fn pool(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match (self.cfg.pooling_variant, &self.fb) {
            (PoolingVariant::Subsample, _) => g.subsample2(x),
            (PoolingVariant::Wap, Some(fb)) => g.wavelet_average_pool(x, fb),
            (PoolingVariant::Lpf, Some(fb)) => g.wavelet_low_pass_pool(x, fb, self.cfg.lpf_half_scale),
            _ => Err(Error::Config("pooling stage has no filter bank".into())),
        }
    }

    /// Runs the trunk up to (not including) the final average pool.
    pub fn features(&self, g: &mut Graph, params: &[Var], x: Var, training: bool) -> Result<Features> {
        if params.len() != self.params.len() {
            return Err(Error::Usage(format!(
                "expected {} parameter vars, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let shape = g.shape(x).to_vec();
        let s = self.cfg.input_size;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != s || shape[3] != s {
            return Err(Error::dim(format!(
                "model expects [N, 3, {s}, {s}] input, got {shape:?}"
            )));
        }
        let pos = self.cfg.wap_position;
        let mut updates = Vec::new();
        let mut h = g.conv2d(x, self.p(params, "stem.weight"), 1, 1)?;
        if pos == WapPosition::AfterFirstConv {
            h = self.pool(g, h)?;
        }
        for b in &self.blocks {
            let p = &b.prefix;
            let o = self.norm(g, params, &format!("{p}.bn1"), h, training, &mut updates)?;
            let o = g.relu(o)?;
            let shortcut = if b.has_shortcut() {
                g.conv2d(o, self.p(params, &format!("{p}.shortcut.weight")), b.stride, 0)?
            } else {
                h
            };
            let r = g.conv2d(o, self.p(params, &format!("{p}.conv1.weight")), b.stride, 1)?;
            let r = self.norm(g, params, &format!("{p}.bn2"), r, training, &mut updates)?;
            let r = g.relu(r)?;
            let r = g.conv2d(r, self.p(params, &format!("{p}.conv2.weight")), 1, 1)?;
            h = g.add(r, shortcut)?;
        }
        h = self.norm(g, params, "final_bn", h, training, &mut updates)?;
        if pos == WapPosition::BeforeFinalRelu {
            h = self.pool(g, h)?;
        }
        h = g.relu(h)?;
        if pos == WapPosition::AfterFinalRelu {
            h = self.pool(g, h)?;
        }
        Ok(Features {
            map: h,
            bn_updates: updates,
        })
    }

    /// Global average pool, flatten and the linear classifier.
    pub fn head(&self, g: &mut Graph, params: &[Var], map: Var) -> Result<Var> {
        let k = g.shape(map).get(2).copied().unwrap_or(1);
        let pooled = g.avg_pool2d(map, k)?;
        let flat = g.flatten(pooled)?;
        g.linear(flat, self.p(params, "fc.weight"), self.p(params, "fc.bias"))
    }

    /// Logits plus, in training mode, the new running statistics.
    pub fn forward_graph(&self, g: &mut Graph, params: &[Var], x: Var, training: bool) -> Result<(Var, Vec<BnStats>)> {
        let f = self.features(g, params, x, training)?;
        Ok((self.head(g, params, f.map)?, f.bn_updates))
    }

    /// Logits for a batch. Training mode uses batch statistics but commits nothing.
    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let (logits, _) = self.forward_graph(&mut g, &params, xv, training)?;
        Ok(g.value(logits).clone())
    }

    /// Eval-mode class predictions.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.forward(x, false)?.argmax_rows())
    }

    /// Parameters followed by batch-norm running statistics, each under a unique name.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self.names.iter().cloned().zip(self.params.iter().cloned()).collect();
        for (name, s) in self.bn_names.iter().zip(&self.bn) {
            let c = s.mean.len();
            out.push((
                format!("{name}.running_mean"),
                Tensor::new(vec![c], s.mean.clone()).expect("stat shape"),
            ));
            out.push((
                format!("{name}.running_var"),
                Tensor::new(vec![c], s.var.clone()).expect("stat shape"),
            ));
        }
        out
    }

    /// Rebuilds a model from [`Model::named_tensors`] output.
    pub fn from_named_tensors(cfg: &ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let template = build_model(cfg, 0)?;
        let mut by_name: HashMap<String, Tensor> = HashMap::new();
        for (name, t) in tensors {
            if by_name.insert(name.clone(), t).is_some() {
                return Err(Error::Input(format!("duplicate tensor `{name}`")));
            }
        }
        let expected = template.names.len() + 2 * template.bn_names.len();
        if by_name.len() != expected {
            return Err(Error::Input(format!(
                "expected {expected} tensors for this config, got {}",
                by_name.len()
            )));
        }
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::Input(format!("missing tensor `{name}`")))?;
            if t.shape() != shape {
                return Err(Error::dim(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        let mut params = Vec::with_capacity(template.params.len());
        for (name, p) in template.names.iter().zip(&template.params) {
            params.push(take(name, p.shape())?);
        }
        let mut bn = Vec::with_capacity(template.bn.len());
        for (name, s) in template.bn_names.iter().zip(&template.bn) {
            let c = s.mean.len();
            bn.push(BnStats {
                mean: take(&format!("{name}.running_mean"), &[c])?.into_data(),
                var: take(&format!("{name}.running_var"), &[c])?.into_data(),
            });
        }
        Model::assemble(cfg.clone(), template.names, params, template.bn_names, bn)
    }
}
