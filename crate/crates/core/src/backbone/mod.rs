//! Full network assembly: spectral reduction, convolutional stems,
//! tokenization, sparse transformer blocks per stream, cross-attention
//! fusion and the linear classifier.

pub(crate) mod checkpoint;
mod patches;
mod pca;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_table, encode_table, peek_precision, TensorTable, MODEL_MAGIC, MODEL_VERSION};
pub use patches::{extract_patches, patch_at, reflect, PatchSample};
pub use pca::{pca_fit, pixel_rows, PcaModel};

use crate::attention::{sparsity_levels, stb_forward, validate_alphas, StbParams, DEFAULT_ALPHAS};
use crate::autograd::{Graph, Var};
use crate::data::RasterPair;
use crate::error::{Error, Result};
use crate::fusion::{cafb_forward, CafbParams};
use crate::kernels::Padding;
use crate::nn::Linear;
use crate::params::{uniform, xavier_uniform, Bound, ParamId, ParamStore};
use crate::tensor::{Precision, Scalar, Tensor};

const POS_EMBED_LIMIT: f64 = 0.02;

/// Every architectural hyperparameter of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Odd side length of the square input neighborhood.
    pub patch_size: usize,
    pub pca_components: usize,
    pub hsi_filters: usize,
    pub hsi_kernel: usize,
    pub aux_filters: usize,
    pub aux_kernel: usize,
    /// Token width `D` of both streams.
    pub token_dim: usize,
    /// Feed-forward width as a multiple of `D`.
    pub ffn_mult: usize,
    pub alphas: Vec<f64>,
    pub stb_depth: usize,
    pub n_classes: usize,
    pub aux_channels: usize,
    /// Learnable positional embeddings on both token streams.
    pub pos_embed: bool,
    /// Use the hyperspectral residual on the auxiliary fusion output.
    pub shared_hsi_residual: bool,
    pub ln_eps: f64,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            patch_size: 11,
            pca_components: 30,
            hsi_filters: 8,
            hsi_kernel: 3,
            aux_filters: 16,
            aux_kernel: 3,
            token_dim: 64,
            ffn_mult: 2,
            alphas: DEFAULT_ALPHAS.to_vec(),
            stb_depth: 3,
            n_classes: 6,
            aux_channels: 2,
            pos_embed: false,
            shared_hsi_residual: false,
            ln_eps: 1e-5,
            precision: Precision::Standard,
            seed: 7,
        }
    }
}

impl ModelConfig {
    /// Tokens per stream: one per pixel of the patch.
    pub fn n_tokens(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_mult * self.token_dim
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.patch_size % 2 == 0 {
            return err(format!("patch_size {} must be odd", self.patch_size));
        }
        for (k, name) in [(self.hsi_kernel, "hsi_kernel"), (self.aux_kernel, "aux_kernel")] {
            if k % 2 == 0 {
                return err(format!("{name} {k} must be odd"));
            }
        }
        for (v, name) in [
            (self.pca_components, "pca_components"),
            (self.hsi_filters, "hsi_filters"),
            (self.aux_filters, "aux_filters"),
            (self.token_dim, "token_dim"),
            (self.ffn_mult, "ffn_mult"),
            (self.stb_depth, "stb_depth"),
            (self.aux_channels, "aux_channels"),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if self.n_classes < 2 {
            return err(format!("n_classes {} must be at least 2", self.n_classes));
        }
        if !(self.ln_eps > 0.0) {
            return err(format!("ln_eps {} must be positive", self.ln_eps));
        }
        validate_alphas(&self.alphas)?;
        sparsity_levels(self.n_tokens(), &self.alphas)?;
        Ok(())
    }

    fn table_entries(&self) -> Vec<(&'static str, Vec<f64>)> {
        let flag = |b: bool| vec![if b { 1.0 } else { 0.0 }];
        vec![
            ("patch_size", vec![self.patch_size as f64]),
            ("pca_components", vec![self.pca_components as f64]),
            ("hsi_filters", vec![self.hsi_filters as f64]),
            ("hsi_kernel", vec![self.hsi_kernel as f64]),
            ("aux_filters", vec![self.aux_filters as f64]),
            ("aux_kernel", vec![self.aux_kernel as f64]),
            ("token_dim", vec![self.token_dim as f64]),
            ("ffn_mult", vec![self.ffn_mult as f64]),
            ("alphas", self.alphas.clone()),
            ("stb_depth", vec![self.stb_depth as f64]),
            ("n_classes", vec![self.n_classes as f64]),
            ("aux_channels", vec![self.aux_channels as f64]),
            ("pos_embed", flag(self.pos_embed)),
            ("shared_hsi_residual", flag(self.shared_hsi_residual)),
            ("ln_eps", vec![self.ln_eps]),
            // 16-bit limbs stay exact in 32-bit floats
            ("seed", (0..4).map(|i| ((self.seed >> (16 * i)) & 0xffff) as f64).collect()),
        ]
    }
}

/// The assembled network and its parameters.
#[derive(Clone)]
pub struct SfNet<T: Scalar> {
    config: ModelConfig,
    pca: PcaModel,
    store: ParamStore<T>,
    hsi_kernel: ParamId,
    hsi_bias: ParamId,
    hsi_proj: Linear,
    aux_kernel: ParamId,
    aux_bias: ParamId,
    aux_proj: Linear,
    pos_h: Option<ParamId>,
    pos_x: Option<ParamId>,
    stb_h: Vec<StbParams>,
    stb_x: Vec<StbParams>,
    cafb: CafbParams,
    classifier: Linear,
}

impl<T: Scalar> SfNet<T> {
    /// Builds a freshly initialized network around a fitted PCA model. All
    /// weights are drawn from `config.seed`.
    pub fn new(config: ModelConfig, pca: PcaModel) -> Result<Self> {
        config.validate()?;
        if config.precision != T::PRECISION {
            return Err(Error::Config(format!(
                "config asks for {} precision, model scalar is {}",
                config.precision,
                T::PRECISION
            )));
        }
        if pca.retained() != config.pca_components {
            return Err(Error::Config(format!(
                "pca keeps {} components, config expects {}",
                pca.retained(),
                config.pca_components
            )));
        }
        let pca = pca.rounded(|v| T::lit(v).to_f64().expect("finite"));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (d, n, r) = (config.token_dim, config.n_tokens(), config.pca_components);

        let (fh, kh) = (config.hsi_filters, config.hsi_kernel);
        let kvol = kh * kh * kh;
        let hsi_kernel = store.add("hsi_stem.kernel", xavier_uniform(&mut rng, [fh, 1, kh, kh, kh], kvol, fh * kvol));
        let hsi_bias = store.add("hsi_stem.bias", Tensor::zeros([fh]));
        let hsi_proj = Linear::new(&mut store, &mut rng, "hsi_proj", fh * r, d);

        let (fa, ka, c) = (config.aux_filters, config.aux_kernel, config.aux_channels);
        let karea = ka * ka;
        let aux_kernel = store.add("aux_stem.kernel", xavier_uniform(&mut rng, [fa, c, ka, ka], c * karea, fa * karea));
        let aux_bias = store.add("aux_stem.bias", Tensor::zeros([fa]));
        let aux_proj = Linear::new(&mut store, &mut rng, "aux_proj", fa, d);

        let (pos_h, pos_x) = if config.pos_embed {
            (
                Some(store.add("pos_h", uniform(&mut rng, [n, d], POS_EMBED_LIMIT))),
                Some(store.add("pos_x", uniform(&mut rng, [n, d], POS_EMBED_LIMIT))),
            )
        } else {
            (None, None)
        };

        let ffn = config.ffn_width();
        let blocks = |stream: &str, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng| {
            (0..config.stb_depth)
                .map(|i| StbParams::new(store, rng, &format!("stb_{stream}.{i}"), d, ffn, &config.alphas, config.ln_eps))
                .collect::<Result<Vec<_>>>()
        };
        let stb_h = blocks("h", &mut store, &mut rng)?;
        let stb_x = blocks("x", &mut store, &mut rng)?;
        let mut cafb = CafbParams::new(&mut store, &mut rng, "cafb", d, ffn, config.ln_eps);
        cafb.shared_hsi_residual = config.shared_hsi_residual;
        let classifier = Linear::new(&mut store, &mut rng, "classifier", 2 * d, config.n_classes);

        Ok(SfNet {
            config,
            pca,
            store,
            hsi_kernel,
            hsi_bias,
            hsi_proj,
            aux_kernel,
            aux_bias,
            aux_proj,
            pos_h,
            pos_x,
            stb_h,
            stb_x,
            cafb,
            classifier,
        })
    }

    /// Fits the spectral reduction on every pixel of `raster`, then builds
    /// the network for its band and channel counts.
    pub fn for_raster(mut config: ModelConfig, raster: &RasterPair) -> Result<Self> {
        config.aux_channels = raster.aux_channels();
        config.n_classes = raster.n_classes();
        let pca = pca_fit(&pixel_rows(raster), raster.bands(), config.pca_components)?;
        SfNet::new(config, pca)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn pca(&self) -> &PcaModel {
        &self.pca
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn hsi_blocks(&self) -> &[StbParams] {
        &self.stb_h
    }

    pub fn aux_blocks(&self) -> &[StbParams] {
        &self.stb_x
    }

    pub fn cafb(&self) -> &CafbParams {
        &self.cafb
    }

    pub fn classifier(&self) -> &Linear {
        &self.classifier
    }

    /// Zeroes the final layer of every residual branch (both block stacks
    /// and the fusion block), reducing each to the identity.
    pub fn zero_residual_terminals(&mut self) {
        for b in self.stb_h.iter().chain(&self.stb_x) {
            b.zero_residual_terminals(&mut self.store);
        }
        self.cafb.zero_residual_terminals(&mut self.store);
    }

    fn expect_patch(&self, stage: &'static str, x: Var<'_, T>, planes: usize) -> Result<()> {
        let p = self.config.patch_size;
        let got = x.shape();
        if got != [planes, p, p] {
            return Err(Error::ShapeMismatch {
                op: "patch",
                lhs: got,
                rhs: vec![planes, p, p],
            }
            .in_stage(stage));
        }
        Ok(())
    }

    /// Hyperspectral patch `[r×p×p]` to tokens `[p²×D]`: 3-D convolution
    /// over (band, row, col), GELU, flatten filters and bands per pixel,
    /// linear projection.
    pub fn hsi_tokens<'g>(&self, p: &Bound<'g, T>, patch: Var<'g, T>) -> Result<Var<'g, T>> {
        let (r, side) = (self.config.pca_components, self.config.patch_size);
        self.expect_patch("hsi_stem", patch, r)?;
        let stem = || -> Result<Var<'g, T>> {
            let f = patch
                .reshape([1, r, side, side])?
                .conv3d(p.var(self.hsi_kernel), 1, Padding::Same)?
                .add_channel_bias(p.var(self.hsi_bias))?
                .gelu();
            f.reshape([self.config.hsi_filters * r, side * side])?.transpose()
        };
        let tokens = stem().map_err(|e| e.in_stage("hsi_stem"))?;
        let mut t = self.hsi_proj.forward(p, tokens).map_err(|e| e.in_stage("hsi_proj"))?;
        if let Some(pos) = self.pos_h {
            t = t.add(p.var(pos))?;
        }
        Ok(t)
    }

    /// Auxiliary patch `[c×p×p]` to tokens `[p²×D]`.
    pub fn aux_tokens<'g>(&self, p: &Bound<'g, T>, patch: Var<'g, T>) -> Result<Var<'g, T>> {
        let side = self.config.patch_size;
        self.expect_patch("aux_stem", patch, self.config.aux_channels)?;
        let stem = || -> Result<Var<'g, T>> {
            let f = patch
                .conv2d(p.var(self.aux_kernel), 1, Padding::Same)?
                .add_channel_bias(p.var(self.aux_bias))?
                .gelu();
            f.reshape([self.config.aux_filters, side * side])?.transpose()
        };
        let tokens = stem().map_err(|e| e.in_stage("aux_stem"))?;
        let mut t = self.aux_proj.forward(p, tokens).map_err(|e| e.in_stage("aux_proj"))?;
        if let Some(pos) = self.pos_x {
            t = t.add(p.var(pos))?;
        }
        Ok(t)
    }

    /// Mean-pools fused tokens `[N×2D]` and applies the classifier.
    pub fn head<'g>(&self, p: &Bound<'g, T>, fused: Var<'g, T>) -> Result<Var<'g, T>> {
        let pooled = fused.mean_rows()?;
        let width = pooled.shape()[0];
        let logits = self.classifier.forward(p, pooled.reshape([1, width])?)?;
        logits.reshape([self.config.n_classes])
    }

    /// Logits `[n_classes]` for one sample.
    pub fn forward<'g>(&self, p: &Bound<'g, T>, hsi_patch: Var<'g, T>, aux_patch: Var<'g, T>) -> Result<Var<'g, T>> {
        let mut th = self.hsi_tokens(p, hsi_patch)?;
        let mut tx = self.aux_tokens(p, aux_patch)?;
        for b in &self.stb_h {
            th = stb_forward(p, b, th).map_err(|e| e.in_stage("hsi_blocks"))?;
        }
        for b in &self.stb_x {
            tx = stb_forward(p, b, tx).map_err(|e| e.in_stage("aux_blocks"))?;
        }
        let fused = cafb_forward(p, &self.cafb, th, tx).map_err(|e| e.in_stage("fusion"))?;
        self.head(p, fused).map_err(|e| e.in_stage("classifier"))
    }

    /// Inference-only forward pass.
    pub fn logits(&self, hsi_patch: &Tensor<T>, aux_patch: &Tensor<T>) -> Result<Tensor<T>> {
        let g = Graph::new();
        let p = self.store.bind(&g, false);
        let out = self.forward(&p, g.constant(hsi_patch.clone()), g.constant(aux_patch.clone()))?;
        Ok(out.value())
    }

    /// Predicted class index (0-based) for one sample.
    pub fn predict(&self, hsi_patch: &Tensor<T>, aux_patch: &Tensor<T>) -> Result<usize> {
        Ok(argmax(self.logits(hsi_patch, aux_patch)?.data()))
    }

    /// Applies the spectral reduction to a full raster.
    pub fn reduce(&self, raster: &RasterPair) -> Result<RasterPair> {
        if raster.aux_channels() != self.config.aux_channels {
            return Err(Error::Config(format!(
                "raster has {} auxiliary channels, model expects {}",
                raster.aux_channels(),
                self.config.aux_channels
            )));
        }
        self.pca.transform_raster(raster)
    }

    /// Input tensors for pixel `index` of a reduced raster.
    pub fn sample(&self, reduced: &RasterPair, index: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let s = patch_at(reduced, index, self.config.patch_size)?;
        let p = self.config.patch_size;
        let conv = |v: Vec<f32>| v.into_iter().map(|x| T::lit(x as f64)).collect::<Vec<T>>();
        Ok((
            Tensor::new([reduced.bands(), p, p], conv(s.hsi))?,
            Tensor::new([reduced.aux_channels(), p, p], conv(s.aux))?,
        ))
    }

    /// Configuration, spectral reduction and parameters as a named table.
    pub fn to_table(&self) -> TensorTable<T> {
        let mut table = Vec::new();
        for (key, values) in self.config.table_entries() {
            let t = if values.len() == 1 {
                Tensor::scalar(T::lit(values[0]))
            } else {
                Tensor::from_f64([values.len()], &values).expect("non-empty")
            };
            table.push((format!("config.{key}"), t));
        }
        let pca = &self.pca;
        let (b, r) = (pca.bands(), pca.retained());
        table.push(("pca.mean".into(), Tensor::from_f64([b], pca.mean()).expect("bands")));
        table.push(("pca.components".into(), Tensor::from_f64([b, r], pca.components()).expect("bands x r")));
        table.push(("pca.variances".into(), Tensor::from_f64([r], pca.variances()).expect("r")));
        for (name, t) in self.store.iter() {
            table.push((name.to_string(), t.clone()));
        }
        table
    }

    pub fn from_table(table: &[(String, Tensor<T>)]) -> Result<Self> {
        let lookup = |name: &str| -> Result<&Tensor<T>> {
            table
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::InvalidData(format!("checkpoint lacks tensor '{name}'")))
        };
        let values = |name: &str| -> Result<Vec<f64>> {
            Ok(lookup(name)?.data().iter().map(|v| v.to_f64().expect("finite")).collect())
        };
        let one = |key: &str| -> Result<f64> {
            let v = values(&format!("config.{key}"))?;
            match v.as_slice() {
                [x] => Ok(*x),
                _ => Err(Error::InvalidData(format!("config.{key} must hold one value"))),
            }
        };
        let count = |key: &str| -> Result<usize> {
            let v = one(key)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::InvalidData(format!("config.{key} = {v} is not a count")));
            }
            Ok(v as usize)
        };
        let seed_limbs = values("config.seed")?;
        if seed_limbs.len() != 4 {
            return Err(Error::InvalidData("config.seed must hold 4 limbs".into()));
        }
        let config = ModelConfig {
            patch_size: count("patch_size")?,
            pca_components: count("pca_components")?,
            hsi_filters: count("hsi_filters")?,
            hsi_kernel: count("hsi_kernel")?,
            aux_filters: count("aux_filters")?,
            aux_kernel: count("aux_kernel")?,
            token_dim: count("token_dim")?,
            ffn_mult: count("ffn_mult")?,
            alphas: values("config.alphas")?,
            stb_depth: count("stb_depth")?,
            n_classes: count("n_classes")?,
            aux_channels: count("aux_channels")?,
            pos_embed: one("pos_embed")? != 0.0,
            shared_hsi_residual: one("shared_hsi_residual")? != 0.0,
            ln_eps: one("ln_eps")?,
            precision: T::PRECISION,
            seed: seed_limbs
                .iter()
                .enumerate()
                .fold(0u64, |acc, (i, &l)| acc | ((l as u64) << (16 * i))),
        };
        let pca = PcaModel::from_parts(values("pca.mean")?, values("pca.components")?, values("pca.variances")?)?;
        let mut model = SfNet::new(config, pca)?;
        let ids: Vec<ParamId> = model.store.ids().collect();
        for id in ids {
            let name = model.store.name(id).to_string();
            let t = lookup(&name)?.clone();
            model.store.set(id, t).map_err(|_| {
                Error::InvalidData(format!("tensor '{name}' has the wrong shape for this configuration"))
            })?;
        }
        let expected = model.to_table().len();
        if table.len() != expected {
            return Err(Error::InvalidData(format!(
                "checkpoint has {} tensors, configuration defines {expected}",
                table.len()
            )));
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_table(&self.to_table())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        SfNet::from_table(&decode_table::<T>(bytes)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        SfNet::from_bytes(&fs::read(path)?)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_pca(bands: usize, r: usize) -> PcaModel {
        let samples: Vec<f64> = (0..(bands * 4 * r + bands))
            .map(|i| ((i * 37 % 11) as f64) * 0.1 + (i % bands) as f64 * 0.01)
            .collect();
        pca_fit(&samples, bands, r).unwrap()
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            patch_size: 3,
            pca_components: 2,
            hsi_filters: 2,
            aux_filters: 3,
            token_dim: 4,
            n_classes: 3,
            aux_channels: 1,
            precision: Precision::Verification,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            patch_size: 4,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let one_token = ModelConfig {
            patch_size: 1,
            ..ModelConfig::default()
        };
        assert!(one_token.validate().is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0f64, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0f32; 4]), 0);
    }

    #[test]
    fn precision_mismatch_is_rejected() {
        let cfg = small_config();
        assert!(SfNet::<f32>::new(cfg.clone(), tiny_pca(4, 2)).is_err());
        assert!(SfNet::<f64>::new(cfg, tiny_pca(4, 2)).is_ok());
    }

    #[test]
    fn wrong_patch_shape_names_stage() {
        let model = SfNet::<f64>::new(small_config(), tiny_pca(4, 2)).unwrap();
        let err = model
            .logits(&Tensor::zeros([2, 5, 5]), &Tensor::zeros([1, 3, 3]))
            .unwrap_err();
        assert!(err.to_string().starts_with("hsi_stem"), "{err}");
        let err = model
            .logits(&Tensor::zeros([2, 3, 3]), &Tensor::zeros([2, 3, 3]))
            .unwrap_err();
        assert!(err.to_string().starts_with("aux_stem"), "{err}");
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let mut cfg = small_config();
        cfg.seed = 0x1234_5678_9abc_def0;
        cfg.pos_embed = true;
        let model = SfNet::<f64>::new(cfg, tiny_pca(4, 2)).unwrap();
        let bytes = model.to_bytes().unwrap();
        let back = SfNet::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}
