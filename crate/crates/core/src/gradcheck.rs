//! Central finite-difference gradient checks.
//!
//! Each suite builds a scalar loss `Σ out ⊙ R` for a fixed random `R`,
//! differentiates it once with the tape, then perturbs every parameter
//! coordinate by `±h` in double precision. A coordinate whose perturbation
//! changes any top-k selection is skipped, since the loss is not
//! differentiable there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{stb_forward, StbParams, DEFAULT_ALPHAS};
use crate::autograd::{Graph, Var};
use crate::backbone::{pca_fit, ModelConfig, SfNet};
use crate::error::Result;
use crate::fusion::{cafb_forward, CafbParams};
use crate::params::{uniform, Bound, ParamStore};
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Pass threshold on the relative error.
    pub tolerance: f64,
    /// Lower bound on the relative error denominator.
    pub floor: f64,
    /// Coordinates checked per parameter tensor; larger tensors are strided.
    pub max_coords: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-5,
            max_coords: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub suite: String,
    pub checked: usize,
    /// Coordinates excluded because a top-k selection flipped.
    pub skipped: usize,
    pub worst_rel_error: f64,
    /// `name[index]` of the worst coordinate.
    pub worst_at: String,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(store: &ParamStore<f64>, f: &F) -> Result<(f64, Vec<bool>)>
where
    F: for<'g> Fn(&'g Graph<f64>, &Bound<'g, f64>) -> Result<Var<'g, f64>>,
{
    let g = Graph::new();
    let p = store.bind(&g, false);
    let loss = f(&g, &p)?;
    Ok((loss.value().item(), g.selection_signature()))
}

/// Compares tape gradients of `f` against central differences for every
/// parameter in `store`.
pub fn check_gradients<F>(suite: &str, store: &ParamStore<f64>, cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &Bound<'g, f64>) -> Result<Var<'g, f64>>,
{
    let g = Graph::new();
    let p = store.bind(&g, true);
    let loss = f(&g, &p)?;
    g.backward(loss)?;
    let grads = p.grads();
    let base_sig = g.selection_signature();

    let mut work = store.clone();
    let mut report = GradCheckReport {
        suite: suite.to_string(),
        checked: 0,
        skipped: 0,
        worst_rel_error: 0.0,
        worst_at: String::new(),
        passed: true,
    };
    let ids: Vec<_> = store.ids().collect();
    for (slot, id) in ids.into_iter().enumerate() {
        let original = store.get(id).clone();
        let n = original.numel();
        let stride = n.div_ceil(cfg.max_coords).max(1);
        for i in (0..n).step_by(stride) {
            let mut probe = |delta: f64| -> Result<(f64, Vec<bool>)> {
                let mut data = original.to_vec();
                data[i] += delta;
                work.set(id, Tensor::new(original.shape().to_vec(), data)?)?;
                evaluate(&work, &f)
            };
            let (lp, sp) = probe(cfg.step)?;
            let (lm, sm) = probe(-cfg.step)?;
            work.set(id, original.clone())?;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * cfg.step);
            let analytic = grads[slot].as_ref().map_or(0.0, |t| t.data()[i]);
            let rel = relative_error(analytic, numeric, cfg.floor);
            report.checked += 1;
            if rel > report.worst_rel_error || report.worst_at.is_empty() {
                report.worst_rel_error = rel;
                report.worst_at = format!("{}[{i}]", store.name(id));
            }
        }
    }
    report.passed = report.worst_rel_error < cfg.tolerance && report.checked > 0;
    Ok(report)
}

fn random(rng: &mut ChaCha8Rng, shape: impl Into<Vec<usize>>) -> Tensor<f64> {
    uniform(rng, shape, 1.0)
}

fn projected<'g>(g: &'g Graph<f64>, out: Var<'g, f64>, weights: &Tensor<f64>) -> Result<Var<'g, f64>> {
    Ok(out.mul(g.constant(weights.clone()))?.sum())
}

/// Randomizes every parameter so that layer norms and biases are away from
/// their identity initialization.
fn perturb_all(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let t = store.get(id).clone();
        let noise: Tensor<f64> = uniform(rng, t.shape().to_vec(), scale);
        let data = t.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect();
        store.set(id, Tensor::new(t.shape().to_vec(), data).expect("same shape")).expect("same shape");
    }
}

/// Toy network used by the stem, classifier and full-model suites.
pub fn toy_model(seed: u64) -> Result<SfNet<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let bands = 5;
    let samples: Vec<f64> = (0..bands * 40).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let config = ModelConfig {
        patch_size: 3,
        pca_components: 3,
        hsi_filters: 2,
        aux_filters: 3,
        token_dim: 4,
        ffn_mult: 2,
        stb_depth: 2,
        n_classes: 3,
        aux_channels: 2,
        pos_embed: true,
        precision: Precision::Verification,
        seed,
        ..ModelConfig::default()
    };
    let mut model = SfNet::new(config, pca_fit(&samples, bands, 3)?)?;
    perturb_all(model.store_mut(), &mut rng, 0.1);
    Ok(model)
}

/// Every suite: STB, CAFB (both residual modes), both stems, classifier
/// head and the full model under cross-entropy.
pub fn run_suites(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let (n, d) = (6, 4);

    {
        let mut store = ParamStore::new();
        let block = StbParams::new(&mut store, &mut rng, "stb", d, 2 * d, &DEFAULT_ALPHAS, 1e-5)?;
        perturb_all(&mut store, &mut rng, 0.1);
        let input = store.add("input", random(&mut rng, [n, d]));
        let w = random(&mut rng, [n, d]);
        reports.push(check_gradients("stb", &store, cfg, |g, p| {
            projected(g, stb_forward(p, &block, p.var(input))?, &w)
        })?);
    }

    for literal in [false, true] {
        let mut store = ParamStore::new();
        let mut block = CafbParams::new(&mut store, &mut rng, "cafb", d, 2 * d, 1e-5);
        block.shared_hsi_residual = literal;
        perturb_all(&mut store, &mut rng, 0.1);
        let th = store.add("input_h", random(&mut rng, [n, d]));
        let tx = store.add("input_x", random(&mut rng, [n, d]));
        let w = random(&mut rng, [n, 2 * d]);
        let name = if literal { "cafb_shared_residual" } else { "cafb" };
        reports.push(check_gradients(name, &store, cfg, |g, p| {
            projected(g, cafb_forward(p, &block, p.var(th), p.var(tx))?, &w)
        })?);
    }

    let model = toy_model(seed)?;
    let c = model.config().clone();
    let side = c.patch_size;
    let tokens = c.n_tokens();
    let hsi = random(&mut rng, [c.pca_components, side, side]);
    let aux = random(&mut rng, [c.aux_channels, side, side]);

    {
        let mut store = model.store().clone();
        let patch = store.add("input_hsi", hsi.clone());
        let w = random(&mut rng, [tokens, c.token_dim]);
        reports.push(check_gradients("hsi_stem", &store, cfg, |g, p| {
            projected(g, model.hsi_tokens(p, p.var(patch))?, &w)
        })?);
    }
    {
        let mut store = model.store().clone();
        let patch = store.add("input_aux", aux.clone());
        let w = random(&mut rng, [tokens, c.token_dim]);
        reports.push(check_gradients("aux_stem", &store, cfg, |g, p| {
            projected(g, model.aux_tokens(p, p.var(patch))?, &w)
        })?);
    }
    {
        let mut store = model.store().clone();
        let fused = store.add("input_fused", random(&mut rng, [tokens, 2 * c.token_dim]));
        reports.push(check_gradients("classifier", &store, cfg, |_, p| {
            model.head(p, p.var(fused))?.cross_entropy(1)
        })?);
    }
    {
        let store = model.store().clone();
        reports.push(check_gradients("full_model", &store, cfg, |g, p| {
            model
                .forward(p, g.constant(hsi.clone()), g.constant(aux.clone()))?
                .cross_entropy(2)
        })?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9, 1e-6) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::from_f64([2], &[0.3, -0.7]).unwrap());
        let cfg = GradCheckConfig::default();
        let ok = check_gradients("square", &store, &cfg, |_, p| Ok(p.var(x).mul(p.var(x))?.sum())).unwrap();
        assert!(ok.passed, "{ok:?}");
        // the frozen copy hides half of the true gradient
        let bad = check_gradients("const", &store, &cfg, |g, p| {
            let v = p.var(x);
            let frozen = g.constant(v.value());
            Ok(v.mul(frozen)?.sum())
        })
        .unwrap();
        assert!(!bad.passed);
    }
}
