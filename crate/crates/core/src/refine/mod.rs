//! Cross-layer disparity alignment. Every layer after the first gets its own
//! residual perceptron over (normalised pixel position, disparity, colour);
//! the nets are trained jointly so adjacent layers agree outside the
//! removed-object masks.

mod net;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use net::{Adam, RefinementNet};

use crate::error::{Error, Result};
use crate::raster::{check_dims, save_disparity, DisparityGrid, Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// `ε` of the smoothed absolute value `sqrt(x² + ε²)`.
    pub smoothing: f64,
    /// Anneal the learning rate to zero along a half cosine.
    pub cosine_decay: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            learning_rate: 1e-3,
            steps: 2000,
            batch_size: 4096,
            seed: 0,
            smoothing: 1e-6,
            cosine_decay: false,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hidden > 0
            && self.steps > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.smoothing > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid refine config {self:?}")));
        }
        Ok(())
    }
}

fn smooth_abs(x: f64, eps: f64) -> f64 {
    (x * x + eps * eps).sqrt()
}

fn smooth_abs_slope(x: f64, eps: f64) -> f64 {
    x / smooth_abs(x, eps)
}

/// `Σ_n Σ_{x,y} (1 − M_n) |D_n − D_{n+1}|` over adjacent pairs; pixels
/// invalid in either grid contribute nothing.
pub fn consistency_loss(refined: &[DisparityGrid], masks: &[Mask]) -> Result<f64> {
    if refined.is_empty() {
        return Ok(0.0);
    }
    if masks.len() + 1 < refined.len() {
        return Err(Error::InvalidArgument(format!(
            "{} grids need {} masks, got {}",
            refined.len(),
            refined.len() - 1,
            masks.len()
        )));
    }
    let dims = refined[0].dims();
    for g in refined {
        check_dims(dims, g.dims())?;
    }
    for m in masks {
        check_dims(dims, m.dims())?;
    }
    let mut total = 0.0;
    for (n, pair) in refined.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        for i in 0..a.values().len() {
            if masks[n].bits()[i] || !a.validity()[i] || !b.validity()[i] {
                continue;
            }
            total += (a.values()[i] as f64 - b.values()[i] as f64).abs();
        }
    }
    Ok(total)
}

/// One sampled pixel of one adjacent pair, weighted so that a batch sum is
/// an unbiased estimate of the full loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSample {
    pub pair: usize,
    pub pixel: usize,
    pub weight: f64,
}

/// Precomputed per-layer network inputs and per-pair eligible pixels.
#[derive(Debug, Clone)]
pub struct RefinementProblem {
    width: usize,
    layers: usize,
    features: Vec<Vec<[f64; 6]>>,
    values: Vec<Vec<f64>>,
    valid: Vec<Vec<bool>>,
    eligible: Vec<Vec<usize>>,
    output_scale: f64,
    smoothing: f64,
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (0.0, 1.0);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

impl RefinementProblem {
    /// `masks[n]` weights the pair `(n, n + 1)`.
    pub fn new(disparities: &[DisparityGrid], images: &[Image], masks: &[Mask], smoothing: f64) -> Result<Self> {
        let n = disparities.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("refinement needs at least 2 layers, got {n}")));
        }
        if images.len() != n || masks.len() + 1 < n {
            return Err(Error::InvalidArgument(format!(
                "{n} disparity layers need {n} images and {} masks, got {} and {}",
                n - 1,
                images.len(),
                masks.len()
            )));
        }
        let dims = disparities[0].dims();
        for d in disparities {
            check_dims(dims, d.dims())?;
        }
        for i in images {
            check_dims(dims, i.dims())?;
        }
        for m in &masks[..n - 1] {
            check_dims(dims, m.dims())?;
        }
        let (w, h) = dims;
        let norm = |i: usize, len: usize| if len > 1 { i as f64 / (len - 1) as f64 * 2.0 - 1.0 } else { 0.0 };

        let mut features = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for (d, img) in disparities.iter().zip(images) {
            let vals: Vec<f64> = d.values().iter().map(|v| *v as f64).collect();
            let (mu, sigma) = mean_std(vals.iter().zip(d.validity()).filter(|(_, ok)| **ok).map(|(v, _)| *v));
            let feats = (0..w * h)
                .map(|i| {
                    let (x, y) = (i % w, i / w);
                    let c = img.pixels()[i];
                    [norm(x, w), norm(y, h), (vals[i] - mu) / sigma, c[0] as f64, c[1] as f64, c[2] as f64]
                })
                .collect();
            features.push(feats);
            values.push(vals);
            valid.push(d.validity().to_vec());
        }
        let eligible = (0..n - 1)
            .map(|p| {
                (0..w * h)
                    .filter(|&i| !masks[p].bits()[i] && valid[p][i] && valid[p + 1][i])
                    .collect()
            })
            .collect();
        let (_, output_scale) = mean_std(values[0].iter().zip(&valid[0]).filter(|(_, ok)| **ok).map(|(v, _)| *v));
        Ok(Self {
            width: w,
            layers: n,
            features,
            values,
            valid,
            eligible,
            output_scale,
            smoothing,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Pixels that enter the loss for pair `(p, p + 1)`.
    pub fn eligible(&self, pair: usize) -> &[usize] {
        &self.eligible[pair]
    }

    /// Multiplier applied to the network output before it is added to the
    /// input disparity (the reference layer's standard deviation).
    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    fn inputs(&self, layer: usize, pixels: &[usize]) -> DMatrix<f64> {
        let f = &self.features[layer];
        DMatrix::from_fn(6, pixels.len(), |r, c| f[pixels[c]][r])
    }

    /// Refined disparity of `layer` at `pixels`; `nets[k]` refines layer
    /// `k + 1` and layer 0 is the fixed reference.
    pub fn refined_at(&self, nets: &[RefinementNet], layer: usize, pixels: &[usize]) -> Vec<f64> {
        let raw = pixels.iter().map(|&i| self.values[layer][i]);
        if layer == 0 {
            return raw.collect();
        }
        let act = nets[layer - 1].forward(self.inputs(layer, pixels));
        raw.zip(act.out.iter()).map(|(d, g)| d + self.output_scale * g).collect()
    }

    /// Smoothed batch loss and its exact gradient with respect to every
    /// net's parameters, `grads[k]` matching `nets[k]`.
    pub fn loss_gradient(&self, nets: &[RefinementNet], batch: &[PixelSample]) -> (f64, Vec<Vec<f64>>) {
        let mut grads: Vec<Vec<f64>> = nets.iter().map(|n| vec![0.0; n.params().len()]).collect();
        let mut loss = 0.0;
        for pair in 0..self.layers - 1 {
            let samples: Vec<&PixelSample> = batch.iter().filter(|s| s.pair == pair).collect();
            if samples.is_empty() {
                continue;
            }
            let pixels: Vec<usize> = samples.iter().map(|s| s.pixel).collect();
            let forward = |layer: usize| {
                (layer > 0).then(|| nets[layer - 1].forward(self.inputs(layer, &pixels)))
            };
            let act_a = forward(pair);
            let act_b = forward(pair + 1);
            let refined = |layer: usize, act: &Option<net::Activations>| -> Vec<f64> {
                pixels
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        self.values[layer][i] + act.as_ref().map_or(0.0, |a| self.output_scale * a.out[k])
                    })
                    .collect()
            };
            let da = refined(pair, &act_a);
            let db = refined(pair + 1, &act_b);
            let mut slope = DVector::zeros(pixels.len());
            for (k, s) in samples.iter().enumerate() {
                let diff = da[k] - db[k];
                loss += s.weight * smooth_abs(diff, self.smoothing);
                slope[k] = s.weight * smooth_abs_slope(diff, self.smoothing) * self.output_scale;
            }
            if let Some(a) = &act_a {
                nets[pair - 1].backward(a, &slope, &mut grads[pair - 1]);
            }
            if let Some(b) = &act_b {
                nets[pair].backward(b, &(-slope), &mut grads[pair]);
            }
        }
        (loss, grads)
    }

    /// Smoothed loss over every eligible pixel, evaluated exactly.
    pub fn full_smoothed_loss(&self, nets: &[RefinementNet]) -> f64 {
        let batch: Vec<PixelSample> = (0..self.layers - 1)
            .flat_map(|p| self.eligible[p].iter().map(move |&i| PixelSample { pair: p, pixel: i, weight: 1.0 }))
            .collect();
        self.loss_gradient(nets, &batch).0
    }

    /// Draw `per_pair` pixels uniformly with replacement from each pair's
    /// eligible set.
    pub fn sample_batch(&self, rng: &mut ChaCha8Rng, per_pair: usize) -> Vec<PixelSample> {
        let mut batch = Vec::with_capacity(per_pair * (self.layers - 1));
        for (pair, pool) in self.eligible.iter().enumerate() {
            if pool.is_empty() {
                continue;
            }
            let weight = pool.len() as f64 / per_pair as f64;
            for _ in 0..per_pair {
                batch.push(PixelSample {
                    pair,
                    pixel: pool[rng.gen_range(0..pool.len())],
                    weight,
                });
            }
        }
        batch
    }

    /// Apply the nets to every valid pixel of every layer.
    pub fn refined_grids(&self, nets: &[RefinementNet], source: &[DisparityGrid]) -> Vec<DisparityGrid> {
        let mut out = vec![source[0].clone()];
        for layer in 1..self.layers {
            let pixels: Vec<usize> = (0..self.valid[layer].len()).filter(|&i| self.valid[layer][i]).collect();
            let (w, h) = source[layer].dims();
            let mut values = vec![0.0f32; w * h];
            let mut valid = vec![false; w * h];
            for chunk in pixels.chunks(8192) {
                for (&i, v) in chunk.iter().zip(self.refined_at(nets, layer, chunk)) {
                    values[i] = v as f32;
                    valid[i] = true;
                }
            }
            out.push(DisparityGrid::with_validity(w, h, values, valid).expect("dimensions match the source grid"));
        }
        out
    }
}

/// Result of a refinement run.
#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub grids: Vec<DisparityGrid>,
    pub nets: Vec<RefinementNet>,
    /// Exact consistency loss of the inputs.
    pub initial_loss: f64,
    /// Exact consistency loss of the refined grids.
    pub final_loss: f64,
    pub steps: usize,
}

impl RefineOutcome {
    pub fn sidecar(&self, cfg: &RefineConfig) -> RefineSidecar {
        RefineSidecar {
            config: *cfg,
            layers: self.grids.len(),
            steps: self.steps,
            initial_loss: self.initial_loss,
            final_loss: self.final_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineSidecar {
    pub config: RefineConfig,
    pub layers: usize,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Jointly fit one residual net per non-reference layer with Adam, then
/// return the refined grids. The first grid is returned unchanged.
pub fn refine_disparities(
    disparities: &[DisparityGrid],
    images: &[Image],
    masks: &[Mask],
    cfg: &RefineConfig,
) -> Result<RefineOutcome> {
    cfg.validate()?;
    let problem = RefinementProblem::new(disparities, images, masks, cfg.smoothing)?;
    let mut nets: Vec<RefinementNet> = (1..problem.layers())
        .map(|k| RefinementNet::new(cfg.hidden, cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(k as u64)))
        .collect();
    let initial_loss = consistency_loss(disparities, masks)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opts: Vec<Adam> = nets.iter().map(|n| Adam::new(n.params().len())).collect();
    let mut ema: Option<f64> = None;
    let mut first: Option<f64> = None;
    for step in 0..cfg.steps {
        let batch = problem.sample_batch(&mut rng, cfg.batch_size);
        if batch.is_empty() {
            break;
        }
        let (loss, grads) = problem.loss_gradient(&nets, &batch);
        let initial = *first.get_or_insert(loss);
        let smoothed = ema.map_or(loss, |e| 0.9 * e + 0.1 * loss);
        ema = Some(smoothed);
        if initial > 0.0 && smoothed > 10.0 * initial || !smoothed.is_finite() {
            return Err(Error::Diverged {
                step,
                smoothed,
                initial,
            });
        }
        let lr = if cfg.cosine_decay {
            cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / cfg.steps as f64).cos())
        } else {
            cfg.learning_rate
        };
        for ((net, opt), g) in nets.iter_mut().zip(&mut opts).zip(&grads) {
            opt.step(net.params_mut(), g, lr);
        }
    }
    let grids = problem.refined_grids(&nets, disparities);
    let final_loss = consistency_loss(&grids, masks)?;
    Ok(RefineOutcome {
        grids,
        nets,
        initial_loss,
        final_loss,
        steps: cfg.steps,
    })
}

/// Write `refined_###.pfm` files plus `refine.json` into `dir`.
pub fn save_refined(dir: impl AsRef<Path>, outcome: &RefineOutcome, cfg: &RefineConfig) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, g) in outcome.grids.iter().enumerate() {
        save_disparity(g, dir.join(format!("refined_{i:03}.pfm")))?;
    }
    let path = dir.join("refine.json");
    let text = serde_json::to_string_pretty(&outcome.sidecar(cfg))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> DisparityGrid {
        DisparityGrid::from_values(w, h, (0..w * h).map(|i| f(i % w, i / w)).collect()).unwrap()
    }

    #[test]
    fn loss_examples() {
        let a = grid(1, 1, |_, _| 3.0);
        let b = grid(1, 1, |_, _| 5.0);
        assert_eq!(consistency_loss(&[a.clone(), b.clone()], &[Mask::empty(1, 1)]).unwrap(), 2.0);
        assert_eq!(consistency_loss(&[b, a.clone()], &[Mask::empty(1, 1)]).unwrap(), 2.0);
        assert_eq!(consistency_loss(&[a.clone(), a], &[Mask::empty(1, 1)]).unwrap(), 0.0);

        let c = grid(2, 2, |_, _| 1.0);
        let d = grid(2, 2, |_, _| 2.0);
        let mut m = Mask::empty(2, 2);
        m.set(1, 0, true);
        assert_eq!(consistency_loss(&[c, d], &[m]).unwrap(), 3.0);
    }

    #[test]
    fn loss_checks_dimensions() {
        let a = grid(2, 2, |_, _| 1.0);
        let b = grid(3, 2, |_, _| 1.0);
        assert!(matches!(
            consistency_loss(&[a, b], &[Mask::empty(2, 2)]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn two_layer_fixture(w: usize, h: usize) -> (Vec<DisparityGrid>, Vec<Image>, Vec<Mask>) {
        let d1 = grid(w, h, |x, y| 0.2 + 0.4 * y as f32 / h as f32 + 0.03 * (x as f32 / 5.0).sin());
        let mask = Mask::from_fn(w, h, |x, y| (8..16).contains(&x) && (6..14).contains(&y));
        let d2 = grid(w, h, |x, y| {
            if mask.get(x, y) {
                0.9
            } else {
                1.3 * d1.get(x, y).unwrap() + 0.05
            }
        });
        let img = Image::filled(w, h, [0.5, 0.4, 0.3]);
        (vec![d1, d2], vec![img.clone(), img], vec![mask])
    }

    #[test]
    fn identical_layers_are_a_fixed_point() {
        let (d, i, m) = two_layer_fixture(12, 10);
        let ds = vec![d[0].clone(), d[0].clone()];
        let cfg = RefineConfig {
            hidden: 8,
            steps: 20,
            batch_size: 32,
            ..Default::default()
        };
        let out = refine_disparities(&ds, &i, &m, &cfg).unwrap();
        assert_eq!(out.initial_loss, 0.0);
        assert_eq!(out.grids, ds);
    }

    #[test]
    fn reference_layer_is_untouched_and_initial_loss_matches() {
        let (d, i, m) = two_layer_fixture(24, 20);
        let problem = RefinementProblem::new(&d, &i, &m, 0.0).unwrap();
        let nets = vec![RefinementNet::new(8, 3)];
        // ε = 0 makes the smoothed loss the exact loss
        let exact = consistency_loss(&d, &m).unwrap();
        assert!((problem.full_smoothed_loss(&nets) - exact).abs() < 1e-9 * exact);
        let cfg = RefineConfig {
            hidden: 8,
            steps: 10,
            batch_size: 64,
            ..Default::default()
        };
        let out = refine_disparities(&d, &i, &m, &cfg).unwrap();
        assert_eq!(out.grids[0], d[0]);
    }

    #[test]
    fn affine_corruption_is_removed() {
        let (d, i, m) = two_layer_fixture(24, 20);
        let cfg = RefineConfig {
            hidden: 16,
            steps: 1500,
            batch_size: 256,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let out = refine_disparities(&d, &i, &m, &cfg).unwrap();
        assert!(out.final_loss <= 0.01 * out.initial_loss, "{} vs {}", out.final_loss, out.initial_loss);
    }

    #[test]
    fn output_bias_gradient_sign_follows_difference() {
        let d1 = grid(1, 1, |_, _| 0.5);
        let d2 = grid(1, 1, |_, _| 0.8);
        let img = Image::filled(1, 1, [0.0; 3]);
        let problem = RefinementProblem::new(&[d1, d2], &[img.clone(), img], &[Mask::empty(1, 1)], 1e-6).unwrap();
        let nets = vec![RefinementNet::new(4, 0)];
        let batch = [PixelSample {
            pair: 0,
            pixel: 0,
            weight: 1.0,
        }];
        let (_, g) = problem.loss_gradient(&nets, &batch);
        // raising layer 2's output moves it further from layer 1
        assert!(*g[0].last().unwrap() > 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (w, h) = (10, 8);
        let d1 = grid(w, h, |x, y| 0.3 + 0.05 * x as f32 + 0.02 * y as f32);
        let d2 = grid(w, h, |x, y| 0.5 + 0.03 * x as f32 - 0.01 * y as f32);
        let d3 = grid(w, h, |x, y| 0.2 + 0.07 * (x as f32 * 0.7).sin() + 0.04 * y as f32);
        let img = Image::new(w, h, (0..w * h).map(|i| [(i % 7) as f32 / 7.0, 0.5, (i % 3) as f32 / 3.0]).collect()).unwrap();
        let masks = vec![Mask::from_fn(w, h, |x, _| x < 2), Mask::from_fn(w, h, |_, y| y > 5)];
        let problem = RefinementProblem::new(&[d1, d2, d3], &[img.clone(), img.clone(), img], &masks, 1e-6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut nets: Vec<RefinementNet> = (0..2).map(|k| RefinementNet::new(8, k)).collect();
        for net in &mut nets {
            for p in net.params_mut() {
                *p += rng.gen_range(-0.3..0.3);
            }
        }
        let batch = problem.sample_batch(&mut rng, 12);
        let (_, grads) = problem.loss_gradient(&nets, &batch);
        let step = 1e-4;
        for _ in 0..100 {
            let k = rng.gen_range(0..nets.len());
            let j = rng.gen_range(0..nets[k].params().len());
            let orig = nets[k].params()[j];
            nets[k].params_mut()[j] = orig + step;
            let up = problem.loss_gradient(&nets, &batch).0;
            nets[k].params_mut()[j] = orig - step;
            let down = problem.loss_gradient(&nets, &batch).0;
            nets[k].params_mut()[j] = orig;
            let fd = (up - down) / (2.0 * step);
            let an = grads[k][j];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-7);
            assert!(rel < 1e-4, "net {k} param {j}: analytic {an} vs numeric {fd}");
        }
    }
}
