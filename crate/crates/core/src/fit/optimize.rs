use std::time::{Duration, Instant};

use nalgebra::{Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamParams, AdamState};
use super::forward::{forward_reconstruct, ForwardResult, ReconstructConfig};
use crate::error::{Error, Result};
use crate::gaussian_field::SplatField;
use crate::geometry::{quat_to_wxyz, wxyz_to_quat, ImageGrid, View};
use crate::losses::{
    normal_loss, photometric, total_loss, weighted_chamfer, LossWeights, NormalPrediction, NormalScale,
    PointCloud, SamplingConfig,
};
use crate::rasterizer::{render, render_backward, RenderConfig, RenderOutput, RenderUpstream, SplatGrad};

/// Downsampling factors of the normal-loss scales, coarse to fine.
pub const NORMAL_SCALES: [usize; 3] = [4, 2, 1];
/// κ = softplus(raw) + KAPPA_FLOOR.
pub const KAPPA_FLOOR: f64 = 1e-4;
/// Pixels enter the normal loss only where the rendered opacity reaches this.
const NORMAL_MIN_ACC: f64 = 0.5;

/// Adam step sizes per parameter class. `mu` is multiplied by the scene
/// extent (diagonal of the initial centers' bounding box).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub mu: f64,
    /// On log-scales.
    pub scale: f64,
    /// On raw quaternion components.
    pub rotation: f64,
    /// On opacity logits.
    pub opacity: f64,
    pub color: f64,
    /// On the unconstrained κ parameters.
    pub kappa: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mu: 1e-4,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 1e-2,
            kappa: 1e-2,
        }
    }
}

impl LearningRates {
    /// Every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mu: self.mu * factor,
            scale: self.scale * factor,
            rotation: self.rotation * factor,
            opacity: self.opacity * factor,
            color: self.color * factor,
            kappa: self.kappa * factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub steps: usize,
    pub lr: LearningRates,
    pub weights: LossWeights,
    pub sampling: SamplingConfig,
    pub seed: u64,
    pub adam: AdamParams,
    /// Weight of the photometric term on a held-out view, when one is given.
    pub holdout_weight: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: LearningRates::default(),
            weights: LossWeights::default(),
            sampling: SamplingConfig::default(),
            seed: 0,
            adam: AdamParams::default(),
            holdout_weight: 0.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.sampling.validate()?;
        let lr = &self.lr;
        for (name, v) in [
            ("mu", lr.mu),
            ("scale", lr.scale),
            ("rotation", lr.rotation),
            ("opacity", lr.opacity),
            ("color", lr.color),
            ("kappa", lr.kappa),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid("learning rate", format!("{name} = {v}")));
            }
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::invalid("adam", format!("{a:?}")));
        }
        if !(self.holdout_weight >= 0.0) {
            return Err(Error::invalid("holdout weight", self.holdout_weight.to_string()));
        }
        Ok(())
    }
}

/// Loss components at one step, evaluated before that step's update. The
/// last trace entry is evaluated after the final update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub step: usize,
    pub pho: f64,
    pub wcd: f64,
    pub normal: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub trace: Vec<StepLosses>,
    pub field: SplatField,
    pub wall_time: Duration,
}

/// Equality ignores `wall_time`.
impl PartialEq for FitReport {
    fn eq(&self, other: &Self) -> bool {
        self.trace == other.trace && self.field == other.field
    }
}

impl FitReport {
    pub fn initial(&self) -> &StepLosses {
        &self.trace[0]
    }

    pub fn last(&self) -> &StepLosses {
        self.trace.last().expect("trace has at least the initial entry")
    }

    /// `step,pho,wcd,normal,total` with a header line.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("step,pho,wcd,normal,total\n");
        for t in &self.trace {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                t.step, t.pho, t.wcd, t.normal, t.total
            ));
        }
        s
    }
}

/// Everything the optimizer reads besides its configuration.
#[derive(Debug, Clone, Copy)]
pub struct FitInputs<'a> {
    pub views: [&'a View; 2],
    /// Unit camera-frame pseudo ground-truth normals per view; zero vectors
    /// mark pixels without a target.
    pub pseudo_normals: [&'a ImageGrid; 2],
    pub holdout: Option<&'a View>,
}

/// Splat parameters in their unconstrained form.
#[derive(Debug, Clone)]
struct Params {
    mu: Vec<f64>,
    log_scale: Vec<f64>,
    quat: Vec<f64>,
    logit_opacity: Vec<f64>,
    color: Vec<f64>,
    /// Per view, per normal scale.
    kappa_raw: Vec<Vec<Vec<f64>>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

impl Params {
    fn from_field(field: &SplatField, kappa_shapes: &[Vec<usize>]) -> Self {
        let n = field.len();
        let mut p = Params {
            mu: Vec::with_capacity(3 * n),
            log_scale: Vec::with_capacity(2 * n),
            quat: Vec::with_capacity(4 * n),
            logit_opacity: Vec::with_capacity(n),
            color: Vec::with_capacity(3 * n),
            kappa_raw: Vec::new(),
        };
        for s in &field.splats {
            p.mu.extend_from_slice(s.mu.as_slice());
            p.log_scale.extend([s.scale.x.ln(), s.scale.y.ln()]);
            p.quat.extend_from_slice(quat_to_wxyz(&s.rotation).as_slice());
            p.logit_opacity.push(logit(s.opacity));
            p.color.extend_from_slice(s.color.as_slice());
        }
        // kappa starts at 1
        let init = (1.0 - KAPPA_FLOOR).exp_m1().ln();
        p.kappa_raw = kappa_shapes
            .iter()
            .map(|v| v.iter().map(|&len| vec![init; len]).collect())
            .collect();
        p
    }

    fn write_field(&self, field: &mut SplatField) {
        for (i, s) in field.splats.iter_mut().enumerate() {
            s.mu = Vector3::from_column_slice(&self.mu[3 * i..3 * i + 3]);
            s.scale = Vector2::new(self.log_scale[2 * i].exp(), self.log_scale[2 * i + 1].exp());
            s.rotation = wxyz_to_quat(&Vector4::from_column_slice(&self.quat[4 * i..4 * i + 4]));
            s.opacity = sigmoid(self.logit_opacity[i]);
            s.color = Vector3::from_column_slice(&self.color[3 * i..3 * i + 3]);
        }
    }

    fn renormalize_quats(&mut self) {
        for q in self.quat.chunks_mut(4) {
            let len = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in q.iter_mut() {
                *v /= len;
            }
        }
    }
}

/// Per-scale targets for one view: unit normals and their validity.
struct NormalTargets {
    normals: Vec<ImageGrid>,
    valid: Vec<Vec<bool>>,
}

fn renormalized(grid: &ImageGrid) -> (ImageGrid, Vec<bool>, Vec<f64>) {
    let mut out = grid.clone();
    let mut valid = vec![false; grid.pixel_count()];
    let mut norms = vec![0.0; grid.pixel_count()];
    for (i, px) in out.data_mut().chunks_mut(3).enumerate() {
        let len = (px[0] * px[0] + px[1] * px[1] + px[2] * px[2]).sqrt();
        norms[i] = len;
        if len > 1e-6 && len.is_finite() {
            for v in px.iter_mut() {
                *v /= len;
            }
            valid[i] = true;
        } else {
            px.copy_from_slice(&[0.0, 0.0, -1.0]);
        }
    }
    (out, valid, norms)
}

fn normal_targets(normals: &ImageGrid) -> Result<NormalTargets> {
    let mut t = NormalTargets {
        normals: Vec::new(),
        valid: Vec::new(),
    };
    for f in NORMAL_SCALES {
        let (n, mut valid, norms) = renormalized(&normals.downsample(f)?);
        // averaging across a crease shortens the mean normal: drop those pixels
        for (v, len) in valid.iter_mut().zip(norms) {
            *v &= len > 0.5;
        }
        t.normals.push(n);
        t.valid.push(valid);
    }
    Ok(t)
}

struct Problem<'a> {
    inputs: FitInputs<'a>,
    cfg: &'a FitConfig,
    render_cfg: RenderConfig,
    targets: [NormalTargets; 2],
    /// Splat indices per source view with their confidence weights.
    groups: [(Vec<usize>, Vec<f64>); 2],
}

struct Evaluation {
    losses: StepLosses,
    grads: Vec<SplatGrad>,
    kappa_grads: Vec<Vec<Vec<f64>>>,
}

impl Problem<'_> {
    fn evaluate(&self, field: &SplatField, params: &Params, step: usize) -> Result<Evaluation> {
        let w = &self.cfg.weights;
        let n_views = 2.0;
        let mut grads = vec![SplatGrad::default(); field.len()];
        let mut kappa_grads: Vec<Vec<Vec<f64>>> = params
            .kappa_raw
            .iter()
            .map(|v| v.iter().map(|k| vec![0.0; k.len()]).collect())
            .collect();
        let (mut pho, mut normal) = (0.0, 0.0);
        for v in 0..2 {
            let view = self.inputs.views[v];
            let out = render(field, view, &self.render_cfg);
            let mut up = RenderUpstream::zeros(view.height(), view.width());
            let p = photometric(&view.image, &out.rgb, w.w11, w.w12)?;
            pho += p.loss / n_views;
            for (u, g) in up.rgb.data_mut().iter_mut().zip(p.grad.data()) {
                *u = w.w1 * g / n_views;
            }
            let seed = self
                .cfg
                .seed
                .wrapping_mul(1_000_003)
                .wrapping_add((step * 2 + v) as u64);
            if let Some(value) =
                self.normal_term(&out, v, &params.kappa_raw[v], seed, &mut up, &mut kappa_grads[v])?
            {
                normal += value / n_views;
            }
            accumulate(
                &mut grads,
                &render_backward(field, view, &self.render_cfg, &up)?.splats,
            );
        }
        if let Some(h) = self.inputs.holdout.filter(|_| self.cfg.holdout_weight > 0.0) {
            let out = render(field, h, &self.render_cfg);
            let p = photometric(&h.image, &out.rgb, w.w11, w.w12)?;
            pho += self.cfg.holdout_weight * p.loss;
            let mut up = RenderUpstream::zeros(h.height(), h.width());
            for (u, g) in up.rgb.data_mut().iter_mut().zip(p.grad.data()) {
                *u = w.w1 * self.cfg.holdout_weight * g;
            }
            accumulate(
                &mut grads,
                &render_backward(field, h, &self.render_cfg, &up)?.splats,
            );
        }
        let wcd = self.wcd_term(field, w.w2, &mut grads)?;
        let total = total_loss(pho, wcd, normal, w);
        Ok(Evaluation {
            losses: StepLosses {
                step,
                pho,
                wcd,
                normal,
                total,
            },
            grads,
            kappa_grads,
        })
    }

    /// AngMF loss of the rendered normals against the targets of view `v`.
    /// Writes its gradient into `up.normal` and `kappa_grad`; `None` when no
    /// scale has a valid pixel.
    fn normal_term(
        &self,
        out: &RenderOutput,
        v: usize,
        kappa_raw: &[Vec<f64>],
        seed: u64,
        up: &mut RenderUpstream,
        kappa_grad: &mut [Vec<f64>],
    ) -> Result<Option<f64>> {
        let w3 = self.cfg.weights.w3;
        let targets = &self.targets[v];
        let mut scales = Vec::new();
        let mut masks = Vec::new();
        let mut lengths = Vec::new();
        for (s, &f) in NORMAL_SCALES.iter().enumerate() {
            let (n, valid, norms) = renormalized(&out.normal.downsample(f)?);
            let acc = out.acc.downsample(f)?;
            let mask: Vec<bool> = (0..valid.len())
                .map(|i| valid[i] && targets.valid[s][i] && acc.data()[i] >= NORMAL_MIN_ACC)
                .collect();
            if !mask.iter().any(|&b| b) {
                return Ok(None);
            }
            let kappa = ImageGrid::from_vec(
                n.height(),
                n.width(),
                1,
                kappa_raw[s].iter().map(|&r| softplus(r) + KAPPA_FLOOR).collect(),
            )?;
            scales.push(NormalScale { normal: n, kappa });
            masks.push(mask);
            lengths.push(norms);
        }
        let value = normal_loss(
            &NormalPrediction { scales },
            &targets.normals,
            Some(&masks),
            &self.cfg.sampling,
            seed,
        )?;
        let scale = w3 / 2.0;
        for (s, &f) in NORMAL_SCALES.iter().enumerate() {
            let mut g = value.grad_normal[s].clone();
            // grad_normal is tangential at n = m / |m|, so the pull-back through the normalization is a division by |m|
            for (px, len) in g.data_mut().chunks_mut(3).zip(&lengths[s]) {
                let k = if *len > 1e-6 { scale / len } else { 0.0 };
                for c in px.iter_mut() {
                    *c *= k;
                }
            }
            let full = g.downsample_adjoint(f);
            for (u, d) in up.normal.data_mut().iter_mut().zip(full.data()) {
                *u += d;
            }
            for ((kg, gk), raw) in kappa_grad[s]
                .iter_mut()
                .zip(value.grad_kappa[s].data())
                .zip(&kappa_raw[s])
            {
                *kg = scale * gk * sigmoid(*raw);
            }
        }
        Ok(Some(value.loss))
    }

    /// Weighted Chamfer distance between the current centers of the two
    /// views' splats, with confidence weights held fixed.
    fn wcd_term(&self, field: &SplatField, w2: f64, grads: &mut [SplatGrad]) -> Result<f64> {
        let [(ia, wa), (ib, wb)] = &self.groups;
        if ia.is_empty() || ib.is_empty() {
            return Ok(0.0);
        }
        let cloud = |idx: &[usize], w: &[f64]| {
            PointCloud::with_weights(idx.iter().map(|&i| field.splats[i].mu).collect(), w.to_vec())
        };
        let value = weighted_chamfer(&cloud(ia, wa)?, &cloud(ib, wb)?)?;
        for (k, &i) in ia.iter().enumerate() {
            grads[i].mu += value.grad_a[k] * w2;
        }
        for (k, &i) in ib.iter().enumerate() {
            grads[i].mu += value.grad_b[k] * w2;
        }
        Ok(value.value)
    }
}

fn accumulate(into: &mut [SplatGrad], from: &[SplatGrad]) {
    for (a, b) in into.iter_mut().zip(from) {
        a.add_assign(b);
    }
}

fn scene_extent(field: &SplatField) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for s in &field.splats {
        lo = lo.inf(&s.mu);
        hi = hi.sup(&s.mu);
    }
    let d = (hi - lo).norm();
    if d.is_finite() && d > 0.0 {
        d
    } else {
        1.0
    }
}

/// Forward pass followed by [`fit_from`].
pub fn fit_scene(
    inputs: &FitInputs,
    recon: &ReconstructConfig,
    cfg: &FitConfig,
) -> Result<(ForwardResult, FitReport)> {
    let fwd = forward_reconstruct(inputs.views, Some(inputs.pseudo_normals), recon)?;
    let report = fit_from(inputs, &fwd, cfg)?;
    Ok((fwd, report))
}

/// Adam on every splat parameter (and per-pixel κ) under
/// `w1 L_pho + w2 L_wcd + w3 L_normal`, starting from `start.field`.
pub fn fit_from(inputs: &FitInputs, start: &ForwardResult, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    let clock = Instant::now();
    let targets = [
        normal_targets(inputs.pseudo_normals[0])?,
        normal_targets(inputs.pseudo_normals[1])?,
    ];
    let kappa_shapes: Vec<Vec<usize>> = targets
        .iter()
        .map(|t| t.normals.iter().map(ImageGrid::pixel_count).collect())
        .collect();
    let confidence = start.splat_confidence();
    let groups = [0u32, 1].map(|v| {
        let idx = start.field.indices_of_view(v);
        let w = idx.iter().map(|&i| confidence[i]).collect();
        (idx, w)
    });
    let problem = Problem {
        inputs: *inputs,
        cfg,
        render_cfg: RenderConfig::default(),
        targets,
        groups,
    };
    let mut field = start.field.clone();
    let mut params = Params::from_field(&field, &kappa_shapes);
    let n = field.len();
    let mut st_mu = AdamState::new(3 * n);
    let mut st_scale = AdamState::new(2 * n);
    let mut st_quat = AdamState::new(4 * n);
    let mut st_opacity = AdamState::new(n);
    let mut st_color = AdamState::new(3 * n);
    let mut st_kappa: Vec<Vec<AdamState>> = params
        .kappa_raw
        .iter()
        .map(|v| v.iter().map(|k| AdamState::new(k.len())).collect())
        .collect();
    let lr = &cfg.lr;
    let lr_mu = lr.mu * scene_extent(&field);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let eval = problem.evaluate(&field, &params, step)?;
        let l = eval.losses;
        if ![l.pho, l.wcd, l.normal, l.total].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("pho {} wcd {} normal {}", l.pho, l.wcd, l.normal),
            });
        }
        trace.push(l);
        if step == cfg.steps {
            break;
        }
        let g = &eval.grads;
        let mut g_mu = Vec::with_capacity(3 * n);
        let mut g_scale = Vec::with_capacity(2 * n);
        let mut g_quat = Vec::with_capacity(4 * n);
        let mut g_opacity = Vec::with_capacity(n);
        let mut g_color = Vec::with_capacity(3 * n);
        for (s, gs) in field.splats.iter().zip(g) {
            g_mu.extend_from_slice(gs.mu.as_slice());
            g_scale.extend([gs.scale.x * s.scale.x, gs.scale.y * s.scale.y]);
            g_quat.extend_from_slice(gs.rotation.as_slice());
            g_opacity.push(gs.opacity * s.opacity * (1.0 - s.opacity));
            g_color.extend_from_slice(gs.color.as_slice());
        }
        adam_step(&mut params.mu, &g_mu, &mut st_mu, lr_mu, &cfg.adam);
        adam_step(
            &mut params.log_scale,
            &g_scale,
            &mut st_scale,
            lr.scale,
            &cfg.adam,
        );
        adam_step(&mut params.quat, &g_quat, &mut st_quat, lr.rotation, &cfg.adam);
        adam_step(
            &mut params.logit_opacity,
            &g_opacity,
            &mut st_opacity,
            lr.opacity,
            &cfg.adam,
        );
        adam_step(&mut params.color, &g_color, &mut st_color, lr.color, &cfg.adam);
        for (v, per_view) in eval.kappa_grads.iter().enumerate() {
            for (s, kg) in per_view.iter().enumerate() {
                adam_step(
                    &mut params.kappa_raw[v][s],
                    kg,
                    &mut st_kappa[v][s],
                    lr.kappa,
                    &cfg.adam,
                );
            }
        }
        params.renormalize_quats();
        params.write_field(&mut field);
    }
    Ok(FitReport {
        trace,
        field,
        wall_time: clock.elapsed(),
    })
}
