use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::{Scene, SceneImage};
use super::SynthError;
use crate::detect::{BBox, BoxClass, DetectionSet, Rect};
use crate::rng::rng_for;

/// Detector perturbation model applied to scene ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoisyDetector {
    /// Std of the Gaussian shift applied to each box edge.
    pub jitter_px: f64,
    /// Probability that a true object is missed.
    pub drop_prob: f64,
    /// Mean number of spurious boxes per image.
    pub spurious_rate: f64,
    /// Beta shape of true-positive scores.
    pub tp_beta: (f64, f64),
    /// Beta shape of spurious scores.
    pub fp_beta: (f64, f64),
    pub seed: u64,
}

impl Default for NoisyDetector {
    fn default() -> Self {
        Self {
            jitter_px: 1.0,
            drop_prob: 0.05,
            spurious_rate: 0.2,
            tp_beta: (5.0, 2.0),
            fp_beta: (2.0, 5.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorModel {
    /// Every ground-truth box with score 1.
    Perfect,
    Noisy(NoisyDetector),
}

struct Samplers {
    jitter: Option<Normal<f64>>,
    spurious: Option<Poisson<f64>>,
    tp: Beta<f64>,
    fp: Beta<f64>,
}

impl NoisyDetector {
    fn samplers(&self) -> Result<Samplers, SynthError> {
        let bad = |m: &str| SynthError::Spec(m.to_string());
        if !(self.jitter_px >= 0.0 && self.jitter_px.is_finite()) {
            return Err(bad("jitter_px must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(bad("drop_prob must be in [0, 1]"));
        }
        if !(self.spurious_rate >= 0.0 && self.spurious_rate.is_finite()) {
            return Err(bad("spurious_rate must be non-negative"));
        }
        let beta =
            |(a, b): (f64, f64)| Beta::new(a, b).map_err(|_| bad("beta shapes must be positive"));
        Ok(Samplers {
            jitter: (self.jitter_px > 0.0)
                .then(|| Normal::new(0.0, self.jitter_px).expect("checked std")),
            spurious: (self.spurious_rate > 0.0)
                .then(|| Poisson::new(self.spurious_rate).expect("checked rate")),
            tp: beta(self.tp_beta)?,
            fp: beta(self.fp_beta)?,
        })
    }
}

fn jittered(r: &Rect, s: &Samplers, rng: &mut ChaCha8Rng, side: f64) -> Option<Rect> {
    let Some(n) = &s.jitter else {
        return Some(*r);
    };
    let mut e = [0.0; 4];
    for v in &mut e {
        *v = n.sample(rng);
    }
    let clip = |v: f64| v.clamp(0.0, side);
    Rect::new(
        clip(r.xmin + e[0]),
        clip(r.ymin + e[1]),
        clip(r.xmax + e[2]),
        clip(r.ymax + e[3]),
    )
    .ok()
}

fn noisy_image(
    scene: &Scene,
    im: &SceneImage,
    s: &Samplers,
    cfg: &NoisyDetector,
    rng: &mut ChaCha8Rng,
) -> Vec<BBox> {
    let side = scene.spec.image_px as f64;
    let mut out = Vec::new();
    for g in scene.ground_truth(im) {
        let keep = rng.random::<f64>() >= cfg.drop_prob;
        let rect = jittered(&g.rect, s, rng, side);
        let score = s.tp.sample(rng);
        if let (true, Some(rect)) = (keep, rect) {
            out.push(BBox {
                rect,
                cls: g.cls,
                score,
            });
        }
    }
    let extra = s.spurious.as_ref().map_or(0, |p| p.sample(rng) as usize);
    for _ in 0..extra {
        let cls = if rng.random::<bool>() {
            BoxClass::Roof
        } else {
            BoxClass::Pv
        };
        let w = rng.random_range(8.0..64.0);
        let h = rng.random_range(8.0..64.0);
        let x = rng.random_range(0.0..side - w);
        let y = rng.random_range(0.0..side - h);
        let rect = Rect::new(x, y, x + w, y + h).expect("positive size");
        out.push(BBox {
            rect,
            cls,
            score: s.fp.sample(rng),
        });
    }
    out
}

/// One detection set per scene image, in scene order.
pub fn render_detections(
    scene: &Scene,
    model: &DetectorModel,
) -> Result<Vec<DetectionSet>, SynthError> {
    match model {
        DetectorModel::Perfect => Ok(scene.images.iter().map(|im| scene.perfect(im)).collect()),
        DetectorModel::Noisy(cfg) => {
            let s = cfg.samplers()?;
            Ok(scene
                .images
                .par_iter()
                .enumerate()
                .map(|(i, im)| {
                    let mut rng = rng_for(cfg.seed, i as u64);
                    let boxes = noisy_image(scene, im, &s, cfg, &mut rng);
                    DetectionSet::new(im.image_id.clone(), boxes).expect("non-empty id")
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deploy::{rollup, ImageObservation, PvCounting};
    use crate::detect::{eval_report, nms, EvalConfig, NmsThresholds};
    use crate::synth::{generate_scene, SceneSpec};

    fn scene() -> Scene {
        generate_scene(&SceneSpec {
            block_groups: 3,
            images_per_block_group: (5, 10),
            adoption_prob: 0.4,
            seed: 11,
            ..SceneSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn perfect_detector_scores_one_everywhere() {
        let s = scene();
        let dets = render_detections(&s, &DetectorModel::Perfect).unwrap();
        let rep = eval_report(&s.eval_corpus(&dets), &EvalConfig::default()).unwrap();
        let summary = rep.summary(&[BoxClass::Roof, BoxClass::Pv]);
        assert_eq!(summary[0], 1.0);
        assert_eq!(summary[1], 1.0);
        assert_eq!(summary[2], 1.0);
        assert_eq!(rep.map50(), 1.0);
    }

    #[test]
    fn dropping_everything_gives_zero_ap() {
        let s = scene();
        let cfg = NoisyDetector {
            drop_prob: 1.0,
            spurious_rate: 0.0,
            ..NoisyDetector::default()
        };
        let dets = render_detections(&s, &DetectorModel::Noisy(cfg)).unwrap();
        assert!(dets.iter().all(|d| d.boxes.is_empty()));
        let rep = eval_report(&s.eval_corpus(&dets), &EvalConfig::default()).unwrap();
        assert_eq!(rep.summary(&[BoxClass::Roof, BoxClass::Pv])[0], 0.0);
    }

    #[test]
    fn small_jitter_keeps_ap50_high_and_is_seeded() {
        let s = scene();
        let cfg = NoisyDetector {
            jitter_px: 1.0,
            drop_prob: 0.0,
            spurious_rate: 0.0,
            seed: 3,
            ..NoisyDetector::default()
        };
        let a = render_detections(&s, &DetectorModel::Noisy(cfg)).unwrap();
        let b = render_detections(&s, &DetectorModel::Noisy(cfg)).unwrap();
        assert_eq!(a, b);
        let rep = eval_report(&s.eval_corpus(&a), &EvalConfig::default()).unwrap();
        assert!(rep.map50() >= 0.95, "{}", rep.map50());
    }

    #[test]
    fn perfect_pipeline_reproduces_truth() {
        let s = scene();
        let dets = render_detections(&s, &DetectorModel::Perfect).unwrap();
        let obs: Vec<ImageObservation> = s
            .images
            .iter()
            .zip(&dets)
            .map(|(im, d)| {
                ImageObservation::from_detections(
                    &nms(d, NmsThresholds::default()),
                    &im.block_group_id,
                    im.gsd_m_per_px,
                )
                .unwrap()
            })
            .collect();
        let out = rollup(&obs, &s.households(), PvCounting::default());
        assert!(out.errors.is_empty());
        assert_eq!(out.records.len(), s.truth.len());
        for (got, want) in out.records.iter().zip(&s.truth) {
            assert_eq!(got.block_group_id, want.block_group_id);
            assert_eq!(got.pv_system_count, want.pv_system_count);
            let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1e-12);
            assert!(rel(got.pv_area_m2, want.pv_area_m2));
            assert!(rel(got.roof_area_m2, want.roof_area_m2));
        }
    }

    #[test]
    fn invalid_noise_is_rejected() {
        let s = scene();
        let cfg = NoisyDetector {
            drop_prob: -0.1,
            ..NoisyDetector::default()
        };
        assert!(render_detections(&s, &DetectorModel::Noisy(cfg)).is_err());
    }
}
