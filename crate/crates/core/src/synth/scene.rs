use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::deploy::{deployment_csv, BlockGroupDeployment, ObservationLine};
use crate::detect::{BBox, BoxClass, BoxLine, DetectionSet, EvalCorpus, GroundTruthBox, Rect};
use crate::geo::ground_resolution;
use crate::rng::rng_for;

/// A scalar distribution with positive support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Dist {
    fn sample(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Dist::Fixed { value } => value,
            Dist::Uniform { lo, hi } if hi > lo => rng.random_range(lo..hi),
            Dist::Uniform { lo, .. } => lo,
        }
    }

    fn bounds(self) -> (f64, f64) {
        match self {
            Dist::Fixed { value } => (value, value),
            Dist::Uniform { lo, hi } => (lo, hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub block_groups: usize,
    /// Inclusive household-count range per block group.
    pub households: (i64, i64),
    /// Inclusive image-count range per block group.
    pub images_per_block_group: (usize, usize),
    /// Square image side.
    pub image_px: u32,
    /// Inclusive roof-count range per image.
    pub roofs_per_image: (usize, usize),
    pub roof_width_px: Dist,
    pub roof_height_px: Dist,
    /// Probability that a roof carries a PV array.
    pub adoption_prob: f64,
    /// PV area as a fraction of its roof's area.
    pub coverage: Dist,
    pub gsd_m_per_px: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            block_groups: 5,
            households: (200, 1500),
            images_per_block_group: (150, 228),
            image_px: 640,
            roofs_per_image: (0, 12),
            roof_width_px: Dist::Uniform {
                lo: 40.0,
                hi: 120.0,
            },
            roof_height_px: Dist::Uniform {
                lo: 40.0,
                hi: 120.0,
            },
            adoption_prob: 0.1,
            coverage: Dist::Uniform { lo: 0.05, hi: 0.6 },
            gsd_m_per_px: ground_resolution(39.7, 20).expect("valid latitude"),
            seed: 0,
        }
    }
}

/// Free pixels kept around every roof cell.
const MARGIN_PX: f64 = 2.0;

impl SceneSpec {
    /// Side of the square layout cell holding one roof.
    fn cell_px(&self) -> f64 {
        self.roof_width_px
            .bounds()
            .1
            .max(self.roof_height_px.bounds().1)
            .ceil()
            + 2.0 * MARGIN_PX
    }

    fn cells_per_side(&self) -> usize {
        (self.image_px as f64 / self.cell_px()).floor() as usize
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Spec(m.to_string()));
        if self.block_groups == 0 || self.block_groups > 999_999 {
            return bad("block_groups must be in 1..=999999");
        }
        if self.households.0 < 1 || self.households.1 < self.households.0 {
            return bad("households range must be positive and ordered");
        }
        if self.images_per_block_group.0 < 1
            || self.images_per_block_group.1 < self.images_per_block_group.0
        {
            return bad("images_per_block_group must be at least 1 and ordered");
        }
        if self.roofs_per_image.1 < self.roofs_per_image.0 {
            return bad("roofs_per_image range must be ordered");
        }
        if !(0.0..=1.0).contains(&self.adoption_prob) {
            return bad("adoption_prob must be in [0, 1]");
        }
        if !(self.gsd_m_per_px > 0.0 && self.gsd_m_per_px.is_finite()) {
            return bad("gsd_m_per_px must be positive");
        }
        for (name, d) in [
            ("roof_width_px", self.roof_width_px),
            ("roof_height_px", self.roof_height_px),
        ] {
            let (lo, hi) = d.bounds();
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return bad(&format!("{name} needs positive support"));
            }
        }
        let (lo, hi) = self.coverage.bounds();
        if !(lo > 0.0 && hi >= lo && hi <= 1.0) {
            return bad("coverage must lie in (0, 1]");
        }
        let cells = self.cells_per_side().pow(2);
        if self.roofs_per_image.1 > cells {
            return Err(SynthError::Infeasible(format!(
                "{} roofs of up to {} px do not fit a {} px image ({cells} cells)",
                self.roofs_per_image.1,
                self.cell_px(),
                self.image_px
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneImage {
    pub image_id: String,
    pub block_group_id: String,
    pub gsd_m_per_px: f64,
    pub roofs: Vec<Rect>,
    pub pvs: Vec<Rect>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    /// Sorted by image id.
    pub images: Vec<SceneImage>,
    /// True deployment per block group, sorted by id.
    pub truth: Vec<BlockGroupDeployment>,
}

const BG_STREAM: u64 = 1 << 40;

fn geoid(b: usize) -> String {
    format!("080310{b:06}")
}

fn generate_image(
    spec: &SceneSpec,
    rng: &mut ChaCha8Rng,
    image_id: String,
    bg: &str,
) -> SceneImage {
    let cell = spec.cell_px();
    let side = spec.cells_per_side();
    let (rmin, rmax) = spec.roofs_per_image;
    let k = rng.random_range(rmin..=rmax);
    let mut cells = sample(rng, side * side, k).into_vec();
    cells.sort_unstable();
    let mut roofs = Vec::with_capacity(k);
    let mut pvs = Vec::new();
    for c in cells {
        let (cx, cy) = ((c % side) as f64 * cell, (c / side) as f64 * cell);
        let w = spec.roof_width_px.sample(rng);
        let h = spec.roof_height_px.sample(rng);
        let x0 = cx + MARGIN_PX + rng.random::<f64>() * (cell - 2.0 * MARGIN_PX - w);
        let y0 = cy + MARGIN_PX + rng.random::<f64>() * (cell - 2.0 * MARGIN_PX - h);
        let roof = Rect::new(x0, y0, x0 + w, y0 + h).expect("positive roof");
        if rng.random::<f64>() < spec.adoption_prob {
            let s = spec.coverage.sample(rng).sqrt();
            let (pw, ph) = (w * s, h * s);
            let px = roof.xmin + rng.random::<f64>() * (w - pw);
            let py = roof.ymin + rng.random::<f64>() * (h - ph);
            let pv = Rect::new(px, py, (px + pw).min(roof.xmax), (py + ph).min(roof.ymax))
                .expect("positive pv");
            pvs.push(pv);
        }
        roofs.push(roof);
    }
    SceneImage {
        image_id,
        block_group_id: bg.to_string(),
        gsd_m_per_px: spec.gsd_m_per_px,
        roofs,
        pvs,
    }
}

/// Deterministic scene: per-block-group draws from one stream each, and
/// per-image layouts from a stream keyed by the image's global index.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let mut plans = Vec::new();
    let mut next_image = 0u64;
    for b in 0..spec.block_groups {
        let mut rng = rng_for(spec.seed, BG_STREAM + b as u64);
        let hh = rng.random_range(spec.households.0..=spec.households.1);
        let n = rng.random_range(spec.images_per_block_group.0..=spec.images_per_block_group.1);
        plans.push((geoid(b), hh, next_image, n));
        next_image += n as u64;
    }
    let images: Vec<SceneImage> = plans
        .par_iter()
        .flat_map_iter(|(bg, _, first, n)| {
            (0..*n).map(move |i| {
                let mut rng = rng_for(spec.seed, first + i as u64);
                generate_image(spec, &mut rng, format!("{bg}_{i:05}"), bg)
            })
        })
        .collect();
    let g2 = spec.gsd_m_per_px * spec.gsd_m_per_px;
    let truth = plans
        .iter()
        .map(|(bg, hh, _, _)| {
            let mine = images.iter().filter(|im| &im.block_group_id == bg);
            let (mut count, mut pv_px, mut roof_px) = (0u64, 0.0, 0.0);
            for im in mine {
                count += im.pvs.len() as u64;
                pv_px += im.pvs.iter().map(Rect::area).sum::<f64>();
                roof_px += im.roofs.iter().map(Rect::area).sum::<f64>();
            }
            BlockGroupDeployment {
                block_group_id: bg.clone(),
                pv_system_count: count,
                households: *hh as u64,
                pv_area_m2: pv_px * g2,
                roof_area_m2: roof_px * g2,
                pv_count_per_hh: count as f64 / *hh as f64,
                pv_to_roof_ratio: (roof_px > 0.0).then(|| pv_px / roof_px),
            }
        })
        .collect();
    Ok(Scene {
        spec: spec.clone(),
        images,
        truth,
    })
}

impl Scene {
    pub fn households(&self) -> BTreeMap<String, i64> {
        self.truth
            .iter()
            .map(|t| (t.block_group_id.clone(), t.households as i64))
            .collect()
    }

    pub fn households_csv(&self) -> String {
        let mut out = String::from("geoid,households\n");
        for t in &self.truth {
            out.push_str(&format!("{},{}\n", t.block_group_id, t.households));
        }
        out
    }

    pub fn truth_csv(&self) -> String {
        deployment_csv(&self.truth)
    }

    pub fn ground_truth(&self, image: &SceneImage) -> Vec<GroundTruthBox> {
        let roofs = image.roofs.iter().map(|r| GroundTruthBox {
            rect: *r,
            cls: BoxClass::Roof,
        });
        let pvs = image.pvs.iter().map(|r| GroundTruthBox {
            rect: *r,
            cls: BoxClass::Pv,
        });
        roofs.chain(pvs).collect()
    }

    pub fn ground_truth_lines(&self) -> Vec<BoxLine> {
        self.images
            .iter()
            .flat_map(|im| {
                self.ground_truth(im)
                    .into_iter()
                    .map(|g| BoxLine::from_ground_truth(&im.image_id, &g))
            })
            .collect()
    }

    /// Deploy-ready observations; `detections` aligned with `images`.
    pub fn observation_lines(&self, detections: &[DetectionSet]) -> Vec<ObservationLine> {
        self.images
            .iter()
            .zip(detections)
            .map(|(im, d)| ObservationLine::from_detections(d, &im.block_group_id, im.gsd_m_per_px))
            .collect()
    }

    pub fn eval_corpus(&self, detections: &[DetectionSet]) -> EvalCorpus {
        let mut corpus = EvalCorpus::default();
        for (im, d) in self.images.iter().zip(detections) {
            for g in self.ground_truth(im) {
                corpus.add_ground_truth(&im.image_id, g);
            }
            for b in &d.boxes {
                corpus.add_detection(&im.image_id, *b);
            }
        }
        corpus
    }

    /// Ground truth as detections with score 1.
    pub(crate) fn perfect(&self, image: &SceneImage) -> DetectionSet {
        let boxes = self
            .ground_truth(image)
            .into_iter()
            .map(|g| BBox::new(g.rect, g.cls, 1.0).expect("unit score"))
            .collect();
        DetectionSet::new(image.image_id.clone(), boxes).expect("non-empty id")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SceneSpec {
        SceneSpec {
            block_groups: 3,
            images_per_block_group: (4, 9),
            seed,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_scene(&small(1)).unwrap();
        let b = generate_scene(&small(1)).unwrap();
        let c = generate_scene(&small(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.images, c.images);
        let mut ids: Vec<&str> = a.images.iter().map(|i| i.image_id.as_str()).collect();
        let before = ids.clone();
        ids.sort();
        assert_eq!(ids, before);
    }

    #[test]
    fn pv_lies_inside_a_roof_and_roofs_are_disjoint() {
        let s = generate_scene(&SceneSpec {
            adoption_prob: 0.7,
            ..small(3)
        })
        .unwrap();
        for im in &s.images {
            for pv in &im.pvs {
                assert!(im.roofs.iter().any(|r| pv.xmin >= r.xmin
                    && pv.ymin >= r.ymin
                    && pv.xmax <= r.xmax
                    && pv.ymax <= r.ymax));
            }
            for (i, a) in im.roofs.iter().enumerate() {
                assert!(a.xmin >= 0.0 && a.ymin >= 0.0 && a.xmax <= 640.0 && a.ymax <= 640.0);
                for b in &im.roofs[i + 1..] {
                    assert_eq!(a.intersection_area(b), 0.0);
                }
            }
        }
    }

    #[test]
    fn adoption_extremes() {
        let none = generate_scene(&SceneSpec {
            adoption_prob: 0.0,
            ..small(4)
        })
        .unwrap();
        assert!(none.images.iter().all(|i| i.pvs.is_empty()));
        assert!(none.truth.iter().all(|t| t.pv_system_count == 0));
        let all = generate_scene(&SceneSpec {
            adoption_prob: 1.0,
            coverage: Dist::Fixed { value: 0.25 },
            roofs_per_image: (1, 6),
            ..small(5)
        })
        .unwrap();
        for im in &all.images {
            assert_eq!(im.pvs.len(), im.roofs.len());
        }
        for t in &all.truth {
            assert!((t.pv_to_roof_ratio.unwrap() - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_layouts_are_rejected() {
        let spec = SceneSpec {
            roofs_per_image: (0, 40),
            ..SceneSpec::default()
        };
        assert!(matches!(
            generate_scene(&spec),
            Err(SynthError::Infeasible(_))
        ));
        let spec = SceneSpec {
            adoption_prob: 1.5,
            ..SceneSpec::default()
        };
        assert!(matches!(generate_scene(&spec), Err(SynthError::Spec(_))));
    }

    #[test]
    fn default_spec_targets_189_images_per_group() {
        let s = SceneSpec::default();
        let (lo, hi) = s.images_per_block_group;
        assert_eq!((lo + hi) as f64 / 2.0, 189.0);
        assert!((s.gsd_m_per_px - 0.1149).abs() < 5e-4);
    }
}
