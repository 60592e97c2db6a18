//! Block-group deployment measures from post-NMS detections: PV systems
//! per household and the PV-to-roof area ratio.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{BBox, BoxClass, BoxLine, DetectError, DetectionSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeployError {
    #[error("block group {0}: household count must be positive")]
    Households(String),
    #[error("block group {0}: no household count")]
    MissingHouseholds(String),
    #[error("no roof area detected")]
    NoRoofArea,
    #[error("image {0}: ground sample distance must be positive")]
    Gsd(String),
    #[error("image {image}: box of class {found} in the {expected} list")]
    ClassMismatch {
        image: String,
        expected: BoxClass,
        found: BoxClass,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Detections of one image, split by class, with the image's ground
/// sample distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageObservation {
    pub image_id: String,
    pub block_group_id: String,
    pub roof_boxes: Vec<BBox>,
    pub pv_boxes: Vec<BBox>,
    pub gsd_m_per_px: f64,
}

impl ImageObservation {
    pub fn new(
        image_id: impl Into<String>,
        block_group_id: impl Into<String>,
        roof_boxes: Vec<BBox>,
        pv_boxes: Vec<BBox>,
        gsd_m_per_px: f64,
    ) -> Result<Self, DeployError> {
        let image_id = image_id.into();
        if !(gsd_m_per_px > 0.0 && gsd_m_per_px.is_finite()) {
            return Err(DeployError::Gsd(image_id));
        }
        for (list, expected) in [(&roof_boxes, BoxClass::Roof), (&pv_boxes, BoxClass::Pv)] {
            if let Some(b) = list.iter().find(|b| b.cls != expected) {
                return Err(DeployError::ClassMismatch {
                    image: image_id,
                    expected,
                    found: b.cls,
                });
            }
        }
        Ok(Self {
            image_id,
            block_group_id: block_group_id.into(),
            roof_boxes,
            pv_boxes,
            gsd_m_per_px,
        })
    }

    /// Splits a mixed detection set by class.
    pub fn from_detections(
        dets: &DetectionSet,
        block_group_id: &str,
        gsd_m_per_px: f64,
    ) -> Result<Self, DeployError> {
        let (roofs, pvs): (Vec<BBox>, Vec<BBox>) =
            dets.boxes.iter().partition(|b| b.cls == BoxClass::Roof);
        Self::new(
            dets.image_id.clone(),
            block_group_id,
            roofs,
            pvs,
            gsd_m_per_px,
        )
    }
}

/// How PV boxes turn into system counts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum PvCounting {
    /// One box is one system.
    #[default]
    PerBox,
    /// Boxes whose outlines, grown by `eps_px`, touch are one system.
    MergeTouching { eps_px: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageContribution {
    pub pv_count: u64,
    pub pv_area_m2: f64,
    pub roof_area_m2: f64,
}

fn merged_count(boxes: &[BBox], eps: f64) -> u64 {
    let n = boxes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let grown: Vec<_> = boxes.iter().map(|b| b.rect.expanded(eps)).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if grown[i].touches(&grown[j]) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count() as u64
}

/// PV count and areas for one image. PV detections on an image without
/// any roof are discarded.
pub fn image_contribution(obs: &ImageObservation, counting: PvCounting) -> ImageContribution {
    let g2 = obs.gsd_m_per_px * obs.gsd_m_per_px;
    let roof_px: f64 = obs.roof_boxes.iter().map(|b| b.rect.area()).sum();
    if obs.roof_boxes.is_empty() {
        return ImageContribution::default();
    }
    let pv_px: f64 = obs.pv_boxes.iter().map(|b| b.rect.area()).sum();
    let pv_count = match counting {
        PvCounting::PerBox => obs.pv_boxes.len() as u64,
        PvCounting::MergeTouching { eps_px } => merged_count(&obs.pv_boxes, eps_px),
    };
    ImageContribution {
        pv_count,
        pv_area_m2: pv_px * g2,
        roof_area_m2: roof_px * g2,
    }
}

/// Total PV systems over the block group's images divided by its households.
pub fn pv_count_per_hh(
    contributions: &[ImageContribution],
    households: i64,
) -> Result<f64, DeployError> {
    if households <= 0 {
        return Err(DeployError::Households(String::new()));
    }
    let systems: u64 = contributions.iter().map(|c| c.pv_count).sum();
    Ok(systems as f64 / households as f64)
}

/// Ratio of summed PV area to summed roof area.
pub fn pv_to_roof_ratio(contributions: &[ImageContribution]) -> Result<f64, DeployError> {
    let pv: f64 = contributions.iter().map(|c| c.pv_area_m2).sum();
    let roof: f64 = contributions.iter().map(|c| c.roof_area_m2).sum();
    if !(roof > 0.0) {
        return Err(DeployError::NoRoofArea);
    }
    Ok(pv / roof)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockGroupDeployment {
    pub block_group_id: String,
    pub pv_system_count: u64,
    pub households: u64,
    pub pv_area_m2: f64,
    pub roof_area_m2: f64,
    pub pv_count_per_hh: f64,
    /// `None` when the block group has no detected roof area; such block
    /// groups are excluded from modeling.
    pub pv_to_roof_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RollupOutput {
    pub records: Vec<BlockGroupDeployment>,
    pub errors: Vec<DeployError>,
}

/// One record per block group, ordered by block-group id. Images inside a
/// group are summed in image-id order, so the result does not depend on the
/// input order or on scheduling.
pub fn rollup(
    observations: &[ImageObservation],
    households: &BTreeMap<String, i64>,
    counting: PvCounting,
) -> RollupOutput {
    let mut groups: BTreeMap<&str, Vec<&ImageObservation>> = BTreeMap::new();
    for o in observations {
        groups.entry(o.block_group_id.as_str()).or_default().push(o);
    }
    let results: Vec<Result<BlockGroupDeployment, DeployError>> = groups
        .into_par_iter()
        .map(|(bg, mut obs)| {
            let hh = *households
                .get(bg)
                .ok_or_else(|| DeployError::MissingHouseholds(bg.to_string()))?;
            if hh <= 0 {
                return Err(DeployError::Households(bg.to_string()));
            }
            obs.sort_by(|a, b| a.image_id.cmp(&b.image_id));
            let contribs: Vec<ImageContribution> = obs
                .iter()
                .map(|o| image_contribution(o, counting))
                .collect();
            let pv_system_count = contribs.iter().map(|c| c.pv_count).sum();
            Ok(BlockGroupDeployment {
                block_group_id: bg.to_string(),
                pv_system_count,
                households: hh as u64,
                pv_area_m2: contribs.iter().map(|c| c.pv_area_m2).sum(),
                roof_area_m2: contribs.iter().map(|c| c.roof_area_m2).sum(),
                pv_count_per_hh: pv_count_per_hh(&contribs, hh)?,
                pv_to_roof_ratio: pv_to_roof_ratio(&contribs).ok(),
            })
        })
        .collect();
    let mut out = RollupOutput::default();
    for r in results {
        match r {
            Ok(rec) => out.records.push(rec),
            Err(e) => out.errors.push(e),
        }
    }
    out
}

/// JSON-lines observation record: `image_id`, `block_group_id`,
/// `gsd_m_per_px` and a `boxes` list in the detection line format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationLine {
    pub image_id: String,
    pub block_group_id: String,
    pub gsd_m_per_px: f64,
    pub boxes: Vec<ObservationBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationBox {
    pub class: BoxClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub bbox: [f64; 4],
}

impl ObservationLine {
    pub fn detection_set(&self) -> Result<DetectionSet, DetectError> {
        let boxes = self
            .boxes
            .iter()
            .map(|b| {
                BoxLine {
                    image_id: self.image_id.clone(),
                    class: b.class,
                    score: b.score,
                    bbox: b.bbox,
                }
                .to_detection()
            })
            .collect::<Result<Vec<_>, _>>()?;
        DetectionSet::new(self.image_id.clone(), boxes)
    }

    pub fn from_detections(dets: &DetectionSet, block_group_id: &str, gsd_m_per_px: f64) -> Self {
        Self {
            image_id: dets.image_id.clone(),
            block_group_id: block_group_id.to_string(),
            gsd_m_per_px,
            boxes: dets
                .boxes
                .iter()
                .map(|b| ObservationBox {
                    class: b.cls,
                    score: Some(b.score),
                    bbox: [b.rect.xmin, b.rect.ymin, b.rect.xmax, b.rect.ymax],
                })
                .collect(),
        }
    }
}

pub fn read_observation_lines(text: &str) -> Result<Vec<ObservationLine>, DeployError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DeployError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_observation_lines(lines: &[ObservationLine]) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(l).expect("observation lines serialize"));
        out.push('\n');
    }
    out
}

pub const DEPLOYMENT_CSV_HEADER: &str =
    "geoid,pv_system_count,households,pv_area_m2,roof_area_m2,pv_count_per_hh,pv_to_roof_ratio";

pub fn deployment_csv(records: &[BlockGroupDeployment]) -> String {
    let mut out = String::from(DEPLOYMENT_CSV_HEADER);
    out.push('\n');
    for r in records {
        let ratio = r
            .pv_to_roof_ratio
            .map(|v| v.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.block_group_id,
            r.pv_system_count,
            r.households,
            r.pv_area_m2,
            r.roof_area_m2,
            r.pv_count_per_hh,
            ratio
        );
    }
    out
}

/// Reads a `geoid,households` CSV (header required).
pub fn read_households_csv(text: &str) -> Result<BTreeMap<String, i64>, DeployError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| DeployError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(g), Some(h)) = (col("geoid"), col("households")) else {
        return Err(DeployError::Parse {
            line: 1,
            msg: "expected columns geoid,households".into(),
        });
    };
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| DeployError::Parse {
            line: i + 2,
            msg: e.to_string(),
        })?;
        let hh: i64 = rec[h].trim().parse().map_err(|_| DeployError::Parse {
            line: i + 2,
            msg: format!("bad household count {:?}", &rec[h]),
        })?;
        out.insert(rec[g].to_string(), hh);
    }
    Ok(out)
}

/// Reads a CSV written by [`deployment_csv`].
pub fn read_deployment_csv(text: &str) -> Result<Vec<BlockGroupDeployment>, DeployError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| DeployError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let want: Vec<&str> = DEPLOYMENT_CSV_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != want {
        return Err(DeployError::Parse {
            line: 1,
            msg: format!("expected header {DEPLOYMENT_CSV_HEADER}"),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| DeployError::Parse {
            line,
            msg: e.to_string(),
        })?;
        let bad = |c: usize| DeployError::Parse {
            line,
            msg: format!("bad {} {:?}", want[c], &rec[c]),
        };
        let int = |c: usize| rec[c].trim().parse::<u64>().map_err(|_| bad(c));
        let num = |c: usize| rec[c].trim().parse::<f64>().map_err(|_| bad(c));
        out.push(BlockGroupDeployment {
            block_group_id: rec[0].to_string(),
            pv_system_count: int(1)?,
            households: int(2)?,
            pv_area_m2: num(3)?,
            roof_area_m2: num(4)?,
            pv_count_per_hh: num(5)?,
            pv_to_roof_ratio: if rec[6].trim().is_empty() {
                None
            } else {
                Some(num(6)?)
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::Rect;
    use proptest::prelude::*;

    fn square(cls: BoxClass, x: f64, side: f64) -> BBox {
        BBox::new(Rect::new(x, 0.0, x + side, side).unwrap(), cls, 1.0).unwrap()
    }

    fn obs(id: &str, bg: &str, roofs: Vec<BBox>, pvs: Vec<BBox>) -> ImageObservation {
        ImageObservation::new(id, bg, roofs, pvs, 0.1).unwrap()
    }

    #[test]
    fn pv_without_roof_is_excluded() {
        let o = obs("a", "g", vec![], vec![square(BoxClass::Pv, 0., 3.); 3]);
        assert_eq!(
            image_contribution(&o, PvCounting::PerBox),
            ImageContribution::default()
        );
    }

    #[test]
    fn roof_only_image() {
        let o = obs(
            "a",
            "g",
            vec![
                square(BoxClass::Roof, 0., 10.),
                square(BoxClass::Roof, 20., 10.),
            ],
            vec![],
        );
        let c = image_contribution(&o, PvCounting::PerBox);
        assert_eq!(c.pv_count, 0);
        assert_eq!(c.pv_area_m2, 0.0);
        assert!((c.roof_area_m2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn roof_with_one_panel() {
        let pv = BBox::new(Rect::new(0., 0., 10., 5.).unwrap(), BoxClass::Pv, 0.9).unwrap();
        let o = obs("a", "g", vec![square(BoxClass::Roof, 0., 20.)], vec![pv]);
        let c = image_contribution(&o, PvCounting::PerBox);
        assert_eq!(c.pv_count, 1);
        assert!((c.pv_area_m2 - 0.5).abs() < 1e-12);
        assert!((c.roof_area_m2 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn merge_mode_joins_touching_panels() {
        let pvs = vec![
            square(BoxClass::Pv, 0., 2.),
            square(BoxClass::Pv, 2., 2.),
            square(BoxClass::Pv, 10., 2.),
        ];
        let o = obs("a", "g", vec![square(BoxClass::Roof, 0., 20.)], pvs);
        assert_eq!(image_contribution(&o, PvCounting::PerBox).pv_count, 3);
        assert_eq!(
            image_contribution(&o, PvCounting::MergeTouching { eps_px: 0.0 }).pv_count,
            2
        );
        assert_eq!(
            image_contribution(&o, PvCounting::MergeTouching { eps_px: 3.0 }).pv_count,
            1
        );
    }

    #[test]
    fn count_per_household() {
        let c = |n| ImageContribution {
            pv_count: n,
            ..Default::default()
        };
        assert_eq!(pv_count_per_hh(&[c(0), c(0)], 10).unwrap(), 0.0);
        assert!((pv_count_per_hh(&[c(7)], 100).unwrap() - 0.07).abs() < 1e-15);
        assert!((pv_count_per_hh(&[c(2), c(0), c(1)], 10).unwrap() - 0.3).abs() < 1e-15);
        assert!(pv_count_per_hh(&[c(1)], 0).is_err());
        assert!(pv_count_per_hh(&[c(1)], -3).is_err());
    }

    #[test]
    fn ratio_of_sums() {
        let c = |pv: f64, roof: f64| ImageContribution {
            pv_count: 0,
            pv_area_m2: pv,
            roof_area_m2: roof,
        };
        assert_eq!(pv_to_roof_ratio(&[c(0.0, 50.0)]).unwrap(), 0.0);
        assert!((pv_to_roof_ratio(&[c(1.0, 50.0), c(2.0, 70.0)]).unwrap() - 0.025).abs() < 1e-15);
        assert_eq!(pv_to_roof_ratio(&[c(30.0, 30.0)]).unwrap(), 1.0);
        assert_eq!(
            pv_to_roof_ratio(&[c(1.0, 0.0)]),
            Err(DeployError::NoRoofArea)
        );
    }

    #[test]
    fn rollup_mirrors_single_image_and_reports_missing_households() {
        let pv = square(BoxClass::Pv, 0., 4.);
        let observations = vec![
            obs("a1", "g1", vec![square(BoxClass::Roof, 0., 10.)], vec![pv]),
            obs("b1", "g2", vec![square(BoxClass::Roof, 0., 10.)], vec![]),
        ];
        let hh = BTreeMap::from([("g1".to_string(), 4)]);
        let out = rollup(&observations, &hh, PvCounting::PerBox);
        assert_eq!(out.records.len(), 1);
        assert_eq!(
            out.errors,
            vec![DeployError::MissingHouseholds("g2".into())]
        );
        let r = &out.records[0];
        let c = image_contribution(&observations[0], PvCounting::PerBox);
        assert_eq!(r.pv_system_count, c.pv_count);
        assert_eq!(r.pv_area_m2, c.pv_area_m2);
        assert_eq!(r.roof_area_m2, c.roof_area_m2);
        assert_eq!(r.pv_count_per_hh, 0.25);
    }

    #[test]
    fn roofless_block_group_has_no_ratio() {
        let observations = vec![obs("a1", "g1", vec![], vec![square(BoxClass::Pv, 0., 4.)])];
        let hh = BTreeMap::from([("g1".to_string(), 4)]);
        let out = rollup(&observations, &hh, PvCounting::PerBox);
        assert_eq!(out.records[0].pv_to_roof_ratio, None);
        assert!(deployment_csv(&out.records)
            .lines()
            .nth(1)
            .unwrap()
            .ends_with(','));
    }

    #[test]
    fn households_csv() {
        let hh = read_households_csv("geoid,households\n080310041021,120\n").unwrap();
        assert_eq!(hh["080310041021"], 120);
        assert!(read_households_csv("geoid,households\nx,abc\n").is_err());
        let recs = vec![BlockGroupDeployment {
            block_group_id: "080310041021".into(),
            pv_system_count: 3,
            households: 7,
            pv_area_m2: 0.1 + 0.2,
            roof_area_m2: 0.0,
            pv_count_per_hh: 3.0 / 7.0,
            pv_to_roof_ratio: None,
        }];
        assert_eq!(read_deployment_csv(&deployment_csv(&recs)).unwrap(), recs);
        assert!(read_deployment_csv("geoid,households\n").is_err());
    }

    fn arb_obs() -> impl Strategy<Value = Vec<ImageObservation>> {
        prop::collection::vec(
            (0usize..3, 0usize..4, 0usize..3, 1.0f64..50.0, 0.05f64..0.3),
            1..20,
        )
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (bg, roofs, pvs, side, gsd))| {
                    let roofs = (0..roofs)
                        .map(|k| square(BoxClass::Roof, 100.0 * k as f64, side))
                        .collect();
                    let pvs = (0..pvs)
                        .map(|k| square(BoxClass::Pv, 100.0 * k as f64, side / 2.0))
                        .collect();
                    ImageObservation::new(format!("img{i:03}"), format!("bg{bg}"), roofs, pvs, gsd)
                        .unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn rollup_ignores_input_order(mut o in arb_obs(), seed in any::<u64>()) {
            let hh: BTreeMap<String, i64> = (0..3).map(|i| (format!("bg{i}"), 10 + i as i64)).collect();
            let a = rollup(&o, &hh, PvCounting::PerBox);
            let n = o.len();
            o.rotate_left((seed as usize) % n);
            o.reverse();
            let b = rollup(&o, &hh, PvCounting::PerBox);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn ratio_is_scale_invariant(o in arb_obs(), c in 0.1f64..10.0) {
            let base: Vec<_> = o.iter().map(|x| image_contribution(x, PvCounting::PerBox)).collect();
            let scaled: Vec<_> = base
                .iter()
                .map(|x| ImageContribution { pv_count: x.pv_count, pv_area_m2: c * x.pv_area_m2, roof_area_m2: c * x.roof_area_m2 })
                .collect();
            if let (Ok(r1), Ok(r2)) = (pv_to_roof_ratio(&base), pv_to_roof_ratio(&scaled)) {
                prop_assert!((r1 - r2).abs() <= 1e-12 * r1.max(1e-300));
            }
        }

        #[test]
        fn counts_are_additive_over_partitions(o in arb_obs(), split in 0usize..20) {
            let c: Vec<_> = o.iter().map(|x| image_contribution(x, PvCounting::PerBox)).collect();
            let k = split.min(c.len());
            let whole: u64 = c.iter().map(|x| x.pv_count).sum();
            let parts: u64 = c[..k].iter().map(|x| x.pv_count).sum::<u64>() + c[k..].iter().map(|x| x.pv_count).sum::<u64>();
            prop_assert_eq!(whole, parts);
            prop_assert_eq!(pv_count_per_hh(&c, 37).unwrap(), whole as f64 / 37.0);
        }
    }
}
