//! JSON-lines box records: one object per box with `image_id`, `class`,
//! optional `score` (absent for ground truth) and `bbox` = [xmin, ymin, xmax, ymax].

use serde::{Deserialize, Serialize};

use super::{BBox, BoxClass, DetectError, GroundTruthBox, Rect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxLine {
    pub image_id: String,
    pub class: BoxClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub bbox: [f64; 4],
}

impl BoxLine {
    pub fn rect(&self) -> Result<Rect, DetectError> {
        let [a, b, c, d] = self.bbox;
        Rect::new(a, b, c, d)
    }

    /// As a detection; a missing score reads as 1.0.
    pub fn to_detection(&self) -> Result<BBox, DetectError> {
        BBox::new(self.rect()?, self.class, self.score.unwrap_or(1.0))
    }

    pub fn to_ground_truth(&self) -> Result<GroundTruthBox, DetectError> {
        Ok(GroundTruthBox {
            rect: self.rect()?,
            cls: self.class,
        })
    }

    pub fn from_detection(image_id: &str, b: &BBox) -> Self {
        Self {
            image_id: image_id.to_string(),
            class: b.cls,
            score: Some(b.score),
            bbox: [b.rect.xmin, b.rect.ymin, b.rect.xmax, b.rect.ymax],
        }
    }

    pub fn from_ground_truth(image_id: &str, g: &GroundTruthBox) -> Self {
        Self {
            image_id: image_id.to_string(),
            class: g.cls,
            score: None,
            bbox: [g.rect.xmin, g.rect.ymin, g.rect.xmax, g.rect.ymax],
        }
    }
}

/// Parses JSON lines, skipping blank lines.
pub fn read_box_lines(text: &str) -> Result<Vec<BoxLine>, DetectError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: BoxLine = serde_json::from_str(l).map_err(|e| DetectError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if rec.image_id.is_empty() {
                return Err(DetectError::Parse {
                    line: i + 1,
                    msg: "empty image_id".into(),
                });
            }
            rec.rect().map_err(|e| DetectError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            Ok(rec)
        })
        .collect()
}

pub fn write_box_lines(lines: &[BoxLine]) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(l).expect("box lines serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_detections_and_ground_truth() {
        let text = r#"{"image_id":"a","class":"roof","score":0.7,"bbox":[0,0,10,10]}

{"image_id":"a","class":"pv","bbox":[1,1,2,2]}"#;
        let lines = read_box_lines(text).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].to_detection().unwrap().score, 0.7);
        assert_eq!(lines[1].score, None);
        assert_eq!(lines[1].to_ground_truth().unwrap().cls, BoxClass::Pv);
        assert_eq!(read_box_lines(&write_box_lines(&lines)).unwrap(), lines);
    }

    #[test]
    fn reports_line_numbers() {
        let text = "{\"image_id\":\"a\",\"class\":\"roof\",\"bbox\":[0,0,1,1]}\n{\"image_id\":\"a\",\"class\":\"car\",\"bbox\":[0,0,1,1]}";
        match read_box_lines(text) {
            Err(DetectError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let inverted = r#"{"image_id":"a","class":"roof","bbox":[5,0,1,1]}"#;
        assert!(read_box_lines(inverted).is_err());
    }
}
