use super::ols::{OlsFit, Term};
use super::ExplainError;
use crate::learn::{Dataset, LearnError};

pub const DEFAULT_AME_GRID: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmePoint {
    pub moderator_value: f64,
    pub ame: f64,
    /// Delta-method standard error from the robust covariance.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmeReport {
    pub focal: String,
    pub moderator: String,
    pub points: Vec<AmePoint>,
}

/// `points` values evenly spaced over the observed range of `feature`.
pub fn ame_default_grid(
    ds: &Dataset,
    feature: &str,
    points: usize,
) -> Result<Vec<f64>, ExplainError> {
    let j = ds
        .feature_index(feature)
        .ok_or_else(|| LearnError::MissingFeature(feature.to_string()))?;
    let col = ds.column(j);
    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if points < 2 {
        return Ok(vec![lo; points]);
    }
    Ok((0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect())
}

/// Average over the sample of the fitted surface's derivative with respect
/// to `focal`, with `moderator` held at each grid value. The AME is linear
/// in the coefficients, so its variance is c'Vc for the weight vector c.
pub fn ame(
    fit: &OlsFit,
    ds: &Dataset,
    focal: &str,
    moderator: &str,
    grid: &[f64],
) -> Result<AmeReport, ExplainError> {
    if focal == moderator {
        return Err(ExplainError::Input(
            "focal and moderator must differ".into(),
        ));
    }
    let mean = |f: &str| -> Result<f64, ExplainError> {
        let j = ds
            .feature_index(f)
            .ok_or_else(|| LearnError::MissingFeature(f.to_string()))?;
        Ok(ds.column(j).iter().sum::<f64>() / ds.n() as f64)
    };
    ds.feature_index(moderator)
        .ok_or_else(|| LearnError::MissingFeature(moderator.to_string()))?;
    // (coefficient index, constant weight, moderator multiplier)
    let mut parts: Vec<(usize, f64, bool)> = Vec::new();
    for t in &fit.spec.terms {
        let j = fit.index_of(t).expect("term of its own spec");
        match t {
            Term::Raw(a) if a == focal => parts.push((j, 1.0, false)),
            Term::Square(a) if a == focal => parts.push((j, 2.0 * mean(focal)?, false)),
            Term::Interaction(a, b) if a == focal || b == focal => {
                let other = if a == focal { b } else { a };
                if other == moderator {
                    parts.push((j, 1.0, true));
                } else {
                    parts.push((j, mean(other)?, false));
                }
            }
            _ => {}
        }
    }
    if parts.is_empty() {
        return Err(ExplainError::FocalAbsent(focal.to_string()));
    }
    let k = fit.k();
    let points = grid
        .iter()
        .map(|&g| {
            let mut c = vec![0.0; k];
            for &(j, w, by_mod) in &parts {
                c[j] += if by_mod { w * g } else { w };
            }
            let est: f64 = c.iter().zip(&fit.beta).map(|(a, b)| a * b).sum();
            let mut var = 0.0;
            for a in 0..k {
                for b in 0..k {
                    var += c[a] * fit.cov_at(a, b) * c[b];
                }
            }
            AmePoint {
                moderator_value: g,
                ame: est,
                se: var.max(0.0).sqrt(),
            }
        })
        .collect();
    Ok(AmeReport {
        focal: focal.to_string(),
        moderator: moderator.to_string(),
        points,
    })
}

pub fn ame_to_csv(reports: &[AmeReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["focal", "moderator", "moderator_value", "ame", "se"])
        .expect("in-memory write");
    for r in reports {
        for p in &r.points {
            w.write_record([
                r.focal.clone(),
                r.moderator.clone(),
                p.moderator_value.to_string(),
                p.ame.to_string(),
                p.se.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}
