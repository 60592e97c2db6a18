use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::ExplainError;
use crate::learn::{Dataset, LearnError};

pub const INTERCEPT: &str = "Constant";

/// One regressor built from named features.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Raw(String),
    Square(String),
    Interaction(String, String),
}

impl Term {
    /// `name`, `name^2`, or `a*b`.
    pub fn parse(s: &str) -> Result<Self, ExplainError> {
        let s = s.trim();
        let bad = || ExplainError::Term(s.to_string());
        if let Some((a, b)) = s.split_once('*') {
            let (a, b) = (a.trim(), b.trim());
            if a.is_empty() || b.is_empty() || b.contains('*') {
                return Err(bad());
            }
            return Ok(Term::Interaction(a.to_string(), b.to_string()));
        }
        if let Some(a) = s.strip_suffix("^2") {
            let a = a.trim();
            return if a.is_empty() {
                Err(bad())
            } else {
                Ok(Term::Square(a.to_string()))
            };
        }
        if s.is_empty() || s.contains('^') {
            return Err(bad());
        }
        Ok(Term::Raw(s.to_string()))
    }

    pub fn label(&self) -> String {
        match self {
            Term::Raw(a) => a.clone(),
            Term::Square(a) => format!("{a}²"),
            Term::Interaction(a, b) => format!("{a} x {b}"),
        }
    }

    pub fn features(&self) -> Vec<&str> {
        match self {
            Term::Raw(a) | Term::Square(a) => vec![a],
            Term::Interaction(a, b) => vec![a, b],
        }
    }

    /// Order-free identity used for duplicate detection.
    fn key(&self) -> (u8, String, String) {
        match self {
            Term::Raw(a) => (0, a.clone(), String::new()),
            Term::Square(a) => (1, a.clone(), String::new()),
            Term::Interaction(a, b) if a <= b => (2, a.clone(), b.clone()),
            Term::Interaction(a, b) => (2, b.clone(), a.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModelSpec {
    pub terms: Vec<Term>,
    pub intercept: bool,
}

impl LinearModelSpec {
    pub fn new(terms: Vec<Term>, intercept: bool) -> Result<Self, ExplainError> {
        let mut seen = HashSet::new();
        for t in &terms {
            if let Term::Interaction(a, b) = t {
                if a == b {
                    return Err(ExplainError::Term(format!("{} (use {a}^2)", t.label())));
                }
            }
            if !seen.insert(t.key()) {
                return Err(ExplainError::DuplicateTerm(t.label()));
            }
        }
        if terms.is_empty() && !intercept {
            return Err(ExplainError::Term("empty model".into()));
        }
        Ok(Self { terms, intercept })
    }

    /// Comma-separated terms, e.g. `Income, Income^2, Income*% Asian`.
    pub fn parse(text: &str, intercept: bool) -> Result<Self, ExplainError> {
        let terms = text
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(Term::parse)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(terms, intercept)
    }

    /// Column labels of the design matrix.
    pub fn column_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self.terms.iter().map(Term::label).collect();
        if self.intercept {
            out.insert(0, INTERCEPT.to_string());
        }
        out
    }

    /// Distinct features referenced by the terms, in first-use order.
    pub fn features(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.terms {
            for f in t.features() {
                if !out.iter().any(|o| o == f) {
                    out.push(f.to_string());
                }
            }
        }
        out
    }

    pub(crate) fn design(&self, ds: &Dataset) -> Result<DMatrix<f64>, ExplainError> {
        let idx = |f: &str| {
            ds.feature_index(f)
                .ok_or_else(|| LearnError::MissingFeature(f.to_string()))
        };
        let cols: Vec<(usize, usize, u8)> = self
            .terms
            .iter()
            .map(|t| {
                Ok(match t {
                    Term::Raw(a) => (idx(a)?, 0, 0),
                    Term::Square(a) => (idx(a)?, idx(a)?, 1),
                    Term::Interaction(a, b) => (idx(a)?, idx(b)?, 1),
                })
            })
            .collect::<Result<_, LearnError>>()?;
        let k0 = usize::from(self.intercept);
        let mut x = DMatrix::zeros(ds.n(), k0 + cols.len());
        for i in 0..ds.n() {
            let row = ds.row(i);
            if self.intercept {
                x[(i, 0)] = 1.0;
            }
            for (c, &(a, b, prod)) in cols.iter().enumerate() {
                x[(i, k0 + c)] = if prod == 1 { row[a] * row[b] } else { row[a] };
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub spec: LinearModelSpec,
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    /// HC1 covariance of `beta`, row-major k×k.
    pub cov: Vec<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub residuals: Vec<f64>,
    pub r2: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn k(&self) -> usize {
        self.beta.len()
    }

    pub fn cov_at(&self, a: usize, b: usize) -> f64 {
        self.cov[a * self.k() + b]
    }

    pub fn index_of(&self, term: &Term) -> Option<usize> {
        let k0 = usize::from(self.spec.intercept);
        self.spec
            .terms
            .iter()
            .position(|t| t.key() == term.key())
            .map(|i| i + k0)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["term", "coef", "robust_se", "t", "p_value", "stars"])
            .expect("in-memory write");
        for j in 0..self.k() {
            w.write_record([
                self.names[j].clone(),
                self.beta[j].to_string(),
                self.se[j].to_string(),
                self.t[j].to_string(),
                self.p[j].to_string(),
                significance_stars(self.p[j]).to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "†"
    } else {
        ""
    }
}

/// Least squares through a QR factorization with HC1 robust covariance
/// (X'X)⁻¹ X' diag(e²) X (X'X)⁻¹ · n/(n−k).
pub fn ols_fit(ds: &Dataset, spec: &LinearModelSpec) -> Result<OlsFit, ExplainError> {
    let x = spec.design(ds)?;
    let (n, k) = x.shape();
    if n <= k {
        return Err(ExplainError::TooFewRows { n, k });
    }
    let names = spec.column_names();
    // scale columns so the rank test is unit-free
    let norms: Vec<f64> = (0..k).map(|j| x.column(j).norm()).collect();
    let mut xs = x.clone();
    for (j, &s) in norms.iter().enumerate() {
        if s > 0.0 {
            xs.column_mut(j).scale_mut(1.0 / s);
        }
    }
    let qr = xs.qr();
    let r = qr.r();
    let collinear: Vec<String> = (0..k)
        .filter(|&j| norms[j] == 0.0 || r[(j, j)].abs() <= 1e-10)
        .map(|j| names[j].clone())
        .collect();
    if !collinear.is_empty() {
        return Err(ExplainError::RankDeficient(collinear));
    }
    let y = DVector::from_column_slice(&ds.y);
    let qty = qr.q().transpose() * &y;
    let bs = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| ExplainError::RankDeficient(names.clone()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| ExplainError::RankDeficient(names.clone()))?;
    // (Xs'Xs)^-1 = R^-1 R^-T; unscale with D^-1 on both sides
    let scale = DMatrix::from_diagonal(&DVector::from_iterator(k, norms.iter().map(|s| 1.0 / s)));
    let bread = &scale * (&r_inv * r_inv.transpose()) * &scale;
    let beta = &scale * bs;
    let resid = &y - &x * &beta;
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let xi = x.row(i);
        meat += xi.transpose() * xi * (resid[i] * resid[i]);
    }
    let cov = &bread * meat * &bread * (n as f64 / (n - k) as f64);
    let se: Vec<f64> = (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let dist = StudentsT::new(0.0, 1.0, (n - k) as f64).expect("df > 0");
    let t: Vec<f64> = (0..k).map(|j| beta[j] / se[j]).collect();
    let p: Vec<f64> = t
        .iter()
        .map(|t| {
            if t.is_finite() {
                2.0 * (1.0 - dist.cdf(t.abs()))
            } else if t.is_nan() {
                f64::NAN
            } else {
                0.0
            }
        })
        .collect();
    let mean = ds.y.iter().sum::<f64>() / n as f64;
    let tss: f64 = ds.y.iter().map(|v| (v - mean).powi(2)).sum();
    let ssr: f64 = resid.iter().map(|e| e * e).sum();
    Ok(OlsFit {
        spec: spec.clone(),
        names,
        beta: beta.iter().copied().collect(),
        cov: (0..k * k).map(|i| cov[(i / k, i % k)]).collect(),
        se,
        t,
        p,
        residuals: resid.iter().copied().collect(),
        r2: if tss > 0.0 { 1.0 - ssr / tss } else { f64::NAN },
        n,
    })
}

fn fmt3(v: f64) -> String {
    let s = format!("{v:.3}");
    if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else {
        s
    }
}

/// Side-by-side coefficient table: `coef (robust se)stars` per model,
/// terms in first-appearance order with the constant last.
pub fn regression_table(models: &[(&str, &OlsFit)]) -> String {
    let mut rows: Vec<String> = Vec::new();
    for (_, f) in models {
        for n in &f.names {
            if n != INTERCEPT && !rows.contains(n) {
                rows.push(n.clone());
            }
        }
    }
    if models.iter().any(|(_, f)| f.spec.intercept) {
        rows.push(INTERCEPT.to_string());
    }
    let mut out = String::from("Predictors");
    for (name, _) in models {
        out.push_str(&format!("\t{name} Coef. (SE)"));
    }
    out.push('\n');
    for r in &rows {
        out.push_str(r);
        for (_, f) in models {
            out.push('\t');
            if let Some(j) = f.names.iter().position(|n| n == r) {
                out.push_str(&format!(
                    "{} ({}){}",
                    fmt3(f.beta[j]),
                    fmt3(f.se[j]),
                    significance_stars(f.p[j])
                ));
            }
        }
        out.push('\n');
    }
    out.push_str("No. of block groups");
    for (_, f) in models {
        out.push_str(&format!("\t{}", f.n));
    }
    out.push_str("\nR ²");
    for (_, f) in models {
        out.push_str(&format!("\t{}", fmt3(f.r2)));
    }
    out.push_str("\n\n*** p < 0.001, ** p < 0.01, * p < 0.05, † p < 0.1. Robust Standard Errors are in parentheses.\n");
    out
}
