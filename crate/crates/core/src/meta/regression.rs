use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::reml::{maximize_bounded, tau2_upper_bound};
use super::{check_level, z_quantile, Interval};
use crate::dataset::{CharacteristicKind, Dataset, Value};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRegression {
    pub n_studies: usize,
    pub moderators: Vec<String>,
    pub level: f64,
    /// Residual between-study variance.
    pub tau2: f64,
    /// Intercept first, then one column per numeric moderator and one per
    /// non-reference categorical level.
    pub coefficients: Vec<Coefficient>,
}

struct Design {
    names: Vec<String>,
    x: DMatrix<f64>,
}

fn build_design(ds: &Dataset, moderators: &[&str]) -> Result<Design> {
    let n = ds.len();
    let mut names = vec!["intercept".to_string()];
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut missing = BTreeSet::new();

    for &name in moderators {
        let j = ds
            .schema
            .index_of(name)
            .ok_or_else(|| Error::invalid(format!("unknown moderator `{name}`")))?;
        for s in &ds.studies {
            if s.values[j].is_none() {
                missing.insert(s.id.clone());
            }
        }
        match ds.schema.features[j].kind {
            CharacteristicKind::Numeric => {
                let mut col = Vec::with_capacity(n);
                for s in &ds.studies {
                    match &s.values[j] {
                        Some(Value::Numeric(x)) => col.push(*x),
                        Some(other) => {
                            return Err(Error::invalid(format!(
                                "moderator `{name}` is numeric but study \"{}\" has \"{other}\"",
                                s.id
                            )))
                        }
                        None => col.push(f64::NAN),
                    }
                }
                names.push(name.to_string());
                cols.push(col);
            }
            CharacteristicKind::Categorical => {
                let levels: BTreeSet<String> = ds
                    .studies
                    .iter()
                    .filter_map(|s| s.values[j].as_ref().map(|v| v.to_string()))
                    .collect();
                for level in levels.iter().skip(1) {
                    let col = ds
                        .studies
                        .iter()
                        .map(|s| match &s.values[j] {
                            Some(v) if v.to_string() == *level => 1.0,
                            Some(_) => 0.0,
                            None => f64::NAN,
                        })
                        .collect();
                    names.push(format!("{name}={level}"));
                    cols.push(col);
                }
            }
            CharacteristicKind::Text => {
                return Err(Error::invalid(format!(
                    "moderator `{name}` is free text and cannot enter a design matrix"
                )))
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingModerator {
            studies: missing.into_iter().collect(),
        });
    }

    // Modified Gram-Schmidt; a column whose residual vanishes is collinear.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut collinear = Vec::new();
    for (col, name) in cols.iter().zip(&names) {
        let norm0 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut r = col.clone();
        for q in &basis {
            let dot: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= 1e-10 * norm0 {
            collinear.push(name.clone());
        } else {
            basis.push(r.into_iter().map(|x| x / norm).collect());
        }
    }
    if !collinear.is_empty() {
        return Err(Error::RankDeficient { columns: collinear });
    }

    let p = cols.len();
    if n <= p {
        return Err(Error::invalid(format!(
            "meta-regression needs more studies than coefficients (n = {n}, p = {p})"
        )));
    }
    let x = DMatrix::from_fn(n, p, |i, j| cols[j][i]);
    Ok(Design { names, x })
}

struct WlsFit {
    beta: DVector<f64>,
    xtwx_inv: DMatrix<f64>,
    resid: DVector<f64>,
    w: DVector<f64>,
    log_det_xtwx: f64,
}

fn wls(x: &DMatrix<f64>, y: &DVector<f64>, v: &DVector<f64>, tau2: f64) -> WlsFit {
    let w = v.map(|v| 1.0 / (v + tau2));
    let mut xw = x.clone();
    for (mut row, wi) in xw.row_iter_mut().zip(w.iter()) {
        row *= *wi;
    }
    let xtwx = x.transpose() * &xw;
    let chol = xtwx
        .clone()
        .cholesky()
        .expect("full-rank design gives a positive definite X'WX");
    let log_det_xtwx = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let beta = chol.solve(&(xw.transpose() * y));
    let xtwx_inv = chol.inverse();
    let resid = y - x * &beta;
    WlsFit {
        beta,
        xtwx_inv,
        resid,
        w,
        log_det_xtwx,
    }
}

fn restricted_loglik(x: &DMatrix<f64>, y: &DVector<f64>, v: &DVector<f64>, tau2: f64) -> f64 {
    let f = wls(x, y, v, tau2);
    let log_det: f64 = v.iter().map(|v| (v + tau2).ln()).sum();
    let rss: f64 = f.resid.iter().zip(f.w.iter()).map(|(r, w)| w * r * r).sum();
    -0.5 * log_det - 0.5 * f.log_det_xtwx - 0.5 * rss
}

fn restricted_score(x: &DMatrix<f64>, y: &DVector<f64>, v: &DVector<f64>, tau2: f64) -> f64 {
    let f = wls(x, y, v, tau2);
    let sw: f64 = f.w.iter().sum();
    let mut xw2 = x.clone();
    for (mut row, wi) in xw2.row_iter_mut().zip(f.w.iter()) {
        row *= wi * wi;
    }
    let xtw2x = x.transpose() * xw2;
    let tr = (&f.xtwx_inv * xtw2x).trace();
    let r2: f64 = f
        .resid
        .iter()
        .zip(f.w.iter())
        .map(|(r, w)| w * w * r * r)
        .sum();
    0.5 * (-(sw - tr) + r2)
}

/// Mixed-effects meta-regression: residual τ² by REML, coefficients by
/// weighted least squares at that τ².
///
/// Categorical moderators are one-hot encoded with the first level in
/// sorted order as reference.
pub fn meta_regression(ds: &Dataset, moderators: &[&str], level: f64) -> Result<MetaRegression> {
    check_level(level)?;
    let effects = ds.effects();
    let variances = ds.variances();
    super::reml::check_inputs(&effects, &variances)?;
    let design = build_design(ds, moderators)?;
    let x = &design.x;
    let y = DVector::from_vec(effects.clone());
    let v = DVector::from_vec(variances.clone());

    let hi = tau2_upper_bound(&effects, &variances);
    let exact_fit = wls(x, &y, &v, 0.0).resid.iter().all(|r| *r == 0.0);
    let tau2 = if exact_fit {
        0.0
    } else {
        maximize_bounded(
            |t| restricted_loglik(x, &y, &v, t),
            |t| restricted_score(x, &y, &v, t),
            0.0,
            hi,
        )
        .max(0.0)
    };

    let fit = wls(x, &y, &v, tau2);
    let z = z_quantile(0.5 * (1.0 + level));
    let coefficients = design
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let estimate = fit.beta[j];
            let se = fit.xtwx_inv[(j, j)].sqrt();
            Coefficient {
                name: name.clone(),
                estimate,
                se,
                ci: Interval::around(estimate, z * se),
            }
        })
        .collect();
    Ok(MetaRegression {
        n_studies: ds.len(),
        moderators: moderators.iter().map(|s| s.to_string()).collect(),
        level,
        tau2,
        coefficients,
    })
}
