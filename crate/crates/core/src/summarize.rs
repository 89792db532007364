//! Posterior summaries and the comparison quantities reported for fitted
//! chains: per-site moments and quantiles, the multi-model-mean baseline,
//! quantile maps against a reference field, region-mean credible
//! intervals, inter-model correlation, and coverage scoring across
//! replicate experiments.

use nalgebra::{DMatrix, DVector};

use crate::model::EnsembleDataset;
use crate::sampler::ChainOutput;
use crate::{Error, Result};

/// Per-site posterior statistics for one latent field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSummary {
    pub mean: DVector<f64>,
    pub sd: DVector<f64>,
    pub q05: DVector<f64>,
    pub q50: DVector<f64>,
    pub q95: DVector<f64>,
    pub q99: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSummary {
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

/// Posterior summary of a chain: expected-climate fields, the dependence
/// matrix, its derived correlation, the regression coefficient, and the
/// spatial-mean draws used for region intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub y_h: FieldSummary,
    pub y_f: FieldSummary,
    pub v_mean: DMatrix<f64>,
    pub correlation: DMatrix<f64>,
    pub beta: ScalarSummary,
    pub region_mean_draws_y_h: Vec<f64>,
    pub region_mean_draws_y_f: Vec<f64>,
}

/// Quantile by linear interpolation of order statistics (the documented
/// convention): h = (n-1) p, value = x_(floor h) + frac (x_(floor h + 1) -
/// x_(floor h)).
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0 && (0.0..=1.0).contains(&p));
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let i = h.floor() as usize;
    if i + 1 >= n {
        return sorted[n - 1];
    }
    sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
}

fn scalar_summary(mut draws: Vec<f64>) -> ScalarSummary {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ScalarSummary {
        mean,
        sd,
        q05: quantile_linear(&draws, 0.05),
        q50: quantile_linear(&draws, 0.50),
        q95: quantile_linear(&draws, 0.95),
    }
}

fn field_summary(chain: &ChainOutput, field: impl Fn(usize, usize) -> f64) -> FieldSummary {
    let n = chain.n_sites;
    let draws = chain.draws.len();
    let mut mean = DVector::zeros(n);
    let mut sd = DVector::zeros(n);
    let mut q05 = DVector::zeros(n);
    let mut q50 = DVector::zeros(n);
    let mut q95 = DVector::zeros(n);
    let mut q99 = DVector::zeros(n);
    let mut buf = vec![0.0; draws];
    for s in 0..n {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = field(k, s);
        }
        let m = buf.iter().sum::<f64>() / draws as f64;
        let var = buf.iter().map(|x| (x - m).powi(2)).sum::<f64>() / draws as f64;
        buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
        mean[s] = m;
        sd[s] = var.sqrt();
        q05[s] = quantile_linear(&buf, 0.05);
        q50[s] = quantile_linear(&buf, 0.50);
        q95[s] = quantile_linear(&buf, 0.95);
        q99[s] = quantile_linear(&buf, 0.99);
    }
    FieldSummary { mean, sd, q05, q50, q95, q99 }
}

/// Empirical posterior summary. Needs at least two stored draws.
pub fn summarize(chain: &ChainOutput) -> Result<PosteriorSummary> {
    let draws = chain.draws.len();
    if draws < 2 {
        return Err(Error::TooFewDraws { need: 2, have: draws });
    }
    let m = chain.n_models;
    let y_h = field_summary(chain, |k, s| chain.draws[k].y_h[s]);
    let y_f = field_summary(chain, |k, s| chain.draws[k].y_f[s]);

    let mut v_mean = DMatrix::zeros(m, m);
    for d in &chain.draws {
        v_mean += &d.v;
    }
    v_mean /= draws as f64;
    let correlation = correlation_matrix(&v_mean);

    let beta = scalar_summary(chain.draws.iter().map(|d| d.beta).collect());
    let region_mean_draws_y_h: Vec<f64> = chain.draws.iter().map(|d| d.y_h.mean()).collect();
    let region_mean_draws_y_f: Vec<f64> = chain.draws.iter().map(|d| d.y_f.mean()).collect();

    Ok(PosteriorSummary {
        y_h,
        y_f,
        v_mean,
        correlation,
        beta,
        region_mean_draws_y_h,
        region_mean_draws_y_f,
    })
}

/// Unweighted average over all runs of all models, per site and period.
/// Runs carry the weight, not models.
pub fn multi_model_mean(data: &EnsembleDataset) -> (DVector<f64>, DVector<f64>) {
    let n = data.n_sites();
    let mut hist = DVector::zeros(n);
    let mut fut = DVector::zeros(n);
    let mut count_h = 0usize;
    let mut count_f = 0usize;
    for m in 0..data.n_models() {
        for r in data.runs_h(m) {
            hist += r;
            count_h += 1;
        }
        for r in data.runs_f(m) {
            fut += r;
            count_f += 1;
        }
    }
    (hist / count_h as f64, fut / count_f as f64)
}

/// Per-site fraction of stored y_F draws at or below the reference value,
/// with the mid-rank convention for ties.
pub fn quantile_of_value(chain: &ChainOutput, reference: &DVector<f64>) -> Result<DVector<f64>> {
    if reference.len() != chain.n_sites {
        return Err(Error::dims("reference field length must match the grid"));
    }
    if chain.draws.is_empty() {
        return Err(Error::TooFewDraws { need: 1, have: 0 });
    }
    let total = chain.draws.len() as f64;
    let mut out = DVector::zeros(chain.n_sites);
    for s in 0..chain.n_sites {
        let mut below = 0usize;
        let mut equal = 0usize;
        for d in &chain.draws {
            let v = d.y_f[s];
            if v < reference[s] {
                below += 1;
            } else if v == reference[s] {
                equal += 1;
            }
        }
        out[s] = (below as f64 + 0.5 * equal as f64) / total;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionCi {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Credible interval for the spatial mean of y_F: the spatial mean is
/// computed per stored draw, then quantiles of that scalar series.
pub fn region_mean_ci(chain: &ChainOutput, level: f64) -> Result<RegionCi> {
    if chain.draws.len() < 2 {
        return Err(Error::TooFewDraws { need: 2, have: chain.draws.len() });
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::domain(format!("level must be in (0,1), got {level}")));
    }
    let mut draws: Vec<f64> = chain.draws.iter().map(|d| d.y_f.mean()).collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail = 0.5 * (1.0 - level);
    Ok(RegionCi {
        mean,
        lower: quantile_linear(&draws, tail),
        upper: quantile_linear(&draws, 1.0 - tail),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VCorrelation {
    /// Correlation of the posterior-mean V (the reported default).
    pub from_mean_v: DMatrix<f64>,
    /// Mean of per-draw correlation matrices (exposed for comparison).
    pub mean_of_correlations: DMatrix<f64>,
    /// Model pairs (i < j) whose default correlation exceeds the threshold.
    pub high_pairs: Vec<(String, String, f64)>,
}

fn correlation_matrix(v: &DMatrix<f64>) -> DMatrix<f64> {
    let m = v.nrows();
    DMatrix::from_fn(m, m, |i, j| v[(i, j)] / (v[(i, i)] * v[(j, j)]).sqrt())
}

/// Normalize the posterior mean of V to a correlation matrix and list the
/// pairs above `threshold`.
pub fn correlation_from_v(chain: &ChainOutput, threshold: f64) -> Result<VCorrelation> {
    if chain.draws.is_empty() {
        return Err(Error::TooFewDraws { need: 1, have: 0 });
    }
    let m = chain.n_models;
    let mut v_mean = DMatrix::zeros(m, m);
    let mut corr_mean = DMatrix::zeros(m, m);
    for d in &chain.draws {
        v_mean += &d.v;
        corr_mean += correlation_matrix(&d.v);
    }
    v_mean /= chain.draws.len() as f64;
    corr_mean /= chain.draws.len() as f64;
    let from_mean_v = correlation_matrix(&v_mean);

    let mut high_pairs = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            if from_mean_v[(i, j)] > threshold {
                high_pairs.push((
                    chain.model_names[i].clone(),
                    chain.model_names[j].clone(),
                    from_mean_v[(i, j)],
                ));
            }
        }
    }
    high_pairs.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
    Ok(VCorrelation { from_mean_v, mean_of_correlations: corr_mean, high_pairs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageScore {
    /// Per-site count of replicates whose truth fell inside the interval.
    pub per_site: Vec<usize>,
    pub replicates: usize,
    /// Fraction over all (site, replicate) pairs.
    pub aggregate: f64,
}

/// Count, per site, how many replicate experiments put the true y_F field
/// inside the central credible interval of the given level.
pub fn coverage_score(
    replicates: &[(&ChainOutput, &DVector<f64>)],
    level: f64,
) -> Result<CoverageScore> {
    if replicates.len() < 2 {
        return Err(Error::TooFewDraws { need: 2, have: replicates.len() });
    }
    let n = replicates[0].0.n_sites;
    let tail = 0.5 * (1.0 - level);
    let mut per_site = vec![0usize; n];
    let mut buf: Vec<f64> = Vec::new();
    for (chain, truth) in replicates {
        if chain.n_sites != n || truth.len() != n {
            return Err(Error::dims("replicates must share the grid"));
        }
        for s in 0..n {
            buf.clear();
            buf.extend(chain.draws.iter().map(|d| d.y_f[s]));
            buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let lo = quantile_linear(&buf, tail);
            let hi = quantile_linear(&buf, 1.0 - tail);
            if truth[s] >= lo && truth[s] <= hi {
                per_site[s] += 1;
            }
        }
    }
    let total: usize = per_site.iter().sum();
    Ok(CoverageScore {
        per_site,
        replicates: replicates.len(),
        aggregate: total as f64 / (replicates.len() * n) as f64,
    })
}
