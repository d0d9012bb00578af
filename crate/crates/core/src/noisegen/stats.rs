//! Moments of the generated noise, exact and sampled over seeds.

use super::ViewNoisePlan;

/// Statistics over the covered, non-safeguarded pixels (`alpha >= 1`) of a
/// set of views, and over their right and lower neighbours within the same
/// set.
#[derive(Clone, Debug)]
pub struct NoiseStatistics {
    pub pixels: usize,
    pub pairs: usize,
    pub seeds: u64,
    /// Range of the exact per-pixel variances.
    pub exact_variance: (f64, f64),
    pub exact_max_abs_rho: f64,
    /// Largest per-pixel sample mean magnitude.
    pub max_abs_mean: f64,
    /// Range of per-pixel sample variances.
    pub sample_variance: (f64, f64),
    /// Largest deviation of a sample variance from the exact one.
    pub max_variance_error: f64,
    pub max_abs_rho: f64,
    /// Sample moments pooled over all pixels (pairs for `rho`).
    pub pooled_mean: f64,
    pub pooled_variance: f64,
    pub pooled_rho: f64,
}

fn eligible(plan: &ViewNoisePlan, p: usize) -> bool {
    plan.alpha(p).is_some_and(|a| a >= 1.0)
}

/// Evaluates the plans for seeds `0..seeds`, accumulating streaming moments.
pub fn noise_statistics(plans: &[ViewNoisePlan], seeds: u64) -> NoiseStatistics {
    let mut pixels = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (v, plan) in plans.iter().enumerate() {
        for p in 0..(plan.width * plan.height) as usize {
            if eligible(plan, p) {
                index.insert((v, p), pixels.len());
                pixels.push((v, p));
            }
        }
    }
    let mut pairs = Vec::new();
    for (k, &(v, p)) in pixels.iter().enumerate() {
        let w = plans[v].width as usize;
        let (x, y) = (p % w, p / w);
        let right = (x + 1 < w).then_some(p + 1);
        let down = (y + 1 < plans[v].height as usize).then_some(p + w);
        for q in [right, down].into_iter().flatten() {
            if let Some(&m) = index.get(&(v, q)) {
                pairs.push((k, m));
            }
        }
    }

    let exact_var: Vec<f64> = pixels.iter().map(|&(v, p)| plans[v].variance(p)).collect();
    let exact_variance = exact_var
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let exact_max_abs_rho = pairs
        .iter()
        .map(|&(a, b)| {
            let (va, pa) = pixels[a];
            let (vb, pb) = pixels[b];
            (plans[va].covariance(pa, &plans[vb], pb) / (exact_var[a] * exact_var[b]).sqrt()).abs()
        })
        .fold(0.0, f64::max);

    let mut s1 = vec![0.0; pixels.len()];
    let mut s2 = vec![0.0; pixels.len()];
    let mut sxy = vec![0.0; pairs.len()];
    let mut values = vec![0.0; pixels.len()];
    for seed in 0..seeds {
        for (k, &(v, p)) in pixels.iter().enumerate() {
            let x = plans[v].pixel_value(seed, p);
            values[k] = x;
            s1[k] += x;
            s2[k] += x * x;
        }
        for (k, &(a, b)) in pairs.iter().enumerate() {
            sxy[k] += values[a] * values[b];
        }
    }
    let n = seeds as f64;
    let mean: Vec<f64> = s1.iter().map(|s| s / n).collect();
    let var: Vec<f64> = s2
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / n - m * m) * n / (n - 1.0))
        .collect();
    let rho: Vec<f64> = pairs
        .iter()
        .zip(&sxy)
        .map(|(&(a, b), s)| (s / n - mean[a] * mean[b]) * n / (n - 1.0) / (var[a] * var[b]).sqrt())
        .collect();
    let count = pixels.len().max(1) as f64;
    NoiseStatistics {
        pixels: pixels.len(),
        pairs: pairs.len(),
        seeds,
        exact_variance,
        exact_max_abs_rho,
        max_abs_mean: mean.iter().map(|m| m.abs()).fold(0.0, f64::max),
        sample_variance: var
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            }),
        max_variance_error: var
            .iter()
            .zip(&exact_var)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
        max_abs_rho: rho.iter().map(|r| r.abs()).fold(0.0, f64::max),
        pooled_mean: mean.iter().sum::<f64>() / count,
        pooled_variance: var.iter().sum::<f64>() / count,
        pooled_rho: rho.iter().sum::<f64>() / rho.len().max(1) as f64,
    }
}

impl NoiseStatistics {
    /// Exact moments within the given bounds, and sample moments within them
    /// after pooling. Per-pixel sample moments must agree with the exact
    /// ones to `z` standard errors.
    pub fn passes(&self, variance_tol: f64, mean_tol: f64, rho_tol: f64, z: f64) -> bool {
        let n = self.seeds as f64;
        let se_mean = 1.0 / n.sqrt();
        let se_var = (2.0 / (n - 1.0)).sqrt() * self.exact_variance.1;
        self.pixels > 0
            && (self.exact_variance.0 - 1.0).abs() <= variance_tol
            && (self.exact_variance.1 - 1.0).abs() <= variance_tol
            && self.exact_max_abs_rho < rho_tol
            && (self.pooled_variance - 1.0).abs() <= variance_tol
            && self.pooled_mean.abs() < mean_tol
            && self.pooled_rho.abs() < rho_tol
            && self.max_abs_mean <= z * se_mean
            && self.max_variance_error <= z * se_var
            && self.max_abs_rho <= self.exact_max_abs_rho + z * se_mean
    }
}
