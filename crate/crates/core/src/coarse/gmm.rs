use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on each component variance (in normalized loss units).
pub const VARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Two-component 1-D Gaussian mixture over min-max normalized losses.
///
/// Component 0 always has the smaller mean and is the "clean" component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub iterations: usize,
    pub converged: bool,
    /// All samples were identical; every node is treated as clean.
    pub degenerate: bool,
    /// Raw loss `ℓ` maps to `(ℓ - offset) / scale` before evaluation.
    pub offset: f64,
    pub scale: f64,
    /// Log-likelihood of the normalized samples at each iteration.
    pub log_likelihood: Vec<f64>,
}

impl GmmFit {
    /// A fit on already-normalized values; components are reordered by mean.
    pub fn new(weights: [f64; 2], means: [f64; 2], variances: [f64; 2]) -> Self {
        let mut fit = Self {
            weights,
            means,
            variances: variances.map(|v| v.max(VARIANCE_FLOOR)),
            iterations: 0,
            converged: true,
            degenerate: false,
            offset: 0.0,
            scale: 1.0,
            log_likelihood: Vec::new(),
        };
        fit.order_components();
        fit
    }

    fn order_components(&mut self) {
        if self.means[1] < self.means[0] {
            self.weights.swap(0, 1);
            self.means.swap(0, 1);
            self.variances.swap(0, 1);
        }
    }

    /// Component means mapped back to raw loss units.
    pub fn raw_means(&self) -> [f64; 2] {
        self.means.map(|m| self.offset + self.scale * m)
    }

    fn log_joint(&self, x: f64) -> [f64; 2] {
        std::array::from_fn(|k| {
            let v = self.variances[k];
            let d = x - self.means[k];
            self.weights[k].ln() - 0.5 * (LN_2PI + v.ln()) - d * d / (2.0 * v)
        })
    }

    /// Posterior probability that a raw loss belongs to the smaller-mean component.
    pub fn clean_posterior(&self, loss: f64) -> f64 {
        if self.degenerate {
            return 1.0;
        }
        // Outside [mu0, mu1] the wider component can win back the tail, so
        // losses are clamped to keep the posterior non-increasing in the loss.
        let mut x = ((loss - self.offset) / self.scale).max(self.means[0]);
        if self.variances[0] > self.variances[1] {
            x = x.min(self.means[1]);
        }
        let [l0, l1] = self.log_joint(x);
        // 1 / (1 + exp(l1 - l0)), written to stay finite in both tails.
        let d = l1 - l0;
        if d > 0.0 {
            let e = (-d).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + d.exp())
        }
    }
}

/// Linearly interpolated percentile of sorted data, `q ∈ [0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn log_sum_exp(a: [f64; 2]) -> f64 {
    let m = a[0].max(a[1]);
    m + ((a[0] - m).exp() + (a[1] - m).exp()).ln()
}

/// EM on min-max normalized losses.
///
/// Initialized with means at the 10th and 90th percentiles, equal weights and
/// the pooled variance; stops once the log-likelihood changes by less than
/// `tol` or after `max_iter` E-steps.
pub fn fit_gmm_1d(losses: &[f64], max_iter: usize, tol: f64) -> Result<GmmFit> {
    if losses.len() < 2 {
        return Err(Error::invalid(format!("GMM needs at least 2 samples, got {}", losses.len())));
    }
    if losses.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GMM input losses".into()));
    }
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(GmmFit {
            weights: [0.5, 0.5],
            means: [0.0, 0.0],
            variances: [VARIANCE_FLOOR; 2],
            iterations: 0,
            converged: false,
            degenerate: true,
            offset: min,
            scale: 1.0,
            log_likelihood: Vec::new(),
        });
    }
    let scale = max - min;
    let xs: Vec<f64> = losses.iter().map(|&l| (l - min) / scale).collect();
    let n = xs.len() as f64;

    let mut sorted = xs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut means = [percentile(&sorted, 10.0), percentile(&sorted, 90.0)];
    if means[0] == means[1] {
        means = [0.0, 1.0];
    }
    let mean = xs.iter().sum::<f64>() / n;
    let pooled = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).max(VARIANCE_FLOOR);

    let mut fit = GmmFit {
        weights: [0.5, 0.5],
        means,
        variances: [pooled, pooled],
        iterations: 0,
        converged: false,
        degenerate: false,
        offset: min,
        scale,
        log_likelihood: Vec::new(),
    };
    let mut resp = vec![0.0; xs.len()];
    for it in 0..max_iter {
        let mut ll = 0.0;
        for (r, &x) in resp.iter_mut().zip(&xs) {
            let lj = fit.log_joint(x);
            let lse = log_sum_exp(lj);
            ll += lse;
            *r = (lj[0] - lse).exp();
        }
        fit.log_likelihood.push(ll);
        fit.iterations = it + 1;
        if it > 0 && (ll - fit.log_likelihood[it - 1]).abs() < tol {
            fit.converged = true;
            break;
        }
        let n0: f64 = resp.iter().sum();
        let counts = [n0, n - n0];
        let sums = [
            resp.iter().zip(&xs).map(|(r, x)| r * x).sum::<f64>(),
            resp.iter().zip(&xs).map(|(r, x)| (1.0 - r) * x).sum::<f64>(),
        ];
        for k in 0..2 {
            if counts[k] <= f64::MIN_POSITIVE {
                continue;
            }
            let mu = sums[k] / counts[k];
            let var = resp
                .iter()
                .zip(&xs)
                .map(|(r, x)| if k == 0 { *r } else { 1.0 - r } * (x - mu) * (x - mu))
                .sum::<f64>()
                / counts[k];
            fit.means[k] = mu;
            fit.variances[k] = var.max(VARIANCE_FLOOR);
        }
        let w0 = (counts[0] / n).clamp(1e-12, 1.0 - 1e-12);
        fit.weights = [w0, 1.0 - w0];
    }
    fit.order_components();
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn percentile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&s, 50.0), 2.0);
        assert!((percentile(&s, 10.0) - 0.4).abs() < 1e-15);
        assert_eq!(percentile(&s, 100.0), 4.0);
    }

    #[test]
    fn recovers_two_well_separated_clusters() {
        let mut rng = SeededRng::new(2024);
        let xs: Vec<f64> = (0..2000)
            .map(|i| if i % 2 == 0 { 0.1 } else { 0.9 } + 0.05 * rng.gaussian())
            .collect();
        let fit = fit_gmm_1d(&xs, 100, 1e-6).unwrap();
        let [m0, m1] = fit.raw_means();
        assert!((m0 - 0.1).abs() < 0.02 && (m1 - 0.9).abs() < 0.02, "{m0} {m1}");
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
        }
        let correct = xs
            .iter()
            .enumerate()
            .filter(|&(i, &x)| (fit.clean_posterior(x) > 0.5) == (i % 2 == 0))
            .count();
        assert!(correct as f64 / 2000.0 > 0.99);
    }

    #[test]
    fn two_points() {
        let fit = fit_gmm_1d(&[0.0, 1.0], 100, 1e-6).unwrap();
        assert!(fit.means[0].abs() < 1e-3 && (fit.means[1] - 1.0).abs() < 1e-3, "{:?}", fit.means);
        assert!((fit.weights[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let fit = fit_gmm_1d(&[0.7; 5], 100, 1e-6).unwrap();
        assert!(fit.degenerate && !fit.converged);
        assert_eq!(fit.clean_posterior(123.0), 1.0);
        assert!(fit_gmm_1d(&[1.0], 100, 1e-6).is_err());
        assert!(fit_gmm_1d(&[1.0, f64::NAN], 100, 1e-6).is_err());
    }

    #[test]
    fn posterior_hand_cases() {
        let sym = GmmFit::new([0.5, 0.5], [0.3, 0.3], [0.01, 0.01]);
        for l in [-5.0, 0.3, 0.8, 40.0] {
            assert!((sym.clean_posterior(l) - 0.5).abs() < 1e-15);
        }
        let sep = GmmFit::new([0.5, 0.5], [0.1, 0.9], [0.0025, 0.0025]);
        assert!(sep.clean_posterior(0.1) > 0.999);
        assert!(sep.clean_posterior(1e3) < 1e-12);
        // Construction reorders components by mean.
        let swapped = GmmFit::new([0.3, 0.7], [0.9, 0.1], [0.01, 0.02]);
        assert_eq!(swapped.means, [0.1, 0.9]);
        assert_eq!(swapped.weights, [0.7, 0.3]);
    }
}
