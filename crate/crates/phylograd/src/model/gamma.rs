//! Discretized gamma rate-variation categories.
//!
//! Categories have equal weight 1/R; the rate of category r is the mean of
//! the gamma density over the r-th equal-probability quantile bin, rescaled
//! so the weighted mean rate is exactly one.

use super::{ModelError, RateCategories};

/// Builds `count` equal-weight rate categories from a mean-one gamma
/// distribution with shape `alpha`.
pub fn discrete_gamma(alpha: f64, count: usize) -> Result<RateCategories, ModelError> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(ModelError::ParameterDomain(format!(
            "gamma shape must be positive and finite, got {alpha}"
        )));
    }
    if count < 1 {
        return Err(ModelError::ParameterDomain(
            "rate category count must be at least 1".to_string(),
        ));
    }
    let r = count;
    let mut rates = vec![1.0; r];
    if r > 1 {
        // Shape alpha, rate alpha => mean one. Bin means come from the
        // regularized incomplete gamma with shape alpha + 1.
        let mut cum_at_bound = vec![0.0; r + 1];
        cum_at_bound[r] = 1.0;
        for i in 1..r {
            let q = gamma_quantile(alpha, alpha, i as f64 / r as f64);
            cum_at_bound[i] = reg_lower_gamma(alpha + 1.0, alpha * q);
        }
        for (i, rate) in rates.iter_mut().enumerate() {
            *rate = r as f64 * (cum_at_bound[i + 1] - cum_at_bound[i]);
        }
        // Exact mean-one regardless of quadrature residue.
        let mean = rates.iter().sum::<f64>() / r as f64;
        for rate in &mut rates {
            *rate /= mean;
        }
    }
    RateCategories::new(rates, vec![1.0 / r as f64; r])
}

/// Quantile of the gamma(shape, rate) distribution via bracketed bisection
/// with Newton refinement.
pub fn gamma_quantile(shape: f64, rate: f64, p: f64) -> f64 {
    assert!((0.0..1.0).contains(&p), "quantile probability out of range");
    if p == 0.0 {
        return 0.0;
    }
    let cdf = |x: f64| reg_lower_gamma(shape, rate * x);
    let mut hi = (shape / rate).max(1e-8);
    while cdf(hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Regularized lower incomplete gamma P(a, x).
pub fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_cont_fraction(a, x)
    }
}

// Series representation, converges quickly for x < a + 1.
fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut term = sum;
    for _ in 0..100_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

// Continued-fraction representation of Q(a, x) for x >= a + 1 (modified
// Lentz algorithm).
fn gamma_cont_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..100_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Natural log of the gamma function (Lanczos approximation, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_category_is_unit_rate() {
        let cats = discrete_gamma(0.3, 1).unwrap();
        assert_eq!(cats.rates(), &[1.0]);
        assert_eq!(cats.weights(), &[1.0]);
    }

    #[test]
    fn rejects_nonpositive_alpha() {
        assert!(discrete_gamma(0.0, 4).is_err());
        assert!(discrete_gamma(-1.0, 4).is_err());
    }

    #[test]
    fn alpha_half_four_categories_match_quadrature_oracle() {
        // Frozen values from the quadrature oracle below (Simpson CDF +
        // bisection quantiles + Simpson bin means), computed independently
        // of the incomplete-gamma path.
        let expected = oracle_bin_means(0.5, 4);
        let cats = discrete_gamma(0.5, 4).unwrap();
        for (got, want) in cats.rates().iter().zip(&expected) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-7);
        }
        let mean: f64 =
            cats.rates().iter().zip(cats.weights()).map(|(r, w)| r * w).sum();
        assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-12);
        // Frozen oracle output for the canonical alpha = 0.5, R = 4 case.
        let frozen = [0.033388, 0.251916, 0.820268, 2.894428];
        for (got, want) in cats.rates().iter().zip(&frozen) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-5);
        }
    }

    #[test]
    fn rates_increase_and_mean_one_across_alphas() {
        for &alpha in &[0.1, 0.5, 1.0, 2.0, 10.0] {
            let cats = discrete_gamma(alpha, 4).unwrap();
            for w in cats.rates().windows(2) {
                assert!(w[0] < w[1], "rates not strictly increasing for alpha {alpha}");
            }
            let mean: f64 =
                cats.rates().iter().zip(cats.weights()).map(|(r, w)| r * w).sum();
            assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn huge_alpha_concentrates_at_one() {
        let cats = discrete_gamma(1e6, 4).unwrap();
        for &r in cats.rates() {
            assert!((r - 1.0).abs() < 1e-2, "rate {r} too far from 1");
        }
    }

    /// Independent oracle: gamma moments by Simpson quadrature after the
    /// substitution u = x^alpha, which removes the x -> 0 singularity for
    /// alpha < 1; quantiles by bisection over the quadrature CDF.
    fn oracle_bin_means(alpha: f64, r: usize) -> Vec<f64> {
        let beta = alpha; // mean-one parameterization
        let norm = (alpha * beta.ln() - ln_gamma(alpha) - alpha.ln()).exp();
        let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64| {
            let n = 20_000;
            let h = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for i in 1..n {
                let x = a + i as f64 * h;
                s += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        // In u-space: CDF(x) = norm * int_0^{x^alpha} exp(-beta u^{1/alpha}) du
        // and int x pdf dx = norm * int u^{1/alpha} exp(-beta u^{1/alpha}) du.
        let cdf_kernel = move |u: f64| (-beta * u.powf(1.0 / alpha)).exp();
        let mean_kernel = move |u: f64| {
            let x = u.powf(1.0 / alpha);
            x * (-beta * x).exp()
        };
        let cdf = |x: f64| norm * simpson(&cdf_kernel, 0.0, x.powf(alpha));
        let quantile = |p: f64| {
            let mut hi = 1.0;
            while cdf(hi) < p {
                hi *= 2.0;
            }
            let mut lo = 0.0;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if cdf(mid) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let mut bounds = vec![0.0];
        for i in 1..r {
            bounds.push(quantile(i as f64 / r as f64));
        }
        bounds.push(quantile(1.0 - 1e-12) * 4.0); // effectively infinity
        let mut means: Vec<f64> = bounds
            .windows(2)
            .map(|w| norm * simpson(&mean_kernel, w[0].powf(alpha), w[1].powf(alpha)) * r as f64)
            .collect();
        let mean = means.iter().sum::<f64>() / r as f64;
        for m in &mut means {
            *m /= mean;
        }
        means
    }
}
