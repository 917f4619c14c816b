//! Running moments, confidence intervals and Kolmogorov–Smirnov tests.

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Welford accumulator with a pairwise merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * (self.count as f64) * (other.count as f64) / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean, assuming independent observations.
    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            f64::NAN
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn ci95(&self) -> (f64, f64) {
        let h = Z95 * self.std_error();
        (self.mean - h, self.mean + h)
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}

/// Result of a Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub effective_n: f64,
}

impl KsResult {
    pub fn passes(&self, significance: f64) -> bool {
        self.p_value >= significance
    }
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    // the series converges slowly near zero, where the survival is 1 anyway
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, ne: f64) -> f64 {
    let sq = ne.sqrt();
    kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d)
}

/// One-sample test of `samples` against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsResult {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
        effective_n: n,
    }
}

/// Two-sample test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|p, q| p.total_cmp(q));
    xb.sort_by(|p, q| p.total_cmp(q));
    let (na, nb) = (xa.len(), xb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = xa[i].min(xb[j]);
        while i < na && xa[i] <= x {
            i += 1;
        }
        while j < nb && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na as f64 * nb as f64) / (na + nb) as f64;
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, ne),
        effective_n: ne,
    }
}

/// Total-variation distance between two histograms over the same bins.
pub fn total_variation(p: &[u64], q: &[u64]) -> f64 {
    let np: u64 = p.iter().sum();
    let nq: u64 = q.iter().sum();
    0.5 * p
        .iter()
        .zip(q)
        .map(|(&a, &b)| (a as f64 / np as f64 - b as f64 / nq as f64).abs())
        .sum::<f64>()
}

/// Bin index of `u` in `bins` equal-probability bins, where `u` is a CDF value.
pub fn probability_bin(u: f64, bins: usize) -> usize {
    ((u * bins as f64) as usize).min(bins - 1)
}
