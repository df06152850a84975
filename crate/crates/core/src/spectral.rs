//! Singular values, the counting function and the Weyl-law comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::observation::ObservationMatrix;

/// All singular values of the assembled matrix, nonincreasing.
pub fn singular_values(a: &ObservationMatrix) -> Result<Vec<f64>> {
    linalg::singular_values(&a.matrix)
}

/// `n(A, lambda) = #{n : s_n > lambda}`.
pub fn counting_function(svals: &[f64], lambda: f64) -> usize {
    svals.iter().filter(|&&s| s > lambda).count()
}

/// Inclusive 1-based index range used for the fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitWindow {
    pub first: usize,
    pub last: usize,
}

impl FitWindow {
    pub fn new(first: usize, last: usize) -> Result<Self> {
        if first == 0 || last < first {
            return Err(Error::Input(format!("invalid fit window [{first}, {last}]")));
        }
        Ok(Self { first, last })
    }

    /// `[floor(lo N), floor(hi N)]`, with the lower end at least 1.
    pub fn from_fractions(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::Input(format!("window fractions {lo}:{hi} must satisfy 0 <= lo < hi <= 1")));
        }
        let first = ((lo * n as f64).floor() as usize).max(1);
        let last = (hi * n as f64).floor() as usize;
        Self::new(first, last)
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeylEstimate {
    pub sigma_est: f64,
    pub slope_est: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len();
    if m % 2 == 1 {
        xs[m / 2]
    } else {
        0.5 * (xs[m / 2 - 1] + xs[m / 2])
    }
}

/// Median of `n s_n^d` and the least-squares slope of `log s_n` against `log n`
/// over the window.
pub fn weyl_estimate(svals: &[f64], d: usize, window: FitWindow) -> Result<WeylEstimate> {
    if d == 0 {
        return Err(Error::Input("dimension must be positive".into()));
    }
    if window.last > svals.len() {
        return Err(Error::Input(format!(
            "fit window [{}, {}] exceeds the {} singular values",
            window.first,
            window.last,
            svals.len()
        )));
    }
    let range = &svals[window.first - 1..window.last];
    if range.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::Input("fit window touches zero or non-finite singular values".into()));
    }
    let products: Vec<f64> =
        range.iter().enumerate().map(|(i, s)| (window.first + i) as f64 * s.powi(d as i32)).collect();
    let sigma_est = median(products);

    let slope_est = if window.len() < 2 {
        f64::NAN
    } else {
        let xs: Vec<f64> = (window.first..=window.last).map(|n| (n as f64).ln()).collect();
        let ys: Vec<f64> = range.iter().map(|s| s.ln()).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    };
    Ok(WeylEstimate { sigma_est, slope_est })
}

/// One point of the sampled counting function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountSample {
    pub lambda: f64,
    pub count: usize,
}

/// Fit over one window of the sensitivity sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowFit {
    pub fractions: (f64, f64),
    pub window: FitWindow,
    pub estimate: WeylEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub d: usize,
    pub svals: Vec<f64>,
    pub n_of_lambda: Vec<CountSample>,
    pub window: FitWindow,
    pub sigma_est: f64,
    pub slope_est: f64,
    pub sigma_ref: Option<f64>,
    /// `sigma_est / sigma_ref - 1`.
    pub sigma_rel_error: Option<f64>,
    pub sensitivity: Vec<WindowFit>,
}

/// Windows of the sensitivity sweep: the main one and its halved and doubled versions.
fn sweep_fractions(lo: f64, hi: f64) -> [(f64, f64); 3] {
    [(lo / 2.0, hi / 2.0), (lo, hi), ((2.0 * lo).min(1.0), (2.0 * hi).min(1.0))]
}

const COUNT_SAMPLES: usize = 200;

impl SpectralReport {
    pub fn new(
        svals: Vec<f64>,
        d: usize,
        fractions: (f64, f64),
        sigma_ref: Option<f64>,
    ) -> Result<Self> {
        if svals.windows(2).any(|w| w[0] < w[1]) || svals.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::Input("singular values must be nonnegative and nonincreasing".into()));
        }
        let n = svals.len();
        let window = FitWindow::from_fractions(n, fractions.0, fractions.1)?;
        let est = weyl_estimate(&svals, d, window)?;
        let mut sensitivity = Vec::new();
        for fr in sweep_fractions(fractions.0, fractions.1) {
            let Ok(w) = FitWindow::from_fractions(n, fr.0, fr.1) else { continue };
            if let Ok(e) = weyl_estimate(&svals, d, w) {
                sensitivity.push(WindowFit { fractions: fr, window: w, estimate: e });
            }
        }
        let n_of_lambda = sample_counting_function(&svals);
        Ok(Self {
            d,
            n_of_lambda,
            window,
            sigma_est: est.sigma_est,
            slope_est: est.slope_est,
            sigma_ref,
            sigma_rel_error: sigma_ref.map(|r| est.sigma_est / r - 1.0),
            sensitivity,
            svals,
        })
    }

    /// `n, s_n` rows.
    pub fn svals_csv(&self) -> String {
        let mut out = String::from("n,s_n\n");
        for (i, s) in self.svals.iter().enumerate() {
            out.push_str(&format!("{},{:.17e}\n", i + 1, s));
        }
        out
    }

    /// `lambda, n(lambda), lambda^d n(lambda)` rows.
    pub fn counting_csv(&self) -> String {
        let mut out = String::from("lambda,n_of_lambda,lambda_d_n\n");
        for c in &self.n_of_lambda {
            out.push_str(&format!(
                "{:.17e},{},{:.17e}\n",
                c.lambda,
                c.count,
                c.lambda.powi(self.d as i32) * c.count as f64
            ));
        }
        out
    }
}

/// Log-spaced samples from the largest singular value down to the smallest positive one.
fn sample_counting_function(svals: &[f64]) -> Vec<CountSample> {
    let Some(&top) = svals.first() else { return Vec::new() };
    let Some(&bottom) = svals.iter().rev().find(|&&s| s > 0.0) else { return Vec::new() };
    let (a, b) = (top.ln(), bottom.ln());
    (0..COUNT_SAMPLES)
        .map(|i| {
            let t = i as f64 / (COUNT_SAMPLES - 1) as f64;
            let lambda = (a + t * (b - a)).exp();
            CountSample { lambda, count: counting_function(svals, lambda) }
        })
        .collect()
}
