use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    2.0 * dist.sf(t.abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
    /// Both samples had zero variance.
    pub degenerate: bool,
}

/// Variance floor used when both samples are constant but differ.
pub const VARIANCE_EPS: f64 = 1e-12;

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
}

/// Welch's unequal-variance two-sample t-test with a two-sided p-value.
pub fn two_sample_t_test(xs: &[f64], ys: &[f64]) -> Result<TTest, super::EvalError> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(super::EvalError::TooFewSamples { xs: xs.len(), ys: ys.len() });
    }
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (mx, mut vx) = mean_var(xs);
    let (my, mut vy) = mean_var(ys);
    let degenerate = vx == 0.0 && vy == 0.0;
    if degenerate {
        if mx == my {
            return Ok(TTest { t: 0.0, p: 1.0, df: nx + ny - 2.0, degenerate });
        }
        vx = VARIANCE_EPS;
        vy = VARIANCE_EPS;
    }
    let (sx, sy) = (vx / nx, vy / ny);
    let se = (sx + sy).sqrt();
    let t = (mx - my) / se;
    let df = (sx + sy).powi(2) / (sx * sx / (nx - 1.0) + sy * sy / (ny - 1.0));
    let p = student_t_two_sided(t, df).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(TTest { t, p, df, degenerate })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub best: f64,
}

/// Mean, sample standard deviation and minimum of per-run error rates.
pub fn aggregate_runs(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(Summary { n, mean, std, best: sorted[0] })
}
