//! Seeded Monte Carlo harness for type I error and power of the constancy tests.
//!
//! Two data-generating models are available, both with `t ~ U(0.5, 1.5)` and a
//! clamped standard normal covariate `x = sign(z) min(c, |z|)`:
//!
//! * `M1`: `y = γ₁ + b(t) x + (e − F⁻¹(τ))`,
//! * `M2`: `y = γ₂ + b(t) x + (|γ₃ t + γ₄ x| + 0.05)(e − F⁻¹(0.5))`.
//!
//! Replicate `r` draws from ChaCha8 stream `r` of the configured seed, so serial
//! and parallel runs give identical results.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::basis::BasisKind;
use crate::error::{Result, VcqrError};
use crate::hyptest::{estimate_scale, lr_test, rao_score_test, rao_score_test_weighted, substream, Calibration};
use crate::knotsel::{default_potential_knot_count, select_uniform_count, uniform_design};
use crate::stats::normal_quantile;
use crate::vcm::Dataset;

/// Added to `|γ₃ t + γ₄ x|` so the M2 scale stays positive.
pub const SCALE_OFFSET: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorLaw {
    StdNormal,
    /// `χ²₁ / √2`.
    #[serde(rename = "scaled_chisq1", alias = "scaled_chi_sq1")]
    ScaledChiSq1,
    /// `t₃ / √3`.
    ScaledT3,
    /// Point mass at 0, for plumbing checks.
    Degenerate,
}

impl ErrorLaw {
    pub fn label(self) -> &'static str {
        match self {
            ErrorLaw::StdNormal => "std_normal",
            ErrorLaw::ScaledChiSq1 => "scaled_chisq1",
            ErrorLaw::ScaledT3 => "scaled_t3",
            ErrorLaw::Degenerate => "degenerate",
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            ErrorLaw::StdNormal => StandardNormal.sample(rng),
            ErrorLaw::ScaledChiSq1 => {
                let z: f64 = StandardNormal.sample(rng);
                z * z / SQRT_2
            }
            ErrorLaw::ScaledT3 => {
                let t: f64 = StudentT::new(3.0).expect("valid df").sample(rng);
                t / 3f64.sqrt()
            }
            ErrorLaw::Degenerate => 0.0,
        }
    }

    pub fn quantile(self, tau: f64) -> f64 {
        match self {
            ErrorLaw::StdNormal => normal_quantile(tau),
            ErrorLaw::ScaledChiSq1 => {
                let z = normal_quantile((1.0 + tau) / 2.0);
                z * z / SQRT_2
            }
            ErrorLaw::ScaledT3 => StudentsT::new(0.0, 1.0, 3.0).expect("valid df").inverse_cdf(tau) / 3f64.sqrt(),
            ErrorLaw::Degenerate => 0.0,
        }
    }

    /// Density at the τ-quantile (infinite for the point mass).
    pub fn density_at_quantile(self, tau: f64) -> f64 {
        let q = self.quantile(tau);
        match self {
            ErrorLaw::StdNormal => (-0.5 * q * q).exp() / (2.0 * PI).sqrt(),
            ErrorLaw::ScaledChiSq1 => {
                // x = z²/√2 with z ~ N(0, 1): f(x) = √2 φ(√(√2 x)) / √(√2 x).
                let z = (SQRT_2 * q).sqrt();
                SQRT_2 * (-0.5 * z * z).exp() / (2.0 * PI).sqrt() / z
            }
            ErrorLaw::ScaledT3 => {
                let s = 3f64.sqrt();
                let t = q * s;
                let f = 6.0 * s / (PI * (3.0 + t * t).powi(2));
                f * s
            }
            ErrorLaw::Degenerate => f64::INFINITY,
        }
    }
}

/// `x = sign(z) min(c, |z|)` for a standard normal `z`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z.signum() * z.abs().min(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    M1,
    M2,
}

/// Shape of the varying slope `b(t) = b + a f(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    Constant,
    /// `f(t) = t − 1`
    Linear,
    /// `f(t) = (t − 1)²`
    Quadratic,
    /// `f(t) = sin(2π(t − 0.5))`
    Sine,
    /// `f(t) = log t`
    Log,
}

impl Alternative {
    pub fn label(self) -> &'static str {
        match self {
            Alternative::Constant => "constant",
            Alternative::Linear => "linear",
            Alternative::Quadratic => "quadratic",
            Alternative::Sine => "sine",
            Alternative::Log => "log",
        }
    }

    pub fn shape(self, t: f64) -> f64 {
        match self {
            Alternative::Constant => 0.0,
            Alternative::Linear => t - 1.0,
            Alternative::Quadratic => (t - 1.0).powi(2),
            Alternative::Sine => (2.0 * PI * (t - 0.5)).sin(),
            Alternative::Log => t.ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotPolicy {
    /// That many equispaced interior knots.
    Fixed(usize),
    /// Equispaced knots, count chosen by the criterion among `0..=max`.
    Adaptive,
}

impl KnotPolicy {
    pub fn label(self) -> String {
        match self {
            KnotPolicy::Fixed(k) => format!("fixed({k})"),
            KnotPolicy::Adaptive => "adaptive".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Score test assuming i.i.d. errors.
    Rs,
    /// Score test on observations rescaled by an estimated linear scale.
    RsWeighted,
    /// Bootstrap likelihood-ratio-type test assuming i.i.d. errors.
    Lr,
}

impl TestKind {
    pub fn label(self) -> &'static str {
        match self {
            TestKind::Rs => "rs",
            TestKind::RsWeighted => "rs_weighted",
            TestKind::Lr => "lr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub model: Model,
    pub tau: f64,
    pub n: usize,
    pub replications: usize,
    pub error_law: ErrorLaw,
    pub alternative: Alternative,
    pub amplitude: f64,
    /// Constant part of the slope.
    pub b: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
    /// Clamp level of the covariate.
    pub truncation: f64,
    pub alpha: f64,
    pub bootstrap: usize,
    pub seed: u64,
    pub knot_policy: KnotPolicy,
    /// Largest knot count the adaptive policy considers; the potential-knot
    /// guideline when unset.
    pub max_knots: Option<usize>,
    pub degree: usize,
    pub tests: Vec<TestKind>,
    pub calibration: Calibration,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            model: Model::M1,
            tau: 0.5,
            n: 200,
            replications: 500,
            error_law: ErrorLaw::StdNormal,
            alternative: Alternative::Constant,
            amplitude: 1.0,
            b: 1.0,
            gamma1: 1.0,
            gamma2: 1.0,
            gamma3: 0.5,
            gamma4: 0.25,
            truncation: 2.0,
            alpha: 0.05,
            bootstrap: 200,
            seed: 0,
            knot_policy: KnotPolicy::Adaptive,
            max_knots: None,
            degree: 1,
            tests: vec![TestKind::Rs],
            calibration: Calibration::Auto,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VcqrError::InvalidArgument(m));
        if self.n < 20 {
            return bad(format!("n must be at least 20, got {}", self.n));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if self.truncation.is_nan() || self.truncation <= 0.0 {
            return bad(format!("truncation must be positive, got {}", self.truncation));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        let reals = [
            self.amplitude,
            self.b,
            self.gamma1,
            self.gamma2,
            self.gamma3,
            self.gamma4,
        ];
        if reals.iter().any(|v| !v.is_finite()) {
            return bad("model constants must be finite".into());
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.tests.is_empty() {
            return bad("no tests requested".into());
        }
        if self.tests.contains(&TestKind::Lr) && self.bootstrap == 0 {
            return bad("the likelihood-ratio test needs at least one bootstrap sample".into());
        }
        if self.degree > 5 {
            return bad(format!("degree {} is not supported (max 5)", self.degree));
        }
        Ok(())
    }

    /// The slope function `b(t)`.
    pub fn slope(&self, t: f64) -> f64 {
        self.b + self.amplitude * self.alternative.shape(t)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One replicate dataset. The index is mapped to the unit interval over its
/// observed range, as in an ordinary analysis.
pub fn generate(config: &SimulationConfig, replicate: u64) -> Dataset {
    let mut rng = substream(config.seed, replicate);
    generate_with(config, &mut rng)
}

fn generate_with(config: &SimulationConfig, rng: &mut ChaCha8Rng) -> Dataset {
    let n = config.n;
    let mut t = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let law = config.error_law;
    for _ in 0..n {
        let ti = rng.random_range(0.5..1.5);
        let xi = sample_truncated_normal(config.truncation, rng);
        let e = law.sample(rng);
        let yi = match config.model {
            Model::M1 => config.gamma1 + config.slope(ti) * xi + (e - law.quantile(config.tau)),
            Model::M2 => {
                let scale = (config.gamma3 * ti + config.gamma4 * xi).abs() + SCALE_OFFSET;
                config.gamma2 + config.slope(ti) * xi + scale * (e - law.quantile(0.5))
            }
        };
        t.push(ti);
        xs.push(xi);
        y.push(yi);
    }
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    Dataset::new(t, x, y, vec!["intercept".into(), "x".into()]).expect("generated data are valid")
}

/// Outcome of one test on one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test: TestKind,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: u64,
    /// Interior knots per coefficient of the design used by the tests.
    pub knot_count: usize,
    pub outcomes: Vec<TestOutcome>,
}

/// Runs every configured test on replicate `replicate`.
pub fn run_replicate(config: &SimulationConfig, replicate: u64) -> Result<ReplicateOutcome> {
    let mut rng = substream(config.seed, replicate);
    let data = generate_with(config, &mut rng);
    let lr_seed: u64 = rng.random();
    let needs_scale = config.tests.contains(&TestKind::RsWeighted);
    let scale = if needs_scale {
        Some(estimate_scale(&data, None)?)
    } else {
        None
    };
    let max_knots = config
        .max_knots
        .unwrap_or_else(|| default_potential_knot_count(data.n(), data.distinct_t()));
    let design_for = |weights: Option<&[f64]>| -> Result<crate::basis::VcDesign> {
        match config.knot_policy {
            KnotPolicy::Fixed(k) => Ok(uniform_design(data.p(), k, config.degree, BasisKind::BSpline)),
            KnotPolicy::Adaptive => {
                select_uniform_count(&data, config.tau, config.degree, max_knots, weights).map(|r| r.0)
            }
        }
    };
    let plain = design_for(None)?;
    let mut outcomes = Vec::with_capacity(config.tests.len());
    for &test in &config.tests {
        let outcome = match test {
            TestKind::Rs => {
                let r = rao_score_test(&data, config.tau, &plain, config.calibration)?;
                TestOutcome {
                    test,
                    statistic: r.statistic,
                    df: r.df,
                    p_value: r.p_value,
                }
            }
            TestKind::RsWeighted => {
                let scale = scale.as_ref().expect("scale estimated above");
                let inv: Vec<f64> = scale.sigma_hat.iter().map(|s| 1.0 / s).collect();
                let design = design_for(Some(&inv))?;
                let r = rao_score_test_weighted(&data, config.tau, &design, scale, config.calibration)?;
                TestOutcome {
                    test,
                    statistic: r.statistic,
                    df: r.df,
                    p_value: r.p_value,
                }
            }
            TestKind::Lr => {
                let r = lr_test(&data, config.tau, &plain, config.bootstrap, lr_seed)?;
                TestOutcome {
                    test,
                    statistic: r.statistic,
                    df: r.df,
                    p_value: r.p_value,
                }
            }
        };
        outcomes.push(outcome);
    }
    Ok(ReplicateOutcome {
        replicate,
        knot_count: plain.max_knot_count(),
        outcomes,
    })
}

/// All replicates, in replicate order.
pub fn run_replicates(config: &SimulationConfig) -> Result<Vec<Result<ReplicateOutcome>>> {
    config.validate()?;
    Ok((0..config.replications as u64)
        .into_par_iter()
        .map(|r| run_replicate(config, r))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub config_digest: String,
    pub model: Model,
    pub tau: f64,
    pub error_law: ErrorLaw,
    pub alternative: Alternative,
    pub amplitude: f64,
    pub test: TestKind,
    pub knot_policy: KnotPolicy,
    pub n: usize,
    /// Replicates that completed.
    pub replications: usize,
    pub rejection_rate: f64,
    /// `√(r(1−r)/R)`.
    pub mc_se: f64,
    pub failures: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub rows: Vec<PowerRow>,
}

impl PowerTable {
    pub fn row(&self, test: TestKind) -> Option<&PowerRow> {
        self.rows.iter().find(|r| r.test == test)
    }

    pub fn total_failures(&self) -> usize {
        self.rows.iter().map(|r| r.failures).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "model,tau,error_law,alternative,amplitude,test,knot_policy,n,replications,rejection_rate,mc_se,failures,seed"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{:?},{:?},{},{},{:?},{},{},{},{},{:?},{:?},{},{}",
                r.model,
                r.tau,
                r.error_law.label(),
                r.alternative.label(),
                r.amplitude,
                r.test.label(),
                r.knot_policy.label(),
                r.n,
                r.replications,
                r.rejection_rate,
                r.mc_se,
                r.failures,
                r.seed
            )?;
        }
        Ok(())
    }
}

/// Aggregates replicate outcomes into one row per test. A replicate whose
/// run failed counts as a failure for every test.
pub fn power_table(config: &SimulationConfig, outcomes: &[Result<ReplicateOutcome>]) -> PowerTable {
    let digest = config.digest();
    let rows = config
        .tests
        .iter()
        .map(|&test| {
            let mut done = 0usize;
            let mut rejected = 0usize;
            for o in outcomes.iter().flatten() {
                if let Some(t) = o.outcomes.iter().find(|t| t.test == test) {
                    done += 1;
                    if t.p_value < config.alpha {
                        rejected += 1;
                    }
                }
            }
            let rate = if done > 0 { rejected as f64 / done as f64 } else { 0.0 };
            let se = if done > 0 {
                (rate * (1.0 - rate) / done as f64).sqrt()
            } else {
                0.0
            };
            PowerRow {
                config_digest: digest.clone(),
                model: config.model,
                tau: config.tau,
                error_law: config.error_law,
                alternative: config.alternative,
                amplitude: config.amplitude,
                test,
                knot_policy: config.knot_policy,
                n: config.n,
                replications: done,
                rejection_rate: rate,
                mc_se: se,
                failures: outcomes.len() - done,
                seed: config.seed,
            }
        })
        .collect();
    PowerTable { rows }
}

pub fn run_power_study(config: &SimulationConfig) -> Result<PowerTable> {
    let outcomes = run_replicates(config)?;
    Ok(power_table(config, &outcomes))
}

/// Synthetic lung-function sample with the columns `age, fev, height, sex,
/// smoke`: age in years (3 to 19), FEV in litres, height in inches, indicator
/// sex (1 = male) and smoking status. The height effect on FEV steepens after
/// age 11.
#[derive(Debug, Clone, PartialEq)]
pub struct FevSample {
    pub age: Vec<f64>,
    pub fev: Vec<f64>,
    pub height: Vec<f64>,
    pub sex: Vec<f64>,
    pub smoke: Vec<f64>,
}

pub fn synthetic_fev(n: usize, seed: u64) -> FevSample {
    let mut rng = substream(seed, 0);
    let mut s = FevSample {
        age: Vec::with_capacity(n),
        fev: Vec::with_capacity(n),
        height: Vec::with_capacity(n),
        sex: Vec::with_capacity(n),
        smoke: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let age = rng.random_range(3..=19) as f64;
        let sex = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let z: f64 = StandardNormal.sample(&mut rng);
        let growth = 2.4 * (age.min(16.0) - 3.0) + sex * 1.5 * (age - 12.0).max(0.0);
        let height = (39.0 + growth + 2.2 * z).round_ties_even_to(0.5);
        let smoke_p = ((age - 9.0) / 20.0).clamp(0.0, 0.45);
        let smoke = if rng.random_bool(smoke_p) { 1.0 } else { 0.0 };
        let slope = 0.06 + 0.03 * (age - 11.0).max(0.0);
        let e: f64 = StandardNormal.sample(&mut rng);
        let fev = 0.6 + 0.09 * age + slope * (height - 55.0) + 0.1 * sex * (age - 10.0).max(0.0) / 4.0 - 0.08 * smoke
            + 0.2 * e;
        s.age.push(age);
        s.fev.push((fev.max(0.4) * 1000.0).round() / 1000.0);
        s.height.push(height);
        s.sex.push(sex);
        s.smoke.push(smoke);
    }
    s
}

trait RoundTo {
    fn round_ties_even_to(self, step: f64) -> f64;
}

impl RoundTo for f64 {
    fn round_ties_even_to(self, step: f64) -> f64 {
        (self / step).round_ties_even() * step
    }
}

impl FevSample {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "age,fev,height,sex,smoke")?;
        for i in 0..self.age.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.age[i], self.fev[i], self.height[i], self.sex[i], self.smoke[i]
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn error_quantiles() {
        assert_eq!(ErrorLaw::StdNormal.quantile(0.5), 0.0);
        let q = ErrorLaw::ScaledChiSq1.quantile(0.5);
        assert!((q - 0.454_936_423_119_572_8 / SQRT_2).abs() < 1e-9, "{q}");
        assert!((q - 0.32169).abs() < 1e-5);
        // t₃ distribution function in closed form, inverted by bisection.
        let cdf = |t: f64| {
            let th = (t / 3f64.sqrt()).atan();
            0.5 + (th + th.sin() * th.cos()) / PI
        };
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < 0.9 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((ErrorLaw::ScaledT3.quantile(0.9) - lo / 3f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn densities_at_median() {
        assert!((ErrorLaw::StdNormal.density_at_quantile(0.5) - 0.398_942_280_401).abs() < 1e-9);
        let d = ErrorLaw::ScaledChiSq1.density_at_quantile(0.5);
        assert!((d - 0.67).abs() < 0.01, "{d}");
        // Numerical derivative of the distribution function.
        let q = ErrorLaw::ScaledChiSq1.quantile(0.5);
        let h = 1e-6;
        let cdf = |x: f64| statrs::function::erf::erf((SQRT_2 * x).sqrt() / SQRT_2);
        assert!(((cdf(q + h) - cdf(q - h)) / (2.0 * h) - d).abs() < 1e-6);
    }

    #[test]
    fn samplers_match_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = 200_000;
        for law in [ErrorLaw::StdNormal, ErrorLaw::ScaledChiSq1, ErrorLaw::ScaledT3] {
            for tau in [0.25, 0.5, 0.9] {
                let q = law.quantile(tau);
                let below = (0..m).filter(|_| law.sample(&mut rng) <= q).count() as f64 / m as f64;
                let se = (tau * (1.0 - tau) / m as f64).sqrt();
                assert!((below - tau).abs() < 3.5 * se, "{law:?} {tau}: {below}");
            }
        }
    }

    #[test]
    fn truncated_normal_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 200_000;
        let xs: Vec<f64> = (0..m).map(|_| sample_truncated_normal(2.0, &mut rng)).collect();
        assert!(xs.iter().all(|x| x.abs() <= 2.0));
        let var = xs.iter().map(|x| x * x).sum::<f64>() / m as f64;
        assert!(var > 0.8 && var < 1.0, "{var}");
        let wide: f64 = (0..m).map(|_| sample_truncated_normal(1e9, &mut rng)).sum::<f64>() / m as f64;
        assert!(wide.abs() < 3.0 / (m as f64).sqrt());
    }

    #[test]
    fn degenerate_law_gives_exact_regression() {
        let config = SimulationConfig {
            error_law: ErrorLaw::Degenerate,
            alternative: Alternative::Sine,
            n: 30,
            ..Default::default()
        };
        let d = generate(&config, 3);
        for i in 0..d.n() {
            let want = 1.0 + config.slope(d.t[i]) * d.x[(i, 1)];
            assert!((d.y[i] - want).abs() < 1e-14);
            assert!(d.t[i] >= 0.5 && d.t[i] < 1.5);
        }
        assert_eq!(generate(&config, 3), d);
        assert_ne!(generate(&config, 4), d);
    }

    #[test]
    fn config_validation() {
        let ok = SimulationConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            SimulationConfig { n: 10, ..ok.clone() },
            SimulationConfig { tau: 1.0, ..ok.clone() },
            SimulationConfig {
                truncation: 0.0,
                ..ok.clone()
            },
            SimulationConfig {
                amplitude: f64::NAN,
                ..ok.clone()
            },
            SimulationConfig {
                tests: vec![TestKind::Lr],
                bootstrap: 0,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn small_study_is_reproducible() {
        let config = SimulationConfig {
            n: 50,
            replications: 4,
            knot_policy: KnotPolicy::Fixed(1),
            tests: vec![TestKind::Rs, TestKind::RsWeighted, TestKind::Lr],
            bootstrap: 9,
            seed: 17,
            ..Default::default()
        };
        let a = run_power_study(&config).unwrap();
        let b = run_power_study(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 3);
        assert_eq!(a.total_failures(), 0);
        for r in &a.rows {
            assert!(r.rejection_rate >= 0.0 && r.rejection_rate <= 1.0);
            let se = (r.rejection_rate * (1.0 - r.rejection_rate) / r.replications as f64).sqrt();
            assert_eq!(r.mc_se, se);
        }
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("M1,0.5,std_normal,constant,1.0,rs,fixed(1),50,4,"));
    }

    #[test]
    fn fev_generator_shape() {
        let s = synthetic_fev(300, 1);
        assert_eq!(s.age.len(), 300);
        assert!(s.age.iter().all(|&a| (3.0..=19.0).contains(&a)));
        assert!(s.sex.iter().chain(&s.smoke).all(|&v| v == 0.0 || v == 1.0));
        assert!(s.fev.iter().all(|&v| v > 0.0));
        assert_eq!(synthetic_fev(300, 1), s);
    }
}
