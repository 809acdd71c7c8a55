//! Monte-Carlo verification of the expansion and risk statements, and the
//! rate study. Replicates run on a bounded rayon pool; every replicate owns
//! its random streams and results are reduced in replicate order, so reports
//! do not depend on the number of workers.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{perturb, DirectModelSpec};
use crate::error::{EioError, Result};
use crate::estimator::{benchmark_ridge, maximize, profile_value, SolveOptions};
use crate::model::{region_membership, score, LocalRegion, TruthSpec};
use crate::penalty::PenaltyConfig;
use crate::theory::{
    rate_prediction, select_rows, ExpansionReport, NoiseModel, RiskInterval, SpectralProfile, BoundContext,
    BoundSettings,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Fisher,
    Wilks,
    Risk,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub generator: DirectModelSpec,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    pub replicates: usize,
    #[serde(default = "default_x")]
    pub x: f64,
    #[serde(default)]
    pub seed: u64,
    /// Worker count; left out of serialized configs because results do not
    /// depend on it.
    #[serde(default = "default_jobs", skip_serializing)]
    pub jobs: usize,
    #[serde(default = "all_studies")]
    pub studies: Vec<Study>,
    #[serde(default)]
    pub solve: SolveOptions,
    #[serde(default = "default_c4")]
    pub c4: f64,
    /// Rows of `Q`; identity when absent.
    #[serde(default)]
    pub q_map: Option<Vec<Vec<f64>>>,
    /// Minimum `min{R/(1.5m), (4/9)/(κ²τ₃m)}` required before running.
    #[serde(default)]
    pub required_slack: Option<f64>,
}

fn default_x() -> f64 {
    3.0
}
fn default_jobs() -> usize {
    1
}
fn default_c4() -> f64 {
    3.0
}
fn all_studies() -> Vec<Study> {
    vec![Study::Fisher, Study::Wilks, Study::Risk]
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(EioError::Invalid("replicates must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(EioError::Invalid("jobs must be at least 1".into()));
        }
        if !(self.x > 0.0) {
            return Err(EioError::Invalid("x must be positive".into()));
        }
        self.generator.validate()?;
        self.penalty.validate(self.generator.p, self.generator.q)?;
        self.solve.validate()
    }

    fn q_matrix(&self) -> Result<Option<DMatrix<f64>>> {
        let Some(rows) = &self.q_map else { return Ok(None) };
        let p = self.generator.p;
        if rows.is_empty() || rows.iter().any(|r| r.len() != p) {
            return Err(EioError::Dimension(format!("q_map rows must have {p} entries")));
        }
        Ok(Some(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])))
    }
}

/// One Monte-Carlo replicate; remainders are `None` for studies not requested.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRecord {
    pub replicate: u64,
    pub converged: bool,
    pub in_region: bool,
    pub metric_norm: f64,
    pub fisher_observed: Option<f64>,
    pub fisher_bound: Option<f64>,
    pub pac_observed: Option<f64>,
    pub pac_bound: Option<f64>,
    pub wilks_observed: Option<f64>,
    pub wilks_bound: Option<f64>,
    /// `‖Q(θ̃_G − θ*)‖`.
    pub loss: f64,
    /// `‖Q(θ̂_G − θ*)‖` for the known-operator benchmark.
    pub benchmark_loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Coverage {
    pub passes: usize,
    /// Converged replicates; the coverage denominator.
    pub used: usize,
    pub excluded: usize,
    pub coverage: f64,
    /// `1 − 3e^{−x}`.
    pub nominal: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskSummary {
    /// MC estimate of `E‖Q(θ̃_G − θ*)‖²`.
    pub mc_risk: f64,
    pub mc_risk_se: f64,
    pub interval: RiskInterval,
    pub mean_loss: f64,
    pub l2: ExpansionReport,
    pub benchmark_risk: f64,
    /// `risk(θ̃_G) / risk(θ̂_G)`.
    pub oracle_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContextSummary {
    pub applicable: bool,
    pub slack: f64,
    pub r_d: f64,
    pub b_d: f64,
    pub radius: f64,
    pub n_eff: f64,
    pub tau3: f64,
    pub trace_b: f64,
    pub norm_b: f64,
    pub risk_q: f64,
    pub alpha_q: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Ok,
    /// The applicability conditions fail; bounds are reported but carry no
    /// guarantee, or replicates were skipped if a minimum slack was required.
    Inapplicable,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub status: Verdict,
    pub note: Option<String>,
    pub context: ContextSummary,
    pub bias: ExpansionReport,
    pub fisher: Option<Coverage>,
    pub pac: Option<Coverage>,
    pub wilks: Option<Coverage>,
    pub risk: Option<RiskSummary>,
    pub records: Vec<ReplicateRecord>,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| EioError::Invalid(format!("thread pool: {e}")))
}

pub struct Prepared {
    pub truth: TruthSpec,
    pub region: LocalRegion,
    pub noise: NoiseModel,
    pub ctx: BoundContext,
}

/// Truth, region and every sample-independent theory quantity for a spec.
pub fn prepare(spec: &ExperimentSpec) -> Result<Prepared> {
    spec.validate()?;
    let g = &spec.generator;
    let truth = g.truth(spec.seed)?;
    let region = LocalRegion::from_truth(&truth, g.mu2, 0.0)?;
    let noise = NoiseModel::homogeneous(g.sigma_omega, g.sigma_u);
    let settings = BoundSettings {
        x: spec.x,
        c4: spec.c4,
        at_truth: false,
    };
    let q = spec.q_matrix()?;
    let ctx = BoundContext::new(&truth, g.mu2, &spec.penalty, &noise, &region, q.as_ref(), &settings, &spec.solve)?;
    Ok(Prepared {
        truth,
        region,
        noise,
        ctx,
    })
}

fn run_replicate(spec: &ExperimentSpec, prep: &Prepared, r: u64) -> Result<ReplicateRecord> {
    let g = &spec.generator;
    let ctx = &prep.ctx;
    let obs = perturb(&prep.truth, g.mu2, g.sigma_omega, g.sigma_u, spec.seed, Some(r))?;
    let fit = maximize(&obs, &spec.penalty, &spec.solve)?;
    let theta = &fit.param.theta;
    let in_region = region_membership(&fit.param, &prep.region, &prep.truth)?.inside;
    let lead = ctx.leading(&score(&obs, &prep.truth)?)?;
    let wants = |s: Study| spec.studies.contains(&s);

    let (mut fo, mut fb, mut po, mut pb, mut wo, mut wb) = (None, None, None, None, None, None);
    if wants(Study::Fisher) {
        let f = ctx.fisher(&lead, theta);
        fo = f.observed_remainder;
        fb = Some(f.remainder_bound);
        let p = ctx.pac(&lead, theta);
        po = p.observed_remainder;
        pb = Some(p.remainder_bound);
    }
    if wants(Study::Wilks) {
        let (at_fit, _) = profile_value(&obs, theta, &spec.penalty)?;
        let (at_pop, _) = profile_value(&obs, &ctx.population.theta, &spec.penalty)?;
        let w = ctx.wilks(&lead, 2.0 * (at_fit - at_pop));
        wo = w.observed_remainder;
        wb = Some(w.remainder_bound);
    }
    let loss = (&ctx.q_map * (theta - &prep.truth.theta_star)).norm();
    let bench = benchmark_ridge(&obs.z_obs, &prep.truth.a_star, &spec.penalty)?;
    let benchmark_loss = (&ctx.q_map * (bench - &prep.truth.theta_star)).norm();
    Ok(ReplicateRecord {
        replicate: r,
        converged: fit.converged,
        in_region,
        metric_norm: lead.metric_norm,
        fisher_observed: fo,
        fisher_bound: fb,
        pac_observed: po,
        pac_bound: pb,
        wilks_observed: wo,
        wilks_bound: wb,
        loss,
        benchmark_loss,
    })
}

fn coverage(records: &[ReplicateRecord], x: f64, pick: impl Fn(&ReplicateRecord) -> Option<(f64, f64)>, floor: f64) -> Option<Coverage> {
    let mut passes = 0;
    let mut used = 0;
    let mut excluded = 0;
    let mut any = false;
    for r in records {
        let Some((obs, bound)) = pick(r) else { continue };
        any = true;
        if !r.converged {
            excluded += 1;
            continue;
        }
        used += 1;
        if obs <= bound + floor {
            passes += 1;
        }
    }
    any.then(|| Coverage {
        passes,
        used,
        excluded,
        coverage: if used > 0 { passes as f64 / used as f64 } else { 0.0 },
        nominal: 1.0 - 3.0 * (-x).exp(),
    })
}

/// Runs the requested studies over `spec.replicates` replicates.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let prep = prepare(spec)?;
    let ctx = &prep.ctx;
    let summary = ContextSummary {
        applicable: ctx.applicable,
        slack: ctx.slack,
        r_d: ctx.r_d,
        b_d: ctx.b_d,
        radius: prep.region.radius,
        n_eff: prep.region.n_eff,
        tau3: ctx.tau3,
        trace_b: ctx.moments.trace_b,
        norm_b: ctx.moments.norm_b,
        risk_q: ctx.risk_q,
        alpha_q: ctx.alpha_q,
        x: spec.x,
    };
    if let Some(req) = spec.required_slack {
        if !(ctx.slack >= req) {
            return Ok(ExperimentReport {
                status: Verdict::Inapplicable,
                note: Some(format!("applicability slack {:.3} below the required {req}; no replicates run", ctx.slack)),
                context: summary,
                bias: ctx.bias(),
                fisher: None,
                pac: None,
                wilks: None,
                risk: None,
                records: Vec::new(),
            });
        }
    }
    let records: Vec<ReplicateRecord> = pool(spec.jobs)?.install(|| {
        (0..spec.replicates as u64)
            .into_par_iter()
            .map(|r| run_replicate(spec, &prep, r))
            .collect::<Result<Vec<_>>>()
    })?;
    let excluded = records.iter().filter(|r| !r.converged).count();
    if excluded > 0 {
        log::warn!("{excluded} of {} replicates did not converge and are excluded", records.len());
    }
    let floor = 1e-7 * (1.0 + (&ctx.q_map * &prep.truth.theta_star).norm());
    let fisher = coverage(&records, spec.x, |r| r.fisher_observed.zip(r.fisher_bound), floor);
    let pac = coverage(&records, spec.x, |r| r.pac_observed.zip(r.pac_bound), floor);
    let wilks = coverage(&records, spec.x, |r| r.wilks_observed.zip(r.wilks_bound), floor);

    let risk = if spec.studies.contains(&Study::Risk) {
        let used: Vec<&ReplicateRecord> = records.iter().filter(|r| r.converged).collect();
        if used.is_empty() {
            return Err(EioError::NotConverged("every replicate failed to converge".into()));
        }
        let n = used.len() as f64;
        let sq: Vec<f64> = used.iter().map(|r| r.loss * r.loss).collect();
        let mc_risk = sq.iter().sum::<f64>() / n;
        let var = if used.len() > 1 {
            sq.iter().map(|v| (v - mc_risk).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mean_loss = used.iter().map(|r| r.loss).sum::<f64>() / n;
        let benchmark_risk = used.iter().map(|r| r.benchmark_loss.powi(2)).sum::<f64>() / n;
        Some(RiskSummary {
            mc_risk,
            mc_risk_se: (var / n).sqrt(),
            interval: ctx.squared(Some(mc_risk)),
            mean_loss,
            l2: ctx.l2(Some(mean_loss)),
            benchmark_risk,
            oracle_ratio: if benchmark_risk > 0.0 { mc_risk / benchmark_risk } else { f64::NAN },
        })
    } else {
        None
    };
    let (status, note) = if ctx.applicable {
        (Verdict::Ok, None)
    } else {
        (Verdict::Inapplicable, Some("applicability conditions fail; bounds carry no guarantee".to_string()))
    };
    Ok(ExperimentReport {
        status,
        note,
        context: summary,
        bias: ctx.bias(),
        fisher,
        pac,
        wilks,
        risk,
        records,
    })
}

/// The direct model used as the reference instance: `p = 8`, `q = 12`,
/// `s = β = 1`, `N₁ = μ² = 10⁴`, unit noise, ridge `g² = 1`.
pub fn reference_spec(replicates: usize, seed: u64, jobs: usize) -> ExperimentSpec {
    ExperimentSpec {
        generator: DirectModelSpec {
            p: 8,
            q: 12,
            n1: 1e4,
            s: 1.0,
            beta: 1.0,
            c_w: 1.0,
            sigma_omega: 1.0,
            sigma_u: 1.0,
            mu2: 1e4,
        },
        penalty: PenaltyConfig::ridge(1.0),
        replicates,
        x: 3.0,
        seed,
        jobs,
        studies: all_studies(),
        solve: SolveOptions::default(),
        c4: 3.0,
        q_map: None,
        required_slack: Some(2.0),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    pub p: usize,
    /// `q = ⌈q_factor · p⌉`.
    #[serde(default = "default_q_factor")]
    pub q_factor: f64,
    #[serde(default = "one")]
    pub s: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "one")]
    pub c_w: f64,
    pub n1_grid: Vec<f64>,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs", skip_serializing)]
    pub jobs: usize,
    #[serde(default = "one")]
    pub sigma_omega: f64,
    #[serde(default = "one")]
    pub sigma_u: f64,
    /// `μ² = mu2_factor · N₁`.
    #[serde(default = "one")]
    pub mu2_factor: f64,
    #[serde(default)]
    pub solve: SolveOptions,
}

fn one() -> f64 {
    1.0
}
fn default_q_factor() -> f64 {
    1.5
}

impl RateSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.jobs == 0 || self.p == 0 {
            return Err(EioError::Invalid("p, replicates and jobs must be at least 1".into()));
        }
        if self.n1_grid.is_empty() || self.n1_grid.iter().any(|n| !(*n > 0.0)) {
            return Err(EioError::Invalid("n1_grid must be nonempty and positive".into()));
        }
        if !(self.q_factor >= 1.0) || !(self.mu2_factor > 0.0) {
            return Err(EioError::Invalid("q_factor must be >= 1 and mu2_factor positive".into()));
        }
        self.solve.validate()
    }

    fn q(&self) -> usize {
        (self.q_factor * self.p as f64).ceil() as usize
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RatePoint {
    pub n1: f64,
    pub j: usize,
    pub m: usize,
    pub mu2: f64,
    pub risk: f64,
    pub risk_se: f64,
    pub used: usize,
    pub excluded: usize,
    pub predicted_order: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub slope_se: Option<f64>,
    /// Normal-approximation 95% interval; needs at least three grid points.
    pub ci95: Option<(f64, f64)>,
    pub predicted: f64,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub points: Vec<RatePoint>,
    pub fit: SlopeFit,
}

/// Least-squares fit of `log risk` on `log N₁`.
pub fn loglog_slope(n1: &[f64], risk: &[f64], predicted: f64) -> SlopeFit {
    let k = n1.len();
    let none = |note: &str| SlopeFit {
        slope: None,
        intercept: None,
        slope_se: None,
        ci95: None,
        predicted,
        note: note.into(),
    };
    if k < 2 {
        return none("slope undefined for a single grid point");
    }
    let xs: Vec<f64> = n1.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = risk.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k as f64;
    let my = ys.iter().sum::<f64>() / k as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return none("slope undefined for a degenerate grid");
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if k == 2 {
        return SlopeFit {
            slope: Some(slope),
            intercept: Some(intercept),
            slope_se: None,
            ci95: None,
            predicted,
            note: "two grid points: no interval".into(),
        };
    }
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let se = (rss / (k as f64 - 2.0) / sxx).sqrt();
    SlopeFit {
        slope: Some(slope),
        intercept: Some(intercept),
        slope_se: Some(se),
        ci95: Some((slope - 1.96 * se, slope + 1.96 * se)),
        predicted,
        note: "least squares on log scale".into(),
    }
}

/// For each `N₁`, fits the unpenalized `J × M` reduction with `(J, M)` from
/// the rate prediction and records `E‖θ̃ − θ*‖²` including the truncated tail.
pub fn run_rate_study(spec: &RateSpec) -> Result<RateReport> {
    spec.validate()?;
    let q = spec.q();
    let pool = pool(spec.jobs)?;
    let mut points = Vec::with_capacity(spec.n1_grid.len());
    let mut predicted = f64::NAN;
    for &n1 in &spec.n1_grid {
        let mu2 = spec.mu2_factor * n1;
        let direct = DirectModelSpec {
            p: spec.p,
            q,
            n1,
            s: spec.s,
            beta: spec.beta,
            c_w: spec.c_w,
            sigma_omega: spec.sigma_omega,
            sigma_u: spec.sigma_u,
            mu2,
        };
        let profile: SpectralProfile = direct.profile()?;
        let pred = rate_prediction(spec.s, spec.beta, spec.c_w, n1)?;
        predicted = pred.risk_exponent;
        let j = pred.j_opt.min(spec.p);
        let m = select_rows(&profile, j, pred.rho)?;
        let truth = direct.truth(spec.seed)?;
        let reduced = TruthSpec::new(
            truth.theta_star.rows(0, j).into_owned(),
            truth.a_star.view((0, 0), (m, j)).into_owned(),
        )?;
        let tail = truth.theta_star.rows(j, spec.p - j).norm_squared();
        let none = PenaltyConfig::none();
        let losses: Vec<Option<f64>> = pool.install(|| {
            (0..spec.replicates as u64)
                .into_par_iter()
                .map(|r| -> Result<Option<f64>> {
                    let obs = perturb(&reduced, mu2, spec.sigma_omega, spec.sigma_u, spec.seed, Some(r))?;
                    let fit = maximize(&obs, &none, &spec.solve)?;
                    Ok(fit
                        .converged
                        .then(|| (&fit.param.theta - &reduced.theta_star).norm_squared() + tail))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let used: Vec<f64> = losses.iter().flatten().copied().collect();
        if used.is_empty() {
            return Err(EioError::NotConverged(format!("every replicate at N1 = {n1}")));
        }
        let n = used.len() as f64;
        let risk = used.iter().sum::<f64>() / n;
        let var = if used.len() > 1 {
            used.iter().map(|v| (v - risk).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        points.push(RatePoint {
            n1,
            j,
            m,
            mu2,
            risk,
            risk_se: (var / n).sqrt(),
            used: used.len(),
            excluded: losses.len() - used.len(),
            predicted_order: pred.risk_order,
        });
    }
    let n1: Vec<f64> = points.iter().map(|p| p.n1).collect();
    let risk: Vec<f64> = points.iter().map(|p| p.risk).collect();
    let fit = loglog_slope(&n1, &risk, predicted);
    Ok(RateReport { points, fit })
}

/// Log-log scatter of risk against `N₁` with the fitted line.
pub fn rate_plot_svg(report: &RateReport) -> String {
    let (w, h, pad) = (480.0, 360.0, 50.0);
    let pts: Vec<(f64, f64)> = report.points.iter().map(|p| (p.n1.log10(), p.risk.log10())).collect();
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    if pts.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let span = |v: &mut dyn Iterator<Item = f64>| {
        let vals: Vec<f64> = v.collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo { (lo - 0.1 * (hi - lo), hi + 0.1 * (hi - lo)) } else { (lo - 0.5, hi + 0.5) }
    };
    let (x0, x1) = span(&mut pts.iter().map(|p| p.0));
    let (y0, y1) = span(&mut pts.iter().map(|p| p.1));
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    out.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - pad,
        w - pad,
        h - pad
    ));
    out.push_str(&format!("<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n", h - pad));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">log10 N1</text>\n",
        w / 2.0,
        h - 15.0
    ));
    out.push_str(&format!(
        "<text x=\"15\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">log10 risk</text>\n",
        h / 2.0,
        h / 2.0
    ));
    for (x, y) in &pts {
        out.push_str(&format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"steelblue\"/>\n", sx(*x), sy(*y)));
    }
    if let (Some(b), Some(a)) = (report.fit.slope, report.fit.intercept) {
        // The fit is in natural logs; slopes agree across bases.
        let line = |x: f64| (a / std::f64::consts::LN_10) + b * x;
        out.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"firebrick\"/>\n",
            sx(x0),
            sy(line(x0)),
            sx(x1),
            sy(line(x1))
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">slope {b:.3}</text>\n",
            w - pad,
            pad - 10.0
        ));
    }
    out.push_str("</svg>\n");
    out
}
