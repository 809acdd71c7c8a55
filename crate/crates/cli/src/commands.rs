use std::fs;
use std::path::Path;

use eio_core::datagen::{gen_direct, gen_iv, gen_random_design, Instance, InstanceMeta};
use eio_core::estimator::{maximize, plugin_lse};
use eio_core::harness::{rate_plot_svg, run_experiment, run_rate_study, ExperimentSpec, RateSpec};
use eio_core::io::{matrix_rows, read_json, read_matrix_csv, read_vector_csv, write_json, write_matrix_csv, write_records_csv, write_vector_csv};
use eio_core::model::{region_membership, LocalRegion, Observation, RegionDiagnostic, TruthSpec};
use eio_core::{EioError, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{EstimateConfig, GeneratorConfig, SimulateConfig};

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| EioError::Io {
        path: out.display().to_string(),
        source: e,
    })
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    theta_star: Vec<f64>,
    a_star: Vec<Vec<f64>>,
    image_star: Vec<f64>,
}

impl TruthFile {
    fn from_truth(t: &TruthSpec) -> Self {
        Self {
            theta_star: t.theta_star.iter().copied().collect(),
            a_star: matrix_rows(&t.a_star),
            image_star: t.image_star().iter().copied().collect(),
        }
    }

    fn to_truth(&self) -> Result<TruthSpec> {
        let p = self.theta_star.len();
        if self.a_star.iter().any(|r| r.len() != p) {
            return Err(EioError::Dimension("truth.json: a_star rows must match theta_star".into()));
        }
        let q = self.a_star.len();
        TruthSpec::new(
            DVector::from_vec(self.theta_star.clone()),
            DMatrix::from_fn(q, p, |i, j| self.a_star[i][j]),
        )
    }
}

#[derive(Serialize)]
struct MetaFile<'a> {
    instance: &'a InstanceMeta,
    config: &'a SimulateConfig,
}

#[derive(Deserialize)]
struct MetaIn {
    instance: MetaInstance,
}

#[derive(Deserialize)]
struct MetaInstance {
    mu2: f64,
}

pub fn simulate(cfg: &SimulateConfig, out: &Path) -> Result<()> {
    let Instance { obs, truth, meta } = match &cfg.generator {
        GeneratorConfig::Direct(spec) => gen_direct(spec, cfg.seed, cfg.replicate)?.0,
        GeneratorConfig::RandomDesign(spec) => gen_random_design(spec, cfg.seed, cfg.replicate)?,
        GeneratorConfig::Iv(spec) => gen_iv(spec, cfg.seed, cfg.replicate)?,
    };
    ensure_dir(out)?;
    write_vector_csv(&out.join("Z.csv"), &obs.z_obs)?;
    write_matrix_csv(&out.join("A_hat.csv"), &obs.a_hat)?;
    write_json(&out.join("meta.json"), &MetaFile { instance: &meta, config: cfg })?;
    write_json(&out.join("truth.json"), &TruthFile::from_truth(&truth))?;
    log::info!("wrote instance with p = {}, q = {} to {}", meta.p, meta.q, out.display());
    Ok(())
}

#[derive(Serialize)]
struct FitFile<'a> {
    config: &'a EstimateConfig,
    mu2: f64,
    theta: Vec<f64>,
    z: Vec<f64>,
    a: Vec<Vec<f64>>,
    objective: f64,
    grad_norm: f64,
    grad_tol: f64,
    iters: usize,
    converged: bool,
    /// Ordinary least squares with `Â` in place of the operator.
    plugin_theta: Option<Vec<f64>>,
    /// Present when the instance directory carries `truth.json`.
    region: Option<RegionDiagnostic>,
    theta_error: Option<f64>,
}

pub fn estimate(cfg: &EstimateConfig, instance: &Path, out: &Path) -> Result<()> {
    let z = read_vector_csv(&instance.join("Z.csv"))?;
    let a_hat = read_matrix_csv(&instance.join("A_hat.csv"))?;
    let mu2 = match cfg.mu2 {
        Some(m) => m,
        None => read_json::<MetaIn>(&instance.join("meta.json"))?.instance.mu2,
    };
    let obs = Observation::new(z, a_hat, mu2)?;
    let fit = maximize(&obs, &cfg.penalty, &cfg.solve)?;
    let plugin_theta = plugin_lse(&obs.z_obs, &obs.a_hat).ok().map(|t| t.iter().copied().collect());

    let truth_path = instance.join("truth.json");
    let (region, theta_error) = if truth_path.exists() {
        let truth = read_json::<TruthFile>(&truth_path)?.to_truth()?;
        if truth.dims() != obs.dims() {
            return Err(EioError::Dimension("truth.json does not match the observation".into()));
        }
        let diag = LocalRegion::from_truth(&truth, mu2, 0.0).and_then(|r| region_membership(&fit.param, &r, &truth));
        let diag = match diag {
            Ok(d) => {
                if !d.inside {
                    log::warn!("estimate lies outside the local region around the truth");
                }
                Some(d)
            }
            Err(e) => {
                log::warn!("region diagnostic unavailable: {e}");
                None
            }
        };
        (diag, Some((&fit.param.theta - &truth.theta_star).norm()))
    } else {
        (None, None)
    };

    ensure_dir(out)?;
    let file = FitFile {
        config: cfg,
        mu2,
        theta: fit.param.theta.iter().copied().collect(),
        z: fit.param.z.iter().copied().collect(),
        a: matrix_rows(&fit.param.a),
        objective: fit.objective,
        grad_norm: fit.grad_norm,
        grad_tol: fit.grad_tol,
        iters: fit.iters,
        converged: fit.converged,
        plugin_theta,
        region,
        theta_error,
    };
    write_json(&out.join("fit.json"), &file)?;
    if !fit.converged {
        log::warn!("solver stopped after {} iterations without meeting the tolerance", fit.iters);
    }
    Ok(())
}

pub fn verify(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    let report = run_experiment(spec)?;
    ensure_dir(out)?;
    let mut body = serde_json::to_value(&report)?;
    if let Value::Object(map) = &mut body {
        map.remove("records");
        map.insert("config".into(), serde_json::to_value(spec)?);
    }
    write_json(&out.join("verify.json"), &body)?;
    write_records_csv(&out.join("verify_replicates.csv"), &report.records)?;
    log::info!("verify status: {:?}", report.status);
    Ok(())
}

pub fn rate_study(spec: &RateSpec, out: &Path) -> Result<()> {
    let report = run_rate_study(spec)?;
    ensure_dir(out)?;
    let body = serde_json::json!({
        "config": spec,
        "points": &report.points,
        "fit": &report.fit,
    });
    write_json(&out.join("rate.json"), &body)?;
    write_records_csv(&out.join("rate.csv"), &report.points)?;
    let svg = rate_plot_svg(&report);
    fs::write(out.join("rate.svg"), svg).map_err(|e| EioError::Io {
        path: out.join("rate.svg").display().to_string(),
        source: e,
    })?;
    if let Some(s) = report.fit.slope {
        log::info!("fitted log-log slope {s:.4} (predicted {:.4})", report.fit.predicted);
    }
    Ok(())
}
