//! Artifact emission: trajectory CSVs, the certificate JSON and SVG views.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde_json::{json, Value};
use turnpike_core::manifolds::{BranchStop, ManifoldBranch, ManifoldKind};
use turnpike_core::model::{HypothesisReport, SteadyOptimum};
use turnpike_core::shooting::BvpSolution;
use turnpike_core::turnpike::{distance_profile, verdict_label, ProfileKind};

use crate::config::ProblemConfig;
use crate::pipeline::{Analysis, PipelineError, Stage};

/// Full round-trip precision: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// JSON number, or `null` when not finite.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn vec_json(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|x| num(*x)).collect())
}

/// `20` → `"20"`, `12.5` → `"12p5"`.
pub fn horizon_label(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{t:.0}")
    } else {
        format!("{t}").replace('.', "p")
    }
}

pub fn trajectory_csv(sol: &BvpSolution<f64>, opt: &SteadyOptimum<f64>, grid: usize) -> String {
    let n = sol.state_dim();
    let m = sol.control(0.0).len();
    let mut out = String::from("t");
    for (prefix, count) in [("x", n), ("p", n), ("u", m)] {
        for i in 1..=count {
            let _ = write!(out, ",{prefix}{i}");
        }
    }
    out.push_str(",dist_to_steady,hamiltonian\n");
    let profile = distance_profile(sol, opt, grid);
    for (&t, &d) in profile.times.iter().zip(&profile.values) {
        let w = sol.point(t);
        let u = sol.control(t);
        out.push_str(&fmt_f64(t));
        for v in w.iter().chain(u.iter()) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        let _ = writeln!(out, ",{},{}", fmt_f64(d), fmt_f64(sol.hamiltonian(t)));
    }
    out
}

pub fn hypothesis_json(h: &HypothesisReport<f64>) -> Value {
    json!({
        "stabilizable": h.stabilizable,
        "detectable": h.detectable,
        "hyperbolic": h.hyperbolic,
        "pl_plus_i_nonsingular": h.transversality.map(|c| c.nonsingular),
        "pl_plus_i_min_singular_value": h.transversality.map(|c| num(c.min_sv)),
        "riccati_error": h.riccati_error.as_ref().map(|e| e.to_string()),
        "all_pass": h.all_pass(),
    })
}

pub fn optimum_json(opt: &SteadyOptimum<f64>) -> Value {
    json!({
        "x_bar": vec_json(&opt.x_bar),
        "u_bar": vec_json(&opt.u_bar),
        "p_bar": vec_json(&opt.p_bar),
        "steady_cost": num(opt.j_s),
        "hyperbolic": opt.hyperbolic,
        "stable_dim": opt.stable_dim,
        "eigenvalues": opt.eigenvalues.iter().map(|z| json!([num(z.re), num(z.im)])).collect::<Vec<_>>(),
    })
}

pub fn certificate_json(cfg: &ProblemConfig, a: &Analysis) -> Value {
    let verdict = a.certificate.as_ref().map(|c| verdict_label(c.verdict)).unwrap_or("Inconclusive");
    let mut doc = json!({
        "system": cfg.system_label,
        "verdict": verdict,
        "steady_optimum": optimum_json(&a.optimum),
        "hypothesis_report": hypothesis_json(&a.hypotheses),
        "p_condition": a.p_condition.iter().map(|(t, r)| json!({
            "T": num(*t), "ok": r.ok, "min_abs_det": num(r.min_abs_det),
            "min_normalized": num(r.normalized.iter().cloned().fold(f64::INFINITY, f64::min)),
        })).collect::<Vec<_>>(),
        "solves": a.runs.iter().map(|r| json!({
            "T": num(r.solution.horizon),
            "boundary_residual": num(r.solution.boundary_residual()),
            "newton_iterations": r.solution.newton_iters,
            "continuation_steps": r.solution.continuation_path.len(),
            "x0_reached": vec_json(&r.solution.x0),
            "continuation_failure": r.failure.as_ref().map(|e| e.to_string()),
        })).collect::<Vec<_>>(),
    });
    let obj = doc.as_object_mut().expect("object");
    match &a.certificate {
        Some(c) => {
            obj.insert("K".into(), num(c.k));
            obj.insert("mu".into(), num(c.mu));
            obj.insert("fit_residual".into(), num(c.fit_residual));
            obj.insert(
                "per_horizon".into(),
                Value::Array(
                    c.per_horizon
                        .iter()
                        .map(|h| json!({"T": num(h.horizon), "K_T": num(h.k), "mu_T": num(h.mu), "max_distance": num(h.max_distance)}))
                        .collect(),
                ),
            );
            obj.insert(
                "residence".into(),
                Value::Array(c.residence.iter().map(|(e, m)| json!({"epsilon": num(*e), "measure": num(*m)})).collect()),
            );
            obj.insert(
                "criteria".into(),
                json!({
                    "profile": match c.kind { ProfileKind::StateAndControl => "state_and_control", ProfileKind::ControlOnly => "control_only" },
                    "mu_spread": num(c.mu_spread),
                    "max_mu_spread": num(c.options.max_mu_spread),
                    "mu_floor": num(c.options.mu_floor),
                    "epsilon_ref": num(c.epsilon_ref),
                    "residence_variation": num(c.residence_variation),
                    "max_residence_variation": num(c.options.max_residence_variation),
                    "envelope_valid": c.envelope_valid,
                    "grid": c.options.grid,
                }),
            );
        }
        None => {
            for key in ["K", "mu", "fit_residual"] {
                obj.insert(key.into(), Value::Null);
            }
            obj.insert("per_horizon".into(), json!([]));
            obj.insert("residence".into(), json!([]));
            obj.insert("certify_note".into(), json!(a.certify_note));
        }
    }
    if let Some(ctrl) = &a.control {
        obj.insert(
            "control_residence".into(),
            json!({
                "epsilon": num(ctrl.epsilon),
                "per_horizon": ctrl.per_horizon.iter().map(|(t, m)| json!({"T": num(*t), "measure": num(*m)})).collect::<Vec<_>>(),
                "variation": num(ctrl.variation),
                "fraction_of_largest_horizon": num(ctrl.fraction),
                "bounded": ctrl.bounded,
            }),
        );
    }
    doc
}

/// Writes `contents` and records the path.
pub fn write_artifact(dir: &Path, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<(), PipelineError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| PipelineError::new(Stage::Output, None, format!("{}: {e}", path.display())))?;
    written.push(path);
    Ok(())
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut x, mut y) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
        for (a, b) in points {
            x = (x.0.min(a), x.1.max(a));
            y = (y.0.min(b), y.1.max(b));
        }
        let widen = |r: (f64, f64)| if r.1 - r.0 > 0.0 { r } else { (r.0 - 1.0, r.0 + 1.0) };
        Self { x: widen(x), y: widen(y) }
    }

    fn map(&self, (a, b): (f64, f64)) -> (f64, f64) {
        let sx = PAD + (a - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD);
        let sy = H - PAD - (b - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD);
        (sx, sy)
    }
}

/// Minimal line chart; one polyline per series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let frame = Frame::fit(series.iter().flat_map(|(_, pts)| pts.iter().copied()));
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{x_label}</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (v, anchor, (px, py)) in [
        (frame.x.0, "start", (PAD, H - PAD + 14.0)),
        (frame.x.1, "end", (W - PAD, H - PAD + 14.0)),
    ] {
        let _ = writeln!(s, r#"<text x="{px}" y="{py}" text-anchor="{anchor}" font-family="sans-serif" font-size="10">{v:.3}</text>"#);
    }
    for (v, py) in [(frame.y.0, H - PAD), (frame.y.1, PAD + 10.0)] {
        let _ = writeln!(s, r#"<text x="{}" y="{py}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.3}</text>"#, PAD - 4.0);
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut path = String::new();
        for (k, &p) in pts.iter().enumerate() {
            let (x, y) = frame.map(p);
            let _ = write!(path, "{}{x:.2},{y:.2}", if k == 0 { "" } else { " " });
        }
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11" fill="{color}">{name}</text>"#,
            W - PAD - 6.0,
            PAD + 16.0 + 14.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes per-horizon trajectory CSVs, the certificate and the SVG views.
pub fn write_run(cfg: &ProblemConfig, a: &Analysis, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::new(Stage::Output, None, format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    let mut dist_series = Vec::new();
    let mut phase_series = Vec::new();
    for run in &a.runs {
        let sol = &run.solution;
        let label = horizon_label(sol.horizon);
        write_artifact(dir, &format!("trajectory_T{label}.csv"), &trajectory_csv(sol, &a.optimum, cfg.grid), &mut written)?;
        let profile = distance_profile(sol, &a.optimum, cfg.grid.min(1000));
        dist_series.push((format!("T = {label}"), profile.times.iter().copied().zip(profile.values.iter().copied()).collect()));
        if sol.state_dim() == 1 {
            let pts = (0..=cfg.grid.min(1000))
                .map(|k| {
                    let w = sol.point(sol.horizon * k as f64 / cfg.grid.min(1000) as f64);
                    (w[0], w[1])
                })
                .collect();
            phase_series.push((format!("T = {label}"), pts));
        }
    }
    let cert = certificate_json(cfg, a);
    let text = serde_json::to_string_pretty(&cert).map_err(|e| PipelineError::new(Stage::Output, None, e))?;
    write_artifact(dir, "certificate.json", &(text + "\n"), &mut written)?;
    write_artifact(dir, "distance.svg", &line_chart("distance to steady optimum", "t", "d(t)", &dist_series), &mut written)?;
    if !phase_series.is_empty() {
        write_artifact(dir, "phase.svg", &line_chart("trajectories in the (x, p) plane", "x", "p", &phase_series), &mut written)?;
    }
    Ok(written)
}

pub fn portrait_csv(branches: &[(usize, ManifoldBranch<f64>)]) -> String {
    let mut s = String::from("equilibrium,kind,sign,stop,x,p\n");
    for (eq, b) in branches {
        let kind = match b.kind {
            ManifoldKind::Stable => "stable",
            ManifoldKind::Unstable => "unstable",
        };
        let stop = match b.stop {
            BranchStop::ArcBudget => "arc_budget",
            BranchStop::LeftWindow => "left_window",
            BranchStop::Stalled => "stalled",
            BranchStop::TimeLimit => "time_limit",
            BranchStop::IntegrationFailed => "integration_failed",
        };
        for z in &b.points {
            let _ = writeln!(s, "{eq},{kind},{},{stop},{},{}", b.sign, fmt_f64(z[0]), fmt_f64(z[1]));
        }
    }
    s
}
