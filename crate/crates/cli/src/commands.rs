use brw_core::corridor::{
    dp_corridor, fit_exponent, heavy_tail_gap, mc_corridor, mogulskii_exponent,
};
use brw_core::forward_sim::{exact_cmd, CmdValue};
use brw_core::laws::{boundary_residuals, integrability_functional, monte_carlo_moments, LawConfig};
use brw_core::par::par_replicates;
use brw_core::rng::{ModuleId, StreamKey};
use brw_core::spine::{
    estimate_first_moment_zn, many_to_one_check, many_to_one_forward_exact, many_to_one_spine_exact, Functional,
    Method,
};
use brw_core::stats::EstimateReport;
use brw_core::tail::{nonintegrable_contrast, tail_curve, TailCurve, TailMode};
use brw_core::{CorridorSpec, Error, ExponentFit, Mark};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::output::Table;
use crate::parse;
use crate::row;

pub struct Outcome {
    pub table: Table,
    pub summary: Option<serde_json::Value>,
    pub laws: Vec<(&'static str, LawConfig)>,
}

impl Outcome {
    fn new(table: Table) -> Self {
        Outcome { table, summary: None, laws: Vec::new() }
    }

    fn summary(mut self, value: impl Serialize) -> Self {
        self.summary = Some(serde_json::to_value(value).expect("summary serializes"));
        self
    }

    fn law(mut self, role: &'static str, cfg: LawConfig) -> Self {
        self.laws.push((role, cfg));
        self
    }
}

pub enum Failure {
    /// Bad flags, config files or parameters: exit 2.
    Config(String),
    /// Node budget exhausted: exit 3, with whatever was completed.
    Budget { message: String, partial: Option<Box<Outcome>> },
    /// Anything else: exit 1.
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::UnsupportedFamily(_) | Error::NoBoundarySolution(_) => {
                Failure::Config(e.to_string())
            }
            Error::BudgetExceeded { .. } => Failure::Budget { message: e.to_string(), partial: None },
            _ => Failure::Run(e.to_string()),
        }
    }
}

impl From<String> for Failure {
    fn from(msg: String) -> Self {
        Failure::Config(msg)
    }
}

type Res = std::result::Result<Outcome, Failure>;

pub fn execute(cli: &Cli) -> Res {
    let c = &cli.common;
    match &cli.command {
        Command::Laws(LawsCmd::Check(a)) => laws_check(a, c),
        Command::Simulate(SimulateCmd::Cmd(a)) => simulate_cmd(a, c),
        Command::Spine(SpineCmd::Check(a)) => spine_check(a, c),
        Command::Spine(SpineCmd::Zmean(a)) => spine_zmean(a, c),
        Command::Corridor(CorridorCmd::Dp(a)) => corridor_dp(a),
        Command::Corridor(CorridorCmd::Mc(a)) => corridor_mc(a, c),
        Command::Corridor(CorridorCmd::Fit(a)) => corridor_fit(a),
        Command::Corridor(CorridorCmd::Gap(a)) => corridor_gap(a),
        Command::Tail(TailCmd::Curve(a)) => tail_curve_cmd(a, c),
        Command::Tail(TailCmd::Contrast(a)) => tail_contrast(a, c),
    }
}

fn laws_check(a: &LawsCheck, c: &Common) -> Res {
    let path = a.config.as_ref().or(a.law.as_ref()).ok_or("a law config is required".to_string())?;
    let cfg = parse::law_config(path)?;
    let law = cfg.build_unchecked()?;
    let (r1, r2) = boundary_residuals(&law)?;
    let valid = law.validate().is_ok();
    let mut t = Table::new(&["quantity", "x", "value", "se"]);
    t.push(row!["residual_r1", None::<f64>, r1, 0.0]);
    t.push(row!["residual_r2", None::<f64>, r2, 0.0]);
    t.push(row!["sigma2", None::<f64>, law.sigma2(), 0.0]);
    t.push(row!["lambda_star", None::<f64>, law.lambda_star(), 0.0]);
    t.push(row!["mean_offspring", None::<f64>, law.mean_offspring(), 0.0]);
    t.push(row!["valid", None::<f64>, if valid { 1.0 } else { 0.0 }, 0.0]);
    for &x in &a.x {
        let v = integrability_functional(&law, x)?;
        t.push(row!["functional", v.x, v.value, v.se]);
    }
    let mut summary = json!({ "residuals": [r1, r2], "sigma2": law.sigma2(), "lambda_star": law.lambda_star(), "valid": valid });
    if a.draws > 0 {
        let key = StreamKey::new(c.seed, ModuleId::Laws);
        let m = monte_carlo_moments(&law, a.draws, key, c.seed);
        for (name, r) in [("mc_w1", &m.w1), ("mc_first", &m.first), ("mc_second", &m.second), ("mc_offspring", &m.offspring)] {
            t.push(row![name, None::<f64>, r.estimate, r.se]);
        }
        summary["monte_carlo"] = serde_json::to_value(&m).expect("serializes");
    }
    Ok(Outcome::new(t).summary(summary).law("law", cfg))
}

fn simulate_cmd(a: &SimulateArgs, c: &Common) -> Res {
    let (cfg, law) = parse::law(&a.law.law)?;
    if a.n == 0 || a.replicates == 0 {
        return Err(Failure::Config("--n and --replicates must be positive".into()));
    }
    let key = StreamKey::new(c.seed, ModuleId::ForwardSim);
    let results = par_replicates(key, a.replicates, |_, k| exact_cmd(&law, a.n, a.cap, k, c.budget_nodes));
    let mut t = Table::new(&["replicate", "L_n", "censored", "extinct", "nodes_expanded"]);
    let mut failed = 0usize;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => {
                let (v, censored) = match r.value {
                    CmdValue::Exact(v) => (v, false),
                    CmdValue::Censored(cap) => (cap, true),
                };
                t.push(row![i, v, censored, r.extinct_before_n, r.nodes_expanded]);
            }
            Err(Error::BudgetExceeded { .. }) => failed += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let out = Outcome::new(t).law("law", cfg);
    if failed > 0 {
        return Err(Failure::Budget {
            message: format!("{failed} of {} replicates exceeded {} nodes", a.replicates, c.budget_nodes),
            partial: Some(Box::new(out)),
        });
    }
    Ok(out)
}

fn spine_check(a: &SpineCheck, c: &Common) -> Res {
    let (cfg, law) = parse::law(&a.law.law)?;
    let f = Functional::parse(&a.functional)?;
    let key = StreamKey::new(c.seed, ModuleId::Spine);
    let check = many_to_one_check(&law, a.n, f, a.replicates, key, c.seed, c.budget_nodes)?;
    let mut t = Table::new(&["side", "estimate", "se", "replicates", "exact"]);
    t.push(row!["forward", check.lhs.estimate, check.lhs.se, check.lhs.replicates, false]);
    t.push(row!["spine", check.rhs.estimate, check.rhs.se, check.rhs.replicates, false]);
    let exact = |r: brw_core::Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UnsupportedFamily(_)) | Err(Error::StateExplosion { .. }) => Ok(None),
        Err(e) => Err(e),
    };
    let fwd = exact(many_to_one_forward_exact(&law, a.n, f))?;
    let spn = exact(many_to_one_spine_exact(&law, a.n, f))?;
    if let (Some(x), Some(y)) = (fwd, spn) {
        t.push(row!["forward_exact", x, 0.0, 0usize, true]);
        t.push(row!["spine_exact", y, 0.0, 0usize, true]);
    }
    let summary = json!({
        "forward": check.lhs,
        "spine": check.rhs,
        "agree_within_3se": check.agree_within(3.0),
        "forward_exact": fwd,
        "spine_exact": spn,
    });
    Ok(Outcome::new(t).summary(summary).law("law", cfg))
}

#[derive(Serialize)]
struct ZmeanSummary {
    estimate: f64,
    se: f64,
    log_over_n13: f64,
    target_exponent: f64,
    exact: bool,
}

fn spine_zmean(a: &SpineZmean, c: &Common) -> Res {
    let (cfg, law) = parse::law(&a.law.law)?;
    let method: Method = a.method.parse()?;
    let key = StreamKey::new(c.seed, ModuleId::Spine);
    let r = estimate_first_moment_zn(&law, a.lambda, a.delta, a.n, method, a.replicates, key, c.seed)?;
    let scale = (a.n as f64).cbrt();
    let s = ZmeanSummary {
        estimate: r.estimate,
        se: r.se,
        log_over_n13: r.ln_estimate / scale,
        target_exponent: a.lambda - law.lambda_star() * (1.0 + a.delta).cbrt(),
        exact: r.exact,
    };
    let mut t = Table::new(&["n", "lambda", "delta", "method", "estimate", "se", "log_over_n13", "target_exponent"]);
    t.push(row![a.n, a.lambda, a.delta, a.method.as_str(), s.estimate, s.se, s.log_over_n13, s.target_exponent]);
    Ok(Outcome::new(t).summary(s).law("law", cfg))
}

fn corridor_spec(a: &CorridorArgs) -> std::result::Result<CorridorSpec, Failure> {
    let spec = CorridorSpec::new(parse::band(&a.band)?, parse::an_rule(&a.an_rule)?, parse::walk(&a.walk)?, a.start)?;
    let spec = spec.with_mark(parse::mark(&a.mark)?, parse::threshold(&a.threshold)?);
    spec.validate()?;
    if a.n_grid.contains(&0) {
        return Err(Failure::Config("--n-grid entries must be positive".into()));
    }
    Ok(spec)
}

const CORRIDOR_COLUMNS: [&str; 6] = ["n", "a_n", "p", "log_p", "scaled_log_p", "max_states"];

fn corridor_dp(a: &CorridorArgs) -> Res {
    let spec = corridor_spec(a)?;
    let rows: Vec<_> = a.n_grid.par_iter().map(|&n| dp_corridor(&spec, n)).collect::<brw_core::Result<_>>()?;
    let mut t = Table::new(&CORRIDOR_COLUMNS);
    for r in &rows {
        t.push(row![r.n, r.a_n, r.p(), r.ln_p, r.scaled(), r.max_states]);
    }
    Ok(Outcome::new(t))
}

fn corridor_mc(a: &CorridorMc, c: &Common) -> Res {
    let spec = corridor_spec(&a.corridor)?;
    let key = StreamKey::new(c.seed, ModuleId::Corridor);
    let mut t = Table::new(&["n", "a_n", "p", "se", "log_p", "scaled_log_p"]);
    let mut reports: Vec<EstimateReport> = Vec::new();
    for &n in &a.corridor.n_grid {
        let r = mc_corridor(&spec, n, a.replicates, key.derive(n as u64), c.seed)?;
        let a_n = spec.scaling.a_n(n)?;
        let ln_p = r.estimate.ln();
        t.push(row![n, a_n, r.estimate, r.se, ln_p, ln_p * a_n * a_n / n as f64]);
        reports.push(r);
    }
    Ok(Outcome::new(t).summary(reports))
}

fn fit_rows(t: &mut Table, variant: Option<&str>, fit: &ExponentFit) {
    for p in &fit.points {
        let mut r = row![p.n, p.a_n, p.ln_p.exp(), p.ln_p, p.scaled, p.mark_penalty];
        if let Some(v) = variant {
            r.insert(0, v.into());
        }
        t.push(r);
    }
}

fn corridor_fit(a: &CorridorArgs) -> Res {
    let spec = corridor_spec(a)?;
    let fit = fit_exponent(&spec, &a.n_grid)?;
    let reference = mogulskii_exponent(&spec.band, spec.walk.variance())?;
    let mut t = Table::new(&["n", "a_n", "p", "log_p", "scaled_log_p", "mark_penalty"]);
    fit_rows(&mut t, None, &fit);
    Ok(Outcome::new(t).summary(json!({ "fit": fit, "mogulskii": reference })))
}

fn corridor_gap(a: &CorridorArgs) -> Res {
    let heavy = corridor_spec(a)?;
    let nice = heavy.clone().with_mark(Mark::None, heavy.threshold);
    let gap = heavy_tail_gap(&nice, &heavy, &a.n_grid)?;
    let mut t = Table::new(&["variant", "n", "a_n", "p", "log_p", "scaled_log_p", "mark_penalty"]);
    fit_rows(&mut t, Some("nice"), &gap.nice);
    fit_rows(&mut t, Some("heavy"), &gap.heavy);
    Ok(Outcome::new(t).summary(gap))
}

fn tail_curve_cmd(a: &TailCurveArgs, c: &Common) -> Res {
    let (cfg, law) = parse::law(&a.law.law)?;
    let mode = match a.mode.as_str() {
        "direct" => TailMode::Direct { replicates: a.replicates, budget_nodes: c.budget_nodes },
        "moment_dp" | "moment-dp" => TailMode::MomentDp { delta: a.delta },
        other => return Err(Failure::Config(format!("--mode: unknown mode {other:?} (direct|moment_dp)"))),
    };
    let key = StreamKey::new(c.seed, ModuleId::Tail);
    let scale = (a.n as f64).cbrt();
    let mut t = Table::new(&["lambda", "quantity", "estimate", "se_or_exact", "target"]);
    // one λ at a time so a budget stop keeps the finished rows
    let mut merged: Option<TailCurve> = None;
    for &lambda in &a.lambdas {
        match tail_curve(&law, a.n, &[lambda], mode, key, c.seed) {
            Ok(curve) => {
                for r in &curve.rows {
                    if let (Some(p), Some(d)) = (&r.probability, r.direct) {
                        t.push(row![lambda, "probability", p.estimate, fmt_se(p.se), None::<f64>]);
                        t.push(row![lambda, "log_p_over_n13", d, fmt_se(p.se / (p.estimate * scale)), r.target]);
                    }
                    if let (Some(lo), Some(ez), Some(up)) = (r.lower_proxy, r.ln_first_moment, r.upper_proxy) {
                        t.push(row![lambda, "lower_proxy", lo, "exact", r.lower_target]);
                        t.push(row![lambda, "log_first_moment_over_n13", ez, "exact", r.lower_target]);
                        t.push(row![lambda, "upper_proxy", up, "exact", r.target]);
                    }
                }
                match &mut merged {
                    Some(m) => m.rows.extend(curve.rows),
                    None => merged = Some(curve),
                }
            }
            Err(Error::BudgetExceeded { limit, completed, partial }) => {
                if let Some(p) = partial {
                    t.push(row![lambda, "probability_partial", p.estimate, fmt_se(p.se), None::<f64>]);
                }
                let message = format!("lambda {lambda}: {completed} replicates finished within {limit} nodes");
                let out = Outcome::new(t).summary(&merged).law("law", cfg);
                return Err(Failure::Budget { message, partial: Some(Box::new(out)) });
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Outcome::new(t).summary(merged).law("law", cfg))
}

fn fmt_se(se: f64) -> String {
    crate::output::fmt17(se)
}

fn tail_contrast(a: &TailContrastArgs, c: &Common) -> Res {
    let (nice_cfg, nice) = parse::law(&a.nice)?;
    let (heavy_cfg, heavy) = parse::law(&a.heavy)?;
    let key = StreamKey::new(c.seed, ModuleId::Tail);
    let rep = nonintegrable_contrast(&nice, &heavy, &a.n_grid, a.a, a.band_width, a.replicates, key, c.seed)?;
    let mut t = Table::new(&[
        "law",
        "n",
        "a_n",
        "tau",
        "p_unconstrained",
        "ratio",
        "ratio_se",
        "deficit",
        "deficit_se",
        "predicted",
        "scaled_unconstrained",
        "mogulskii",
    ]);
    for r in &rep.rows {
        t.push(row![
            r.law.as_str(),
            r.n,
            r.a_n,
            r.tau,
            r.unconstrained.estimate,
            r.ratio,
            r.ratio_se,
            r.deficit,
            r.deficit_se,
            r.predicted,
            r.scaled_unconstrained,
            r.mogulskii
        ]);
    }
    Ok(Outcome::new(t).summary(rep).law("nice", nice_cfg).law("heavy", heavy_cfg))
}
