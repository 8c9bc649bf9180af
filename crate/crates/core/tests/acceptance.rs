//! Acceptance run: one PASS/FAIL line per criterion, then a determinism
//! rerun under a different thread count. Exits non-zero on any failure not
//! listed in `EXPECTED_FAILURES`.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use brw_core::corridor::{dp_corridor, fit_exponent, heavy_tail_gap, mogulskii_exponent, BandShape, KnotBand};
use brw_core::corridor::{PiecewiseLinear, ProfileBand, Threshold};
use brw_core::forward_sim::{cmd_trend, estimate_cmd_cdf, DEFAULT_BUDGET_NODES};
use brw_core::laws::{
    boundary_residuals, make_gaussian_binary, make_heavy_mixture, make_lattice_binary, monte_carlo_moments,
    monte_carlo_moments_tail_exact, Family, LawConfig, ReproductionLaw, TableEntryConfig,
};
use brw_core::rng::{ModuleId, StreamKey};
use brw_core::spine::{
    many_to_one_check, many_to_one_forward_exact, many_to_one_spine_exact, spine_step_moments, Functional,
    LatticeSpine, MomentCorridor, TreeTable,
};
use brw_core::tail::{lambda_star, tail_curve, TailMode};
use brw_core::{CorridorSpec, Mark, Scaling, Walk};

const SEED: u64 = 1;

/// Criterion 7 asks for `log E[Z_n] / n^{1/3}` at `n = 10^5` to sit near
/// `λ - λ*(1+δ)^{1/3}`, but for a bounded law `E[Z_n]` does not decay at
/// that rate. Criterion 10 asks for strictly increasing medians, but the
/// exact population medians of `L_n / n^{1/3}` on the lattice are not
/// monotone at `n = 27, 64, 125`. Both are analysed in the README.
const EXPECTED_FAILURES: &[usize] = &[7, 10];

struct Verdict {
    pass: bool,
    detail: String,
    /// Everything the criterion computed, for the determinism rerun.
    record: String,
}

fn verdict(pass: bool, detail: String, record: String) -> Verdict {
    Verdict { pass, detail, record }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn user_table() -> ReproductionLaw {
    let h = 2f64.ln();
    LawConfig::UserTable {
        configurations: vec![
            TableEntryConfig { probability: "1/4".into(), displacements: vec![h, -h] },
            TableEntryConfig { probability: "3/4".into(), displacements: vec![h] },
        ],
    }
    .build()
    .expect("user table")
}

fn heavy() -> ReproductionLaw {
    make_heavy_mixture(0.05, 2.0, 1.0).expect("heavy mixture")
}

fn families() -> Vec<(&'static str, ReproductionLaw)> {
    vec![("gaussian", make_gaussian_binary()), ("lattice", make_lattice_binary()), ("heavy", heavy())]
}

/// Burst draws with `Y` above this are replaced by their exact expectation
/// in the heavy-mixture estimator.
const Y_CUT: f64 = 8.0;

fn c1() -> Verdict {
    let start = Instant::now();
    let mut ok = true;
    let mut record = String::new();
    let mut worst = 0.0f64;
    let mut worst_z = 0.0f64;
    let mut plain_heavy = (0.0, 0.0);
    for (i, (name, law)) in families().into_iter().enumerate() {
        let (r1, r2) = boundary_residuals(&law).expect("residuals");
        worst = worst.max(r1.abs()).max(r2.abs());
        ok &= r1.abs() < 1e-9 && r2.abs() < 1e-9;
        let key = StreamKey::new(SEED, ModuleId::Laws).derive(i as u64);
        let m = monte_carlo_moments_tail_exact(&law, 1_000_000, key, SEED, Y_CUT).expect("moments");
        let z1 = (m.w1.estimate - 1.0).abs() / m.w1.se;
        let z2 = m.first.estimate.abs() / m.first.se;
        worst_z = worst_z.max(z1).max(z2);
        ok &= z1 <= 3.0 && z2 <= 3.0;
        record += &format!("{name} {r1:?} {r2:?} {m:?}\n");
        if matches!(law.family(), Family::HeavyMixture(_)) {
            let p = monte_carlo_moments(&law, 1_000_000, key, SEED);
            plain_heavy = ((p.w1.estimate - 1.0) / p.w1.se, p.first.estimate / p.first.se);
            record += &format!("{p:?}\n");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 30.0;
    verdict(
        ok,
        format!(
            "max residual {worst:.1e}, max MC z {worst_z:.2} (heavy burst tail Y > {Y_CUT} exact; \
             plain heavy MC z = {:.2}, {:.2} with infinite-variance W1), {secs:.1}s (< 30s)",
            plain_heavy.0, plain_heavy.1
        ),
        record,
    )
}

/// `P̂(w₁ = u | ℱ₁) = e^{-V(u)} / W₁` from the four lattice configurations.
fn lattice_spine_enumeration(law: &ReproductionLaw) -> f64 {
    let Family::LatticeBinary(l) = law.family() else { unreachable!() };
    let atoms = law.spine_atoms().expect("atoms");
    let mut worst = 0.0f64;
    let configs: Vec<([i64; 2], f64)> = [(1, l.p_up), (-1, l.p_down)]
        .iter()
        .flat_map(|&(a, pa)| [(1, l.p_up), (-1, l.p_down)].map(|(b, pb)| ([a, b], pa * pb)))
        .collect();
    for (steps, _) in &configs {
        let w1: f64 = steps.iter().map(|&k| (-(k as f64) * l.step).exp()).sum();
        let xi = w1.ln();
        let class: f64 = atoms.iter().filter(|a| (a.xi - xi).abs() < 1e-12).map(|a| a.probability).sum();
        for &k in steps {
            let expect = steps.iter().filter(|&&j| j == k).count() as f64 * (-(k as f64) * l.step).exp() / w1;
            let atom = atoms.iter().find(|a| a.step == k && (a.xi - xi).abs() < 1e-12).expect("atom present");
            worst = worst.max((atom.probability / class - expect).abs());
        }
    }
    // joint masses p_c e^{-V} summed over configurations sharing (step, ξ)
    for a in &atoms {
        let joint: f64 = configs
            .iter()
            .filter(|(s, _)| {
                let w1: f64 = s.iter().map(|&k| (-(k as f64) * l.step).exp()).sum();
                (w1.ln() - a.xi).abs() < 1e-12
            })
            .map(|(s, p)| s.iter().filter(|&&k| k == a.step).count() as f64 * p * (-(a.step as f64) * l.step).exp())
            .sum();
        worst = worst.max((joint - a.probability).abs());
    }
    worst
}

fn c2() -> Verdict {
    let mut ok = true;
    let mut record = String::new();
    let mut worst_z = 0.0f64;
    let mut laws = families();
    laws.push(("user-table", user_table()));
    for (i, (name, law)) in laws.iter().enumerate() {
        let m = spine_step_moments(law, 100_000, StreamKey::new(SEED, ModuleId::Spine).derive(i as u64), SEED);
        let zm = m.mean.estimate.abs() / m.mean.se;
        let zv = (m.variance - law.sigma2()).abs() / m.variance_se;
        worst_z = worst_z.max(zm).max(zv);
        ok &= zm <= 3.0 && zv <= 3.0;
        record += &format!("{name} {m:?}\n");
    }
    let enum_err = lattice_spine_enumeration(&make_lattice_binary());
    ok &= enum_err <= 1e-12;
    record += &format!("{enum_err:?}\n");
    verdict(ok, format!("max z {worst_z:.2} over 4 families, n = 1 enumeration error {enum_err:.1e}"), record)
}

fn c3() -> Verdict {
    let start = Instant::now();
    let mut ok = true;
    let mut record = String::new();
    let mut worst_z = 0.0f64;
    let functionals = ["constant", "max-penalty", "corridor:-1:2"];
    let laws = [("gaussian", make_gaussian_binary()), ("lattice", make_lattice_binary()), ("user-table", user_table())];
    for (i, (name, law)) in laws.iter().enumerate() {
        for (j, f) in functionals.iter().enumerate() {
            let f = Functional::parse(f).expect("functional");
            for n in 1..=6 {
                let key = StreamKey::new(SEED, ModuleId::Spine).derive(100 + i as u64).derive(j as u64).derive(n as u64);
                let m = many_to_one_check(law, n, f, 100_000, key, SEED, DEFAULT_BUDGET_NODES).expect("many-to-one");
                let se = (m.lhs.se * m.lhs.se + m.rhs.se * m.rhs.se).sqrt();
                let z = (m.lhs.estimate - m.rhs.estimate).abs() / se;
                worst_z = worst_z.max(if se > 0.0 { z } else { 0.0 });
                ok &= m.agree_within(3.0);
                record += &format!("{name} {f:?} {n} {m:?}\n");
            }
        }
    }
    let corridor = Functional::parse("corridor:-1:2").expect("functional");
    let mut worst_exact = 0.0f64;
    for n in 1..=6 {
        let law = make_lattice_binary();
        let a = many_to_one_forward_exact(&law, n, corridor).expect("forward");
        let b = many_to_one_spine_exact(&law, n, corridor).expect("spine");
        worst_exact = worst_exact.max((a - b).abs() / a.abs().max(1.0));
    }
    ok &= worst_exact <= 1e-12;
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    verdict(
        ok,
        format!("54 checks, max z {worst_z:.2}; exact corridor routes differ by {worst_exact:.1e}; {secs:.1}s (< 120s)"),
        record,
    )
}

fn lattice_spec(band: KnotBand<f64>, h: f64, steps: Vec<(i64, f64)>) -> CorridorSpec {
    CorridorSpec::new(BandShape::Knots(band), Scaling::Fixed(1.0), Walk::Lattice { h, steps }, 0.0).expect("spec")
}

fn enumerate(band: &KnotBand<f64>, h: f64, steps: &[(i64, f64)], n: usize, j: usize, k: i64) -> f64 {
    let s = j as f64 / n as f64;
    let x = k as f64 * h;
    if x < band.lower.eval(s) || x > band.upper.eval(s) {
        return 0.0;
    }
    if j == n {
        return 1.0;
    }
    steps.iter().map(|&(d, p)| p * enumerate(band, h, steps, n, j + 1, k + d)).sum()
}

fn c4() -> Verdict {
    let unit = lattice_spec(KnotBand::constant(-1.0, 1.0).unwrap(), 1.0, vec![(-1, 0.5), (1, 0.5)]);
    let p2 = dp_corridor(&unit, 2).unwrap().p();
    let p4 = dp_corridor(&unit, 4).unwrap().p();
    let mut ok = p2 == 0.5 && p4 == 0.25;
    let walks: Vec<(f64, Vec<(i64, f64)>)> = vec![
        (1.0, vec![(-1, 0.5), (1, 0.5)]),
        (0.7, vec![(-1, 0.25), (0, 0.5), (1, 0.25)]),
        (1.3, vec![(-2, 0.1), (-1, 0.2), (0, 0.4), (1, 0.2), (2, 0.1)]),
    ];
    let bands: Vec<KnotBand<f64>> = vec![
        KnotBand::constant(-2.0, 2.0).unwrap(),
        KnotBand::constant(-0.5, 6.0).unwrap(),
        KnotBand::new(
            PiecewiseLinear::new(vec![(0.0, -1.0), (0.5, -4.0), (1.0, 0.5)]).unwrap(),
            PiecewiseLinear::new(vec![(0.0, 3.0), (0.5, 1.0), (1.0, 6.0)]).unwrap(),
        )
        .unwrap(),
        KnotBand::new(
            PiecewiseLinear::new(vec![(0.0, -0.5), (1.0, -9.0)]).unwrap(),
            PiecewiseLinear::new(vec![(0.0, 0.5), (1.0, 9.0)]).unwrap(),
        )
        .unwrap(),
    ];
    let mut cases = 0;
    let mut worst = 0.0f64;
    for (h, steps) in &walks {
        let max_n = if steps.len() == 5 { 8 } else { 12 };
        for band in &bands {
            for n in 1..=max_n {
                let dp = dp_corridor(&lattice_spec(band.clone(), *h, steps.clone()), n).unwrap();
                if dp.max_states > 20 {
                    continue;
                }
                let brute = enumerate(band, *h, steps, n, 0, 0);
                let err = if brute == 0.0 { dp.p().abs() } else { (dp.p() - brute).abs() / brute };
                worst = worst.max(err);
                cases += 1;
            }
        }
    }
    ok &= worst <= 1e-12 && cases > 0;
    verdict(ok, format!("P(2) = {p2}, P(4) = {p4}; {cases} enumerated instances, max rel error {worst:.1e}"), String::new())
}

fn c5() -> Verdict {
    let start = Instant::now();
    let h = 2f64.acosh();
    let spec = CorridorSpec::new(
        BandShape::Knots(KnotBand::constant(0.0, 1.0).unwrap()),
        Scaling::FourthRoot,
        Walk::symmetric(h),
        0.5,
    )
    .unwrap();
    let grid: Vec<usize> = (0..7).map(|k| 15_625 << k).collect();
    let fit = fit_exponent(&spec, &grid).expect("fit");
    let target = -PI * PI * h * h / 2.0;
    let err = rel(fit.fitted_limit, target);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        err <= 0.15 && secs < 300.0,
        format!("fitted {:.4} vs {target:.4} ({:.2}% off, tol 15%), n up to {}, {secs:.1}s (< 300s)", fit.fitted_limit, 100.0 * err, grid[6]),
        format!("{fit:?}"),
    )
}

fn c6() -> Verdict {
    let mut worst = 0.0f64;
    for sigma2 in [0.25, 0.4805, 1.0, 1.3169578969248166, 2.0] {
        let ls: f64 = lambda_star(sigma2);
        for lambda in [-1.0, 0.0, 1.5, ls] {
            let band = ProfileBand { lambda, lambda_star: ls, delta: 0.0 };
            let e = mogulskii_exponent(&band, sigma2).expect("exponent");
            worst = worst.max((e + ls).abs());
        }
    }
    verdict(worst <= 1e-10, format!("max |exponent + λ*| = {worst:.1e} (tol 1e-10)"), String::new())
}

fn c7() -> Verdict {
    let start = Instant::now();
    let law = make_lattice_binary();
    let (lambda, delta, n) = (2.0, 0.05, 100_000usize);
    let scale = (n as f64).cbrt();
    let spine = LatticeSpine::new(&law).expect("lattice");
    let c = MomentCorridor::new(&law, lambda, delta, n).expect("corridor");
    let value = spine.ln_first_moment_zn(&c).expect("first moment") / scale;
    let target = lambda - law.lambda_star() * (1.0 + delta).cbrt();
    let err = rel(value, target);
    let curve = tail_curve(&law, n, &[lambda], TailMode::MomentDp { delta }, StreamKey::new(SEED, ModuleId::Tail), SEED)
        .expect("curve");
    let lower = curve.rows[0].lower_proxy.expect("lower proxy");
    let secs = start.elapsed().as_secs_f64();
    verdict(
        err <= 0.15 && secs < 600.0,
        format!(
            "log E[Z_n]/n^(1/3) = {value:.5} vs {target:.5} ({:.0}% off, tol 15%); \
             f(1) + log P(spine corridor)/n^(1/3) = {lower:.5} ({:.1}% off); {secs:.1}s",
            100.0 * err,
            100.0 * rel(lower, target)
        ),
        format!("{value:?} {curve:?}"),
    )
}

fn c8() -> Verdict {
    let nice = CorridorSpec::new(
        BandShape::Knots(KnotBand::constant(0.0, 1.0).unwrap()),
        Scaling::CubeRoot,
        Walk::symmetric(0.25),
        0.5,
    )
    .unwrap();
    let grid: Vec<usize> = (0..6).map(|k| 1000 << k).collect();
    let heavy = nice.clone().with_mark(Mark::TwoPoint { c: 1.0 }, Threshold::ScaledAn(10.0));
    let gap = heavy_tail_gap(&nice, &heavy, &grid).expect("gap");
    let zero = nice.clone().with_mark(Mark::TwoPoint { c: 0.0 }, Threshold::ScaledAn(10.0));
    let fit_zero = fit_exponent(&zero, &grid).expect("fit");
    let identical = fit_zero == gap.nice
        && fit_zero.fitted_limit.to_bits() == gap.nice.fitted_limit.to_bits()
        && fit_zero.slope.to_bits() == gap.nice.slope.to_bits();
    let err = rel(gap.gap, -1.0);
    verdict(
        err <= 0.2 && identical,
        format!("gap {:.4} vs -1 ({:.2}% off, tol 20%); c = 0 fit bit-identical: {identical}", gap.gap, 100.0 * err),
        format!("{gap:?}"),
    )
}

fn c9() -> Verdict {
    let law = user_table();
    let table = TreeTable::new(&law).expect("table");
    let mut ok = true;
    let mut record = String::new();
    let mut points = 0;
    let mut mc_points = 0;
    for n in 1..=8usize {
        let b_scale = (n as f64).cbrt();
        for (li, lambda) in [0.5, 1.0, 1.5, 1.9].into_iter().enumerate() {
            let b = lambda * b_scale;
            let p = table.cmd_cdf(n, b).expect("cdf");
            let upper = table.union_bound(&MomentCorridor::new(&law, lambda, 0.0, n).unwrap()).expect("union");
            let mut lowest = f64::INFINITY;
            for delta in [0.05, 0.5, 1.5] {
                let c = MomentCorridor::new(&law, lambda, delta, n).unwrap();
                let e1 = table.first_moment(&c).expect("first");
                let e2 = table.second_moment(&c).expect("second");
                let pz = table.prob_positive(&c).expect("positive");
                let lower = if e2 > 0.0 { e1 * e1 / e2 } else { 0.0 };
                let slack = 1e-12;
                ok &= lower <= pz * (1.0 + slack) && pz <= p * (1.0 + slack) && p <= upper * (1.0 + slack);
                lowest = lowest.min(lower);
                record += &format!("{n} {lambda} {delta} {e1:?} {e2:?} {pz:?} {p:?} {upper:?}\n");
                points += 1;
            }
            let key = StreamKey::new(SEED, ModuleId::Tail).derive(n as u64).derive(li as u64);
            let mc = estimate_cmd_cdf(&law, n, b, 4000, key, SEED, DEFAULT_BUDGET_NODES).expect("mc");
            let tol = 3.0 * mc.se.max(1.0 / 4000.0);
            ok &= mc.estimate >= lowest - tol && mc.estimate <= upper + tol;
            record += &format!("{mc:?}\n");
            mc_points += 1;
        }
    }
    verdict(ok, format!("{points} (n, λ, δ) points bracketed exactly; {mc_points} Monte Carlo estimates inside"), record)
}

fn c10() -> Verdict {
    let law = make_lattice_binary();
    let ns = [27, 64, 125];
    let rows = cmd_trend(&law, &ns, 0.5, 200, StreamKey::new(SEED, ModuleId::ForwardSim), DEFAULT_BUDGET_NODES)
        .expect("trend");
    let medians: Vec<f64> = rows.iter().map(|r| r.quantile).collect();
    let ls = law.lambda_star();
    let ok = medians.windows(2).all(|w| w[0] < w[1]) && medians.iter().all(|&m| m < ls + 0.1);
    // exact law of L_n on the lattice {kh}: population medians and means
    let h = law.lattice_step().expect("lattice");
    let table = TreeTable::new(&law).expect("table");
    let mut exact_medians = Vec::new();
    let mut exact_means = Vec::new();
    for &n in &ns {
        let scale = (n as f64).cbrt();
        let (mut mean, mut prev, mut median) = (0.0, 0.0, f64::NAN);
        for k in 0..=n as i64 {
            let x = k as f64 * h;
            let f = table.cmd_cdf(n, x + 1e-9 * h).expect("cdf");
            mean += (f - prev) * x / scale;
            if median.is_nan() && f >= 0.5 {
                median = x / scale;
            }
            prev = f;
            if 1.0 - f < 1e-15 {
                break;
            }
        }
        exact_medians.push(median);
        exact_means.push(mean);
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    verdict(
        ok,
        format!(
            "sample medians [{}], bound λ* + 0.1 = {:.4}; exact medians [{}], exact means [{}]",
            fmt(&medians),
            ls + 0.1,
            fmt(&exact_medians),
            fmt(&exact_means)
        ),
        format!("{rows:?}"),
    )
}

type Criterion = fn() -> Verdict;

const CRITERIA: [(usize, Criterion); 10] =
    [(1, c1), (2, c2), (3, c3), (4, c4), (5, c5), (6, c6), (7, c7), (8, c8), (9, c9), (10, c10)];

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool")
}

fn main() -> ExitCode {
    // libtest passes flags such as --nocapture; nothing here uses them
    let wide = pool(4);
    let mut failures = Vec::new();
    let mut records = Vec::new();
    let mut elapsed = Duration::ZERO;
    for (id, run) in CRITERIA {
        let start = Instant::now();
        let v = wide.install(run);
        elapsed += start.elapsed();
        let tag = if v.pass {
            "PASS"
        } else if EXPECTED_FAILURES.contains(&id) {
            "FAIL (known)"
        } else {
            "FAIL"
        };
        println!("criterion {id}: {tag}: {}", v.detail);
        if !v.pass && !EXPECTED_FAILURES.contains(&id) {
            failures.push(id);
        }
        records.push((id, v.record));
    }

    let narrow = pool(1);
    let mut differing = Vec::new();
    for ((id, run), (_, first)) in CRITERIA.iter().zip(&records) {
        let again = narrow.install(run);
        if again.record != *first {
            differing.push(*id);
        }
    }
    let ok = differing.is_empty();
    println!(
        "criterion 11: {}: criteria 1-10 rerun on 1 thread after 4 threads; differing outputs: {differing:?}",
        if ok { "PASS" } else { "FAIL" }
    );
    if !ok {
        failures.push(11);
    }
    println!("first pass {:.1}s", elapsed.as_secs_f64());
    if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {failures:?}");
        ExitCode::FAILURE
    }
}
