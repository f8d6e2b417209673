//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a single test so that the lines come out in order; the test fails
//! at the end if any criterion failed.

use std::fs;
use std::time::{Duration, Instant};

use hypoparam::coefficients::CoefficientSet;
use hypoparam::experiments::{
    centering_experiment, kolmogorov_experiment, mollify_experiment, scaling_experiment, solve_experiment,
    uniqueness_experiment, CenteringConfig, ExperimentOutput, KolmogorovConfig, MollifyConfig, ScalingConfig,
    SolveConfig, SourceKind, UniquenessConfig,
};
use hypoparam::parametrix::{
    derivative_diagnostics, holder_source, picard_solve, DiagnosticsReport, GridSpec, PicardConfig, QuadratureSpec,
};
use hypoparam::tolerances::Tolerances;

struct Outcome {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn report(list: &mut Vec<Outcome>, id: usize, title: &'static str, pass: bool, detail: String) {
    println!("{} criterion {id:>2} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
    list.push(Outcome { id, title, pass, detail });
}

fn value(out: &ExperimentOutput, name: &str) -> (bool, f64) {
    let c = out.check(name).unwrap_or_else(|| panic!("missing check {name}"));
    (c.pass, c.value.unwrap_or(f64::NAN))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

fn holder_solve(horizon: f64) -> (DiagnosticsReport, Vec<f64>, Duration) {
    let (out, elapsed) = timed(|| {
        let set = CoefficientSet::holder(0.8, 1).unwrap();
        let spec = GridSpec::square(horizon, 4.0, 25, 32);
        let cfg = PicardConfig { quad: QuadratureSpec { time_panels: 8, ..Default::default() }, ..Default::default() };
        let out = picard_solve(&set, &holder_source(0.8), &spec, &cfg).expect("solve succeeds");
        let diag = derivative_diagnostics(&out.solution, 0.3, 0, 7).unwrap();
        (diag, out.report.ratios)
    });
    (out.0, out.1, elapsed)
}

fn cli_csv(args: &[&str], threads: usize) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    let mut argv = vec!["hypoparam"];
    argv.extend_from_slice(args);
    argv.extend_from_slice(&["--out", &out]);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let code = pool.install(|| hypoparam::cli::run(argv.clone()));
    assert!(code == 0 || code == 1, "{argv:?} exited with {code}");
    fs::read(dir.path().join(format!("{}.csv", args[0]))).unwrap()
}

#[test]
fn acceptance() {
    let tol = Tolerances::default();
    let mut list = Vec::new();

    // 1-2: Kolmogorov oracle.
    let (kol, t_kol) = timed(|| kolmogorov_experiment(&KolmogorovConfig::default(), &tol).unwrap());
    let (p_l1, l1) = value(&kol, "histogram_l1");
    let (p_den, den) = value(&kol, "density_relative_error");
    report(
        &mut list,
        1,
        "Kolmogorov density",
        p_l1 && p_den && within(t_kol, 60),
        format!("histogram L1 {l1:.4} (< 0.05), closed-form rel err {den:.2e} (< 1e-6), {:.1}s", t_kol.as_secs_f64()),
    );
    let (p_cov, cov) = value(&kol, "covariance_excess_over_euler_bias");
    let (p_sig, sig) = value(&kol, "assembled_covariance_error");
    report(
        &mut list,
        2,
        "Kolmogorov covariance",
        p_cov && p_sig && within(t_kol, 60),
        format!("empirical rel err beyond Euler bias {cov:.2e} (< 0.03), assembled covariance err {sig:.2e} (< 1e-9)"),
    );

    // 3-6: frozen kernel properties.
    let (sc, t_sc) = timed(|| scaling_experiment(&ScalingConfig::default(), &tol).unwrap());
    let quick = within(t_sc, 30);
    let (p_sym, sym) = value(&sc, "symmetry_pointwise");
    let (p_int, int) = value(&sc, "symmetry_integral");
    report(
        &mut list,
        3,
        "x2/y2 symmetry",
        p_sym && p_int && quick,
        format!("pointwise {sym:.2e} (< 1e-10), y2 integral {int:.2e} (< 1e-6)"),
    );
    let (p_sl, sl) = value(&sc, "derivative_slopes");
    report(&mut list, 4, "anisotropic derivative scaling", p_sl && quick, format!("worst slope deviation {sl:.2e} over 11 orders (<= 0.05)"));
    let (p_bl, bl) = value(&sc, "inverse_block_slopes");
    report(&mut list, 5, "inverse covariance block scaling", p_bl && quick, format!("worst slope deviation {bl:.2e} (<= 0.05)"));
    let (p_res, res) = value(&sc, "frozen_backward_residual");
    report(&mut list, 6, "frozen backward equation residual", p_res && quick, format!("max relative residual {res:.2e} (< 1e-3)"));

    // 7: manufactured solution.
    let man_cfg = SolveConfig { source: SourceKind::Manufactured, horizon: 0.25, half_width: 3.0, ..Default::default() };
    let (man, t_man) = timed(|| solve_experiment(&man_cfg, &tol).unwrap());
    let (p_err, err) = value(&man, "manufactured_error");
    let (p_pde, pde) = value(&man, "pde_residual");
    let p_term = man.check("terminal_slice_zero").unwrap().pass;
    let p_fix = man.check("fixed_point_residual").unwrap().pass;
    report(
        &mut list,
        7,
        "manufactured solution",
        p_err && p_pde && p_term && p_fix && within(t_man, 300),
        format!(
            "max error {:.2e} of max|u*| (< 2%), PDE residual {:.2}% (< 5%), terminal slice zero {p_term}, fixed-point residual within 2 tol {p_fix}, {:.1}s",
            err,
            100.0 * pde,
            t_man.as_secs_f64()
        ),
    );

    // 8: contraction at T = 0.1.
    let (con, t_con) = timed(|| solve_experiment(&SolveConfig::default(), &tol));
    let (pass8, detail8) = match &con {
        Ok(out) => {
            let (p_ratio, ratio) = value(out, "contraction_ratio");
            let conv = out.check("converged").unwrap().pass;
            (
                p_ratio && conv && within(t_con, 300),
                format!("worst ratio {ratio:.2e} (< 0.5), converged {conv}, ratios {}, {:.1}s", out.details["contraction_ratios"], t_con.as_secs_f64()),
            )
        }
        Err(e) => (false, format!("solve failed: {e}")),
    };
    report(&mut list, 8, "Picard contraction", pass8, detail8);

    // 9: norms shrink with the horizon (also the T/4 versus T monotonicity).
    let (short, _, t_short) = holder_solve(0.125);
    let (long, _, t_long) = holder_solve(0.5);
    let pairs = [
        ("D1u", short.sup_d1u, long.sup_d1u),
        ("D2u", short.sup_d2u, long.sup_d2u),
        ("D1^2u", short.sup_d11u, long.sup_d11u),
        ("D1D2u", short.sup_d12u, long.sup_d12u),
        ("M(D2u)", short.holder_modulus, long.holder_modulus),
    ];
    let trend = pairs.iter().all(|(_, a, b)| a < b);
    let detail9 = pairs.iter().map(|(n, a, b)| format!("{n} {a:.3e} < {b:.3e}")).collect::<Vec<_>>().join(", ");
    report(
        &mut list,
        9,
        "derivative norms shrink with horizon",
        trend && within(t_short + t_long, 600),
        format!("{detail9}, {:.1}s", (t_short + t_long).as_secs_f64()),
    );

    // 10: centering identities.
    let (cen, t_cen) = timed(|| centering_experiment(&CenteringConfig::default(), &tol).unwrap());
    let (p_cen, worst) = value(&cen, "max_residual");
    report(&mut list, 10, "centering identities", p_cen && within(t_cen, 30), format!("max residual {worst:.2e} at 48^2 nodes (< 1e-3)"));

    // 11: mollification.
    let (mol, t_mol) = timed(|| mollify_experiment(&MollifyConfig::default(), &tol).unwrap());
    let (p_slope, dev) = value(&mol, "sup_error_slope");
    let p_box = mol.check("d1f2_box_containment").unwrap().pass;
    report(
        &mut list,
        11,
        "mollification",
        p_slope && p_box && within(t_mol, 60),
        format!("slope {:.4} (-0.8 +- 0.15, deviation {dev:.2e}), box containment {p_box}, {:.1}s", mol.details["slope"].as_f64().unwrap_or(f64::NAN), t_mol.as_secs_f64()),
    );

    // 12: pathwise uniqueness probe.
    let (uni, t_uni) = timed(|| uniqueness_experiment(&UniquenessConfig::default(), &tol).unwrap());
    let dec = uni.check("preset_strictly_decreasing").unwrap().pass;
    let (p_lip, lip) = value(&uni, "lipschitz_min_log2_ratio");
    report(
        &mut list,
        12,
        "shared-noise refinement",
        dec && p_lip && within(t_uni, 120),
        format!("holder levels strictly decreasing {dec}, Lipschitz min log2 ratio {lip:.3} (>= 0.5), {:.1}s", t_uni.as_secs_f64()),
    );

    // 13: byte-identical CSV on reruns and across worker counts.
    let commands: [&[&str]; 6] = [
        &["kolmogorov", "--seed", "11"],
        &["scaling", "--seed", "11"],
        &["uniqueness", "--seed", "11"],
        &["centering", "--seed", "11"],
        &["mollify", "--grid", "2001", "--levels", "3"],
        &["solve", "--T", "0.05", "--grid", "9", "--seed", "11"],
    ];
    let mut identical = true;
    let mut names = Vec::new();
    for args in commands {
        let a = cli_csv(args, 1);
        let b = cli_csv(args, 1);
        let c = cli_csv(args, 3);
        let same = !a.is_empty() && a == b && a == c;
        identical &= same;
        names.push(format!("{} {}", args[0], if same { "identical" } else { "DIFFERS" }));
    }
    report(&mut list, 13, "determinism", identical, names.join(", "));

    let failed: Vec<String> = list.iter().filter(|o| !o.pass).map(|o| format!("{} ({}): {}", o.id, o.title, o.detail)).collect();
    println!("{} of {} criteria pass", list.len() - failed.len(), list.len());
    assert!(failed.is_empty(), "failing criteria: {failed:#?}");
}
