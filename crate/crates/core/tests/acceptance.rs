//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use kronsep::operator::{empirical_covariance, restack, unstack};
use kronsep::pivot::quantile_table;
use kronsep::separability::{measures, MeasureKind, ProductOrientation};
use kronsep::synthetic::{coverage_study, example_matrix, measure_curve, CoverageStudyConfig, Generator, SyntheticModel};
use kronsep::{MeasureTarget, PivotTable, PowerIteration};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn closed_forms() -> Outcome {
    let mut worst = 0.0f64;
    for q in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let c = example_matrix(q).unwrap();
        let m = measures(&c, ProductOrientation::Delta2Identity, 1e-14, 100_000).unwrap();
        let q2 = q * q;
        let expect = [13.0 / 4.0 * q2, 14.0 / 5.0 * q2, 10.0 + 3.0 * q2 - (9.0 * q2 * q2 + 4.0 * q2 + 100.0).sqrt()];
        for (got, want) in [m.m_tr, m.m_prod, m.m_opt].iter().zip(expect) {
            worst = worst.max((got - want).abs());
        }
    }
    Outcome {
        pass: worst <= 1e-10,
        detail: format!("max abs error {worst:.2e} (tol 1e-10)"),
    }
}

const TABLE1: [(usize, [(f64, f64, f64); 3]); 2] = [
    (20, [(0.90, 7.097, 0.20), (0.95, 9.895, 0.25), (0.99, 16.479, 0.50)]),
    (30, [(0.90, 7.149, 0.20), (0.95, 9.925, 0.25), (0.99, 16.248, 0.50)]),
];

fn pivot_quantiles(tables: &mut Vec<PivotTable>) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, rows) in TABLE1 {
        let table = pool(1)
            .install(|| quantile_table(k, 200_000, 1000, &kronsep::pivot::DEFAULT_PROBS, 20_240_601))
            .unwrap();
        for (p, want, tol) in rows {
            let got = table.quantile(p).unwrap();
            pass &= (got - want).abs() <= tol;
            parts.push(format!("K={k} q{p}={got:.3} (ref {want}±{tol})"));
        }
        tables.push(table);
    }
    Outcome { pass, detail: parts.join(", ") }
}

fn power_vs_svd() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let s = [2, 3][i % 2];
        let t = [3, 5][(i / 2) % 2];
        let grid = common::random_grid(&mut rng, s, t, i % 3 != 0);
        let c = common::random_psd(&mut rng, &grid);
        let m = measures(&c, ProductOrientation::Delta2Identity, 1e-14, 100_000).unwrap();
        let sv = restack(&c).weighted_matrix().svd(false, false).singular_values;
        let sigma1 = sv.max();
        let dense = c.hs_norm_sq() - sigma1 * sigma1;
        worst = worst.max((m.m_opt - dense).abs() / dense.abs());
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("max relative deviation {worst:.2e} over 100 operators (tol 1e-8)"),
    }
}

fn ordering_homogeneity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut order_viol, mut hom_err, mut rel_err) = (0usize, 0.0f64, 0.0f64);
    for _ in 0..500 {
        let s = rng.random_range(2..=4);
        let t = rng.random_range(2..=5);
        let weighted = rng.random_bool(0.5);
        let grid = common::random_grid(&mut rng, s, t, weighted);
        let c = common::random_psd(&mut rng, &grid);
        let alpha: f64 = rng.random_range(0.1..10.0);
        let o = ProductOrientation::Delta2Identity;
        let m = measures(&c, o, 1e-14, 100_000).unwrap();
        let ma = measures(&c.scaled(alpha), o, 1e-14, 100_000).unwrap();
        let scale = m.hs_norm_sq;
        if m.m_opt > m.m_prod + 1e-10 * scale || m.m_prod > m.m_tr + 1e-10 * scale {
            order_viol += 1;
        }
        for kind in MeasureKind::ALL {
            let a2 = alpha * alpha;
            hom_err = hom_err.max((ma.absolute(kind) - a2 * m.absolute(kind)).abs() / (a2 * scale));
            rel_err = rel_err.max((ma.relative(kind) - m.relative(kind)).abs());
        }
    }
    Outcome {
        pass: order_viol == 0 && hom_err <= 1e-10 && rel_err <= 1e-10,
        detail: format!(
            "ordering violations {order_viol}/500, homogeneity error {hom_err:.2e} (relative to α²‖C‖²), relative-measure drift {rel_err:.2e}"
        ),
    }
}

fn coverage(tables: &[PivotTable]) -> Outcome {
    let model = SyntheticModel::new(5, 50, 0.6).unwrap();
    let mut cfg = CoverageStudyConfig::new(model, 200);
    cfg.alphas = vec![0.05];
    cfg.runs = 500;
    cfg.k = 20;
    let table = tables.iter().find(|t| t.k == 20).unwrap();
    let result = pool(4).install(|| coverage_study(&cfg, table)).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for target in MeasureTarget::all() {
        let row = result.row(target, 0.05).unwrap();
        pass &= (0.92..=0.99).contains(&row.coverage) && row.degenerate_runs == 0;
        parts.push(format!("{}={:.3}", target.label(), row.coverage));
    }
    Outcome { pass, detail: parts.join(", ") }
}

fn separable_truth_and_consistency() -> Outcome {
    let sep = Generator::new(&SyntheticModel::new(5, 50, 0.0).unwrap()).unwrap();
    let m0 = measures(&sep.true_covariance(), ProductOrientation::Delta1Identity, 1e-12, 10_000).unwrap();
    let m0b = measures(&sep.true_covariance(), ProductOrientation::Delta2Identity, 1e-12, 10_000).unwrap();
    let worst0 = [m0.m_tr, m0.m_prod, m0.m_opt, m0b.m_prod].into_iter().fold(0.0, f64::max);

    let gen = Generator::new(&SyntheticModel::new(5, 50, 0.6).unwrap()).unwrap();
    let truth = gen.true_covariance();
    let medians: Vec<f64> = [100usize, 400, 1600]
        .iter()
        .map(|&n| {
            let mut errs: Vec<f64> = (0..10)
                .map(|r| {
                    let x = gen.sample(n, 1000 * n as u64 + r).unwrap();
                    empirical_covariance(&x).unwrap().sub(&truth).unwrap().hs_norm()
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            0.5 * (errs[4] + errs[5])
        })
        .collect();
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        pass: worst0 <= 1e-10 && decreasing,
        detail: format!(
            "max measure at c=0 {worst0:.2e}; median HS error n=100/400/1600: {:.4}/{:.4}/{:.4}",
            medians[0], medians[1], medians[2]
        ),
    }
}

fn isometry_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst, mut mismatches) = (0.0f64, 0usize);
    for i in 0..1000 {
        let s = rng.random_range(1..=4);
        let t = rng.random_range(1..=5);
        let grid = common::random_grid(&mut rng, s, t, i % 2 == 0);
        let c = common::random_general(&mut rng, &grid);
        let r = restack(&c);
        worst = worst.max((r.hs_norm() - c.hs_norm()).abs() / c.hs_norm());
        if unstack(&r) != c {
            mismatches += 1;
        }
    }
    Outcome {
        pass: worst <= 1e-12 && mismatches == 0,
        detail: format!("max relative norm gap {worst:.2e}, round-trip mismatches {mismatches}/1000"),
    }
}

fn curve_shape() -> Outcome {
    let base = SyntheticModel::new(5, 50, 0.0).unwrap();
    let cs: Vec<f64> = (0..=5).map(|i| i as f64 * 0.2).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for o in [ProductOrientation::Delta1Identity, ProductOrientation::Delta2Identity] {
        let curve = measure_curve(&base, &cs, o, PowerIteration::default()).unwrap();
        for kind in MeasureKind::ALL {
            pass &= curve.windows(2).all(|w| w[1].measures.absolute(kind) > w[0].measures.absolute(kind));
        }
        pass &= curve.iter().all(|p| {
            let m = &p.measures;
            let tol = 1e-10 * m.hs_norm_sq;
            m.m_opt <= m.m_prod + tol && m.m_prod <= m.m_tr + tol
        });
        let last = &curve.last().unwrap().measures;
        parts.push(format!("{o:?} at c=1: tr={:.4} prod={:.4} opt={:.4}", last.m_tr, last.m_prod, last.m_opt));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = f();
        let elapsed = start.elapsed();
        let ok = out.pass && elapsed <= budget;
        if !ok {
            failures += 1;
        }
        println!(
            "{} {name}: {} [{:.2}s, budget {}s]",
            if ok { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    };
    let mut tables = Vec::new();
    report("closed-form example measures", Duration::from_secs(1), &mut closed_forms);
    report("pivot quantile table", Duration::from_secs(120), &mut || pivot_quantiles(&mut tables));
    report("power iteration vs dense SVD", Duration::from_secs(10), &mut power_vs_svd);
    report("measure ordering and homogeneity", Duration::from_secs(30), &mut ordering_homogeneity);
    report("scaled coverage study", Duration::from_secs(1800), &mut || coverage(&tables));
    report("separable truth and consistency", Duration::from_secs(600), &mut separable_truth_and_consistency);
    report("restacking isometry and round trip", Duration::from_secs(60), &mut isometry_round_trip);
    report("measure curve shape in c", Duration::from_secs(60), &mut curve_shape);
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
