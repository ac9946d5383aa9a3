//! Acceptance run: one line per criterion. Built without the libtest harness
//! so the lines are never captured. `DULAB_CRITERIA=2,5` runs a subset.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use dulab::circuits::{build_floquet, haar_u2, FloquetOperator};
use dulab::config::RunConfig;
use dulab::eigencorr::{f_spectral, Window};
use dulab::geometry::{far_side_clear, local_in_window, local_sites, HalfInt, MacroGeometry, SubsystemSpec};
use dulab::opent::delta_opmi_xybar;
use dulab::replica::*;
use dulab::scan::cmd_verify;
use dulab::scrambling::{single_site_probe, two_point_lightcone, ProbeRow};
use dulab::seed::sample_rng;
use dulab::C64;
use faer::Mat;
use rayon::prelude::*;

const J: f64 = 0.5;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Status {
    Pass,
    Fail,
    KnownFail,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn new(ok: bool, detail: String) -> Self {
        Self { status: if ok { Status::Pass } else { Status::Fail }, detail }
    }
}

fn circuit(l: usize, master: u64, i: usize) -> FloquetOperator {
    build_floquet(J, l, &mut sample_rng(master, i as u64)).expect("circuit builds")
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn single(l: usize, t: usize, d: i32) -> (SubsystemSpec, SubsystemSpec) {
    (SubsystemSpec::input([0]), SubsystemSpec::output([local_sites(l, t, HalfInt::int(d), 0)]))
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    let (mut checks, mut failed) = (0, 0);
    for j in [0.3, 0.5, 1.0] {
        let cfg = RunConfig {
            l: 6,
            j,
            n_samples: 20,
            t_max: 2,
            d_values: vec![HalfInt::int(-1), HalfInt::int(0), HalfInt::int(1)],
            ..RunConfig::default()
        };
        let r = cmd_verify(&cfg).expect("verify runs");
        checks += r.checks.len();
        failed += r.failures().len();
        worst = r.checks.iter().map(|c| c.defect).fold(worst, f64::max);
    }
    Outcome::new(
        failed == 0,
        format!("{checks} per-instance checks, {failed} failed, worst relative defect {worst:.1e}"),
    )
}

/// `F^{XY}/4^{L-1}` for single sites, per sample, `t = 1..=4`, `d = -1, 0, 1`.
fn fxy_cells(l: usize, n: usize, master: u64) -> Vec<Vec<[f64; 3]>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let u = circuit(l, master, i);
            (1..=4)
                .map(|t| {
                    [-1, 0, 1].map(|d| {
                        let (x, y) = single(l, t, d);
                        16.0 * two_point_lightcone(&u, t, &x, &y).expect("light-cone route")
                    })
                })
                .collect()
        })
        .collect()
}

/// Statistical cells that miss, and `(t, d, deviation)` of exact cells that miss.
fn judge_fxy(cells: &[Vec<[f64; 3]>]) -> (Vec<String>, Vec<(usize, i32, f64)>, String) {
    let lam = lambda(J);
    let (mut stat_bad, mut exact_bad, mut log) = (Vec::new(), Vec::new(), String::new());
    for t in 1..=4 {
        let v: Vec<f64> = cells.iter().map(|s| s[t - 1][1]).collect();
        let (m, se) = mean_se(&v);
        let want = 1.0 + 3.0 * lam.powi(2 * t as i32);
        let z = (m - want) / se;
        let _ = write!(log, " t={t}:{m:.4}({z:+.1}s)");
        if z.abs() > 3.0 {
            stat_bad.push(format!("t={t}"));
        }
        for (k, d) in [(0, -1), (2, 1)] {
            let dev = cells.iter().map(|s| (s[t - 1][k] - 1.0).abs()).fold(0.0, f64::max);
            if dev >= 1e-10 {
                exact_bad.push((t, d, dev));
            }
        }
    }
    (stat_bad, exact_bad, log)
}

fn criterion_2() -> Outcome {
    let l = 12;
    let (stat_bad, exact_bad, log) = judge_fxy(&fxy_cells(l, 200, 2));
    let mut detail = format!("L=12, 200 samples, d=0 vs 1+3L^2t:{log}");
    for (t, d, dev) in &exact_bad {
        let _ = write!(detail, "; off-cone t={t} d={d} deviates by {dev:.1e}");
    }
    if stat_bad.is_empty() && exact_bad.is_empty() {
        return Outcome::new(true, detail);
    }
    // Misses are expected only where the two cones meet round the ring.
    let confined = stat_bad.is_empty() && exact_bad.iter().all(|&(t, d, _)| !far_side_clear(l, t, HalfInt::int(d)));
    let (s14, e14, _) = judge_fxy(&fxy_cells(14, 200, 2));
    let clean14 = s14.is_empty() && e14.is_empty();
    let _ = write!(detail, "; same criterion at L=14: {}", if clean14 { "all cells pass" } else { "fails" });
    Outcome { status: if confined && clean14 { Status::KnownFail } else { Status::Fail }, detail }
}

fn criterion_3() -> Outcome {
    let l = 12;
    let n = 4;
    let mut worst: f64 = 0.0;
    let mut cells = 0;
    for i in 0..n {
        let u = circuit(l, 3, i);
        for t in [1, 2] {
            for d in [0, -1, 1] {
                let g = MacroGeometry::fit_for_complement(l, t, d).expect("placement fits");
                let v = delta_opmi_xybar(&u, t, &g.x, &g.y).expect("jump").exp();
                let want = exp_delta_opmi_macro(d);
                worst = worst.max((v - want).abs() / want);
                cells += 1;
            }
        }
    }
    Outcome::new(worst < 1e-8, format!("L=12, {n} circuits, {cells} cells, worst relative deviation {worst:.1e}"))
}

fn full_matrix(t: &TransferMatrix) -> Mat<C64> {
    let n = t.dim();
    let mut m = Mat::<C64>::zeros(n, n);
    for c in 0..n {
        let mut e = vec![C64::new(0.0, 0.0); n];
        e[c] = C64::new(1.0, 0.0);
        for (r, v) in t.apply(&e).into_iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    m
}

fn max_diff(a: &Mat<C64>, b: &Mat<C64>) -> f64 {
    let mut w: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            w = w.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    w
}

fn criterion_4() -> Outcome {
    let mut t1_err: f64 = 0.0;
    // Lambda = 1 at J = pi/4 merges the two eigenvalues; the grid avoids it.
    for k in 0..9 {
        let j = 0.1 + 0.15 * k as f64;
        let eig = t1_closed_form(j).eigen().expect("eigensolver");
        let s = eig.S();
        let mut ev: Vec<C64> = (0..16).map(|i| s[i]).collect();
        ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        t1_err = t1_err.max((ev[0] - 4.0).norm()).max((ev[1] - 4.0 * lambda(j)).norm());
        t1_err = ev[2..].iter().fold(t1_err, |w, z| w.max(z.norm()));
        let lines = build_t1(j).expect("T1").leading_spectrum(2).expect("spectrum");
        t1_err = t1_err.max((lines[0].value - 4.0).norm()).max((lines[1].value - 4.0 * lambda(j)).norm());
    }
    let t2 = build_t2(J, HalfInt::int(-1)).expect("T2").leading_spectrum(1).expect("spectrum");
    let (lead, nu) = (t2[0].value, t2[0].weight);
    let t3_err = max_diff(&full_matrix(&build_t3(J, HalfInt::int(0)).expect("T3")), &t1_closed_form(J));
    let ok = t1_err < 1e-10 && (lead - 2.0).norm() < 1e-8 && (nu - 14.0).abs() < 1e-8 && t3_err < 1e-12;
    Outcome::new(
        ok,
        format!(
            "T1 over 9 couplings off by {t1_err:.1e}; T2(-1) leading {:.10} weight {nu:.10}; T3(0) vs T1 {t3_err:.1e}",
            lead.re
        ),
    )
}

struct Probe {
    l: usize,
    rows: Vec<Vec<ProbeRow>>,
}

/// OTOC probes at `y = 0`, `t <= 4`, shared by criteria 5 and 7.
fn probe_ensemble() -> Probe {
    let l = 12;
    let rows = (0..24).into_par_iter().map(|i| single_site_probe(&circuit(l, 5, i), 0, 4).expect("probe")).collect();
    Probe { l, rows }
}

impl Probe {
    /// Per-sample `F^{X Ybar} / 2^L` at `(t, d)`.
    fn fxybar(&self, t: usize, d: i32) -> Vec<f64> {
        let x = (-2 * t as i64 - 2 * d as i64).rem_euclid(self.l as i64) as usize;
        self.rows.iter().map(|r| r[t].f_xybar_scaled(x)).collect()
    }
}

fn criterion_5(p: &Probe) -> Outcome {
    let dec = t2_decay(&build_t2(J, HalfInt::int(-1)).expect("T2")).expect("decay");
    // Weighted least squares of ln(F/(7/4 2^L) - 1) against t.
    let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut log = String::new();
    for t in 1..=4 {
        let (m, se) = mean_se(&p.fxybar(t, -1));
        let r = m / 1.75 - 1.0;
        let (y, sy) = (r.ln(), se / 1.75 / r);
        let w = 1.0 / (sy * sy);
        let x = t as f64;
        sw += w;
        swx += w * x;
        swy += w * y;
        swxx += w * x * x;
        swxy += w * x * y;
        let _ = write!(log, " {r:.4}");
    }
    let slope = (sw * swxy - swx * swy) / (sw * swxx - swx * swx);
    let gamma_fit = (slope / 2.0).exp();
    let rel = (gamma_fit - dec.gamma).abs() / dec.gamma;
    Outcome::new(
        rel < 0.05,
        format!(
            "L=12, 24 samples, t=1..4 ratios-1:{log}; fitted Gamma {gamma_fit:.4} vs spectrum {:.4} ({:.1}% apart)",
            dec.gamma,
            100.0 * rel
        ),
    )
}

fn criterion_6() -> Outcome {
    let l = 12;
    let n = 200;
    let lam = lambda(J);
    let samples: Vec<Vec<(usize, i32, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let u = circuit(l, 6, i);
            let mut out = Vec::new();
            for t in 1..=3 {
                for d in [0, 1] {
                    if let Ok(g) = MacroGeometry::fit(l, t, d, 3) {
                        let c = two_point_lightcone(&u, t, &g.x, &g.y).expect("light-cone route");
                        out.push((t, d, c * 4f64.powi((g.x.len() + g.y.len()) as i32)));
                    }
                }
            }
            out
        })
        .collect();
    let (mut ok, mut detail) = (true, format!("L=12, {n} samples, d=0:"));
    for t in 1..=3 {
        let v: Vec<f64> = samples.iter().flatten().filter(|c| c.0 == t && c.1 == 0).map(|c| c.2).collect();
        let (m, se) = mean_se(&v);
        let z = (m - (1.0 + 3.0 * lam.powi(2 * t as i32))) / se;
        ok &= z.abs() <= 3.0;
        let _ = write!(detail, " t={t}:{m:.4}({z:+.1}s)");
    }
    let plus: Vec<(usize, f64)> =
        samples.iter().flatten().filter(|c| c.1 == 1).map(|c| (c.0, (c.2 - 1.0).abs())).collect();
    let dev = plus.iter().map(|c| c.1).fold(0.0, f64::max);
    let mut ts: Vec<usize> = plus.iter().map(|c| c.0).collect();
    ts.sort_unstable();
    ts.dedup();
    ok &= dev < 1e-10 && !ts.is_empty();
    let _ = write!(detail, "; d=+1 at t={ts:?} off by at most {dev:.1e} (t=3 has no placement at L=12)");
    Outcome::new(ok, detail)
}

fn criterion_7(p: &Probe) -> Outcome {
    let l = p.l;
    let mut wrapped_only = true;
    let mut misses = Vec::new();
    for t in 1..=4 {
        for d in [1, 2] {
            if !local_in_window(l, t, HalfInt::int(d)) {
                continue;
            }
            let dev = p.fxybar(t, d).iter().map(|f| (f / 4.0 - 1.0).abs()).fold(0.0, f64::max);
            if dev >= 1e-10 {
                misses.push(format!("t={t} d={d} by {dev:.1e}"));
                wrapped_only &= !far_side_clear(l, t, HalfInt::int(d));
            }
        }
    }
    let t = 4;
    let (m, se) = mean_se(&p.fxybar(t, -1).iter().map(|f| f / 4.0).collect::<Vec<_>>());
    let z = (m - 7.0 / 16.0) / se;
    let exact = f_xybar_from_t2(&build_t2(J, HalfInt::int(-1)).expect("T2"), l, t).expect("prediction")
        / 2f64.powi(l as i32 + 2);
    let z_exact = (m - exact) / se;
    let plateau = z.abs() <= 3.0;
    let detail = format!(
        "d>0 exact except {:?}; d=-1 at t={t}: mean {m:.4} vs 7/16 ({z:+.1}s), finite-t transfer-matrix value {exact:.4} ({z_exact:+.1}s)",
        misses
    );
    let status = if plateau && misses.is_empty() {
        Status::Pass
    } else if wrapped_only && z_exact.abs() <= 3.0 {
        Status::KnownFail
    } else {
        Status::Fail
    };
    Outcome { status, detail }
}

fn criterion_8() -> Outcome {
    let n = 100_000;
    let mut rng = sample_rng(8, 0);
    let mut sum = vec![C64::new(0.0, 0.0); 256];
    let mut sq = vec![0.0; 256];
    for _ in 0..n {
        let f = fold_single(&haar_u2(&mut rng));
        for (k, v) in f.iter().flatten().enumerate() {
            sum[k] += v;
            sq[k] += v.norm_sqr();
        }
    }
    let e = haar_twirl_single();
    let mut worst: f64 = 0.0;
    let mut bad = 0;
    for k in 0..256 {
        let m = sum[k] / n as f64;
        let var = (sq[k] / n as f64 - m.norm_sqr()).max(0.0);
        let se = (var / n as f64).sqrt();
        let diff = (m - e[k / 16][k % 16]).norm();
        if diff > 3.0 * se + 1e-12 {
            bad += 1;
        }
        if se > 0.0 {
            worst = worst.max(diff / se);
        }
    }
    let em = Mat::from_fn(16, 16, |r, c| C64::from(e[r][c]));
    let idem = max_diff(&(&em * &em), &em);
    Outcome::new(
        bad == 0 && idem < 1e-12,
        format!(
            "1e5 Haar samples, {bad} of 256 entries beyond 3 sigma (worst {worst:.2}); idempotence defect {idem:.1e}"
        ),
    )
}

fn criterion_9() -> Outcome {
    // Fixed pair 4 sites apart: on the light cone (d = 0) only at t = 2.
    let (l, r, n) = (12, 4, 200);
    let (x, y) = (SubsystemSpec::input([0]), SubsystemSpec::output([r]));
    let series: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let u = circuit(l, 9, i);
            (0..=4).map(|t| 16.0 * two_point_lightcone(&u, t, &x, &y).expect("light-cone route")).collect()
        })
        .collect();
    // Subtracting the baseline drops the 4^{L-1} delta(omega) term.
    let g: Vec<f64> = (0..=4).map(|t| series.iter().map(|s| s[t]).sum::<f64>() / n as f64 - 1.0).collect();
    let spec = f_spectral(&g, Window::Rect).expect("transform");
    let scale = (g.len() as f64).sqrt() / (2.0 * PI);
    let base = 4f64.powi(l as i32 - 1);
    let (mut num, mut den) = (0.0, 0.0);
    for (w, v) in spec.omega.iter().zip(&spec.values) {
        let want = ftilde_local(l, r, *w, J) / base;
        num += (v.re * scale - want).powi(2);
        den += want * want;
    }
    let err = (num / den).sqrt();
    Outcome::new(
        err < 0.1,
        format!(
            "L=12, separation 4, {n} samples, t=0..4 rectangular window, baseline removed: relative L2 error {:.1}% over {} frequencies",
            100.0 * err,
            spec.omega.len()
        ),
    )
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("DULAB_CRITERIA").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let run = |k: usize| only.as_ref().is_none_or(|o| o.contains(&k));
    let mut probe = None;
    let mut unexpected = Vec::new();
    for k in 1..=9 {
        if !run(k) {
            continue;
        }
        let start = Instant::now();
        let out = match k {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(probe.get_or_insert_with(probe_ensemble)),
            6 => criterion_6(),
            7 => criterion_7(probe.get_or_insert_with(probe_ensemble)),
            8 => criterion_8(),
            _ => criterion_9(),
        };
        let label = match out.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::KnownFail => "FAIL (known)",
        };
        println!("criterion {k}: {label} [{:.1}s] {}", start.elapsed().as_secs_f64(), out.detail);
        // Criteria 2 and 7 cannot hold as written at this lattice size.
        let expected = match k {
            2 | 7 => Status::KnownFail,
            _ => Status::Pass,
        };
        if out.status != expected {
            unexpected.push(k);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
