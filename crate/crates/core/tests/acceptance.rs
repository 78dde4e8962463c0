//! End-to-end acceptance run: one PASS/FAIL line per criterion, then a
//! single assertion over all of them. The desk-scale training dominates the
//! runtime (three seeds of 15 epochs each plus one equal-weight run).

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use semcast::channel::compute_cbr;
use semcast::data::{ce_loss, psnr, ssim};
use semcast::oracle::{brute_force_simplex, gradcheck_suite, qp_selftest};
use semcast::par;
use semcast::synthetic::{min_psi, run_synth_trilevel, SynthProblem};
use semcast::train::{self, trace_header, ExperimentConfig, Setup, TraceRecord};
use semcast::trilevel::project_simplex;
use semcast::data::TaskKind;

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(name: &'static str, pass: bool, detail: String) -> Verdict {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Verdict { name, pass, detail }
}

fn desk_config(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.data_dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist-subset").into();
    c.checkpoints = false;
    c.seed = seed;
    c.set_override("eval_snrs=4").unwrap();
    c
}

fn cbr() -> Verdict {
    let cases = [((128, 1, 28, 28), 0.02), ((1024, 1, 28, 28), 0.16), ((5000, 3, 32, 32), 0.2)];
    let got: Vec<f64> = cases.iter().map(|&((b, c, h, w), _)| compute_cbr(b, c, h, w)).collect();
    let pass = cases.iter().zip(&got).all(|(&(_, want), &g)| (g * 100.0).round() / 100.0 == want);
    verdict("CBR exactness", pass, format!("{got:?}"))
}

fn gradients() -> Verdict {
    let checks = gradcheck_suite(20, 2024).unwrap();
    let pass = checks.iter().all(|c| c.passed() && c.instances >= 20);
    let detail = checks
        .iter()
        .map(|c| format!("{} {:.1e}/{:.0e}", c.name, c.worst_rel_err, c.tolerance))
        .collect::<Vec<_>>()
        .join("; ");
    verdict("Gradient oracle suite", pass, detail)
}

fn qp() -> Verdict {
    let r = qp_selftest(100, 1000, 11).unwrap();
    verdict(
        "QP oracle",
        r.passed() && r.matches == 100 && r.kkt_ok == 1000,
        format!(
            "{}/{} within 1e-3 (worst {:.1e}), KKT {}/{}",
            r.matches, r.instances, r.worst_l2, r.kkt_ok, r.kkt_instances
        ),
    )
}

fn simplex() -> Verdict {
    let mut rng = par::stream(5, &[77]);
    let mut worst: f64 = 0.0;
    let mut idempotent = true;
    for i in 0..60 {
        let n = 2 + i % 2;
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..2.0)).collect();
        let p = project_simplex(&raw).unwrap();
        let b = brute_force_simplex(&raw);
        let d = p.as_slice().iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        worst = worst.max(d);
        idempotent &= project_simplex(p.as_slice()).unwrap().as_slice() == p.as_slice();
    }
    verdict(
        "Simplex projection",
        worst <= 1e-3 && idempotent,
        format!("60 instances, worst distance {worst:.1e}, idempotent {idempotent}"),
    )
}

fn metric_identities() -> Verdict {
    let a: Vec<f64> = (0..784).map(|i| ((i * 37) % 255) as f64 / 255.0).collect();
    let s = ssim(&a, &a).unwrap();
    let p = psnr(&a, &a, 1.0).unwrap();
    let q = Array2::from_elem((3, 10), 0.1);
    let ce = ce_loss(&[0, 4, 9], q.view()).unwrap();
    let pass = s == 1.0 && p == 100.0 && (ce - 10f64.ln()).abs() <= 1e-9;
    verdict("Metric identities", pass, format!("ssim {s}, psnr {p}, ce {ce:.12}"))
}

fn synthetic_benchmark() -> Verdict {
    let problem = SynthProblem::new(3, 6, 1).unwrap();
    let records = run_synth_trilevel(&problem, 400, 1e-2, 0.5).unwrap();
    let g = records[399].report.g_tilde;
    let (m100, m400) = (min_psi(&records, 100), min_psi(&records, 400));
    verdict(
        "Synthetic tri-level benchmark",
        g <= 1e-3 && m400 <= m100,
        format!("g~(400) {g:.2e}, min psi 100: {m100:.2e}, 400: {m400:.2e}"),
    )
}

fn on_simplex(w: &[f64]) -> bool {
    w.iter().all(|&x| x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

fn epoch_mean(records: &[TraceRecord], epoch: usize) -> f64 {
    let r: Vec<f64> = records.iter().filter(|r| r.epoch == epoch).map(|r| r.reward).collect();
    r.iter().sum::<f64>() / r.len() as f64
}

fn desk_mnist(out: &Path) -> (Verdict, Vec<u8>) {
    let started = Instant::now();
    let (mut acc, mut ssim_sum, mut first, mut last) = (0.0, 0.0, 0.0, 0.0);
    let mut simplex_ok = true;
    let mut header = Vec::new();
    let seeds = [0u64, 1, 2];
    for &seed in &seeds {
        let setup = Setup::new(desk_config(seed)).unwrap();
        let o = train::train(&setup, &out.join(format!("seed-{seed}"))).unwrap();
        header = fs::read(&o.trace_path).unwrap();
        simplex_ok &= o.records.iter().all(|r| on_simplex(&r.w));
        first += epoch_mean(&o.records, 1);
        last += epoch_mean(&o.records, setup.config.epochs);
        for row in train::evaluate(&setup, &o.state, &setup.exec()).unwrap() {
            match row.task {
                TaskKind::Classification => acc += row.accuracy.unwrap(),
                TaskKind::Reconstruction => ssim_sum += row.ssim.unwrap(),
            }
        }
        println!(
            "  seed {seed}: first/last epoch reward {:.4}/{:.4}, final w {:?}",
            epoch_mean(&o.records, 1),
            epoch_mean(&o.records, setup.config.epochs),
            o.records.last().unwrap().w
        );
    }
    let k = seeds.len() as f64;
    let (acc, ssim_mean, first, last) = (acc / k, ssim_sum / k, first / k, last / k);
    let elapsed = started.elapsed();
    let pass = acc >= 0.80 && ssim_mean >= 0.55 && last > first && simplex_ok && elapsed <= Duration::from_secs(20 * 60);
    let v = verdict(
        "Desk-scale MNIST",
        pass,
        format!(
            "accuracy {acc:.4} (>= 0.80), SSIM {ssim_mean:.4} (>= 0.55), reward {first:.4} -> {last:.4}, \
             simplex every iteration {simplex_ok}, {:.0} s for 3 seeds (<= 1200 s)",
            elapsed.as_secs_f64()
        ),
    );
    (v, header)
}

fn ew_ablation(out: &Path, trirl_trace: &[u8]) -> Verdict {
    let mut c = desk_config(0);
    c.ew = true;
    let setup = Setup::new(c).unwrap();
    let result = train::train(&setup, &out.join("ew"));
    let Ok(o) = result else {
        return verdict("EW ablation contract", false, format!("run failed: {}", result.err().unwrap()));
    };
    let text = fs::read_to_string(&o.trace_path).unwrap();
    let trirl = String::from_utf8_lossy(trirl_trace);
    let same_header = text.lines().next() == trirl.lines().next() && text.lines().next() == Some(&trace_header(2));
    let width = trace_header(2).split(',').count();
    let same_width = text.lines().all(|l| l.split(',').count() == width);
    let fixed = o.records.iter().all(|r| r.w == vec![0.5, 0.5]);
    verdict(
        "EW ablation contract",
        same_header && same_width && fixed && o.records.len() == 15 * setup.iters_per_epoch(),
        format!(
            "{} iterations, header identical {same_header}, row width {width} {same_width}, w fixed {fixed}",
            o.records.len()
        ),
    )
}

fn determinism(out: &Path) -> Verdict {
    let run = |name: &str, threads: usize| {
        let mut c = desk_config(7);
        c.epochs = 1;
        c.iters_per_epoch = 4;
        c.threads = threads;
        let setup = Setup::new(c).unwrap();
        let o = train::train(&setup, &out.join(name)).unwrap();
        fs::read(o.trace_path).unwrap()
    };
    let a = run("det-a", 1);
    let b = run("det-b", 1);
    let c = run("det-c", 4);
    verdict(
        "Determinism",
        a == b && a == c,
        format!("two runs identical {}, 1 vs 4 threads identical {}", a == b, a == c),
    )
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let mut verdicts = vec![cbr(), gradients(), qp(), simplex(), metric_identities(), synthetic_benchmark()];
    verdicts.push(determinism(dir.path()));
    let (desk, trace) = desk_mnist(dir.path());
    verdicts.push(desk);
    verdicts.push(ew_ablation(dir.path(), &trace));
    let failed: Vec<_> = verdicts.iter().filter(|v| !v.pass).map(|v| format!("{}: {}", v.name, v.detail)).collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
