use std::fs;

use semcast::par::Exec;
use semcast::train::{self, trace_header, ExperimentConfig, Setup};

fn tiny(overrides: &[&str]) -> Setup {
    let mut c = ExperimentConfig::default();
    c.data_dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist-subset").into();
    for kv in [
        "train_limit=256",
        "test_limit=64",
        "bits=16",
        "latent=16",
        "encoder_hidden=32",
        "critic_hidden=8",
        "rec_hidden=32",
        "cls_hidden=8",
        "batch_size=32",
        "kappa=2",
        "inner_steps=2",
        "epochs=2",
        "iters_per_epoch=3",
        "lr_inner=0.001",
        "eta=0.001",
        "eval_snrs=inf,-4,4",
    ]
    .iter()
    .chain(overrides)
    {
        c.set_override(kv).unwrap();
    }
    Setup::new(c).unwrap()
}

#[test]
fn subset_has_desk_sizes() {
    let c = ExperimentConfig {
        data_dir: concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist-subset").into(),
        ..ExperimentConfig::default()
    };
    let (tr, te) = train::load_datasets(&c).unwrap();
    assert_eq!((tr.len(), te.len()), (4000, 1000));
    assert_eq!(tr.dims(), (1, 28, 28));
    for d in [&tr, &te] {
        let mut counts = [0usize; 10];
        for &l in d.labels() {
            counts[l as usize] += 1;
        }
        assert!(counts.iter().all(|&k| k == d.len() / 10), "{counts:?}");
    }
}

#[test]
fn trace_schema_and_simplex() {
    let setup = tiny(&[]);
    let dir = tempfile::tempdir().unwrap();
    let o = train::train(&setup, dir.path()).unwrap();
    let text = fs::read_to_string(&o.trace_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,iter,reward,w_1,w_2,loss_1,loss_2,metric_1,metric_2,lambda,rho,psi,g_tilde,g_dot_d,fallback"
    );
    assert_eq!(lines.count(), 6);
    for r in &o.records {
        assert!(r.w.iter().all(|&x| x >= 0.0));
        assert!((r.w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(r.lambda >= 0.0 && r.rho >= 0.0 && r.psi >= 0.0);
        assert!(r.is_finite());
    }
    let last = o.records.last().unwrap();
    assert_eq!((last.epoch, last.iter), (2, 3));
}

#[test]
fn equal_weight_trace_has_same_schema() {
    let setup = tiny(&["ew=true"]);
    let dir = tempfile::tempdir().unwrap();
    let o = train::train(&setup, dir.path()).unwrap();
    let text = fs::read_to_string(&o.trace_path).unwrap();
    assert_eq!(text.lines().next().unwrap(), trace_header(2));
    for r in &o.records {
        assert_eq!(r.w, vec![0.5, 0.5]);
        assert_eq!((r.lambda, r.rho, r.g_tilde, r.g_dot_d, r.fallback), (0.0, 0.0, 0.0, 0.0, false));
        assert!(r.psi > 0.0);
    }
}

#[test]
fn checkpoint_restores_final_state() {
    let setup = tiny(&[]);
    let dir = tempfile::tempdir().unwrap();
    let o = train::train(&setup, dir.path()).unwrap();
    let latest = train::latest_checkpoint(dir.path()).unwrap();
    assert!(latest.ends_with("epoch-002"));
    let restored = train::load_state(&latest, &setup).unwrap();
    assert_eq!(restored, o.state);
    let dump = fs::read_to_string(dir.path().join(train::CONFIG_FILE)).unwrap();
    assert_eq!(ExperimentConfig::from_str_any(&dump).unwrap(), setup.config);
}

#[test]
fn checkpoint_rejects_other_architecture() {
    let setup = tiny(&[]);
    let dir = tempfile::tempdir().unwrap();
    train::train(&setup, dir.path()).unwrap();
    let other = tiny(&["bits=8"]);
    assert!(train::load_state(&train::latest_checkpoint(dir.path()).unwrap(), &other).is_err());
}

#[test]
fn runs_do_not_depend_on_thread_count() {
    let run = |threads: &str| {
        let setup = tiny(&[&format!("threads={threads}"), "iters_per_epoch=2", "epochs=1"]);
        let dir = tempfile::tempdir().unwrap();
        let o = train::train(&setup, dir.path()).unwrap();
        (fs::read(o.trace_path).unwrap(), o.state)
    };
    let (a, sa) = run("1");
    let (b, sb) = run("1");
    let (c, sc) = run("3");
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(sa, sb);
    assert_eq!(sa, sc);
}

#[test]
fn evaluation_rows_follow_the_grid() {
    let setup = tiny(&[]);
    let state = setup.init_state();
    let rows = train::evaluate(&setup, &state, &Exec::sequential()).unwrap();
    assert_eq!(rows.len(), 3 * 2);
    for r in &rows {
        match r.receiver {
            1 => assert!(r.ssim.is_some() && r.psnr.is_some() && r.accuracy.is_none()),
            _ => assert!(r.ssim.is_none() && r.accuracy.is_some()),
        }
    }
    assert_eq!(rows, train::evaluate(&setup, &state, &Exec::new(2)).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.csv");
    train::write_eval_csv(&path, &rows).unwrap();
    let text = fs::read_to_string(path).unwrap();
    assert!(text.starts_with("snr_db,receiver,task,ssim,psnr,accuracy\ninf,1,reconstruction,"));
}

#[test]
fn evaluation_orders_snr_for_trained_decoders() {
    let setup = tiny(&["epochs=2", "iters_per_epoch=20", "kappa=20", "lr_decoder=0.5", "bits=64", "latent=64", "rec_hidden=64", "train_limit=1024"]);
    let dir = tempfile::tempdir().unwrap();
    let o = train::train(&setup, dir.path()).unwrap();
    let rows = train::evaluate(&setup, &o.state, &Exec::sequential()).unwrap();
    let ssim_at = |snr: f64| rows.iter().find(|r| r.receiver == 1 && r.snr_db == snr).unwrap().ssim.unwrap();
    assert!(ssim_at(f64::INFINITY) >= ssim_at(4.0));
    assert!(ssim_at(4.0) >= ssim_at(-4.0));
    for r in rows.iter().filter(|r| r.receiver == 2) {
        let acc = r.accuracy.unwrap();
        let se = (0.1f64 * 0.9 / setup.test.len() as f64).sqrt();
        assert!(acc >= 0.1 - 3.0 * se, "{acc} at {} dB", r.snr_db);
    }
}

#[test]
fn zero_rate_cycle_only_syncs_old_policy() {
    let setup = tiny(&["kappa=0", "inner_steps=1", "lr_decoder=0", "lr_inner=0", "eta=0", "lr_critic=0"]);
    let exec = Exec::sequential();
    let mut state = setup.init_state();
    state.theta_old.values_mut()[0] += 0.25;
    let (next, record) = train::run_update_cycle(&setup, &state, 1, 1, 0, &exec).unwrap();
    assert_eq!(next.theta, state.theta);
    assert_eq!(next.theta_old, state.theta);
    assert_eq!(next.decoders, state.decoders);
    assert_eq!(next.w, state.w);
    assert_eq!(next.chi, state.chi);
    assert!(record.is_finite());
}
