use tracenorm_core::linalg::{singular_values, trace_norm};
use tracenorm_core::train::{
    lambda_sweep, train_stage1, train_stage2, transition_experiment, SweepStatus,
};
use tracenorm_core::{
    Error, Network, NetworkSpec, RegConfig, RegMode, Schedule, SharingScheme, Splits, TaskConfig, TrainOptions,
    Truncation, Weight,
};

fn setup(n_train: usize, hidden: usize) -> (Splits, NetworkSpec) {
    let task = TaskConfig { n_train, n_val: 128, ..TaskConfig::default() };
    let (train, val) = task.generate().unwrap();
    let spec = NetworkSpec {
        n_in: task.n_in,
        hidden: vec![hidden],
        classes: task.classes,
        sharing: SharingScheme::PartiallyJoint,
        factored: false,
    };
    (Splits { train, val }, spec)
}

fn schedule(total: usize, transition: usize) -> Schedule {
    Schedule { total_epochs: total, transition_epoch: transition, ..Schedule::default() }
}

#[test]
fn objective_descends_for_every_mode() {
    let (splits, spec) = setup(256, 16);
    let opts = TrainOptions::default();
    for reg in [RegConfig::none(), RegConfig::l2(1e-3, 1e-3), RegConfig::trace_norm(1e-3, 1e-3)] {
        let spec = NetworkSpec { factored: reg.mode == RegMode::TraceNorm, ..spec.clone() };
        let mut lr0 = Schedule::default().lr0;
        let mut descended = false;
        for _ in 0..=3 {
            let net = Network::init(&spec, 5).unwrap();
            let (_, record) = train_stage1(net, &splits, &reg, &Schedule { lr0, ..schedule(5, 5) }, &opts, 5).unwrap();
            let obj: Vec<f64> = record.epochs.iter().map(|e| e.train_objective).collect();
            if obj.windows(2).all(|p| p[1] < p[0]) {
                descended = true;
                break;
            }
            lr0 /= 2.0;
        }
        assert!(descended, "{:?} never descended", reg.mode);
    }
}

#[test]
fn variational_gap_closes_after_training() {
    let (splits, spec) = setup(256, 16);
    let net = Network::init(&NetworkSpec { factored: true, ..spec }, 2).unwrap();
    let reg = RegConfig::trace_norm(1e-2, 1e-2);
    let (net, _) = train_stage1(net, &splits, &reg, &schedule(40, 40), &TrainOptions::default(), 2).unwrap();
    for (name, w) in net.gru_weights() {
        let Weight::Factored(f) = w else { panic!("{name} is dense") };
        let tn = trace_norm(&singular_values(&w.recover()).unwrap()).unwrap();
        let bound = 0.5 * (f.u().sum_squares() + f.v().sum_squares());
        assert!(bound >= tn - 1e-9);
        assert!(bound - tn <= 0.05 * tn, "{name}: {bound} vs {tn}");
    }
}

#[test]
fn lossless_transition_keeps_validation_loss() {
    let (splits, spec) = setup(128, 8);
    let opts = TrainOptions::default();
    for factored in [true, false] {
        let reg = if factored { RegConfig::trace_norm(1e-2, 1e-2) } else { RegConfig::none() };
        let net = Network::init(&NetworkSpec { factored, ..spec.clone() }, 3).unwrap();
        let (net, _) = train_stage1(net, &splits, &reg, &schedule(3, 3), &opts, 3).unwrap();
        let (_, record) = train_stage2(&net, &splits, Truncation::Threshold(1.0), &schedule(3, 3), &opts, 3).unwrap();
        let t = record.transition.unwrap();
        assert!(record.epochs.is_empty());
        assert!(t.jump().abs() <= 1e-9, "jump {}", t.jump());
    }
}

#[test]
fn truncation_reduces_parameters_monotonically() {
    let (splits, spec) = setup(128, 12);
    let opts = TrainOptions::default();
    let net = Network::init(&NetworkSpec { factored: true, ..spec }, 4).unwrap();
    let (net, _) = train_stage1(net, &splits, &RegConfig::trace_norm(3e-2, 3e-2), &schedule(6, 6), &opts, 4).unwrap();
    let counts: Vec<usize> = [0.9, 0.7, 0.5]
        .iter()
        .map(|&t| train_stage2(&net, &splits, Truncation::Threshold(t), &schedule(6, 6), &opts, 4).unwrap().0.parameter_count())
        .collect();
    assert!(counts[0] < net.parameter_count());
    assert!(counts.windows(2).all(|p| p[0] >= p[1]), "{counts:?}");
}

#[test]
fn stage2_continues_the_schedule() {
    let (splits, spec) = setup(64, 6);
    let opts = TrainOptions::default();
    let net = Network::init(&spec, 1).unwrap();
    let s = schedule(5, 2);
    let (net, _) = train_stage1(net, &splits, &RegConfig::none(), &s, &opts, 1).unwrap();
    let (_, record) = train_stage2(&net, &splits, Truncation::Threshold(0.9), &s, &opts, 1).unwrap();
    let epochs: Vec<usize> = record.epochs.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, vec![3, 4, 5]);
    assert!(record.epochs.iter().all(|e| e.stage == 2));
    assert!((record.epochs[0].lr - s.lr_at(3)).abs() < 1e-15);
}

#[test]
fn transition_records_cover_the_budget() {
    let (splits, spec) = setup(64, 8);
    let opts = TrainOptions::default();
    let reg = RegConfig::trace_norm(1e-2, 1e-2);
    let full = transition_experiment(&spec, &splits, &reg, &schedule(4, 4), 400, &opts, 1).unwrap();
    assert!(full.transition.is_none());
    assert!(full.epochs.iter().all(|e| e.stage == 1));

    let early = transition_experiment(&spec, &splits, &reg, &schedule(4, 1), 400, &opts, 1).unwrap();
    assert_eq!(early.epochs.len(), 4);
    let t = early.transition.unwrap();
    assert_eq!(t.epoch, 1);
    assert!(t.params_after <= 400);
    assert!(early.epochs[1..].iter().all(|e| e.params == t.params_after));

    match transition_experiment(&spec, &splits, &reg, &schedule(4, 1), 10, &opts, 1) {
        Err(Error::InvalidConfig(_)) => {}
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn sweep_rows_are_reproducible_and_survive_divergence() {
    let (splits, spec) = setup(64, 6);
    let opts = TrainOptions { clip_norm: None, ..TrainOptions::default() };
    let grid = [(0.0, 1e-3), (0.0, 1e-3), (0.0, 0.0)];
    let table = lambda_sweep(&spec, &splits, RegMode::L2, &grid, &[1, 2], &schedule(2, 2), &opts).unwrap();
    assert_eq!(table.rows.len(), 6);
    assert_eq!(table.layers, vec!["gru0.nonrec", "gru0.rec"]);
    assert_eq!(table.rows[0], table.rows[2]);
    assert_eq!(table.rows[1], table.rows[3]);

    let baseline = lambda_sweep(&spec, &splits, RegMode::None, &[(0.0, 0.0)], &[1], &schedule(2, 2), &opts).unwrap();
    let row = &baseline.rows[0];
    assert_eq!((row.final_val_loss, row.nu.clone()), (table.rows[4].final_val_loss, table.rows[4].nu.clone()));

    let wild = Schedule { lr0: 1e4, ..schedule(3, 3) };
    let table = lambda_sweep(&spec, &splits, RegMode::L2, &[(0.0, 0.0), (0.0, 1.0)], &[1], &wild, &opts).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert!(table.rows.iter().all(|r| matches!(r.status, SweepStatus::Diverged { .. }) && r.final_val_loss.is_nan()));
}

#[test]
fn mode_and_storage_must_agree() {
    let (splits, spec) = setup(32, 4);
    let opts = TrainOptions::default();
    let dense = Network::init(&spec, 1).unwrap();
    let factored = Network::init(&NetworkSpec { factored: true, ..spec }, 1).unwrap();
    assert!(train_stage1(dense, &splits, &RegConfig::trace_norm(0.1, 0.1), &schedule(1, 1), &opts, 1).is_err());
    assert!(train_stage1(factored, &splits, &RegConfig::l2(0.1, 0.1), &schedule(1, 1), &opts, 1).is_err());
}
