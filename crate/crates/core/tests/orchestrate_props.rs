use cc_core::acsys::{build_ac_system, MassVector};
use cc_core::orchestrate::JobError;
use cc_core::poly::PolySystem;
use cc_core::tracker::{solve_all, Method, SolveOptions, TrackerError};

fn three_body() -> PolySystem {
    build_ac_system(&MassVector::equal(3).unwrap(), -1.0).unwrap().system
}

fn opts(method: Method, workers: usize) -> SolveOptions {
    let mut o = SolveOptions {
        method,
        seed: 3,
        ..SolveOptions::default()
    };
    o.job.chunk_size = 16;
    o.job.workers = workers;
    o
}

fn bytes(sys: &PolySystem, o: &SolveOptions) -> String {
    serde_json::to_string(&solve_all(sys, o).unwrap()).unwrap()
}

#[test]
fn worker_count_does_not_change_output() {
    let sys = three_body();
    for method in [Method::Polyhedral, Method::TotalDegree] {
        let one = bytes(&sys, &opts(method, 1));
        let eight = bytes(&sys, &opts(method, 8));
        assert_eq!(one, eight, "{method:?}");
    }
}

#[test]
fn interrupted_then_resumed_matches_uninterrupted() {
    let sys = three_body();
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("job.ckpt");
    let straight = bytes(&sys, &opts(Method::Polyhedral, 4));

    let mut first = opts(Method::Polyhedral, 4);
    first.job.checkpoint = Some(ck.clone());
    first.job.stop_after_chunks = Some(3);
    match solve_all(&sys, &first) {
        Err(TrackerError::Job(JobError::Interrupted { completed, total })) => {
            assert!(completed >= 3 && completed < total);
        }
        other => panic!("expected interruption, got {other:?}"),
    }
    assert!(ck.exists());

    // a second interrupted leg, then completion
    let mut again = first.clone();
    again.job.resume = true;
    assert!(solve_all(&sys, &again).is_err());
    let mut last = again.clone();
    last.job.stop_after_chunks = None;
    assert_eq!(bytes(&sys, &last), straight);
}

#[test]
fn stale_checkpoint_is_refused() {
    let sys = three_body();
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("job.ckpt");
    let mut a = opts(Method::Polyhedral, 2);
    a.job.checkpoint = Some(ck.clone());
    solve_all(&sys, &a).unwrap();

    let mut other_seed = a.clone();
    other_seed.seed = 4;
    other_seed.job.resume = true;
    let mut other_chunk = a.clone();
    other_chunk.job.chunk_size = 8;
    other_chunk.job.resume = true;
    for o in [other_seed, other_chunk] {
        match solve_all(&sys, &o) {
            Err(TrackerError::Job(JobError::BadCheckpoint(_))) => {}
            other => panic!("expected refusal, got {other:?}"),
        }
    }
}

#[test]
fn corrupt_checkpoint_is_refused() {
    let sys = three_body();
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("job.ckpt");
    let mut a = opts(Method::Polyhedral, 2);
    a.job.checkpoint = Some(ck.clone());
    solve_all(&sys, &a).unwrap();
    let good = std::fs::read(&ck).unwrap();
    a.job.resume = true;

    let mut flipped = good.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    let truncated = good[..good.len() - 5].to_vec();
    for bad in [flipped, truncated, b"not a checkpoint".to_vec()] {
        std::fs::write(&ck, &bad).unwrap();
        match solve_all(&sys, &a) {
            Err(TrackerError::Job(JobError::BadCheckpoint(_))) => {}
            other => panic!("expected refusal, got {other:?}"),
        }
    }
    // the untouched file resumes cleanly
    std::fs::write(&ck, &good).unwrap();
    a.job.resume = true;
    assert!(solve_all(&sys, &a).is_ok());
}
