//! Verification cost: checking a nonce is exactly one evaluation — one
//! widget execution and three gate calls (input gate, program digest,
//! output gate). Runs as its own test binary so the process-wide call
//! counters see no other traffic.

use hashcore::gate::{gate_call_count, GateSpec};
use hashcore::pipeline::{mine, verify, HashCoreConfig, MineResult};
use hashcore::widgetvm::execute_call_count;

#[test]
fn verify_is_one_evaluation() {
    let cfg = HashCoreConfig::new(
        GateSpec::truncated(32).unwrap(),
        hashcore::default_profile(),
    )
    .unwrap();
    // target 2^252: one in sixteen digests qualifies
    let mut target = [0u8; 32];
    target[0] = 0x10;

    let MineResult::Found { nonce, attempts } = mine(&cfg, b"header", &target, 0, 2000).unwrap()
    else {
        panic!("no nonce found in 2000 attempts at p = 1/16");
    };

    let gates_before = gate_call_count();
    let execs_before = execute_call_count();
    assert!(verify(&cfg, b"header", nonce, &target).unwrap());
    assert_eq!(
        execute_call_count() - execs_before,
        1,
        "verification must execute the widget exactly once"
    );
    assert_eq!(
        gate_call_count() - gates_before,
        3,
        "verification must call the gate exactly three times"
    );

    // mining paid `attempts` evaluations for the same conclusion
    assert!(attempts >= 1);
}
