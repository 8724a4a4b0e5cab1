use std::sync::Arc;

use improv_core::gateway::mock::{MockFailure, MockRule};
use improv_core::gateway::{MockFixtures, MockProvider, ProviderConfig, TokenUsage};
use improv_core::prompt::TemplateId;
use improv_core::story::{ActionOption, PartOrigin, Phase, StoryEngine, StoryError, StorySession};
use improv_core::{Gateway, PerformanceAnalysis, TemplateRegistry};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Perform,
    Propose(usize),
    Advance(usize),
    AdvanceStale(usize),
    AdvanceForged,
    Redeem(usize),
    Conclude,
    FailingPerform,
    FailingAdvance(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => Just(Op::Perform),
        3 => (1usize..5).prop_map(Op::Propose),
        4 => (0usize..4).prop_map(Op::Advance),
        1 => (0usize..4).prop_map(Op::AdvanceStale),
        1 => Just(Op::AdvanceForged),
        1 => (0usize..4).prop_map(Op::Redeem),
        1 => Just(Op::Conclude),
        1 => Just(Op::FailingPerform),
        1 => (0usize..4).prop_map(Op::FailingAdvance),
    ]
}

fn engine(fixtures: MockFixtures) -> StoryEngine {
    let gateway = Gateway::with_provider(Arc::new(MockProvider::new(fixtures)), ProviderConfig::mock());
    StoryEngine::deterministic(gateway, Arc::new(TemplateRegistry::builtin()))
}

fn broken_engine() -> StoryEngine {
    let mut fixtures = MockFixtures::builtin();
    for id in TemplateId::ALL {
        fixtures = fixtures.override_rule(Some(id), MockRule::fail(MockFailure::Provider { status: Some(503) }));
    }
    engine(fixtures)
}

fn analysis() -> PerformanceAnalysis {
    PerformanceAnalysis {
        transcript: "Look out, the bridge is falling!".into(),
        motion_description: "The person jumps back with both arms raised.".into(),
        sampled_frame_indices: vec![0, 15, 30],
        token_usage: TokenUsage::new(400, 20),
    }
}

fn pick(options: &[ActionOption], i: usize) -> Option<&ActionOption> {
    (!options.is_empty()).then(|| &options[i % options.len()])
}

fn check_step(before: &StorySession, after: &StorySession, result: &Result<(), StoryError>) -> Result<(), TestCaseError> {
    after.check_invariants().map_err(TestCaseError::fail)?;
    if result.is_err() {
        prop_assert_eq!(before, after, "rejected op changed the session: {:?}", result);
        return Ok(());
    }
    prop_assert!(after.parts.len() >= before.parts.len());
    prop_assert_eq!(&after.parts[..before.parts.len()], &before.parts[..], "parts are append-only");
    prop_assert!(after.keypoints.is_superset(&before.keypoints), "ledger shrank");
    prop_assert!(after.rng_draws >= before.rng_draws);
    if before.phase == Phase::Concluded {
        prop_assert!(false, "op succeeded on a concluded session");
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn random_op_sequences_keep_invariants(seed in any::<u64>(), ops in prop::collection::vec(op(), 1..10)) {
        let engine = engine(MockFixtures::builtin());
        let broken = broken_engine();
        let mut session = engine.init_session(None, seed).unwrap();
        session.check_invariants().map_err(TestCaseError::fail)?;
        let mut current: Vec<ActionOption> = Vec::new();
        let mut stale: Vec<ActionOption> = Vec::new();

        for op in ops {
            let before = session.clone();
            let result: Result<(), StoryError> = match &op {
                Op::Perform => engine.advance_with_performance(&mut session, &analysis()).map(drop),
                Op::Propose(n) => engine.propose_actions(&mut session, *n).map(|options| {
                    stale.append(&mut current);
                    current = options;
                }),
                Op::Advance(i) => match pick(&current, *i).cloned() {
                    Some(chosen) => engine.advance_with_ai(&mut session, &chosen).map(drop),
                    None => continue,
                },
                Op::AdvanceStale(i) => match pick(&stale, *i).cloned() {
                    Some(chosen) => {
                        let r = engine.advance_with_ai(&mut session, &chosen).map(drop);
                        if session.phase != Phase::Concluded {
                            prop_assert!(matches!(r, Err(StoryError::StaleAction(_))), "{:?}", r);
                        }
                        r
                    }
                    None => continue,
                },
                Op::AdvanceForged => {
                    let forged = ActionOption {
                        title: "Summon a dragon".into(),
                        description: "Not on the menu.".into(),
                        batch: session.active_batch.unwrap_or(0),
                    };
                    let r = engine.advance_with_ai(&mut session, &forged).map(drop);
                    prop_assert!(r.is_err());
                    r
                }
                Op::Redeem(i) => {
                    if let Some(option) = pick(&current, *i) {
                        let found = engine.redeem_action(&session, &option.title).map(|_| ());
                        prop_assert_eq!(found.is_ok(), session.active_batch == Some(option.batch));
                    }
                    continue;
                }
                Op::Conclude => engine.conclude_story(&mut session).map(drop),
                Op::FailingPerform => {
                    let r = broken.advance_with_performance(&mut session, &analysis()).map(drop);
                    prop_assert!(r.is_err());
                    r
                }
                Op::FailingAdvance(i) => match pick(&current, *i).cloned() {
                    Some(chosen) => {
                        let r = broken.advance_with_ai(&mut session, &chosen).map(drop);
                        prop_assert!(r.is_err());
                        r
                    }
                    None => continue,
                },
            };
            check_step(&before, &session, &result)?;
            if result.is_ok() && !matches!(op, Op::Propose(_)) {
                // any advancement spends the offered batch
                stale.append(&mut current);
                prop_assert_eq!(session.active_batch, None);
            }
            if session.phase == Phase::Concluded {
                prop_assert_eq!(session.parts.last().unwrap().origin, PartOrigin::Conclusion);
            }
        }
    }
}
