use dictseg::propagation::UpdateOptions;
use dictseg_server::state::SessionState;
use dictseg_server::stroke::Stroke;
use proptest::prelude::*;

const W: usize = 12;
const H: usize = 9;

#[derive(Debug, Clone)]
enum Op {
    Paint(Vec<Stroke>),
    Undo,
    Finish,
}

fn stroke() -> impl Strategy<Value = Stroke> {
    (
        proptest::collection::vec((-2.0f64..14.0, -2.0f64..11.0), 1..4),
        0.0f64..2.5,
        prop_oneof![Just(None), (1u16..=3).prop_map(Some)],
    )
        .prop_map(|(pts, radius, class)| Stroke {
            points: pts.into_iter().map(|(x, y)| [x, y]).collect(),
            radius,
            class,
        })
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => proptest::collection::vec(stroke(), 1..3).prop_map(Op::Paint),
        1 => Just(Op::Undo),
        2 => Just(Op::Finish),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn revisions_undo_and_coalescing(ops in proptest::collection::vec(op(), 1..40)) {
        let mut s = SessionState::<u64>::new(W * H, 3, UpdateOptions::default()).unwrap();
        let mut snapshots = vec![s.marks().clone()];
        let mut running: Option<u64> = None;
        let mut jobs = 0usize;
        for op in ops {
            let before = s.revision();
            match op {
                Op::Paint(strokes) => {
                    let (rev, job) = s.submit(W, H, &strokes, None).unwrap();
                    if rev == before {
                        prop_assert!(job.is_none());
                        prop_assert_eq!(s.marks(), snapshots.last().unwrap());
                    } else {
                        prop_assert_eq!(rev, before + 1);
                        snapshots.push(s.marks().clone());
                        if let Some(j) = job {
                            prop_assert!(running.is_none());
                            prop_assert_eq!(&j.marks, s.marks());
                            running = Some(j.revision);
                            jobs += 1;
                        } else {
                            prop_assert!(running.is_some());
                        }
                    }
                }
                Op::Undo => match s.undo() {
                    Ok((rev, job)) => {
                        prop_assert_eq!(rev, before + 1);
                        snapshots.pop();
                        prop_assert_eq!(s.marks(), snapshots.last().unwrap());
                        if let Some(j) = job {
                            prop_assert!(running.is_none());
                            running = Some(j.revision);
                            jobs += 1;
                        }
                    }
                    Err(_) => prop_assert_eq!(snapshots.len(), 1),
                },
                Op::Finish => {
                    if let Some(r) = running.take() {
                        let follow = s.finish(r, r);
                        prop_assert_eq!(s.latest().unwrap().0, r);
                        // Everything submitted while running folds into at
                        // most one follow-up reflecting the current state.
                        prop_assert_eq!(follow.is_some(), r < s.revision());
                        if let Some(j) = follow {
                            prop_assert_eq!(j.revision, s.revision());
                            prop_assert_eq!(&j.marks, s.marks());
                            running = Some(j.revision);
                            jobs += 1;
                        }
                    }
                }
            }
            prop_assert_eq!(s.in_flight(), running);
        }
        prop_assert!(jobs <= s.revision() as usize + 1);
    }
}
