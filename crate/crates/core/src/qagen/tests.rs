use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;

use proptest::prelude::*;

use super::*;
use crate::cloud::PointCloud;
use crate::register::{FrameDatabase, FrameEntry};
use crate::scene::MaskAnnotation;
use crate::synth::{default_intrinsics, egocentric_pose, generate_scene, sphere_mask, SynthConfig, CAMERA_PITCH};

fn synth_scene() -> &'static SceneModel {
    static SCENE: OnceLock<SceneModel> = OnceLock::new();
    SCENE.get_or_init(|| generate_scene(&SynthConfig::with_seed(11)).unwrap())
}

fn furniture(id: ObjectId, name: &str, position: Vec3) -> SceneObject {
    SceneObject {
        object_id: id,
        name: name.into(),
        position,
        is_furniture: true,
        support: None,
    }
}

fn act(id: ActionId, label: &str, start: f64, end: f64, objects: &[ObjectId]) -> ActionInterval {
    ActionInterval {
        action_id: id,
        label: label.into(),
        start_time: start,
        end_time: end,
        object_refs: objects.to_vec(),
    }
}

/// 10 Hz track over `[0, seconds]` with every frame in the database.
fn manual_scene(
    seconds: f64,
    pose_at: impl Fn(f64) -> Pose,
    objects: Vec<SceneObject>,
    actions: Vec<ActionInterval>,
) -> SceneModel {
    let ticks = (seconds * 10.0).round() as usize;
    let agent_track: Vec<TimedPose> = (0..=ticks)
        .map(|i| {
            let time = i as f64 / 10.0;
            TimedPose { time, pose: pose_at(time) }
        })
        .collect();
    let entries = agent_track
        .iter()
        .enumerate()
        .map(|(i, t)| FrameEntry {
            frame_id: i as FrameId,
            descriptor: pose_descriptor(&t.pose),
            pose: t.pose,
        })
        .collect();
    SceneModel {
        scene_id: "manual".into(),
        intrinsics: default_intrinsics(),
        point_cloud: PointCloud::new(Vec::new(), Vec::new()).unwrap(),
        objects,
        agent_track,
        actions,
        frame_db: FrameDatabase::new(entries).unwrap(),
        masks: Vec::new(),
    }
}

fn standing(x: f64, y: f64, yaw: f64) -> Pose {
    egocentric_pose(Vec3::new(x, y, 1.6), yaw, CAMERA_PITCH)
}

fn clip_of(scene: &SceneModel, start: f64, end: f64) -> Clip {
    Clip {
        start_time: start,
        end_time: end,
        action_ids: actions_within(scene, start, end),
    }
}

#[test]
fn default_mix_allocation_matches_integer_largest_remainder() {
    // Exact integer arithmetic: quota_i = n·c_i / total.
    let total: u64 = REFERENCE_TASK_COUNTS.iter().map(|(_, c)| u64::from(*c)).sum();
    for n in [1usize, 5, 7, 100, 1000, 24371] {
        let mut expected: Vec<(TaskKind, u64, u64)> = REFERENCE_TASK_COUNTS
            .iter()
            .map(|&(t, c)| (t, n as u64 * u64::from(c) / total, n as u64 * u64::from(c) % total))
            .collect();
        let mut left = n as u64 - expected.iter().map(|e| e.1).sum::<u64>();
        let mut order: Vec<usize> = (0..5).collect();
        order.sort_by_key(|&i| (std::cmp::Reverse(expected[i].2), expected[i].0));
        for i in order {
            if left > 0 {
                expected[i].1 += 1;
                left -= 1;
            }
        }
        let got = TaskMix::default().allocate(n);
        for (t, count, _) in expected {
            assert_eq!(got[t.index()] as u64, count, "n={n} task={t}");
        }
    }
    let c = TaskMix::default().allocate(1000);
    assert_eq!(c, [195, 197, 169, 172, 267]);
}

#[test]
fn uniform_mix_of_five_gives_one_each() {
    assert_eq!(TaskMix::uniform().allocate(5), [1; 5]);
}

#[test]
fn mix_parsing() {
    let m = TaskMix::parse("relative_direction=0.5, action_planning=0.5").unwrap();
    assert_eq!(m.get(TaskKind::RelativeDirection), 0.5);
    assert_eq!(m.get(TaskKind::FindMyItem), 0.0);
    assert!(TaskMix::parse("relative_direction=0.5").is_err());
    assert!(TaskMix::parse("cooking=1").is_err());
    assert!(TaskMix::parse("find_my_item").is_err());
    assert!(TaskMix::new([0.5, 0.7, -0.2, 0.0, 0.0]).is_err());
    let json = serde_json::to_string(&m).unwrap();
    assert_eq!(serde_json::from_str::<TaskMix>(&json).unwrap(), m);
}

proptest! {
    #[test]
    fn allocation_sums_and_rounds(raw in prop::array::uniform5(0u32..1000), n in 0usize..5000) {
        prop_assume!(raw.iter().any(|&r| r > 0));
        let total: u32 = raw.iter().sum();
        let mut f = raw.map(|r| f64::from(r) / f64::from(total));
        let drift: f64 = 1.0 - f.iter().sum::<f64>();
        f[0] += drift;
        prop_assume!(f[0] >= 0.0);
        let mix = TaskMix::new(f).unwrap();
        let counts = mix.allocate(n);
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        for i in 0..5 {
            prop_assert!((counts[i] as f64 - n as f64 * f[i]).abs() < 1.0 + 1e-6);
        }
    }
}

#[test]
fn exact_twenty_second_scene_gives_full_clip() {
    let s = manual_scene(
        20.0,
        |_| standing(0.0, 0.0, 0.0),
        vec![furniture(0, "sink", Vec3::new(2.0, 0.0, 0.9))],
        vec![
            act(0, "turn on sink", 0.0, 4.0, &[0]),
            act(1, "turn off sink", 8.0, 12.0, &[0]),
            act(2, "turn on sink", 16.0, 20.0, &[0]),
        ],
    );
    for seed in 0..10 {
        let c = sample_clip(&s, seed).unwrap();
        assert_eq!((c.start_time, c.end_time), (0.0, 20.0));
        assert_eq!(c.action_ids, vec![0, 1, 2]);
    }
}

#[test]
fn single_action_scene_is_too_short() {
    let s = manual_scene(
        60.0,
        |_| standing(0.0, 0.0, 0.0),
        vec![furniture(0, "sink", Vec3::new(2.0, 0.0, 0.9))],
        vec![act(0, "turn on sink", 10.0, 14.0, &[0])],
    );
    assert_eq!(sample_clip(&s, 3), Err(QaError::SceneTooShort));
    assert_eq!(QaError::SceneTooShort.to_string(), "scene too short");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn sampled_clips_hold_whole_actions(seed in any::<u64>()) {
        let s = synth_scene();
        let c = sample_clip(s, seed).unwrap();
        prop_assert!(c.duration() >= MIN_CLIP_SECONDS && c.duration() <= MAX_CLIP_SECONDS);
        prop_assert!(c.start_time >= s.start_time() && c.end_time <= s.end_time());
        prop_assert!(c.action_ids.len() >= 2);
        for a in &s.actions {
            let inside = a.start_time >= c.start_time && a.end_time <= c.end_time;
            prop_assert_eq!(inside, c.action_ids.contains(&a.action_id));
        }
        prop_assert_eq!(sample_clip(s, seed).unwrap(), c);
    }
}

fn pair_scene(actions: Vec<ActionInterval>) -> (SceneModel, Clip) {
    let end = actions.iter().map(|a| a.end_time).fold(0.0, f64::max);
    let objects = (0..8).map(|i| furniture(i, &format!("thing{i}"), Vec3::new(1.0 + i as f64, 0.0, 0.9))).collect();
    let s = manual_scene(end.ceil(), |_| standing(0.0, 0.0, 0.0), objects, actions);
    let clip = Clip {
        start_time: 0.0,
        end_time: end,
        action_ids: s.actions.iter().map(|a| a.action_id).collect(),
    };
    (s, clip)
}

#[test]
fn pair_selection_examples() {
    let (s, c) = pair_scene(vec![
        act(0, "a", 0.0, 4.0, &[0]),
        act(1, "b", 5.0, 9.0, &[1]),
        act(2, "c", 15.0, 19.0, &[2]),
    ]);
    assert_eq!(select_action_pair(&s, &c, 8.0), Ok((0, 2)));

    let (s, c) = pair_scene(vec![
        act(0, "a", 0.0, 4.0, &[0]),
        act(1, "b", 4.0, 8.0, &[1]),
        act(2, "c", 8.0, 12.0, &[2]),
    ]);
    assert_eq!(select_action_pair(&s, &c, 8.0), Err(QaError::NoEligiblePair));
    assert_eq!(QaError::NoEligiblePair.to_string(), "no eligible action pair");

    // Only an adjacent pair is far enough apart.
    let (s, c) = pair_scene(vec![act(0, "a", 0.0, 4.0, &[0]), act(1, "b", 20.0, 24.0, &[1])]);
    assert_eq!(select_action_pair(&s, &c, 8.0), Err(QaError::NoEligiblePair));

    // The first object comes back later, so it cannot be a query object.
    let (s, c) = pair_scene(vec![
        act(0, "a", 0.0, 4.0, &[0]),
        act(1, "b", 5.0, 9.0, &[1]),
        act(2, "c", 15.0, 19.0, &[2]),
        act(3, "d", 20.0, 24.0, &[0]),
    ]);
    assert_eq!(select_action_pair(&s, &c, 8.0), Err(QaError::NoEligiblePair));
}

fn pair_oracle(actions: &[ActionInterval], min_gap: f64) -> Option<(ActionId, ActionId)> {
    let touched_once = |a: &ActionInterval| {
        !a.object_refs.is_empty()
            && a.object_refs.iter().all(|o| {
                actions.iter().map(|b| b.object_refs.iter().filter(|x| *x == o).count()).sum::<usize>() == 1
            })
    };
    let mut candidates = Vec::new();
    for (i, a) in actions.iter().enumerate() {
        for (k, b) in actions.iter().enumerate().skip(i + 2) {
            let gap = b.start_time - a.end_time;
            if gap >= min_gap && touched_once(a) && touched_once(b) {
                candidates.push((gap, i, k));
            }
        }
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    candidates.first().map(|&(_, i, k)| (actions[i].action_id, actions[k].action_id))
}

proptest! {
    #[test]
    fn pair_selection_matches_enumeration(
        spec in prop::collection::vec((0u32..8, 1u32..5, 3u32..6), 1..9),
        min_gap in 2.0f64..12.0,
    ) {
        let mut t = 0.0;
        let actions: Vec<ActionInterval> = spec
            .iter()
            .enumerate()
            .map(|(i, &(obj, pause, len))| {
                let start = t + f64::from(pause);
                t = start + f64::from(len);
                act(i as u32, "x", start, t, &[obj % 5])
            })
            .collect();
        let expected = pair_oracle(&actions, min_gap);
        let (s, c) = pair_scene(actions);
        prop_assert_eq!(select_action_pair(&s, &c, min_gap).ok(), expected);
    }
}

fn ctx_for<'p, 'a>(prep: &'p PreparedScene<'a>, cfg: &'p GenConfig) -> Ctx<'p, 'a> {
    Ctx { prep, cfg }
}

#[test]
fn approaching_the_sink() {
    // Walk along +x from 3 m to 1 m of the sink between 5 s and 20 s.
    let x_at = |t: f64| 1.0 + 2.0 * ((t - 5.0) / 15.0).clamp(0.0, 1.0);
    let sink = Vec3::new(4.0, 0.0, 1.6);
    let s = manual_scene(
        30.0,
        |t| standing(x_at(t), 0.0, 0.0),
        vec![
            furniture(0, "sink", sink),
            furniture(1, "counter", Vec3::new(1.0, -1.0, 0.9)),
            furniture(2, "bin", Vec3::new(2.0, 1.0, 0.9)),
            furniture(3, "shelf", Vec3::new(3.0, 1.0, 0.9)),
        ],
        vec![
            act(0, "wipe counter", 1.0, 5.0, &[1]),
            act(1, "open bin", 8.0, 12.0, &[2]),
            act(2, "tidy shelf", 21.0, 25.0, &[3]),
        ],
    );
    let prep = PreparedScene::new(&s).unwrap();
    let cfg = GenConfig::default();
    let ctx = ctx_for(&prep, &cfg);
    let (a1, ak) = (&s.actions[0], &s.actions[2]);
    let p = distance_trend_payload(&ctx, a1, ak, 0, a1, 0, 0).unwrap();

    // Ground-truth distances at five evenly spaced times over [1, 25].
    let d: Vec<f64> = (0..5)
        .map(|i| {
            let t = 1.0 + 6.0 * i as f64;
            (Vec3::new(x_at(t), 0.0, 1.6) - sink).norm()
        })
        .collect();
    let slope = 0.4 * (2.0 * (d[4] - d[0]) + (d[3] - d[1]));
    match &p {
        RelationPayload::DistanceTrend { trend, slope: s2, distances, .. } => {
            assert_eq!(*trend, TrendKind::Approaching);
            assert!((s2 - slope).abs() < 1e-9);
            for i in 0..5 {
                assert!((distances[i] - d[i]).abs() < 1e-9);
            }
        }
        other => panic!("unexpected payload {other:?}"),
    }
    assert_eq!(
        render_question(&p).unwrap(),
        "Does the person move closer to the sink between 'wipe counter' and 'tidy shelf'?"
    );
    assert_eq!(
        render_answer(&p).unwrap(),
        "The person moves closer to the sink from 'wipe counter' to 'tidy shelf'."
    );
}

#[test]
fn stationary_person_keeps_direction_and_hand() {
    let s = manual_scene(
        30.0,
        |_| standing(0.0, 0.0, 0.0),
        vec![
            furniture(0, "fridge", Vec3::new(1.0, 3.0, 0.9)),
            furniture(1, "oven", Vec3::new(1.0, -3.0, 0.9)),
        ],
        vec![act(0, "open fridge", 1.0, 5.0, &[0]), act(1, "x", 8.0, 12.0, &[]), act(2, "open oven", 20.0, 24.0, &[1])],
    );
    let prep = PreparedScene::new(&s).unwrap();
    let cfg = GenConfig::default();
    let ctx = ctx_for(&prep, &cfg);
    let (a1, ak) = (&s.actions[0], &s.actions[2]);
    let p = direction_change_payload(&ctx, a1, ak, 0, a1, [Direction::Left, Direction::Right], 1).unwrap();
    assert_eq!(
        render_question(&p).unwrap(),
        "Is the fridge to the left of the person when the person is performing 'open fridge', and to the right of the person when 'open oven'?"
    );
    assert_eq!(
        render_answer(&p).unwrap(),
        "The fridge remains to the left of the person during both 'open fridge' and 'open oven'."
    );
    let h = hand_change(&ctx, a1, ak, 1, ak).unwrap();
    assert!(matches!(h, RelationPayload::HandChange { before: Hand::RightHand, changed: false, .. }));
    assert_eq!(
        render_answer(&h).unwrap(),
        "No, the same hand remains closer to the oven during both 'open fridge' and 'open oven'."
    );
    let side = same_side_payload(&ctx, a1, [(0, a1), (1, ak)], 0).unwrap();
    assert_eq!(
        render_answer(&side).unwrap(),
        "No, the fridge is to the left of the person, while the oven is to the right of the person during 'open fridge'."
    );
    let closer = closer_than_payload(&ctx, a1, [(0, a1), (1, ak)], 1).unwrap();
    assert!(matches!(closer, RelationPayload::CloserThan { verdict: Closer::Tie, .. }));
    assert_eq!(
        render_question(&closer).unwrap(),
        "During 'open fridge', would it be easier for the person to access the fridge or the oven?"
    );
}

#[test]
fn turning_person_changes_direction() {
    // Facing +x, then turning to face +y: an object at +y goes from left to front.
    let s = manual_scene(
        30.0,
        |t| standing(0.0, 0.0, FRAC_PI_2 * ((t - 6.0) / 10.0).clamp(0.0, 1.0)),
        vec![furniture(0, "hob", Vec3::new(0.0, 3.0, 0.9))],
        vec![act(0, "turn on hob", 1.0, 5.0, &[0]), act(1, "x", 8.0, 12.0, &[]), act(2, "y", 20.0, 24.0, &[])],
    );
    let prep = PreparedScene::new(&s).unwrap();
    let cfg = GenConfig::default();
    let ctx = ctx_for(&prep, &cfg);
    let p = direction_change_payload(&ctx, &s.actions[0], &s.actions[2], 0, &s.actions[0], [Direction::Left; 2], 0).unwrap();
    assert!(matches!(
        p,
        RelationPayload::DirectionChange { before: Direction::Left, after: Direction::Front, changed: true, .. }
    ));
    assert_eq!(
        render_answer(&p).unwrap(),
        "Initially, the hob is to the left of the person, but as the person moves, it is to the front of the person."
    );
}

#[test]
fn nearby_next_step_means_stay() {
    // Still until 23 s, then half a metre forward.
    let s = manual_scene(
        30.0,
        |t| standing(if t < 23.0 { 0.0 } else { 0.5 }, 0.0, 0.0),
        vec![furniture(0, "sink", Vec3::new(1.5, 0.0, 0.9)), furniture(1, "bin", Vec3::new(0.0, 1.5, 0.9))],
        vec![
            act(0, "turn on sink", 1.0, 5.0, &[0]),
            act(1, "open bin", 10.0, 14.0, &[1]),
            act(2, "turn off sink", 24.0, 28.0, &[0]),
        ],
    );
    let prep = PreparedScene::new(&s).unwrap();
    let cfg = GenConfig::default();
    let ctx = ctx_for(&prep, &cfg);
    let clip = clip_of(&s, 0.0, 22.0);
    let next = next_action(&s, &clip).unwrap();
    assert_eq!(next.action_id, 2);
    let p = next_step_payload(&ctx, &clip, next).unwrap();
    match &p {
        RelationPayload::NextStep { navigation, .. } => {
            assert!(!navigation.moved);
            assert!((navigation.displacement - 0.5).abs() < 1e-9);
        }
        other => panic!("unexpected payload {other:?}"),
    }
    assert_eq!(
        render_question(&p).unwrap(),
        "We are performing a cooking or assembly task with the following sequence of actions: turn on sink, open bin. \
         Based on the video, what should I do next, and how can I get to the place where the next step takes place?"
    );
    assert_eq!(
        render_answer(&p).unwrap(),
        "So far the person has done: 'turn on sink', 'open bin'. The next step is 'turn off sink'. \
         It takes place right here, so stay where you are."
    );
}

#[test]
fn distant_next_step_gives_instruction() {
    // The next action happens 3 m to the right (facing +x, right is -y).
    let s = manual_scene(
        30.0,
        |t| standing(0.0, if t < 23.0 { 0.0 } else { -3.0 }, 0.0),
        vec![furniture(0, "sink", Vec3::new(1.5, 0.0, 0.9)), furniture(1, "oven", Vec3::new(1.5, -3.0, 0.9))],
        vec![
            act(0, "turn on sink", 1.0, 5.0, &[0]),
            act(1, "turn off sink", 10.0, 14.0, &[0]),
            act(2, "open oven", 24.0, 28.0, &[1]),
        ],
    );
    let prep = PreparedScene::new(&s).unwrap();
    let cfg = GenConfig::default();
    let clip = clip_of(&s, 0.0, 22.0);
    let p = next_step_payload(&ctx_for(&prep, &cfg), &clip, &s.actions[2]).unwrap();
    assert!(render_answer(&p).unwrap().ends_with("To get to where it takes place, move right."));
}

#[test]
fn affordance_picks_next_furniture() {
    let s = manual_scene(
        30.0,
        |t| standing(0.0, 0.0, if t < 18.0 { 0.0 } else { -FRAC_PI_2 }),
        vec![
            furniture(0, "sink", Vec3::new(2.0, 0.0, 0.9)),
            furniture(1, "hob", Vec3::new(0.0, -2.0, 0.9)),
            furniture(2, "fridge", Vec3::new(-2.0, 0.0, 0.9)),
            furniture(3, "bin", Vec3::new(0.0, 2.0, 0.9)),
        ],
        vec![
            act(0, "turn on sink", 1.0, 5.0, &[0]),
            act(1, "turn off sink", 8.0, 12.0, &[0]),
            act(2, "open fridge", 13.0, 17.0, &[2]),
            act(3, "turn on hob", 25.0, 29.0, &[1]),
        ],
    );
    let prep = PreparedScene::new(&s).unwrap();
    let mut successes = 0;
    for seed in 0..40 {
        let Ok(r) = generate_qa(&prep, TaskKind::FurnitureAffordance, seed, &GenConfig::default()) else {
            continue;
        };
        successes += 1;
        match &r.relation_payload {
            RelationPayload::NextObject { options, answer, next_action, .. } => {
                assert_eq!(options[*answer].name, "hob");
                assert_eq!(next_action.id, 3);
                assert!((2..=3).contains(&options.len()));
            }
            other => panic!("unexpected payload {other:?}"),
        }
        assert!(r.answer.starts_with("The person will most likely interact with the hob next"));
        assert!(r.question.contains("Options: the "));
    }
    assert!(successes > 0);
}

#[test]
fn placed_item_is_found_to_the_right() {
    // The mug is put down in front of the person, who then turns left.
    let mug_at = Vec3::new(1.2, 0.0, 1.0);
    let yaw_at = |t: f64| FRAC_PI_2 * ((t - 7.0) / 3.0).clamp(0.0, 1.0);
    let mut s = manual_scene(
        30.0,
        |t| standing(0.0, 0.0, yaw_at(t)),
        vec![
            furniture(0, "counter", Vec3::new(1.2, 0.0, 0.9)),
            furniture(1, "shelf", Vec3::new(0.0, 2.0, 0.9)),
            SceneObject {
                object_id: 2,
                name: "mug".into(),
                position: mug_at,
                is_furniture: false,
                support: Some(0),
            },
        ],
        vec![act(0, "put down mug", 2.0, 6.0, &[2]), act(1, "tidy shelf", 12.0, 16.0, &[1])],
    );
    let radius = 0.06;
    let n = 400;
    let points: Vec<Vec3> = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let phi = i as f64 * std::f64::consts::PI * (3.0 - 5f64.sqrt());
            let r = (1.0 - z * z).sqrt();
            mug_at + radius * Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect();
    s.point_cloud = PointCloud::new(points.clone(), vec![Vec3::zeros(); n]).unwrap();
    let frame = s.median_frame(2.0, 6.0).unwrap();
    s.masks.push(MaskAnnotation {
        object_id: 2,
        frame_index: frame,
        mask: sphere_mask(&s.intrinsics, &s.agent_track[frame].pose, &mug_at, radius),
    });
    assert!(is_placement(&s, &s.actions[0]));
    assert!(!is_placement(&s, &s.actions[1]));

    let prep = PreparedScene::new(&s).unwrap();
    let cfg = GenConfig::default();
    let ctx = ctx_for(&prep, &cfg);
    let clip = clip_of(&s, 0.0, 22.0);
    let p = item_location_payload(&ctx, &clip, &s.actions[0], 1).unwrap();
    assert!(matches!(p, RelationPayload::ItemLocation { direction: Direction::Right, .. }));
    assert_eq!(
        render_question(&p).unwrap(),
        "After performing 'put down mug', where did the person leave the mug, and how can it be reached?"
    );
    assert_eq!(
        render_answer(&p).unwrap(),
        "The mug is to their right, on the counter. It is within reach, so the person can stay where they are."
    );
    let loc = prep.object_position(2, &s.actions[0], cfg.localize).unwrap();
    assert!((loc - mug_at).norm() < 0.01);

    let d = item_delivery_payload(&ctx, &s.actions[0], [1, 0]).unwrap();
    assert!(matches!(d, RelationPayload::ItemDelivery { verdict: Closer::B, .. }));
    assert_eq!(render_answer(&d).unwrap(), "It would be closer to bring the mug to the counter.");
}

#[test]
fn every_task_generates_valid_records_on_synthetic_scene() {
    let s = synth_scene();
    let prep = PreparedScene::new(s).unwrap();
    let cfg = GenConfig::default();
    let mut records = Vec::new();
    for task in TaskKind::ALL {
        let mut made = 0;
        for seed in 0..30u64 {
            if let Ok(r) = generate_qa(&prep, task, seed, &cfg) {
                assert_eq!(r.task, task);
                assert_eq!(generate_qa(&prep, task, seed, &cfg).unwrap(), r);
                records.push(r);
                made += 1;
            }
        }
        assert!(made >= 5, "{task}: only {made} of 30 seeds eligible");
    }
    let report = validate_dataset(&records, Some(std::slice::from_ref(s)));
    assert_eq!(report.failed(), 0, "{:?}", report.checks.iter().find(|c| !c.passed()));
}

fn small_dataset() -> Dataset {
    generate_dataset(std::slice::from_ref(synth_scene()), 25, &TaskMix::uniform(), 5, &GenConfig::default()).unwrap()
}

#[test]
fn dataset_counts_ids_and_determinism() {
    let d = small_dataset();
    assert!(d.is_complete(), "{:?}", d.shortfalls);
    assert_eq!(d.requested, [5; 5]);
    for t in TaskKind::ALL {
        assert_eq!(d.records.iter().filter(|r| r.task == t).count(), 5);
    }
    assert_eq!(d.records[0].record_id, "rea-000000");
    assert_eq!(to_jsonl(&d.records), to_jsonl(&small_dataset().records));
    let (parsed, report) = validate_jsonl(&to_jsonl(&d.records), Some(std::slice::from_ref(synth_scene())));
    assert_eq!(parsed, d.records);
    assert!(report.all_passed());
}

#[test]
fn record_json_has_exact_keys() {
    let d = small_dataset();
    let v: serde_json::Value = serde_json::from_str(&serde_json::to_string(&d.records[0]).unwrap()).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    let mut expected = vec![
        "record_id",
        "scene_id",
        "task",
        "clip",
        "question",
        "answer",
        "query_objects",
        "query_actions",
        "relation_payload",
        "provenance",
    ];
    expected.sort_unstable();
    let mut sorted = keys.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, expected);
    let clip_keys: Vec<&String> = v["clip"].as_object().unwrap().keys().collect();
    assert_eq!(clip_keys.len(), 3);
    for k in ["start_time", "end_time", "action_ids"] {
        assert!(v["clip"].get(k).is_some());
    }
    let line = serde_json::to_string(&d.records[0]).unwrap();
    let order: Vec<usize> = [
        "\"record_id\"",
        "\"scene_id\"",
        "\"task\"",
        "\"clip\"",
        "\"question\"",
        "\"answer\"",
        "\"query_objects\"",
        "\"query_actions\"",
        "\"relation_payload\"",
        "\"provenance\"",
    ]
    .iter()
    .map(|k| line.find(k).unwrap())
    .collect();
    assert!(order.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn tampering_is_reported() {
    let mut records = small_dataset().records;
    records[3].answer.push_str(" Definitely.");
    records[4].record_id = records[5].record_id.clone();
    records[6].query_objects.push(999);
    let report = validate_dataset(&records, None);
    assert!(report.checks[3].reasons.iter().any(|r| r.contains("answer does not match")));
    assert!(report.checks[4].reasons.iter().any(|r| r.contains("duplicate")));
    assert!(report.checks[5].reasons.iter().any(|r| r.contains("duplicate")));
    assert!(!report.checks[6].passed());
    assert_eq!(report.failed(), 4);

    let mut text = to_jsonl(&records[..2]);
    text.push_str("{\"record_id\": 1}\n");
    let (_, report) = validate_jsonl(&text, None);
    assert_eq!(report.checks.len(), 3);
    assert_eq!(report.checks[2].record, "line 3");

    let mut wrong_scene = records[0].clone();
    wrong_scene.scene_id = "elsewhere".into();
    let report = validate_dataset(&[wrong_scene], Some(std::slice::from_ref(synth_scene())));
    assert!(report.checks[0].reasons.iter().any(|r| r.contains("unknown scene")));
}

#[test]
fn payload_verdicts_must_agree_with_numbers() {
    let mut records = small_dataset().records;
    let r = records
        .iter_mut()
        .find(|r| matches!(r.relation_payload, RelationPayload::DistanceTrend { .. }))
        .expect("a distance trend record");
    if let RelationPayload::DistanceTrend { distances, .. } = &mut r.relation_payload {
        distances.reverse();
        distances[0] += 10.0;
    }
    let report = validate_dataset(std::slice::from_ref(&*r), None);
    assert!(report.checks[0].reasons.iter().any(|x| x.contains("disagrees")));
}

#[test]
fn ineligible_task_shows_up_as_shortfall() {
    // Nothing happens after the last clip could end, so no next action exists.
    let s = manual_scene(
        20.0,
        |_| standing(0.0, 0.0, 0.0),
        vec![furniture(0, "sink", Vec3::new(2.0, 0.0, 0.9)), furniture(1, "bin", Vec3::new(0.0, 2.0, 0.9))],
        vec![
            act(0, "turn on sink", 0.0, 4.0, &[0]),
            act(1, "open bin", 8.0, 12.0, &[1]),
            act(2, "turn off sink", 16.0, 20.0, &[0]),
        ],
    );
    let cfg = GenConfig {
        max_attempts: 5,
        ..GenConfig::default()
    };
    let mix = TaskMix::parse("action_planning=1").unwrap();
    let d = generate_dataset(std::slice::from_ref(&s), 10, &mix, 1, &cfg).unwrap();
    assert!(d.records.is_empty());
    assert_eq!(d.shortfalls.len(), 1);
    assert_eq!(d.shortfalls[0].task, TaskKind::ActionPlanning);
    assert_eq!(d.shortfalls[0].requested, 10);
    assert_eq!(d.shortfalls[0].reason, "no action after clip");
}

#[test]
fn record_seeds_are_distinct_per_index_and_attempt() {
    let mut seen = BTreeSet::new();
    for i in 0..50 {
        for a in 0..5 {
            assert!(seen.insert(record_seed(9, i, a)));
        }
    }
    assert_eq!(record_seed(9, 3, 2), record_seed(9, 3, 2));
}

#[test]
fn option_lists_read_naturally() {
    let n = |s: &str| Named { id: 0, name: s.into() };
    assert_eq!(option_list(&[n("sink"), n("hob")]), "the sink or the hob");
    assert_eq!(option_list(&[n("sink"), n("hob"), n("bin")]), "the sink, the hob, or the bin");
}
