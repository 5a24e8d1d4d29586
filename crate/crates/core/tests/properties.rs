use proptest::prelude::*;
use sketchnav_core::agent::{action_to_command, build_observation, OBS_DIM};
use sketchnav_core::command::{parse_instruction, ParseResult, Place};
use sketchnav_core::constraints::{compile_sketches, expand_location, inflate_polyline, Fixture, SemanticMap, Sketch};
use sketchnav_core::crowd::{orca_velocity, Neighbor, OrcaParams, Pedestrian, PedestrianModel, PedestrianState};
use sketchnav_core::geometry::{ConvexPolygon, Segment, Vec2};
use sketchnav_core::service::metrics::EpisodeRecord;
use sketchnav_core::service::{Method, Metrics, Outcome};
use sketchnav_core::taskmode::{next_target, GroundedTask, Phase, TaskParams, TaskProgress};
use sketchnav_core::world::{
    classify_contact, raycast_scan, step_dynamics, Bounds, KinematicLimits, Pose, RobotState, ScanConfig, World,
};
use std::f64::consts::PI;

fn room() -> World {
    let obstacles = vec![ConvexPolygon::square(Vec2::new(7.0, 7.0), 1.0).unwrap()];
    let segs = vec![Segment { a: Vec2::new(2.0, 8.0), b: Vec2::new(4.0, 8.0) }];
    World::new(Bounds::new(Vec2::ZERO, Vec2::new(10.0, 10.0)), obstacles, segs).unwrap()
}

fn vec2(lo: f64, hi: f64) -> impl Strategy<Value = Vec2> {
    (lo..hi, lo..hi).prop_map(|(x, y)| Vec2::new(x, y))
}

fn square_ring(c: Vec2, h: f64) -> Vec<Vec2> {
    vec![
        c + Vec2::new(-h, -h),
        c + Vec2::new(h, -h),
        c + Vec2::new(h, h),
        c + Vec2::new(-h, h),
        c + Vec2::new(-h, -h),
    ]
}

fn map() -> SemanticMap {
    SemanticMap::new(vec![
        Fixture::new("fridge", Vec2::new(8.0, 8.0), 0.8, 0.7),
        Fixture::new("table", Vec2::new(5.0, 5.0), 1.2, 0.8),
        Fixture::new("sofa", Vec2::new(1.5, 2.0), 2.0, 0.9),
        Fixture::new("carpet", Vec2::new(3.0, 6.0), 2.0, 1.5),
    ])
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pose_heading_is_normalized(x in -5.0..5.0f64, y in -5.0..5.0f64, theta in -100.0..100.0f64) {
        let p = Pose::new(x, y, theta);
        prop_assert!(p.theta > -PI && p.theta <= PI);
        prop_assert!(((p.theta - theta) / (2.0 * PI)).fract().abs() < 1e-9 || (1.0 - ((p.theta - theta) / (2.0 * PI)).fract().abs()) < 1e-9);
    }

    #[test]
    fn dynamics_saturate_to_the_limits(v in -10.0..10.0f64, w in -10.0..10.0f64, theta in -PI..PI) {
        let limits = KinematicLimits::default();
        let s = step_dynamics(&RobotState::at(Pose::new(5.0, 5.0, theta)), (v, w), 0.1, &limits);
        prop_assert!(s.v >= limits.v_min && s.v <= limits.v_max);
        prop_assert!(s.w.abs() <= limits.w_max);
        prop_assert!(s.pose.theta > -PI && s.pose.theta <= PI);
    }

    #[test]
    fn scan_ranges_are_in_range_and_monotone_under_added_obstacles(
        pos in vec2(0.5, 5.5), theta in -PI..PI, c in vec2(1.0, 9.0), side in 0.1..1.5f64,
    ) {
        let world = room();
        prop_assume!(world.is_free(pos));
        let pose = Pose::new(pos.x, pos.y, theta);
        let cfg = ScanConfig::default();
        let base = raycast_scan(&world, &pose, &cfg).unwrap();
        prop_assert_eq!(base.ranges.len(), cfg.n_beams);
        prop_assert!(base.ranges.iter().all(|&r| r > 0.0 && r <= cfg.max_range));
        let block = ConvexPolygon::square(c, side).unwrap();
        prop_assume!(!block.contains(pos));
        let more = world.with_polygons([block]);
        let after = raycast_scan(&more, &pose, &cfg).unwrap();
        for (a, b) in after.ranges.iter().zip(&base.ranges) {
            prop_assert!(a <= b);
        }
        prop_assert_eq!(raycast_scan(&world, &pose, &cfg).unwrap(), base);
    }

    #[test]
    fn contact_classification_is_pure(pos in vec2(0.2, 9.8), c in vec2(2.0, 8.0), h in 0.2..1.0f64) {
        let world = room();
        let mut cs = sketchnav_core::ConstraintSet::default();
        cs.add_virtual_obstacle(square_ring(c, h)[..4].to_vec(), sketchnav_core::constraints::ConstraintSource::SketchInput).unwrap();
        let state = RobotState::at(Pose::new(pos.x, pos.y, 0.0));
        let a = classify_contact(&state, &world, &cs, &[]);
        let b = classify_contact(&state, &world, &cs, &[]);
        prop_assert_eq!(a.kind() == sketchnav_core::world::ContactKind::None, a.contact_id().is_none());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn expand_location_is_monotone(c in vec2(-5.0, 5.0), l in 0.1..3.0f64, w in 0.1..3.0f64, r1 in 0.0..1.0f64, dr in 0.001..1.0f64) {
        let f = Fixture::new("f", c, l, w);
        let small = expand_location(&f, r1).unwrap();
        let big = expand_location(&f, r1 + dr).unwrap();
        prop_assert!(small.vertices().iter().all(|&v| big.contains(v)));
        prop_assert!(big.area() > small.area());
    }

    #[test]
    fn compiled_constraints_ignore_sketch_order(centers in proptest::collection::vec(vec2(1.0, 9.0), 2..5), margin in 0.1..0.6f64) {
        let mut sketches: Vec<Sketch> = centers.iter().map(|&c| Sketch::closed_region(square_ring(c, 0.3))).collect();
        sketches.push(Sketch::safety_outline(vec![centers[0], centers[1]], margin));
        let key = |s: &[Sketch]| {
            let cs = compile_sketches(s).unwrap().constraints;
            let mut v: Vec<String> = cs.virtual_obstacles.iter().map(|r| format!("{:?}", r.vertices)).collect();
            v.sort();
            let mut k: Vec<String> = cs.keep_out_zones.iter().map(|r| format!("{:?}", r.vertices)).collect();
            k.sort();
            (v, k)
        };
        let forward = key(&sketches);
        sketches.reverse();
        prop_assert_eq!(forward, key(&sketches));
    }

    #[test]
    fn goal_mark_order_decides_the_goal(a in vec2(0.0, 9.0), b in vec2(0.0, 9.0)) {
        let s = [Sketch::goal(a), Sketch::goal(b)];
        prop_assert_eq!(compile_sketches(&s).unwrap().goal, Some(b));
    }

    #[test]
    fn inflated_polyline_contains_its_points(pts in proptest::collection::vec(vec2(0.0, 10.0), 2..6), margin in 0.05..1.0f64) {
        let zone = inflate_polyline(&pts, margin).unwrap();
        for w in pts.windows(2) {
            for k in 0..=10 {
                let p = w[0] + (w[1] - w[0]) * (k as f64 / 10.0);
                prop_assert!(zone.contains(p));
            }
        }
    }

    #[test]
    fn parser_is_total_and_deterministic(text in "\\PC{0,80}") {
        let m = map();
        let peds = vec!["VIP05".to_string()];
        let a = parse_instruction(&text, &m, &peds);
        prop_assert_eq!(&a, &parse_instruction(&text, &m, &peds));
    }

    #[test]
    fn parsed_fixtures_resolve(
        verb in prop::sample::select(vec!["Go to", "Guide VIP05 to", "Navigate to", "Head to"]),
        goal in prop::sample::select(vec!["fridge", "table", "sofa", "carpet", "piano"]),
        via in prop::option::of(prop::sample::select(vec!["table", "sofa", "lamp"])),
    ) {
        let m = map();
        let text = match via {
            Some(v) => format!("{verb} the {goal} via the {v}"),
            None => format!("{verb} the {goal}"),
        };
        if let ParseResult::Parsed { task: Some(spec), .. } = parse_instruction(&text, &m, &["VIP05".to_string()]) {
            for p in spec.goal.iter().chain(spec.via.iter()) {
                if let Place::Fixture(name) = p {
                    prop_assert!(m.get(name).is_some(), "{} does not resolve", name);
                }
            }
        }
    }

    #[test]
    fn orca_respects_the_speed_bound(
        vel in vec2(-1.5, 1.5), goal in vec2(-5.0, 5.0),
        others in proptest::collection::vec((vec2(-3.0, 3.0), vec2(-1.5, 1.5), any::<bool>()), 0..8),
    ) {
        let mut p = Pedestrian::new("p", Vec2::ZERO, PedestrianModel::ORCA).with_waypoints(vec![goal]);
        p.velocity = vel;
        let nb: Vec<Neighbor> = others.iter().enumerate()
            .map(|(k, (pos, v, recip))| Neighbor { id: format!("n{k}"), position: *pos, velocity: *v, radius: 0.3, reciprocal: *recip })
            .collect();
        let out = orca_velocity(&p, &nb, 0.1, &OrcaParams::default());
        prop_assert!(out.norm() <= p.max_speed() + 1e-9, "{} > {}", out.norm(), p.max_speed());
    }

    #[test]
    fn target_is_always_a_via_the_goal_or_the_vip(
        kind in 0..3usize,
        goal in vec2(0.0, 10.0),
        vias in proptest::collection::vec(vec2(0.0, 10.0), 0..4),
        path in proptest::collection::vec((vec2(0.0, 10.0), vec2(0.0, 10.0)), 1..30),
    ) {
        let task = match kind {
            0 => GroundedTask::point_to_point(goal, vias.clone()),
            1 => GroundedTask::following("VIP05"),
            _ => GroundedTask::guiding("VIP05", goal, vias.clone()),
        };
        let mut progress = TaskProgress::start(&task, TaskParams::default());
        for (robot, vip) in path {
            let peds = [PedestrianState { id: "VIP05".into(), position: vip, velocity: Vec2::ZERO, vip: true }];
            let r = RobotState::at(Pose::new(robot.x, robot.y, 0.0));
            let (t, next) = next_target(&task, &progress, &r, &peds).unwrap();
            prop_assert!(t == goal || t == vip || vias.contains(&t));
            if kind == 0 && vias.is_empty() {
                prop_assert_eq!(t, goal);
            }
            prop_assert!(next.via_index <= vias.len());
            // Guiding: a fresh switch cannot be undone by the same state.
            if kind == 2 && next.phase != progress.phase && matches!(next.phase, Phase::ToGoal | Phase::ToVia(_) | Phase::ToVip) {
                let (_, again) = next_target(&task, &next, &r, &peds).unwrap();
                prop_assert!(
                    !(matches!(next.phase, Phase::ToVip) && !matches!(again.phase, Phase::ToVip))
                        && !(matches!(again.phase, Phase::ToVip) && !matches!(next.phase, Phase::ToVip)),
                    "{:?} -> {:?} -> {:?}", progress.phase, next.phase, again.phase
                );
            }
            prop_assert_eq!(next_target(&task, &progress, &r, &peds).unwrap(), (t, next.clone()));
            progress = next;
        }
    }

    #[test]
    fn observation_and_action_stay_in_bounds(
        pos in vec2(0.5, 5.5), theta in -PI..PI, target in vec2(-20.0, 30.0),
        v in -3.0..3.0f64, w in -3.0..3.0f64, u in proptest::collection::vec(-5.0..5.0f64, 2),
    ) {
        let world = room();
        prop_assume!(world.is_free(pos));
        let pose = Pose::new(pos.x, pos.y, theta);
        let limits = KinematicLimits::default();
        let scan = raycast_scan(&world, &pose, &ScanConfig::default()).unwrap();
        let obs = build_observation(&scan, &pose, target, v, w, &limits);
        prop_assert_eq!(obs.len(), OBS_DIM);
        prop_assert!(obs.iter().all(|x| (-1.0..=1.0).contains(x)));
        let (cv, cw) = action_to_command(&u, &limits);
        prop_assert!(cv >= limits.v_min && cv <= limits.v_max && cw.abs() <= limits.w_max);
    }

    #[test]
    fn outcome_rates_sum_to_one(outcomes in proptest::collection::vec(0..6usize, 1..200)) {
        let mut m = Metrics::default();
        for (k, o) in outcomes.iter().enumerate() {
            m.push(EpisodeRecord {
                scenario: "s".into(),
                test: "t".into(),
                episode: k as u64,
                method: Method::Fused,
                outcome: Outcome::ALL[*o],
                ticks: 1,
                time_s: 0.1,
                path_length: 0.0,
                vias_passed: vec![],
                trajectory: vec![],
            });
        }
        let r = m.rates().unwrap();
        prop_assert!((r.total() - 1.0).abs() < 1e-12);
    }
}
