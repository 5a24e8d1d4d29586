//! Acceptance suite. Each test prints one PASS/FAIL line with its measured
//! numbers and then asserts. Run with `--nocapture` to see the lines.

mod common;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sketchnav_core::agent::sac::{squash, standard_normal};
use sketchnav_core::agent::{
    actor_loss_grad, alpha_loss_grad, critic_loss_grad, critic_target, sample_action, train, Batch, Checkpoint,
    EnvConfig, EpisodeEnd, LogRow, NavEnv, SacAgent, SacConfig, TrainConfig,
};
use sketchnav_core::constraints::{compile_sketches, expand_location, ConstraintSet, ConstraintSource, Fixture, Sketch};
use sketchnav_core::crowd::{orca_velocity, sfm_accel, Neighbor, OrcaParams, Pedestrian, PedestrianModel, PedestrianState, SfmParams};
use sketchnav_core::geometry::{convex_decompose, ConvexPolygon, Segment, Vec2};
use sketchnav_core::service::report::parse_aggregate;
use sketchnav_core::service::{
    evaluate, render_csv, replay, ControlMode, Driver, Envelope, Inbound, Method, Metrics, Outcome, Scenario, Session,
    SessionConfig,
};
use sketchnav_core::taskmode::{next_target, GroundedTask, Phase, TaskParams, TaskProgress};
use sketchnav_core::world::{merge_scan, raycast_scan, Bounds, Pose, RobotState, ScanConfig, World};
use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

// Pinned tolerances.
const MERGE_TOL: f64 = 1e-9;
const SFM_TOL: f64 = 1e-9;
const ORCA_TOL: f64 = 0.05;
const FD_REL_TOL: f64 = 1e-4;
const DESK_SUCCESS_MIN: f64 = 0.85;
const TREND_RATIO_MAX: f64 = 0.5;

fn verdict(criterion: &str, ok: bool, detail: String) {
    println!("{} {criterion}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{criterion}: {detail}");
}

fn rand_point<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Vec2 {
    Vec2::new(rng.random_range(lo..hi), rng.random_range(lo..hi))
}

/// Random simple polygon: star-shaped around a center, often concave.
fn random_ring<R: Rng>(rng: &mut R, center: Vec2, r_max: f64) -> Vec<Vec2> {
    let n = rng.random_range(3..8);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 0.15);
    if angles.len() < 3 {
        angles = vec![0.0, 2.1, 4.2];
    }
    angles.iter().map(|&a| center + Vec2::from_angle(a) * rng.random_range(0.3 * r_max..r_max)).collect()
}

fn random_world<R: Rng>(rng: &mut R) -> World {
    let bounds = Bounds::new(Vec2::ZERO, Vec2::new(10.0, 10.0));
    let polys: Vec<ConvexPolygon> = (0..rng.random_range(0..4))
        .map(|_| ConvexPolygon::square(rand_point(rng, 1.5, 8.5), rng.random_range(0.3..1.5)).unwrap())
        .collect();
    let segs: Vec<Segment> = (0..rng.random_range(0..5))
        .map(|_| {
            let a = rand_point(rng, 0.5, 9.5);
            let b = a + Vec2::from_angle(rng.random_range(0.0..2.0 * PI)) * rng.random_range(0.5..3.0);
            Segment::new(a, Vec2::new(b.x.clamp(0.1, 9.9), b.y.clamp(0.1, 9.9)))
        })
        .collect();
    World::new(bounds, polys, segs).unwrap()
}

#[test]
fn merged_scan_matches_physically_augmented_world() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = ScanConfig::default();
    let (mut cases, mut worst, mut attempts) = (0, 0.0f64, 0);
    while cases < 1000 {
        attempts += 1;
        assert!(attempts < 20_000, "could not generate cases");
        let world = random_world(&mut rng);
        let center = rand_point(&mut rng, 2.0, 8.0);
        let r_max = rng.random_range(0.4..1.8);
        let ring = random_ring(&mut rng, center, r_max);
        let Ok(parts) = convex_decompose(&ring) else { continue };
        let mut constraints = ConstraintSet::default();
        let added = if rng.random_bool(0.5) {
            constraints.add_virtual_obstacle(ring.clone(), ConstraintSource::SketchInput)
        } else {
            constraints.add_keep_out_zone(ring.clone(), ConstraintSource::SketchInput)
        };
        if added.is_err() {
            continue;
        }
        let pos = rand_point(&mut rng, 0.2, 9.8);
        if !world.is_free(pos) || parts.iter().any(|p| p.contains(pos)) {
            continue;
        }
        let pose = Pose::new(pos.x, pos.y, rng.random_range(-PI..PI));
        let physical = raycast_scan(&world, &pose, &cfg).unwrap();
        let merged = merge_scan(&physical, &constraints, &pose, &cfg).unwrap();
        let augmented = raycast_scan(&world.with_polygons(parts), &pose, &cfg).unwrap();
        for (a, b) in merged.ranges.iter().zip(&augmented.ranges) {
            worst = worst.max((a - b).abs());
        }
        cases += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        "merged-scan oracle equivalence",
        worst < MERGE_TOL && secs < 60.0,
        format!("{cases} cases, max |delta| = {worst:.3e} m (tol {MERGE_TOL:e}), {secs:.1} s"),
    );
}

#[test]
fn constraint_geometry_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = Vec::new();
    for k in 0..1000 {
        let f = Fixture::new(format!("f{k}"), rand_point(&mut rng, -20.0, 20.0), rng.random_range(0.05..4.0), rng.random_range(0.05..4.0));
        if expand_location(&f, 0.0).unwrap() != f.footprint() {
            failures.push(format!("r=0 footprint differs for {}", f.name));
        }
        let r1 = rng.random_range(0.0..1.5);
        let r2 = r1 + rng.random_range(1e-3..1.5);
        let (small, big) = (expand_location(&f, r1).unwrap(), expand_location(&f, r2).unwrap());
        // Strict nesting: every vertex of the smaller zone is interior to the larger.
        if !small.vertices().iter().all(|&v| big.contains_strict(v)) {
            failures.push(format!("{}: r={r1} not inside r={r2}", f.name));
        }

        let n = rng.random_range(2..6);
        let line: Vec<Vec2> = (0..n).map(|_| rand_point(&mut rng, 0.0, 10.0)).collect();
        let margin = rng.random_range(0.05..1.0);
        let compiled = compile_sketches(&[Sketch::safety_outline(line.clone(), margin)]).unwrap();
        let zone = &compiled.constraints.keep_out_zones[0];
        let along = line.windows(2).flat_map(|w| (0..=20).map(move |i| w[0] + (w[1] - w[0]) * (i as f64 / 20.0)));
        if !line.iter().copied().chain(along).all(|p| zone.contains(p)) {
            failures.push(format!("outline {k} escapes its zone"));
        }
    }
    verdict(
        "constraint geometry",
        failures.is_empty(),
        format!("1000 fixtures and 1000 outlines, {} failures {:?}", failures.len(), failures.iter().take(3).collect::<Vec<_>>()),
    );
}

#[test]
fn parser_corpus_passes() {
    let (c, map) = common::corpus();
    let mut failures: Vec<String> = c.canonical.iter().filter_map(|e| common::check_canonical(e, &map, &c.pedestrians).err()).collect();
    failures.extend(c.ambiguous.iter().filter_map(|e| common::check_ambiguous(e, &map, &c.pedestrians).err()));
    let has_guiding = c.canonical.iter().any(|e| e.text.starts_with("Guide VIP05 to the fridge, taking a route near the bookshelf"));
    let has_spill = c.canonical.iter().any(|e| e.text.contains("spilled") && e.virtual_obstacles > 0);
    let ok = failures.is_empty() && c.canonical.len() >= 20 && c.ambiguous.len() >= 5 && has_guiding && has_spill;
    verdict(
        "parser corpus",
        ok,
        format!("{} canonical + {} ambiguous utterances, failures: {failures:?}", c.canonical.len(), c.ambiguous.len()),
    );
}

#[test]
fn taskmode_traces_are_exact() {
    let vip = |x: f64, y: f64| vec![PedestrianState { id: "VIP05".into(), position: Vec2::new(x, y), velocity: Vec2::ZERO, vip: true }];
    let at = |x: f64, y: f64| RobotState::at(Pose::new(x, y, 0.0));
    let goal = Vec2::new(10.0, 0.0);
    let task = GroundedTask::guiding("VIP05", goal, vec![]);
    // (robot, vip, expected phase, expected target)
    let script = [
        ((0.0, 0.0), (5.0, 0.0), Phase::ToVip, Vec2::new(5.0, 0.0)),
        ((4.1, 0.0), (5.0, 0.0), Phase::ToGoal, goal),
        ((6.0, 0.0), (5.0, 0.0), Phase::ToGoal, goal),
        ((7.6, 0.0), (5.0, 0.0), Phase::ToVip, Vec2::new(5.0, 0.0)),
        ((6.0, 0.0), (5.2, 0.0), Phase::ToGoal, goal),
        ((9.6, 0.0), (8.0, 0.0), Phase::Done, goal),
    ];
    let mut progress = TaskProgress::start(&task, TaskParams::default());
    let mut seen = Vec::new();
    let mut ok = true;
    for ((rx, ry), (vx, vy), phase, target) in script {
        let (t, next) = next_target(&task, &progress, &at(rx, ry), &vip(vx, vy)).unwrap();
        ok &= next.phase == phase && t == target;
        seen.push(next.phase);
        progress = next;
    }

    let follow = GroundedTask::following("VIP05");
    let mut progress = TaskProgress::start(&follow, TaskParams::default());
    let mut follow_ok = 0;
    for k in 0..200 {
        let a = k as f64 * 0.05;
        let p = Vec2::new(5.0 + 3.0 * a.cos(), 5.0 + 3.0 * a.sin());
        let r = Vec2::new(5.0 + 2.0 * (a - 0.3).cos(), 5.0 + 2.0 * (a - 0.3).sin());
        let (t, next) = next_target(&follow, &progress, &at(r.x, r.y), &vip(p.x, p.y)).unwrap();
        if t == p && next.phase == Phase::ToVip {
            follow_ok += 1;
        }
        progress = next;
    }
    verdict(
        "taskmode FSM traces",
        ok && follow_ok == 200,
        format!("guiding phases {seen:?}; following target == VIP on {follow_ok}/200 ticks"),
    );
}

/// Independent SFM evaluation: driving term plus capped exponential repulsion.
fn sfm_oracle(p: &Pedestrian, others: &[Neighbor], world: &World, prm: &SfmParams) -> Vec2 {
    let wp = p.waypoints[0];
    let e = (wp - p.position) / (wp - p.position).norm();
    let mut f = (e * p.v0 - p.velocity) / prm.tau;
    let push = |f: &mut Vec2, from: Vec2, overlap: f64| {
        let d = p.position - from;
        *f += d / d.norm() * (prm.a * (overlap / prm.b).exp()).min(prm.f_max);
    };
    for o in others {
        push(&mut f, o.position, p.radius + o.radius - (p.position - o.position).norm());
    }
    let closest = |a: Vec2, b: Vec2| {
        let ab = b - a;
        let t = ((p.position - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
        a + ab * t
    };
    let (lo, hi) = (world.bounds.min, world.bounds.max);
    let corners = [lo, Vec2::new(hi.x, lo.y), hi, Vec2::new(lo.x, hi.y)];
    let mut edges: Vec<(Vec2, Vec2)> = (0..4).map(|i| (corners[i], corners[(i + 1) % 4])).collect();
    edges.extend(world.segments.iter().map(|s| (s.a, s.b)));
    for (a, b) in edges {
        let q = closest(a, b);
        push(&mut f, q, p.radius - (p.position - q).norm());
    }
    for poly in &world.polygons {
        let v = poly.vertices();
        let q = (0..v.len())
            .map(|i| closest(v[i], v[(i + 1) % v.len()]))
            .min_by(|x, y| x.distance(p.position).total_cmp(&y.distance(p.position)))
            .unwrap();
        push(&mut f, q, p.radius - (p.position - q).norm());
    }
    f
}

/// Exact membership in the truncated velocity obstacle: some t in [0, tau]
/// with |t·w − p| < r.
fn in_vo(w: Vec2, p: Vec2, r: f64, tau: f64) -> bool {
    let ww = w.dot(w);
    let t = if ww > 0.0 { (w.dot(p) / ww).clamp(0.0, tau) } else { 0.0 };
    (w * t - p).norm() < r
}

/// Smallest change `u` that moves `w` onto the VO boundary, with the
/// outward normal there; found by a polar sweep with bisection.
fn vo_escape(w: Vec2, p: Vec2, r: f64, tau: f64) -> (Vec2, Vec2) {
    let inside = in_vo(w, p, r, tau);
    let mut best = (f64::INFINITY, Vec2::ZERO);
    for k in 0..1440 {
        let d = Vec2::from_angle(k as f64 * 2.0 * PI / 1440.0);
        let (mut lo, mut hi) = (0.0, f64::NAN);
        let mut s = 0.0;
        while s < 6.0 {
            s += 0.01;
            if in_vo(w + d * s, p, r, tau) != inside {
                hi = s;
                break;
            }
            lo = s;
        }
        if hi.is_nan() {
            continue;
        }
        for _ in 0..50 {
            let m = 0.5 * (lo + hi);
            if in_vo(w + d * m, p, r, tau) != inside {
                hi = m;
            } else {
                lo = m;
            }
        }
        if hi < best.0 {
            best = (hi, d);
        }
    }
    let (s, d) = best;
    (d * s, if inside { d } else { -d })
}

#[test]
fn crowd_models_match_their_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let prm = SfmParams::default();

    // SFM against direct formula evaluation.
    let (mut sfm_worst, mut sfm_cases) = (0.0f64, 0);
    while sfm_cases < 1000 {
        let bounds = Bounds::new(Vec2::new(-6.0, -6.0), Vec2::new(6.0, 6.0));
        let segs = (0..rng.random_range(0..3))
            .map(|_| Segment::new(rand_point(&mut rng, -5.0, 5.0), rand_point(&mut rng, -5.0, 5.0)))
            .collect();
        let polys = (0..rng.random_range(0..3))
            .map(|_| ConvexPolygon::square(rand_point(&mut rng, -4.0, 4.0), rng.random_range(0.3..1.5)).unwrap())
            .collect();
        let world = World::new(bounds, polys, segs).unwrap();
        let pos = rand_point(&mut rng, -4.0, 4.0);
        if !world.is_free(pos) || world.clearance(pos) < 1e-3 {
            continue;
        }
        let mut p = Pedestrian::new("p", pos, PedestrianModel::SFM).with_waypoints(vec![pos + Vec2::from_angle(rng.random_range(0.0..2.0 * PI)) * rng.random_range(1.0..5.0)]);
        p.velocity = rand_point(&mut rng, -1.2, 1.2);
        p.v0 = rng.random_range(0.8..1.2);
        let others: Vec<Neighbor> = (0..rng.random_range(0..6))
            .map(|k| Neighbor {
                id: format!("n{k}"),
                position: pos + Vec2::from_angle(rng.random_range(0.0..2.0 * PI)) * rng.random_range(0.2..4.0),
                velocity: rand_point(&mut rng, -1.0, 1.0),
                radius: 0.3,
                reciprocal: true,
            })
            .collect();
        let got = sfm_accel(&p, &others, &world, &prm);
        let want = sfm_oracle(&p, &others, &world, &prm);
        sfm_worst = sfm_worst.max((got - want).norm());
        sfm_cases += 1;
    }

    // ORCA against brute force over the permitted set.
    let params = OrcaParams::default();
    let (mut orca_cases, mut orca_worst, mut tries) = (0, 0.0f64, 0);
    while orca_cases < 200 {
        tries += 1;
        assert!(tries < 5000);
        let mut p = Pedestrian::new("a", Vec2::ZERO, PedestrianModel::ORCA).with_waypoints(vec![Vec2::from_angle(rng.random_range(0.0..2.0 * PI)) * 6.0]);
        p.v0 = rng.random_range(0.8..1.2);
        p.velocity = Vec2::from_angle(rng.random_range(0.0..2.0 * PI)) * rng.random_range(0.0..p.max_speed());
        let others: Vec<Neighbor> = (0..rng.random_range(1..4))
            .map(|k| Neighbor {
                id: format!("n{k}"),
                position: Vec2::from_angle(rng.random_range(0.0..2.0 * PI)) * rng.random_range(0.75..3.5),
                velocity: rand_point(&mut rng, -1.0, 1.0),
                radius: 0.3,
                reciprocal: rng.random_bool(0.7),
            })
            .collect();
        if others.iter().enumerate().any(|(i, a)| others[..i].iter().any(|b| a.position.distance(b.position) < 0.6)) {
            continue;
        }
        let planes: Vec<(Vec2, Vec2)> = others
            .iter()
            .map(|o| {
                let (u, n) = vo_escape(p.velocity - o.velocity, o.position - p.position, p.radius + o.radius, params.time_horizon);
                let share = if o.reciprocal { 0.5 } else { 1.0 };
                (p.velocity + u * share, n)
            })
            .collect();
        let vmax = p.max_speed();
        let pref = p.preferred_velocity();
        let ok_v = |v: Vec2| v.norm() <= vmax && planes.iter().all(|(pt, n)| (v - *pt).dot(*n) >= 0.0);
        // Dense grid over the speed disc, then coarse-to-fine around the best sample.
        let (mut center, mut half, mut grid) = (Vec2::ZERO, vmax, 113);
        let mut best: Option<(f64, Vec2)> = None;
        let mut feasible = 0;
        for stage in 0..5 {
            let step = 2.0 * half / grid as f64;
            for i in 0..grid {
                for j in 0..grid {
                    let v = center + Vec2::new(-half + step * (i as f64 + 0.5), -half + step * (j as f64 + 0.5));
                    if !ok_v(v) {
                        continue;
                    }
                    if stage == 0 {
                        feasible += 1;
                    }
                    let d = v.distance(pref);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, v));
                    }
                }
            }
            let Some((_, b)) = best else { break };
            center = b;
            half = 5.0 * step;
            grid = 41;
        }
        // Infeasible programs fall back to least violation; not what this oracle measures.
        if feasible < 30 {
            continue;
        }
        let got = orca_velocity(&p, &others, 0.1, &params);
        let dev = got.distance(best.unwrap().1);
        orca_worst = orca_worst.max(dev);
        orca_cases += 1;
    }

    // Head-on pair: lateral escapes have opposite signs.
    let mut a = Pedestrian::new("a", Vec2::new(-1.5, 0.02), PedestrianModel::ORCA).with_waypoints(vec![Vec2::new(10.0, 0.02)]);
    let mut b = Pedestrian::new("b", Vec2::new(1.5, -0.02), PedestrianModel::ORCA).with_waypoints(vec![Vec2::new(-10.0, -0.02)]);
    a.velocity = Vec2::new(1.0, 0.0);
    b.velocity = Vec2::new(-1.0, 0.0);
    let va = orca_velocity(&a, &[b.as_neighbor()], 0.1, &params);
    let vb = orca_velocity(&b, &[a.as_neighbor()], 0.1, &params);
    let reciprocal = va.y.abs() > 1e-3 && va.y.signum() != vb.y.signum();

    verdict(
        "crowd oracles",
        sfm_worst < SFM_TOL && orca_worst < ORCA_TOL && reciprocal,
        format!(
            "SFM max err {sfm_worst:.2e} over {sfm_cases} configs (tol {SFM_TOL:e}); ORCA max dev {orca_worst:.4} m/s over {orca_cases} configs (tol {ORCA_TOL}); head-on lateral {:.3} / {:.3}",
            va.y, vb.y
        ),
    );
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn central_diff(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let x = p[i];
            p[i] = x + h;
            let up = f(&p);
            p[i] = x - h;
            let down = f(&p);
            p[i] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn tiny_train(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        total_steps: 2500,
        warmup_steps: 300,
        update_after: 200,
        sac: SacConfig { hidden: vec![16, 16], batch_size: 32, buffer_capacity: 5000, ..SacConfig::default() },
        env: EnvConfig { n_pedestrians: 2, max_steps: 80, ..EnvConfig::default() },
        ..TrainConfig::default()
    }
}

#[test]
fn sac_numerics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SacConfig { hidden: vec![8, 8], batch_size: 6, init_alpha: 0.3, ..SacConfig::default() };
    let agent: SacAgent<f64> = SacAgent::new(4, 2, cfg, &mut rng);
    let batch = Batch {
        obs: standard_normal(6, 4, &mut rng),
        act: standard_normal::<f64, _>(6, 2, &mut rng).mapv(f64::tanh),
        rew: Array1::from(vec![1.0, -0.5, 0.25, 2.0, 0.0, -1.5]),
        next_obs: standard_normal(6, 4, &mut rng),
        done: Array1::from(vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]),
    };
    let eps_next: Array2<f64> = standard_normal(6, 2, &mut rng);
    let eps: Array2<f64> = standard_normal(6, 2, &mut rng);
    let h = 1e-6;

    let y = critic_target(&agent, &batch, Some(eps_next.view()));
    let (_, g) = critic_loss_grad(&agent.q1, batch.obs.view(), batch.act.view(), &y);
    let fd = central_diff(&agent.q1.params_flat(), h, |p| {
        let mut q = agent.q1.clone();
        q.set_params_flat(p);
        critic_loss_grad(&q, batch.obs.view(), batch.act.view(), &y).0
    });
    let critic_err = rel_err(&g.flat(), &fd);

    let step = actor_loss_grad(&agent, batch.obs.view(), eps.view());
    let fd = central_diff(&agent.actor.params_flat(), h, |p| {
        let mut a = agent.clone();
        a.actor.set_params_flat(p);
        actor_loss_grad(&a, batch.obs.view(), eps.view()).loss
    });
    let actor_err = rel_err(&step.grads.flat(), &fd);

    let mean_lp = squash(&agent.actor, batch.obs.view(), eps.view()).log_prob.mean().unwrap();
    let (_, g_alpha) = alpha_loss_grad(agent.log_alpha, mean_lp, agent.target_entropy());
    let fd = central_diff(&[agent.log_alpha], h, |p| alpha_loss_grad(p[0], mean_lp, agent.target_entropy()).0);
    let alpha_err = rel_err(&[g_alpha], &fd);

    let terminal_exact = (0..6).filter(|&i| batch.done[i] == 1.0).all(|i| y[i] == batch.rew[i]);

    let a = train(&tiny_train(5), None, &mut |_| {}).unwrap();
    let b = train(&tiny_train(5), None, &mut |_| {}).unwrap();
    let deterministic = a.log == b.log && a.agent.actor == b.agent.actor && !a.log.is_empty();

    let ok = critic_err < FD_REL_TOL && actor_err < FD_REL_TOL && alpha_err < FD_REL_TOL && terminal_exact && deterministic;
    verdict(
        "SAC numerics",
        ok,
        format!(
            "FD rel err critic {critic_err:.2e}, actor {actor_err:.2e}, temperature {alpha_err:.2e} (tol {FD_REL_TOL:e}); terminal y = r: {terminal_exact}; train twice identical: {deterministic} ({} episodes)",
            a.log.len()
        ),
    );
}

struct Trained {
    checkpoint: Checkpoint,
    log: Vec<LogRow>,
    env: EnvConfig,
    secs: f64,
}

/// Trains the desk-scale policy once per test run. `SKETCHNAV_CHECKPOINT`
/// and `SKETCHNAV_TRAIN_LOG` reuse the output of `sketchnav train` instead.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg: TrainConfig = serde_json::from_str(&std::fs::read_to_string(common::repo_path("configs/train_desk.json")).unwrap()).unwrap();
        if let (Ok(ck), Ok(log)) = (std::env::var("SKETCHNAV_CHECKPOINT"), std::env::var("SKETCHNAV_TRAIN_LOG")) {
            let rows = csv::Reader::from_path(log).unwrap().deserialize().collect::<Result<Vec<LogRow>, _>>().unwrap();
            return Trained { checkpoint: Checkpoint::load(ck).unwrap(), log: rows, env: cfg.env, secs: 0.0 };
        }
        let t0 = Instant::now();
        let r = train(&cfg, None, &mut |_| {}).unwrap();
        Trained { checkpoint: Checkpoint::from_agent(&r.agent, r.steps), log: r.log, env: cfg.env, secs: t0.elapsed().as_secs_f64() }
    })
}

#[test]
fn desk_scale_training_reaches_target() {
    let t = trained();
    let window = &t.log[t.log.len().saturating_sub(100)..];
    let trailing = t.log.last().map(|r| r.success_rate).unwrap_or(0.0);
    let steps = t.log.last().map(|r| r.step).unwrap_or(0);
    // Only constraint-injected episodes can end in alpha.
    let window_alpha = window.iter().filter(|r| r.outcome == "alpha").count();

    // Held-out check, reported only: every episode carries a constraint on the straight path.
    let agent = t.checkpoint.to_agent();
    let mut env = NavEnv::new(EnvConfig { constraint_prob: 1.0, ..t.env.clone() });
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let (mut n, mut reached, mut alpha) = (0, 0, 0);
    while n < 100 {
        let Some(mut obs) = env.reset(&mut rng) else { continue };
        n += 1;
        loop {
            let o: Vec<f32> = obs.iter().map(|&x| x as f32).collect();
            let (u, _) = sample_action(&agent.actor, &o, true, &mut rng).unwrap();
            let s = env.step(&u.iter().map(|&x| f64::from(x)).collect::<Vec<_>>());
            obs = s.obs;
            match &s.end {
                Some(EpisodeEnd::Reached) => reached += 1,
                Some(EpisodeEnd::Contact(c)) if c.kind() == sketchnav_core::world::ContactKind::VirtualContact => alpha += 1,
                _ => {}
            }
            if s.end.is_some() {
                break;
            }
        }
    }
    verdict(
        "desk-scale training",
        trailing >= DESK_SUCCESS_MIN && window_alpha == 0 && window.len() == 100 && steps <= 500_000,
        format!(
            "{steps} steps in {:.0} s, trailing-100 success {trailing:.2} (min {DESK_SUCCESS_MIN}), {window_alpha} alpha failures in the window; \
             held-out constrained rollouts: {reached}/100 reached, {alpha} alpha",
            t.secs
        ),
    );
}

#[test]
fn constraint_fusion_halves_alpha_and_beta() {
    let t = trained();
    let scenario = Scenario::load(common::repo_path("scenarios/trend_static.json")).unwrap();
    let fused = evaluate(&t.checkpoint, &scenario, 100, true, 31).unwrap().rates().unwrap();
    let blind = evaluate(&t.checkpoint, &scenario, 100, false, 31).unwrap().rates().unwrap();
    let ok = fused.alpha <= TREND_RATIO_MAX * blind.alpha
        && fused.beta <= TREND_RATIO_MAX * blind.beta
        && (blind.alpha > 0.0 || blind.beta > 0.0);
    verdict(
        "constraint-fusion outcome trend",
        ok,
        format!(
            "fused alpha {:.1}% beta {:.1}% success {:.1}% | physical-only alpha {:.1}% beta {:.1}% success {:.1}%",
            100.0 * fused.alpha,
            100.0 * fused.beta,
            100.0 * fused.success,
            100.0 * blind.alpha,
            100.0 * blind.beta,
            100.0 * blind.success
        ),
    );
}

#[test]
fn metrics_and_replay_are_faithful() {
    // Reports from real episodes and from random outcome mixes.
    let scenario = Scenario::load(common::repo_path("scenarios/home_static.json")).unwrap();
    let mut metrics = Metrics::default();
    for use_constraints in [true, false] {
        let mut s = Session::new("m", SessionConfig { use_constraints, max_steps: Some(60), ..SessionConfig::default() }, None)
            .with_scenario(scenario.clone());
        s.handle(&Envelope::new(None, Inbound::SetControl { mode: ControlMode::Manual }));
        for k in 0..scenario.tests.len() {
            s.start_test(k, None);
            s.handle(&Envelope::new(None, Inbound::ManualInput { linear: 0.6, angular: 0.2 * k as f64 - 0.5 }));
            metrics.episodes.extend(s.run_to_end());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut reports = vec![metrics];
    for _ in 0..50 {
        let mut m = Metrics::default();
        for i in 0..rng.random_range(1..60) {
            let mut e = reports[0].episodes[0].clone();
            e.episode = i;
            e.outcome = Outcome::ALL[rng.random_range(0..6)];
            e.method = [Method::Fused, Method::PhysicalOnly, Method::Manual][rng.random_range(0..3)];
            m.push(e);
        }
        reports.push(m);
    }
    let mut bad_sums = 0;
    for m in &reports {
        let csv = render_csv(m).unwrap();
        for (_, vals) in parse_aggregate(&csv) {
            let total = *vals.last().unwrap();
            if total != 100.0 {
                bad_sums += 1;
            }
        }
        for method in m.methods() {
            if (m.for_method(method).rates().unwrap().total() - 1.0).abs() > 1e-12 {
                bad_sums += 1;
            }
        }
    }

    // Record a live session with pedestrians, sketches and manual input, then replay.
    let mut d = Driver::new(Session::new("rec", SessionConfig { seed: 5, pedestrian_noise: 0.03, ..SessionConfig::default() }, None), None, true);
    d.handle(&Envelope::new(None, Inbound::LoadScenario { scenario: sketchnav_core::service::protocol::ScenarioSource::Inline(Box::new(Scenario::load(common::repo_path("scenarios/home_pedestrian.json")).unwrap().to_file())) }));
    d.handle(&Envelope::new(None, Inbound::SetControl { mode: ControlMode::Manual }));
    d.handle(&Envelope::new(None, Inbound::Start { test: Some(0) }));
    for k in 0..150 {
        match k {
            5 => drop(d.handle(&Envelope::new(None, Inbound::ManualInput { linear: 0.5, angular: 0.1 }))),
            40 => drop(d.handle(&Envelope::new(None, Inbound::Command { text: "Stay away from the table".into() }))),
            70 => drop(d.handle(&Envelope::new(None, Inbound::AddSketch { sketch: Sketch::safety_outline(vec![Vec2::new(6.0, 6.0), Vec2::new(7.0, 7.5)], 0.3) }))),
            _ => {}
        }
        d.tick();
    }
    let log = d.log.take().unwrap();
    let report = replay(&log).unwrap();
    let ok = bad_sums == 0 && report.identical() && report.recorded >= 50;
    verdict(
        "metrics integrity and replay fidelity",
        ok,
        format!(
            "{} reports, {bad_sums} with rates not summing to 100%; replay {} frames, first mismatch {:?}",
            reports.len(),
            report.recorded,
            report.first_mismatch
        ),
    );
}
