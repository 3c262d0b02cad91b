use criterion::{black_box, criterion_group, criterion_main, Criterion};
use curricar::agent::{AgentConfig, Td3Agent, Transition};
use curricar::buffer::{BehaviorBuffer, Rollout};
use curricar::generator::{select_optimal, GeneratorConfig, ManeuverPrior};
use curricar::trainer::corpus::{generate_corpus, CorpusKind};
use curricar::{
    cast_rays, obb_intersects, Action, CriticalArea, Insights, LidarConfig, RelativeRegion,
    SensorMask, Vec2, VehicleState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(rng: &mut ChaCha8Rng) -> VehicleState {
    VehicleState {
        position: Vec2::new(rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)),
        heading: rng.gen_range(-3.14..3.14),
        speed: rng.gen_range(0.0..15.0),
        length: 4.0,
        width: 2.0,
    }
}

fn bench_obb(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(VehicleState, VehicleState)> =
        (0..256).map(|_| (random_state(&mut rng), random_state(&mut rng))).collect();
    c.bench_function("obb_intersects_256_pairs", |b| {
        b.iter(|| {
            let mut hits = 0usize;
            for (a, o) in &pairs {
                hits += obb_intersects(black_box(a), black_box(o)) as usize;
            }
            hits
        })
    });
}

fn bench_rays(c: &mut Criterion) {
    let scenario = generate_corpus(1, 3).remove(0);
    let obstacles: Vec<VehicleState> =
        scenario.participants.iter().map(|p| *p.state_at(0)).collect();
    let cfg = LidarConfig::default();
    c.bench_function("cast_rays_36", |b| {
        b.iter(|| {
            cast_rays(
                black_box(&scenario.ego_start),
                &scenario.map,
                &obstacles,
                &SensorMask::none(),
                &cfg,
            )
        })
    });
}

fn bench_select_optimal(c: &mut Criterion) {
    let scenario = curricar::trainer::corpus::generate_scenario(CorpusKind::Merge, 0, 5);
    let mut buffer = BehaviorBuffer::new(5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let steps: Vec<(VehicleState, Action, f64)> = (0..120)
            .map(|k| {
                let mut state = scenario.ego_start;
                state.position = state.position + state.forward() * (0.5 * k as f64);
                (state, Action::new(0.0, 0.3), rng.gen_range(-0.5..0.0))
            })
            .collect();
        buffer.record_rollout(Rollout::from_steps(scenario.id.clone(), steps));
    }
    let insights = Insights {
        situation: "s".into(),
        reasoning: "r".into(),
        recommendation: "c".into(),
        critical_area: CriticalArea::new([RelativeRegion::Front, RelativeRegion::Left]).unwrap(),
        provenance: curricar::analysis::Provenance::Stub,
        created_at_step: 0,
    };
    let prior = ManeuverPrior {
        params: Default::default(),
    };
    let cfg = GeneratorConfig::default();
    c.bench_function("select_optimal_2bv_32k", |b| {
        b.iter(|| select_optimal(black_box(&scenario), &buffer, &insights, &prior, &cfg).unwrap())
    });
}

fn bench_td3_update(c: &mut Criterion) {
    let mut agent = Td3Agent::new(44, AgentConfig::default(), 7);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let transitions: Vec<Transition> = (0..64)
        .map(|_| Transition {
            obs: (0..44).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            reward: rng.gen_range(-1.0..1.0),
            next_obs: (0..44).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            done: rng.gen_bool(0.05),
        })
        .collect();
    let batch: Vec<&Transition> = transitions.iter().collect();
    c.bench_function("td3_update_batch64", |b| {
        b.iter(|| agent.td3_update(black_box(&batch)).unwrap())
    });
}

criterion_group!(benches, bench_obb, bench_rays, bench_select_optimal, bench_td3_update);
criterion_main!(benches);
