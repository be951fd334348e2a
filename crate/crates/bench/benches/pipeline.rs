use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use gatepilot::camera::{calibrate_planar, synthetic_views, CalibrationOptions, CameraModel};
use gatepilot::controller::ControlConfig;
use gatepilot::geometry::{Frame, RigidTransform, RotationMatrix, Vec3};
use gatepilot::harness::{ControllerSide, LoopContext};
use gatepilot::perception::{observe_markers, solve_pnp, MarkerSpec, NoiseProfile, SimRng};
use gatepilot::vehicle::{random_course, DroneState, PlantParams};
use rand::SeedableRng;

fn bench_pnp(c: &mut Criterion) {
    let cam = CameraModel::default_synthetic();
    let pose = RigidTransform::new(
        RotationMatrix::about_y(0.3) * RotationMatrix::about_x(std::f64::consts::PI + 0.2),
        Vec3::new(-120.0, 60.0, 1100.0),
        Frame::Marker(1),
        Frame::World,
    );
    let marker = MarkerSpec::new(1, 150.0, pose).unwrap();
    let eye = RigidTransform::identity(Frame::Camera).with_frames(Frame::Camera, Frame::World);
    let noise = NoiseProfile {
        pixel_sigma: 0.5,
        dropout_prob: 0.0,
        seed: 0,
    };
    let obs = observe_markers(&[marker], &eye, &cam, &noise, &mut SimRng::seed_from_u64(0), 0.0);
    c.bench_function("solve_pnp", |b| b.iter(|| solve_pnp(black_box(&obs[0]), 150.0, &cam).unwrap()));
}

fn bench_tick(c: &mut Criterion) {
    let cam = CameraModel::default_synthetic();
    let course = random_course(3, &mut SimRng::seed_from_u64(1));
    let control = ControlConfig::default();
    let plant = PlantParams::default();
    let ctx = LoopContext {
        course: &course,
        camera: &cam,
        control: &control,
        plant: &plant,
        strategy: 2,
        noise: NoiseProfile {
            pixel_sigma: 0.3,
            dropout_prob: 0.01,
            seed: 1,
        },
        camera_hz: 30,
        tracker_timeout: 0.3,
        max_time: 120.0,
    };
    let mut side = ControllerSide::new(&ctx).unwrap();
    let state = DroneState::at_rest(Vec3::new(0.0, 0.0, 1000.0), 0.0);
    c.bench_function("perception_control_tick", |b| b.iter(|| side.decide(black_box(&state))));
}

fn bench_calibration(c: &mut Criterion) {
    let cam = CameraModel::default_synthetic();
    let views = synthetic_views(&cam, 10, 0.2, &mut SimRng::seed_from_u64(2));
    let opts = CalibrationOptions::new(960, 720);
    let mut group = c.benchmark_group("calibration");
    group.sample_size(20);
    group.bench_function("ten_views", |b| b.iter(|| calibrate_planar(black_box(&views), &opts).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_pnp, bench_tick, bench_calibration);
criterion_main!(benches);
