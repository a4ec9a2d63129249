use std::time::Instant;

#[test]
fn time_impulse() {
    use responsekit::response::*;
    use responsekit::srnn::*;
    let p = SrnnParams::scalar_ou(1.0, 1.0, 0.5, InitLaw::Point(vec![0.0]))
        .unwrap()
        .with_stationary_init()
        .unwrap();
    let dt = 0.005;
    let spec = ImpulseSpec::default_for(dt);
    let t0 = Instant::now();
    let est = impulse_response_mc(&p, &[1.0], 2.5, 2.0, &spec, dt, 20_000, 7).unwrap();
    // 20k trajectories x 500 steps x 3 variants = 3e7 steps
    println!("20k trajectories: {:?}  value {}", t0.elapsed(), est.value);
}
