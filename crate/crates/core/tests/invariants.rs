use oam_core::collision::{minkowski_separation, point_barrier, Ellipsoid, ObstacleSet};
use oam_core::geometry::{RotationMatrix, Vec3};
use oam_core::planner_offline::{plan_ee_translation, OfflineParams};
use oam_core::robot_model::{allocation_matrix, AllocationConfig, Allocator, Wrench};
use oam_core::PlanError;
use proptest::prelude::*;

fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vec3> {
    (lo..hi, lo..hi, lo..hi).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn ellipsoid() -> impl Strategy<Value = (Vec3, Vec3, Vec3)> {
    (vec3(-1.0, 1.0), vec3(0.05, 0.6), vec3(-3.0, 3.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn positive_certificate_means_disjoint((ca, sa, ra) in ellipsoid(), (cb, sb, rb) in ellipsoid()) {
        let (qa, qb) = (RotationMatrix::exp(&ra), RotationMatrix::exp(&rb));
        let a = Ellipsoid::from_semi_axes(ca, sa, &qa).unwrap();
        let b = Ellipsoid::from_semi_axes(cb, sb, &qb).unwrap();
        prop_assume!(minkowski_separation(&a, &b) > 0.0);
        for i in 0..24 {
            for j in 0..12 {
                let (th, ph) = (i as f64 * 0.2618, j as f64 * 0.2618);
                let u = Vec3::new(th.cos() * ph.sin(), th.sin() * ph.sin(), ph.cos());
                let p = ca + qa.matrix() * sa.component_mul(&u);
                prop_assert!(!b.contains(&p));
            }
        }
    }

    #[test]
    fn allocation_reproduces_any_wrench(f in vec3(-30.0, 30.0), t in vec3(-3.0, 3.0)) {
        let cfg = AllocationConfig::default();
        let alloc = Allocator::new(&cfg).unwrap();
        let w = Wrench::new(f, t);
        let produced = alloc.wrench(&alloc.allocate(&w));
        prop_assert!((produced.to_vector() - w.to_vector()).norm() <= 1e-10 * w.to_vector().norm().max(1.0));
        prop_assert!((allocation_matrix(&cfg) * alloc.components(&w) - w.to_vector()).norm() <= 1e-10 * w.to_vector().norm().max(1.0));
    }
}

fn blocking_sphere(offset: Vec3, radius: f64) -> ObstacleSet {
    let obstacle = Ellipsoid::sphere(Vec3::new(0.75, 0.0, 1.0) + offset, radius).unwrap();
    ObstacleSet { ellipsoids: vec![obstacle], ground_height: 0.0 }
}

fn assert_safe_and_complete(plan: &oam_core::planner_offline::TranslationPlan, obstacles: &ObstacleSet, goal: &Vec3, params: &OfflineParams) {
    let inflated = obstacles.inflated(params.ee_radius);
    for x in &plan.knots {
        assert!(point_barrier(&x.position, &inflated.ellipsoids[0]).0 > 0.0);
    }
    assert!((plan.knots.last().unwrap().position - goal).norm() < 1e-3);
}

#[test]
fn slightly_off_centre_sphere_is_passed_on_the_far_side() {
    let (start, goal) = (Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.5, 0.0, 1.0));
    let params = OfflineParams { horizon: 6.0, ..Default::default() };
    let obstacles = blocking_sphere(Vec3::new(0.0, 0.01, 0.0), 0.22);
    let plan = plan_ee_translation(&start, &goal, &obstacles, &params).unwrap();
    assert_safe_and_complete(&plan, &obstacles, &goal, &params);
    let mid = plan.knots[plan.knots.len() / 2].position;
    assert!(mid.y < -0.1, "expected a detour toward -y, got {mid:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// A returned plan is always safe; the solver may still give up.
    #[test]
    fn offline_plans_are_never_unsafe(offset in vec3(-0.1, 0.1), radius in 0.1..0.25f64) {
        let (start, goal) = (Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.5, 0.0, 1.0));
        let params = OfflineParams { horizon: 6.0, ..Default::default() };
        let obstacles = blocking_sphere(offset, radius);
        match plan_ee_translation(&start, &goal, &obstacles, &params) {
            Ok(plan) => assert_safe_and_complete(&plan, &obstacles, &goal, &params),
            Err(e) => prop_assert!(matches!(e, PlanError::PlanInfeasible(_)), "{e}"),
        }
    }
}
