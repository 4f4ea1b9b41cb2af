use flipfree::admm::rescale_element;
use flipfree::energies::{value, EnergyKind};
use flipfree::fixtures;
use flipfree::jacobian::GradientOperator;
use flipfree::local_steps::{p_step, p_step_residual, p_step_tolerance, procrustes};
use flipfree::mesh::{load_mesh, load_mesh_as, save_obj, save_obj_with_uv, save_tet, MeshFormat};
use flipfree::smallmat::{det, polar_flip_aware, svd, symm, Mat, Vector};
use proptest::prelude::*;

fn mat2() -> impl Strategy<Value = Mat<2>> {
    prop::array::uniform4(-5.0f64..5.0).prop_map(|a| Mat::<2>::from_column_slice(&a))
}

fn mat3() -> impl Strategy<Value = Mat<3>> {
    prop::array::uniform9(-5.0f64..5.0).prop_map(|a| Mat::<3>::from_column_slice(&a))
}

fn log_range(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.ln()..hi.ln()).prop_map(f64::exp)
}

fn rotation_from_angles(a: f64, b: f64, c: f64) -> Mat<3> {
    let rx = Mat::<3>::new(1.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, a.sin(), a.cos());
    let ry = Mat::<3>::new(b.cos(), 0.0, b.sin(), 0.0, 1.0, 0.0, -b.sin(), 0.0, b.cos());
    let rz = Mat::<3>::new(c.cos(), -c.sin(), 0.0, c.sin(), c.cos(), 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn svd_reconstructs_3d(a in mat3()) {
        let s = svd(&a);
        prop_assert!((s.reconstruct() - a).norm() <= 1e-10 * (1.0 + a.norm()));
    }

    #[test]
    fn procrustes_beats_other_rotations(q in mat3(), x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0) {
        let r = procrustes(&q, None);
        let m = r.matrix();
        prop_assert!((m.transpose() * m - Mat::<3>::identity()).norm() <= 1e-10);
        prop_assert!((det(m) - 1.0).abs() <= 1e-10);
        let other = rotation_from_angles(x, y, z);
        prop_assert!(m.dot(&q) >= other.dot(&q) - 1e-9 * (1.0 + q.norm()));
    }

    #[test]
    fn polar_factors_reproduce_unflipped_input(a in mat2()) {
        prop_assume!(det(&a) > 1e-3);
        let (u, p) = polar_flip_aware(&a, 1e-8);
        prop_assert!((u.matrix() * p.matrix() - a).norm() <= 1e-10 * (1.0 + a.norm()));
    }

    #[test]
    fn p_step_meets_its_residual_bound(
        q in mat3(), w in log_range(0.01, 10.0), mu in log_range(0.01, 100.0), sd in any::<bool>()
    ) {
        let kind = if sd { EnergyKind::SymmetricDirichlet } else { EnergyKind::SymmetricGradient };
        let q = symm(&q);
        let p = p_step(kind, &q, w, mu).unwrap();
        prop_assert!(p.min_eigenvalue() > 0.0);
        prop_assert!(value(kind, p.matrix()).unwrap().is_finite());
        prop_assert!(p_step_residual(kind, p.matrix(), &q, w, mu) <= p_step_tolerance(&q, mu));
    }

    #[test]
    fn rescale_preserves_unscaled_multiplier(
        mu in log_range(1e-3, 1e3), ep in log_range(1e-6, 1.0), ed in log_range(1e-6, 1.0),
        floor_frac in 0.0f64..2.0, l in mat2()
    ) {
        let floor = floor_frac * mu;
        let mut lambda = l;
        let new_mu = rescale_element(mu, &mut lambda, ep, ed, 5.0, floor);
        prop_assert!(new_mu >= floor);
        prop_assert!((lambda * new_mu - l * mu).norm() <= 1e-12 * (l * mu).norm().max(1e-300));
    }

    #[test]
    fn gradient_operator_adjoint_identity(seed in 0u64..1000, scale in -1.0f64..1.0) {
        let m = fixtures::disk(3, 0.2, seed);
        let op = GradientOperator::<2>::new(&m).unwrap();
        let n = m.num_vertices();
        let w: Vec<Vector<2>> = (0..n)
            .map(|i| Vector::<2>::new((i as f64 * 0.37 + scale).sin(), (i as f64 * 1.3).cos()))
            .collect();
        let r: Vec<Mat<2>> = (0..m.num_elements())
            .map(|i| Mat::<2>::new((i as f64).cos(), scale, 0.5, (i as f64 * 0.7).sin()))
            .collect();
        let gw = op.apply(&w).unwrap();
        let gtr = op.apply_adjoint(&r).unwrap();
        let lhs: f64 = gw.iter().zip(&r).map(|(a, b)| a.dot(b)).sum();
        let rhs: f64 = w.iter().zip(&gtr).map(|(a, b)| a.dot(b)).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }
}

fn temp_path(name: &str) -> std::path::PathBuf {
    std::env::temp_dir().join(format!("flipfree-{}-{name}", std::process::id()))
}

#[test]
fn obj_round_trip_is_exact() {
    let m = fixtures::hemisphere(4, 0.2, 3);
    let path = temp_path("hemi.obj");
    save_obj(&path, &m, m.vertices()).unwrap();
    let back = load_mesh(&path).unwrap();
    assert_eq!(back.vertices(), m.vertices());
    assert!(back.elements().eq(m.elements()));
    std::fs::remove_file(path).ok();
}

#[test]
fn obj_uv_round_trip_is_exact() {
    let m = fixtures::disk(3, 0.2, 1);
    let uv: Vec<[f64; 2]> = m.vertices().iter().map(|p| [p[0] * 0.3 + 0.1, p[1] / 7.0]).collect();
    let path = temp_path("uv.obj");
    save_obj_with_uv(&path, &m, &uv).unwrap();
    let back = load_mesh_as(&path, MeshFormat::Obj).unwrap();
    assert_eq!(back.uv.unwrap(), uv);
    std::fs::remove_file(path).ok();
}

#[test]
fn tet_round_trip_is_exact() {
    let m = fixtures::cube_tets(2);
    let path = temp_path("cube.tet");
    save_tet(&path, &m, m.vertices()).unwrap();
    let back = load_mesh(&path).unwrap();
    assert_eq!(back.vertices(), m.vertices());
    assert!(back.elements().eq(m.elements()));
    assert_eq!(back.element_dim(), 3);
    std::fs::remove_file(path).ok();
}

#[test]
fn malformed_files_are_rejected() {
    let path = temp_path("bad.obj");
    std::fs::write(&path, "v 0 0 0\nv 1 0 0\nf 1 2 9\n").unwrap();
    assert!(load_mesh(&path).is_err());
    std::fs::write(&path, "v 0 0 0\nv 1 0 x\n").unwrap();
    assert!(load_mesh(&path).is_err());
    std::fs::remove_file(path).ok();
    assert!(load_mesh(temp_path("mesh.xyz")).is_err());
}
