use std::sync::Arc;

use proptest::prelude::*;

use degell_core::analysis::{
    check_negativity, estimate_global_poincare, verify_max_principle, verify_subunit_bound, NegativityCondition,
};
use degell_core::assembly::{assemble_form, assemble_gram};
use degell_core::expr::ScalarExpr;
use degell_core::fields::{estimate_comparability, MatrixField, VectorField};
use degell_core::linalg;
use degell_core::mesh::{build_interval_mesh, build_rect_mesh};
use degell_core::problem::{BoundaryKind, ProblemSpec};
use degell_core::space::{build_space, DiscreteSpace, WeakSolution};
use degell_core::spectral::{compute_spectrum, group_multiplicities, richardson_rate, Rate};

fn load(text: &str) -> (Arc<ProblemSpec>, Arc<DiscreteSpace>) {
    let spec = ProblemSpec::from_toml_str(text).unwrap();
    let mesh = Arc::new(spec.domain.build_mesh().unwrap());
    let space = Arc::new(build_space(mesh, spec.bc));
    (Arc::new(spec), space)
}

fn interval(n: usize, bc: &str, operator: &str, data: &str) -> String {
    format!("[domain]\nkind = \"interval\"\na = \"0\"\nb = \"1\"\nn = {n}\nbc = \"{bc}\"\n[operator]\n{operator}\n[data]\n{data}\n")
}

fn expr(s: &str) -> ScalarExpr {
    ScalarExpr::parse(s).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn affine_expressions_evaluate(a in -10.0f64..10.0, b in -10.0f64..10.0, x in -3.0f64..3.0) {
        let e = expr(&format!("{a:e} + ({b:e})*x"));
        let got = e.eval(&[x]).unwrap();
        prop_assert!((got - (a + b * x)).abs() <= 1e-12 * (1.0 + a.abs() + (b * x).abs()));
        let neg = expr("-x^2").eval(&[x]).unwrap();
        prop_assert_eq!(neg, -(x * x));
    }

    #[test]
    fn meshes_tile_the_domain(a in -2.0f64..2.0, len in 0.1f64..5.0, n in 1usize..60, ny in 1usize..12) {
        let m = build_interval_mesh(a, a + len, n).unwrap();
        prop_assert!((m.total_measure() - len).abs() <= 1e-12 * len);
        prop_assert_eq!(m.vertex_count(), n + 1);
        let r = build_rect_mesh((a, a + len), (0.0, 1.0), n.min(12), ny).unwrap();
        prop_assert_eq!(r.vertex_count(), (n.min(12) + 1) * (ny + 1));
        prop_assert_eq!(r.cell_count(), 2 * n.min(12) * ny);
        prop_assert!((r.total_measure() - len).abs() <= 1e-12 * len);
    }

    #[test]
    fn neumann_constants_lie_in_the_kernel(a in 0.0f64..3.0, h in -2.0f64..2.0, n in 5usize..60) {
        let (spec, space) = load(&interval(n, "neumann", &format!("P = [[\"1 + {a}*x\"]]\nH = [\"{h}\"]\nR = [[\"1\"]]"), "f = \"0\""));
        let form = assemble_form(&space, &spec).unwrap();
        let ones = vec![1.0; form.dofs()];
        let r = linalg::matvec(&form.a, &ones);
        prop_assert!(linalg::norm_inf(&r) <= 1e-10 * linalg::norm_inf_mat(&form.a));
    }

    #[test]
    fn adjoint_matches_transpose(h in -2.0f64..2.0, g in -2.0f64..2.0, f in -1.0f64..1.0, n in 4usize..40) {
        let op = format!("P = [[\"1 + x^2\"]]\nH = [\"{h} + x\"]\nR = [[\"1\"]]\nG = [\"{g}\"]\nS = [[\"x\"]]\nF = \"{f}\"");
        let (spec, space) = load(&interval(n, "dirichlet", &op, "f = \"1\""));
        let form = assemble_form(&space, &spec).unwrap();
        let adj = form.adjoint().unwrap();
        prop_assert!(linalg::transpose_mismatch(&form.a, &adj.a) <= 1e-12);
    }

    #[test]
    fn gram_is_positive_semidefinite(a in 0.0f64..2.0, seed in 0u64..1000) {
        let mesh = Arc::new(build_rect_mesh((-1.0, 1.0), (-1.0, 1.0), 6, 6).unwrap());
        let space = build_space(mesh, BoundaryKind::Neumann);
        let q = MatrixField::from_upper(2, vec![expr("1"), expr("0"), expr(&format!("{a}*x^2"))]).unwrap();
        let (m, gq) = assemble_gram(&space, &q).unwrap();
        let mut rng = linalg::seeded_rng(seed);
        let u = linalg::normal_vec(&mut rng, space.dof_count);
        prop_assert!(linalg::form(&gq, &u, &u) >= -1e-12 * linalg::form(&m, &u, &u));
        prop_assert!(linalg::form(&m, &u, &u) > 0.0);
    }

    #[test]
    fn comparability_is_scale_invariant(a in 0.1f64..3.0, s in 0.01f64..100.0) {
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 19.0]).collect();
        let p = MatrixField::from_upper(1, vec![expr(&format!("1 + {a}*x"))]).unwrap();
        let q = MatrixField::identity(1);
        let (lo, hi) = estimate_comparability(&p, &q, &pts, 4).unwrap();
        let (lo_s, hi_s) = estimate_comparability(&p.scaled(s), &q.scaled(s), &pts, 4).unwrap();
        prop_assert!((lo - lo_s).abs() <= 1e-12 * lo && (hi - hi_s).abs() <= 1e-12 * hi);
        prop_assert!((lo - 1.0).abs() < 1e-12 && (hi - (1.0 + a)).abs() < 1e-12);
    }

    #[test]
    fn reaction_only_negativity_constant(c in -2.0f64..2.0, seed in 0u64..100) {
        let (spec, space) = load(&interval(20, "neumann", &format!("P = [[\"1\"]]\nF = \"{c}\""), "f = \"0\""));
        let rep = check_negativity(&spec, &space, NegativityCondition::Cond1Ii, 30, seed).unwrap();
        prop_assert!((rep.constant - c).abs() <= 1e-9 * (1.0 + c.abs()));
        prop_assert_eq!(rep.holds, c > 0.0);
        prop_assert_eq!(rep.holds, rep.witness.is_none());
    }

    #[test]
    fn richardson_recovers_the_order(p in 0.5f64..4.0, c in 0.1f64..10.0, v in -5.0f64..5.0) {
        let h: [f64; 3] = [0.4, 0.2, 0.1];
        let vals = h.map(|x| v + c * x.powf(p));
        match richardson_rate(h, vals) {
            Rate::Value(r) => prop_assert!((r - p).abs() < 1e-6),
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }

    #[test]
    fn multiplicities_group_repeated_values(vals in proptest::collection::vec(1u32..6, 1..12)) {
        let mut v: Vec<f64> = vals.iter().map(|&k| k as f64).collect();
        v.sort_by(f64::total_cmp);
        let groups = group_multiplicities(&v, 1e-12);
        prop_assert_eq!(groups.iter().map(|g| g.1).sum::<usize>(), v.len());
        let mut distinct = v.clone();
        distinct.dedup();
        prop_assert_eq!(groups.len(), distinct.len());
    }

    #[test]
    fn max_principle_survives_lowering(c in 0.0f64..5.0) {
        let (spec, space) = load(&interval(40, "dirichlet", "P = [[\"1\"]]", "f = \"0\""));
        let full = Arc::new(space.with_bc(BoundaryKind::Neumann));
        let u = full.interpolate(&expr("x^2 - x")).unwrap();
        let lowered: Vec<f64> = u.iter().map(|x| x - c).collect();
        let a = verify_max_principle(&spec, &space, &WeakSolution::new(full.clone(), u)).unwrap();
        let b = verify_max_principle(&spec, &space, &WeakSolution::new(full, lowered)).unwrap();
        prop_assert!(a.holds && b.holds);
    }

    #[test]
    fn sampled_poincare_quotients_stay_below_optimum(a in 0.0f64..2.0, seed in 0u64..100) {
        let mesh = Arc::new(build_interval_mesh(0.0, 1.0, 60).unwrap());
        let space = Arc::new(build_space(mesh, BoundaryKind::Neumann));
        let q = MatrixField::from_upper(1, vec![expr(&format!("1 + {a}*x"))]).unwrap();
        let backend = linalg::select_backend("dense", space.dof_count).unwrap();
        let rep = estimate_global_poincare(&space, &q, 2.0, 20, seed, None, backend.as_ref()).unwrap();
        prop_assert!((rep.constant - 1.0 / rep.details["mu2"].sqrt()).abs() <= 1e-12 * rep.constant);
        prop_assert!(rep.details["sampled_max"] <= rep.constant + 1e-10);
        prop_assert!(rep.details["weak_form_constant"] <= rep.details["weak_form_bound"] + 1e-10);
    }

    #[test]
    fn subunit_fields_obey_the_norm_bound(t in 0.0f64..std::f64::consts::TAU, scale in 0.0f64..1.0, seed in 0u64..100) {
        let mesh = Arc::new(build_rect_mesh((0.0, 1.0), (0.0, 1.0), 5, 5).unwrap());
        let space = Arc::new(build_space(mesh, BoundaryKind::Neumann));
        let q = MatrixField::from_upper(2, vec![expr("1 + x"), expr("0"), expr("1 + y")]).unwrap();
        let w = VectorField(vec![expr(&format!("{}", scale * t.cos())), expr(&format!("{}", scale * t.sin()))]);
        let rep = verify_subunit_bound(&space, &q, &w, 10, seed).unwrap();
        prop_assert!(rep.holds);
    }

    #[test]
    fn neumann_spectrum_is_sorted_and_orthonormal(a in 0.0f64..1.0, f in 0.0f64..2.0) {
        let (spec, space) = load(&interval(40, "neumann", &format!("P = [[\"1 + {a}*x\"]]\nF = \"{f}\""), "f = \"0\""));
        let form = assemble_form(&space, &spec).unwrap();
        let res = compute_spectrum(&form, 4).unwrap();
        prop_assert!(res.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(res.eigenvalues[0] >= f - 1e-9);
        prop_assert!(res.diagnostics.orthogonality_max <= 1e-8);
        prop_assert!(res.diagnostics.normalization_max <= 1e-8);
    }
}
