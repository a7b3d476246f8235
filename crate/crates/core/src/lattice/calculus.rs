use super::{MatrixField, ScalarField, TorusGrid, VectorField};
use crate::ensemble::CoefficientField;

/// Visits every oriented bond `(x, x + e_i)` of direction `i`.
#[inline]
fn for_each_bond(grid: TorusGrid, i: usize, mut f: impl FnMut(usize, usize)) {
    let l = grid.side();
    let s = grid.stride(i);
    let block = s * l;
    let blocks = grid.len() / block;
    for b in 0..blocks {
        let base = b * block;
        for c in 0..l {
            let row = base + c * s;
            let shift = if c + 1 == l { s as isize - block as isize } else { s as isize };
            for inner in 0..s {
                let x = row + inner;
                f(x, (x as isize + shift) as usize);
            }
        }
    }
}

/// `v(x + e_i) - v(x)`.
pub fn forward_diff_dir(v: &ScalarField, i: usize) -> ScalarField {
    let g = v.grid();
    let vals = v.values();
    let mut out = vec![0.0; g.len()];
    for_each_bond(g, i, |x, xp| out[x] = vals[xp] - vals[x]);
    ScalarField::from_values(g, out)
}

/// `v(x - e_i) - v(x)`.
pub fn backward_diff_dir(v: &ScalarField, i: usize) -> ScalarField {
    let g = v.grid();
    let vals = v.values();
    let mut out = vec![0.0; g.len()];
    for_each_bond(g, i, |x, xp| out[xp] = vals[x] - vals[xp]);
    ScalarField::from_values(g, out)
}

/// Discrete gradient `(nabla_1 v, ..., nabla_d v)` with forward differences.
pub fn forward_diff(v: &ScalarField) -> VectorField {
    let g = v.grid();
    let d = g.dim();
    let vals = v.values();
    let mut out = vec![0.0; g.len() * d];
    for i in 0..d {
        for_each_bond(g, i, |x, xp| out[x * d + i] = vals[xp] - vals[x]);
    }
    VectorField::from_values(g, out)
}

/// Discrete divergence `nabla^* g = sum_i g_i(x - e_i) - g_i(x)`.
pub fn backward_diff_div(field: &VectorField) -> ScalarField {
    let g = field.grid();
    let d = g.dim();
    let vals = field.values();
    let mut out = vec![0.0; g.len()];
    for i in 0..d {
        for_each_bond(g, i, |x, xp| {
            let gi = vals[x * d + i];
            out[x] -= gi;
            out[xp] += gi;
        });
    }
    ScalarField::from_values(g, out)
}

/// `nabla^* a nabla v`, the random operator with diagonal conductivities.
pub fn apply_operator(a: &CoefficientField, v: &ScalarField) -> ScalarField {
    assert_eq!(a.grid(), v.grid());
    let mut out = vec![0.0; v.grid().len()];
    apply_operator_into(a, v.values(), &mut out);
    ScalarField::from_values(v.grid(), out)
}

/// Raw-slice form of [`apply_operator`]; overwrites `out`.
pub fn apply_operator_into(a: &CoefficientField, v: &[f64], out: &mut [f64]) {
    let g = a.grid();
    let d = g.dim();
    let diag = a.diag();
    out.iter_mut().for_each(|o| *o = 0.0);
    for i in 0..d {
        for_each_bond(g, i, |x, xp| {
            let flux = diag[x * d + i] * (v[xp] - v[x]);
            out[x] -= flux;
            out[xp] += flux;
        });
    }
}

/// Discrete Hessian with entries `-nabla^*_i nabla_j v`.
pub fn hessian(v: &ScalarField) -> MatrixField {
    let g = v.grid();
    let d = g.dim();
    let mut out = MatrixField::zeros(g);
    for j in 0..d {
        let dj = forward_diff_dir(v, j);
        for i in 0..d {
            let dij = backward_diff_dir(&dj, i);
            for x in g.sites() {
                out.set(x, i, j, -dij.get(x));
            }
        }
    }
    out
}

/// Second forward differences `nabla_i nabla_j v`.
pub fn forward_second_diff(v: &ScalarField) -> MatrixField {
    let g = v.grid();
    let d = g.dim();
    let mut out = MatrixField::zeros(g);
    for j in 0..d {
        let dj = forward_diff_dir(v, j);
        for i in 0..d {
            let dij = forward_diff_dir(&dj, i);
            for x in g.sites() {
                out.set(x, i, j, dij.get(x));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::CoefficientField;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scalar(g: TorusGrid, rng: &mut impl Rng) -> ScalarField {
        ScalarField::from_fn(g, |_| rng.random_range(-1.0..1.0))
    }

    fn random_vector(g: TorusGrid, rng: &mut impl Rng) -> VectorField {
        VectorField::from_values(
            g,
            (0..g.len() * g.dim()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    // Oracle: direct coordinate arithmetic, independent of the bond iterator.
    fn naive_forward(v: &ScalarField, i: usize) -> ScalarField {
        let g = v.grid();
        ScalarField::from_fn(g, |x| {
            let mut c: Vec<i64> = g.coords(x).iter().map(|&u| u as i64).collect();
            c[i] += 1;
            v.get(g.site(&c).unwrap()) - v.get(x)
        })
    }

    fn naive_backward(v: &ScalarField, i: usize) -> ScalarField {
        let g = v.grid();
        ScalarField::from_fn(g, |x| {
            let mut c: Vec<i64> = g.coords(x).iter().map(|&u| u as i64).collect();
            c[i] -= 1;
            v.get(g.site(&c).unwrap()) - v.get(x)
        })
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let g = TorusGrid::new(3, 3).unwrap();
        let grad = forward_diff(&ScalarField::constant(g, 2.5));
        assert!(grad.values().iter().all(|&v| v == 0.0));
        assert!(hessian(&ScalarField::constant(g, -1.0))
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn one_dimensional_gradient_by_hand() {
        let g = TorusGrid::new(1, 4).unwrap();
        let v = ScalarField::from_values(g, vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(forward_diff(&v).values(), &[1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn differences_match_coordinate_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (d, l) in [(1, 5), (2, 3), (2, 4), (3, 3)] {
            let g = TorusGrid::new(d, l).unwrap();
            let v = random_scalar(g, &mut rng);
            for i in 0..d {
                assert_eq!(forward_diff_dir(&v, i), naive_forward(&v, i));
                assert_eq!(backward_diff_dir(&v, i), naive_backward(&v, i));
            }
        }
    }

    #[test]
    fn backward_shift_identity() {
        // nabla_i v(. - e_i) = -nabla^*_i v, pointwise and exactly
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = TorusGrid::new(3, 4).unwrap();
        let v = random_scalar(g, &mut rng);
        for i in 0..3 {
            let fwd = forward_diff_dir(&v, i);
            let bwd = backward_diff_dir(&v, i);
            for x in g.sites() {
                assert_eq!(fwd.get(g.minus(x, i)), -bwd.get(x));
            }
        }
    }

    #[test]
    fn divergence_matches_componentwise_backward_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = TorusGrid::new(2, 5).unwrap();
        let field = random_vector(g, &mut rng);
        let div = backward_diff_div(&field);
        let mut expected = ScalarField::zeros(g);
        for i in 0..2 {
            expected = expected.add(&naive_backward(&field.component(i), i));
        }
        for x in g.sites() {
            assert!((div.get(x) - expected.get(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn operator_two_site_by_hand() {
        // d=1, L=2, a=(lam,1), v=(0,1): grad=(1,-1), flux=(lam,-1),
        // out(x) = flux(x-1) - flux(x) => out(0) = -1 - lam, out(1) = lam + 1.
        let lam = 0.3;
        let g = TorusGrid::new(1, 2).unwrap();
        let a = CoefficientField::new(g, vec![lam, 1.0]).unwrap();
        let v = ScalarField::from_values(g, vec![0.0, 1.0]);
        let out = apply_operator(&a, &v);
        assert!((out.get(0) - (-1.0 - lam)).abs() < 1e-15);
        assert!((out.get(1) - (1.0 + lam)).abs() < 1e-15);
    }

    #[test]
    fn operator_with_unit_coefficients_is_laplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = TorusGrid::new(2, 4).unwrap();
        let v = random_scalar(g, &mut rng);
        let lap = backward_diff_div(&forward_diff(&v));
        let out = apply_operator(&CoefficientField::constant(g, 1.0), &v);
        for x in g.sites() {
            assert!((lap.get(x) - out.get(x)).abs() < 1e-14);
        }
        let zero = apply_operator(&CoefficientField::constant(g, 0.7), &ScalarField::constant(g, 4.0));
        assert!(zero.max_abs() == 0.0);
    }

    #[test]
    fn operator_output_sums_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = TorusGrid::new(3, 4).unwrap();
        let a = CoefficientField::new(
            g,
            (0..g.len() * 3).map(|_| rng.random_range(0.25..1.0)).collect(),
        )
        .unwrap();
        let out = apply_operator(&a, &random_scalar(g, &mut rng));
        assert!(out.sum().abs() < 1e-12);
    }

    #[test]
    fn hessian_of_delta_matches_composed_differences() {
        let g = TorusGrid::new(1, 4).unwrap();
        let v = ScalarField::delta(g, 0);
        let h = hessian(&v);
        let expected = backward_diff_dir(&forward_diff(&v).component(0), 0).scale(-1.0);
        for x in g.sites() {
            assert_eq!(h.get(x, 0, 0), expected.get(x));
        }
        // v(x-1) - 2 v(x) + v(x+1) for the unit mass at the origin
        assert_eq!(h.entry(0, 0).values(), &[-2.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn hessian_frobenius_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = TorusGrid::new(2, 8).unwrap();
        let v = random_scalar(g, &mut rng);
        let lhs = hessian(&v).frobenius_sq();
        let rhs = forward_second_diff(&v).frobenius_sq();
        assert!((lhs - rhs).abs() <= 1e-12 * rhs);
    }

    fn integration_by_parts_gap(g: TorusGrid, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_scalar(g, &mut rng);
        let field = random_vector(g, &mut rng);
        let lhs = forward_diff(&v).dot(&field);
        let rhs = v.dot(&backward_diff_div(&field));
        let scale = v.norm() * field.norm_sq().sqrt() * (2 * g.dim()) as f64;
        ((lhs - rhs).abs(), scale)
    }

    #[test]
    fn integration_by_parts_on_all_small_tori() {
        for d in 1..=3 {
            for l in [2, 4, 8] {
                let g = TorusGrid::new(d, l).unwrap();
                for seed in 0..100 {
                    let (gap, scale) = integration_by_parts_gap(g, seed);
                    assert!(gap <= 1e-12 * scale, "d={d} L={l} seed={seed}: {gap}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn prop_hessian_identity(d in 1usize..=3, l in 2usize..=6, seed in any::<u64>()) {
            let g = TorusGrid::new(d, l).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_scalar(g, &mut rng);
            let lhs = hessian(&v).frobenius_sq();
            let rhs = forward_second_diff(&v).frobenius_sq();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
        }

        #[test]
        fn prop_laplacian_is_divergence_of_gradient(d in 1usize..=3, l in 2usize..=5, seed in any::<u64>()) {
            let g = TorusGrid::new(d, l).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_scalar(g, &mut rng);
            let lap = backward_diff_div(&forward_diff(&v));
            let trace = hessian(&v);
            for x in g.sites() {
                let tr: f64 = (0..d).map(|i| trace.get(x, i, i)).sum();
                prop_assert!((lap.get(x) + tr).abs() < 1e-13);
            }
        }
    }
}
