use homlab::energies::{check_subadditivity, check_subadditivity_dual, cube_energies, nu};
use homlab::fields::CellTensorGrid;
use homlab::solver::{flux_average, mean_gradient, SolverOptions};
use homlab::tensor::{lambda_max, psd_leq, SymTensor};
use proptest::prelude::*;

fn spd(dim: usize, raw: &[f64]) -> SymTensor {
    // L Lᵀ + 0.2 I with entries of L in [-1, 1]
    let mut l = [[0.0; 3]; 3];
    let mut k = 0;
    for i in 0..dim {
        for j in 0..=i {
            l[i][j] = raw[k % raw.len()];
            k += 1;
        }
    }
    let mut t = [[0.0; 3]; 3];
    for i in 0..dim {
        for j in 0..dim {
            t[i][j] = (0..dim).map(|s| l[i][s] * l[j][s]).sum::<f64>() + if i == j { 0.2 } else { 0.0 };
        }
    }
    SymTensor(t)
}

fn grid_strategy() -> impl Strategy<Value = CellTensorGrid> {
    (1usize..=2, 1usize..=2).prop_flat_map(|(dim, half)| {
        let side = 2 * half;
        let cells = side.pow(dim as u32);
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), cells).prop_map(move |raw| {
            let tensors = raw.iter().map(|r| spd(dim, r)).collect();
            CellTensorGrid::from_cells(dim, side, 1, tensors).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bounds_and_identities_hold_for_any_coefficients(grid in grid_strategy(), praw in prop::collection::vec(-2.0f64..2.0, 2)) {
        let dim = grid.dim();
        let p: Vec<f64> = praw[..dim].to_vec();
        let e = cube_energies(&grid, SolverOptions::default()).unwrap();
        let a = e.a.matrix();
        let b_inv = e.b.matrix().try_inverse().unwrap();
        let tol = 1e-9 * lambda_max(&grid.arithmetic_mean());
        prop_assert!(psd_leq(&grid.harmonic_mean(), &a, tol));
        prop_assert!(psd_leq(&a, &grid.arithmetic_mean(), tol));
        prop_assert!(psd_leq(&b_inv, &a, tol));
        let (_, v) = nu(&grid, &p).unwrap();
        let g = mean_gradient(&v);
        let f = flux_average(&grid, &v);
        let scale = p.iter().map(|x| x.abs()).fold(1.0, f64::max);
        for k in 0..dim {
            prop_assert!((g[k] - p[k]).abs() <= 1e-12 * scale);
            let ap: f64 = (0..dim).map(|j| a[(k, j)] * p[j]).sum();
            prop_assert!((f[k] - ap).abs() <= 1e-8 * scale * lambda_max(&a));
        }
    }

    #[test]
    fn energies_are_subadditive_over_dyadic_children(grid in grid_strategy(), praw in prop::collection::vec(-2.0f64..2.0, 2)) {
        let p: Vec<f64> = praw[..grid.dim()].to_vec();
        let s = check_subadditivity(&grid, &p).unwrap();
        prop_assert!(s.defect >= -1e-9 * s.lhs.abs().max(1.0));
        let s = check_subadditivity_dual(&grid, &p).unwrap();
        prop_assert!(s.defect >= -1e-9 * s.lhs.abs().max(1.0));
    }
}
