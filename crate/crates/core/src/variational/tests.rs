use super::*;
use crate::coding_rate::{delta_r, params_from};
use crate::numerics::orthonormalize_columns;
use crate::testutil::*;
use ndarray::{array, s};

fn random_state(r: &mut rand_chacha::ChaCha8Rng, d: usize, q: usize, k: usize) -> VariationalState<f64> {
    let gamma = unit_columns(r, d, q);
    let a = gaussian(r, q, k).mapv(|x: f64| x.abs());
    VariationalState::new(gamma, a).unwrap()
}

fn naive_penalty(z: &Array2<f64>, pi: &MembershipMatrix<f64>, st: &VariationalState<f64>, p: &CodingRateParams<f64>) -> f64 {
    let (d, m) = z.dim();
    let mut total = 0.0;
    for j in 0..pi.classes() {
        let mut diff = Array2::<f64>::zeros((d, d));
        for i in 0..m {
            for a in 0..d {
                for b in 0..d {
                    diff[[a, b]] += pi.matrix()[[i, j]] * z[[a, i]] * z[[b, i]];
                }
            }
        }
        for l in 0..st.atoms() {
            for a in 0..d {
                for b in 0..d {
                    diff[[a, b]] -= st.a[[l, j]] * st.gamma[[a, l]] * st.gamma[[b, l]];
                }
            }
        }
        total += diff.iter().map(|x| x * x).sum::<f64>() / p.gamma_per_class[j];
    }
    total
}

fn setup(seed: u64, d: usize, q: usize, k: usize, m: usize) -> (Array2<f64>, MembershipMatrix<f64>, CodingRateParams<f64>, VariationalState<f64>) {
    let mut r = rng(seed);
    let z = unit_columns(&mut r, d, m);
    let pi = random_one_hot(&mut r, m, k);
    let p = params_from(&pi, d, 0.5).unwrap();
    let st = random_state(&mut r, d, q, k);
    (z, pi, p, st)
}

#[test]
fn r_v_zero_code() {
    let mut r = rng(1);
    let st = VariationalState::new(unit_columns(&mut r, 3, 4), Array2::zeros((4, 2))).unwrap();
    assert_eq!(r_v(&st, 1.5).unwrap(), 0.0);
}

#[test]
fn r_v_orthonormal_dictionary() {
    let mut r = rng(2);
    let gamma = orthonormalize_columns(gaussian(&mut r, 5, 3).view()).unwrap();
    let a = array![[1.0, 1.0], [5.0, 0.0], [0.5, 0.25]];
    let st = VariationalState::new(gamma, a).unwrap();
    let expected = 0.5 * (3f64.ln() + 6f64.ln() + 1.75f64.ln());
    assert!((r_v(&st, 1.0).unwrap() - expected).abs() < 1e-13);
}

#[test]
fn r_v_matches_eigen_oracle() {
    let mut r = rng(3);
    let st = random_state(&mut r, 4, 7, 3);
    let totals = st.a.sum_axis(Axis(1));
    let mut g = Array2::<f64>::zeros((4, 4));
    for l in 0..7 {
        let c = st.gamma.column(l);
        for a in 0..4 {
            for b in 0..4 {
                g[[a, b]] += totals[l] * c[a] * c[b];
            }
        }
    }
    let na = nalgebra::DMatrix::from_fn(4, 4, |i, j| g[[i, j]]);
    let expected: f64 = na.symmetric_eigenvalues().iter().map(|l| 0.5 * (1.0 + 0.3 * l).ln()).sum();
    assert!(rel_err(r_v(&st, 0.3).unwrap(), expected) < 1e-12);
}

#[test]
fn r_v_c_values() {
    let pi = MembershipMatrix::one_hot(&[0, 1], 2).unwrap();
    let p = params_from(&pi, 2, 0.5).unwrap();
    assert_eq!(p.alpha_per_class[0], 4.0);
    assert_eq!(p.gamma_per_class[0], 0.5);
    assert_eq!(r_v_c(&Array2::zeros((3, 2)), &p).unwrap(), 0.0);
    let mut a = Array2::zeros((3, 2));
    a[[0, 0]] = 1.0;
    let v = r_v_c(&a, &p).unwrap();
    assert!((v - 0.25 * 5f64.ln()).abs() < 1e-15);
    assert!((v - 0.402359).abs() < 1e-6);

    let mut r = rng(4);
    let a = gaussian(&mut r, 5, 2).mapv(|x: f64| x.abs());
    let mut expected = 0.0;
    for j in 0..2 {
        for l in 0..5 {
            expected += p.gamma_per_class[j] / 2.0 * (1.0 + p.alpha_per_class[j] * a[[l, j]]).ln();
        }
    }
    assert!(rel_err(r_v_c(&a, &p).unwrap(), expected) < 1e-14);

    let neg = array![[0.1, -0.3]];
    assert!(matches!(r_v_c(&neg, &p), Err(Error::NegativeCode { row: 0, col: 1 })));
}

#[test]
fn penalty_vanishes_at_exact_latch() {
    let (z, pi, p, _) = setup(5, 4, 8, 2, 10);
    let st = latch(z.view(), &pi, 8).unwrap();
    assert!(m_penalty(z.view(), &pi, &st, &p).unwrap() <= 1e-10);
}

#[test]
fn penalty_with_zero_dictionary() {
    let (z, pi, p, _) = setup(6, 3, 4, 2, 7);
    let st = VariationalState { gamma: Array2::zeros((3, 4)), a: Array2::from_elem((4, 2), 0.7) };
    let mut expected = 0.0;
    for j in 0..2 {
        let cov = weighted_gram(z.view(), &pi.class_weights(j));
        expected += cov.iter().map(|x| x * x).sum::<f64>() / p.gamma_per_class[j];
    }
    assert!(rel_err(m_penalty(z.view(), &pi, &st, &p).unwrap(), expected) < 1e-13);
}

#[test]
fn penalty_matches_naive_oracle() {
    for seed in 0..5 {
        let (z, pi, p, st) = setup(10 + seed, 4, 6, 3, 9);
        let got = m_penalty(z.view(), &pi, &st, &p).unwrap();
        assert!(rel_err(got, naive_penalty(&z, &pi, &st, &p)) < 1e-10);
    }
}

#[test]
fn objective_zero_fixture() {
    let mut r = rng(7);
    let z = Array2::<f64>::zeros((3, 4));
    let pi = MembershipMatrix::one_hot(&[0, 1, 0, 1], 2).unwrap();
    let p = params_from(&pi, 3, 0.5).unwrap();
    let st = VariationalState::new(unit_columns(&mut r, 3, 4), Array2::zeros((4, 2))).unwrap();
    assert_eq!(objective(z.view(), &pi, &st, &p, 1.0).unwrap(), 0.0);
}

#[test]
fn objective_at_exact_latch_equals_delta_r() {
    for seed in 0..5 {
        let (z, pi, p, _) = setup(20 + seed, 5, 15, 3, 12);
        let st = latch(z.view(), &pi, 15).unwrap();
        let obj = objective(z.view(), &pi, &st, &p, 1.0).unwrap();
        let dr = delta_r(z.view(), &pi, &p).unwrap();
        assert!((obj - dr).abs() <= 1e-8, "{obj} vs {dr}");
    }
}

#[test]
fn objective_recombines_terms() {
    let (z, pi, p, st) = setup(30, 4, 6, 2, 8);
    let mu = 1.7;
    let expected = r_v(&st, p.alpha).unwrap() - r_v_c(&st.a, &p).unwrap()
        - mu / (2.0 * 8.0) * m_penalty(z.view(), &pi, &st, &p).unwrap();
    assert!((objective(z.view(), &pi, &st, &p, mu).unwrap() - expected).abs() < 1e-14);
}

#[test]
fn gamma_gradient_vanishes_without_signal() {
    let mut r = rng(8);
    let z = Array2::<f64>::zeros((3, 4));
    let pi = MembershipMatrix::one_hot(&[0, 1, 0, 1], 2).unwrap();
    let p = params_from(&pi, 3, 0.5).unwrap();
    let st = VariationalState::new(unit_columns(&mut r, 3, 5), Array2::zeros((5, 2))).unwrap();
    let (g, _) = grad_gamma_a(z.view(), &pi, &st, &p, 1.0).unwrap();
    assert!(g.iter().all(|&x| x == 0.0));
}

#[test]
fn code_gradient_with_orthonormal_dictionary() {
    let mut r = rng(9);
    let (d, q, k, m) = (6, 4, 2, 8);
    let gamma = orthonormalize_columns(gaussian(&mut r, d, q).view()).unwrap();
    let a = gaussian(&mut r, q, k).mapv(|x: f64| x.abs());
    let st = VariationalState::new(gamma, a.clone()).unwrap();
    let z = Array2::<f64>::zeros((d, m));
    let pi = MembershipMatrix::one_hot(&[0, 1, 0, 1, 0, 1, 0, 1], 2).unwrap();
    let p = params_from(&pi, d, 0.5).unwrap();
    let mu = 1.0;
    let ga = grad_a(z.view(), &pi, &st, &p, mu).unwrap();
    let totals = a.sum_axis(Axis(1));
    for l in 0..q {
        for j in 0..k {
            let rv = 0.5 * p.alpha / (1.0 + p.alpha * totals[l]);
            let rvc = 0.5 * p.gamma_per_class[j] * p.alpha_per_class[j] / (1.0 + p.alpha_per_class[j] * a[[l, j]]);
            let pen = mu / (m as f64 * p.gamma_per_class[j]) * a[[l, j]];
            assert!((ga[[l, j]] - (rv - rvc - pen)).abs() < 1e-13);
        }
    }
}

#[test]
fn gamma_and_code_gradients_match_finite_differences() {
    for seed in 0..5 {
        let (z, pi, p, st) = setup(40 + seed, 4, 6, 2, 8);
        let mu = 1.0;
        let (gg, ga) = grad_gamma_a(z.view(), &pi, &st, &p, mu).unwrap();
        let fd_g = finite_diff(&st.gamma, 1e-5, |g| {
            let s = VariationalState { gamma: g.clone(), a: st.a.clone() };
            objective(z.view(), &pi, &s, &p, mu).unwrap()
        });
        let fd_a = finite_diff(&st.a, 1e-5, |a| {
            let s = VariationalState { gamma: st.gamma.clone(), a: a.clone() };
            objective(z.view(), &pi, &s, &p, mu).unwrap()
        });
        assert!(grad_rel_err(&gg, &fd_g) < 1e-5, "seed {seed} gamma {:e}", grad_rel_err(&gg, &fd_g));
        assert!(grad_rel_err(&ga, &fd_a) < 1e-5, "seed {seed} code {:e}", grad_rel_err(&ga, &fd_a));
        assert_eq!(gg, grad_gamma(z.view(), &pi, &st, &p, mu).unwrap());
        assert_eq!(ga, grad_a(z.view(), &pi, &st, &p, mu).unwrap());
    }
}

#[test]
fn gradients_with_soft_membership() {
    let mut r = rng(50);
    let z = unit_columns(&mut r, 4, 9);
    let pi = random_soft(&mut r, 9, 3);
    let p = params_from(&pi, 4, 0.5).unwrap();
    let st = random_state(&mut r, 4, 6, 3);
    let (gg, ga) = grad_gamma_a(z.view(), &pi, &st, &p, 2.0).unwrap();
    let fd_g = finite_diff(&st.gamma, 1e-5, |g| {
        objective(z.view(), &pi, &VariationalState { gamma: g.clone(), a: st.a.clone() }, &p, 2.0).unwrap()
    });
    let fd_a = finite_diff(&st.a, 1e-5, |a| {
        objective(z.view(), &pi, &VariationalState { gamma: st.gamma.clone(), a: a.clone() }, &p, 2.0).unwrap()
    });
    assert!(grad_rel_err(&gg, &fd_g) < 1e-5);
    assert!(grad_rel_err(&ga, &fd_a) < 1e-5);
    let gz = grad_z_penalty(z.view(), &pi, &st, &p, 2.0).unwrap();
    let fd_z = finite_diff(&z, 1e-5, |zz| 2.0 / 18.0 * m_penalty(zz.view(), &pi, &st, &p).unwrap());
    assert!(grad_rel_err(&gz, &fd_z) < 1e-5);
}

#[test]
fn z_gradient_of_penalty() {
    let (z, pi, p, _) = setup(60, 4, 8, 2, 10);
    let latched = latch(z.view(), &pi, 8).unwrap();
    let g = grad_z_penalty(z.view(), &pi, &latched, &p, 1.0).unwrap();
    assert!(g.iter().all(|x| x.abs() <= 1e-9));

    let zero = Array2::<f64>::zeros((4, 10));
    let g = grad_z_penalty(zero.view(), &pi, &latched, &p, 1.0).unwrap();
    assert!(g.iter().all(|&x| x == 0.0));

    for seed in 0..5 {
        let (z, pi, p, st) = setup(70 + seed, 4, 6, 2, 8);
        let mu = 1.3;
        let g = grad_z_penalty(z.view(), &pi, &st, &p, mu).unwrap();
        let fd = finite_diff(&z, 1e-5, |zz| mu / 16.0 * m_penalty(zz.view(), &pi, &st, &p).unwrap());
        assert!(grad_rel_err(&g, &fd) < 1e-5);
    }
}

#[test]
fn fused_evaluation_agrees() {
    let (z, pi, p, st) = setup(80, 5, 10, 2, 12);
    let ev = evaluate_with_grads(z.view(), &pi, &st, &p, 1.0).unwrap();
    let (gg, ga) = grad_gamma_a(z.view(), &pi, &st, &p, 1.0).unwrap();
    assert_eq!(ev.terms.objective, objective(z.view(), &pi, &st, &p, 1.0).unwrap());
    assert_eq!(ev.grad_gamma, gg);
    assert_eq!(ev.grad_a, ga);
    assert_eq!(ev.grad_z, grad_z_penalty(z.view(), &pi, &st, &p, 1.0).unwrap());
}

#[test]
fn step_sizes_fixtures() {
    let (z, pi, p, mut st) = setup(90, 4, 6, 2, 8);
    st.a.fill(0.0);
    let raw = lipschitz_bounds(z.view(), &pi, &st, &p, 1.0).unwrap();
    assert_eq!(raw.l_gamma, 0.0);
    let floored = step_sizes(z.view(), &pi, &st, &p, 1.0, 1e-8).unwrap();
    assert_eq!(floored.l_gamma, 1e-8);

    // orthonormal Γ: (ΓᵀΓ)^{⊙2} = I, L_A = μk√q/m
    let mut r = rng(91);
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let pi = MembershipMatrix::one_hot(&labels, 3).unwrap();
    let z = unit_columns(&mut r, 7, 12);
    let p = params_from(&pi, 7, 0.5).unwrap();
    let gamma = orthonormalize_columns(gaussian(&mut r, 7, 6).view()).unwrap();
    let st = VariationalState::new(gamma, Array2::from_elem((6, 3), 0.5)).unwrap();
    let mu = 2.0;
    let l = step_sizes(z.view(), &pi, &st, &p, mu, 1e-8).unwrap();
    assert!((l.l_a - mu * 3.0 * 6f64.sqrt() / 12.0).abs() < 1e-12);
}

#[test]
fn step_sizes_match_balanced_formula() {
    let mut r = rng(92);
    let (d, q, k, m) = (5, 6, 3, 12);
    let labels: Vec<usize> = (0..m).map(|i| i % k).collect();
    let pi = MembershipMatrix::one_hot(&labels, k).unwrap();
    let z = unit_columns(&mut r, d, m);
    let p = params_from(&pi, d, 0.5).unwrap();
    let st = random_state(&mut r, d, q, k);
    let mu = 1.0;
    let got = lipschitz_bounds(z.view(), &pi, &st, &p, mu).unwrap();
    let kk = k as f64;
    let mm = m as f64;
    let mut l_gamma = 0.0;
    for j in 0..k {
        let mut cov = Array2::<f64>::zeros((d, d));
        for i in 0..m {
            if labels[i] == j {
                for a in 0..d {
                    for b in 0..d {
                        cov[[a, b]] += z[[a, i]] * z[[b, i]];
                    }
                }
            }
        }
        let fro = cov.iter().map(|x| x * x).sum::<f64>().sqrt();
        let a_inf = st.a.column(j).iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        l_gamma += 2.0 * mu * kk / mm * (fro * a_inf + a_inf * a_inf);
    }
    let mut g2 = 0.0;
    for l in 0..q {
        for lp in 0..q {
            let ip = st.gamma.column(l).dot(&st.gamma.column(lp));
            g2 += ip.powi(4);
        }
    }
    let l_a = mu * kk / mm * g2.sqrt();
    assert!(rel_err(got.l_gamma, l_gamma) < 1e-12);
    assert!(rel_err(got.l_a, l_a) < 1e-12);
}

#[test]
fn project_fixtures() {
    let mut r = rng(93);
    let st = random_state(&mut r, 4, 5, 2);
    let again = project(st.clone(), &mut r);
    assert_eq!(again, st);

    let mut bad = st.clone();
    bad.a[[1, 0]] = -0.3;
    bad.gamma.column_mut(2).mapv_inplace(|x| 2.0 * x);
    let fixed = project(bad.clone(), &mut r);
    assert_eq!(fixed.a[[1, 0]], 0.0);
    for i in 0..4 {
        assert!((fixed.gamma[[i, 2]] - st.gamma[[i, 2]]).abs() < 1e-15);
    }
    assert_eq!(project(fixed.clone(), &mut r), fixed);

    let mut dead = st.clone();
    dead.gamma.column_mut(0).fill(0.0);
    let revived = project(dead, &mut r);
    let c = revived.gamma.column(0);
    assert!((c.dot(&c) - 1.0).abs() < 1e-12);
    assert!(VariationalState::new(revived.gamma.clone(), revived.a.clone()).is_ok());
}

#[test]
fn latch_identity_fixture() {
    let z = Array2::<f64>::eye(2);
    let pi = MembershipMatrix::one_hot(&[0, 1], 2).unwrap();
    let st = latch(z.view(), &pi, 2).unwrap();
    assert_eq!(st.a, array![[1.0, 0.0], [0.0, 1.0]]);
    assert!((st.gamma[[0, 0]].abs() - 1.0).abs() < 1e-15 && st.gamma[[1, 0]].abs() < 1e-15);
    assert!((st.gamma[[1, 1]].abs() - 1.0).abs() < 1e-15 && st.gamma[[0, 1]].abs() < 1e-15);
}

#[test]
fn latch_degenerate_class() {
    let mut z = Array2::<f64>::zeros((3, 4));
    z[[0, 0]] = 1.0;
    z[[1, 2]] = 1.0;
    let pi = MembershipMatrix::one_hot(&[0, 1, 0, 1], 2).unwrap();
    let st = latch(z.view(), &pi, 4).unwrap();
    assert!(st.a.slice(s![2..4, 1]).iter().all(|&x| x == 0.0));
    assert!(st.a.slice(s![0..2, 0]).iter().any(|&x| x > 0.0));
    assert!(VariationalState::new(st.gamma.clone(), st.a.clone()).is_ok());
}

#[test]
fn latch_errors() {
    let z = Array2::<f64>::eye(2);
    let pi = MembershipMatrix::one_hot(&[0, 1], 2).unwrap();
    assert!(latch(z.view(), &pi, 3).is_err());
    assert!(latch(z.view(), &pi, 6).is_err());
}

#[test]
fn exact_latch_maximizes_among_exact_states() {
    let (d, k, m) = (4, 2, 10);
    let (z, pi, p, _) = setup(100, d, d * k, k, m);
    let latched = latch(z.view(), &pi, d * k).unwrap();
    let best = objective(z.view(), &pi, &latched, &p, 1.0).unwrap();
    let mut r = rng(101);
    for _ in 0..100 {
        // rotate each class block: U Q keeps U Uᵀ, columns renormalized into Γ
        let mut gamma = latched.gamma.clone();
        let mut a = latched.a.clone();
        for j in 0..k {
            let u = latched.class_factor(j).slice(s![.., j * d..(j + 1) * d]).to_owned();
            let rot = orthonormalize_columns(gaussian(&mut r, d, d).view()).unwrap();
            let uq = u.dot(&rot);
            for c in 0..d {
                let col = uq.column(c);
                let n2 = col.dot(&col);
                let l = j * d + c;
                a[[l, j]] = n2;
                if n2 > 0.0 {
                    gamma.column_mut(l).assign(&col.mapv(|x| x / n2.sqrt()));
                }
            }
        }
        let st = VariationalState { gamma, a };
        assert!(m_penalty(z.view(), &pi, &st, &p).unwrap() <= 1e-10);
        assert!(objective(z.view(), &pi, &st, &p, 1.0).unwrap() <= best + 1e-12);
    }
}
