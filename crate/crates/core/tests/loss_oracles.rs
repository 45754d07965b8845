mod common;

use std::f64::consts::LN_2;

use common::*;
use icmvc::numkit::Matrix;
use icmvc::objectives::{self, GuidanceReduction};
use rand::Rng;

#[test]
fn closed_form_identities() {
    let z = Matrix::from_rows(&[[0.3, -1.2, 0.5]]);
    let l = eval_loss(&[&z, &z], |t, v| objectives::instance_contrastive_loss(t, v[0], v[1], 1.0, true));
    assert!(close(l, LN_2, 1e-9), "{l}");

    for c in 2..=6 {
        let y = Matrix::filled(7, c, 1.0 / c as f64);
        let l = eval_loss(&[&y, &y], |t, v| objectives::cluster_contrastive_loss(t, v[0], v[1], 0.5));
        let expected = LN_2 - (c as f64).ln();
        assert!(close(l, expected, 1e-9), "C={c}: {l} vs {expected}");
        if c == 2 {
            assert!(l.abs() < 1e-15, "{l}");
        }
    }

    let mut r = rng(1);
    let y = random_stochastic(&mut r, 6, 4);
    for reduction in [GuidanceReduction::Sum, GuidanceReduction::Mean] {
        let l = eval_loss(&[&y], |t, v| objectives::guidance_loss(t, v[0], &y, reduction));
        assert!(close(l, 0.0, 1e-12), "{l}");
    }
}

#[test]
fn vectorized_losses_match_loops() {
    for seed in 0..100 {
        let mut r = rng(seed);
        let n = r.random_range(1..=8);
        let c = r.random_range(2..=4);
        let d = r.random_range(1..=5);
        let tau = r.random_range(0.2..2.0);
        let (z1, z2) = (random_matrix(&mut r, n, d), random_matrix(&mut r, n, d));
        for include_self in [true, false] {
            let got = eval_loss(&[&z1, &z2], |t, v| {
                objectives::instance_contrastive_loss(t, v[0], v[1], tau, include_self)
            });
            let want = instance_loss_loop(&z1, &z2, tau, include_self);
            assert!(close(got, want, 1e-12), "seed {seed}: {got} vs {want}");
        }

        let (y1, y2, y) = (
            random_stochastic(&mut r, n, c),
            random_stochastic(&mut r, n, c),
            random_stochastic(&mut r, n, c),
        );
        let got = eval_loss(&[&y1, &y2], |t, v| objectives::cluster_contrastive_loss(t, v[0], v[1], tau));
        let want = cluster_loss_loop(&y1, &y2, tau);
        assert!(close(got, want, 1e-12), "seed {seed}: {got} vs {want}");

        let target = objectives::high_confidence_target(&[&y1, &y2, &y]).unwrap();
        assert_eq!(rows(&target.p).len(), n);
        for (a, b) in rows(&target.p).iter().flatten().zip(target_loop(&[&y1, &y2, &y]).iter().flatten()) {
            assert!(close(*a, *b, 1e-12));
        }
        for reduction in [GuidanceReduction::Sum, GuidanceReduction::Mean] {
            let got = eval_loss(&[&y], |t, v| objectives::guidance_loss(t, v[0], &target.p, reduction));
            let want = guidance_loop(&y, &target.p, reduction);
            assert!(close(got, want, 1e-12), "seed {seed}: {got} vs {want}");
        }
    }
}

#[test]
fn guidance_is_nonnegative() {
    let mut r = rng(7);
    for _ in 0..1000 {
        let n = r.random_range(1..=5);
        let c = r.random_range(2..=5);
        let src = random_stochastic(&mut r, n, c);
        let p = objectives::high_confidence_target(&[&src]).unwrap().p;
        let y = random_stochastic(&mut r, n, c);
        let l = eval_loss(&[&y], |t, v| objectives::guidance_loss(t, v[0], &p, GuidanceReduction::Sum));
        assert!(l >= -1e-12, "{l}");
    }
}

#[test]
fn cosine_similarity_values() {
    let u = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]);
    let w = Matrix::from_rows(&[[1.0, 1.0], [3.0, 0.0]]);
    let mut t = icmvc::numkit::Tape::new();
    let (a, b) = (t.constant(u), t.constant(w));
    let s = objectives::cosine_similarity_matrix(&mut t, a, b).unwrap();
    let s = t.value(s);
    assert!(close(s[(0, 0)], 1.0 / 2f64.sqrt(), 1e-15));
    assert!(close(s[(0, 1)], 1.0, 1e-15));
    assert!(close(s[(1, 1)], 0.0, 1e-15));
}
