use super::*;
use crate::channel::{build_channels, default_paper_scene, ChannelModel, PaperScene, PathlossParams};
use crate::detection::min_energy;
use crate::geometry::{ArraySpec, Point2D};

fn desk_scene(kind: PaperScene) -> Scene {
    default_paper_scene(kind).with_antennas(8)
}

/// One BS, one CU, one target sample.
fn single_link(model: ChannelModel, n: usize, cu: Point2D, gamma: f64) -> Scene {
    Scene {
        bs_positions: vec![Point2D::new(30.0, 0.0)],
        arrays: ArraySpec::square(n),
        cu_positions: vec![vec![cu]],
        noise_comm: 1e-11,
        noise_radar: 1e-13,
        p_max: 2.0,
        sinr_targets: vec![vec![gamma]],
        rcs: vec![vec![0.7]],
        pathloss: PathlossParams::default(),
        target_samples: vec![Point2D::new(0.0, 0.0)],
        channel_model: model,
        rng_seed: 5,
    }
}

fn omega(variant: ProblemVariant, ch: &ChannelSet, scene: &Scene) -> f64 {
    let sol = solve_scheme(variant, ch, scene).unwrap();
    sol.ensure_optimal().unwrap();
    sol.omega
}

#[test]
fn type2_rows_drop_the_sensing_terms() {
    let scene = desk_scene(PaperScene::ThreeCu);
    let ch = build_channels(&scene).unwrap();
    let (l, k) = (3, 3);
    let t1 = SdrModel::build(ProblemVariant::proposed(Scenario::SyncI, Receiver::TypeI), &ch, &scene, None).unwrap();
    let t2 = SdrModel::build(ProblemVariant::proposed(Scenario::SyncI, Receiver::TypeII), &ch, &scene, None).unwrap();
    for (a, b) in t1.sinr.iter().zip(&t2.sinr) {
        assert_eq!(a.interference.len(), l * k + l);
        assert_eq!(a.interference.len() - b.interference.len(), l);
        assert!(b.interference.iter().all(|t| matches!(t.var, BeamVar::W { .. })));
    }
    assert_eq!(t1.num_rows(), 9 + l * k + l);
    assert_eq!(t1.to_program().unwrap().constraints().len(), t1.num_rows());
}

#[test]
fn epigraph_link_counts() {
    let scene = desk_scene(PaperScene::OneCu);
    let ch = build_channels(&scene).unwrap();
    let sync = SdrModel::build(ProblemVariant::proposed(Scenario::SyncI, Receiver::TypeI), &ch, &scene, None).unwrap();
    let unsync = SdrModel::build(ProblemVariant::proposed(Scenario::UnsyncII, Receiver::TypeI), &ch, &scene, None).unwrap();
    assert_eq!(sync.epigraph.len(), 9);
    assert!(sync.epigraph.iter().all(|r| r.links.len() == 9));
    assert!(unsync.epigraph.iter().all(|r| r.links.len() == 3 && r.links.iter().all(|t| t.m == t.l)));
}

#[test]
fn zf_model_needs_directions() {
    let scene = desk_scene(PaperScene::OneCu);
    let ch = build_channels(&scene).unwrap();
    let v = ProblemVariant::new(Scenario::SyncI, Receiver::TypeI, Scheme::Zf);
    assert!(SdrModel::build(v, &ch, &scene, None).is_err());
    assert!(build_sdr(v, &ch, &scene).is_err());
    assert!(solve_variant(v, &ch, &scene).is_err());
}

#[test]
fn single_link_low_target_reaches_full_power_beampattern() {
    let scene = single_link(ChannelModel::Rayleigh, 6, Point2D::new(50.0, 20.0), 1e-6);
    let ch = build_channels(&scene).unwrap();
    let link = ch.link(0, 0, 0);
    let expected = 6.0 * link.zeta * link.zeta * link.beta * 6.0 * scene.p_max;
    for receiver in [Receiver::TypeI, Receiver::TypeII] {
        let got = omega(ProblemVariant::proposed(Scenario::SyncI, receiver), &ch, &scene);
        assert!(((got - expected) / expected).abs() < 1e-4, "{receiver:?}: {got} vs {expected}");
    }
}

#[test]
fn zf_matches_proposed_for_a_user_at_the_target_bearing() {
    // LoS user on the line from the BS through the target.
    let scene = single_link(ChannelModel::Los, 6, Point2D::new(-20.0, 0.0), 10.0);
    let ch = build_channels(&scene).unwrap();
    let v = ProblemVariant::proposed(Scenario::SyncI, Receiver::TypeII);
    let prop = omega(v, &ch, &scene);
    let zf = omega(ProblemVariant { scheme: Scheme::Zf, ..v }, &ch, &scene);
    assert!(((prop - zf) / prop).abs() < 1e-4, "{prop} vs {zf}");
}

#[test]
fn target_above_matched_filter_bound_is_infeasible() {
    let mut scene = single_link(ChannelModel::Rayleigh, 4, Point2D::new(50.0, 20.0), 1.0);
    let ch = build_channels(&scene).unwrap();
    let bound = ch.h(0, 0, 0).norm_squared() * scene.p_max / scene.noise_comm;
    scene.sinr_targets[0][0] = 1.5 * bound;
    let sol = solve_variant(ProblemVariant::proposed(Scenario::SyncI, Receiver::TypeII), &ch, &scene).unwrap();
    assert_eq!(sol.status(), SolveStatus::Infeasible);
    assert!(sol.report.certificate.is_some());
    assert!(rank_one_extract(&sol, &ch, &scene).is_err());
}

#[test]
fn orderings_on_the_one_user_scene() {
    let scene = desk_scene(PaperScene::OneCu).with_gamma_db(15.0);
    let ch = build_channels(&scene).unwrap();
    let o = |s, r, scheme| omega(ProblemVariant::new(s, r, scheme), &ch, &scene);
    let tol = |x: f64| 1e-6 * x.abs();
    for scheme in [Scheme::Proposed, Scheme::Zf, Scheme::SensingOnly] {
        let p11 = o(Scenario::SyncI, Receiver::TypeI, scheme);
        let p21 = o(Scenario::SyncI, Receiver::TypeII, scheme);
        let p31 = o(Scenario::UnsyncII, Receiver::TypeI, scheme);
        let p41 = o(Scenario::UnsyncII, Receiver::TypeII, scheme);
        assert!(p21 >= p11 - tol(p21), "{scheme:?}");
        assert!(p11 >= p31 - tol(p11), "{scheme:?}");
        assert!(p41 >= p31 - tol(p41), "{scheme:?}");
        assert!(p21 >= p41 - tol(p21), "{scheme:?}");
    }
    for s in [Scenario::SyncI, Scenario::UnsyncII] {
        for r in [Receiver::TypeI, Receiver::TypeII] {
            let prop = o(s, r, Scheme::Proposed);
            assert!(o(s, r, Scheme::Zf) <= prop + tol(prop));
            assert!(o(s, r, Scheme::SensingOnly) <= prop + tol(prop));
        }
    }
}

#[test]
fn omega_nonincreasing_in_gamma() {
    let base = desk_scene(PaperScene::OneCu);
    let v = ProblemVariant::proposed(Scenario::SyncI, Receiver::TypeII);
    let mut prev = f64::INFINITY;
    for g in [5.0, 15.0, 25.0] {
        let scene = base.clone().with_gamma_db(g);
        let ch = build_channels(&scene).unwrap();
        let o = omega(v, &ch, &scene);
        assert!(o <= prev * (1.0 + 1e-6), "{g} dB: {o} > {prev}");
        prev = o;
    }
}

#[test]
fn extraction_preserves_covariance_and_served_gain() {
    let scene = desk_scene(PaperScene::ThreeCu);
    let ch = build_channels(&scene).unwrap();
    for receiver in [Receiver::TypeI, Receiver::TypeII] {
        let sdr = solve_variant(ProblemVariant::proposed(Scenario::SyncI, receiver), &ch, &scene).unwrap();
        let beams = rank_one_extract(&sdr, &ch, &scene).unwrap();
        for l in 0..3 {
            let mut before = sdr.r[l].clone();
            let mut after = beams.r_cov[l].clone();
            for i in 0..3 {
                before += &sdr.w[l][i];
                after += &beams.w[l][i] * beams.w[l][i].adjoint();
                let h = ch.h(l, l, i);
                let g_sdr = h.dotc(&(&sdr.w[l][i] * h)).re;
                let g_beam = h.dotc(&beams.w[l][i]).norm_sqr();
                assert!(((g_sdr - g_beam) / g_sdr).abs() < 1e-9);
            }
            let scale = before.norm();
            assert!((before - after).norm() <= 1e-9 * scale + beams.residuals.psd_clip[l] * 3.0);
            assert!(beams.residuals.unclipped_min_eig(l) >= -1e-7 * beams.r_cov[l].trace().re.abs());
        }
        assert!(beams.residuals.worst_sinr() >= -1e-6, "{receiver:?}: {}", beams.residuals.worst_sinr());
        assert!(beams.residuals.worst_power() <= 1e-6);
        let (e, _) = min_energy(&beams, &ch, Scenario::SyncI, true);
        assert!(((e - sdr.omega) / sdr.omega).abs() < 1e-6);
    }
}

#[test]
fn rank_one_input_is_returned_up_to_phase() {
    let scene = single_link(ChannelModel::Rayleigh, 4, Point2D::new(50.0, 20.0), 1.0);
    let ch = build_channels(&scene).unwrap();
    // a real solve supplies a valid report; the beam is then replaced
    let mut sdr = solve_variant(ProblemVariant::proposed(Scenario::SyncI, Receiver::TypeII), &ch, &scene).unwrap();
    let w = CVector::from_fn(4, |i, _| Complex64::new(0.3 * i as f64 - 0.2, 0.1 + 0.05 * i as f64));
    sdr.w[0][0] = &w * w.adjoint();
    let beams = rank_one_extract(&sdr, &ch, &scene).unwrap();
    let got = &beams.w[0][0];
    let phase = got.dotc(&w) / w.norm_squared();
    assert!((phase.norm() - 1.0).abs() < 1e-12);
    assert!((got - &w * phase.conj()).norm() < 1e-12 * w.norm());
    assert!((got * got.adjoint() - &sdr.w[0][0]).norm() < 1e-12 * sdr.w[0][0].norm());
}

#[test]
fn degenerate_extraction_is_reported() {
    let scene = single_link(ChannelModel::Rayleigh, 4, Point2D::new(50.0, 20.0), 1.0);
    let ch = build_channels(&scene).unwrap();
    let mut sdr = solve_variant(ProblemVariant::proposed(Scenario::SyncI, Receiver::TypeII), &ch, &scene).unwrap();
    // a beam orthogonal to the served channel
    let h = ch.h(0, 0, 0);
    let mut v = CVector::from_fn(4, |i, _| Complex64::new(1.0 + i as f64, -(i as f64)));
    let c = h.dotc(&v) / h.norm_squared();
    v -= h * c;
    sdr.w[0][0] = &v * v.adjoint();
    assert!(matches!(rank_one_extract(&sdr, &ch, &scene), Err(IsacError::DegenerateExtraction { bs: 0, user: 0, .. })));
}

#[test]
fn zf_directions_null_other_users() {
    let scene = desk_scene(PaperScene::OneCu);
    let ch = build_channels(&scene).unwrap();
    let dirs = zf_beamformers(&ch, &scene).unwrap();
    for m in 0..3 {
        let u = &dirs[m][0];
        assert!((u.norm() - 1.0).abs() < 1e-12);
        for mp in 0..3 {
            let h = ch.h(m, mp, 0);
            let leak = h.dotc(u).norm();
            if mp != m {
                assert!(leak <= 1e-9 * h.norm(), "leak {leak}");
            } else {
                assert!(leak > 1e-3 * h.norm());
            }
        }
    }
}

#[test]
fn zf_single_user_is_maximum_ratio() {
    let scene = single_link(ChannelModel::Rayleigh, 5, Point2D::new(50.0, 20.0), 1.0);
    let ch = build_channels(&scene).unwrap();
    let u = &zf_beamformers(&ch, &scene).unwrap()[0][0];
    let h = ch.h(0, 0, 0);
    let mr = h / Complex64::new(h.norm(), 0.0);
    assert!((u - mr).norm() < 1e-12);
}

#[test]
fn zf_needs_enough_antennas() {
    let scene = desk_scene(PaperScene::ThreeCu);
    let ch = build_channels(&scene).unwrap();
    assert!(matches!(zf_beamformers(&ch, &scene), Err(IsacError::InvalidArgument(_))));
}

/// Two cells with nearly collinear own and cross channels: nulling the
/// cross user leaves almost no gain, while a matched beam leaks little.
fn crafted_two_cell() -> (ChannelSet, Scene) {
    let scene = Scene {
        bs_positions: vec![Point2D::new(30.0, 0.0), Point2D::new(-30.0, 0.0)],
        arrays: ArraySpec::square(2),
        cu_positions: vec![vec![Point2D::new(40.0, 20.0)], vec![Point2D::new(-40.0, 20.0)]],
        noise_comm: 1e-10,
        noise_radar: 1e-13,
        p_max: 1.0,
        sinr_targets: vec![vec![10.0], vec![10.0]],
        rcs: vec![vec![1.0; 2]; 2],
        pathloss: PathlossParams::default(),
        target_samples: vec![Point2D::new(0.0, 0.0)],
        channel_model: ChannelModel::Rayleigh,
        rng_seed: 1,
    };
    let mut ch = build_channels(&scene).unwrap();
    let c = (1e4 * scene.noise_comm / scene.p_max).sqrt();
    let v = |a: f64, b: f64| CVector::from_vec(vec![Complex64::new(a * c, 0.0), Complex64::new(b * c, 0.0)]);
    *ch.h_mut(0, 0, 0) = v(1.0, 0.01);
    *ch.h_mut(0, 1, 0) = v(0.1, 0.0);
    *ch.h_mut(1, 1, 0) = v(0.01, 1.0);
    *ch.h_mut(1, 0, 0) = v(0.0, 0.1);
    (ch, scene)
}

#[test]
fn crafted_instance_separates_zf_from_proposed() {
    let (ch, scene) = crafted_two_cell();
    let v = ProblemVariant::proposed(Scenario::SyncI, Receiver::TypeII);
    let prop = solve_scheme(v, &ch, &scene).unwrap();
    let zf = solve_scheme(ProblemVariant { scheme: Scheme::Zf, ..v }, &ch, &scene).unwrap();
    assert_eq!(prop.status(), SolveStatus::Optimal);
    assert_eq!(zf.status(), SolveStatus::Infeasible);
}

#[test]
fn sensing_only_objective_counts_sensing_covariance() {
    let scene = desk_scene(PaperScene::OneCu).with_gamma_db(10.0);
    let ch = build_channels(&scene).unwrap();
    let v = ProblemVariant::proposed(Scenario::SyncI, Receiver::TypeII);
    let so = sensing_only_variant(v, &ch, &scene).unwrap();
    so.ensure_optimal().unwrap();
    let sensing_energy = relaxed_energy(&so.w, &so.r, &ch, 0, v.scenario, false);
    let full_energy = relaxed_energy(&so.w, &so.r, &ch, 0, v.scenario, true);
    assert!(so.omega <= sensing_energy * (1.0 + 1e-6));
    assert!(full_energy > sensing_energy);
}

#[test]
fn sensing_only_share_shrinks_for_type1_as_targets_grow() {
    let mut prev = f64::INFINITY;
    for g in [30.0, 40.0, 50.0] {
        let scene = desk_scene(PaperScene::OneCu).with_gamma_db(g);
        let ch = build_channels(&scene).unwrap();
        let so = omega(ProblemVariant::new(Scenario::SyncI, Receiver::TypeI, Scheme::SensingOnly), &ch, &scene);
        let prop = omega(ProblemVariant::proposed(Scenario::SyncI, Receiver::TypeI), &ch, &scene);
        let share = so / prop;
        assert!(share < prev, "{g} dB: share {share} after {prev}");
        prev = share;
    }
    assert!(prev < 0.7);
}

#[test]
fn clip_psd_removes_negative_part() {
    let m = CMatrix::from_diagonal(&CVector::from_vec(vec![Complex64::new(2.0, 0.0), Complex64::new(-1e-3, 0.0)]));
    let (c, removed) = clip_psd(&m);
    assert!((removed - 1e-3).abs() < 1e-15);
    assert!((c[(1, 1)].re).abs() < 1e-15 && (c[(0, 0)].re - 2.0).abs() < 1e-15);
    let (same, none) = clip_psd(&CMatrix::identity(3, 3));
    assert_eq!(none, 0.0);
    assert_eq!(same, CMatrix::identity(3, 3));
}

#[test]
fn variant_list_is_complete() {
    let all = ProblemVariant::all();
    assert_eq!(all.len(), 12);
    let unique: std::collections::HashSet<_> = all.iter().collect();
    assert_eq!(unique.len(), 12);
    assert!(!ProblemVariant::new(Scenario::SyncI, Receiver::TypeI, Scheme::SensingOnly).comm_in_energy());
}
