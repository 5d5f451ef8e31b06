use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector2, Vector3};
use proptest::prelude::*;

use triview_core::align::{estimate_rho, register_views, umeyama, Correspondence, CorrespondenceSet, CorrespondenceSource, Similarity};
use triview_core::depthfusion::{fit_scale_shift, fuse_and_filter, pearson};
use triview_core::embedding::{fourier_pe, gated_fusion, FourierPE};
use triview_core::frames::{attitude_rotation, geo_to_local, redefine_altitudes, relative_pose};
use triview_core::grid::Projection;
use triview_core::losses::{geodesic_angle, loss_cam, loss_conf, loss_geo, loss_norm, optimal_scale, ConfMap, CONF_CLAMP};
use triview_core::metrics::{acc_mean, delta_ratio, pose_accuracy, pose_errors, recall_and_auc, yaw_difference, PoseEval};
use triview_core::ortho::{locate_on_tile, ortho_lift, wrap_degrees};
use triview_core::pairing::{overlap_score, select_tuples, voxelize, Candidates, PairScore};
use triview_core::{DepthGrid, GeoPoint, Modality, PointMap, Pose, SatTile, TriViewSample, ViewCamera, ViewRecord};

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    (-180.0..180.0f64, -89.0..89.0f64, -180.0..180.0f64).prop_map(|(y, p, r)| attitude_rotation(y, p, r))
}

fn vec3(bound: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-bound..bound, -bound..bound, -bound..bound).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = Pose> {
    (rotation(), vec3(50.0)).prop_map(|(r, c)| Pose::from_center(r, c))
}

fn cloud(n: usize, bound: f64) -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec(vec3(bound), n)
}

/// A point map in front of the camera (positive depth) with a few holes.
fn pointmap(h: usize, w: usize) -> impl Strategy<Value = PointMap> {
    prop::collection::vec((vec3(5.0), 1.0..30.0f64, any::<bool>()), h * w).prop_map(move |cells| {
        let mut points = Vec::new();
        let mut valid = Vec::new();
        for (i, (p, z, hole)) in cells.into_iter().enumerate() {
            points.push(Vector3::new(p.x, p.y, z));
            valid.push(!(hole && i % 5 == 0));
        }
        PointMap::new(h, w, points, valid).unwrap()
    })
}

fn close(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol
}

fn transformed(map: &PointMap, r: &Matrix3<f64>, t: &Vector3<f64>) -> PointMap {
    let points = map.points.iter().map(|p| r * p + t).collect();
    PointMap::new(map.height, map.width, points, map.valid.clone()).unwrap()
}

fn scaled(map: &PointMap, c: f64) -> PointMap {
    let points = map.points.iter().map(|p| p * c).collect();
    PointMap::new(map.height, map.width, points, map.valid.clone()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    // frames

    #[test]
    fn attitude_rotations_are_rigid(r in rotation()) {
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        prop_assert!(err < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn relative_pose_of_self_is_identity(a in pose()) {
        let rel = relative_pose(&a, &a);
        prop_assert!((rel.rotation - Matrix3::identity()).abs().max() <= 1e-12);
        prop_assert!(rel.translation.amax() <= 1e-12 * (1.0 + a.translation.amax()));
    }

    #[test]
    fn relative_pose_matches_homogeneous_product(a in pose(), b in pose(), p in vec3(20.0)) {
        let rel = relative_pose(&a, &b);
        let via_world = b.transform(&a.inverse_transform(&p));
        prop_assert!(close(&rel.transform(&p), &via_world, 1e-9));
        let back = relative_pose(&b, &a).compose(&rel);
        prop_assert!((back.rotation - Matrix3::identity()).abs().max() < 1e-12);
        prop_assert!(back.translation.amax() < 1e-10);
    }

    #[test]
    fn geo_to_local_is_linear_in_deltas(
        lat in -60.0..60.0f64,
        lon in -170.0..170.0f64,
        d1 in (-0.01..0.01f64, -0.01..0.01f64, -50.0..50.0f64),
        d2 in (-0.01..0.01f64, -0.01..0.01f64, -50.0..50.0f64),
    ) {
        let o = GeoPoint::new(lat, lon, 100.0).unwrap();
        let at = |d: (f64, f64, f64)| geo_to_local(&GeoPoint::new(lat + d.0, lon + d.1, 100.0 + d.2).unwrap(), &o).unwrap();
        let sum = at((d1.0 + d2.0, d1.1 + d2.1, d1.2 + d2.2));
        // lat + d is rounded to the ulp of the absolute coordinate, ~1e-9 m at 100°
        let input_ulp = 4.0 * f64::EPSILON * lat.abs().max(lon.abs()) * 111_319.5;
        prop_assert!(close(&sum, &(at(d1) + at(d2)), 1e-9 + input_ulp));
    }

    #[test]
    fn redefinition_only_moves_heights(poses in prop::collection::vec(pose(), 6), h in 50.0..300.0f64) {
        let modalities = [Modality::Satellite, Modality::Satellite, Modality::Uav, Modality::Uav, Modality::Ground, Modality::Ground];
        let views = poses
            .iter()
            .zip(modalities)
            .map(|(p, m)| ViewRecord {
                modality: m,
                pose: if m == Modality::Satellite { Pose::from_center(attitude_rotation(0.0, 90.0, 0.0), p.center()) } else { *p },
                camera: ViewCamera::Ortho { width: 4, height: 4, rho: 1.0 },
                depth: None,
            })
            .collect();
        let sample = TriViewSample {
            views,
            origin: GeoPoint::new(0.0, 0.0, 0.0).unwrap(),
            meters_per_pixel_gt: 1.0,
            world_shift_y: 0.0,
        };
        let out = redefine_altitudes(&sample, h).unwrap();
        let ground_y: Vec<f64> = [4, 5].iter().map(|i| out.views[*i].pose.center().y).collect();
        prop_assert!(ground_y.iter().copied().fold(f64::NEG_INFINITY, f64::max).abs() < 1e-9);
        for (a, b) in sample.views.iter().zip(&out.views) {
            prop_assert_eq!(a.pose.rotation, b.pose.rotation);
            if a.modality == Modality::Satellite {
                prop_assert!((b.pose.center().y + h).abs() < 1e-9);
            }
        }
        for i in 2..6 {
            for j in 2..6 {
                let before = sample.views[i].pose.center() - sample.views[j].pose.center();
                let after = out.views[i].pose.center() - out.views[j].pose.center();
                prop_assert!((before.x - after.x).abs() < 1e-9 && (before.z - after.z).abs() < 1e-9);
                prop_assert!((before.y - after.y).abs() < 1e-9);
            }
        }
    }

    // ortho

    #[test]
    fn lift_and_locate_are_inverse(
        u in -50.0..300.0f64,
        v in -50.0..300.0f64,
        z in 1.0..400.0f64,
        rho in 0.05..3.0f64,
        heading in -180.0..180.0f64,
        center in vec3(100.0),
    ) {
        let tile = SatTile::nadir(center, heading, 256, 200, rho).unwrap();
        let local = ortho_lift(u, v, z, &tile).unwrap();
        let (u2, v2) = locate_on_tile(&tile.pose.inverse_transform(&local), &tile);
        prop_assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
    }

    #[test]
    fn locate_rotates_against_tile_heading(p in vec3(150.0), heading in -180.0..180.0f64, theta in -180.0..180.0f64) {
        let base = SatTile::nadir(Vector3::new(0.0, -150.0, 0.0), heading, 256, 256, 0.7).unwrap();
        let turned = SatTile::nadir(Vector3::new(0.0, -150.0, 0.0), heading + theta, 256, 256, 0.7).unwrap();
        let (u0, v0) = locate_on_tile(&p, &base);
        let (u1, v1) = locate_on_tile(&p, &turned);
        let expected = Rotation3::from_axis_angle(&Vector3::z_axis(), -theta.to_radians()) * Vector3::new(u0 - 128.0, v0 - 128.0, 0.0);
        prop_assert!((u1 - 128.0 - expected.x).abs() < 1e-9 && (v1 - 128.0 - expected.y).abs() < 1e-9);
    }

    #[test]
    fn locate_is_invariant_to_joint_scaling(p in vec3(150.0), center in vec3(50.0), c in 0.1..10.0f64) {
        let tile = SatTile::nadir(center, 30.0, 128, 128, 0.9).unwrap();
        let big = SatTile::nadir(center * c, 30.0, 128, 128, 0.9 * c).unwrap();
        let (u0, v0) = locate_on_tile(&p, &tile);
        let (u1, v1) = locate_on_tile(&(p * c), &big);
        prop_assert!((u0 - u1).abs() < 1e-9 && (v0 - v1).abs() < 1e-9);
    }

    #[test]
    fn wrapped_angles_stay_in_range(a in -5000.0..5000.0f64, b in -5000.0..5000.0f64) {
        let w = wrap_degrees(a);
        prop_assert!(w > -180.0 && w <= 180.0);
        prop_assert!(((a - w) / 360.0 - ((a - w) / 360.0).round()).abs() < 1e-9);
        let d = yaw_difference(a, b);
        prop_assert!((0.0..=180.0).contains(&d));
        prop_assert!((d - yaw_difference(b, a)).abs() < 1e-9);
    }

    // embedding

    #[test]
    fn fourier_parity(b in prop::collection::vec(-20.0..20.0f64, 6), x in (0.0..=1.0f64, 0.0..=1.0f64)) {
        let k = 3;
        let bm = DMatrix::from_row_slice(2, k, &b);
        let d = 2 + 2 * k;
        let pos = FourierPE::new(bm.clone(), DMatrix::identity(d, d), DVector::zeros(d)).unwrap();
        let neg = FourierPE::new(-bm, DMatrix::identity(d, d), DVector::zeros(d)).unwrap();
        let x = Vector2::new(x.0, x.1);
        let (fp, fn_) = (fourier_pe(&x, &pos).unwrap(), fourier_pe(&x, &neg).unwrap());
        for j in 0..k {
            prop_assert_eq!(fp[2 + j], -fn_[2 + j]);
            prop_assert_eq!(fp[2 + k + j], fn_[2 + k + j]);
        }
    }

    #[test]
    fn fusion_shift_invariance_and_hull(
        states in prop::collection::vec(-100.0..100.0f64, 1..6),
        logits in prop::collection::vec(-10.0..10.0f64, 6),
        shift in -50.0..50.0f64,
    ) {
        let s: Vec<DVector<f64>> = states.iter().map(|v| DVector::from_vec(vec![*v])).collect();
        let l = &logits[..s.len()];
        let shifted: Vec<f64> = l.iter().map(|x| x + shift).collect();
        let a = gated_fusion(&s, l).unwrap()[0];
        let b = gated_fusion(&s, &shifted).unwrap()[0];
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        let lo = states.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = states.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a >= lo - 1e-12 * lo.abs().max(1.0) && a <= hi + 1e-12 * hi.abs().max(1.0));
    }

    // losses

    #[test]
    fn geo_loss_absorbs_global_scale(pred in pointmap(4, 5), gt in pointmap(4, 5), c in prop::sample::select(vec![0.1, 1.0, 3.7])) {
        let (a, _) = loss_geo(&pred, &gt).unwrap();
        let (b, _) = loss_geo(&scaled(&pred, c), &gt).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a));
    }

    #[test]
    fn losses_are_nonnegative_and_vanish_at_truth(pred in pointmap(4, 5), gt in pointmap(4, 5)) {
        prop_assert!(loss_geo(&pred, &gt).unwrap().0 >= 0.0);
        prop_assert_eq!(loss_geo(&gt, &gt).unwrap().0, 0.0);
        if let (Ok(a), Ok(b)) = (loss_norm(&pred, &gt), loss_norm(&gt, &gt)) {
            prop_assert!(a >= 0.0);
            prop_assert!(b.abs() < 1e-12);
        }
        let conf = ConfMap::constant(4, 5, 0.3).unwrap();
        prop_assert!(loss_conf(&conf, &pred, &gt, 0.1).unwrap() >= 0.0);
        let sure = ConfMap::constant(4, 5, 1.0 - CONF_CLAMP).unwrap();
        prop_assert!(loss_conf(&sure, &gt, &gt, 0.1).unwrap() < 2e-7);
    }

    #[test]
    fn camera_loss_nonnegative_and_zero_at_truth(pred in prop::collection::vec(pose(), 4), gt in prop::collection::vec(pose(), 4)) {
        prop_assert!(loss_cam(&pred, &gt, 0.1).unwrap().0 >= 0.0);
        let (zero, grad) = loss_cam(&gt, &gt, 0.1).unwrap();
        prop_assert!(zero.abs() < 1e-12);
        prop_assert!(grad.iter().all(|g| g.amax() < 1e-9));
    }

    #[test]
    fn normal_loss_ignores_common_rigid_motion(pred in pointmap(5, 5), gt in pointmap(5, 5), r in rotation(), t in vec3(10.0)) {
        if let Ok(a) = loss_norm(&pred, &gt) {
            let b = loss_norm(&transformed(&pred, &r, &t), &transformed(&gt, &r, &t)).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn optimal_scale_is_equivariant(pred in pointmap(3, 4), gt in pointmap(3, 4), c in 0.05..20.0f64) {
        let w = vec![1.0; 12];
        let s = optimal_scale(&pred, &gt, &w).unwrap();
        let sc = optimal_scale(&scaled(&pred, c), &gt, &w).unwrap();
        prop_assert!((sc * c - s).abs() <= 1e-9 * s.max(1e-6));
    }

    #[test]
    fn geodesic_angle_is_a_symmetric_angle(a in rotation(), b in rotation()) {
        let d = geodesic_angle(&a, &b);
        prop_assert!((0.0..=std::f64::consts::PI).contains(&d));
        prop_assert!((d - geodesic_angle(&b, &a)).abs() < 1e-12);
        prop_assert_eq!(geodesic_angle(&a, &a), 0.0);
    }

    // metrics

    #[test]
    fn reconstruction_metrics_ignore_common_rigid_motion(pred in cloud(40, 20.0), gt in cloud(40, 20.0), r in rotation(), t in vec3(30.0)) {
        let move_all = |v: &[Vector3<f64>]| -> Vec<Vector3<f64>> { v.iter().map(|p| r * p + t).collect() };
        let (pm, gm) = (move_all(&pred), move_all(&gt));
        prop_assert!((acc_mean(&pred, &gt).unwrap() - acc_mean(&pm, &gm).unwrap()).abs() < 1e-9);
        let mut last = 0.0;
        for tau in [0.5, 1.0, 2.0, 5.0, 10.0] {
            let d = delta_ratio(&pred, &gt, tau).unwrap();
            prop_assert!(d >= last);
            last = d;
        }
    }

    #[test]
    fn recall_and_auc_consistency(errs in prop::collection::vec((0.0..40.0f64, 0.0..40.0f64), 1..30)) {
        let evals: Vec<PoseEval> = errs.iter().map(|(r, t)| PoseEval { rot_err: *r, trans_dir_err: *t }).collect();
        let thetas = [1.0, 5.0, 15.0, 25.0, 35.0];
        let rec = recall_and_auc(&evals, &thetas, 30.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&rec.auc));
        for w in rec.rra.windows(2).chain(rec.rta.windows(2)) {
            prop_assert!(w[0].1 <= w[1].1);
        }
        for ((t, rra), (_, rta)) in rec.rra.iter().zip(&rec.rta) {
            let acc = pose_accuracy(&evals, *t);
            prop_assert!(*rra >= acc && *rta >= acc);
        }
    }

    #[test]
    fn direction_error_ignores_translation_scale(pred in prop::collection::vec(pose(), 3), gt in prop::collection::vec(pose(), 3), c in 0.01..100.0f64) {
        let stretched: Vec<Pose> = pred.iter().map(|p| Pose { rotation: p.rotation, translation: p.translation * c }).collect();
        let a = pose_errors(&pred, &gt).unwrap();
        let b = pose_errors(&stretched, &gt).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.rot_err, y.rot_err);
            prop_assert!((x.trans_dir_err - y.trans_dir_err).abs() < 1e-6);
        }
    }

    // pairing

    #[test]
    fn overlap_symmetric_and_bounded(a in cloud(30, 10.0), b in cloud(30, 10.0), cell in 0.5..4.0f64) {
        let (va, vb) = (voxelize(&a, cell).unwrap(), voxelize(&b, cell).unwrap());
        let ab = overlap_score(&va, &vb).unwrap();
        prop_assert_eq!(ab, overlap_score(&vb, &va).unwrap());
        prop_assert!(ab <= va.len().min(vb.len()));
    }

    #[test]
    fn duplicated_points_do_not_change_voxels(a in cloud(20, 10.0), picks in prop::collection::vec(0usize..20, 0..20)) {
        let mut more = a.clone();
        more.extend(picks.iter().map(|i| a[*i]));
        prop_assert_eq!(voxelize(&a, 1.0).unwrap(), voxelize(&more, 1.0).unwrap());
    }

    #[test]
    fn fine_overlaps_refine_coarse_ones(a in cloud(40, 6.0), b in cloud(40, 6.0), k in 2i64..4) {
        // every shared fine cell lies inside a shared coarse cell
        let (coarse, fine) = (1.0 * k as f64, 1.0);
        let (ca, cb) = (voxelize(&a, coarse).unwrap(), voxelize(&b, coarse).unwrap());
        let (fa, fb) = (voxelize(&a, fine).unwrap(), voxelize(&b, fine).unwrap());
        for c in fa.occupied.intersection(&fb.occupied) {
            let parent = c.map(|x| x.div_euclid(k));
            prop_assert!(ca.occupied.contains(&parent) && cb.occupied.contains(&parent));
        }
    }

    #[test]
    fn selected_tuples_have_no_empty_pair(offsets in prop::collection::vec(-6.0..6.0f64, 9)) {
        let mut clouds = Vec::new();
        for (i, m) in [Modality::Satellite, Modality::Uav, Modality::Ground].iter().enumerate() {
            for j in 0..3 {
                let o = offsets[3 * i + j];
                let pts: Vec<_> = (0..8).map(|q| Vector3::new(o + q as f64 * 0.5, 0.5, 0.5)).collect();
                clouds.push((*m, pts));
            }
        }
        let c = Candidates::from_clouds(&clouds, 1.0).unwrap();
        let all: Vec<_> = c.satellite.iter().chain(&c.uav).chain(&c.ground).collect();
        for t in select_tuples(&c, 27, PairScore::Count).unwrap() {
            let idx = [t.satellite[0], t.satellite[1], 3 + t.uav[0], 3 + t.uav[1], 6 + t.ground[0], 6 + t.ground[1]];
            for a in 0..6 {
                for b in a + 1..6 {
                    prop_assert!(overlap_score(all[idx[a]], all[idx[b]]).unwrap() > 0);
                }
            }
        }
    }

    // depthfusion

    #[test]
    fn pearson_affine_behavior(pts in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 5..40), s in 0.1..10.0f64, t in -5.0..5.0f64) {
        let a: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pts.iter().map(|p| p.0 * 0.3 + p.1).collect();
        let m = vec![true; a.len()];
        let Ok(r) = pearson(&a, &b, &m) else { return Ok(()) };
        prop_assert!((-1.0..=1.0).contains(&r));
        let moved: Vec<f64> = a.iter().map(|x| s * x + t).collect();
        prop_assert!((pearson(&moved, &b, &m).unwrap() - r).abs() < 1e-12);
        let flipped: Vec<f64> = a.iter().map(|x| -s * x + t).collect();
        prop_assert!((pearson(&flipped, &b, &m).unwrap() + r).abs() < 1e-12);
    }

    #[test]
    fn scale_shift_residual_is_orthogonal(pts in prop::collection::vec((0.5..50.0f64, -5.0..5.0f64), 3..60)) {
        let rel = DepthGrid::from_values(1, pts.len(), pts.iter().map(|p| p.0).collect()).unwrap();
        let anchor = DepthGrid::from_values(1, pts.len(), pts.iter().map(|p| 2.0 * p.0 + 10.0 + p.1).collect()).unwrap();
        let Ok((s, t)) = fit_scale_shift(&rel, &anchor) else { return Ok(()) };
        let res: Vec<f64> = rel.values.iter().zip(&anchor.values).map(|(r, a)| s * r + t - a).collect();
        let scale: f64 = anchor.values.iter().map(|a| a.abs()).sum::<f64>() * 50.0;
        prop_assert!(res.iter().sum::<f64>().abs() <= 1e-7 * scale);
        prop_assert!(res.iter().zip(&rel.values).map(|(e, r)| e * r).sum::<f64>().abs() <= 1e-7 * scale * 50.0);
    }

    #[test]
    fn fusion_decision_survives_affine_reparameterization(
        pts in prop::collection::vec((0.5..50.0f64, -5.0..5.0f64), 10..40),
        a in 0.1..10.0f64,
        b in 0.0..20.0f64,
    ) {
        let rel = DepthGrid::from_values(1, pts.len(), pts.iter().map(|p| p.0).collect()).unwrap();
        let anchor = DepthGrid::from_values(1, pts.len(), pts.iter().map(|p| 1.5 * p.0 + 4.0 + p.1).collect()).unwrap();
        let rel2 = DepthGrid::from_values(1, pts.len(), rel.values.iter().map(|r| a * r + b).collect()).unwrap();
        let (Ok(x), Ok(y)) = (fuse_and_filter(&rel, &anchor, 0.9), fuse_and_filter(&rel2, &anchor, 0.9)) else { return Ok(()) };
        prop_assert!((x.pcc() - y.pcc()).abs() < 1e-12);
        prop_assert_eq!(x.is_accepted(), y.is_accepted());
        if let (
            triview_core::depthfusion::FusionOutcome::Accepted { fused: f1, .. },
            triview_core::depthfusion::FusionOutcome::Accepted { fused: f2, .. },
        ) = (&x, &y) {
            for (p, q) in f1.values.iter().zip(&f2.values) {
                prop_assert!((p - q).abs() < 1e-9 * (1.0 + p.abs()));
            }
        }
    }

    // align

    #[test]
    fn umeyama_recovers_similarity(src in cloud(12, 10.0), r in rotation(), t in vec3(50.0), s in 0.1..10.0f64) {
        let dst: Vec<_> = src.iter().map(|p| r * p * s + t).collect();
        let Ok(sim) = umeyama(&src, &dst, true) else { return Ok(()) };
        prop_assert!((sim.scale - s).abs() < 1e-8 * s);
        prop_assert!((sim.rotation - r).abs().max() < 1e-8);
        for (p, q) in src.iter().zip(&dst) {
            prop_assert!(close(&sim.apply(p), q, 1e-7 * (1.0 + q.amax())));
        }
    }

    #[test]
    fn scale_never_hurts_umeyama(src in cloud(10, 10.0), dst in cloud(10, 10.0)) {
        let residual = |sim: &Similarity| -> f64 { src.iter().zip(&dst).map(|(p, q)| (sim.apply(p) - q).norm_squared()).sum() };
        let (Ok(rigid), Ok(free)) = (umeyama(&src, &dst, false), umeyama(&src, &dst, true)) else { return Ok(()) };
        prop_assert!(residual(&free) <= residual(&rigid) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn rho_is_equivariant(samples in prop::collection::vec(((-50.0..50.0f64, -50.0..50.0f64), (0.0..256.0f64, 0.0..256.0f64)), 2..30), c in 0.01..100.0f64) {
        let Ok(rho) = estimate_rho(&samples, (128.0, 128.0)) else { return Ok(()) };
        let scaled: Vec<_> = samples.iter().map(|((x, y), uv)| ((x * c, y * c), *uv)).collect();
        let rc = estimate_rho(&scaled, (128.0, 128.0)).unwrap();
        prop_assert!((rc - c * rho).abs() <= 1e-12 * (c * rho).abs().max(1e-12) * 10.0);
    }

    #[test]
    fn registration_is_exact_without_noise(
        base in cloud(30, 10.0),
        sims in prop::collection::vec((rotation(), vec3(20.0), 0.2..5.0f64), 3),
        reference in 0usize..4,
    ) {
        // view 0 holds the base cloud; the others hold similar copies
        let mut views = vec![base.clone()];
        for (r, t, s) in &sims {
            views.push(base.iter().map(|p| r * p * *s + t).collect());
        }
        let maps: Vec<PointMap> = views
            .iter()
            .map(|pts| PointMap::new(1, pts.len(), pts.clone(), vec![true; pts.len()]).unwrap())
            .collect();
        // chain 0-1-2-3 plus one chord, all through pixel columns
        let mut pairs = Vec::new();
        for (a, b) in [(0usize, 1usize), (1, 2), (2, 3), (0, 3)] {
            for col in 0..base.len() {
                pairs.push(Correspondence { view_a: a, pixel_a: (0, col), view_b: b, pixel_b: (col as f64 + 0.5, 0.5) });
            }
        }
        let corr = CorrespondenceSet { pairs, source: CorrespondenceSource::GroundTruth };
        let Ok(out) = register_views(&maps, &[Projection::Orthographic; 4], &corr, reference) else { return Ok(()) };
        for col in 0..base.len() {
            let anchor = out[reference].apply(&views[reference][col]);
            for v in 0..4 {
                prop_assert!(close(&out[v].apply(&views[v][col]), &anchor, 1e-7 * (1.0 + anchor.amax())));
            }
        }
    }
}

#[test]
fn refinement_can_raise_raw_counts() {
    // a single shared coarse cell splits into two shared fine cells, so the
    // raw count is not monotone under refinement even on nested grids
    let pts = vec![Vector3::new(0.2, 0.2, 0.2), Vector3::new(1.2, 0.2, 0.2)];
    let coarse = overlap_score(&voxelize(&pts, 2.0).unwrap(), &voxelize(&pts, 2.0).unwrap()).unwrap();
    let fine = overlap_score(&voxelize(&pts, 1.0).unwrap(), &voxelize(&pts, 1.0).unwrap()).unwrap();
    assert_eq!((coarse, fine), (1, 2));
}

#[test]
fn rotation_helper_is_consistent() {
    let q = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(0.0, 1.0, 0.0)), 0.3);
    assert!((geodesic_angle(q.matrix(), &Matrix3::identity()) - 0.3).abs() < 1e-15);
}
