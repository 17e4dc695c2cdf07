//! Seeded property checks across module boundaries.

use proptest::prelude::*;
use trifocal_core::geometry::{
    decompose_essential, essential_from_pose, lift, rotation_error_deg, sampson_error, translation_angle_error_deg,
    ImagePoint, WorldPoint,
};
use trifocal_core::predictor::{PredictorWeights, ARCHITECTURE, FORMAT_VERSION};
use trifocal_core::solvers::{solve_5pt, solve_6pt, solve_p3p};
use trifocal_core::synth::{generate_scene, make_triplet_instance, rng_for, Instance, InstanceConfig, Scene, SceneConfig};
use trifocal_core::triplet_solver::TripletSolver;

fn scene() -> &'static Scene {
    static SCENE: std::sync::OnceLock<Scene> = std::sync::OnceLock::new();
    SCENE.get_or_init(|| generate_scene(&SceneConfig { n_points: 2000, seed: 17, ..Default::default() }).unwrap())
}

fn instance(seed: u64, n: usize, focal_px: Option<f64>) -> Instance {
    let cfg = InstanceConfig { n_correspondences: Some(n), focal_px, ..Default::default() };
    make_triplet_instance(scene(), &cfg, &mut rng_for(seed, 0)).unwrap()
}

fn pairs<const N: usize>(inst: &Instance, view: usize) -> [(ImagePoint, ImagePoint); N] {
    std::array::from_fn(|k| (inst.tracks[k][0], inst.tracks[k][view]))
}

fn angle(a: &nalgebra::Vector3<f64>, b: &nalgebra::Vector3<f64>) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projected_pairs_have_zero_residual(seed in any::<u64>()) {
        let inst = instance(seed, 30, None);
        let (e12, e13) = (essential_from_pose(&inst.gt.pose12), essential_from_pose(&inst.gt.pose13));
        for t in &inst.tracks {
            prop_assert!(sampson_error(&e12, &t[0], &t[1]) <= 1e-10);
            prop_assert!(sampson_error(&e13, &t[0], &t[2]) <= 1e-10);
        }
    }

    #[test]
    fn decomposition_inverts_composition(seed in any::<u64>()) {
        let inst = instance(seed, 5, None);
        let supports: [(ImagePoint, ImagePoint); 5] = pairs(&inst, 1);
        let gt = inst.gt.pose12;
        let p = decompose_essential(&essential_from_pose(&gt), &supports).unwrap();
        prop_assert!(rotation_error_deg(&p.rotation, &gt.rotation) <= 1e-8_f64.to_degrees());
        prop_assert!(translation_angle_error_deg(&p.t(), &gt.t()) <= 1e-8_f64.to_degrees());
    }

    #[test]
    fn minimal_solvers_respect_candidate_bounds(seed in any::<u64>()) {
        let inst = instance(seed, 6, None);
        let five: [(ImagePoint, ImagePoint); 5] = pairs(&inst, 1);
        prop_assert!(solve_5pt(&five).map_or(0, |c| c.len()) <= 10);

        let finst = instance(seed, 6, Some(1000.0));
        let six: [(ImagePoint, ImagePoint); 6] = pairs(&finst, 1);
        prop_assert!(solve_6pt(&six).map_or(0, |c| c.len()) <= 15);

        // Grunert: camera-frame angles between the world points match the bearing angles
        let world: [WorldPoint; 3] = std::array::from_fn(|k| inst.cameras[0].to_camera(&scene().points[inst.point_ids[k]]));
        let image: [ImagePoint; 3] = std::array::from_fn(|k| inst.tracks[k][2]);
        let poses = solve_p3p(&world, &image).unwrap_or_default();
        prop_assert!(poses.len() <= 4);
        for p in &poses {
            let cam: [_; 3] = std::array::from_fn(|k| p.transform(&world[k]).coords);
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                let d = (angle(&cam[i], &cam[j]) - angle(&lift(&image[i]), &lift(&image[j]))).abs();
                prop_assert!(d <= 1e-10, "pair ({i},{j}) off by {d:e}");
            }
        }
    }

    #[test]
    fn pipelines_are_deterministic_and_delta_widens(seed in any::<u64>()) {
        for (base, delta, focal) in [("4p3v-m", "4p3v-md", None), ("4p3vf-m", "4p3vf-md", Some(900.0))] {
            let inst = instance(seed, 4, focal);
            let b = TripletSolver::new(base.parse().unwrap(), None).unwrap();
            let d = TripletSolver::new(delta.parse().unwrap(), None).unwrap();
            let hb = b.solve(&inst.tracks).unwrap_or_default();
            let hd = d.solve(&inst.tracks).unwrap_or_default();
            prop_assert_eq!(format!("{hb:?}"), format!("{:?}", b.solve(&inst.tracks).unwrap_or_default()));
            prop_assert!(hd.len() >= hb.len());
            prop_assert!(hb.iter().chain(&hd).all(|h| h.focal.is_some() == focal.is_some()));
        }
        let inst = instance(seed, 6, None);
        for name in ["5pt+p3p", "6pt+p3p"] {
            let s = TripletSolver::new(name.parse().unwrap(), None).unwrap();
            let h = s.solve(&inst.tracks[..s.sample_size()]).unwrap_or_default();
            prop_assert!(h.iter().all(|h| h.focal.is_some() == (name == "6pt+p3p")));
        }
    }

    #[test]
    fn generators_are_pure_functions_of_seed(seed in any::<u64>()) {
        let a = instance(seed, 20, Some(800.0));
        let b = instance(seed, 20, Some(800.0));
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}

#[test]
fn scenes_are_bitwise_reproducible() {
    let cfg = SceneConfig { n_points: 500, seed: 3, ..Default::default() };
    assert_eq!(generate_scene(&cfg).unwrap().points, generate_scene(&cfg).unwrap().points);
}

/// Builds the weights file by hand from the documented layout and checks the
/// runtime agrees byte for byte.
#[test]
fn weights_file_matches_documented_layout() {
    let value = |l: usize, r: usize, c: usize| (l as f64) + 0.01 * r as f64 - 0.0001 * c as f64;
    let weights = PredictorWeights::from_fn(value);

    let mut expected = b"TFPW".to_vec();
    expected.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    expected.extend_from_slice(&(2 * ARCHITECTURE.len() as u32).to_le_bytes());
    let tensor = |out: &mut Vec<u8>, name: String, rows: usize, cols: usize, v: &dyn Fn(usize, usize) -> f64| {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for r in 0..rows {
            for c in 0..cols {
                out.extend_from_slice(&v(r, c).to_le_bytes());
            }
        }
    };
    for (l, &(name, fan_in, out)) in ARCHITECTURE.iter().enumerate() {
        tensor(&mut expected, format!("{name}.weight"), out, fan_in, &|r, c| value(l, r, c));
        tensor(&mut expected, format!("{name}.bias"), out, 1, &|r, _| value(l, r, fan_in));
    }
    assert_eq!(weights.to_bytes(), expected);
    assert_eq!(PredictorWeights::from_bytes(&expected).unwrap(), weights);
}
