use hoirecon::geometry::{project, CameraIntrinsics, Pixel, SE3Pose, Vec3};
use hoirecon::pose::{ransac_pnp, Correspondence, RansacConfig};
use hoirecon::synth::derive_seed;
use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let intr = CameraIntrinsics::centered(256.0, 256, 256);
    let mut fails = Vec::new();
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(6000, trial));
        let pose = SE3Pose::new(
            UnitQuaternion::from_euler_angles(
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
            ),
            Vec3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(0.9..1.2),
            ),
        );
        let mut corrs = Vec::with_capacity(100);
        for _ in 0..100 {
            let p = Vec3::new(
                rng.random_range(-0.25..0.25),
                rng.random_range(-0.25..0.25),
                rng.random_range(-0.25..0.25),
            );
            let Ok((mut px, _)) = project(&intr, &pose, &p) else { continue };
            if rng.random_range(0.0..1.0) < 0.3 {
                px = Pixel::new(rng.random_range(0.0..256.0), rng.random_range(0.0..256.0));
            } else {
                px.x += rng.random_range(-1.0..1.0);
                px.y += rng.random_range(-1.0..1.0);
            }
            corrs.push(Correspondence { point: p, pixel: px, frame: 0 });
        }
        let cfg = RansacConfig { seed: derive_seed(6100, trial), ..Default::default() };
        match ransac_pnp(&corrs, &intr, &cfg) {
            Ok((sol, inl)) => {
                let rot = sol.pose.rotation.angle_to(&pose.rotation).to_degrees();
                let trans = (sol.pose.translation - pose.translation).norm();
                if rot >= 0.5 || trans >= 0.005 {
                    fails.push((trial, rot, trans, inl.len(), corrs.len()));
                }
            }
            Err(e) => println!("trial {trial}: {e}"),
        }
    }
    println!("{} failures", fails.len());
    for (t, r, tr, ninl, ncor) in fails {
        println!("  trial {t}: rot {r:.3} deg, trans {:.2} mm, inliers {ninl}/{ncor}", tr*1000.0);
    }
}
