//! Unit vectors, tangent projection and geodesic motion on the sphere.

use sphere_ood::sphere::{geodesic_step, project_tangent};
use sphere_ood::{normalize, Result};

fn main() -> Result<()> {
    let z = normalize(&[3.0, 0.0, 4.0])?;
    println!("z = {:?}", z.as_slice());

    // Remove the radial part of an arbitrary direction.
    let q = project_tangent(&[1.0, 1.0, 1.0], &z);
    println!("tangent q = {:?}, <q, z> = {:.2e}", q.as_slice(), sphere_ood::sphere::dot(q.as_slice(), z.as_slice()));

    let (mut pos, mut mom) = (z.clone(), q.clone());
    for step in 1..=5 {
        (pos, mom) = geodesic_step(&pos, &mom, 0.2);
        println!(
            "step {step}: angle from start {:.4} rad, |z| - 1 = {:.1e}, speed {:.6}",
            pos.angle(&z),
            sphere_ood::sphere::norm(pos.as_slice()) - 1.0,
            mom.norm()
        );
    }
    Ok(())
}
