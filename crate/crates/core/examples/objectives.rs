//! Prototype-based losses on hand-made embeddings.

use sphere_ood::objectives::{
    cider_losses, combined_objective, ood_discernment_grad, ood_discernment_loss, Temperature, DEFAULT_LAMBDA_D,
};
use sphere_ood::{normalize, Result, UnitVector};

fn main() -> Result<()> {
    let protos: Vec<UnitVector> = (0..3).map(|i| UnitVector::basis(3, i)).collect();
    let tau = Temperature::from_kappa(2.0)?;
    println!("temperature {}", tau.tau());

    let between = normalize(&[1.0, 1.0, 0.0])?;
    let center = normalize(&[1.0, 1.0, 1.0])?;
    let near_class = normalize(&[1.0, 0.1, 0.0])?;
    let floor = -(3.0f64).ln();
    for (name, z) in [("between 0 and 1", &between), ("equidistant", &center), ("near class 0", &near_class)] {
        let loss = ood_discernment_loss(std::slice::from_ref(z), &protos, tau)?;
        let grad = ood_discernment_grad(std::slice::from_ref(z), &protos, tau)?;
        println!("{name:>16}: discernment loss {loss:.4} (uniform value {floor:.4}), gradient {:?}", grad[0]);
    }

    let id = vec![(near_class.clone(), 0), (normalize(&[0.0, 1.0, 0.2])?, 1), (normalize(&[0.1, 0.0, 1.0])?, 2)];
    let (disp, comp) = cider_losses(&id, &protos, tau)?;
    let ood = ood_discernment_loss(&[between, center], &protos, tau)?;
    println!("dispersion {disp:.4}, compactness {comp:.4}");
    println!("combined {:.4}", combined_objective(0.0, disp + 0.5 * comp, ood, DEFAULT_LAMBDA_D));
    Ok(())
}
