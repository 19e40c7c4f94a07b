//! Compares tape gradients of every variant against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stn::gradcheck::grad_check_sampled;
use stn::model::{build_model, loss_l2, Mode, ModelConfig, Variant};
use stn::params::Bound;
use stn::Tensor;

fn main() -> stn::Result<()> {
    let mut g = ChaCha8Rng::seed_from_u64(3);
    for variant in Variant::ALL {
        let mut cfg = ModelConfig::new(variant, 8, 1, 2, 1, 2);
        cfg.radius = 2;
        cfg.steps = 3;
        let model = build_model::<f64>(&cfg, 3)?;
        let shape = model.window_shape(2);
        let windows = Tensor::from_fn(&shape, |_| g.gen_range(-1.5..1.5));
        let targets = Tensor::from_fn(&[2, 1], |_| g.gen_range(-1.0..1.0));
        let point: Vec<(&str, Tensor<f64>)> = model.params.iter().map(|p| (p.name.as_str(), p.value.clone())).collect();
        let report = grad_check_sampled(
            |_, vars| {
                let out = model.forward(&Bound::from_vars(vars.to_vec()), &windows, Mode::Train)?;
                loss_l2(&out.prediction, &targets)
            },
            &point,
            1e-5,
            16,
        )?;
        println!(
            "{:<14} {:>5} coords  max rel error {:.2e} at {}",
            variant.to_string(),
            report.coords_checked,
            report.max_rel_error,
            report.worst
        );
    }
    Ok(())
}
