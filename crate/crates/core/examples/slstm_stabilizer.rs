//! Drives an sLSTM with gate pre-activations near 1000; the log-space
//! stabilizer keeps the hidden state finite where plain exponentials overflow.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stn::autodiff::Tape;
use stn::params::ParamStore;
use stn::recurrent::Slstm;
use stn::Tensor;

fn main() -> stn::Result<()> {
    let mut g = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    let (input, hidden) = (2, 4);
    let stack = Slstm::new(&mut store, "s", input, hidden, 2, 1, &mut g)?;
    // gate order z, i, f, o: push the input and forget gates to 1000
    let b = stack.layers[0].b;
    *store.get_mut(b) = Tensor::from_fn(&[4 * hidden], |k| if (hidden..3 * hidden).contains(&k) { 1000.0 } else { 0.0 });

    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let xs: Vec<_> = (0..8)
        .map(|t| tape.constant(Tensor::from_f64(&[1, input], &[(t as f64).sin(), 0.5]).unwrap()))
        .collect();
    for (t, h) in stack.sequence(&p, &xs)?.iter().enumerate() {
        let v: Vec<String> = h.value().data().iter().map(|x| format!("{x:+.4}")).collect();
        println!("t={t} h=[{}]", v.join(", "));
    }
    println!("exp(1000) in f64 = {}", 1000f64.exp());
    Ok(())
}
