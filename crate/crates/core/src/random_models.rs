//! Random transient models for property tests and benchmarks.

use rand::Rng;

use crate::mdp::{MdpBuilder, TransientMdp};

/// A model with `n_states` states, the last absorbing, and between one and
/// `max_controls` controls per effective state. Every row of every
/// effective state sends at least `min_absorption` mass to the absorbing
/// state, so every policy is transient under the expectation. Costs are
/// drawn uniformly from `cost_range`.
pub fn random_transient_model<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    max_controls: usize,
    min_absorption: f64,
    cost_range: (f64, f64),
) -> TransientMdp {
    assert!(n_states >= 2 && max_controls >= 1);
    assert!((0.0..=1.0).contains(&min_absorption) && cost_range.0 <= cost_range.1);
    let a = n_states - 1;
    let mut b = MdpBuilder::with_indexed_states(n_states, a);
    for x in 0..a {
        for _ in 0..rng.gen_range(1..=max_controls) {
            let u = b.add_control(x, format!("u{}", b.control_count(x)));
            let raw: Vec<f64> = (0..n_states).map(|_| if rng.gen_bool(0.7) { rng.gen::<f64>() } else { 0.0 }).collect();
            let total: f64 = raw.iter().sum();
            let mut row = vec![0.0; n_states];
            let free = 1.0 - min_absorption;
            if total > 0.0 {
                for (r, v) in row.iter_mut().zip(&raw) {
                    *r = free * v / total;
                }
            } else {
                row[a] = free;
            }
            row[a] += min_absorption;
            b.set_row(x, u, &row);
            for y in 0..n_states {
                let c = if cost_range.0 == cost_range.1 { cost_range.0 } else { rng.gen_range(cost_range.0..cost_range.1) };
                b.set_cost(x, u, y, c);
            }
        }
    }
    b.add_absorbing_loop("stay");
    b.build().expect("generated model is valid")
}

#[cfg(test)]
mod tests {
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn generated_models_are_valid_and_leak() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let m = random_transient_model(&mut rng, 4, 3, 0.2, (0.0, 1.0));
            assert!(m.validate().is_empty());
            for &x in m.effective_states() {
                for u in 0..m.n_controls(x) {
                    assert!(m.kernel_row(x, u)[m.absorbing()] >= 0.2 - 1e-12);
                    assert!(m.cost_row(x, u).iter().all(|c| (0.0..1.0).contains(c)));
                }
            }
        }
    }
}
