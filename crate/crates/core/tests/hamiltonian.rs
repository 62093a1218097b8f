//! Equations of motion agree with Hamilton's equations obtained by
//! differentiating the Hamiltonian numerically.

use imp_rg_core::tasks::{
    hh_equations_of_motion, hh_hamiltonian, nl_equations_of_motion, nl_hamiltonian, TaskBinding,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STATES: usize = 100;
const TOL: f64 = 1e-6;

fn close(analytic: f64, fd: f64) -> bool {
    (analytic - fd).abs() <= TOL * analytic.abs().max(fd.abs()).max(1.0)
}

/// Central difference of `f` along coordinate `i` of `state`.
fn partial(f: impl Fn(&[f64]) -> f64, state: &[f64], i: usize) -> f64 {
    let h = 1e-6;
    let mut up = state.to_vec();
    let mut down = state.to_vec();
    up[i] += h;
    down[i] -= h;
    (f(&up) - f(&down)) / (2.0 * h)
}

#[test]
fn nl_flow_is_hamiltonian() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = |s: &[f64]| nl_hamiltonian(s[0], s[1]);
    for _ in 0..STATES {
        let s = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let (xdot, pdot) = nl_equations_of_motion(s[0], s[1]);
        assert!(close(xdot, partial(h, &s, 1)), "ẋ at {s:?}");
        assert!(close(pdot, -partial(h, &s, 0)), "ṗ at {s:?}");
    }
}

#[test]
fn hh_flow_is_hamiltonian() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = |s: &[f64]| hh_hamiltonian(s[0], s[1], s[2], s[3]);
    for _ in 0..STATES {
        let s: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (xdot, ydot, pxdot, pydot) = hh_equations_of_motion(s[0], s[1], s[2], s[3]);
        assert!(close(xdot, partial(h, &s, 2)), "ẋ at {s:?}");
        assert!(close(ydot, partial(h, &s, 3)), "ẏ at {s:?}");
        assert!(close(pxdot, -partial(h, &s, 0)), "ṗx at {s:?}");
        assert!(close(pydot, -partial(h, &s, 1)), "ṗy at {s:?}");
    }
}

#[test]
fn bindings_route_to_the_same_flow() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for task in [TaskBinding::nl_oscillator(), TaskBinding::henon_heiles()] {
        for _ in 0..STATES {
            let s: Vec<f64> = (0..task.arity())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let mut flow = vec![0.0; task.arity()];
            task.equations_of_motion(&s, &mut flow);
            let half = task.arity() / 2;
            for i in 0..half {
                let h = |v: &[f64]| task.hamiltonian(v);
                assert!(close(flow[i], partial(h, &s, half + i)));
                assert!(close(flow[half + i], -partial(h, &s, i)));
            }
        }
    }
}
