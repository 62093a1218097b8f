//! Reverse-mode gradients and time derivatives against central finite
//! differences on random networks, masks and grids.

use imp_rg_core::nn::{
    forward_with_time_derivative, init_network, loss, loss_and_gradient, Activation, Mask,
    NetworkSpec, ParamState,
};
use imp_rg_core::tasks::{TaskBinding, TaskKind, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: usize = 100;
const COORDS_PER_CASE: usize = 12;
const GRAD_TOL: f64 = 1e-4;
const TANGENT_TOL: f64 = 1e-5;
/// Denominator floor so coordinates with near-zero gradient are judged on
/// absolute error instead of amplifying round-off.
const REL_FLOOR: f64 = 1e-6;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

struct Case {
    params: ParamState,
    mask: Mask,
    grid: TimeGrid,
    task: TaskBinding,
}

fn random_case(kind: TaskKind, rng: &mut ChaCha8Rng) -> Case {
    let activation = if rng.gen_bool(0.5) {
        Activation::Tanh
    } else {
        Activation::Sin
    };
    let hidden = vec![rng.gen_range(3..=12), rng.gen_range(3..=12)];
    let spec = NetworkSpec::new(1, hidden, kind.arity(), activation).unwrap();
    let mut params = init_network(&spec, rng.gen()).unwrap();
    for v in params.as_flat_mut() {
        *v *= rng.gen_range(0.5..2.0);
    }
    let keep = rng.gen_range(0.3..1.0);
    let bits = (0..spec.weight_count())
        .map(|_| rng.gen_bool(keep))
        .collect();
    let mask = Mask::from_bits(spec.layer_shapes(), bits).unwrap();
    let task = TaskBinding::for_kind(kind).with_constraint(rng.gen_bool(0.5));
    let k = rng.gen_range(3..=8);
    let mut times: Vec<f64> = (0..k).map(|_| rng.gen_range(task.t0..task.t_max)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    Case {
        params,
        mask,
        grid: TimeGrid::new(times).unwrap(),
        task,
    }
}

fn check_gradients(kind: TaskKind, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case_index in 0..CASES {
        let Case {
            params,
            mask,
            grid,
            task,
        } = random_case(kind, &mut rng);
        let params = params.masked(&mask).unwrap();
        let (_, grad) = loss_and_gradient(&params, &mask, &grid, &task).unwrap();

        // Masked coordinates carry no gradient at all.
        for (l, layout) in params.layouts().iter().enumerate() {
            for (j, &bit) in mask.layer_bits(l).iter().enumerate() {
                if !bit {
                    assert_eq!(grad[layout.weight_offset + j], 0.0);
                }
            }
        }

        let surviving: Vec<usize> = (0..params.len())
            .filter(|&i| match params.locate(i).unwrap() {
                imp_rg_core::nn::ParamIndex::Weight { layer, row, col } => {
                    let cols = params.layouts()[layer].inputs;
                    mask.layer_bits(layer)[row * cols + col]
                }
                imp_rg_core::nn::ParamIndex::Bias { .. } => true,
            })
            .collect();
        for _ in 0..COORDS_PER_CASE {
            let i = surviving[rng.gen_range(0..surviving.len())];
            let h = 1e-5 * params.as_flat()[i].abs().max(1.0);
            let mut plus = params.clone();
            plus.as_flat_mut()[i] += h;
            let mut minus = params.clone();
            minus.as_flat_mut()[i] -= h;
            let fd = (loss(&plus, &mask, &grid, &task).unwrap()
                - loss(&minus, &mask, &grid, &task).unwrap())
                / (2.0 * h);
            let e = rel_err(grad[i], fd);
            worst = worst.max(e);
            assert!(
                e <= GRAD_TOL,
                "case {case_index} coord {i}: analytic {} vs fd {fd} (rel {e:.2e})",
                grad[i]
            );
        }
    }
    eprintln!("{kind:?}: worst gradient rel err {worst:.2e}");
}

fn check_tangents(kind: TaskKind, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case_index in 0..CASES {
        let Case {
            params, mask, task, ..
        } = random_case(kind, &mut rng);
        let t = rng.gen_range(task.t0..task.t_max);
        let h = 1e-5;
        let (_, tangent) = forward_with_time_derivative(&params, &mask, t).unwrap();
        let (up, _) = forward_with_time_derivative(&params, &mask, t + h).unwrap();
        let (down, _) = forward_with_time_derivative(&params, &mask, t - h).unwrap();
        for o in 0..tangent.len() {
            let fd = (up[o] - down[o]) / (2.0 * h);
            let e = rel_err(tangent[o], fd);
            worst = worst.max(e);
            assert!(
                e <= TANGENT_TOL,
                "case {case_index} output {o}: {} vs fd {fd}",
                tangent[o]
            );
        }
    }
    eprintln!("{kind:?}: worst tangent rel err {worst:.2e}");
}

#[test]
fn nl_loss_gradient_matches_finite_differences() {
    check_gradients(TaskKind::NlOscillator, 11);
}

#[test]
fn hh_loss_gradient_matches_finite_differences() {
    check_gradients(TaskKind::HenonHeiles, 12);
}

#[test]
fn nl_time_derivative_matches_finite_differences() {
    check_tangents(TaskKind::NlOscillator, 21);
}

#[test]
fn hh_time_derivative_matches_finite_differences() {
    check_tangents(TaskKind::HenonHeiles, 22);
}
