use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use plasticity_core::diagnostics::{
    dead_unit_fraction, dead_unit_mask, evaluate, evaluate_test, normalized_reward, snapshot,
    weight_diff, Policy,
};
use plasticity_core::env::{
    Action, Cell, EnvConfig, Grid, GridworldInstance, Pos, CENTER, GRID_SIZE, N_CHANNELS, OBS_LEN,
};
use plasticity_core::nn::{forward, NetworkSpec, NnError, Tensor};
use plasticity_core::shift::CellPermutation;
use plasticity_core::stats::{glm_gaussian, pearson_r, welch_t_test, Design};

fn tiny_spec() -> NetworkSpec {
    NetworkSpec {
        input_dim: 3,
        hidden_dims: vec![2],
        n_actions: 2,
        ..NetworkSpec::default()
    }
}

#[test]
fn zero_weight_units_follow_their_bias() {
    let spec = tiny_spec();
    let mut p = spec.init_params(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    p.get_mut("hidden0.weight").unwrap().current = Tensor::zeros(&[3, 2]);
    p.get_mut("hidden0.bias").unwrap().current = Tensor::new(vec![2], vec![-1.0, 1.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::new(vec![50, 3], (0..150).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
    let mask = dead_unit_mask(&forward(&spec, &p, &x).unwrap().trace);
    assert_eq!(mask, vec![vec![true, false]]);
    assert_eq!(dead_unit_fraction(&spec, &p, &x).unwrap(), 0.5);
}

#[test]
fn dead_units_match_brute_force_scan() {
    let spec = NetworkSpec {
        input_dim: 20,
        hidden_dims: vec![32, 16],
        n_actions: 4,
        ..NetworkSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut p = spec.init_params(&mut rng).unwrap();
    // push some biases far negative so a few units die
    for b in p.get_mut("hidden0.bias").unwrap().current.data_mut().iter_mut().step_by(5) {
        *b = -4.0;
    }
    let x = Tensor::new(vec![256, 20], (0..256 * 20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let trace = forward(&spec, &p, &x).unwrap().trace;
    let mask = dead_unit_mask(&trace);
    let mut dead = 0;
    let mut total = 0;
    for (layer, m) in trace.layers.iter().zip(&mask) {
        for j in 0..layer.cols() {
            let mut alive = false;
            for i in 0..layer.rows() {
                if layer.row(i)[j] > 0.0 {
                    alive = true;
                }
            }
            assert_eq!(m[j], !alive);
            dead += usize::from(!alive);
            total += 1;
        }
    }
    assert!(dead > 0);
    assert_eq!(dead_unit_fraction(&spec, &p, &x).unwrap(), dead as f64 / total as f64);
}

#[test]
fn unchanged_weights_have_zero_difference() {
    let spec = tiny_spec();
    let p = spec.init_params(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(weight_diff(&p, &snapshot(&p)), 0.0);
}

#[test]
fn normalized_reward_subtracts_first_round() {
    let n = normalized_reward(&[5.0, 4.6, 4.2]);
    assert_eq!(n[0], 0.0);
    assert!((n[2] + 0.8).abs() < 1e-12);
    assert_eq!(normalized_reward(&[3.0; 4]), vec![0.0; 4]);
}

fn empty_instance() -> GridworldInstance {
    let config = EnvConfig::default();
    GridworldInstance::from_layout(0, Grid::empty(), &config)
}

struct UniformPolicy;

impl Policy for UniformPolicy {
    fn actions<R: Rng + ?Sized>(
        &mut self,
        obs: &Tensor,
        _envs: &[&GridworldInstance],
        rng: &mut R,
    ) -> Result<Vec<usize>, NnError> {
        Ok((0..obs.rows()).map(|_| rng.random_range(0..4)).collect())
    }
}

#[test]
fn random_policy_on_jewelless_instance_scores_zero() {
    let r = evaluate(
        &mut UniformPolicy,
        &[empty_instance()],
        &CellPermutation::identity(),
        20,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert_eq!(r, 0.0);
}

#[test]
fn evaluation_is_deterministic_given_seed() {
    let spec = NetworkSpec::default();
    let p = spec.init_params(&mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let config = EnvConfig::default();
    let insts: Vec<_> = (0..5).map(|s| GridworldInstance::sample(s, &config)).collect();
    let perm = CellPermutation::random(&mut ChaCha8Rng::seed_from_u64(5));
    let run = || evaluate_test(&spec, &p, &insts, &perm, 12, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    assert_eq!(run().to_bits(), run().to_bits());
}

/// Distance map from `from` over non-wall cells that avoids red jewels.
fn bfs_first_step(grid: &Grid, from: Pos) -> Option<Action> {
    let mut prev: Vec<Option<(Pos, Action)>> = vec![None; GRID_SIZE * GRID_SIZE];
    let mut seen = vec![false; GRID_SIZE * GRID_SIZE];
    seen[from.index()] = true;
    let mut q = VecDeque::from([from]);
    while let Some(p) = q.pop_front() {
        if grid.get(p) == Cell::Blue {
            let mut cur = p;
            loop {
                let (parent, a) = prev[cur.index()].unwrap();
                if parent == from {
                    return Some(a);
                }
                cur = parent;
            }
        }
        for a in Action::ALL {
            if let Some(n) = p.moved(a) {
                if !seen[n.index()] && !matches!(grid.get(n), Cell::Wall | Cell::Red) {
                    seen[n.index()] = true;
                    prev[n.index()] = Some((p, a));
                    q.push_back(n);
                }
            }
        }
    }
    None
}

struct Planner;

impl Policy for Planner {
    fn actions<R: Rng + ?Sized>(
        &mut self,
        _obs: &Tensor,
        envs: &[&GridworldInstance],
        _rng: &mut R,
    ) -> Result<Vec<usize>, NnError> {
        Ok(envs
            .iter()
            .map(|e| {
                let a = bfs_first_step(e.grid(), e.agent()).unwrap_or(Action::Up);
                Action::ALL.iter().position(|&x| x == a).unwrap()
            })
            .collect())
    }
}

#[test]
fn scripted_planner_reaches_optimal_return() {
    let layout = "\
        ...........\n\
        .B.........\n\
        ...#####...\n\
        ...#...#...\n\
        ...#.R.#...\n\
        .....A.....\n\
        ...........\n\
        ...........\n\
        ..R....B...\n\
        ...........\n\
        ..........B\n";
    let (grid, _) = Grid::from_ascii(layout).unwrap();
    let config = EnvConfig::default();
    let inst = GridworldInstance::from_layout(0, grid.clone(), &config);
    // the optimal return collects every reachable blue jewel and no red one
    let reach = grid.reachable_from(CENTER);
    let optimal = grid
        .cells()
        .iter()
        .enumerate()
        .filter(|&(i, &c)| c == Cell::Blue && reach[i])
        .count() as f64;
    assert_eq!(optimal, 3.0);
    let r = evaluate(&mut Planner, &[inst], &CellPermutation::identity(), 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(r, optimal);
}

#[test]
fn permutations_preserve_channel_totals_and_invert() {
    let config = EnvConfig::default();
    let obs = GridworldInstance::sample(11, &config).observation();
    assert_eq!(CellPermutation::identity().apply(&obs), obs);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let perm = CellPermutation::random(&mut rng);
        let moved = perm.apply(&obs);
        for ch in 0..N_CHANNELS {
            let total = |v: &[f64]| (0..OBS_LEN / N_CHANNELS).map(|c| v[c * N_CHANNELS + ch]).sum::<f64>();
            assert_eq!(total(&moved), total(&obs));
        }
        assert_eq!(perm.inverse().apply(&moved), obs);
    }
}

#[test]
fn welch_textbook_example() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [2.0, 3.0, 4.0, 5.0, 6.0];
    let t = welch_t_test(&a, &b).unwrap();
    // equal variances 2.5 and sizes 5: t = -1 / sqrt(0.5 + 0.5), df = 8
    assert!((t.t + 1.0).abs() < 1e-12);
    assert!((t.df - 8.0).abs() < 1e-12);
    let p = 2.0 * StudentsT::new(0.0, 1.0, 8.0).unwrap().cdf(-1.0);
    assert!((t.p_two_sided - p).abs() < 1e-10);
}

#[test]
fn pearson_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
    let mx = x.iter().sum::<f64>() / 10.0;
    let my = y.iter().sum::<f64>() / 10.0;
    let num: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() * y.iter().map(|b| (b - my).powi(2)).sum::<f64>()).sqrt();
    assert!((pearson_r(&x, &y).unwrap().r - num / den).abs() < 1e-12);
}

#[test]
fn glm_recovers_exact_proportional_line() {
    let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let fit = glm_gaussian(&Design::with_intercept(&[("x", &x)]).unwrap(), &y).unwrap();
    let c = fit.names.iter().position(|n| n == "const").unwrap();
    let s = fit.names.iter().position(|n| n == "x").unwrap();
    assert!((fit.coef[s] - 2.0).abs() < 1e-12);
    assert!(fit.coef[c].abs() < 1e-12);
    assert!(fit.deviance < 1e-20);
}
