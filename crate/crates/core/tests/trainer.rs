use plasticity_core::env::{Cell, EnvConfig, GridworldInstance, Grid, Pos, CENTER};
use plasticity_core::nn::NetworkSpec;
use plasticity_core::ppo::{Agent, NoHooks, PpoConfig, Trainer};
use plasticity_core::rng::{self, Stream};
use plasticity_core::shift::CellPermutation;

fn trivial_instance() -> (GridworldInstance, EnvConfig) {
    let config = EnvConfig {
        n_blue: 1,
        n_red: 0,
        wall_density: 0.0,
        ..EnvConfig::default()
    };
    let mut grid = Grid::empty();
    grid.set(Pos { row: CENTER.row, col: CENTER.col + 1 }, Cell::Blue);
    (GridworldInstance::from_layout(0, grid, &config), config)
}

fn agent(seed: u64) -> Agent {
    let ppo = PpoConfig::default();
    Agent::new(NetworkSpec::default(), ppo.adam(), &mut rng::stream(seed, 0, Stream::Init, 0)).unwrap()
}

#[test]
fn zero_iterations_change_nothing() {
    let (inst, _) = trivial_instance();
    let mut a = agent(1);
    let before = a.params.clone();
    let mut t = Trainer::new(PpoConfig::default(), 1, 0).unwrap();
    let out = t
        .train_round(&mut a, &[inst], &CellPermutation::identity(), 0, 0, &mut NoHooks)
        .unwrap();
    assert!(out.records.is_empty());
    assert_eq!(a.params, before);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let (inst, _) = trivial_instance();
    let run = || {
        let mut a = agent(7);
        let mut t = Trainer::new(PpoConfig::default(), 7, 0).unwrap();
        let out = t
            .train_round(&mut a, &[inst.clone()], &CellPermutation::identity(), 0, 256, &mut NoHooks)
            .unwrap();
        (out.records, out.episode_returns, a.params)
    };
    assert_eq!(run(), run());
}

#[test]
fn trivial_instance_is_solved_within_2000_iterations() {
    let (inst, _) = trivial_instance();
    // BFS shortest path from the start to the only jewel is one step, so the
    // optimal return is 1 collected within a single move.
    let dist = inst.grid().reachable_from(CENTER);
    assert!(dist[Pos { row: CENTER.row, col: CENTER.col + 1 }.index()]);
    let mut a = agent(3);
    let mut t = Trainer::new(PpoConfig::default(), 3, 0).unwrap();
    let out = t
        .train_round(&mut a, &[inst], &CellPermutation::identity(), 0, 2000, &mut NoHooks)
        .unwrap();
    let tail = &out.episode_returns[out.episode_returns.len() - 200..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let eps_per_epoch: Vec<usize> = out.records.iter().map(|r| r.episodes).collect();
    println!("tail mean {mean}, episodes per epoch {eps_per_epoch:?}");
    assert!(mean > 0.95, "tail mean return {mean}");
}
