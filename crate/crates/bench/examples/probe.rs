//! Scratch driver for tuning acceptance bounds. Not part of the build.

use celab_bench::envs::{build_env, left_room_cells, EnvSpec, FAMILY_CONFUSION_ROOMS};
use celab_core::agents::{pretrain_peac, TrainConfig};
use celab_core::mdp::{occupancy, PolicyShape, TabularPolicy};

fn main() {
    let spec = EnvSpec::defaults(FAMILY_CONFUSION_ROOMS).unwrap();
    let set = build_env(&spec).unwrap();
    let left = left_room_cells(&spec);
    let gamma = 0.99;

    let uniform =
        TabularPolicy::uniform(PolicyShape::states_only(set.num_states()), set.num_actions());
    for e in 0..set.len() {
        let occ = occupancy(&set, e, &uniform, gamma).unwrap();
        let mass: f64 = left.iter().map(|&s| occ.probs()[s]).sum();
        println!("uniform e={e} left={mass:.4}");
    }

    for (actor, disc, entropy) in [(0.1, 0.5, 0.01), (0.05, 1.0, 0.02), (0.03, 1.0, 0.05)] {
        println!("--- actor={actor} disc={disc} entropy={entropy}");
        for seed in [11u64, 12, 13, 14, 15] {
            let config = TrainConfig {
                pretrain_steps: 20_000,
                gamma,
                seed,
                actor_rate: actor,
                discriminator_rate: disc,
                entropy_bonus: entropy,
                ..TrainConfig::default()
            };
            let t0 = std::time::Instant::now();
            let (agent, records) = pretrain_peac(&set, &config).unwrap();
            let dt = t0.elapsed();
            let last = records.last().unwrap();
            print!(
                "seed {seed}: {}ms ident {:+.4} |",
                dt.as_millis(),
                last.mean_identification.unwrap()
            );
            for e in 0..set.len() {
                for bucket in [set.len(), e] {
                    let slice = agent.state_policy_slice(0, bucket);
                    let occ = occupancy(&set, e, &slice, gamma).unwrap();
                    let mass: f64 = left.iter().map(|&s| occ.probs()[s]).sum();
                    print!(" e{e}/{} {mass:.3}", if bucket == set.len() { "unc" } else { "id" });
                }
            }
            println!();
        }
    }
}
