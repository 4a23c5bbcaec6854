use celab_bench::envs::{build_env, left_room_cells, EnvSpec, FAMILY_CONFUSION_ROOMS};
use celab_core::agents::{pretrain_peac, TrainConfig};
use celab_core::mdp::{occupancy, PolicyShape, TabularPolicy};

fn main() {
    let spec = EnvSpec::defaults(FAMILY_CONFUSION_ROOMS).unwrap();
    let set = build_env(&spec).unwrap();
    let left = left_room_cells(&spec);
    let config = TrainConfig { pretrain_steps: 20_000, gamma: 0.99, seed: 12, ..TrainConfig::default() };
    let (agent, records) = pretrain_peac(&set, &config).unwrap();
    for r in records.iter().step_by(25) {
        println!("round {} ident {:+.4}", r.round, r.mean_identification.unwrap());
    }
    for e in 0..set.len() {
        let slice = agent.state_policy_slice(0, set.len());
        let occ = occupancy(&set, e, &slice, 0.99).unwrap();
        let mass: f64 = left.iter().map(|&s| occ.probs()[s]).sum();
        println!("e{e} uncertain left {mass:.3}");
    }
    let _ = (PolicyShape::states_only(1), TabularPolicy::uniform(PolicyShape::states_only(1), 1));
}
