//! Scratch: round-by-round identification on identical twins.
use celab_core::agents::{pretrain_peac, TrainConfig};
use celab_core::mdp::{Embodiment, EmbodimentSet, TransitionKernel};

fn main() {
    let kernel =
        TransitionKernel::new(2, 2, vec![0.8, 0.2, 0.3, 0.7, 0.4, 0.6, 0.9, 0.1]).unwrap();
    let set = EmbodimentSet::with_uniform_prior(
        vec![Embodiment::direct("a", kernel.clone()), Embodiment::direct("b", kernel)],
        vec![0.5, 0.5],
    )
    .unwrap();
    let config = TrainConfig {
        pretrain_steps: 6000,
        finetune_steps: 600,
        seed: 7,
        entropy_bonus: 0.05,
        ..TrainConfig::default()
    };
    let (_, records) = pretrain_peac(&set, &config).unwrap();
    for r in &records {
        println!("round {:3} ident {:+.4}", r.round, r.mean_identification.unwrap());
    }
}
