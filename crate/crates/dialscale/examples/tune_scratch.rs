// scratch: sweep init scale x lr on planted-topic data
use dialscale::corpus::Session;
use dialscale::pairgen::{Negative, NegativeKind, TrainingInstance};
use dialscale::train::{train, OptimizerKind, TrainConfig};

fn planted(n: usize) -> Vec<TrainingInstance> {
    (0..n)
        .map(|i| {
            let topic = format!("topic{i}");
            let negs: Vec<Session> = (0..3)
                .map(|k| {
                    let o = (i + k + 1) % n;
                    Session::new(
                        format!("s{i}#n{k}"),
                        &[format!("topic{o} reply"), format!("topic{o} more")],
                    )
                    .unwrap()
                })
                .collect();
            TrainingInstance {
                query: Session::new(
                    format!("s{i}#q"),
                    &[format!("{topic} question"), format!("{topic} detail")],
                )
                .unwrap(),
                positive: Session::new(
                    format!("s{i}#c"),
                    &[format!("{topic} reply"), format!("{topic} more")],
                )
                .unwrap(),
                negatives: negs
                    .into_iter()
                    .map(|s| Negative { session: s, kind: NegativeKind::Easy })
                    .collect(),
                source_id: format!("s{i}"),
                split_point: 2,
            }
        })
        .collect()
}

fn main() {
    let instances = planted(64);
    for lr in [0.01, 0.05, 0.1, 0.3, 0.5, 1.0] {
        for opt in ["sgd", "adam"] {
            let cfg = TrainConfig {
                epochs: 5,
                batch_size: 16,
                lr,
                optimizer: if opt == "sgd" {
                    OptimizerKind::default()
                } else {
                    OptimizerKind::adam()
                },
                seed: 7,
                val_fraction: 0.2,
                hash_bits: 12,
                d_out: 32,
                use_in_batch: true,
            };
            match train(&instances, &cfg) {
                Ok((_, rep)) => println!(
                    "lr={lr:<5} {opt:<4} loss {:.4} -> {:.4}  val recall {:?} best_ep {}",
                    rep.epoch_loss[0],
                    rep.epoch_loss.last().unwrap(),
                    rep.val_recall_at_1
                        .iter()
                        .map(|v| format!("{v:.2}"))
                        .collect::<Vec<_>>(),
                    rep.best_epoch
                ),
                Err(e) => println!("lr={lr:<5} {opt:<4} ERROR {e}"),
            }
        }
    }
}
