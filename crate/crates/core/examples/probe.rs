use lpcft::featurecodec::CodecConfig;
use lpcft::pcdata::{synth_dataset, SceneParams};
use lpcft::pipeline::ModelConfig;
use lpcft::trainer::*;

fn main() {
    let n: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(40);
    let epochs: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(20);
    let model = ModelConfig { codec: CodecConfig { hidden_dims: vec![16, 32, 64], ..CodecConfig::default() }, ..ModelConfig::default() }.normalized();
    let data = synth_dataset(1000, n, &SceneParams::default()).unwrap();
    let t = std::time::Instant::now();
    let out = pretrain(&data, &model, &TrainConfig { epochs, ..TrainConfig::pretrain() }).unwrap();
    for l in &out.log { println!("{} loss {:.4} cd {:.4} lr {}", l.epoch, l.mean_loss, l.mean_cd, l.lr); }
    println!("ratio {:.3} in {:?}", out.log.last().unwrap().mean_cd / out.log[0].mean_cd, t.elapsed());
}
