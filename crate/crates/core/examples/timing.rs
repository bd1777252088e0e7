//! Wall-clock cost of encoding one dense scan and of a forward and a
//! forward+backward pass per topology. Run with `--release`.

use std::time::{Duration, Instant};

use groundseg::encoder::LabelGrid;
use groundseg::synth::{generate_frame, SensorModel};
use groundseg::nn::frame_tensor;
use groundseg::{build_topology, encode_normalized, EncoderConfig, Topology};

fn median(mut f: impl FnMut(), runs: usize) -> Duration {
    let mut t: Vec<Duration> = (0..runs)
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed()
        })
        .collect();
    t.sort();
    t[runs / 2]
}

fn main() {
    let scan = generate_frame(1, &SensorModel::hdl64(0.16));
    let cfg = EncoderConfig::default();
    let encode = median(|| drop(encode_normalized(&scan.cloud, &cfg).unwrap()), 9);
    println!("encode {} points: {:.1} ms", scan.cloud.len(), encode.as_secs_f64() * 1e3);

    let (frame, _) = encode_normalized(&scan.cloud, &cfg).unwrap();
    let input = frame_tensor(&frame).unwrap();
    let (rows, cols) = (frame.rows, frame.cols);
    let target = LabelGrid { rows, cols, ground: (0..rows * cols).map(|i| i % 3 == 0).collect(), mask: frame.occupancy.clone() };
    for t in Topology::ALL {
        let net = build_topology(t, 1);
        let fwd = median(|| drop(net.logits(&input).unwrap()), 3);
        let both = median(|| drop(net.loss_and_grad(&input, &[&target]).unwrap()), 3);
        println!("{:<24} forward {:>7.1} ms   forward+backward {:>7.1} ms", t.name(), fwd.as_secs_f64() * 1e3, both.as_secs_f64() * 1e3);
    }
}
