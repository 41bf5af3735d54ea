//! Throwaway phase-timing probe for the training hot path.

use std::time::Instant;

use denet::data::{gen_scene, SceneSpec};
use denet::graph::Graph;
use denet::losses::{total_loss, LossWeights};
use denet::network::{define_model, model_forward, NetworkConfig};
use denet::params::Bound;

fn main() {
    let cfg = NetworkConfig::default();
    let t0 = Instant::now();
    let params = define_model(&cfg);
    println!("define_model      {:>8.1} ms", t0.elapsed().as_secs_f64() * 1e3);

    let scene = gen_scene(&SceneSpec {
        seed: 7,
        ..SceneSpec::default()
    })
    .unwrap();
    let w = LossWeights::default();

    for round in 0..3 {
        let t = Instant::now();
        let mut g = Graph::new();
        let b = Bound::new(&mut g, &params);
        let t_bind = t.elapsed();

        let t = Instant::now();
        let x = g.leaf(&scene.image);
        let out = model_forward(&mut g, &b, &cfg, x).unwrap();
        let t_fwd = t.elapsed();

        let t = Instant::now();
        let ep = g.sigmoid(out.edge_logits);
        let mp = g.sigmoid(out.mask_logits);
        let lt = total_loss(&mut g, ep, &scene.edge, mp, &scene.mask, &w).unwrap();
        let t_loss = t.elapsed();

        let t = Instant::now();
        if round == 2 {
            g.backward_profiled(lt.total).unwrap();
        } else {
            g.backward(lt.total).unwrap();
        }
        let t_bwd = t.elapsed();

        let t = Instant::now();
        let mut n = 0usize;
        for (_, var) in b.iter() {
            n += g.grad(*var).numel();
        }
        let t_collect = t.elapsed();

        println!(
            "round {round}: bind {:>6.1} ms  fwd {:>7.1} ms  loss {:>5.1} ms  bwd {:>7.1} ms  collect {:>6.1} ms  ({} grads, {} nodes)",
            t_bind.as_secs_f64() * 1e3,
            t_fwd.as_secs_f64() * 1e3,
            t_loss.as_secs_f64() * 1e3,
            t_bwd.as_secs_f64() * 1e3,
            t_collect.as_secs_f64() * 1e3,
            n,
            g.len(),
        );
    }
}
