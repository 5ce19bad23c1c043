//! The reverse-mode tape and the fixed architecture: GCN embeddings, a
//! finite-difference spot check, Gumbel-softmax sampling laws, and the
//! squashed-Gaussian power head.
//!
//! Run with `cargo run --release --example autodiff_playground`.

use hexfleet::neural::{
    chi2_quantile_99, chi2_statistic, full_gradient_check, gcn_forward, gumbel_argmax_counts,
    leaf_gcn, mat_to_tensor, power_density_integral, softmax, ParameterSet, Tape, TensorData,
};
use hexfleet::hexgrid::{build_grid, graph_matrices};
use hexfleet::linalg::Mat;

fn main() {
    // a tiny graph convolution with input gradients
    let grid = build_grid(3, 3, 0.8, 0, 0, None).unwrap();
    let gm = graph_matrices(&grid);
    let params = ParameterSet::new(grid.len(), 4, 0, 8, 1);
    let phi = Mat { rows: grid.len(), cols: 4, data: (0..grid.len() * 4).map(|i| (i % 5) as f64 * 0.1).collect() };

    let mut tape = Tape::new();
    let a = tape.leaf(mat_to_tensor(&gm.a_hat));
    let x = tape.leaf(mat_to_tensor(&phi));
    let gcn = leaf_gcn(&mut tape, &params);
    let e = gcn_forward(&mut tape, &gcn, a, x);
    let pooled = tape.mean_rows(e);
    let loss = tape.sum(pooled);
    tape.backward(loss).unwrap();
    println!(
        "GCN: {} hexes -> embeddings {}x{}; input gradient norm {:.4}",
        grid.len(),
        tape.value(e).rows,
        tape.value(e).cols,
        tape.grad(x).unwrap().iter().map(|g| g * g).sum::<f64>().sqrt()
    );

    // scalar chain rule sanity: d/dx tanh(x^2) at x = 0.7
    let mut t2 = Tape::new();
    let x0 = t2.leaf(TensorData::scalar(0.7));
    let sq = t2.square(x0);
    let th = t2.tanh(sq);
    t2.backward(th).unwrap();
    let expect = (1.0 - (0.7f64 * 0.7).tanh().powi(2)) * 2.0 * 0.7;
    println!("d/dx tanh(x^2)|_0.7 = {:.6} (closed form {:.6})", t2.grad(x0).unwrap()[0], expect);

    // full finite-difference sweep over every trained tensor
    let check = full_gradient_check(0, 6, 1e-4);
    println!(
        "finite differences: {} tensors, {} coordinates, worst rel err {:.2e} -> {}",
        check.tensors_checked,
        check.coords_checked,
        check.worst_param_rel_err,
        if check.pass { "ok" } else { "MISMATCH" }
    );

    // Gumbel-softmax argmax follows the softmax law regardless of temperature
    let logits = [0.8, -0.4, 0.1, 1.3];
    let counts = gumbel_argmax_counts(&logits, 0.5, 100_000, 42);
    let probs = softmax(&logits);
    let stat = chi2_statistic(&counts, &probs);
    println!(
        "gumbel argmax frequencies {:?} vs softmax {:?}; chi2 {:.2} (crit {:.2})",
        counts,
        probs.iter().map(|p| (p * 1e5).round() as u64).collect::<Vec<_>>(),
        stat,
        chi2_quantile_99(logits.len() - 1)
    );

    // the squashed power density integrates to one over (0, p_max)
    let integral = power_density_integral(0.4, 0.9, 30.0, 20_000);
    println!("squashed-Gaussian power density mass: {:.6}", integral);
}
