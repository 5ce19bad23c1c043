//! The three structural guarantees as executable numerics: operator
//! contraction, the Kantorovich-Rubinstein lower bound, and no-regret
//! risk-budget tracking.
//!
//! Run with `cargo run --release --example theory_suite`.

use hexfleet::theory::{theorem1_contraction, theorem2_kr_bound, theorem3_no_regret, MicroMdp};

fn main() {
    // the robust soft backup contracts at rate gamma
    let c1 = theorem1_contraction(100, 1);
    println!(
        "contraction over {} random micro models: worst excess {:.2e} -> {}",
        c1.trials,
        c1.worst_excess,
        if c1.pass { "ok" } else { "VIOLATED" }
    );
    // show one operator application
    let mdp = MicroMdp::random(5);
    let v = vec![0.0; mdp.n_states];
    let tv = mdp.apply(&v);
    println!(
        "  sample model: {} states, gamma {:.3}, T(0)[0..3] = {:?}",
        mdp.n_states,
        mdp.gamma,
        &tv[..3.min(tv.len())]
    );

    // worst-case expectations degrade at most linearly in the radius
    let c2 = theorem2_kr_bound(50, 2);
    println!(
        "KR bound over {} transported distributions: worst slack {:.3} -> {}",
        c2.trials,
        c2.worst_slack,
        if c2.pass { "ok" } else { "VIOLATED" }
    );

    // dual updates drive the average budget violation to zero
    let c3 = theorem3_no_regret(3);
    println!("no-regret tracking (bound G = {:.3}):", c3.g_bound);
    for (window, avg) in &c3.window_averages {
        println!("  average positive violation over first {:>6} steps: {:.5}", window, avg);
    }
    println!("  -> {}", if c3.pass { "ok" } else { "VIOLATED" });
}
