//! Generate a synthetic demand scenario, draw Poisson order arrivals, and
//! round-trip the dataset through its binary format.
//!
//! Run with `cargo run --release --example synthesize_demand`.

use hexfleet::hexgrid::build_grid;
use hexfleet::scenario::{
    fare, load_dataset, sample_orders, save_dataset, synth_scenario, SynthConfig,
};

fn main() {
    let grid = build_grid(4, 4, 0.8, 2, 7, None).unwrap();
    let dataset = synth_scenario(
        &grid,
        &SynthConfig { horizon: 288, hotspots: 2, peak_rate: 5.0, seed: 11, dt_min: 5.0 },
    );

    // diurnal shape: total expected demand per hour of day
    println!("hour  expected requests/step");
    for hour in (0..24).step_by(3) {
        let step = hour * 12; // 5-minute steps
        println!("{:>4}  {:.2}", hour, dataset.fields[step].total_demand());
    }

    let morning_peak = 8 * 12;
    let orders = sample_orders(&dataset.fields[morning_peak], morning_peak, 99);
    println!("\nsampled {} arrivals at the morning peak; first three:", orders.len());
    for o in orders.iter().take(3) {
        println!(
            "  order {}: {} -> {} ({} hops, fare {:.2})",
            o.id,
            o.origin,
            o.dest,
            grid.hops(o.origin, o.dest),
            fare(&dataset.fare_params, o.origin, o.dest, &grid)
        );
    }

    let mut bytes = Vec::new();
    save_dataset(&dataset, &mut bytes).unwrap();
    let back = load_dataset(&bytes[..]).unwrap();
    println!(
        "\nserialized {} bytes; round-trip horizon {} ({} hexes), fields identical: {}",
        bytes.len(),
        back.horizon(),
        back.m(),
        back.fields == dataset.fields
    );
}
