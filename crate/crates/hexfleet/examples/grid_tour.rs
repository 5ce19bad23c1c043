//! Build a hexagonal grid, inspect adjacency and hop distances, and derive
//! the graph matrices used by the encoder and the scenario metric.
//!
//! Run with `cargo run --release --example grid_tour`.

use hexfleet::hexgrid::{build_grid, graph_matrices};

fn main() {
    let grid = build_grid(5, 5, 0.8, 3, 42, None).unwrap();
    println!("{} cells, stations at {:?}", grid.len(), grid.station_hexes());

    let center = grid.len() / 2;
    println!(
        "cell {} (axial {:?}) has neighbors {:?}",
        center,
        grid.axial(center),
        grid.neighbors(center)
    );
    println!(
        "hop distance corner-to-corner: {} ({:.1} km at {:.1} km pitch)",
        grid.hops(0, grid.len() - 1),
        grid.distance_km(0, grid.len() - 1),
        grid.hex_pitch_km()
    );
    for (i, &a) in grid.station_hexes().iter().enumerate() {
        for &b in grid.station_hexes().iter().skip(i + 1) {
            println!("stations {} and {} are {} hops apart", a, b, grid.hops(a, b));
        }
    }

    let gm = graph_matrices(&grid);
    println!(
        "normalized adjacency: {}x{}, symmetric within {:.1e}",
        gm.a_hat.rows,
        gm.a_hat.cols,
        gm.a_hat.max_asymmetry()
    );
    let ones = vec![1.0; grid.len()];
    let l1 = gm.laplacian.matvec(&ones);
    println!(
        "laplacian nullspace check: max |L 1| = {:.1e}",
        l1.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()))
    );
    println!("scenario-space lift: {}x{}", gm.q_graph.rows, gm.q_graph.cols);

    print!("first few edges:\n{}", grid.edge_list().lines().take(5).collect::<Vec<_>>().join("\n"));
    println!();
}
