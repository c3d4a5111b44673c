use mecp::oracle::{shoot, ShootOptions};
use mecp::problems::proximity_problem;
use nalgebra::DVector;

fn main() {
    let prob = proximity_problem(1.0).unwrap();
    let opts = ShootOptions::for_problem(&prob);
    for init in [[0.2, 0.2, -0.1, -0.1], [0.2, 0.2, 0.1, 0.1]] {
        let x0 = DVector::from_row_slice(&init);
        let r = shoot(&prob, &x0, 1.0, &DVector::zeros(4), &opts).unwrap();
        println!("{init:?}: converged {} cost {:.8}", r.converged, r.cost);
    }
}
