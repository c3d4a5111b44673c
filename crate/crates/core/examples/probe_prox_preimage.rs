use mecp::oracle::{shoot, ShootOptions};
use mecp::problems::proximity_problem;
use mecp::problem::Problem;
use nalgebra::DVector;

fn main() {
    let prob = proximity_problem(1.0).unwrap();
    let opts = ShootOptions::for_problem(&prob);
    let grid = [0.0, 0.5, 1.0];
    let (mut vxs, mut vys, mut nxs, mut nys, mut costs) = (vec![], vec![], vec![], vec![], vec![]);
    let mut fails = 0;
    for &a in &grid { for &b in &grid { for &c in &grid { for &d in &grid {
        let x0 = DVector::from_vec(vec![
            0.1 + 0.2 * a, 0.1 + 0.2 * b, -0.1 + 0.2 * c, -0.1 + 0.2 * d,
        ]);
        let r = shoot(&prob, &x0, 1.0, &DVector::zeros(4), &opts).unwrap();
        if r.converged {
            let (_, xt, pt, _) = r.trajectory.last().unwrap();
            vxs.push(xt[2]); vys.push(xt[3]);
            nxs.push(pt[0]); nys.push(pt[1]);
            costs.push(r.cost);
        } else { fails += 1; }
    }}}}
    let mm = |v: &Vec<f64>| (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    println!("fails: {fails}/81");
    println!("v_xf range {:?}", mm(&vxs));
    println!("v_yf range {:?}", mm(&vys));
    println!("nu_x range {:?}", mm(&nxs));
    println!("nu_y range {:?}", mm(&nys));
    println!("cost range {:?}", mm(&costs));
}
