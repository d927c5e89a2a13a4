use uncertainty_lab::compiler::*;
use uncertainty_lab::optics::Element;
use uncertainty_lab::relations::family_state;
use std::f64::consts::PI;

fn round2(x: f64) -> f64 { (x * 100.0).round() / 100.0 }

fn main() {
    let tables = angle_tables().unwrap();
    let family: Vec<_> = (1..=12).map(|j| family_state(j as f64 * PI / 12.0, 3).unwrap()).collect();
    let mut worst_overall: f64 = 0.0;
    for row in &tables.qutrit {
        if row.compiled.solution.scope == CertificationScope::StateOnly { continue; }
        let mut circuit = row.compiled.circuit.clone();
        for element in &mut circuit.elements {
            match element {
                Element::HWP { theta_deg, .. } | Element::QWP { theta_deg, .. } => *theta_deg = round2(*theta_deg),
                _ => {}
            }
        }
        let residual = verify_circuit(&circuit, &row.compiled.setting, &family);
        if residual > 5e-5 { println!("{:<24} residual {:.3e}", row.observable, residual); }
        worst_overall = worst_overall.max(residual);
    }
    println!("worst overall: {worst_overall:.3e}");
}
