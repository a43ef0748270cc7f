use nalgebra::DVector;
use nomctl_core::nom::{nom_solve, NomConfig};
use nomctl_core::ocp::{OcpInstance, OcpWeights};
use nomctl_core::oracle::{oracle_solve, OracleConfig};
use nomctl_core::plant::{benchmark_model, linearize, solve_steady_state};

fn instance(x: [f64; 2]) -> OcpInstance {
    let model = benchmark_model();
    let r = DVector::from_element(1, 0.0);
    let target = solve_steady_state(&model, &r, (&DVector::zeros(2), &DVector::zeros(1))).unwrap();
    let x = DVector::from_column_slice(&x);
    OcpInstance::new(linearize(&model, &x).unwrap(), target, OcpWeights::benchmark(), x).unwrap()
}

#[test]
fn nom_is_near_the_oracle_at_the_benchmark_point() {
    let inst = instance([1.0, 0.0]);
    let cfg = NomConfig::default();
    let nom = nom_solve(&inst, &cfg).unwrap();
    let oracle = oracle_solve(&inst, &OracleConfig::from_search_box(1, 2, &cfg.search)).unwrap();
    assert!(nom.feasible && oracle.feasible);
    assert!(nom.g1 == 0.0 && nom.g2 == 0.0, "{nom:?}");
    eprintln!("nom {} oracle {}", nom.loss, oracle.loss);
    assert!(nom.loss <= oracle.loss * 1.05 + 1e-6, "nom {} oracle {}", nom.loss, oracle.loss);
}

#[test]
fn nom_is_near_the_oracle_across_the_region() {
    let cfg = NomConfig::default();
    let mut worse = Vec::new();
    for x in [[-4.0, 3.0], [2.5, -2.5], [0.5, 4.0], [-1.0, -1.0]] {
        let inst = instance(x);
        let nom = nom_solve(&inst, &cfg).unwrap();
        let oracle = oracle_solve(&inst, &OracleConfig::from_search_box(1, 2, &cfg.search)).unwrap();
        eprintln!("{x:?}: nom {} ({}) oracle {} ({})", nom.loss, nom.feasible, oracle.loss, oracle.feasible);
        if nom.loss > oracle.loss * 1.05 + 1e-6 {
            worse.push(x);
        }
    }
    assert!(worse.is_empty(), "{worse:?}");
}
