// Temporary exploration of the building fixture; deleted before release.

use thermid_core::dataset::{standardize, StdKind};
use thermid_core::infotheory::{dependency_matrix, rank_inputs, MatrixOptions};
use thermid_core::linmodels::{fit_armax, fit_arx, free_run_fit, FitOptions, Ridge};
use thermid_core::synth::building_dataset;

#[test]
fn explore_fixture() {
    let d = building_dataset(2024).unwrap();
    let m = dependency_matrix(&d.train, &MatrixOptions::default()).unwrap();
    let ranked = rank_inputs(&m, "Temperature").unwrap();
    println!("NMI ranking vs Temperature:");
    for (name, v) in &ranked {
        println!("  {name:>15} {v:.4}");
    }

    // standardized domain fits
    let (train_std, stats) = standardize(&d.train, None, StdKind::Sample).unwrap();
    let (test1_std, _) = standardize(&d.test1, Some(&stats), StdKind::Sample).unwrap();
    let (test2_std, _) = standardize(&d.test2, Some(&stats), StdKind::Sample).unwrap();

    let opts = FitOptions::default();
    for input in ["Light", "Occupancy", "Humidity", "CO2"] {
        let rep = fit_armax(&train_std, "Temperature", &[input], &opts).unwrap();
        let f1 = free_run_fit(&rep.model, &test1_std).unwrap();
        let f2 = free_run_fit(&rep.model, &test2_std).unwrap();
        println!(
            "SISO {input:>12}: train {:6.2} test1 {f1:6.2} test2 {f2:6.2} iter {} conv {}",
            rep.train_fit_pct, rep.iterations_used, rep.converged
        );
    }

    for inputs in [
        vec!["Light", "CO2", "Occupancy"],
        vec!["CO2", "Occupancy"],
        vec!["Light", "Occupancy"],
    ] {
        let rep = fit_armax(&train_std, "Temperature", &inputs, &opts).unwrap();
        let f1 = free_run_fit(&rep.model, &test1_std).unwrap();
        let f2 = free_run_fit(&rep.model, &test2_std).unwrap();
        println!(
            "MISO {:>30}: train {:6.2} test1 {f1:6.2} test2 {f2:6.2}",
            inputs.join("+"),
            rep.train_fit_pct
        );
    }

    // three-input comparison: ARMAX vs regularized ARMAX vs ARX4
    let inputs = ["Light", "CO2", "Occupancy"];
    let armax = fit_armax(&train_std, "Temperature", &inputs, &opts).unwrap();
    let reg = fit_armax(
        &train_std,
        "Temperature",
        &inputs,
        &FitOptions {
            ridge: Ridge::Gcv,
            ..opts.clone()
        },
    )
    .unwrap();
    let arx4 = fit_arx(&train_std, "Temperature", &inputs, &opts).unwrap();
    println!(
        "3-input test1: ARMAX {:.2} | reg(l={:.2e}) {:.2} | ARX4 {:.2}",
        free_run_fit(&armax.model, &test1_std).unwrap(),
        reg.ridge_lambda,
        free_run_fit(&reg.model, &test1_std).unwrap(),
        free_run_fit(&arx4.model, &test1_std).unwrap(),
    );
    println!(
        "3-input test2: ARMAX {:.2} | reg {:.2} | ARX4 {:.2}",
        free_run_fit(&armax.model, &test2_std).unwrap(),
        free_run_fit(&reg.model, &test2_std).unwrap(),
        free_run_fit(&arx4.model, &test2_std).unwrap(),
    );
}
