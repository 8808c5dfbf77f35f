#![no_main]

use libfuzzer_sys::fuzz_target;
use sdde_cli::ExperimentConfig;

fuzz_target!(|bytes: &[u8]| {
    let Ok(text) = std::str::from_utf8(bytes) else {
        return;
    };
    let Ok(config) = ExperimentConfig::from_json(text) else {
        return;
    };
    if let Ok(model) = config.build_model() {
        let _ = config.simulation_grid(&model);
        let _ = config.convergence_ladder(&model);
        let _ = config.pricing_plan(&model);
    }
});
