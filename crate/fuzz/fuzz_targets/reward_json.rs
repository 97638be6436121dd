#![no_main]

use libfuzzer_sys::fuzz_target;
use reasoner_core::reward::RewardModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = RewardModel::from_json(text) {
        if let Ok(r) = model.predict_features(&vec![0.5; model.feature_dim()]) {
            assert!((0.0..=1.0).contains(&r));
        }
        assert_eq!(RewardModel::from_json(&model.to_json().unwrap()).unwrap(), model);
    }
});
