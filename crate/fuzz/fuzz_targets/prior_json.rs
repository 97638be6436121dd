#![no_main]

use libfuzzer_sys::fuzz_target;
use reasoner_core::prior::KdePrior;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(prior) = KdePrior::from_json(text) {
        assert!(prior.bandwidth() > 0.0);
        let probe = vec![0.0; prior.dim()];
        let _ = prior.log_density(&probe);
        let again = KdePrior::from_json(&prior.to_json().unwrap()).unwrap();
        assert_eq!(again.bandwidth(), prior.bandwidth());
    }
});
