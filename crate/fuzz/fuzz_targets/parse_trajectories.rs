#![no_main]

use libfuzzer_sys::fuzz_target;
use reasoner_core::record::{parse_trajectories, write_trajectories};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(trajs) = parse_trajectories(text) {
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &trajs).unwrap();
        let again = parse_trajectories(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(again, trajs);
    }
});
