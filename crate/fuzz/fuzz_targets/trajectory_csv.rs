#![no_main]

use libfuzzer_sys::fuzz_target;
use phlearn::io::{read_trajectory_csv, write_trajectory_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(traj) = read_trajectory_csv(data) else { return };
    let mut out = Vec::new();
    write_trajectory_csv(&mut out, &traj).expect("parsed trajectory must serialize");
    let back = read_trajectory_csv(out.as_slice()).expect("serialized trajectory must parse");
    assert_eq!(back.len(), traj.len());
});
