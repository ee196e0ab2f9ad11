#![no_main]

use libfuzzer_sys::fuzz_target;
use probmcl::data::{read_dataset, write_dataset};

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = read_dataset(data) {
        let mut out = Vec::new();
        write_dataset(&ds, &mut out).expect("write to memory");
        assert_eq!(read_dataset(out.as_slice()).expect("rewritten dataset parses"), ds);
    }
});
