#![no_main]

use libfuzzer_sys::fuzz_target;
use probmcl::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        // metadata JSON may be spelled differently, so compare values
        let bytes = ck.encode().expect("decoded checkpoint encodes");
        assert_eq!(Checkpoint::decode(&bytes).expect("re-encoded checkpoint decodes"), ck);
    }
});
