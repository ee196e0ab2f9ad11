#![no_main]

use libfuzzer_sys::fuzz_target;
use probmcl::metrics::ReportDocument;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = ReportDocument::parse(text) {
        assert_eq!(ReportDocument::parse(&doc.to_json()).expect("report round-trips"), doc);
    }
});
