#![no_main]

use libfuzzer_sys::fuzz_target;
use mktcn::MetricsReport;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(report) = MetricsReport::from_json(text) {
            let _ = MetricsReport::from_json(&report.to_json()).expect("serialized report parses");
        }
    }
});
