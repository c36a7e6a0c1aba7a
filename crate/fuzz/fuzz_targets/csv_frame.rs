#![no_main]

use libfuzzer_sys::fuzz_target;
use mktcn::TimeSeriesFrame;

fuzz_target!(|data: &[u8]| {
    if let Ok(frame) = TimeSeriesFrame::read_csv_from(data) {
        let mut out = Vec::new();
        frame.write_csv_to(&mut out).expect("parsed frame serializes");
        let again = TimeSeriesFrame::read_csv_from(out.as_slice()).expect("written frame parses");
        assert_eq!(again, frame);
    }
});
