#![no_main]

use libfuzzer_sys::fuzz_target;
use mktcn::preprocess::PcaModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(pca) = PcaModel::from_json(text) {
            let again = PcaModel::from_json(&pca.to_json()).expect("serialized model parses");
            assert_eq!(again, pca);
        }
    }
});
