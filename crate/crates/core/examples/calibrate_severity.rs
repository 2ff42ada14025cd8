//! Refits the bundled severity model and prints the sidecar text.

use astrodiff::metrics::{calibrate_severity, CalibrationCorpus};

fn main() -> astrodiff::Result<()> {
    let model = calibrate_severity(&CalibrationCorpus::default(), 1.0)?;
    print!("{}", model.to_text());
    Ok(())
}
