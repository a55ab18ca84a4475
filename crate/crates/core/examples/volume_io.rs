//! Writing and reading the JSON header plus raw body volume format.

use veritas::io::{body_path, read_header, read_volume, write_volume, Volume};
use veritas::{GridMeta, LabelSetVolume, ProbabilityVolume, ScalarVolume, SubsetMask};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let meta = GridMeta::new([4, 3, 2], [0.8, 0.8, 1.5])?;

    let img = ScalarVolume::from_fn(meta, |[x, y, z]| (x + 10 * y + 100 * z) as f64)?;
    let probs = ProbabilityVolume::constant(meta, &[0.25, 0.5, 0.25])?;
    let sets = LabelSetVolume::new(meta, (0..meta.len()).map(|i| SubsetMask::from_classes([i % 3, 2])).collect())?;
    for (name, vol) in [("img.json", Volume::Scalar(img)), ("probs.json", Volume::Prob(probs)), ("sets.json", Volume::LabelSet(sets))] {
        let path = dir.path().join(name);
        write_volume(&vol, &path)?;
        let header = read_header(&path)?;
        let bytes = std::fs::metadata(body_path(&path))?.len();
        let back = read_volume(&path)?;
        println!("{name}: {header:?}, {bytes} body bytes, round trip equal: {}", back == vol);
    }
    Ok(())
}
