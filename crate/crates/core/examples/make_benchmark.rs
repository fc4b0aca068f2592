//! Regenerates `data/benchmark/` from the bundled astronaut image.
//!
//! `hr.pgm` is a 128x128 crop, `ref.pgm` a 144x144 crop containing it at
//! offset (8, 12), and `lr.pgm` the 4x antialiased bicubic downsample of
//! `hr.pgm`, quantised to 8 bits.

use std::path::Path;

use cfe_patchmatch::io::{read_image, write_image};
use cfe_patchmatch::tensor::bicubic_resize;

fn main() -> anyhow::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let src = read_image(&data.join("astronaut_256.pgm"))?;
    let (y, x) = (40, 96);
    let hr = src.crop(y, x, 128, 128)?;
    let reference = src.crop(y - 8, x - 12, 144, 144)?;
    let lr = bicubic_resize(&hr, 32, 32)?;
    let out = data.join("benchmark");
    write_image(&out.join("hr.pgm"), &hr)?;
    write_image(&out.join("ref.pgm"), &reference)?;
    write_image(&out.join("lr.pgm"), &lr)?;
    Ok(())
}
