//! Binary PGM montages of square token grids.

use std::path::Path;

use rehash_diffusion::{Error, Sequence, VocabSpec};

/// Side of a square grid holding `len` cells.
pub fn grid_side(len: usize) -> Result<usize, Error> {
    let side = (len as f64).sqrt().round() as usize;
    if side * side == len && len > 0 {
        Ok(side)
    } else {
        Err(Error::Contract(format!("sequence length {len} is not a perfect square")))
    }
}

/// P5 image of `seqs` as `side x side` tiles in a square montage of
/// `ceil(sqrt(n))` tiles per row. Cell gray is `round(255 · flat/(d+m-1))`;
/// unused tiles stay black.
pub fn grid_pgm(seqs: &[Sequence], spec: VocabSpec, side: usize) -> Result<Vec<u8>, Error> {
    let len = side * side;
    if let Some(bad) = seqs.iter().find(|s| s.len() != len) {
        return Err(Error::Contract(format!("sequence length {} does not fill a {side}x{side} tile", bad.len())));
    }
    let per_row = (seqs.len() as f64).sqrt().ceil().max(1.0) as usize;
    let width = side * per_row;
    let top = (spec.size() - 1).max(1) as f64;
    let mut out = format!("P5\n{width} {width}\n255\n").into_bytes();
    let header = out.len();
    out.resize(header + width * width, 0);
    for (n, seq) in seqs.iter().enumerate() {
        let (tile_row, tile_col) = (n / per_row, n % per_row);
        for (i, k) in seq.to_flat(spec).into_iter().enumerate() {
            let (r, c) = (tile_row * side + i / side, tile_col * side + i % side);
            out[header + r * width + c] = (255.0 * k as f64 / top).round() as u8;
        }
    }
    Ok(out)
}

pub fn export_grid(seqs: &[Sequence], spec: VocabSpec, side: usize, path: &Path) -> Result<(), Error> {
    std::fs::write(path, grid_pgm(seqs, spec, side)?)?;
    Ok(())
}
