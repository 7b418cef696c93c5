//! Renders a few words for every preset writer into a contact sheet PNG.
//!
//! `cargo run -p inkdiff-core --example render_sheet -- out.png`

use inkdiff_core::corpus::{contact_sheet, render_word, Alphabet, WriterStyle};

fn main() -> inkdiff_core::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "render_sheet.png".into());
    let alphabet = Alphabet::lowercase();
    let words = [
        "and",
        "quickly",
        "zebra",
        "the",
        "abcdefghijklm",
        "nopqrstuvwxyz",
    ];
    let mut images = Vec::new();
    for writer in WriterStyle::presets(5, 1) {
        for (i, w) in words.iter().enumerate() {
            images.push(render_word(w, &writer, i as u64, &alphabet)?.image);
        }
    }
    contact_sheet(&images, words.len())?.save_png(std::path::Path::new(&out))?;
    println!("wrote {out}");
    Ok(())
}
