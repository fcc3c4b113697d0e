//! Regenerates the shipped LQ fixtures under `fixtures/`.

use std::path::PathBuf;

use maxent_hjb::experiments::LqFixture;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    // The large fixture starts near the origin so exploration noise, not the
    // drift from x0, decides how fast the regressors become independent.
    for (name, n, m, seed, x0) in [("lq_n3m2", 3, 2, 3, 2.0), ("lq_n10m10", 10, 10, 10, 0.1)] {
        let dir = root.join(name);
        LqFixture::generate(n, m, seed, x0).save(&dir)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
