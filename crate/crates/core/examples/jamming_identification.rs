//! Identifies jamming waveforms from received latents alone and prints a
//! confusion matrix, plus the features behind each decision for one trial.
//!
//! ```text
//! cargo run --release --example jamming_identification
//! ```

use semshield::defense::{identify_jamming, IdentifiedKind};
use semshield::jammer::{gen_jamming, JammerProfile, JammingKind, Waveform};
use semshield::signal::{add_white_noise, db_to_linear, normalize_power, LatentSignal, RngStream};

const TRIALS: usize = 200;
const COLUMNS: [IdentifiedKind; 5] = [
    IdentifiedKind::Pulse,
    IdentifiedKind::Cw,
    IdentifiedKind::Noise,
    IdentifiedKind::Sweep,
    IdentifiedKind::AdversarialOrNone,
];

fn main() -> semshield::Result<()> {
    let snr_db = 10.0;
    let noise = 1.0 / db_to_linear(snr_db);
    let mut rng = RngStream::new(3, 0);

    print!("{:<8}{:>6}", "true", "jsr");
    for c in COLUMNS {
        print!("{:>20}", c.name());
    }
    println!();
    for kind in JammingKind::HIGH_POWER {
        for jsr_db in [10.0, 20.0, 40.0] {
            let profile = JammerProfile::new(Waveform::default_for(kind), jsr_db, 0)?;
            let mut counts = [0usize; COLUMNS.len()];
            let mut example = None;
            for _ in 0..TRIALS {
                let z = normalize_power(&LatentSignal::new(rng.gaussian_vec(64))?, 1.0)?;
                let j = gen_jamming(&profile, z.dim(), &mut rng)?;
                let y = add_white_noise(&z.add(&j)?, noise, &mut rng)?;
                let id = identify_jamming(&y, noise)?;
                counts[COLUMNS.iter().position(|c| *c == id.kind).unwrap()] += 1;
                example.get_or_insert(id.features);
            }
            print!("{:<8}{:>6}", kind.name(), jsr_db);
            for c in counts {
                print!("{c:>20}");
            }
            println!();
            if jsr_db == 40.0 {
                println!("        features: {:?}", example.unwrap());
            }
        }
    }
    Ok(())
}
