//! Erode and dilate the LV factor step by step; the factor area moves
//! monotonically and erosion eventually empties the channel.

use daa_core::factors::{morph_traverse, MorphOp};
use daa_core::phantom::{generate_phantoms, PhantomSpec};

fn main() -> daa_core::Result<()> {
    let recs = generate_phantoms(&PhantomSpec { n: 1, ..PhantomSpec::default() })?;
    let c = &recs[0].anatomy;
    println!("LV area {}", c.channel(0).count());
    for op in [MorphOp::Dilate, MorphOp::Erode] {
        for step in (3..=15).step_by(3) {
            match morph_traverse(c, 0, op, step) {
                Ok(t) => println!("{op:?} {step:>2}: LV {:>4}  MYO {:>4}", t.channel(0).count(), t.channel(1).count()),
                Err(e) => {
                    println!("{op:?} {step:>2}: {e}");
                    break;
                }
            }
        }
    }
    Ok(())
}
