//! Command-line front end: dataset generation, distance and embedding
//! export, training, evaluation and the experiment harnesses.

pub mod bench;
pub mod cli;
pub mod concentration;
pub mod config;
pub mod data;
pub mod pipeline;

/// Process exit status for a failed command: 2 when a numerical routine
/// failed, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    let numerical = e.chain().any(|c| {
        c.downcast_ref::<distemb::Error>()
            .is_some_and(distemb::Error::is_numerical)
    });
    if numerical {
        2
    } else {
        1
    }
}
