//! Command-line surface. Placeholder while the pipeline modules land.

pub fn dispatch(_args: &[String]) -> u8 {
    2
}
