//! One module per subcommand.

pub mod combo;
pub mod fewshot;
pub mod manifold;
pub mod overlap;
pub mod sine;
pub mod taylor;
