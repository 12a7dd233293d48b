pub mod combinatorics;
pub mod message_algebra;
pub mod de_engine;
pub mod polynomial;
pub mod potential;
pub mod verify;

mod linalg;
